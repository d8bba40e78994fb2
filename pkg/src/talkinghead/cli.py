"""Command-line entry point.

Exit codes: 0 success, 1 usage error (argparse), 2 runtime error
(PipelineError or I/O).  Every run prints the fully resolved config so the
exact settings are always in the log.
"""

from __future__ import annotations

import argparse
import sys

from .config import default_config, load_config, resolved_json
from .errors import PipelineError


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="talkinghead",
                description="audio-driven portrait animation pipeline")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_text):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("--config", default=None, help="JSON config path (defaults otherwise)")
        c.add_argument("--seed", type=int, default=0)
        return c

    cmd("gen-data", "write the synthetic corpus")
    cmd("train-a2m", "train the audio-to-mesh head")
    cmd("train-a2p", "train the audio-to-pose decoder")
    c = cmd("train-l2v", "train the landmark-to-video diffusion model")
    c.add_argument("--stage", type=int, choices=(1, 2), required=True)

    c = cmd("render-pose", "rasterize a landmark sequence to pose images")
    c.add_argument("--landmarks", required=True)
    c.add_argument("--out", required=True)

    c = cmd("project", "project meshes + poses to 2D landmarks")
    c.add_argument("--meshes", required=True)
    c.add_argument("--poses", required=True)
    c.add_argument("--out", required=True)

    c = cmd("retarget", "transfer a performance onto another identity template")
    c.add_argument("--meshes", required=True)
    c.add_argument("--src-template", required=True, help="1-frame mesh sequence file")
    c.add_argument("--tgt-template", required=True, help="1-frame mesh sequence file")
    c.add_argument("--out", required=True)

    c = cmd("scale-expr", "scale one group's deltas from a template")
    c.add_argument("--meshes", required=True)
    c.add_argument("--template", required=True, help="1-frame mesh sequence file")
    c.add_argument("--group", required=True)
    c.add_argument("--factor", type=float, required=True)
    c.add_argument("--out", required=True)

    c = cmd("infer", "audio + reference portrait -> video frames")
    c.add_argument("--audio", required=True)
    c.add_argument("--ref-image", required=True)
    c.add_argument("--ref-landmarks", required=True)
    c.add_argument("--out", default=None, help="output directory (default: paths.out_dir)")
    return p


def _template_frame(path):
    from .files import load_mesh_sequence
    seq = load_mesh_sequence(path)
    if len(seq) != 1:
        raise PipelineError(f"{path}: template file must hold exactly 1 frame, has {len(seq)}")
    return seq.frames[0]


def _run(args, cfg) -> None:
    from . import pipeline
    from .files import (load_landmark_sequence, load_mesh_sequence,
                        load_pose_sequence, save_landmark_sequence,
                        save_mesh_sequence, save_png)
    from .geometry import DESK_TOPOLOGY, project_sequence
    from .render import render_sequence
    from .config import camera_from_config, style_from_config

    if args.command == "gen-data":
        from .synthetic import generate_synthetic_dataset
        root = generate_synthetic_dataset(cfg, args.seed)
        print(f"wrote corpus to {root}")
    elif args.command == "train-a2m":
        cfg["training"]["seed"] = args.seed
        hist = pipeline.train_audio2mesh_command(cfg)
        print(f"final val loss {hist['val'][-1][1]:.6f}")
    elif args.command == "train-a2p":
        cfg["training"]["seed"] = args.seed
        hist = pipeline.train_audio2pose_command(cfg)
        print(f"final val loss {hist['val'][-1][1]:.6f}")
    elif args.command == "train-l2v":
        cfg["training"]["seed"] = args.seed
        hist = pipeline.train_lmk2video_command(cfg, args.stage)
        print(f"final val loss {hist['val'][-1][1]:.6f}")
    elif args.command == "render-pose":
        lmks = load_landmark_sequence(args.landmarks)
        for t, img in enumerate(render_sequence(lmks, DESK_TOPOLOGY, style_from_config(cfg))):
            save_png(f"{args.out}/frame_{t:05d}.png", img)
        print(f"wrote {len(lmks)} pose images to {args.out}")
    elif args.command == "project":
        lmks = project_sequence(load_mesh_sequence(args.meshes),
                                load_pose_sequence(args.poses), camera_from_config(cfg))
        save_landmark_sequence(args.out, lmks)
        print(f"wrote {len(lmks)} landmark frames to {args.out}")
    elif args.command == "retarget":
        from .reenact import retarget_mesh_sequence
        out = retarget_mesh_sequence(load_mesh_sequence(args.meshes),
                                     _template_frame(args.src_template),
                                     _template_frame(args.tgt_template))
        save_mesh_sequence(args.out, out)
        print(f"wrote {len(out)} retargeted frames to {args.out}")
    elif args.command == "scale-expr":
        from .reenact import scale_expression
        out = scale_expression(load_mesh_sequence(args.meshes),
                               _template_frame(args.template), args.group, args.factor)
        save_mesh_sequence(args.out, out)
        print(f"wrote {len(out)} scaled frames to {args.out}")
    elif args.command == "infer":
        out = pipeline.infer_end_to_end(args.audio, args.ref_image, args.ref_landmarks,
                                        cfg, seed=args.seed, out_dir=args.out)
        print(f"wrote frames to {out / 'frames'}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else default_config()
        print(resolved_json(cfg))
        _run(args, cfg)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
