"""Rasterize landmark frames into RGB pose-guidance images.

Groups are drawn as 1-px Bresenham polylines; the upper and lower lips get
distinct colors and are drawn last so lip pixels always win conflicts (the
downstream network's lip sensitivity is the whole point of the coloring).
Everything is bit-exact by construction: integer line stepping, no
anti-aliasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, PipelineError, ShapeError
from .geometry import FaceTopology, LandmarkSequence


@dataclass(frozen=True)
class RenderStyle:
    image_size: int = 64
    background: tuple = (0, 0, 0)
    group_color: tuple = (255, 255, 255)
    upper_lip_color: tuple = (255, 0, 0)
    lower_lip_color: tuple = (0, 0, 255)
    line_thickness: int = 1

    def __post_init__(self):
        if self.image_size < 1:
            raise ConfigError(f"image_size must be >= 1, got {self.image_size}")
        if self.line_thickness != 1:
            raise ConfigError("only line_thickness=1 is supported")
        lips = {self.upper_lip_color, self.lower_lip_color}
        if len(lips) != 2 or lips & {self.group_color, self.background}:
            raise ConfigError("lip colors must be mutually distinct and distinct from other colors")

    def color_for(self, group: str) -> tuple:
        if group == "upper_lip":
            return self.upper_lip_color
        if group == "lower_lip":
            return self.lower_lip_color
        return self.group_color


def _px(v: float) -> int:
    # round half up, stable for negatives too
    return int(np.floor(v + 0.5))


def _bresenham(x0: int, y0: int, x1: int, y1: int):
    """Integer line pixels from (x0,y0) to (x1,y1) inclusive, any octant."""
    dx = abs(x1 - x0)
    sx = 1 if x0 < x1 else -1
    dy = -abs(y1 - y0)
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_polyline(image: np.ndarray, points: np.ndarray, color: tuple, closed: bool = False) -> np.ndarray:
    """Connect consecutive points with 1-px segments, mutating the image.

    Points are (x, y) pixel pairs, rounded to nearest; out-of-frame pixels
    are silently dropped (per-pixel clipping), and segments whose bounding
    box misses the frame entirely are skipped.  Fewer than one point is a
    no-op; a single point plots one pixel.
    """
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ShapeError(f"image must be uint8 (H, W, 3), got {image.dtype} {image.shape}")
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        return image
    if points.ndim != 2 or points.shape[1] != 2:
        raise ShapeError(f"points must be (K, 2), got {points.shape}")
    h, w = image.shape[:2]
    col = np.asarray(color, dtype=np.uint8)
    px = [(_px(x), _px(y)) for x, y in points]
    if len(px) == 1:
        x, y = px[0]
        if 0 <= x < w and 0 <= y < h:
            image[y, x] = col
        return image
    pairs = list(zip(px[:-1], px[1:]))
    if closed:
        pairs.append((px[-1], px[0]))
    for (x0, y0), (x1, y1) in pairs:
        if max(x0, x1) < 0 or min(x0, x1) >= w or max(y0, y1) < 0 or min(y0, y1) >= h:
            continue
        for x, y in _bresenham(x0, y0, x1, y1):
            if 0 <= x < w and 0 <= y < h:
                image[y, x] = col
    return image


def render_pose_image(lmk: np.ndarray, topology: FaceTopology, style: RenderStyle) -> np.ndarray:
    """One guidance image: background fill, group polylines, lips last."""
    lmk = np.asarray(lmk, dtype=np.float64)
    if lmk.shape != (topology.n_points, 2):
        raise ShapeError(f"landmark count {lmk.shape} does not match topology ({topology.n_points}, 2)")
    s = style.image_size
    image = np.empty((s, s, 3), dtype=np.uint8)
    image[:] = np.asarray(style.background, dtype=np.uint8)
    lips = [g for g in ("upper_lip", "lower_lip") if g in topology.groups]
    ordered = sorted(
        (g for g in topology.groups if g not in lips),
        key=lambda g: topology.groups[g][0],
    ) + lips
    for name in ordered:
        idx = list(topology.indices(name))
        draw_polyline(image, lmk[idx], style.color_for(name), closed=topology.is_closed(name))
    return image


def render_sequence(lmks: LandmarkSequence, topology: FaceTopology, style: RenderStyle) -> list:
    """Elementwise render; errors carry the frame index."""
    out = []
    for t in range(len(lmks)):
        try:
            out.append(render_pose_image(lmks.points[t], topology, style))
        except PipelineError as e:
            raise type(e)(f"frame {t}: {e}") from e
    return out
