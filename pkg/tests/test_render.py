"""Rasterizer tests: Bresenham pixel enumeration oracles, draw order,
lip-color guarantees, and scale behavior."""

import numpy as np
import pytest

from talkinghead.errors import ConfigError, ShapeError
from talkinghead.geometry import (
    DESK_TOPOLOGY,
    LandmarkSequence,
    MeshSequence,
    PoseSequence,
    canonical_face_mesh,
    default_camera,
    project_sequence,
)
from talkinghead.render import RenderStyle, draw_polyline, render_pose_image, render_sequence


def blank(size=64):
    return np.zeros((size, size, 3), dtype=np.uint8)


def lit_pixels(image):
    """Set of (x, y) whose color differs from black."""
    ys, xs = np.nonzero(image.any(axis=2))
    return set(zip(xs.tolist(), ys.tolist()))


# -- draw_polyline ----------------------------------------------------------


def test_degenerate_segment_single_pixel():
    img = blank()
    draw_polyline(img, [(10.0, 20.0), (10.0, 20.0)], (255, 255, 255))
    assert lit_pixels(img) == {(10, 20)}
    assert tuple(img[20, 10]) == (255, 255, 255)


def test_horizontal_line_exact_pixels():
    # axis-aligned oracle: (5,8)..(9,8) is exactly the 5 pixels x=5..9
    img = blank()
    draw_polyline(img, [(5.0, 8.0), (9.0, 8.0)], (1, 2, 3))
    assert lit_pixels(img) == {(x, 8) for x in range(5, 10)}


def test_vertical_line_exact_pixels():
    img = blank()
    draw_polyline(img, [(7.0, 3.0), (7.0, 12.0)], (9, 9, 9))
    assert lit_pixels(img) == {(7, y) for y in range(3, 13)}


def test_diagonal_line_exact_pixels():
    img = blank()
    draw_polyline(img, [(2.0, 2.0), (6.0, 6.0)], (9, 9, 9))
    assert lit_pixels(img) == {(k, k) for k in range(2, 7)}


def test_all_octants_cover_endpoints_and_are_connected():
    for dx in (-5, -2, 0, 3, 6):
        for dy in (-6, -1, 0, 2, 5):
            img = blank()
            draw_polyline(img, [(20.0, 20.0), (20.0 + dx, 20.0 + dy)], (1, 1, 1))
            pix = lit_pixels(img)
            assert (20, 20) in pix and (20 + dx, 20 + dy) in pix
            # 8-connected chain of the right length
            assert len(pix) == max(abs(dx), abs(dy)) + 1


def test_points_round_to_nearest():
    img = blank()
    draw_polyline(img, [(4.6, 7.4), (4.6, 7.4)], (5, 5, 5))
    assert lit_pixels(img) == {(5, 7)}


def test_single_point_plots_pixel():
    img = blank()
    draw_polyline(img, [(3.0, 4.0)], (8, 8, 8))
    assert lit_pixels(img) == {(3, 4)}


def test_empty_points_noop():
    img = blank()
    draw_polyline(img, np.zeros((0, 2)), (8, 8, 8))
    assert lit_pixels(img) == set()


def test_fully_outside_segment_unchanged():
    img = blank(64)
    draw_polyline(img, [(-30.0, -10.0), (-5.0, -40.0)], (255, 255, 255))
    assert img.sum() == 0


def test_crossing_segment_clipped_not_errored():
    img = blank(64)
    draw_polyline(img, [(-3.0, 10.0), (5.0, 10.0)], (255, 255, 255))
    assert lit_pixels(img) == {(x, 10) for x in range(0, 6)}


def test_closed_appends_last_to_first():
    img = blank()
    # open triangle: two sides; closed: all three
    pts = [(10.0, 10.0), (20.0, 10.0), (20.0, 20.0)]
    open_img = draw_polyline(blank(), pts, (1, 1, 1), closed=False)
    closed_img = draw_polyline(blank(), pts, (1, 1, 1), closed=True)
    assert img.sum() == 0
    extra = lit_pixels(closed_img) - lit_pixels(open_img)
    assert extra  # the hypotenuse
    assert lit_pixels(open_img) <= lit_pixels(closed_img)


def test_bad_image_rejected():
    with pytest.raises(ShapeError):
        draw_polyline(np.zeros((4, 4, 3), dtype=np.float32), [(0, 0)], (1, 1, 1))
    with pytest.raises(ShapeError):
        draw_polyline(np.zeros((4, 4), dtype=np.uint8), [(0, 0)], (1, 1, 1))


def test_bad_points_shape_rejected():
    with pytest.raises(ShapeError):
        draw_polyline(blank(), np.zeros((3, 3)), (1, 1, 1))


# -- RenderStyle ------------------------------------------------------------


def test_style_defaults():
    s = RenderStyle()
    assert s.image_size == 64
    assert s.upper_lip_color == (255, 0, 0)
    assert s.lower_lip_color == (0, 0, 255)
    assert s.color_for("jaw") == (255, 255, 255)
    assert s.color_for("upper_lip") == (255, 0, 0)
    assert s.color_for("lower_lip") == (0, 0, 255)


def test_style_rejects_clashing_lip_colors():
    with pytest.raises(ConfigError):
        RenderStyle(upper_lip_color=(0, 0, 255))  # collides with lower lip
    with pytest.raises(ConfigError):
        RenderStyle(upper_lip_color=(255, 255, 255))  # collides with group color
    with pytest.raises(ConfigError):
        RenderStyle(lower_lip_color=(0, 0, 0))  # collides with background


def test_style_rejects_thickness_and_size():
    with pytest.raises(ConfigError):
        RenderStyle(line_thickness=2)
    with pytest.raises(ConfigError):
        RenderStyle(image_size=0)


# -- render_pose_image ------------------------------------------------------


def projected_canonical(size=64, tz=2.5):
    mesh = canonical_face_mesh()
    meshes = MeshSequence(frames=mesh[None], fps=25.0)
    poses = PoseSequence(poses=np.array([[0, 0, 0, 0, 0, tz]], dtype=np.float64), fps=25.0)
    return project_sequence(meshes, poses, default_camera(size)).points[0]


def test_render_offscreen_landmarks_background_only():
    lmk = np.full((DESK_TOPOLOGY.n_points, 2), -100.0)
    img = render_pose_image(lmk, DESK_TOPOLOGY, RenderStyle())
    assert img.shape == (64, 64, 3)
    assert img.sum() == 0


def test_render_canonical_face_has_exact_lip_colors():
    img = render_pose_image(projected_canonical(), DESK_TOPOLOGY, RenderStyle())
    colors = {tuple(c) for c in img.reshape(-1, 3)}
    assert (255, 0, 0) in colors
    assert (0, 0, 255) in colors
    assert (255, 255, 255) in colors


def test_render_color_partition():
    style = RenderStyle()
    img = render_pose_image(projected_canonical(), DESK_TOPOLOGY, style)
    allowed = {style.background, style.group_color, style.upper_lip_color, style.lower_lip_color}
    assert {tuple(c) for c in img.reshape(-1, 3)} <= allowed


def test_render_deterministic():
    lmk = projected_canonical()
    a = render_pose_image(lmk, DESK_TOPOLOGY, RenderStyle())
    b = render_pose_image(lmk, DESK_TOPOLOGY, RenderStyle())
    assert np.array_equal(a, b)


def test_lip_pixels_win_conflicts():
    # collapse every landmark onto the lip region so groups overlap heavily,
    # then check each lip pixel of a lips-only render survives the full render
    style = RenderStyle()
    lmk = projected_canonical()
    lmk = lmk.copy()
    lip_idx = list(DESK_TOPOLOGY.indices("upper_lip")) + list(DESK_TOPOLOGY.indices("lower_lip"))
    center = lmk[lip_idx].mean(axis=0)
    lmk = center + (lmk - center) * 0.3  # squash everything toward the lips
    full = render_pose_image(lmk, DESK_TOPOLOGY, style)
    lips_only = np.zeros_like(full)
    for name in ("upper_lip", "lower_lip"):
        draw_polyline(lips_only, lmk[list(DESK_TOPOLOGY.indices(name))],
                      style.color_for(name), closed=DESK_TOPOLOGY.is_closed(name))
    mask = lips_only.any(axis=2)
    assert mask.any()
    assert np.array_equal(full[mask], lips_only[mask])


def test_render_count_mismatch():
    with pytest.raises(ShapeError):
        render_pose_image(np.zeros((10, 2)), DESK_TOPOLOGY, RenderStyle())


def test_scale_consistency_straight_segments():
    # doubling both landmark coordinates and the canvas keeps every lit pixel
    # inside the 2x2 blocks of the original lit pixels (straight segments)
    for seg in ([(5.0, 8.0), (9.0, 8.0)], [(3.0, 3.0), (11.0, 11.0)], [(7.0, 2.0), (7.0, 13.0)]):
        base = blank(64)
        draw_polyline(base, seg, (1, 1, 1))
        scaled = blank(128)
        draw_polyline(scaled, [(2 * x, 2 * y) for x, y in seg], (1, 1, 1))
        base_set = lit_pixels(base)
        assert lit_pixels(scaled) <= {(2 * x + i, 2 * y + j) for x, y in base_set
                                      for i in (0, 1) for j in (0, 1)}


# -- render_sequence --------------------------------------------------------


def test_render_sequence_empty():
    lmks = LandmarkSequence(points=np.zeros((0, DESK_TOPOLOGY.n_points, 2)), fps=25.0)
    assert render_sequence(lmks, DESK_TOPOLOGY, RenderStyle()) == []


def test_render_sequence_matches_per_frame_calls():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 64, size=(3, DESK_TOPOLOGY.n_points, 2))
    lmks = LandmarkSequence(points=pts, fps=25.0)
    style = RenderStyle()
    out = render_sequence(lmks, DESK_TOPOLOGY, style)
    assert len(out) == 3
    for t in range(3):
        assert np.array_equal(out[t], render_pose_image(pts[t], DESK_TOPOLOGY, style))


def test_render_sequence_identical_frames():
    lmk = projected_canonical()
    lmks = LandmarkSequence(points=np.stack([lmk] * 3), fps=25.0)
    out = render_sequence(lmks, DESK_TOPOLOGY, RenderStyle())
    assert np.array_equal(out[0], out[1]) and np.array_equal(out[1], out[2])


def test_render_sequence_error_names_frame():
    lmks = LandmarkSequence(points=np.zeros((2, 10, 2)), fps=25.0)
    with pytest.raises(ShapeError, match="frame 0"):
        render_sequence(lmks, DESK_TOPOLOGY, RenderStyle())
