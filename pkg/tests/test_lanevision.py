"""Image pipeline against independent oracles: colorsys for HSL, hand-built
kernels for blur, a reference even-odd fill for the ROI, and brute-force
hysteresis/accumulator checks for Canny and Hough."""

import colorsys
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laneforge.lanevision import (
    DEFAULT_STAGES,
    BadKernel,
    BadStage,
    BadThresholds,
    LaneFit,
    PipelineConfig,
    Side,
    canny,
    fit_lane_lines,
    format_pipeline_config,
    gaussian_blur,
    gaussian_kernel,
    grayscale,
    hough_lines,
    lens_correct,
    lighting_robust_config,
    line_seg,
    mask_white_yellow,
    parse_pipeline_config,
    perspective_transform,
    preprocess,
    preprocess_dataset,
    rgb_to_hsl,
    roi_mask,
    run_pipeline,
    sobel_gradients,
)
from laneforge.synthcam import CameraConfig, EnvState, render
from laneforge.trackkit import Track, TrackParams, ring_layout

CAM = CameraConfig.with_ratio(height_px=48, width_ratio=4 / 3, vertical_fov_deg=50.0)


def corridor_frame(ring33, gain=1.0):
    x, y, heading = ring33.spawn_pose(1)
    env = EnvState(rng_seed=0, light_gain=gain, speckle_phase=0.0)
    return render((x, y, heading), CAM, ring33, env, time=0.0, seq=0).pixels


# -- HSL conversion ------------------------------------------------------------

def hsl_oracle(r, g, b):
    h, l, s = colorsys.rgb_to_hls(r / 255.0, g / 255.0, b / 255.0)
    return h * 360.0, s, l


def test_rgb_to_hsl_examples():
    frame = np.array([[[255, 255, 255], [255, 0, 0], [45, 45, 48]]], dtype=np.uint8)
    hsl = rgb_to_hsl(frame)
    assert hsl[0, 0, 1] == 0.0 and hsl[0, 0, 2] == 1.0
    assert hsl[0, 1].tolist() == [0.0, 1.0, 0.5]
    assert hsl[0, 2, 1] == pytest.approx(0.032, abs=5e-4)
    assert hsl[0, 2, 2] == pytest.approx(0.182, abs=5e-4)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 255), st.integers(0, 255), st.integers(0, 255))
def test_rgb_to_hsl_matches_colorsys(r, g, b):
    hsl = rgb_to_hsl(np.array([[[r, g, b]]], dtype=np.uint8))[0, 0]
    oh, os_, ol = hsl_oracle(r, g, b)
    assert hsl[1] == pytest.approx(os_, abs=1e-9)
    assert hsl[2] == pytest.approx(ol, abs=1e-9)
    if os_ > 0:  # hue undefined on the gray axis
        dh = abs(hsl[0] - oh)
        assert min(dh, 360.0 - dh) < 1e-9


def test_rgb_to_hsl_grayscale_plane():
    gray = np.array([[0, 128, 255]], dtype=np.uint8)
    hsl = rgb_to_hsl(gray)
    assert hsl.shape == (1, 3, 3)
    assert np.all(hsl[..., 0] == 0.0) and np.all(hsl[..., 1] == 0.0)
    assert hsl[0, 1, 2] == pytest.approx(128 / 255)


def test_rgb_to_hsl_ranges(rng):
    frame = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    hsl = rgb_to_hsl(frame)
    assert hsl[..., 0].min() >= 0.0 and hsl[..., 0].max() < 360.0
    assert hsl[..., 1].min() >= 0.0 and hsl[..., 1].max() <= 1.0
    assert hsl[..., 2].min() >= 0.0 and hsl[..., 2].max() <= 1.0


# -- masking ---------------------------------------------------------------------

def test_mask_white_yellow_examples():
    frame = np.array(
        [[[235, 235, 235], [46, 46, 46], [255, 255, 0], [40, 40, 0]]], dtype=np.uint8)
    out = mask_white_yellow(rgb_to_hsl(frame))
    assert out.tolist() == [[255, 0, 255, 0]]
    assert out.dtype == np.uint8


def test_mask_is_binary(rng):
    frame = rng.integers(0, 256, (12, 12, 3), dtype=np.uint8)
    out = mask_white_yellow(rgb_to_hsl(frame))
    assert set(np.unique(out)) <= {0, 255}


def test_mask_threshold_boundary():
    cfg = PipelineConfig(white_l_min=0.5)
    exact = np.full((1, 1, 3), 128, dtype=np.uint8)  # L = 128/255 > 0.5
    assert mask_white_yellow(rgb_to_hsl(exact), cfg)[0, 0] == 255
    below = np.full((1, 1, 3), 127, dtype=np.uint8)
    assert mask_white_yellow(rgb_to_hsl(below), cfg)[0, 0] == 0


# -- blur ------------------------------------------------------------------------

def test_gaussian_kernel_oracle():
    k = gaussian_kernel(3, 1.0)
    raw = [math.exp(-(d * d) / 2.0) for d in (-1, 0, 1)]
    want = [v / sum(raw) for v in raw]
    assert np.allclose(k, want, atol=1e-12)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)


def test_gaussian_blur_constant_identity():
    frame = np.full((9, 11), 77, dtype=np.uint8)
    assert np.array_equal(gaussian_blur(frame, 1.5, 5), frame)


def test_gaussian_blur_impulse_stamp():
    frame = np.zeros((7, 7), dtype=np.float64)
    frame[3, 3] = 1.0
    out = gaussian_blur(frame, 1.0, 3)
    k = gaussian_kernel(3, 1.0)
    want = np.zeros((7, 7))
    want[2:5, 2:5] = np.outer(k, k)
    assert np.allclose(out, want, atol=1e-12)


def test_gaussian_blur_preserves_total(rng):
    frame = rng.random((16, 20)) * 255.0
    out = gaussian_blur(frame, 2.0, 7)
    assert out.sum() == pytest.approx(frame.sum(), rel=1e-6)


def test_gaussian_blur_mirror_commutes(rng):
    frame = rng.integers(0, 256, (24, 32), dtype=np.uint8)
    a = gaussian_blur(np.fliplr(frame), 1.5, 5)
    b = np.fliplr(gaussian_blur(frame, 1.5, 5))
    assert np.array_equal(a, b)


@pytest.mark.parametrize("ksize,sigma", [(4, 1.0), (1, 1.0), (2, 1.0), (5, 0.0), (5, -1.0)])
def test_gaussian_blur_bad_kernel(ksize, sigma):
    with pytest.raises(BadKernel):
        gaussian_blur(np.zeros((5, 5), dtype=np.uint8), sigma, ksize)


# -- region of interest -------------------------------------------------------------

def ref_even_odd(px, py, polygon, w, h):
    """Independent even-odd ray cast in the same centered coordinates."""
    cx, cy = w / 2.0, h / 2.0
    x, y = px + 0.5 - cx, py + 0.5 - cy
    verts = [(vx * w - cx, vy * h - cy) for vx, vy in polygon]
    inside = False
    n = len(verts)
    for i in range(n):
        x1, y1 = verts[i]
        x2, y2 = verts[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            t = (y - y1) / (y2 - y1)
            if x < x1 + (x2 - x1) * t:
                inside = not inside
    return inside


def test_roi_full_polygon_identity(rng):
    frame = rng.integers(0, 256, (10, 14), dtype=np.uint8)
    poly = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))
    assert np.array_equal(roi_mask(frame, poly), frame)


def test_roi_degenerate_blanks():
    frame = np.full((8, 8), 200, dtype=np.uint8)
    sliver = ((0.5, 0.5), (0.5, 0.5), (0.5, 0.5))
    assert not roi_mask(frame, sliver).any()


def test_roi_lower_half():
    frame = np.full((10, 10), 9, dtype=np.uint8)
    lower = ((0.0, 0.5), (1.0, 0.5), (1.0, 1.0), (0.0, 1.0))
    out = roi_mask(frame, lower)
    assert not out[:5].any()
    assert (out[5:] == 9).all()


def test_roi_matches_reference_even_odd(rng):
    polys = [
        ((0.125, 0.40), (0.875, 0.40), (1.0, 1.0), (0.0, 1.0)),
        ((0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)),  # bowtie
        ((0.2, 0.1), (0.9, 0.3), (0.6, 0.95), (0.1, 0.7), (0.4, 0.4)),
    ]
    h, w = 13, 17
    frame = np.full((h, w), 1, dtype=np.uint8)
    for poly in polys:
        got = roi_mask(frame, poly) > 0
        want = np.array([[ref_even_odd(x, y, poly, w, h) for x in range(w)]
                         for y in range(h)])
        assert np.array_equal(got, want)


def test_roi_rgb_frames(rng):
    frame = rng.integers(0, 256, (10, 10, 3), dtype=np.uint8)
    lower = ((0.0, 0.5), (1.0, 0.5), (1.0, 1.0), (0.0, 1.0))
    out = roi_mask(frame, lower)
    assert out.shape == frame.shape
    assert not out[:5].any()


# -- edges ------------------------------------------------------------------------

def test_canny_uniform_is_empty():
    assert not canny(np.full((16, 16), 80, dtype=np.uint8), 50, 150).any()


def test_canny_vertical_step():
    frame = np.zeros((16, 16), dtype=np.uint8)
    frame[:, 8:] = 200
    out = canny(frame, 50, 150)
    ys, xs = np.nonzero(out)
    assert len(xs) > 0
    assert set(xs) <= {7, 8}  # edge hugs the step
    assert set(ys) >= set(range(2, 14))  # continuous along the step


def test_canny_threshold_monotonic(rng):
    for _ in range(5):
        frame = rng.integers(0, 256, (16, 16), dtype=np.uint8)
        prev = None
        for low in (20, 60, 100, 140):
            cur = canny(frame, low, 150) > 0
            if prev is not None:
                assert not (cur & ~prev).any()  # raising low never adds pixels
            prev = cur


def test_canny_hysteresis_connectivity(rng):
    frame = (gaussian_blur(rng.integers(0, 256, (24, 24), dtype=np.uint8), 1.0, 3))
    low, high = 40.0, 120.0
    out = canny(frame, low, high) > 0
    if not out.any():
        pytest.skip("degenerate random frame")
    gx, gy = sobel_gradients(frame)
    mag = np.hypot(gx, gy)
    assert (mag[out] >= low).all()
    # flood from strong pixels across the reported edge set reaches everything
    strong = out & (mag >= high)
    assert strong.any()
    reach = strong.copy()
    while True:
        p = np.pad(reach, 1)
        grown = np.zeros_like(reach)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                grown |= p[1 + dy : 1 + dy + 24, 1 + dx : 1 + dx + 24]
        nxt = reach | (grown & out)
        if (nxt == reach).all():
            break
        reach = nxt
    assert np.array_equal(reach, out)


def test_canny_bad_thresholds():
    with pytest.raises(BadThresholds):
        canny(np.zeros((8, 8), dtype=np.uint8), 150, 50)
    with pytest.raises(BadThresholds):
        canny(np.zeros((8, 8), dtype=np.uint8), 100, 100)


# -- hough ------------------------------------------------------------------------

def test_hough_blank_is_empty():
    assert hough_lines(np.zeros((32, 32), dtype=np.uint8)) == []


def test_hough_single_diagonal():
    edges = np.zeros((64, 64), dtype=np.uint8)
    for i in range(10, 41):
        edges[i, i] = 255
    segs = hough_lines(edges)
    assert len(segs) >= 1
    longest = max(segs, key=lambda s: math.hypot(s.x2 - s.x1, s.y2 - s.y1))
    assert longest.slope == pytest.approx(1.0, abs=0.05)
    assert math.hypot(longest.x2 - longest.x1, longest.y2 - longest.y1) >= 25.0
    # every returned segment lies on the ideal line y = x
    for s in segs:
        assert abs(s.y1 - s.x1) <= 1.5 and abs(s.y2 - s.x2) <= 1.5


def test_hough_two_perpendicular_lines():
    edges = np.zeros((64, 64), dtype=np.uint8)
    for i in range(8, 39):
        edges[i, i] = 255  # slope +1
        edges[60 - i, i] = 255  # slope -1
    segs = hough_lines(edges)
    slopes = sorted(round(s.slope) for s in segs)
    assert -1 in slopes and 1 in slopes
    assert len(segs) == 2


def test_hough_respects_min_len():
    edges = np.zeros((64, 64), dtype=np.uint8)
    for i in range(5, 11):
        edges[i, i] = 255  # only ~8.5 px of diagonal support
    cfg = PipelineConfig(hough_threshold=3, hough_min_len=20.0)
    assert hough_lines(edges, cfg) == []


def test_hough_gap_splits_runs():
    edges = np.zeros((80, 80), dtype=np.uint8)
    cols = list(range(5, 30)) + list(range(50, 75))
    for i in cols:
        edges[40, i] = 255
    cfg = PipelineConfig(hough_threshold=20, hough_min_len=10.0, hough_max_gap=4.0)
    segs = hough_lines(edges, cfg)
    assert len(segs) == 2  # the 20-px hole splits the peak into two runs


# -- lane fitting -----------------------------------------------------------------

def test_line_seg_side_and_vertical_guard():
    assert line_seg(0, 0, 10, -5).side is Side.LEFT
    assert line_seg(0, 0, 10, 5).side is Side.RIGHT
    v = line_seg(3, 0, 3, 10)
    assert math.isfinite(v.slope) and abs(v.slope) > 1e6


def test_fit_lane_lines_filters_flat():
    flat = [line_seg(0, 0, 10, 1), line_seg(5, 5, 15, 4)]  # |slope| 0.1
    assert fit_lane_lines(flat) == (None, None)


def test_fit_lane_lines_collinear_exact():
    a = line_seg(0, 50, 10, 40)  # y = 50 - x
    b = line_seg(20, 30, 30, 20)
    left, right = fit_lane_lines([a, b])
    assert right is None
    for x, y in ((0, 50), (10, 40), (20, 30), (30, 20)):
        assert left.slope * x + left.intercept == pytest.approx(y, abs=1e-9)


def test_fit_lane_lines_recovers_noisy_slopes(rng):
    segs = []
    for _ in range(40):
        x = rng.uniform(0, 50)
        for slope, b in ((1.0, 5.0), (-1.0, 95.0)):
            y = slope * x + b + rng.normal(0, 0.3)
            y2 = slope * (x + 4) + b + rng.normal(0, 0.3)
            segs.append(line_seg(x, y, x + 4, y2))
    left, right = fit_lane_lines(segs)
    assert right.slope == pytest.approx(1.0, rel=0.05)
    assert left.slope == pytest.approx(-1.0, rel=0.05)


# -- geometric correction -----------------------------------------------------------

def test_lens_correct_identity():
    frame = np.arange(64, dtype=np.uint8).reshape(8, 8)
    out = lens_correct(frame, 0.0)
    assert np.array_equal(out, frame)
    assert out is not frame


def test_lens_correct_center_fixed(rng):
    frame = rng.integers(0, 256, (9, 9), dtype=np.uint8)
    out = lens_correct(frame, 0.3)
    assert out[4, 4] == frame[4, 4]  # optical center is a fixed point
    assert out.shape == frame.shape


def test_perspective_identity():
    frame = np.arange(100, dtype=np.uint8).reshape(10, 10)
    out = perspective_transform(frame, ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)))
    assert np.array_equal(out, frame)


def test_perspective_zoom_maps_corners():
    w = h = 33
    frame = np.tile(np.arange(w, dtype=np.uint8) * 7, (h, 1))
    quad = ((0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75))
    out = perspective_transform(frame, quad)
    assert out.shape == frame.shape
    assert abs(int(out[0, 0]) - int(frame[8, 8])) <= 7  # output corner reads the quad corner
    assert abs(int(out[h - 1, w - 1]) - int(frame[24, 24])) <= 7


def test_grayscale_oracle(rng):
    frame = rng.integers(0, 256, (6, 6, 3), dtype=np.uint8)
    want = np.clip(np.rint(
        0.299 * frame[..., 0] + 0.587 * frame[..., 1] + 0.114 * frame[..., 2]), 0, 255)
    assert np.array_equal(grayscale(frame), want.astype(np.uint8))
    gray = rng.integers(0, 256, (6, 6), dtype=np.uint8)
    assert np.array_equal(grayscale(gray), gray)


# -- composition ---------------------------------------------------------------------

def test_preprocess_black_stays_black():
    assert not preprocess(np.zeros((48, 64), dtype=np.uint8)).any()


def test_preprocess_equals_manual_chain(ring33):
    frame = corridor_frame(ring33)
    cfg = PipelineConfig()
    manual = mask_white_yellow(rgb_to_hsl(frame), cfg)
    manual = gaussian_blur(manual, cfg.blur_sigma, cfg.blur_ksize)
    manual = roi_mask(manual, cfg.roi_polygon)
    assert np.array_equal(preprocess(frame, cfg), manual)


def test_preprocess_nonzero_sits_on_markers(ring33):
    frame = corridor_frame(ring33)
    out = preprocess(frame, lighting_robust_config())
    assert out.any()
    marker = frame >= 200
    grown = marker.copy()  # dilate by the blur radius
    for _ in range(3):
        p = np.pad(grown, 1)
        g = np.zeros_like(grown)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                g |= p[1 + dy : 1 + dy + grown.shape[0], 1 + dx : 1 + dx + grown.shape[1]]
        grown = g
    on = (out > 0) & grown
    assert on.sum() / (out > 0).sum() > 0.95


def test_preprocess_survives_lighting_sweep(ring33):
    cfg = lighting_robust_config()
    assert cfg.white_l_min == pytest.approx(0.40)
    for gain in (0.5, 0.75, 1.0, 1.25, 1.5):
        out = preprocess(corridor_frame(ring33, gain=gain), cfg)
        assert (out > 0).mean() > 0.005, f"mask went blank at gain {gain}"


def test_preprocess_mirror_equivariant(ring33):
    frame = corridor_frame(ring33)
    for cfg in (PipelineConfig(), lighting_robust_config()):
        a = preprocess(np.fliplr(frame).copy(), cfg)
        b = np.fliplr(preprocess(frame, cfg))
        assert np.array_equal(a, b)


def test_preprocess_preserves_shape_and_pure(ring33):
    frame = corridor_frame(ring33)
    keep = frame.copy()
    out1 = preprocess(frame)
    out2 = preprocess(frame)
    assert out1.shape == frame.shape
    assert np.array_equal(out1, out2)
    assert np.array_equal(frame, keep)


def test_full_stage_chain_runs(ring33):
    cfg = PipelineConfig(stages=(
        "lens_correct", "perspective", "rgb_to_hsl", "mask_white_yellow",
        "gaussian_blur", "grayscale", "canny", "roi_mask", "hough_lines",
        "slope_filter", "group_by_slope", "fit_lane_lines", "blend_lines"),
        hough_threshold=10)
    st_ = run_pipeline(corridor_frame(ring33), cfg)
    assert st_.image.shape == (48, 64)
    assert isinstance(st_.fits, tuple)


def test_preprocess_dataset_maps_frames(ring33):
    from laneforge.datalog import Dataset

    frame = corridor_frame(ring33)
    single = Dataset(samples=[(frame, 5.0), (frame, -3.0)], meta={"seed": "1"})
    out = preprocess_dataset(single, lighting_robust_config())
    assert len(out) == 2
    assert out.samples[0][1] == 5.0
    assert out.samples[0][0].shape == frame.shape
    assert out.meta["preprocessed"] is True
    assert out.meta["seed"] == "1"
    trip = Dataset(samples=[((frame, frame, frame), 2.0)])
    tout = preprocess_dataset(trip, lighting_robust_config())
    assert isinstance(tout.samples[0][0], tuple) and len(tout.samples[0][0]) == 3


# -- config files -----------------------------------------------------------------

def test_pipeline_config_round_trip():
    cfg = PipelineConfig(
        stages=("rgb_to_hsl", "mask_white_yellow", "gaussian_blur", "canny", "roi_mask"),
        white_l_min=0.40, blur_ksize=7, blur_sigma=2.25,
        roi_polygon=((0.1, 0.2), (0.9, 0.2), (1.0, 1.0), (0.0, 1.0)),
        canny_low=30.0, canny_high=90.0, hough_threshold=15)
    back = parse_pipeline_config(format_pipeline_config(cfg))
    assert back == cfg


def test_pipeline_config_default_round_trip():
    assert parse_pipeline_config(format_pipeline_config(PipelineConfig())) == PipelineConfig()


def test_pipeline_config_warnings():
    with pytest.warns(UserWarning, match="unknown pipeline config key"):
        parse_pipeline_config("hyperdrive=1\n")
    with pytest.warns(UserWarning, match="malformed"):
        parse_pipeline_config("just some words\n")


def test_pipeline_config_comments_ignored():
    cfg = parse_pipeline_config("# comment\nwhite_l_min=0.5  # trailing\n\n")
    assert cfg.white_l_min == 0.5


def test_pipeline_config_validation():
    with pytest.raises(BadStage):
        PipelineConfig(stages=("rgb_to_hsl", "sharpen"))
    with pytest.raises(BadThresholds):
        PipelineConfig(canny_low=200.0, canny_high=100.0)
    with pytest.raises(ValueError):
        PipelineConfig(roi_polygon=((0.0, 0.0), (1.0, 1.0)))


def test_default_stages_are_the_four_model_steps():
    assert DEFAULT_STAGES == ("rgb_to_hsl", "mask_white_yellow", "gaussian_blur", "roi_mask")
