import math

import numpy as np
import pytest

from laneforge.synthcam import (
    CameraConfig,
    EnvState,
    Frame,
    frame_filename,
    ground_points,
    parse_pgm,
    pgm_bytes,
    read_pgm,
    render,
    render_minimap,
    render_rgb,
    resize_bilinear,
    speckle,
    write_pgm,
)


CAM = CameraConfig.with_ratio(height_px=120)
CLEAN = EnvState(rng_seed=7)  # light_gain 1, speckle off


def corridor_pose(track):
    """A straight tile with clear lane for 1.6 m ahead, so the camera sees an
    uncurved marker corridor (some straight tiles face a corner)."""
    from laneforge.trackkit import SurfaceClass

    for i, t in enumerate(track.tiles):
        if t.kind.value not in ("straight", "start_finish"):
            continue
        x, y, heading = track.spawn_pose(i)
        fx, fy = math.cos(heading), math.sin(heading)
        if all(track.sample_surface((x + d * fx, y + d * fy)) is SurfaceClass.ASPHALT
               for d in (0.4, 0.7, 1.0, 1.3, 1.6)):
            return x, y, heading
    raise AssertionError


def test_camera_config_validation():
    with pytest.raises(ValueError):
        CameraConfig(width_px=100, height_px=120)
    with pytest.raises(ValueError):
        CameraConfig.with_ratio(height_px=120, vertical_fov_deg=0.0)


def test_horizon_row_matches_ray_geometry(ring64):
    """Rows above the analytic horizon never hit the ground, rows below
    always do (oracle from the ray mask itself, +-1 px)."""
    pose = corridor_pose(ring64)
    pts, mask, dist = ground_points(pose, CAM)
    hr = CAM.horizon_row()
    rows_with_ground = np.flatnonzero(mask.any(axis=1))
    assert abs(rows_with_ground.min() - math.ceil(hr)) <= 1
    assert not mask[: int(math.floor(hr)) - 1].any()


def test_monotone_depth_down_columns(ring64):
    pose = corridor_pose(ring64)
    _, mask, dist = ground_points(pose, CAM)
    for col in range(0, CAM.width_px, 16):
        d = dist[mask[:, col], col]
        assert (np.diff(d) < 0).all()


def test_intensity_bands(ring64):
    """Construction bounds: asphalt band, bright markers, dim background."""
    pose = corridor_pose(ring64)
    fr = render(pose, CAM, ring64, CLEAN, time=0.0)
    assert fr.pixels.dtype == np.uint8
    assert fr.pixels.shape == (120, 160)
    hr = int(CAM.horizon_row())
    above = fr.pixels[: hr - 1]
    assert above.max() <= 60
    below = fr.pixels[hr + 2 :]
    asphalt = (below >= 25) & (below <= 55)
    assert asphalt.mean() > 0.3
    assert (below >= 200).sum() > 0  # markers visible


def test_marker_projection_oracle(ring64):
    """Independent pinhole projection of known marker-centerline world
    points; the rendered frame must be bright at those pixels."""
    x, y, heading = corridor_pose(ring64)
    half = ring64.params.lane_width_m / 2.0
    fwd = np.array([math.cos(heading), math.sin(heading)])
    left = np.array([-math.sin(heading), math.cos(heading)])
    cam_pos = np.array([x, y]) + CAM.mount_forward_m * fwd
    pitch = math.radians(CAM.pitch_down_deg)
    f = CAM.focal_px
    cx = (CAM.width_px - 1) / 2.0
    cy = (CAM.height_px - 1) / 2.0

    fr = render((x, y, heading), CAM, ring64, CLEAN, time=0.0)
    checked = 0
    for ahead in (0.5, 0.8, 1.1):
        for side in (half, -half):
            world = cam_pos + ahead * fwd + side * left
            rel = world - cam_pos
            x_c = float(rel @ fwd)  # forward distance
            y_c = float(rel @ left)  # leftward offset
            # rotate into the pitched camera frame (z up at mount height)
            z_c = -CAM.mount_height_m
            xf = x_c * math.cos(pitch) - z_c * math.sin(pitch)
            zf = x_c * math.sin(pitch) + z_c * math.cos(pitch)
            u = cx - f * (y_c / xf)
            v = cy - f * (zf / xf)
            ui, vi = int(round(u)), int(round(v))
            if 1 <= ui < CAM.width_px - 1 and 1 <= vi < CAM.height_px - 1:
                patch = fr.pixels[vi - 1 : vi + 2, ui - 1 : ui + 2]
                assert patch.max() >= 200, (ahead, side, patch)
                checked += 1
    assert checked >= 4


def test_render_deterministic(ring64):
    pose = corridor_pose(ring64)
    env = EnvState.at(99, 1.25)
    a = render(pose, CAM, ring64, env, time=1.25, seq=3)
    b = render(pose, CAM, ring64, env, time=1.25, seq=3)
    assert a.pixels.tobytes() == b.pixels.tobytes()


def test_mirror_render_is_exact_flip(ring64):
    x, y, heading = corridor_pose(ring64)
    fwd = np.array([math.cos(heading), math.sin(heading)])
    axis_pt = np.array([x, y])
    plain = render((x, y, heading), CAM, ring64, CLEAN, time=0.0)
    mirrored = render((x, y, heading), CAM, ring64, CLEAN, time=0.0,
                      mirror_axis=(axis_pt, fwd))
    assert np.array_equal(mirrored.pixels, np.fliplr(plain.pixels))


def test_speckle_phase_zero_is_identity():
    fr = Frame(pixels=np.zeros((48, 64), np.uint8))
    env = EnvState(rng_seed=1, light_gain=1.0, speckle_phase=0.0)
    assert np.array_equal(speckle(fr, env).pixels, fr.pixels)
    assert fr.width == 64 and fr.height == 48


def test_speckle_full_phase_fraction():
    """f(1) = 0.02 of pixels raised; binomial 6-sigma bounds on a black
    frame."""
    n = 256 * 256
    fr = Frame(pixels=np.zeros((256, 256), np.uint8))
    env = EnvState(rng_seed=3, light_gain=1.0, speckle_phase=1.0)
    out = speckle(fr, env)
    lit = int((out.pixels > 0).sum())
    p = 0.02
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(lit - n * p) <= 6 * sigma
    again = speckle(fr, env)
    assert np.array_equal(out.pixels, again.pixels)


def test_env_state_evolution_is_pure():
    a = EnvState.at(42, 3.5)
    b = EnvState.at(42, 3.5)
    assert (a.light_gain, a.speckle_phase) == (b.light_gain, b.speckle_phase)
    assert 0.5 <= a.light_gain <= 1.5
    assert 0.0 <= a.speckle_phase <= 1.0


def test_rgb_render_channels(ring64):
    pose = corridor_pose(ring64)
    fr = render_rgb(pose, CAM, ring64, CLEAN, time=0.0)
    assert fr.pixels.shape == (120, 160, 3)
    # marker pixels are near-white: all channels bright where max is bright
    bright = fr.pixels.max(axis=2) >= 200
    assert bright.any()
    assert (fr.pixels[bright].min(axis=1) >= 180).all()


def test_minimap_ring_and_coins(ring33):
    pose = ring33.spawn_pose(0)
    mm = render_minimap(ring33, pose, 120)
    assert mm.pixels.shape == (120, 120)
    px = mm.pixels
    # marker ring present in all four border bands
    assert (px[:40] >= 200).any() and (px[-40:] >= 200).any()
    assert (px[:, :40] >= 200).any() and (px[:, -40:] >= 200).any()

    for c in ring33.coins:
        c.collected = True
    no_coins = render_minimap(ring33, pose, 120)
    ring33.reset_coins()
    assert not np.array_equal(px, no_coins.pixels)


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(48, 64), dtype=np.uint8)
    data = pgm_bytes(img)
    assert data.startswith(b"P5\n64 48\n255\n")
    assert np.array_equal(parse_pgm(data), img)
    p = tmp_path / "f.pgm"
    write_pgm(p, img)
    assert p.read_bytes() == data
    assert np.array_equal(read_pgm(p), img)


def test_frame_filename():
    assert frame_filename(7) == "frame_00000007.pgm"


def test_resize_bilinear_oracle():
    img = np.array([[0, 100], [200, 40]], dtype=np.uint8)
    out = resize_bilinear(img, 2, 2)
    assert np.array_equal(out, img)
    up = resize_bilinear(img, 3, 3)
    # pixel centers: the middle output samples (0.5, 0.5), the mean of all
    # four inputs; the corners clamp onto the original corner pixels
    assert up[1, 1] == round((0 + 100 + 200 + 40) / 4)
    assert up[0, 0] == 0 and up[2, 2] == 40
