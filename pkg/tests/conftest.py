import numpy as np
import pytest

from laneforge.trackkit import TileKind, Tile, build_track, ring_layout


@pytest.fixture(scope="session")
def ring33():
    return build_track(ring_layout(3, 3))


@pytest.fixture(scope="session")
def ring64():
    return build_track(ring_layout(6, 4))


@pytest.fixture(scope="session")
def ring42_tiles():
    return ring_layout(4, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def short_run(tmp_path_factory, ring33):
    """One 10 s in-game-AI run with frames on disk, shared read-only."""
    from laneforge.bridge import run_headless
    from laneforge.gamecore import Mode, SessionConfig

    root = tmp_path_factory.mktemp("runs")
    cfg = SessionConfig(mode=Mode.INGAME_AI, track=ring33, duration_s=10.0, seed=5)
    res = run_headless(cfg, root, run_name="short")
    return res
