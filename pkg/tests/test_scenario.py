import itertools
import warnings

import numpy as np
import pytest

from specsense.errors import ConfigError, DegenerateGeometry, DimensionMismatch, PlacementFailure
from specsense.scenario import (
    ScenarioConfig,
    build_scenario,
    channel_gains,
    compose_signals,
    default_threshold,
    draw_occupancy,
    path_gain,
    place_nodes,
    trial_streams,
)


def test_defaults_mirror_simulation_section():
    cfg = ScenarioConfig()
    assert (cfg.n_channels, cfg.n_measurements, cfg.n_pus, cfg.n_sus) == (200, 50, 4, 12)
    assert cfg.pathloss_exp == 2.0
    assert cfg.consensus_steps == 10
    assert cfg.trials == 500
    assert (cfg.area_side, cfg.min_su_spacing) == (1000.0, 10.0)


@pytest.mark.parametrize(
    "override",
    [
        {"n_pus": 300},
        {"n_pus": 0},
        {"n_measurements": 0},
        {"n_measurements": 201},
        {"n_sus": 0},
        {"consensus_steps": 0},
        {"link_prob": 0.0},
        {"link_prob": 1.5},
        {"pathloss_exp": 0.0},
        {"area_side": -1.0},
        {"trials": 0},
        {"threshold": 0.0},
        {"rng_seed": -1},
    ],
)
def test_invalid_config_rejected(override):
    with pytest.raises(ConfigError):
        ScenarioConfig(**override)


def test_sparse_recovery_warning():
    with pytest.warns(UserWarning, match="P\\*ln"):
        ScenarioConfig(n_measurements=20)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ScenarioConfig(n_measurements=22)


def test_place_nodes_spacing_and_bounds():
    cfg = ScenarioConfig(n_sus=12)
    pu, su = place_nodes(cfg, np.random.default_rng(3))
    assert pu.shape == (200, 2) and su.shape == (12, 2)
    for pts in (pu, su):
        assert np.all((pts >= 0) & (pts <= 1000))
    for a, b in itertools.combinations(su, 2):
        assert np.linalg.norm(a - b) >= 10


def test_place_single_su():
    cfg = ScenarioConfig(n_sus=1, min_su_spacing=1e9)
    _, su = place_nodes(cfg, np.random.default_rng(0))
    assert su.shape == (1, 2)


def test_place_nodes_deterministic():
    cfg = ScenarioConfig(n_sus=2)
    a = place_nodes(cfg, np.random.default_rng(11))
    b = place_nodes(cfg, np.random.default_rng(11))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_placement_failure_when_overcrowded():
    # 4 points pairwise >= 2 apart do not fit in a 1x1 square
    cfg = ScenarioConfig(n_sus=4, area_side=1.0, min_su_spacing=2.0)
    with pytest.raises(PlacementFailure):
        place_nodes(cfg, np.random.default_rng(0))


@pytest.mark.parametrize("n, p", [(200, 4), (10, 0), (10, 10)])
def test_draw_occupancy(n, p):
    occ = draw_occupancy(n, p, np.random.default_rng(1))
    assert occ.shape == (n,)
    assert set(np.unique(occ)) <= {0, 1}
    assert occ.sum() == p


def test_occupancy_roughly_uniform():
    rng = np.random.default_rng(5)
    hits = np.sum([draw_occupancy(10, 2, rng) for _ in range(20000)], axis=0, dtype=np.int64)
    # each channel active w.p. 0.2 -> 4000 +- 57
    assert np.all(np.abs(hits - 4000) < 5 * 57)


def test_path_gain_examples():
    assert path_gain(1.0, 1 + 0j, 2.0) == 1.0
    assert path_gain(100.0, 1 + 0j, 2.0) == pytest.approx(0.01)


def test_gain_second_moment():
    # E[G^2 d^alpha] = E|h|^2 = 1 for unit-variance complex Gaussian fading
    pu = np.array([[0.0, 0.0]])
    su = np.array([[30.0, 40.0]])  # d = 50
    rng = np.random.default_rng(9)
    g = np.array([channel_gains(pu, su, 2.0, rng)[0, 0] for _ in range(100_000)])
    assert np.mean(g**2 * 50.0**2) == pytest.approx(1.0, abs=0.02)


def test_gain_shape_and_sign():
    pu = np.random.default_rng(0).uniform(0, 100, (7, 2))
    su = np.random.default_rng(1).uniform(0, 100, (3, 2))
    g = channel_gains(pu, su, 3.0, np.random.default_rng(2))
    assert g.shape == (3, 7)
    assert np.all(g >= 0)


def test_collocated_nodes_rejected():
    pts = np.array([[1.0, 1.0]])
    with pytest.raises(DegenerateGeometry):
        channel_gains(pts, pts.copy(), 2.0, np.random.default_rng(0))


def test_compose_signals_identity_and_zero():
    g = np.arange(6, dtype=float).reshape(2, 3)
    np.testing.assert_array_equal(compose_signals(np.ones(3), g), g.T)
    np.testing.assert_array_equal(compose_signals(np.zeros(3), g), np.zeros((3, 2)))


def test_compose_signals_hand_product():
    g = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    x = compose_signals(np.array([1, 0, 1]), g)
    # diag(1,0,1) @ G.T computed by hand
    np.testing.assert_array_equal(x, [[1.0, 4.0], [0.0, 0.0], [3.0, 6.0]])


def test_compose_signals_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        compose_signals(np.ones(4), np.ones((2, 3)))


def test_scenario_support_and_determinism():
    cfg = ScenarioConfig(n_channels=40, n_pus=3, n_measurements=20, n_sus=5)
    a = build_scenario(cfg, trial_streams(7, 2))
    b = build_scenario(cfg, trial_streams(7, 2))
    for name in ("pu_positions", "su_positions", "occupancy", "gains", "signals"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    inactive = a.occupancy == 0
    assert np.all(a.signals[inactive] == 0)
    assert np.count_nonzero(np.any(a.signals != 0, axis=1)) <= cfg.n_pus


def test_trial_streams_are_independent_per_trial():
    a = trial_streams(1, 0)["fading"].random(4)
    b = trial_streams(1, 1)["fading"].random(4)
    c = trial_streams(1, 0)["links"].random(4)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_default_threshold_scale():
    d = np.array([[10.0, 20.0, 40.0]])
    assert default_threshold(d, 2.0) == pytest.approx(0.3 / 20.0)
