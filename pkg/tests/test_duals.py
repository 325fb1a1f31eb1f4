import math

import numpy as np
import pytest

from conftest import decay_model
from modules.duals import (_gaussian_abs_mean, dual_weights, path_duals, strong_error_terms, vhat_estimator,
                           weak_error_path)
from modules.error_handler import InsufficientSamplesError
from modules.hybrid import hybrid_path
from modules.mlmc import level_stats_coupled, level_stats_single, telescoped_variance
from modules.config_manager import SimulationSettings
from modules.network import refine_mesh, uniform_mesh
from modules.oracle import coupled_difference_sampler, mc_variance_oracle
from modules.paths import Method, PathRecord
from modules.streams import path_stream


def _record(times, states, tags):
    return PathRecord(times=np.array(times, dtype=float),
                      states=np.array(states, dtype=np.int64).reshape(len(states), -1),
                      tags=np.array(tags, dtype=np.int8))


@pytest.fixture
def two_leaps():
    return _record([0.0, 0.25, 0.5], [100, 80, 60], [Method.TL, Method.TL])


def test_decay_duals_are_powers(two_leaps):
    phi = dual_weights(decay_model(c=1.0), two_leaps)
    assert phi[:, 0] == pytest.approx([0.75 ** 2, 0.75, 1.0])


def test_decay_duals_on_uniform_mesh():
    net = decay_model(c=2.0)
    mesh = uniform_mesh(1.0, 0.1)
    record = _record(mesh, [50] * len(mesh), [Method.TL] * (len(mesh) - 1))
    phi = dual_weights(net, record)
    K = len(mesh) - 1
    expected = [(1 - 0.2) ** (K - k) for k in range(K + 1)]
    assert phi[:, 0] == pytest.approx(expected)


def test_weak_error_by_hand(two_leaps):
    # k=0: 0.125·(−0.5625)·(−20); k=1: 0.125·(−0.75)·(−20)
    assert weak_error_path(decay_model(c=1.0), two_leaps) == pytest.approx(1.40625 + 1.875)


def test_expected_squared_error_by_hand(two_leaps):
    s_e, s_v = strong_error_terms(decay_model(c=1.0), two_leaps)
    # μ = Δt/2·G·a con G = −1; f = ν·φ_{k+1}
    assert s_e == pytest.approx(0.125 * 0.75 * 12.5 + 0.125 * 1.0 * 10.0)
    assert s_v > 0


def test_only_tau_leap_steps_contribute():
    net = decay_model(c=1.0)
    exact = _record([0.0, 0.1, 0.5], [100, 99, 99], [Method.MNRM_K1, Method.MNRM_K2])
    acc = path_duals(net, exact)
    assert (acc.e_i, acc.s_e, acc.s_v, acc.n_tl) == (0.0, 0.0, 0.0, 0)

    mixed = _record([0.0, 0.25, 0.3, 0.5], [100, 80, 79, 79], [Method.TL, Method.MNRM_K1, Method.MNRM_K1])
    acc = path_duals(net, mixed)
    assert acc.n_tl == 1
    phi = dual_weights(net, mixed)
    assert acc.e_i == pytest.approx(0.125 * -phi[0, 0] * -20.0)


def test_variance_terms_skipped_on_request(two_leaps):
    acc = path_duals(decay_model(c=1.0), two_leaps, variance_terms=False)
    assert acc.s_e == 0.0 and acc.s_v == 0.0
    assert acc.n_tl == 2


def test_non_positive_threshold_rejected(two_leaps):
    with pytest.raises(ValueError):
        path_duals(decay_model(), two_leaps, c_threshold=0.0)


def test_gaussian_abs_mean_limits():
    assert _gaussian_abs_mean(np.array([-3.0]), np.array([0.0])) == pytest.approx([3.0])
    assert _gaussian_abs_mean(np.array([0.0]), np.array([2.0])) == pytest.approx([2.0 * math.sqrt(2 / math.pi)])
    # lejos del origen E|N(μ, σ²)| ≈ |μ|
    assert _gaussian_abs_mean(np.array([50.0]), np.array([1.0])) == pytest.approx([50.0])


def test_vhat_combines_both_terms():
    assert vhat_estimator([2.0, 2.0, 2.0], [0.5, 0.5, 0.5]) == pytest.approx(0.5)
    assert vhat_estimator([1.0, 3.0], [0.0, 0.0]) == pytest.approx(2.0)


def test_vhat_needs_two_paths():
    with pytest.raises(InsufficientSamplesError):
        vhat_estimator([1.0], [1.0])


def test_simulated_paths_have_non_negative_spread(decay_big, machine):
    mesh = uniform_mesh(decay_big.T, 0.125)
    for i in range(10):
        record = hybrid_path(decay_big, decay_big.initial_state, mesh, 1e-2, machine, path_stream(8, 'test', 0, i))
        acc = path_duals(decay_big, record)
        assert acc.s_v >= 0
        assert acc.n_tl == record.n_tl


@pytest.mark.extended
def test_vhat_tracks_brute_force_variance(decay_big, machine):
    coarse = uniform_mesh(decay_big.T, 2 ** -7)
    fine = refine_mesh(coarse)
    settings = SimulationSettings(cv_target=0.03, initial_batch=400, max_batch=40000)
    stats = level_stats_coupled(decay_big, coarse, fine, 1e-2, 1e-2, 1, machine, settings, seed=31)
    sampler = coupled_difference_sampler(decay_big, coarse, fine, 1e-2, 1e-2, machine, seed=32)
    variance, _ = mc_variance_oracle(sampler, cv_target=0.03)
    assert 0.8 <= stats.vhat / variance <= 1.2


def _mean_weak_error(net, mesh, machine, seed, n=200):
    values = [weak_error_path(net, hybrid_path(net, net.initial_state, mesh, 1e-2, machine,
                                               path_stream(seed, 'test', 0, i)))
              for i in range(n)]
    return float(np.mean(values))


def test_weak_error_halves_with_step(decay_big, machine):
    coarse = uniform_mesh(decay_big.T, 2 ** -4)
    coarse_error = _mean_weak_error(decay_big, coarse, machine, seed=71)
    fine_error = _mean_weak_error(decay_big, refine_mesh(coarse), machine, seed=72)
    assert coarse_error > 0
    assert 1.8 <= coarse_error / fine_error <= 2.2


@pytest.mark.extended
def test_telescoped_variance_matches_deepest_level(decay_big, machine):
    n = 2000
    settings = SimulationSettings(cv_target=1e-9, initial_batch=n, max_batch=n)
    meshes = [uniform_mesh(decay_big.T, 0.125)]
    for _ in range(2):
        meshes.append(refine_mesh(meshes[-1]))
    levels = [level_stats_single(decay_big, meshes[0], 1e-2, machine, settings, seed=81)]
    for level in (1, 2):
        levels.append(level_stats_coupled(decay_big, meshes[level - 1], meshes[level], 1e-2, 1e-2, level,
                                          machine, settings, seed=81))
    direct = level_stats_single(decay_big, meshes[2], 1e-2, machine, settings, seed=82).var_g
    # dos varianzas muestrales independientes con M = n
    noise = direct * math.sqrt(2.0 / (n - 1) + 2.0 / (n - 1))
    assert abs(telescoped_variance(levels) - direct) < 4 * noise
