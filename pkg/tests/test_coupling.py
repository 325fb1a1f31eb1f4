import math

import numpy as np
import pytest
from scipy import stats

from conftest import decay_model
from modules.coupling import coupled_hybrid_path, couple_poisson, split_rates
from modules.hybrid import hybrid_path
from modules.network import refine_mesh, uniform_mesh
from modules.paths import Method
from modules.streams import path_stream


def test_split_rates_partition():
    s1, s2, s3 = split_rates(np.array([3.0, 1.0, 0.0]), np.array([2.0, 4.0, 0.0]))
    assert s1 == pytest.approx([2.0, 1.0, 0.0])
    assert s2 == pytest.approx([1.0, 0.0, 0.0])
    assert s3 == pytest.approx([0.0, 3.0, 0.0])


def test_equal_rates_give_identical_counts(stream):
    p1, p2 = couple_poisson(np.full(500, 7.0), np.full(500, 7.0), stream)
    assert np.array_equal(p1, p2)


def test_zero_rates(stream):
    p1, p2 = couple_poisson(0.0, 0.0, stream)
    assert (int(p1), int(p2)) == (0, 0)


def test_coupled_difference_variance(stream):
    n = 20000
    p1, p2 = couple_poisson(np.full(n, 5.0), np.full(n, 8.0), stream)
    assert abs(p1.mean() - 5.0) < 4 * math.sqrt(5.0 / n)
    assert abs(p2.mean() - 8.0) < 4 * math.sqrt(8.0 / n)
    # P2 − P1 ~ Poisson(3): Var = 3, m₄ = 3 + 3·3²
    se = math.sqrt((30.0 - 9.0) / n)
    assert abs(np.var(p1 - p2, ddof=1) - 3.0) < 4 * se


def test_tau_leap_pair_stays_on_both_meshes(decay_big, machine, stream):
    coarse = uniform_mesh(decay_big.T, 0.125)
    fine = refine_mesh(coarse)
    pair = coupled_hybrid_path(decay_big, decay_big.initial_state, coarse, fine, 1e-2, 1e-2, machine, stream)
    assert pair.coarse.times == pytest.approx(coarse)
    assert pair.fine.times == pytest.approx(fine)
    assert pair.n_tl == 4 + 8
    assert pair.coarse_in_lattice and pair.fine_in_lattice


def test_exact_pair_moves_together(machine):
    net = decay_model(x0=10)
    coarse = uniform_mesh(net.T, 0.125)
    fine = refine_mesh(coarse)
    for i in range(20):
        pair = coupled_hybrid_path(net, net.initial_state, coarse, fine, 1e-2, 1e-2, machine,
                                   path_stream(2, 'test', 1, i))
        # ambos niveles MNRM con el mismo estado sólo usan el canal común
        assert np.array_equal(pair.coarse.final_state, pair.fine.final_state)
        assert pair.n_tl == 0


def test_absorbing_pair(machine, stream):
    net = decay_model(x0=0)
    coarse = uniform_mesh(net.T, 0.125)
    pair = coupled_hybrid_path(net, net.initial_state, coarse, refine_mesh(coarse), 1e-2, 1e-2, machine, stream)
    for leg in (pair.coarse, pair.fine):
        assert leg.final_time == net.T
        assert list(leg.tags) == [Method.ABSORBING]
        assert leg.n_firings == 0
    assert (pair.n_tl, pair.n_k1, pair.n_k2) == (0, 0, 0)


def test_absorbed_pair_reaches_end(machine):
    net = decay_model(x0=3, c=50.0)
    coarse = uniform_mesh(net.T, 0.125)
    fine = refine_mesh(coarse)
    for i in range(20):
        pair = coupled_hybrid_path(net, net.initial_state, coarse, fine, 1e-2, 1e-2, machine,
                                   path_stream(9, 'test', 1, i))
        for leg in (pair.coarse, pair.fine):
            assert leg.final_time == net.T
            assert leg.final_state[0] == 0
            assert leg.tags[-1] == Method.ABSORBING


def test_coupling_reduces_difference_variance(decay_big, machine):
    coarse = uniform_mesh(decay_big.T, 0.125)
    fine = refine_mesh(coarse)
    n = 100
    g_coarse = np.empty(n)
    g_fine = np.empty(n)
    for i in range(n):
        pair = coupled_hybrid_path(decay_big, decay_big.initial_state, coarse, fine, 1e-2, 1e-2, machine,
                                   path_stream(6, 'test', 1, i))
        g_coarse[i] = pair.coarse.final_state[0]
        g_fine[i] = pair.fine.final_state[0]
    assert np.var(g_fine - g_coarse) < 0.5 * np.var(g_fine)
    # las marginales siguen sus medias de Euler
    assert abs(g_coarse.mean() - 1e5 * 0.875 ** 4) < 4 * math.sqrt(5e4 / n)
    assert abs(g_fine.mean() - 1e5 * 0.9375 ** 8) < 4 * math.sqrt(5e4 / n)


def _tl_intervals(record):
    mask = record.tags == Method.TL
    return list(zip(record.times[:-1][mask], record.times[1:][mask]))


def _joint_tau_leap_blocks(pair):
    """Bloques con ambos niveles en tau-leap: intersecciones no vacías de sus pasos TL"""
    return sum(1 for a, b in _tl_intervals(pair.coarse) for c, d in _tl_intervals(pair.fine)
               if min(b, d) > max(a, c))


@pytest.mark.parametrize('x0', [10, 32, 60, 200])
def test_poisson_sampler_only_in_joint_tau_leap_blocks(machine, x0):
    net = decay_model(x0=x0)
    coarse = uniform_mesh(net.T, 0.125)
    fine = refine_mesh(coarse)
    for i in range(10):
        stream = path_stream(12, 'test', 1, i)
        pair = coupled_hybrid_path(net, net.initial_state, coarse, fine, 1e-2, 1e-2, machine, stream)
        assert pair.coarse_in_lattice and pair.fine_in_lattice
        # P*, Q₁ y Q₂ por bloque TL/TL
        assert stream.poisson_calls == 3 * _joint_tau_leap_blocks(pair)
        if x0 <= 32:
            assert stream.poisson_calls == 0


def test_mixed_block_at_start(machine):
    # K₁/a₀ = 3/32 cae entre Δt fino y Δt grueso
    net = decay_model(x0=32)
    coarse = uniform_mesh(net.T, 0.125)
    for i in range(10):
        pair = coupled_hybrid_path(net, net.initial_state, coarse, refine_mesh(coarse), 1e-2, 1e-2, machine,
                                   path_stream(13, 'test', 1, i))
        assert pair.coarse.tags[0] == Method.TL
        assert pair.fine.tags[0] == Method.MNRM_K1


def _g(net, record):
    return net.g(record.final_state) if record.in_lattice else 0.0


def _coupled_legs(net, mesh_coarse, mesh_fine, machine, seed, n):
    coarse, fine = np.empty(n), np.empty(n)
    steps = np.empty((n, 2))
    for i in range(n):
        pair = coupled_hybrid_path(net, net.initial_state, mesh_coarse, mesh_fine, 1e-2, 1e-2, machine,
                                   path_stream(seed, 'test', 1, i))
        coarse[i], fine[i] = _g(net, pair.coarse), _g(net, pair.fine)
        steps[i] = pair.coarse.n_steps, pair.fine.n_steps
    return coarse, fine, steps


def _single_level(net, mesh, machine, seed, n):
    values = np.empty(n)
    steps = np.empty(n)
    for i in range(n):
        record = hybrid_path(net, net.initial_state, mesh, 1e-2, machine, path_stream(seed, 'test', 0, i))
        values[i], steps[i] = _g(net, record), record.n_steps
    return values, steps


def _same_mean(a, b, k=4.0):
    se = math.sqrt(np.var(a, ddof=1) / a.size + np.var(b, ddof=1) / b.size)
    return abs(a.mean() - b.mean()) < k * se


def test_mixed_block_legs_keep_single_level_means(machine):
    net = decay_model(x0=32)
    coarse = uniform_mesh(net.T, 0.125)
    fine = refine_mesh(coarse)
    n = 400
    coupled_coarse, coupled_fine, _ = _coupled_legs(net, coarse, fine, machine, seed=51, n=n)
    alone_coarse, _ = _single_level(net, coarse, machine, seed=52, n=n)
    alone_fine, _ = _single_level(net, fine, machine, seed=53, n=n)
    assert _same_mean(coupled_coarse, alone_coarse)
    assert _same_mean(coupled_fine, alone_fine)


@pytest.mark.extended
@pytest.mark.parametrize('x0', [32, 60])
def test_mixed_block_legs_keep_single_level_law(machine, x0):
    net = decay_model(x0=x0)
    coarse = uniform_mesh(net.T, 0.125)
    fine = refine_mesh(coarse)
    n = 4000
    coupled_coarse, coupled_fine, steps = _coupled_legs(net, coarse, fine, machine, seed=54, n=n)
    alone_coarse, steps_coarse = _single_level(net, coarse, machine, seed=55, n=n)
    alone_fine, steps_fine = _single_level(net, fine, machine, seed=56, n=n)
    assert stats.ks_2samp(coupled_coarse, alone_coarse).pvalue > 0.01
    assert stats.ks_2samp(coupled_fine, alone_fine).pvalue > 0.01
    assert stats.ks_2samp(steps[:, 0], steps_coarse).pvalue > 0.01
    assert stats.ks_2samp(steps[:, 1], steps_fine).pvalue > 0.01
    assert _same_mean(coupled_coarse, alone_coarse, k=3.0)
    assert _same_mean(coupled_fine, alone_fine, k=3.0)


@pytest.mark.parametrize('x0', [60, 100000])
def test_shared_level_has_one_mean_in_both_pairs(machine, x0):
    net = decay_model(x0=x0)
    mesh0 = uniform_mesh(net.T, 0.125)
    mesh1 = refine_mesh(mesh0)
    mesh2 = refine_mesh(mesh1)
    n = 400
    _, level1_below, _ = _coupled_legs(net, mesh0, mesh1, machine, seed=61, n=n)
    level1_above, _, _ = _coupled_legs(net, mesh1, mesh2, machine, seed=62, n=n)
    assert _same_mean(level1_below, level1_above, k=3.0)
