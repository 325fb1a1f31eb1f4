import math

import numpy as np
import pytest
from scipy import stats

from conftest import decay_model
from modules.exact import MnrmClocks, mnrm_simulate, mnrm_step, next_firing, ssa_simulate
from modules.paths import Method
from modules.streams import RandomStream, path_stream


def test_next_firing_tie_goes_to_lowest_index():
    clocks = MnrmClocks(R=np.zeros(2), P=np.ones(2))
    channel, wait = next_firing(clocks, np.array([1.0, 1.0]))
    assert channel == 0
    assert wait == pytest.approx(1.0)


def test_next_firing_zero_rates_never_fire():
    clocks = MnrmClocks(R=np.zeros(2), P=np.array([0.5, 0.1]))
    channel, wait = next_firing(clocks, np.array([2.0, 0.0]))
    assert channel == 0
    assert wait == pytest.approx(0.25)
    _, wait = next_firing(clocks, np.zeros(2))
    assert math.isinf(wait)


def test_mnrm_step_stops_at_horizon(stream):
    net = decay_model(x0=1, c=1e-9)
    clocks = MnrmClocks.fresh(net.J, stream)
    t, x, fired = mnrm_step(net, np.array([1]), 0.0, 0.5, clocks, stream)
    assert (t, fired) == (0.5, None)
    assert list(x) == [1]
    assert clocks.R == pytest.approx([0.5e-9])


@pytest.mark.parametrize('simulate', [mnrm_simulate, ssa_simulate])
def test_absorbing_state_holds_until_end(simulate, stream):
    net = decay_model(x0=0)
    record = simulate(net, net.initial_state, 0.0, net.T, stream)
    assert record.final_time == net.T
    assert list(record.tags) == [Method.ABSORBING]
    assert list(record.final_state) == [0]
    assert (record.n_firings, record.n_k1, record.n_k2, record.n_tl) == (0, 0, 0, 0)


def test_absorption_mid_path_reaches_end():
    net = decay_model(x0=3, c=50.0)
    for i in range(20):
        record = mnrm_simulate(net, net.initial_state, 0.0, net.T, path_stream(4, 'test', 0, i))
        assert record.final_time == net.T
        if record.final_state[0] == 0:
            assert record.tags[-1] == Method.ABSORBING
            assert record.n_firings == 3
            assert record.n_k1 == record.n_steps - 1


def test_ssa_steps_have_own_tag(stream):
    net = decay_model(x0=50)
    record = ssa_simulate(net, net.initial_state, 0.0, net.T, stream)
    assert np.all(record.tags == Method.SSA)
    assert (record.n_k1, record.n_k2, record.n_tl) == (0, 0, 0)


def test_decay_path_is_monotone(stream):
    net = decay_model(x0=50)
    record = mnrm_simulate(net, net.initial_state, 0.0, net.T, stream)
    assert np.all(np.diff(record.states[:, 0]) <= 0)
    assert record.final_time == pytest.approx(net.T)
    assert np.all(record.tags == Method.MNRM_K1)
    assert record.n_firings == 50 - record.final_state[0]


def _endpoints(simulate, net, n, seed):
    finals = np.empty(n)
    firings = np.empty(n)
    integrated = np.empty(n)
    for i in range(n):
        record = simulate(net, net.initial_state, 0.0, net.T, path_stream(seed, 'test', 0, i))
        finals[i] = record.final_state[0]
        firings[i] = record.n_firings
        integrated[i] = record.integrated_a0
    return finals, firings, integrated


@pytest.mark.parametrize('simulate', [mnrm_simulate, ssa_simulate])
def test_decay_endpoint_mean(simulate):
    net = decay_model(x0=1000)
    n = 400
    finals, firings, integrated = _endpoints(simulate, net, n, seed=7)
    p = math.exp(-0.5)
    se = math.sqrt(1000 * p * (1 - p) / n)
    assert abs(finals.mean() - 1000 * p) < 4 * se
    assert abs(firings.mean() - 1000 * (1 - p)) < 4 * se
    # ∫a₀ds estima el mismo número esperado de disparos
    assert abs(integrated.mean() - 1000 * (1 - p)) < 4 * se


def test_streams_reproduce_paths():
    net = decay_model(x0=200)
    first = mnrm_simulate(net, net.initial_state, 0.0, net.T, path_stream(3, 'test', 0, 11))
    second = mnrm_simulate(net, net.initial_state, 0.0, net.T, path_stream(3, 'test', 0, 11))
    other = mnrm_simulate(net, net.initial_state, 0.0, net.T, path_stream(3, 'test', 0, 12))
    assert np.array_equal(first.times, second.times)
    assert not np.array_equal(first.times, other.times)


def test_uniform_never_zero():
    stream = RandomStream(seed=1)
    assert np.all(stream.uniforms(10000) > 0)


@pytest.mark.extended
def test_mnrm_and_ssa_endpoint_laws_agree():
    net = decay_model(x0=1000)
    n = 10000
    mnrm, _, _ = _endpoints(mnrm_simulate, net, n, seed=21)
    ssa, _, _ = _endpoints(ssa_simulate, net, n, seed=22)
    assert stats.ks_2samp(mnrm, ssa).pvalue > 0.01
    p = math.exp(-0.5)
    assert abs(mnrm.mean() - 1000 * p) < 3 * math.sqrt(1000 * p * (1 - p) / n)
