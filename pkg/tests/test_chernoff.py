import json
import math

import numpy as np
import pytest
from scipy import stats

from conftest import decay_model
from modules.chernoff import chernoff_tau
from modules.network import parse_model
from modules.oracle import exit_frequency
from modules.streams import path_stream


@pytest.mark.parametrize('x, delta', [(10, 1e-2), (1000, 1e-2), (1000, 1e-3), (100000, 1e-3)])
def test_decay_tau_respects_exit_probability(x, delta):
    net = decay_model(x0=x)
    state = np.array([x])
    tau = chernoff_tau(net, state, delta)
    assert 0 < tau < math.inf
    lam = float(net.propensities(state)[0]) * tau
    # P(Poisson(aτ) > x) es la probabilidad exacta de salir en un salto
    assert stats.poisson.sf(x, lam) <= delta


def test_tau_shrinks_with_delta():
    net = decay_model(x0=500)
    state = np.array([500])
    taus = [chernoff_tau(net, state, d) for d in (1e-1, 1e-2, 1e-3, 1e-4)]
    assert all(a > b for a, b in zip(taus, taus[1:]))


def test_birth_only_network_is_unbounded():
    net = parse_model(json.dumps({'species': {'X': 3}, 'reactions': ['0 -> X @ 2'], 'T': 1, 'observable': 'X'}))
    assert math.isinf(chernoff_tau(net, np.array([3]), 1e-2))


def test_absorbing_state_gives_zero():
    net = decay_model(x0=0)
    assert chernoff_tau(net, np.array([0]), 1e-2) == 0.0


def test_depleted_species_is_skipped():
    # X = 0 anula su reacción de consumo; la cota la fija Y
    net = parse_model(json.dumps({'species': {'X': 0, 'Y': 10}, 'reactions': ['X -> 0 @ 1', 'Y -> X @ 1'],
                                  'T': 1, 'observable': 'X'}))
    tau = chernoff_tau(net, np.array([0, 10]), 1e-2)
    assert 0 < tau < math.inf


def test_birth_dominated_species_is_unbounded(gene_net):
    # con R = 5 la muerte de R es despreciable frente a su nacimiento
    assert math.isinf(chernoff_tau(gene_net, np.array([5, 0, 0]), 1e-2))


def test_delta_domain():
    net = decay_model()
    with pytest.raises(ValueError):
        chernoff_tau(net, np.array([10]), 1.5)
    with pytest.raises(ValueError):
        chernoff_tau(net, np.array([10]), 0.0)


def test_gene_tau_exit_frequency(gene_net):
    state = np.array([0, 300, 50])
    delta = 1e-2
    tau = chernoff_tau(gene_net, state, delta)
    n = 20000
    freq = exit_frequency(gene_net, state, tau, n, path_stream(5, 'test', 0, 0))
    assert freq <= delta + 4 * math.sqrt(delta / n)


@pytest.mark.extended
@pytest.mark.parametrize('delta', [1e-2, 1e-3])
def test_exit_frequency_over_sampled_gene_states(gene_net, delta):
    rng = path_stream(9, 'test', 0, 0).rng
    n = 1_000_000
    for k in range(20):
        state = np.array([rng.integers(0, 3), rng.integers(1, 1000), rng.integers(0, 200)])
        tau = chernoff_tau(gene_net, state, delta)
        if not math.isfinite(tau):
            continue
        freq = exit_frequency(gene_net, state, tau, n, path_stream(9, 'test', 1, k))
        assert freq <= delta + 3 * math.sqrt(delta / n)
