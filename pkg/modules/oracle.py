# modules/oracle.py
"""
Validadores independientes: soluciones analíticas, varianzas por fuerza bruta
y la ley condicional exacta del error local vía puentes de Poisson.

Nada de este módulo usa los estimadores por duales que valida.
"""

import logging
import math
import time
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from modules.coupling import coupled_hybrid_path
from modules.exact import ssa_simulate
from modules.network import ReactionNetwork
from modules.streams import RandomStream, path_stream
from modules.workmodel import MachineConstants
from utils.statistics import variance_cv

logger = logging.getLogger(__name__)


def decay_exact_mean(x0: float, c: float, T: float) -> float:
    """E[X(T)] = x0·e^{−cT} para X → ∅ con tasa c"""
    return float(x0 * math.exp(-c * T))


def sample_kurtosis(values) -> float:
    """Curtosis de Pearson (no exceso): m₄/m₂²"""
    return float(stats.kurtosis(np.asarray(values, dtype=float), fisher=False, bias=True))


def mc_variance_oracle(sampler: Callable[[int], float], cv_target: float = 0.05,
                       initial: int = 100, max_samples: int = 1_000_000) -> Tuple[float, int]:
    """
    Varianza muestral de gℓ − g_{ℓ−1} por fuerza bruta, duplicando M hasta
    que el CV del estimador de varianza baje de `cv_target`.

    Returns:
        (varianza, M usado)
    """
    values = np.array([sampler(i) for i in range(initial)], dtype=float)
    while variance_cv(values) >= cv_target and values.size < max_samples:
        extra = min(values.size, max_samples - values.size)
        start = values.size
        values = np.append(values, [sampler(i) for i in range(start, start + extra)])
        logger.debug(f"Oráculo de varianza: M={values.size} cv={variance_cv(values):.3g}")
    if variance_cv(values) >= cv_target:
        logger.warning(f"⚠️ Oráculo de varianza sin converger con M={values.size}")
    return float(np.var(values, ddof=1)), int(values.size)


def coupled_difference_sampler(net: ReactionNetwork, mesh_coarse: np.ndarray, mesh_fine: np.ndarray,
                               delta_coarse: float, delta_fine: float, machine: MachineConstants,
                               seed: int = 0, level: int = 1) -> Callable[[int], float]:
    """gℓ·1_{Aℓ} − g_{ℓ−1}·1_{Aℓ−1} de un par acoplado por índice de trayectoria"""

    def sample(path_id: int) -> float:
        stream = path_stream(seed, 'diagnostics', level, path_id)
        pair = coupled_hybrid_path(net, net.initial_state, mesh_coarse, mesh_fine,
                                   delta_coarse, delta_fine, machine, stream)
        g_fine = net.g(pair.fine.final_state) if pair.fine.in_lattice else 0.0
        g_coarse = net.g(pair.coarse.final_state) if pair.coarse.in_lattice else 0.0
        return g_fine - g_coarse

    return sample


def three_point_sampler(p: float, seed: int = 0) -> Callable[[int], float]:
    """χ ∈ {−1, 0, 1} con P(χ = ±1) = p; su curtosis es 1/(2p)"""

    def sample(path_id: int) -> float:
        u = path_stream(seed, 'test', 0, path_id).rng.random()
        if u < p:
            return -1.0
        if u < 2 * p:
            return 1.0
        return 0.0

    return sample


def ssa_reference(net: ReactionNetwork, n_paths: int, seed: int = 0) -> Dict[str, float]:
    """Media y varianza de g(X(T)) con el SSA, más pasos medios y tiempo total"""
    started = time.perf_counter()
    values = np.empty(n_paths)
    steps = np.empty(n_paths)
    for i in range(n_paths):
        record = ssa_simulate(net, net.initial_state, 0.0, net.T, path_stream(seed, 'diagnostics', 0, i))
        values[i] = net.g(record.final_state)
        steps[i] = record.n_firings
    return {
        'mean': float(values.mean()),
        'variance': float(values.var(ddof=1)) if n_paths > 1 else 0.0,
        'mean_steps': float(steps.mean()),
        'runtime': time.perf_counter() - started,
        'paths': n_paths
    }


def _taylor_moments(net: ReactionNetwork, x: np.ndarray, dt: float, weight: float,
                    c_threshold: float) -> Tuple[float, float]:
    """Momentos del error local con la expansión de primer orden (una especie, una reacción)"""
    a = float(net.propensities(x)[0])
    nu = float(net.nu[0, 0])
    G = float(net.jacobian(x)[0, 0]) * nu
    half = dt / 2.0
    mu = half * G * a
    mu_bar = abs(mu)
    sigma2 = half * G ** 2 * a
    f = weight * nu

    mean = half * f * mu
    spread = dt ** 3 / 8.0 * a * (G * f) ** 2
    if half * a > c_threshold:
        sigma = math.sqrt(sigma2)
        if sigma > 0:
            q = mu / sigma
            abs_mean = mu * (1.0 - 2.0 * stats.norm.cdf(-q)) + math.sqrt(2.0 / math.pi) * sigma * math.exp(-q * q / 2)
        else:
            abs_mean = abs(mu)
        spread += half * f ** 2 * abs_mean
    else:
        spread += half * f ** 2 * min(mu_bar, math.sqrt(mu ** 2 + sigma2))
    return mean, spread


def bridge_local_error_oracle(net: ReactionNetwork, x: Optional[np.ndarray] = None, dt: float = 0.1,
                              weight: float = 1.0, c_threshold: float = 10.0,
                              tail: float = 1e-12) -> Tuple[pd.DataFrame, Dict[str, float]]:
    """
    Ley condicional exacta del error local e = X̿ − X̄ de un paso tau-leap
    para una red de una especie y una reacción.

    Dado el conteo grueso Y ~ Poisson(a(x)Δt), la mitad Q | Y es
    Binomial(Y, ½) y Z = x + νQ. Con Δa = a(Z) − a(x):
      Δa ≥ 0: e = ν·Poisson(Δa·Δt/2)
      Δa < 0: e = −ν·Binomial(Y − Q, −Δa/a(x))
    Se enumeran Y y Q y se comparan E[w·e | Y] y Var[w·e | Y], promediados
    sobre Y, con la aproximación de primer orden.

    Returns:
        (tabla por Y, resumen con momentos exactos, aproximados y brechas relativas)
    """
    if net.d != 1 or net.J != 1:
        raise ValueError("El oráculo de puentes requiere una especie y una reacción")
    x = net.initial_state if x is None else np.asarray(x, dtype=np.int64)
    a_x = float(net.propensities(x)[0])
    nu = int(net.nu[0, 0])
    lam = a_x * dt

    y_max = int(stats.poisson.ppf(1.0 - tail, lam)) if lam > 0 else 0
    if nu < 0:
        y_max = min(y_max, int(x[0]) // -nu)
    y_values = np.arange(y_max + 1)
    y_weights = stats.poisson.pmf(y_values, lam)
    y_weights /= y_weights.sum()

    rows = []
    for y, w_y in zip(y_values, y_weights):
        q = np.arange(y + 1)
        w_q = stats.binom.pmf(q, y, 0.5)
        delta_a = np.array([float(net.propensities(x + nu * k)[0]) for k in q]) - a_x
        grow = delta_a >= 0
        mean_q = np.empty(q.size)
        var_q = np.empty(q.size)

        mean_q[grow] = nu * delta_a[grow] * dt / 2.0
        var_q[grow] = nu ** 2 * delta_a[grow] * dt / 2.0
        if a_x > 0:
            p = np.clip(-delta_a[~grow] / a_x, 0.0, 1.0)
            trials = y - q[~grow]
            mean_q[~grow] = -nu * trials * p
            var_q[~grow] = nu ** 2 * trials * p * (1.0 - p)
        else:
            mean_q[~grow] = 0.0
            var_q[~grow] = 0.0

        mean_q *= weight
        var_q *= weight ** 2
        cond_mean = float(np.sum(w_q * mean_q))
        cond_var = float(np.sum(w_q * (var_q + mean_q ** 2)) - cond_mean ** 2)
        rows.append({'Y': int(y), 'weight': float(w_y), 'mean': cond_mean, 'variance': max(cond_var, 0.0)})

    table = pd.DataFrame(rows)
    mean_exact = float(np.sum(table['weight'] * table['mean']))
    var_exact = float(np.sum(table['weight'] * table['variance']))
    mean_taylor, var_taylor = _taylor_moments(net, x, dt, weight, c_threshold)

    def gap(exact: float, approx: float) -> float:
        scale = max(abs(exact), abs(approx))
        return abs(exact - approx) / scale if scale > 0 else 0.0

    summary = {
        'dt': dt,
        'lambda': lam,
        'mean_exact': mean_exact,
        'mean_taylor': mean_taylor,
        'var_exact': var_exact,
        'var_taylor': var_taylor,
        'mean_gap': gap(mean_exact, mean_taylor),
        'var_gap': gap(var_exact, var_taylor)
    }
    logger.debug(f"Oráculo de puentes Δt={dt:.4g}: {summary}")
    return table, summary


def zero_firing_local_error(net: ReactionNetwork, x: Optional[np.ndarray] = None,
                            dt: float = 0.1) -> Tuple[float, float]:
    """Con Y = 0 sólo queda el término R′ con Δa = 0: media y varianza nulas"""
    table, _ = bridge_local_error_oracle(net, x, dt)
    row = table.iloc[0]
    return float(row['mean']), float(row['variance'])


def exit_frequency(net: ReactionNetwork, x: np.ndarray, tau: float, n_leaps: int,
                   stream: Optional[RandomStream] = None) -> float:
    """Frecuencia empírica de salida del retículo en un salto tau-leap de tamaño τ"""
    stream = stream or RandomStream(seed=0)
    rates = net.propensities(x) * tau
    counts = stream.rng.poisson(rates, size=(n_leaps, net.J))
    after = np.asarray(x)[None, :] + counts @ net.nu
    return float(np.mean(np.any(after < 0, axis=1)))
