# modules/duals.py
"""
Estimadores por residuos ponderados con duales.

A partir de una trayectoria híbrida ya simulada se propagan hacia atrás los
pesos duales φ y se calculan, sin simular nada más:
  - E_I(ω): error de discretización (sesgo) de la trayectoria,
  - (S_e, S_v): términos cuya combinación estima Var(g_ℓ − g_{ℓ−1}).
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from modules.error_handler import InsufficientSamplesError
from modules.network import ReactionNetwork
from modules.paths import Method, PathRecord

logger = logging.getLogger(__name__)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass
class DualAccumulators:
    """Sumas por trayectoria; S_v ≥ 0 siempre"""

    e_i: float = 0.0
    s_e: float = 0.0
    s_v: float = 0.0
    n_tl: int = 0


def dual_weights(net: ReactionNetwork, path: PathRecord) -> np.ndarray:
    """
    Pesos duales φ₀…φ_K de forma (K+1, d).

    φ_K = ∇g(x_K) y φ_k = φ_{k+1} + Δt_k · Jₐ(x_k)ᵀ (ν φ_{k+1}).
    """
    states = path.states
    K = len(states) - 1
    phi = np.zeros((K + 1, net.d))
    phi[K] = net.g_gradient(states[K])
    dts = np.diff(path.times)
    for k in range(K - 1, -1, -1):
        phi[k] = phi[k + 1] + dts[k] * (net.jacobian(states[k]).T @ (net.nu @ phi[k + 1]))
    return phi


def _step_moments(jac: np.ndarray, nu: np.ndarray, a: np.ndarray,
                  dt: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """G = Jₐ νᵀ (J×J) y los momentos μ, μ̄, σ² de un paso"""
    G = jac @ nu.T
    half = dt / 2.0
    mu = half * (G @ a)
    mu_bar = half * (np.abs(G) @ a)
    sigma2 = half * ((G ** 2) @ a)
    return G, mu, mu_bar, sigma2


def _gaussian_abs_mean(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """E|N(μ, σ²)| = μ(1 − 2Φ(−μ/σ)) + √(2/π) σ e^{−(μ/σ)²/2}; |μ| si σ = 0"""
    out = np.abs(mu).astype(float)
    positive = sigma > 0
    if np.any(positive):
        q = mu[positive] / sigma[positive]
        out[positive] = (mu[positive] * (1.0 - 2.0 * ndtr(-q))
                         + SQRT_2_OVER_PI * sigma[positive] * np.exp(-0.5 * q ** 2))
    return out


def path_duals(net: ReactionNetwork, path: PathRecord, c_threshold: float = 10.0,
               phi: Optional[np.ndarray] = None, variance_terms: bool = True) -> DualAccumulators:
    """
    E_I, S_e y S_v de una trayectoria en una sola pasada.

    Sólo contribuyen los pasos tau-leap. E_I empareja el paso k con φ_k y los
    términos de varianza con φ_{k+1} (fⱼ = φ_{k+1}·νⱼ). Con
    `variance_terms=False` sólo se acumula E_I.
    """
    if c_threshold <= 0:
        raise ValueError(f"c_threshold debe ser positivo: {c_threshold}")
    acc = DualAccumulators()
    tl_steps = np.flatnonzero(path.tags == Method.TL)
    if tl_steps.size == 0:
        return acc
    if phi is None:
        phi = dual_weights(net, path)

    nu = net.nu.astype(float)
    dts = np.diff(path.times)
    for k in tl_steps:
        x_k, x_next, dt = path.states[k], path.states[k + 1], float(dts[k])
        a = net.propensities(x_k)
        delta_a = net.propensities(x_next) - a
        acc.e_i += dt / 2.0 * float((nu @ phi[k]) @ delta_a)
        acc.n_tl += 1
        if not variance_terms:
            continue

        G, mu, mu_bar, sigma2 = _step_moments(net.jacobian(x_k), nu, a, dt)
        f = nu @ phi[k + 1]
        acc.s_e += dt / 2.0 * float(f @ mu)

        aux1 = dt ** 3 / 8.0 * float(np.sum(a * (G.T @ f) ** 2))
        gaussian = dt * a / 2.0 > c_threshold
        sigma = np.sqrt(sigma2)
        aux2 = dt / 2.0 * float(np.sum((f ** 2 * _gaussian_abs_mean(mu, sigma))[gaussian]))
        bound = np.minimum(mu_bar, np.sqrt(mu ** 2 + sigma2))
        aux3 = dt / 2.0 * float(np.sum((f ** 2 * bound)[~gaussian]))
        acc.s_v += aux1 + aux2 + aux3

    return acc


def weak_error_path(net: ReactionNetwork, path: PathRecord) -> float:
    """E_I(ω) = Σ_k 1_TL(k) (Δt_k/2) Σⱼ (φ_k·νⱼ) Δa_{j,k}"""
    return path_duals(net, path, variance_terms=False).e_i


def strong_error_terms(net: ReactionNetwork, path: PathRecord,
                       c_threshold: float = 10.0) -> Tuple[float, float]:
    """(S_e, S_v) de una trayectoria; c_threshold separa el régimen gaussiano"""
    acc = path_duals(net, path, c_threshold)
    return acc.s_e, acc.s_v


def vhat_estimator(s_e: Sequence[float], s_v: Sequence[float]) -> float:
    """V̂ = varianza muestral de S_e + media muestral de S_v"""
    s_e = np.asarray(s_e, dtype=float)
    s_v = np.asarray(s_v, dtype=float)
    if s_e.size < 2:
        raise InsufficientSamplesError(f"Se necesitan al menos 2 trayectorias para V̂ (hay {s_e.size})")
    return float(np.var(s_e, ddof=1) + np.mean(s_v))
