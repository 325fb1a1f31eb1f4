# modules/chernoff.py
"""
Cota de Chernoff para el paso tau-leap: el mayor τ tal que la probabilidad
de salir del retículo en un paso sea a lo sumo δ (δ/d por especie).
"""

import logging
import math
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from modules.network import ReactionNetwork

logger = logging.getLogger(__name__)

ROOT_RTOL = 1e-10
ROOT_MAXITER = 100


def chernoff_tau(net: ReactionNetwork, x: np.ndarray, delta: float,
                 a: Optional[np.ndarray] = None) -> float:
    """
    τ_Ch(x, δ) = minᵢ τᵢ*; +∞ si ninguna especie puede decrecer.

    Con xᵢ = 0 y alguna reacción activa que decrece la especie i se devuelve 0
    (fuerza pasos exactos). El recorte a T − t corresponde al llamador.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"δ debe estar en (0,1): {delta}")
    if a is None:
        a = net.propensities(x)
    if a.sum() == 0.0:
        return 0.0

    log_delta_i = math.log(delta / net.d)
    active = a > 0
    tau = math.inf

    for i in range(net.d):
        column = net.nu[:, i]
        if np.all(column >= 0):
            continue
        if x[i] == 0:
            if np.any(active & (column < 0)):
                return 0.0
            continue
        tau = min(tau, species_tau(a[active], column[active], float(x[i]), log_delta_i))

    return tau


def species_tau(a: np.ndarray, v: np.ndarray, x_i: float, log_delta_i: float) -> float:
    """
    τᵢ* para una especie con xᵢ > 0.

    Dᵢ(s) = Σⱼ aⱼ(e^{−s νⱼᵢ} − 1), Rᵢ(s) = log δᵢ + s xᵢ, sᵢ = −log δᵢ / xᵢ.
    """
    v = v.astype(float)

    def D(s: float) -> float:
        return float(np.sum(a * np.expm1(-s * v)))

    def D_prime(s: float) -> float:
        return float(np.sum(-v * a * np.exp(-s * v)))

    def h(s: float) -> float:
        # τᵢ'(s) = 0  ⇔  xᵢ D(s) − Rᵢ(s) D'(s) = 0
        return x_i * D(s) - (log_delta_i + s * x_i) * D_prime(s)

    s_i = -log_delta_i / x_i
    D_i = D(s_i)

    if D_i < 0.0:
        return math.inf
    if D_i == 0.0:
        slope = D_prime(s_i)
        return x_i / slope if slope > 0 else math.inf

    steepest = float(np.max(-v))
    if steepest <= 0:
        return math.inf
    width = 1.0 / steepest
    hi = s_i + width
    with np.errstate(over='raise'):
        try:
            while h(hi) > 0.0:
                width *= 2.0
                hi = s_i + width
        except FloatingPointError:
            logger.warning(f"⚠️ Desborde buscando el máximo de τᵢ (xᵢ={x_i}); se usa el extremo actual")
            hi = s_i + width / 2.0
            return (log_delta_i + hi * x_i) / D(hi)

    s_star = brentq(h, s_i, hi, rtol=ROOT_RTOL, maxiter=ROOT_MAXITER)
    return (log_delta_i + s_star * x_i) / D(s_star)
