# utils/statistics.py
"""
Coeficientes de variación de estimadores muestrales.
"""

import math
from typing import Sequence

import numpy as np


def cv_of_mean(values: Sequence[float]) -> float:
    """CV de la media muestral: s / (√M·|x̄|); 0 si la muestra es constante"""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return math.inf
    std = float(values.std(ddof=1))
    if std == 0.0:
        return 0.0
    mean = abs(float(values.mean()))
    return math.inf if mean == 0.0 else std / (math.sqrt(values.size) * mean)


def variance_of_variance(values: Sequence[float]) -> float:
    """(m₄ − s⁴)/M, varianza asintótica de la varianza muestral"""
    values = np.asarray(values, dtype=float)
    s2 = float(values.var(ddof=1))
    m4 = float(np.mean((values - values.mean()) ** 4))
    return max(m4 - s2 ** 2, 0.0) / values.size


def variance_cv(values: Sequence[float]) -> float:
    """CV de la varianza muestral: √((m₄ − s⁴)/M) / s²"""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return math.inf
    s2 = float(values.var(ddof=1))
    if s2 == 0.0:
        return 0.0
    return math.sqrt(variance_of_variance(values)) / s2


def vhat_cv(s_e: Sequence[float], s_v: Sequence[float]) -> float:
    """CV de V̂ = Var(S_e) + media(S_v), con ambos términos independientes"""
    s_e = np.asarray(s_e, dtype=float)
    s_v = np.asarray(s_v, dtype=float)
    if s_e.size < 2:
        return math.inf
    vhat = float(s_e.var(ddof=1) + s_v.mean())
    if vhat == 0.0:
        return 0.0
    spread = variance_of_variance(s_e) + float(s_v.var(ddof=1)) / s_v.size
    return math.sqrt(spread) / vhat
