# utils/validators.py
"""
Validaciones de argumentos y chequeos estructurales de modelos.
"""

import logging
from typing import Any, Dict, Optional

import numpy as np
from scipy.optimize import linprog

from modules.error_handler import ModelDefinitionError, UsageError
from modules.network import ReactionNetwork
from modules.streams import path_stream

logger = logging.getLogger(__name__)


def validate_tolerance(tol: Optional[float]) -> float:
    """TOL relativa en (0, 1)"""
    if tol is None:
        raise UsageError("Falta --tol")
    if not 0.0 < tol < 1.0:
        raise UsageError(f"--tol debe estar en (0,1): {tol}")
    return float(tol)


def validate_positive(name: str, value: Optional[float], strict: bool = True):
    if value is None:
        return
    if value < 0 or (strict and value == 0):
        raise UsageError(f"{name} debe ser {'positivo' if strict else 'no negativo'}: {value}")


def validate_overrides(args: Any):
    """Dominios de las banderas numéricas de la CLI"""
    delta0 = getattr(args, 'delta0', None)
    if delta0 is not None and not 0.0 < delta0 < 1.0:
        raise UsageError(f"--delta0 debe estar en (0,1): {delta0}")
    refine = getattr(args, 'refine_factor', None)
    if refine is not None and refine < 2:
        raise UsageError(f"--refine-factor debe ser ≥ 2: {refine}")
    for flag in ('confidence', 'cv_target', 'threshold_c'):
        validate_positive(f"--{flag.replace('_', '-')}", getattr(args, flag, None))
    for flag in ('max_levels', 'workers'):
        value = getattr(args, flag, None)
        if value is not None and value < 1:
            raise UsageError(f"--{flag.replace('_', '-')} debe ser ≥ 1: {value}")


def _sample_states(net: ReactionNetwork, samples: int, seed: int) -> np.ndarray:
    """Puntos del retículo alrededor de x0, incluidas las caras xᵢ = 0"""
    rng = path_stream(seed, 'diagnostics', 0, 0).rng
    upper = np.maximum(2 * net.initial_state, 10)
    states = rng.integers(0, upper + 1, size=(samples, net.d))
    states[: net.d] = net.initial_state
    for i in range(min(net.d, samples - net.d)):
        states[net.d + i, i] = 0
    return np.vstack([net.initial_state[None, :], states])


def lint_model(net: ReactionNetwork, samples: int = 200, seed: int = 0) -> Dict[str, Any]:
    """
    Chequeos estructurales: ν no nulo, propensidades recortadas no negativas
    y nulas cuando el disparo saldría del retículo, observable no trivial.

    Returns:
        Dict con errores, advertencias y bandera is_valid
    """
    errors = []
    warnings = []

    for j, row in enumerate(net.nu):
        if not np.any(row):
            errors.append(f"Reacción {j}: vector estequiométrico nulo")

    for x in _sample_states(net, samples, seed):
        try:
            a = net.propensities(x)
        except ModelDefinitionError as e:
            errors.append(str(e))
            break
        leaving = np.any(x[None, :] + net.nu < 0, axis=1)
        if np.any(a[leaving] != 0):
            errors.append(f"Propensidad no nula hacia fuera del retículo en x={list(x)}")
            break

    if not np.any(net.observable_weights):
        warnings.append("El observable es idénticamente cero")
    if net.total_propensity(net.initial_state) == 0:
        warnings.append("El estado inicial es absorbente")
    for j, reaction in enumerate(net.reactions):
        if reaction.is_mass_action and reaction.rate == 0:
            warnings.append(f"Reacción {j} con constante nula")

    return {
        'errors': errors,
        'warnings': warnings,
        'is_valid': len(errors) == 0
    }


def simplex_lint(net: ReactionNetwork) -> Dict[str, Any]:
    """
    Busca w ≥ 1 con (w, νⱼ) ≤ 0 para toda reacción. Si existe, w·x no crece
    y las trayectorias quedan en un símplex acotado. Sólo informativo.
    """
    result = linprog(
        c=np.ones(net.d),
        A_ub=net.nu.astype(float),
        b_ub=np.zeros(net.J),
        bounds=[(1.0, None)] * net.d,
        method='highs'
    )
    bounded = bool(result.status == 0)
    if bounded:
        logger.info(f"✅ Existe w ≥ 1 con (w,νⱼ) ≤ 0: w={np.round(result.x, 6).tolist()}")
    else:
        logger.info("ℹ️ No existe w ≥ 1 con (w,νⱼ) ≤ 0; el modelo puede no estar acotado")
    return {
        'bounded': bounded,
        'weights': result.x.tolist() if bounded else None,
        'message': result.message
    }
