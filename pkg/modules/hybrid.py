# modules/hybrid.py
"""
Trayectorias híbridas de un solo nivel: regla de conmutación entre pasos
exactos (MNRM) y tau-leap de Chernoff, con contabilidad por tipo de paso.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from modules.chernoff import chernoff_tau
from modules.exact import MnrmClocks, mnrm_step
from modules.network import ReactionNetwork
from modules.paths import Method, PathBuilder, PathRecord
from modules.streams import RandomStream
from modules.workmodel import MachineConstants, k2

logger = logging.getLogger(__name__)

__all__ = ['Decision', 'Method', 'PathRecord', 'switching_rule', 'hybrid_path',
           'poisson_cost', 'next_grid_point', 'tau_leap']


@dataclass(frozen=True)
class Decision:
    """Método elegido y paso asociado (1/a₀ esperado para MNRM)"""

    method: Method
    tau: float

    @property
    def is_tau_leap(self) -> bool:
        return self.method == Method.TL


def switching_rule(net: ReactionNetwork, x: np.ndarray, t: float, T0: float, delta: float,
                   machine: MachineConstants, a: Optional[np.ndarray] = None) -> Decision:
    """
    Árbol de decisión del paso:
      K₁/a₀ ≥ T0 − t            → MNRM (K1)
      τ_Ch < K₂(x, δ)/a₀        → MNRM (K2)
      en otro caso              → TL con τ_Ch
    K₂ se evalúa con el paso que efectivamente se daría, min(τ_Ch, T0 − t).
    """
    if a is None:
        a = net.propensities(x)
    a0 = float(a.sum())
    if a0 == 0.0:
        return Decision(Method.MNRM_K1, math.inf)

    if machine.k1 / a0 >= T0 - t:
        return Decision(Method.MNRM_K1, 1.0 / a0)

    tau = chernoff_tau(net, x, delta, a)
    threshold = k2(net, x, delta, machine, a=a, tau=min(tau, T0 - t)) / a0
    if tau < threshold:
        return Decision(Method.MNRM_K2, 1.0 / a0)
    return Decision(Method.TL, tau)


def poisson_cost(lam, machine: MachineConstants):
    """C_P(λ) en segundos"""
    return machine.poisson_cost(lam)


def next_grid_point(mesh: np.ndarray, t: float) -> float:
    """Primer punto de la malla estrictamente posterior a t"""
    idx = int(np.searchsorted(mesh, t, side='right'))
    return float(mesh[min(idx, len(mesh) - 1)])


def tau_leap(net: ReactionNetwork, x: np.ndarray, rates: np.ndarray,
             stream: RandomStream) -> Tuple[np.ndarray, int]:
    """Incremento tau-leap con tasas congeladas: x + Σⱼ Poisson(aⱼτ)·νⱼ"""
    counts = stream.poisson(rates)
    return x + counts @ net.nu, int(counts.sum())


def hybrid_path(net: ReactionNetwork, x0: np.ndarray, mesh: np.ndarray, delta: float,
                machine: MachineConstants, stream: RandomStream, t0: float = 0.0,
                builder: Optional[PathBuilder] = None) -> PathRecord:
    """
    Trayectoria híbrida en [t0, T] sobre `mesh`.

    Los pasos TL terminan en min(siguiente punto de malla, t + τ_Ch, T); los
    pasos MNRM consumen los relojes internos. Si un paso TL sale del retículo
    se marca la salida y la trayectoria se detiene.
    """
    T = float(mesh[-1])
    x = np.array(x0, dtype=np.int64)
    t = float(t0)
    if builder is None:
        builder = PathBuilder(t, x)
        builder.cost += machine.c0
    clocks: Optional[MnrmClocks] = None

    while t < T:
        a = net.propensities(x)
        a0 = float(a.sum())
        if a0 == 0.0:
            builder.absorb(T)
            break

        T0 = next_grid_point(mesh, t)
        decision = switching_rule(net, x, t, T0, delta, machine, a)

        if decision.is_tau_leap:
            if decision.tau >= T0 - t:
                tau, t_new = T0 - t, T0
            else:
                tau, t_new = decision.tau, t + decision.tau
            rates = a * tau
            builder.cost += machine.step_cost(Method.TL, rates)
            x_new, firings = tau_leap(net, x, rates, stream)
            if np.any(x_new < 0):
                return builder.finish(exited=True)
            builder.add_tl_rates(rates)
            builder.add(t_new, x_new, Method.TL, a0=a0, firings=firings)
            x, t = x_new, t_new
        else:
            if clocks is None:
                clocks = MnrmClocks.fresh(net.J, stream)
            t_new, x, fired = mnrm_step(net, x, t, T, clocks, stream, a)
            builder.cost += machine.step_cost(decision.method)
            builder.add(t_new, x, decision.method, a0=a0, firings=int(fired is not None))
            t = t_new

    return builder.finish()
