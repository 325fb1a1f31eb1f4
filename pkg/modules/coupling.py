# modules/coupling.py
"""
Acoplamiento de dos trayectorias híbridas en mallas anidadas.

Entre horizontes se usa uno de cuatro bloques según los métodos de cada nivel:
TL/TL con variables de Poisson acopladas, y los bloques con algún nivel MNRM
con un sistema de 3J canales (común, sólo grueso, sólo fino) y relojes
internos a tasas congeladas.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from modules.exact import MnrmClocks, mnrm_step, next_firing
from modules.hybrid import hybrid_path, next_grid_point, switching_rule, tau_leap
from modules.network import ReactionNetwork
from modules.paths import Method, PathBuilder, PathRecord
from modules.streams import RandomStream
from modules.workmodel import MachineConstants

logger = logging.getLogger(__name__)

COMMON, COARSE_ONLY, FINE_ONLY = 0, 1, 2


@dataclass
class CoupledPathRecord:
    """Par de trayectorias acopladas (nivel ℓ−1 grueso, nivel ℓ fino)"""

    coarse: PathRecord
    fine: PathRecord

    @property
    def n_tl(self) -> int:
        return self.coarse.n_tl + self.fine.n_tl

    @property
    def n_k1(self) -> int:
        return self.coarse.n_k1 + self.fine.n_k1

    @property
    def n_k2(self) -> int:
        return self.coarse.n_k2 + self.fine.n_k2

    @property
    def cost(self) -> float:
        return self.coarse.cost + self.fine.cost

    @property
    def coarse_in_lattice(self) -> bool:
        return self.coarse.in_lattice

    @property
    def fine_in_lattice(self) -> bool:
        return self.fine.in_lattice


@dataclass(frozen=True)
class Horizon:
    """Próximo horizonte de un nivel y tasas congeladas en la decisión"""

    H: float
    method: Method
    rates: np.ndarray
    tau: float = math.inf


def couple_poisson(lambda1, lambda2, stream: RandomStream):
    """
    P1 = P* + Q₁, P2 = P* + Q₂ con P* ~ Poisson(λ₁∧λ₂) y residuos
    independientes; uno de Q₁, Q₂ tiene tasa cero.
    """
    lambda1 = np.asarray(lambda1, dtype=float)
    lambda2 = np.asarray(lambda2, dtype=float)
    common = np.minimum(lambda1, lambda2)
    p_star = stream.poisson(common)
    q1 = stream.poisson(lambda1 - common)
    q2 = stream.poisson(lambda2 - common)
    return p_star + q1, p_star + q2


def split_rates(a_coarse: np.ndarray, a_fine: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """S1 = min(ā, a̿), S2 = ā − S1, S3 = a̿ − S1"""
    s1 = np.minimum(a_coarse, a_fine)
    return s1, a_coarse - s1, a_fine - s1


def next_horizon(net: ReactionNetwork, x: np.ndarray, t: float, next_grid: float, T: float,
                 delta: float, machine: MachineConstants,
                 a: Optional[np.ndarray] = None) -> Horizon:
    """
    Horizonte de un nivel: min{punto de malla, t + τ_Ch, T} para TL. Para
    MNRM el horizonte es T y el nivel lo cierra en su propio disparo, que
    es la realización de τ_MNRM. Con a₀ = 0 el horizonte es T con tasas nulas.
    """
    if a is None:
        a = net.propensities(x)
    if a.sum() == 0.0:
        return Horizon(T, Method.MNRM_K1, np.zeros(net.J))
    decision = switching_rule(net, x, t, next_grid, delta, machine, a)
    if decision.is_tau_leap:
        H = next_grid if decision.tau >= next_grid - t else t + decision.tau
        return Horizon(min(H, T), Method.TL, a, decision.tau)
    return Horizon(T, decision.method, a, decision.tau)


def coupled_mnrm_step(net: ReactionNetwork, t: float, H: float, x_coarse: np.ndarray, x_fine: np.ndarray,
                      clocks: MnrmClocks, S: np.ndarray,
                      stream: RandomStream) -> Tuple[float, np.ndarray, np.ndarray, Optional[int]]:
    """
    Un disparo (o llegada al horizonte) del sistema de 3J canales.

    Returns:
        (t, x_coarse, x_fine, grupo disparado o None)
    """
    channel, wait = next_firing(clocks, S)
    if math.isinf(wait) or t + wait > H:
        clocks.advance(S, H - t)
        return H, x_coarse, x_fine, None

    clocks.advance(S, wait)
    clocks.fire(channel, stream)
    group, j = divmod(channel, net.J)
    if group in (COMMON, COARSE_ONLY):
        x_coarse = x_coarse + net.nu[j]
    if group in (COMMON, FINE_ONLY):
        x_fine = x_fine + net.nu[j]
    return t + wait, x_coarse, x_fine, group


class _Leg:
    """Estado mutable de un nivel dentro del par acoplado"""

    def __init__(self, x0: np.ndarray, mesh: np.ndarray, delta: float, machine: MachineConstants):
        self.x = np.array(x0, dtype=np.int64)
        self.mesh = np.asarray(mesh, dtype=float)
        self.delta = delta
        self.builder = PathBuilder(0.0, self.x)
        self.builder.cost += machine.c0
        self.method = Method.MNRM_K1
        self.H = 0.0
        self.start = 0.0
        self.rates = np.zeros(0)
        self.a0 = 0.0
        self.firings = 0
        self.absorbing = False
        self.exited = False

    @property
    def is_tau_leap(self) -> bool:
        return self.method == Method.TL

    def decide(self, net: ReactionNetwork, t: float, machine: MachineConstants):
        a = net.propensities(self.x)
        horizon = next_horizon(net, self.x, t, next_grid_point(self.mesh, t), float(self.mesh[-1]),
                               self.delta, machine, a)
        self.method, self.H, self.rates = horizon.method, horizon.H, horizon.rates
        self.start, self.a0, self.firings = t, float(a.sum()), 0
        self.absorbing = self.a0 == 0.0
        if self.absorbing:
            self.method = Method.ABSORBING
        elif self.is_tau_leap:
            self.builder.cost += machine.step_cost(Method.TL, self.rates * (self.H - t))
        else:
            self.builder.cost += machine.step_cost(self.method)

    def close(self, t: float):
        """Cierra el paso en su horizonte; un TL fuera del retículo marca salida"""
        if self.is_tau_leap:
            if np.any(self.x < 0):
                self.exited = True
                return
            self.builder.add_tl_rates(self.rates * (t - self.start))
        self.builder.add(t, self.x, self.method, a0=self.a0, firings=self.firings)


def _continue_alone(net: ReactionNetwork, leg: _Leg, t: float, machine: MachineConstants,
                    stream: RandomStream) -> PathRecord:
    """Termina el paso en curso del nivel sobreviviente y sigue en un solo nivel"""
    T = float(leg.mesh[-1])
    if leg.H > t and not leg.absorbing:
        if leg.is_tau_leap:
            leg.x, firings = tau_leap(net, leg.x, leg.rates * (leg.H - t), stream)
            leg.firings += firings
            t = leg.H
        else:
            clocks = MnrmClocks.fresh(net.J, stream)
            t, leg.x, fired = mnrm_step(net, leg.x, t, T, clocks, stream, leg.rates)
            leg.firings += int(fired is not None)
        leg.close(t)
        if leg.exited:
            return leg.builder.finish(exited=True)
    return hybrid_path(net, leg.x, leg.mesh, leg.delta, machine, stream, t0=t, builder=leg.builder)


def coupled_hybrid_path(net: ReactionNetwork, x0: np.ndarray, mesh_coarse: np.ndarray,
                        mesh_fine: np.ndarray, delta_coarse: float, delta_fine: float,
                        machine: MachineConstants, stream: RandomStream) -> CoupledPathRecord:
    """
    Avanza ambos niveles de horizonte en horizonte, H = min{H̄, H̿}; cada nivel
    decide de nuevo sólo al alcanzar su propio horizonte.
    """
    T = float(mesh_fine[-1])
    coarse = _Leg(x0, mesh_coarse, delta_coarse, machine)
    fine = _Leg(x0, mesh_fine, delta_fine, machine)
    nu = net.nu
    t = 0.0
    coarse.decide(net, t, machine)
    fine.decide(net, t, machine)

    while t < T:
        H = min(coarse.H, fine.H)

        if coarse.is_tau_leap and fine.is_tau_leap:
            # B1: variables de Poisson acopladas sobre (t, H]
            k_coarse, k_fine = couple_poisson(coarse.rates * (H - t), fine.rates * (H - t), stream)
            coarse.x = coarse.x + k_coarse @ nu
            fine.x = fine.x + k_fine @ nu
            coarse.firings += int(k_coarse.sum())
            fine.firings += int(k_fine.sum())
            t = H
        else:
            # B2-B4: relojes nuevos, tasas congeladas mientras ningún nivel decida
            S = np.concatenate(split_rates(coarse.rates, fine.rates))
            clocks = MnrmClocks.fresh(3 * net.J, stream)
            while t < H:
                t, coarse.x, fine.x, group = coupled_mnrm_step(net, t, H, coarse.x, fine.x, clocks, S, stream)
                if group is None:
                    continue
                moved_coarse = group in (COMMON, COARSE_ONLY)
                moved_fine = group in (COMMON, FINE_ONLY)
                coarse.firings += int(moved_coarse)
                fine.firings += int(moved_fine)
                if moved_coarse and not coarse.is_tau_leap:
                    coarse.H = t
                if moved_fine and not fine.is_tau_leap:
                    fine.H = t
                if coarse.H == t or fine.H == t:
                    break

        reached = [leg for leg in (coarse, fine) if leg.H <= t]
        for leg in reached:
            leg.close(t)

        if coarse.exited or fine.exited:
            if coarse.exited and fine.exited:
                return CoupledPathRecord(coarse.builder.finish(exited=True), fine.builder.finish(exited=True))
            if coarse.exited:
                logger.debug(f"Nivel grueso fuera del retículo en t={t:.6g}; sigue el fino")
                return CoupledPathRecord(coarse.builder.finish(exited=True),
                                         _continue_alone(net, fine, t, machine, stream))
            logger.debug(f"Nivel fino fuera del retículo en t={t:.6g}; sigue el grueso")
            return CoupledPathRecord(_continue_alone(net, coarse, t, machine, stream),
                                     fine.builder.finish(exited=True))

        if t >= T:
            break
        for leg in reached:
            leg.decide(net, t, machine)

    return CoupledPathRecord(coarse.builder.finish(), fine.builder.finish())
