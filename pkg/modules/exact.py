# modules/exact.py
"""
Simulación exacta: Método de la Siguiente Reacción Modificado (relojes
internos Rⱼ, Pⱼ) y el método directo de Gillespie como referencia.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from modules.network import ReactionNetwork
from modules.paths import Method, PathBuilder, PathRecord
from modules.streams import RandomStream

logger = logging.getLogger(__name__)


@dataclass
class MnrmClocks:
    """Tiempos internos R y próximos disparos P de procesos de Poisson unitarios"""

    R: np.ndarray
    P: np.ndarray

    @classmethod
    def fresh(cls, n: int, stream: RandomStream) -> 'MnrmClocks':
        return cls(R=np.zeros(n), P=stream.exponentials(n))

    def advance(self, rates: np.ndarray, dt: float):
        self.R += rates * dt

    def fire(self, channel: int, stream: RandomStream):
        self.P[channel] += stream.exponential()


def next_firing(clocks: MnrmClocks, rates: np.ndarray) -> Tuple[int, float]:
    """
    Canal y tiempo absoluto hasta su disparo; canales con tasa nula quedan en +∞.
    Empates: gana el índice menor.
    """
    with np.errstate(divide='ignore', invalid='ignore'):
        waits = np.where(rates > 0, (clocks.P - clocks.R) / rates, math.inf)
    channel = int(np.argmin(waits))
    return channel, float(waits[channel])


def mnrm_step(net: ReactionNetwork, x: np.ndarray, t: float, horizon: float,
              clocks: MnrmClocks, stream: RandomStream,
              a: Optional[np.ndarray] = None) -> Tuple[float, np.ndarray, Optional[int]]:
    """
    Un paso del MNRM hasta `horizon`.

    Returns:
        (t nuevo, x nuevo, canal disparado o None si se alcanzó el horizonte)
    """
    if a is None:
        a = net.propensities(x)
    channel, wait = next_firing(clocks, a)
    if math.isinf(wait) or t + wait > horizon:
        clocks.advance(a, horizon - t)
        return horizon, x, None
    clocks.advance(a, wait)
    clocks.fire(channel, stream)
    return t + wait, x + net.nu[channel], channel


def mnrm_simulate(net: ReactionNetwork, x0: np.ndarray, t0: float, T0: float,
                  stream: RandomStream) -> PathRecord:
    """Trayectoria exacta en [t0, T0] con el MNRM"""
    x = np.array(x0, dtype=np.int64)
    t = float(t0)
    builder = PathBuilder(t, x)
    clocks = MnrmClocks.fresh(net.J, stream)

    while t < T0:
        a = net.propensities(x)
        a0 = float(a.sum())
        if a0 == 0.0:
            builder.absorb(T0)
            break
        t_new, x, fired = mnrm_step(net, x, t, T0, clocks, stream, a)
        builder.add(t_new, x, Method.MNRM_K1, a0=a0, firings=int(fired is not None))
        t = t_new

    return builder.finish()


def ssa_simulate(net: ReactionNetwork, x0: np.ndarray, t0: float, T0: float,
                 stream: RandomStream) -> PathRecord:
    """Trayectoria exacta en [t0, T0] con el método directo de Gillespie"""
    x = np.array(x0, dtype=np.int64)
    t = float(t0)
    builder = PathBuilder(t, x)

    while t < T0:
        a = net.propensities(x)
        a0 = float(a.sum())
        if a0 == 0.0:
            builder.absorb(T0)
            break
        tau = stream.exponential() / a0
        u = stream.uniform()
        if t + tau > T0:
            builder.add(T0, x, Method.SSA, a0=a0)
            break
        j = min(int(np.searchsorted(np.cumsum(a), u * a0)), net.J - 1)
        while a[j] == 0.0:
            j -= 1
        x = x + net.nu[j]
        t += tau
        builder.add(t, x, Method.SSA, a0=a0, firings=1)

    return builder.finish()
