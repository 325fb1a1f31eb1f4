# modules/paths.py
"""
Registro de trayectorias simuladas y etiquetas de tipo de paso.
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import List

import numpy as np


class Method(IntEnum):
    """Tipo de paso registrado"""

    MNRM_K1 = 0
    MNRM_K2 = 1
    TL = 2
    ABSORBING = 3  # a0 = 0: el estado se mantiene hasta el final
    SSA = 4


@dataclass
class PathRecord:
    """
    Una trayectoria: puntos registrados, etiqueta por paso y contadores.

    El paso k va de times[k] a times[k+1]. `exited` indica que la trayectoria
    salió del retículo no negativo antes de T; en ese caso el registro se
    trunca en el último estado válido.
    """

    times: np.ndarray
    states: np.ndarray
    tags: np.ndarray
    n_tl: int = 0
    n_k1: int = 0
    n_k2: int = 0
    n_firings: int = 0
    exited: bool = False
    cost: float = 0.0
    integrated_a0: float = 0.0
    tl_poisson_rates: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_steps(self) -> int:
        return len(self.tags)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def in_lattice(self) -> bool:
        return not self.exited

    @property
    def tl_mask(self) -> np.ndarray:
        return self.tags == Method.TL


class PathBuilder:
    """Acumula puntos de una trayectoria y produce el PathRecord"""

    def __init__(self, t0: float, x0: np.ndarray):
        self.times: List[float] = [float(t0)]
        self.states: List[np.ndarray] = [np.array(x0, dtype=np.int64)]
        self.tags: List[int] = []
        self.counts = {method: 0 for method in Method}
        self.n_firings = 0
        self.exited = False
        self.cost = 0.0
        self.integrated_a0 = 0.0
        self.tl_rates: List[np.ndarray] = []

    def add(self, t: float, x: np.ndarray, method: Method, a0: float = 0.0,
            firings: int = 0):
        """Cierra un paso en (t, x); `a0` es la propensidad total al inicio del paso"""
        self.integrated_a0 += a0 * (t - self.times[-1])
        self.counts[method] += 1
        self.n_firings += firings
        self.times.append(float(t))
        self.states.append(np.array(x, dtype=np.int64))
        self.tags.append(int(method))

    def absorb(self, T: float):
        """Sin reacciones posibles: el estado actual se mantiene hasta T"""
        if self.t < T:
            self.add(T, self.x, Method.ABSORBING)

    def add_tl_rates(self, rates: np.ndarray):
        self.tl_rates.append(np.array(rates, dtype=float))

    def finish(self, exited: bool = False) -> PathRecord:
        self.exited = self.exited or exited
        J = self.tl_rates[0].size if self.tl_rates else 0
        return PathRecord(
            times=np.array(self.times),
            states=np.array(self.states, dtype=np.int64),
            tags=np.array(self.tags, dtype=np.int8),
            n_tl=self.counts[Method.TL],
            n_k1=self.counts[Method.MNRM_K1],
            n_k2=self.counts[Method.MNRM_K2],
            n_firings=self.n_firings,
            exited=self.exited,
            cost=self.cost,
            integrated_a0=self.integrated_a0,
            tl_poisson_rates=np.array(self.tl_rates) if self.tl_rates else np.zeros((0, J))
        )

    @property
    def t(self) -> float:
        return self.times[-1]

    @property
    def x(self) -> np.ndarray:
        return self.states[-1]

