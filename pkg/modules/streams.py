# modules/streams.py
"""
Flujos aleatorios por trayectoria.

Cada trayectoria recibe su propio generador derivado de (semilla maestra,
propósito, nivel, índice de trayectoria), de modo que los resultados no
dependen del número de procesos ni del orden de ejecución.
"""

import math
from typing import Optional

import numpy as np

PURPOSE_CODES = {
    'calibration': 1,
    'estimation': 2,
    'diagnostics': 3,
    'machine': 4,
    'test': 5,
    'deepening': 6,
}


class RandomStream:
    """Generador PCG64 con muestreo de Poisson instrumentado"""

    def __init__(self, seed_sequence: Optional[np.random.SeedSequence] = None, seed: Optional[int] = None):
        if seed_sequence is None:
            seed_sequence = np.random.SeedSequence(seed)
        self.seed_sequence = seed_sequence
        self.rng = np.random.Generator(np.random.PCG64(seed_sequence))
        self.poisson_calls = 0
        self.uniform_calls = 0

    def uniform(self) -> float:
        """U(0,1] sin el cero, para log(1/u)"""
        self.uniform_calls += 1
        u = self.rng.random()
        while u == 0.0:
            u = self.rng.random()
        return u

    def uniforms(self, n: int) -> np.ndarray:
        self.uniform_calls += n
        u = self.rng.random(n)
        while np.any(u == 0.0):
            zero = u == 0.0
            u[zero] = self.rng.random(int(zero.sum()))
        return u

    def exponential(self) -> float:
        """Exp(1) como log(1/u)"""
        return -math.log(self.uniform())

    def exponentials(self, n: int) -> np.ndarray:
        return -np.log(self.uniforms(n))

    def poisson(self, lam):
        """
        Variable de Poisson de ley exacta (numpy: inversión para λ < 10,
        rechazo transformado PTRS para λ ≥ 10). Se cuentan las llamadas.
        """
        self.poisson_calls += 1
        return self.rng.poisson(lam)


def path_stream(master_seed: int, purpose: str, level: int, path_id: int) -> RandomStream:
    """Flujo privado de una trayectoria"""
    sequence = np.random.SeedSequence(
        entropy=int(master_seed),
        spawn_key=(PURPOSE_CODES[purpose], int(level), int(path_id))
    )
    return RandomStream(sequence)
