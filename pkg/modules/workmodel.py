# modules/workmodel.py
"""
Modelo de trabajo: constantes dependientes de la máquina (C₁, C₂, C₃, C*,
curva de costo de Poisson C_P) medidas con micro-benchmarks, y el umbral K₂.
"""

import json
import logging
import math
import platform
import hashlib
import time
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import psutil

from modules.chernoff import chernoff_tau
from modules.error_handler import CalibrationError, UsageError
from modules.exact import MnrmClocks, mnrm_step
from modules.network import ReactionNetwork, mean_field
from modules.paths import Method
from modules.streams import RandomStream

logger = logging.getLogger(__name__)

PROFILE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PoissonCostCurve:
    """C_P(λ): constante para λ < λ₀, afín en λ a partir de λ₀"""

    intercept: float
    slope: float = 0.0
    knee: float = 0.0
    r2: float = 1.0

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        value = self.intercept + self.slope * np.maximum(lam - self.knee, 0.0)
        return float(value) if value.ndim == 0 else value

    def total(self, rates: np.ndarray) -> float:
        return float(np.sum(self(rates)))


@dataclass(frozen=True)
class MachineConstants:
    """Segundos por tipo de paso medidos en esta máquina"""

    c1: float
    c2: float
    c3: float
    c_star: float
    poisson: PoissonCostCurve
    c0: float = 0.0
    fingerprint: str = ''
    created: str = ''

    def __post_init__(self):
        for name in ('c1', 'c2', 'c3', 'c_star'):
            if not getattr(self, name) > 0:
                raise CalibrationError(f"La constante {name} debe ser positiva: {getattr(self, name)}")

    @property
    def k1(self) -> float:
        """Costo de calcular τ_Ch relativo a un paso MNRM"""
        return self.c3 / self.c1

    def poisson_cost(self, lam) -> float:
        return self.poisson(lam)

    def step_cost(self, method: Method, poisson_rates: Optional[np.ndarray] = None) -> float:
        """Segundos de un paso; un paso TL suma C_P de sus tasas aⱼτ"""
        if method == Method.TL:
            return self.c3 + (self.poisson.total(poisson_rates) if poisson_rates is not None else 0.0)
        return {Method.MNRM_K1: self.c1, Method.MNRM_K2: self.c2, Method.SSA: self.c_star}.get(method, 0.0)

    @classmethod
    def reference(cls) -> 'MachineConstants':
        """Constantes de referencia (orden de magnitud de numpy en un portátil)"""
        return cls(c1=4e-6, c2=1.6e-5, c3=1.2e-5, c_star=3e-6,
                   poisson=PoissonCostCurve(intercept=1.5e-6, slope=1e-10, knee=10.0, r2=1.0),
                   c0=2e-5, fingerprint='reference', created='')

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['k1'] = self.k1
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'MachineConstants':
        data = dict(data)
        data.pop('k1', None)
        data['poisson'] = PoissonCostCurve(**data['poisson'])
        return cls(**data)


def k2(net: ReactionNetwork, x: np.ndarray, delta: float, machine: MachineConstants,
       a: Optional[np.ndarray] = None, tau: Optional[float] = None) -> float:
    """
    K₂(x, δ) = (C₃ + Σⱼ C_P(aⱼ(x)·τ)) / (C₁ + C₃), con τ = τ_Ch(x, δ) salvo que
    el llamador pase el paso efectivo.
    """
    if a is None:
        a = net.propensities(x)
    if tau is None:
        tau = chernoff_tau(net, x, delta, a)
    with np.errstate(invalid='ignore'):
        rates = np.where(a > 0, a * tau, 0.0)
    return (machine.c3 + machine.poisson.total(rates)) / (machine.c1 + machine.c3)


def host_fingerprint() -> str:
    """Huella del host: plataforma, CPU y memoria"""
    info = {
        'machine': platform.machine(),
        'processor': platform.processor(),
        'system': platform.system(),
        'python': platform.python_version(),
        'numpy': np.__version__,
        'cpus': psutil.cpu_count(logical=True),
        'memory': psutil.virtual_memory().total,
    }
    return hashlib.sha256(json.dumps(info, sort_keys=True).encode('utf-8')).hexdigest()[:16]


def fit_poisson_curve(grid: Sequence[float], seconds: Sequence[float]) -> PoissonCostCurve:
    """
    Ajuste por mínimos cuadrados de la curva por tramos; λ₀ se elige entre los
    puntos de la malla minimizando el residuo. La pendiente se fuerza ≥ 0.
    """
    lam = np.asarray(grid, dtype=float)
    y = np.asarray(seconds, dtype=float)
    total_ss = float(np.sum((y - y.mean()) ** 2))
    best: Optional[PoissonCostCurve] = None
    best_sse = math.inf

    for knee in lam:
        ramp = np.maximum(lam - knee, 0.0)
        design = np.column_stack([np.ones_like(lam), ramp])
        (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
        if slope < 0:
            intercept, slope = float(y.mean()), 0.0
        sse = float(np.sum((y - intercept - slope * ramp) ** 2))
        if sse < best_sse:
            best_sse = sse
            r2 = 1.0 - sse / total_ss if total_ss > 0 else 1.0
            best = PoissonCostCurve(intercept=float(intercept), slope=float(slope), knee=float(knee), r2=r2)

    return best


class MachineCalibrator:
    """
    Mide las constantes con núcleos cronometrados registrados, al estilo de un
    monitor de salud: cada núcleo se ejecuta en lotes con descarte de
    calentamiento y reloj monótono de alta resolución.
    """

    def __init__(self, net: ReactionNetwork, repetitions: int = 10000, retries: int = 3,
                 min_ticks: int = 10, seed: int = 0, poisson_grid: Optional[Sequence[float]] = None):
        if repetitions < 1:
            raise UsageError(f"repetitions debe ser ≥ 1: {repetitions}")
        self.net = net
        self.repetitions = repetitions
        self.retries = retries
        self.min_ticks = min_ticks
        self.stream = RandomStream(seed=seed)
        self.poisson_grid = list(poisson_grid or [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0,
                                                  100.0, 200.0, 500.0, 1000.0])
        self.kernels: List[Dict] = []
        self.resolution = time.get_clock_info('perf_counter').resolution
        self.states = self._sample_states()

    def _sample_states(self) -> List[np.ndarray]:
        """Estados representativos: la trayectoria de campo medio redondeada"""
        _, states = mean_field(self.net, self.net.x0, self.net.T, self.net.T / 64)
        rounded = [np.maximum(np.rint(s), 0).astype(np.int64) for s in states]
        usable = [s for s in rounded if self.net.total_propensity(s) > 0]
        return usable or [self.net.initial_state]

    def register_kernel(self, name: str, func: Callable[[int], None]):
        """Registra un núcleo; `func(i)` ejecuta una operación sobre el estado i"""
        self.kernels.append({'name': name, 'function': func, 'seconds': None, 'batch': None})
        logger.debug(f"Núcleo registrado: {name}")

    def _execute_kernel(self, kernel: Dict) -> float:
        """Segundos por operación, con lote creciente si el reloj es grueso"""
        func = kernel['function']
        n_states = len(self.states)
        batch = self.repetitions

        for attempt in range(self.retries + 1):
            for i in range(min(batch, 100)):
                func(i % n_states)
            start = time.perf_counter_ns()
            for i in range(batch):
                func(i % n_states)
            elapsed = (time.perf_counter_ns() - start) * 1e-9
            per_op = elapsed / batch
            if per_op >= self.min_ticks * self.resolution and per_op > 0:
                kernel['seconds'] = per_op
                kernel['batch'] = batch
                logger.debug(f"Núcleo {kernel['name']}: {per_op * 1e6:.3f} µs/op (lote {batch})")
                return per_op
            batch *= 10
            logger.debug(f"Reloj demasiado grueso para {kernel['name']}; lote → {batch}")

        raise CalibrationError(
            f"No se pudo cronometrar '{kernel['name']}' tras {self.retries} reintentos"
        )

    def _register_default_kernels(self, delta: float):
        net, stream, states = self.net, self.stream, self.states
        clocks = MnrmClocks.fresh(net.J, stream)

        def mnrm(i: int):
            x = states[i]
            a = net.propensities(x)
            mnrm_step(net, x, 0.0, math.inf, clocks, stream, a)

        def chernoff(i: int):
            x = states[i]
            chernoff_tau(net, x, delta, net.propensities(x))

        def mnrm_after_chernoff(i: int):
            x = states[i]
            a = net.propensities(x)
            chernoff_tau(net, x, delta, a)
            mnrm_step(net, x, 0.0, math.inf, clocks, stream, a)

        def ssa(i: int):
            x = states[i]
            a = net.propensities(x)
            a0 = a.sum()
            stream.exponential()
            u = stream.uniform()
            np.searchsorted(np.cumsum(a), u * a0)

        def path_overhead(i: int):
            MnrmClocks.fresh(net.J, stream)
            net.propensities(net.initial_state)

        self.register_kernel('c1', mnrm)
        self.register_kernel('c3', chernoff)
        self.register_kernel('c2', mnrm_after_chernoff)
        self.register_kernel('c_star', ssa)
        self.register_kernel('c0', path_overhead)

    def _poisson_timings(self) -> List[float]:
        timings = []
        for lam in self.poisson_grid:
            kernel = {'name': f"poisson_{lam:g}", 'function': lambda i, lam=lam: self.stream.poisson(lam),
                      'seconds': None, 'batch': None}
            timings.append(self._execute_kernel(kernel))
        return timings

    def run(self, delta: float = 1e-2) -> MachineConstants:
        """Ejecuta todos los núcleos y arma las constantes"""
        self.kernels = []
        self._register_default_kernels(delta)
        measured = {kernel['name']: self._execute_kernel(kernel) for kernel in self.kernels}
        curve = fit_poisson_curve(self.poisson_grid, self._poisson_timings())

        constants = MachineConstants(
            c1=measured['c1'], c2=measured['c2'], c3=measured['c3'], c_star=measured['c_star'],
            poisson=curve, c0=measured['c0'], fingerprint=host_fingerprint(),
            created=datetime.now().isoformat()
        )
        logger.info(
            f"✅ Constantes de máquina: C1={constants.c1:.3e}s C2={constants.c2:.3e}s "
            f"C3={constants.c3:.3e}s C*={constants.c_star:.3e}s K1={constants.k1:.3f} "
            f"C_P R²={curve.r2:.3f}"
        )
        if curve.r2 < 0.9:
            logger.warning(f"⚠️ Ajuste de C_P con R²={curve.r2:.3f} < 0.9")
        return constants


def calibrate_machine(net: ReactionNetwork, repetitions: int = 10000, retries: int = 3,
                      min_ticks: int = 10, seed: int = 0,
                      poisson_grid: Optional[Sequence[float]] = None) -> MachineConstants:
    """Fase I: mide C₁, C₂, C₃, C*, C_P en esta máquina"""
    calibrator = MachineCalibrator(net, repetitions=repetitions, retries=retries,
                                   min_ticks=min_ticks, seed=seed, poisson_grid=poisson_grid)
    return calibrator.run()


def save_profile(constants: MachineConstants, path: Path, grid: Optional[Sequence[float]] = None) -> Path:
    """Guarda el perfil de máquina, indexado por huella del host"""
    path = Path(path)
    profiles: Dict[str, Any] = {}
    if path.exists():
        try:
            profiles = json.loads(path.read_text(encoding='utf-8')).get('profiles', {})
        except json.JSONDecodeError:
            logger.warning(f"⚠️ Perfil de máquina corrupto en {path}; se reemplaza")
    entry = constants.to_dict()
    entry['units'] = {'c0': 's/path', 'c1': 's/step', 'c2': 's/step', 'c3': 's/step',
                      'c_star': 's/step', 'poisson': 's/call'}
    if grid is not None:
        entry['poisson_grid'] = list(grid)
    profiles[constants.fingerprint] = entry
    path.write_text(json.dumps({'schema_version': PROFILE_SCHEMA_VERSION, 'profiles': profiles},
                               indent=2, ensure_ascii=False), encoding='utf-8')
    logger.info(f"✅ Perfil de máquina guardado en {path}")
    return path


def load_profile(path: Path, fingerprint: Optional[str] = None) -> MachineConstants:
    """Carga las constantes del host actual; exige recalibrar si la huella cambió"""
    path = Path(path)
    if not path.exists():
        raise UsageError(
            f"No existe el perfil de máquina {path}. Ejecute primero: "
            f"app.py calibrate-machine --model <modelo> --profile {path}"
        )
    try:
        data = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise UsageError(
            f"Perfil de máquina corrupto en {path} (línea {e.lineno}); recalibre con calibrate-machine"
        ) from None
    fingerprint = fingerprint or host_fingerprint()
    entry = data.get('profiles', {}).get(fingerprint)
    if entry is None:
        raise UsageError(
            f"El perfil {path} no tiene constantes para este host ({fingerprint}); "
            f"ejecute calibrate-machine de nuevo"
        )
    entry = {k: v for k, v in entry.items() if k not in ('units', 'poisson_grid')}
    return MachineConstants.from_dict(entry)
