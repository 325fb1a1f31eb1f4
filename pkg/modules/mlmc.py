# modules/mlmc.py
"""
Estimador Monte Carlo multinivel con trayectorias híbridas.

Fase II: calibración de la jerarquía (malla de nivel 0, δℓ por nivel, número
de niveles L y tamaños de muestra Mℓ) para una tolerancia relativa TOL.
Fase III: estimación por rondas, reasignando Mℓ con las estadísticas que se
van acumulando.
"""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from modules.config_manager import SimulationSettings
from modules.coupling import coupled_hybrid_path
from modules.duals import path_duals, vhat_estimator
from modules.error_handler import (CalibrationError, ConvergenceError, DeltaUnderflowError,
                                   InfeasibleToleranceError, PlanMismatchError, UsageError)
from modules.hybrid import hybrid_path
from modules.network import (ReactionNetwork, check_mesh, level_mesh, model_hash,
                             stable_coarse_step, uniform_mesh)
from modules.streams import path_stream
from modules.workmodel import MachineConstants
from utils.statistics import cv_of_mean, vhat_cv

logger = logging.getLogger(__name__)

PLAN_SCHEMA_VERSION = 1
EXIT_LOAD_LIMIT = 0.1
MIN_PSI = 1e-12


# --- muestras por trayectoria ---------------------------------------------

@dataclass
class PathSummary:
    """Lo que queda de una trayectoria (o par acoplado) para las estadísticas de nivel"""

    g: float
    g_coarse: float = 0.0
    in_lattice: bool = True
    e_i: float = 0.0
    s_e: float = 0.0
    s_v: float = 0.0
    n_tl: int = 0
    n_k1: int = 0
    n_k2: int = 0
    n_ssa: float = 0.0
    cost: float = 0.0

    @property
    def diff(self) -> float:
        """gℓ·1_{Aℓ} − g_{ℓ−1}·1_{Aℓ−1}"""
        return self.g - self.g_coarse


@dataclass(frozen=True)
class LevelTask:
    """Todo lo necesario para simular trayectorias de un nivel en otro proceso"""

    net: ReactionNetwork
    level: int
    mesh: np.ndarray
    delta: float
    machine: MachineConstants
    seed: int
    purpose: str = 'calibration'
    mesh_coarse: Optional[np.ndarray] = None
    delta_coarse: Optional[float] = None
    c_threshold: float = 10.0

    @property
    def coupled(self) -> bool:
        return self.mesh_coarse is not None

    @property
    def dt(self) -> float:
        return float(np.max(np.diff(self.mesh)))

    def simulate(self, path_id: int) -> PathSummary:
        stream = path_stream(self.seed, self.purpose, self.level, path_id)
        net = self.net
        x0 = net.initial_state

        if not self.coupled:
            record = hybrid_path(net, x0, self.mesh, self.delta, self.machine, stream)
            summary = PathSummary(
                g=net.g(record.final_state) if record.in_lattice else 0.0,
                in_lattice=record.in_lattice,
                n_tl=record.n_tl, n_k1=record.n_k1, n_k2=record.n_k2,
                n_ssa=record.integrated_a0, cost=record.cost
            )
            if record.in_lattice:
                acc = path_duals(net, record, self.c_threshold)
                summary.e_i, summary.s_e, summary.s_v = acc.e_i, acc.s_e, acc.s_v
            return summary

        pair = coupled_hybrid_path(net, x0, self.mesh_coarse, self.mesh, self.delta_coarse,
                                   self.delta, self.machine, stream)
        fine, coarse = pair.fine, pair.coarse
        summary = PathSummary(
            g=net.g(fine.final_state) if fine.in_lattice else 0.0,
            g_coarse=net.g(coarse.final_state) if coarse.in_lattice else 0.0,
            in_lattice=fine.in_lattice and coarse.in_lattice,
            n_tl=fine.n_tl, n_k1=fine.n_k1, n_k2=fine.n_k2,
            n_ssa=fine.integrated_a0, cost=pair.cost
        )
        if summary.in_lattice:
            # sesgo con el nivel fino, varianza con el grueso
            summary.e_i = path_duals(net, fine, self.c_threshold, variance_terms=False).e_i
            coarse_acc = path_duals(net, coarse, self.c_threshold)
            summary.s_e, summary.s_v = coarse_acc.s_e, coarse_acc.s_v
        return summary


def _simulate_range(task: LevelTask, start: int, count: int) -> List[PathSummary]:
    return [task.simulate(path_id) for path_id in range(start, start + count)]


def run_paths(task: LevelTask, start: int, count: int, workers: int = 1) -> List[PathSummary]:
    """
    Simula las trayectorias start…start+count−1 del nivel. Con varios procesos
    el rango se reparte en bloques y los resultados vuelven en orden de índice.
    """
    if count <= 0:
        return []
    if workers <= 1 or count < 2 * workers:
        return _simulate_range(task, start, count)

    bounds = np.linspace(start, start + count, workers + 1).astype(int)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(_simulate_range, task, int(lo), int(hi - lo))
                   for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
        chunks = [future.result() for future in futures]
    return [summary for chunk in chunks for summary in chunk]


# --- estadísticas de nivel ------------------------------------------------

@dataclass
class LevelStats:
    """Estadísticas muestrales de un nivel (ψ̂ℓ, Vℓ, medias y conteos)"""

    level: int
    dt: float
    delta: float
    samples: int
    in_lattice: int
    psi: float
    variance: float
    vhat: float
    var_g: float
    var_g_coarse: float
    mean_g: float
    mean_g_coarse: float
    mean_diff: float
    var_diff: float
    mean_e_i: float
    mean_n_tl: float
    mean_n_k1: float
    mean_n_k2: float
    mean_n_ssa: float
    cv: float
    delta_coarse: Optional[float] = None

    @property
    def exit_fraction(self) -> float:
        return 1.0 - self.in_lattice / self.samples if self.samples else 0.0

    @classmethod
    def from_summaries(cls, task: LevelTask, summaries: Sequence[PathSummary]) -> 'LevelStats':
        """
        Vℓ es la varianza muestral de g₀ en el nivel 0 y el estimador dual V̂ℓ
        para ℓ ≥ 1; en el nivel 0 V̂ se guarda igualmente para la regla de δ.
        """
        inside = [s for s in summaries if s.in_lattice]
        g = np.array([s.g for s in summaries])
        g_coarse = np.array([s.g_coarse for s in summaries])
        diff = g - g_coarse
        e_i = np.array([s.e_i for s in inside])
        s_e = np.array([s.s_e for s in inside])
        s_v = np.array([s.s_v for s in inside])

        vhat = vhat_estimator(s_e, s_v)
        var_g = float(np.var(g, ddof=1))
        cv = max(vhat_cv(s_e, s_v), cv_of_mean(g), cv_of_mean(e_i))

        return cls(
            level=task.level,
            dt=task.dt,
            delta=task.delta,
            delta_coarse=task.delta_coarse,
            samples=len(summaries),
            in_lattice=len(inside),
            psi=float(np.mean([s.cost for s in inside])),
            variance=vhat if task.coupled else var_g,
            vhat=vhat,
            var_g=var_g,
            var_g_coarse=float(np.var(g_coarse, ddof=1)),
            mean_g=float(g.mean()),
            mean_g_coarse=float(g_coarse.mean()),
            mean_diff=float(diff.mean()),
            var_diff=float(np.var(diff, ddof=1)),
            mean_e_i=float(e_i.mean()),
            mean_n_tl=float(np.mean([s.n_tl for s in inside])),
            mean_n_k1=float(np.mean([s.n_k1 for s in inside])),
            mean_n_k2=float(np.mean([s.n_k2 for s in inside])),
            mean_n_ssa=float(np.mean([s.n_ssa for s in inside])),
            cv=float(cv)
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['exit_fraction'] = self.exit_fraction
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LevelStats':
        data = dict(data)
        data.pop('exit_fraction', None)
        return cls(**data)


def collect_level_stats(task: LevelTask, settings: SimulationSettings, start: int = 0,
                        workers: int = 1) -> LevelStats:
    """
    Duplica el lote desde `initial_batch` hasta que el mayor CV entre V̂, la
    media de g y la media de E_I quede bajo `cv_target` (o se alcance
    `max_batch`).
    """
    summaries: List[PathSummary] = []
    batch = settings.initial_batch
    while True:
        batch = min(batch, settings.max_batch - len(summaries))
        summaries.extend(run_paths(task, start + len(summaries), batch, workers))

        inside = sum(s.in_lattice for s in summaries)
        if inside / len(summaries) < settings.min_in_lattice_fraction:
            raise CalibrationError(
                f"Nivel {task.level}: sólo {inside}/{len(summaries)} trayectorias quedan en el "
                f"retículo con δ={task.delta:.3g}; reduzca δ"
            )
        stats = LevelStats.from_summaries(task, summaries)
        logger.debug(f"Nivel {task.level}: M={stats.samples} cv={stats.cv:.3g} ψ={stats.psi:.3g}")

        if stats.cv < settings.cv_target:
            return stats
        if len(summaries) >= settings.max_batch:
            logger.warning(f"⚠️ Nivel {task.level}: cv={stats.cv:.3g} con el lote máximo {settings.max_batch}")
            return stats
        batch *= 2


def level_stats_single(net: ReactionNetwork, mesh0: np.ndarray, delta0: float, machine: MachineConstants,
                       settings: Optional[SimulationSettings] = None, seed: int = 0,
                       purpose: str = 'calibration', workers: int = 1, start: int = 0) -> LevelStats:
    """Estadísticas del nivel 0 con trayectorias híbridas de un solo nivel"""
    settings = settings or SimulationSettings()
    task = LevelTask(net, 0, np.asarray(mesh0, dtype=float), delta0, machine, seed, purpose,
                     c_threshold=settings.threshold_c)
    return collect_level_stats(task, settings, start, workers)


def level_stats_coupled(net: ReactionNetwork, mesh_coarse: np.ndarray, mesh_fine: np.ndarray,
                        delta_coarse: float, delta_fine: float, level: int, machine: MachineConstants,
                        settings: Optional[SimulationSettings] = None, seed: int = 0,
                        purpose: str = 'calibration', workers: int = 1, start: int = 0) -> LevelStats:
    """Estadísticas del nivel ℓ ≥ 1 con pares acoplados (ℓ−1, ℓ)"""
    settings = settings or SimulationSettings()
    task = LevelTask(net, level, np.asarray(mesh_fine, dtype=float), delta_fine, machine, seed, purpose,
                     mesh_coarse=np.asarray(mesh_coarse, dtype=float), delta_coarse=delta_coarse,
                     c_threshold=settings.threshold_c)
    return collect_level_stats(task, settings, start, workers)


def telescoped_mean(levels: Sequence[LevelStats]) -> float:
    """E[g_L] ≈ Σℓ media(gℓ − g_{ℓ−1})"""
    return float(sum(s.mean_diff for s in levels))


def telescoped_variance(levels: Sequence[LevelStats]) -> float:
    """Var[g_L] ≈ Var[g₀] + Σℓ (Var[gℓ] − Var[g_{ℓ−1}]) con ambas varianzas del mismo par"""
    if not levels:
        return 0.0
    return float(levels[0].var_g + sum(s.var_g - s.var_g_coarse for s in levels[1:]))


# --- reglas para δ --------------------------------------------------------

def refine_delta_check(vhat: float, var_g: float, delta: float, mean_n_tl: float,
                       delta_floor: float = 1e-16) -> bool:
    """
    True si δℓ es aceptable: V̂(1 − δN)² > 2·Var(g)·δN y δN < 0.1, con
    N la media de pasos tau-leap. Sin pasos tau-leap siempre se acepta.
    """
    if delta < delta_floor:
        raise DeltaUnderflowError(f"δ={delta:.3g} por debajo del mínimo {delta_floor:.3g}")
    if mean_n_tl == 0:
        return True
    load = delta * mean_n_tl
    return vhat * (1.0 - load) ** 2 > 2.0 * var_g * load and load < EXIT_LOAD_LIMIT


def last_level_delta(mean_g: float, mean_n_tl: float, tol: float, c_refine: float = 10.0,
                     delta: float = 1e-2) -> float:
    """
    Mayor potencia de 1/c con |ḡ_L|·δ_L·N_TL < TOL², partiendo de la
    estimación c^⌊log_c(TOL²/(|ḡ|N))⌋; `delta` se devuelve tal cual si ya cumple.
    """
    exposure = abs(mean_g) * mean_n_tl
    target = tol ** 2
    if exposure == 0.0 or exposure * delta < target:
        return delta
    power = math.floor(math.log(target / exposure) / math.log(c_refine) + 1e-9)
    candidate = min(delta, c_refine ** power)
    while exposure * candidate >= target:
        candidate /= c_refine
    return candidate


# --- asignación de muestras -----------------------------------------------

def allocate_samples(psi: Sequence[float], v: Sequence[float], rhs: float) -> np.ndarray:
    """
    Minimiza Σψℓ Mℓ sujeto a ΣVℓ/Mℓ ≤ rhs con Mℓ ≥ 1.

    Esquema voraz: desde el nivel más profundo se fija Mℓ = 1 mientras la
    solución sin restricción de ese nivel quede por debajo de 1; el resto
    recibe Mℓ = q·√(Vℓ/ψℓ).
    """
    psi = np.asarray(psi, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any(psi <= 0):
        raise ValueError(f"Costos por trayectoria no positivos: {psi}")
    if np.any(v < 0):
        raise ValueError(f"Varianzas negativas: {v}")

    L = len(psi) - 1
    M = np.ones(L + 1)
    # niveles con varianza nula: una sola muestra basta
    active = np.flatnonzero(v > 0)
    for k in range(len(active)):
        free, pinned = active[:len(active) - k], active[len(active) - k:]
        n = free[-1]
        available = rhs - float(v[pinned].sum())
        if available <= 0:
            raise InfeasibleToleranceError(
                f"Los niveles fijados en M=1 ya agotan el presupuesto de varianza ({rhs:.3g})"
            )
        q = float(np.sum(np.sqrt(psi[free] * v[free]))) / available
        if psi[n] - q ** 2 * v[n] < 0:
            M[free] = q * np.sqrt(v[free] / psi[free])
            return M
        M[n] = 1.0

    if v.sum() > rhs:
        raise InfeasibleToleranceError("Ni con Mℓ = 1 se satisface la restricción de varianza")
    return M


def kkt_allocate(psi: Sequence[float], v: Sequence[float], tol: float, e_i: float,
                 c_a: float) -> np.ndarray:
    """Mℓ continuos con presupuesto de varianza ((TOL − TOL² − E_I)/C_A)²"""
    slack = tol - tol ** 2 - e_i
    if slack <= 0:
        raise InfeasibleToleranceError(
            f"El sesgo estimado {e_i:.3g} no deja presupuesto para TOL={tol:.3g}; se requiere otro nivel"
        )
    return allocate_samples(psi, v, (slack / c_a) ** 2)


def integer_samples(M: Sequence[float]) -> np.ndarray:
    """⌈Mℓ⌉ con mínimo 1"""
    return np.maximum(1, np.ceil(np.round(np.asarray(M, dtype=float), 9))).astype(int)


# --- plan ---------------------------------------------------------------

@dataclass
class Assessment:
    """Asignación y trabajo de una jerarquía candidata"""

    feasible: bool
    work: float
    M: Optional[np.ndarray]
    bias: float
    mean_g: float


@dataclass
class LevelPlan:
    """Jerarquía calibrada: niveles, δℓ, Mℓ y presupuesto de error"""

    levels: List[LevelStats]
    M: List[int]
    M_continuous: List[float]
    tol: float
    confidence: float
    refine_factor: int
    delta_refine: float
    mesh0: List[float]
    mean_g: float
    var_g: float
    e_i: float
    work_ml: float
    work_ssa: float
    seed: int = 0
    model_hash: str = ''
    runtime: float = 0.0
    partial: bool = False

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def scale(self) -> float:
        return abs(self.mean_g) if self.mean_g != 0 else 1.0

    @property
    def e_i_relative(self) -> float:
        return abs(self.e_i) / self.scale

    def mesh(self, level: int) -> np.ndarray:
        return level_mesh(np.asarray(self.mesh0), level, self.refine_factor)

    def statistical_error(self) -> float:
        """C_A·√(ΣVℓ/Mℓ)/|ĝ|"""
        v = np.array([s.variance for s in self.levels])
        return self.confidence * math.sqrt(float(np.sum(v / np.asarray(self.M)))) / self.scale

    @property
    def theta(self) -> float:
        """Fracción de TOL asignada al error estadístico"""
        return self.statistical_error() / self.tol

    def budget(self) -> Dict[str, float]:
        exit_bound = self.tol ** 2
        statistical = self.statistical_error()
        return {
            'exit_bound': exit_bound,
            'bias': self.e_i_relative,
            'statistical': statistical,
            'total': exit_bound + self.e_i_relative + statistical,
            'tol': self.tol,
            'theta': statistical / self.tol
        }

    def level_rows(self) -> List[Dict[str, Any]]:
        """Filas por nivel para el CSV de diagnóstico"""
        return [{
            'level': s.level, 'dt': s.dt, 'delta': s.delta, 'M': int(m), 'psi': s.psi,
            'vhat': s.variance, 'EI': s.mean_e_i, 'N_TL': s.mean_n_tl, 'N_K1': s.mean_n_k1,
            'N_K2': s.mean_n_k2, 'exit_fraction': s.exit_fraction
        } for s, m in zip(self.levels, self.M)]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['levels'] = [s.to_dict() for s in self.levels]
        data['schema_version'] = PLAN_SCHEMA_VERSION
        data['budget'] = self.budget()
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LevelPlan':
        data = dict(data)
        version = data.pop('schema_version', PLAN_SCHEMA_VERSION)
        if version != PLAN_SCHEMA_VERSION:
            raise UsageError(f"Versión de plan no soportada: {version}")
        data.pop('budget', None)
        data['levels'] = [LevelStats.from_dict(s) for s in data['levels']]
        return cls(**data)


class HierarchyCalibrator:
    """
    Fase II: elige Δt₀, δℓ, L y Mℓ.

    Se profundiza mientras el trabajo estimado ΣψℓMℓ disminuya o el sesgo
    relativo no deje presupuesto; se para en el primer aumento del trabajo.
    """

    def __init__(self, net: ReactionNetwork, machine: MachineConstants, tol: float,
                 settings: Optional[SimulationSettings] = None, seed: int = 0,
                 workers: Optional[int] = None, mesh0: Optional[Sequence[float]] = None,
                 purpose: str = 'calibration'):
        self.net = net
        self.machine = machine
        self.settings = settings or SimulationSettings()
        self.tol = tol
        self.seed = int(seed)
        self.workers = workers if workers is not None else self.settings.workers
        self.purpose = purpose
        self._next_id: Dict[int, int] = {}

        if not 0.0 < tol < 1.0:
            raise UsageError(f"TOL debe estar en (0,1): {tol}")
        if self.bias_budget <= 0:
            raise UsageError(
                f"TOL={tol} no deja presupuesto de sesgo con θ ≥ {self.settings.theta_min}"
            )
        self.mesh0 = np.asarray(mesh0, dtype=float) if mesh0 is not None else self.level0_mesh()
        check_mesh(self.mesh0, net.T)

    @property
    def bias_budget(self) -> float:
        """Máximo sesgo relativo aceptable: TOL(1 − θ_min) − TOL²"""
        return self.tol * (1.0 - self.settings.theta_min) - self.tol ** 2

    def level0_mesh(self) -> np.ndarray:
        s = self.settings
        dt0 = s.dt0 or stable_coarse_step(self.net, self.net.T, s.min_cells0, s.mean_field_step, s.blowup_cap)
        logger.info(f"📐 Malla de nivel 0: Δt₀={dt0:.6g}")
        return uniform_mesh(self.net.T, dt0)

    def mesh(self, level: int) -> np.ndarray:
        return level_mesh(self.mesh0, level, self.settings.refine_factor)

    def level_stats(self, level: int, delta: float, delta_coarse: Optional[float] = None) -> LevelStats:
        """Estadísticas del nivel con trayectorias nuevas (índices que no se repiten)"""
        start = self._next_id.get(level, 0)
        if level == 0:
            stats = level_stats_single(self.net, self.mesh(0), delta, self.machine, self.settings,
                                       self.seed, self.purpose, self.workers, start)
        else:
            stats = level_stats_coupled(self.net, self.mesh(level - 1), self.mesh(level), delta_coarse,
                                        delta, level, self.machine, self.settings, self.seed,
                                        self.purpose, self.workers, start)
        self._next_id[level] = start + stats.samples
        return stats

    def refined_level(self, level: int, delta: float, delta_coarse: Optional[float] = None) -> LevelStats:
        """Repite el nivel dividiendo δ por c hasta que pase la regla de δ"""
        while True:
            stats = self.level_stats(level, delta, delta_coarse)
            if refine_delta_check(stats.vhat, stats.var_g, delta, stats.mean_n_tl, self.settings.delta_floor):
                return stats
            delta /= self.settings.delta_refine
            logger.info(f"🔧 Nivel {level}: δ refinado a {delta:.3g} (N_TL={stats.mean_n_tl:.3g})")

    def assess(self, levels: Sequence[LevelStats]) -> Assessment:
        """Asignación KKT en unidades relativas a ĝ"""
        mean_g = telescoped_mean(levels)
        scale = abs(mean_g) if mean_g != 0 else 1.0
        bias = abs(levels[-1].mean_e_i) / scale
        if bias >= self.bias_budget:
            return Assessment(False, math.inf, None, bias, mean_g)
        psi = np.maximum([s.psi for s in levels], MIN_PSI)
        v = np.array([s.variance for s in levels]) / scale ** 2
        try:
            M = kkt_allocate(psi, v, self.tol, bias, self.settings.confidence)
        except InfeasibleToleranceError:
            return Assessment(False, math.inf, None, bias, mean_g)
        return Assessment(True, float(np.sum(psi * M)), M, bias, mean_g)

    def finalize_last_delta(self, levels: List[LevelStats]) -> List[LevelStats]:
        """Reduce δ_L hasta |ĝ|·δ_L·N_TL,L < TOL², re-simulando el último nivel"""
        levels = list(levels)
        last = levels[-1]
        mean_g = telescoped_mean(levels)
        while abs(mean_g) * last.delta * last.mean_n_tl >= self.tol ** 2:
            delta = last_level_delta(mean_g, last.mean_n_tl, self.tol, self.settings.delta_refine, last.delta)
            if delta < self.settings.delta_floor:
                raise DeltaUnderflowError(f"δ_L={delta:.3g} por debajo del mínimo {self.settings.delta_floor:.3g}")
            logger.info(f"🔧 Último nivel {last.level}: δ_L={delta:.3g} para acotar el error de salida")
            last = self.level_stats(last.level, delta, last.delta_coarse)
            levels[-1] = last
            mean_g = telescoped_mean(levels)
        return levels

    def deepen(self, levels: List[LevelStats]) -> List[LevelStats]:
        """Agrega el nivel L+1 empezando con δ_{L+1} = δ_L"""
        if len(levels) >= self.settings.max_levels:
            plan = self.build_plan(levels, self.assess(levels), partial=True)
            raise ConvergenceError(f"Se alcanzó el máximo de {self.settings.max_levels} niveles", plan)
        last = levels[-1]
        stats = self.refined_level(last.level + 1, last.delta, last.delta)
        logger.info(f"➕ Nivel {stats.level}: Δt={stats.dt:.4g} δ={stats.delta:.3g} "
                    f"V̂={stats.variance:.3g} ψ={stats.psi:.3g} N_TL={stats.mean_n_tl:.3g}")
        return list(levels) + [stats]

    def calibrate(self) -> LevelPlan:
        started = time.perf_counter()
        s = self.settings
        levels = [self.refined_level(0, s.delta0)]
        current = self.assess(levels)
        logger.info(f"📊 Nivel 0: δ₀={levels[0].delta:.3g} ψ={levels[0].psi:.3g} "
                    f"N_TL={levels[0].mean_n_tl:.3g} W={current.work:.3g}")

        while not (levels[-1].mean_n_tl == 0 and current.feasible):
            candidate = self.deepen(levels)
            assessment = self.assess(candidate)
            if current.feasible and assessment.feasible and assessment.work > current.work:
                logger.info(f"📈 El trabajo aumenta en el nivel {candidate[-1].level}; L*={levels[-1].level}")
                break
            decrease = ((current.work - assessment.work) / current.work
                        if current.feasible and assessment.feasible else math.inf)
            levels, current = candidate, assessment
            if decrease < s.small_decrease:
                logger.info(f"📉 Disminución del trabajo de {decrease:.1%}; L*={levels[-1].level}")
                break

        levels = self.finalize_last_delta(levels)
        current = self.assess(levels)
        while not current.feasible:
            levels = self.finalize_last_delta(self.deepen(levels))
            current = self.assess(levels)

        plan = self.build_plan(levels, current)
        plan.runtime = time.perf_counter() - started
        logger.info(f"✅ Calibración: L*={plan.L} M={plan.M} W_ML={plan.work_ml:.3g}s W_SSA={plan.work_ssa:.3g}s")
        return plan

    def build_plan(self, levels: Sequence[LevelStats], assessment: Assessment, partial: bool = False) -> LevelPlan:
        s = self.settings
        mean_g = telescoped_mean(levels)
        var_g = telescoped_variance(levels)
        scale = abs(mean_g) if mean_g != 0 else 1.0
        M_cont = assessment.M if assessment.M is not None else np.ones(len(levels))
        psi = np.maximum([lv.psi for lv in levels], MIN_PSI)
        M_ssa = s.confidence ** 2 * max(var_g, 0.0) / (self.tol * scale) ** 2
        return LevelPlan(
            levels=list(levels),
            M=[int(m) for m in integer_samples(M_cont)],
            M_continuous=[float(m) for m in M_cont],
            tol=self.tol,
            confidence=s.confidence,
            refine_factor=s.refine_factor,
            delta_refine=s.delta_refine,
            mesh0=[float(t) for t in self.mesh0],
            mean_g=mean_g,
            var_g=var_g,
            e_i=levels[-1].mean_e_i,
            work_ml=float(np.sum(psi * M_cont)),
            work_ssa=self.machine.c_star * M_ssa * levels[-1].mean_n_ssa,
            seed=self.seed,
            model_hash=model_hash(self.net),
            partial=partial
        )


def calibrate(net: ReactionNetwork, tol: float, machine: MachineConstants,
              settings: Optional[SimulationSettings] = None, seed: int = 0,
              workers: Optional[int] = None, mesh0: Optional[Sequence[float]] = None) -> LevelPlan:
    """Fase II completa para una tolerancia relativa TOL ∈ (0,1)"""
    return HierarchyCalibrator(net, machine, tol, settings, seed, workers, mesh0).calibrate()


def deepen_plan(net: ReactionNetwork, plan: LevelPlan, machine: MachineConstants,
                settings: Optional[SimulationSettings] = None, workers: Optional[int] = None) -> LevelPlan:
    """Agrega un nivel a un plan existente y vuelve a asignar Mℓ"""
    calibrator = HierarchyCalibrator(net, machine, plan.tol, settings, plan.seed, workers,
                                     plan.mesh0, purpose='deepening')
    levels = calibrator.finalize_last_delta(calibrator.deepen(plan.levels))
    assessment = calibrator.assess(levels)
    while not assessment.feasible:
        levels = calibrator.finalize_last_delta(calibrator.deepen(levels))
        assessment = calibrator.assess(levels)
    deeper = calibrator.build_plan(levels, assessment)
    logger.info(f"➕ Plan profundizado a L={deeper.L}")
    return deeper


# --- Fase III ---------------------------------------------------------------

@dataclass
class EstimateReport:
    """Resultado de la Fase III con el desglose del error"""

    estimate: float
    tol: float
    confidence: float
    half_width: float
    bias: float
    exit_bound: float
    levels: List[Dict[str, Any]]
    runtime: float
    seed: int
    model_hash: str = ''
    rounds: int = 0
    predicted_work: float = 0.0
    work_ssa: float = 0.0
    L: int = 0

    @property
    def relative_half_width(self) -> float:
        return self.half_width / abs(self.estimate) if self.estimate else math.inf

    @property
    def relative_bias(self) -> float:
        return abs(self.bias) / abs(self.estimate) if self.estimate else math.inf

    @property
    def work_ratio(self) -> float:
        return self.predicted_work / self.work_ssa if self.work_ssa > 0 else math.inf

    def budget(self) -> Dict[str, float]:
        return {
            'exit_bound': self.exit_bound,
            'bias': self.relative_bias,
            'statistical': self.relative_half_width,
            'total': self.exit_bound + self.relative_bias + self.relative_half_width,
            'tol': self.tol
        }

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['budget'] = self.budget()
        data['work_ratio'] = self.work_ratio
        return data


@dataclass
class LevelTally:
    """Muestras acumuladas de un nivel durante la Fase III"""

    summaries: List[PathSummary] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.summaries)

    def inside(self) -> List[PathSummary]:
        return [s for s in self.summaries if s.in_lattice]

    def mean_diff(self) -> float:
        return float(np.mean([s.diff for s in self.summaries])) if self.summaries else 0.0

    def exit_fraction(self) -> float:
        return 1.0 - len(self.inside()) / self.count if self.count else 0.0

    def current(self, fallback: LevelStats) -> Dict[str, float]:
        """ψ̂ℓ, Vℓ y Ê_I con lo acumulado; con menos de 2 muestras válidas se usa la calibración"""
        inside = self.inside()
        if len(inside) < 2:
            return {'psi': fallback.psi, 'variance': fallback.variance, 'e_i': fallback.mean_e_i,
                    'n_tl': fallback.mean_n_tl, 'n_k1': fallback.mean_n_k1, 'n_k2': fallback.mean_n_k2}
        if fallback.level == 0:
            variance = float(np.var([s.diff for s in self.summaries], ddof=1))
        else:
            variance = vhat_estimator([s.s_e for s in inside], [s.s_v for s in inside])
        return {
            'psi': float(np.mean([s.cost for s in inside])),
            'variance': variance,
            'e_i': float(np.mean([s.e_i for s in inside])),
            'n_tl': float(np.mean([s.n_tl for s in inside])),
            'n_k1': float(np.mean([s.n_k1 for s in inside])),
            'n_k2': float(np.mean([s.n_k2 for s in inside]))
        }


def _estimation_task(net: ReactionNetwork, plan: LevelPlan, level: int, machine: MachineConstants,
                     seed: int, c_threshold: float) -> LevelTask:
    stats = plan.levels[level]
    if level == 0:
        return LevelTask(net, 0, plan.mesh(0), stats.delta, machine, seed, 'estimation',
                         c_threshold=c_threshold)
    return LevelTask(net, level, plan.mesh(level), stats.delta, machine, seed, 'estimation',
                     mesh_coarse=plan.mesh(level - 1), delta_coarse=plan.levels[level - 1].delta,
                     c_threshold=c_threshold)


def estimate(net: ReactionNetwork, plan: LevelPlan, machine: MachineConstants,
             settings: Optional[SimulationSettings] = None, seed: Optional[int] = None,
             workers: Optional[int] = None) -> EstimateReport:
    """
    Fase III: en cada ronda se simula la mitad de lo que falta en cada nivel,
    se actualizan (ψ̂ℓ, Vℓ, Ê_I) y se resuelve de nuevo la asignación. Termina
    cuando el trabajo previsto cambia menos de `convergence` y todos los niveles
    alcanzaron su Mℓ.
    """
    settings = settings or SimulationSettings()
    workers = workers if workers is not None else settings.workers
    if plan.model_hash and plan.model_hash != model_hash(net):
        raise PlanMismatchError(f"El plan corresponde a otro modelo ({plan.model_hash} ≠ {model_hash(net)})")
    seed = plan.seed if seed is None else int(seed)
    started = time.perf_counter()

    tallies = [LevelTally() for _ in plan.levels]
    target = list(plan.M)
    previous_work = plan.work_ml
    rounds = 0

    while rounds < settings.max_rounds:
        rounds += 1
        for level, tally in enumerate(tallies):
            missing = target[level] - tally.count
            if missing <= 0:
                continue
            task = _estimation_task(net, plan, level, machine, seed, settings.threshold_c)
            tally.summaries.extend(run_paths(task, tally.count, math.ceil(missing / 2), workers))

        current = [tally.current(stats) for tally, stats in zip(tallies, plan.levels)]
        mean_g = sum(tally.mean_diff() for tally in tallies)
        scale = abs(mean_g) if mean_g != 0 else 1.0
        psi = np.maximum([c['psi'] for c in current], MIN_PSI)
        v = np.array([c['variance'] for c in current]) / scale ** 2
        bias = abs(current[-1]['e_i']) / scale
        try:
            M = kkt_allocate(psi, v, plan.tol, bias, plan.confidence)
        except InfeasibleToleranceError:
            logger.warning(f"⚠️ Ronda {rounds}: sesgo relativo {bias:.3g} fuera del presupuesto; se agrega un nivel")
            plan = deepen_plan(net, plan, machine, settings, workers)
            tallies.append(LevelTally())
            target = list(plan.M)
            previous_work = plan.work_ml
            continue

        target = [int(m) for m in integer_samples(M)]
        work = float(np.sum(psi * M))
        change = abs(work - previous_work) / previous_work if previous_work > 0 else math.inf
        previous_work = work
        logger.debug(f"Ronda {rounds}: M={target} realizadas={[t.count for t in tallies]} W={work:.3g}")
        if change < settings.convergence and all(t.count >= m for t, m in zip(tallies, target)):
            break
    else:
        logger.warning(f"⚠️ Fase III detenida tras {settings.max_rounds} rondas")

    current = [tally.current(stats) for tally, stats in zip(tallies, plan.levels)]
    value = float(sum(tally.mean_diff() for tally in tallies))
    counts = np.array([max(t.count, 1) for t in tallies])
    variances = np.array([c['variance'] for c in current])
    half_width = plan.confidence * math.sqrt(float(np.sum(variances / counts)))

    rows = []
    for level, (tally, stats, c) in enumerate(zip(tallies, plan.levels, current)):
        rows.append({
            'level': level, 'dt': stats.dt, 'delta': stats.delta, 'M': tally.count,
            'psi': c['psi'], 'vhat': c['variance'], 'EI': c['e_i'], 'N_TL': c['n_tl'],
            'N_K1': c['n_k1'], 'N_K2': c['n_k2'], 'exit_fraction': tally.exit_fraction()
        })

    report = EstimateReport(
        estimate=value,
        tol=plan.tol,
        confidence=plan.confidence,
        half_width=half_width,
        bias=current[-1]['e_i'],
        exit_bound=plan.tol ** 2,
        levels=rows,
        runtime=time.perf_counter() - started,
        seed=seed,
        model_hash=plan.model_hash,
        rounds=rounds,
        predicted_work=previous_work,
        work_ssa=plan.work_ssa,
        L=len(tallies) - 1
    )
    logger.info(f"✅ Estimación: {report.estimate:.6g} ± {report.half_width:.3g} "
                f"(L={report.L}, {rounds} rondas, {report.runtime:.2f}s)")
    return report
