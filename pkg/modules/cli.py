# modules/cli.py
"""
Interfaz de línea de comandos.

Subcomandos:
  calibrate-machine  Fase I: constantes de costo de esta máquina
  calibrate          Fase II: jerarquía de niveles para una TOL
  estimate           Fase III: estimación con un plan (o calibrando antes)
  diagnose           conteos por tipo de paso, datos QQ y barrido de TOL
  validate           chequeos estructurales del modelo
"""

import argparse
import dataclasses
import json
import logging
import math
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from scipy import stats

from modules.artifacts import read_json, write_json, write_levels_csv, write_table_csv
from modules.config_manager import ConfigManager, SimulationSettings, get_config
from modules.error_handler import (ConvergenceError, ModelDefinitionError, UsageError, error_handler_decorator,
                                   get_error_handler)
from modules.mlmc import LevelPlan, calibrate, estimate
from modules.network import load_model, model_hash
from modules.workmodel import MachineConstants, calibrate_machine, load_profile, save_profile
from utils.validators import lint_model, simplex_lint, validate_overrides, validate_tolerance

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s [%(levelname)s] [%(name)s] %(message)s"
_logging_configured = False

# bandera de la CLI → campo de SimulationSettings
SETTING_FLAGS = {
    'confidence': 'confidence',
    'refine_factor': 'refine_factor',
    'delta0': 'delta0',
    'cv_target': 'cv_target',
    'threshold_c': 'threshold_c',
    'max_levels': 'max_levels',
    'workers': 'workers',
}


def setup_logging(level: str = 'INFO', logs_dir: Optional[str] = None):
    """Configura el logger raíz una sola vez: consola y archivo rotativo"""
    global _logging_configured
    root = logging.getLogger()
    root.setLevel(level.upper())
    if _logging_configured:
        return
    formatter = logging.Formatter(LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    root.addHandler(console)
    if logs_dir:
        Path(logs_dir).mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(Path(logs_dir) / 'hybrid_mlmc.log',
                                           maxBytes=5 * 1024 * 1024, backupCount=3, encoding='utf-8')
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)
    _logging_configured = True


# --- contexto común -------------------------------------------------------

def _config(args: argparse.Namespace) -> ConfigManager:
    return ConfigManager(args.config) if getattr(args, 'config', None) else get_config()


def _settings(args: argparse.Namespace, config: ConfigManager) -> SimulationSettings:
    """Banderas > entorno > config.json > valores por defecto"""
    validate_overrides(args)
    checked = config.validate()
    for warning in checked['warnings']:
        logger.warning(f"⚠️ Configuración: {warning}")
    if not checked['is_valid']:
        raise UsageError("Configuración inválida: " + "; ".join(checked['errors']))
    overrides = {field: getattr(args, flag) for flag, field in SETTING_FLAGS.items()
                 if getattr(args, flag, None) is not None}
    return dataclasses.replace(config.simulation_settings(), **overrides)


def _seed(args: argparse.Namespace, config: ConfigManager) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(config.get('seed', 0))


def _output_dir(args: argparse.Namespace, config: ConfigManager) -> Path:
    path = Path(args.output_dir or config.get('paths.output_dir', 'artifacts'))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _machine(args: argparse.Namespace, config: ConfigManager) -> MachineConstants:
    return load_profile(Path(args.profile or config.get('machine.profile', 'machine_profile.json')))


def _load_plan(path: str) -> LevelPlan:
    plan = LevelPlan.from_dict(read_json(path, 'plan'))
    logger.info(f"📄 Plan cargado de {path}: L={plan.L} TOL={plan.tol}")
    return plan


def _emit(summary: Dict[str, Any]):
    """Única escritura a stdout: una línea JSON"""
    print(json.dumps(summary, ensure_ascii=False, default=float))


# --- comandos ---------------------------------------------------------------

@error_handler_decorator("Error calibrando la máquina")
def cmd_calibrate_machine(args: argparse.Namespace) -> int:
    config = _config(args)
    net = load_model(args.model)
    grid = config.get('machine.poisson_grid')
    constants = calibrate_machine(
        net,
        repetitions=args.repetitions or int(config.get('machine.repetitions', 10000)),
        retries=int(config.get('machine.retries', 3)),
        min_ticks=int(config.get('machine.min_ticks', 10)),
        seed=_seed(args, config),
        poisson_grid=grid
    )
    path = save_profile(constants, Path(args.profile or config.get('machine.profile')), grid)
    _emit({'command': 'calibrate-machine', 'profile': str(path), 'constants': constants.to_dict()})
    return 0


def _save_plan(plan: LevelPlan, out_dir: Path, name: str) -> Path:
    path = write_json(plan.to_dict(), out_dir / f"{name}.json", 'plan', plan.seed, plan.model_hash)
    write_levels_csv(plan, out_dir / f"{name}_levels.csv")
    return path


@error_handler_decorator("Error calibrando la jerarquía")
def cmd_calibrate(args: argparse.Namespace) -> int:
    config = _config(args)
    tol = validate_tolerance(args.tol)
    settings = _settings(args, config)
    net = load_model(args.model)
    machine = _machine(args, config)
    out_dir = _output_dir(args, config)
    seed = _seed(args, config)

    try:
        plan = calibrate(net, tol, machine, settings, seed)
    except ConvergenceError as e:
        if e.partial_plan is not None:
            _save_plan(e.partial_plan, out_dir, 'plan_partial')
        raise

    path = _save_plan(plan, out_dir, 'plan')
    _emit({'command': 'calibrate', 'plan': str(path), 'L': plan.L, 'M': plan.M,
           'budget': plan.budget(), 'work_ml': plan.work_ml, 'work_ssa': plan.work_ssa})
    return 0


@error_handler_decorator("Error en la estimación")
def cmd_estimate(args: argparse.Namespace) -> int:
    config = _config(args)
    settings = _settings(args, config)
    net = load_model(args.model)
    machine = _machine(args, config)
    out_dir = _output_dir(args, config)
    seed = _seed(args, config)

    if args.plan:
        plan = _load_plan(args.plan)
    else:
        plan = calibrate(net, validate_tolerance(args.tol), machine, settings, seed)
        _save_plan(plan, out_dir, 'plan')

    report = estimate(net, plan, machine, settings, seed=seed)
    path = write_json(report.to_dict(), out_dir / 'report.json', 'report', report.seed, report.model_hash)
    write_levels_csv(report, out_dir / 'report_levels.csv')
    _emit({'command': 'estimate', 'report': str(path), 'estimate': report.estimate,
           'half_width': report.half_width, 'budget': report.budget(), 'runtime': report.runtime})
    return 0


def qq_rows(estimates: List[float], reference: Optional[float] = None,
            scales: Optional[List[float]] = None) -> List[Dict[str, float]]:
    """
    Estimaciones estandarizadas ordenadas frente a cuantiles normales.

    Con `reference` y `scales` se estandariza cada estimación con su propio
    error estándar; si no, con la media y desviación muestrales.
    """
    values = np.asarray(estimates, dtype=float)
    if reference is not None and scales is not None:
        z = (values - reference) / np.asarray(scales, dtype=float)
    else:
        std = values.std(ddof=1) if values.size > 1 else 0.0
        z = (values - values.mean()) / std if std > 0 else np.zeros_like(values)
    z = np.sort(z)
    n = z.size
    theoretical = stats.norm.ppf((np.arange(n) + 0.5) / n)
    return [{'rank': i, 'theoretical': float(t), 'standardized': float(s)}
            for i, (t, s) in enumerate(zip(theoretical, z))]


def depth_fit(tols: List[float], depths: List[int]) -> Dict[str, float]:
    """Mínimos cuadrados de L* contra log(1/TOL)"""
    if len(tols) < 2:
        return {'slope': math.nan, 'intercept': math.nan}
    slope, intercept = np.polyfit(np.log(1.0 / np.asarray(tols, dtype=float)), np.asarray(depths, dtype=float), 1)
    return {'slope': float(slope), 'intercept': float(intercept)}


def runtime_slope(tols: List[float], runtimes: List[float]) -> float:
    """Pendiente log–log del tiempo de estimación contra TOL"""
    if len(tols) < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(tols), np.log(np.maximum(runtimes, 1e-12)), 1)
    return float(slope)


@error_handler_decorator("Error en el diagnóstico")
def cmd_diagnose(args: argparse.Namespace) -> int:
    config = _config(args)
    settings = _settings(args, config)
    net = load_model(args.model)
    machine = _machine(args, config)
    out_dir = _output_dir(args, config)
    seed = _seed(args, config)
    summary: Dict[str, Any] = {'command': 'diagnose'}

    if args.plan:
        plan = _load_plan(args.plan)
    else:
        plan = calibrate(net, validate_tolerance(args.tol), machine, settings, seed)

    repeats = max(args.repeats, 1)
    reports = [estimate(net, plan, machine, settings, seed=seed + r) for r in range(repeats)]
    step_columns = ['level', 'dt', 'delta', 'M', 'N_TL', 'N_K1', 'N_K2', 'exit_fraction']
    steps = [{k: row[k] for k in step_columns} for row in reports[0].levels]
    summary['steps'] = str(write_table_csv(steps, out_dir / 'diagnose_steps.csv', step_columns))

    if args.repeats > 1:
        scales = [r.half_width / r.confidence if r.half_width > 0 else 1.0 for r in reports]
        rows = qq_rows([r.estimate for r in reports], args.reference,
                       scales if args.reference is not None else None)
        summary['qq'] = str(write_table_csv(rows, out_dir / 'diagnose_qq.csv'))
        if args.reference is not None:
            inside = sum(abs(r.estimate - args.reference) <= r.tol * abs(args.reference) for r in reports)
            summary['coverage'] = inside / len(reports)

    if args.sweep:
        base_tol = plan.tol
        rows = []
        for k in range(args.sweep):
            tol = base_tol / 2 ** k
            swept = calibrate(net, tol, machine, settings, seed)
            report = estimate(net, swept, machine, settings, seed=seed)
            rows.append({'tol': tol, 'L': swept.L, 'predicted_work': swept.work_ml,
                         'actual_work': report.runtime, 'work_ssa': swept.work_ssa,
                         'estimate': report.estimate})
            logger.info(f"📊 Barrido TOL={tol:.3g}: L*={swept.L} W_pred={swept.work_ml:.3g}s W_real={report.runtime:.3g}s")
        summary['sweep'] = str(write_table_csv(rows, out_dir / 'diagnose_sweep.csv'))
        summary['depth_fit'] = depth_fit([r['tol'] for r in rows], [r['L'] for r in rows])
        summary['runtime_slope'] = runtime_slope([r['tol'] for r in rows], [r['actual_work'] for r in rows])

    _emit(summary)
    return 0


@error_handler_decorator("Error validando el modelo")
def cmd_validate(args: argparse.Namespace) -> int:
    net = load_model(args.model)
    result = lint_model(net, samples=args.samples)
    for warning in result['warnings']:
        logger.warning(f"⚠️ {warning}")
    summary = {'command': 'validate', 'model_hash': model_hash(net), **result}
    if args.simplex_lint:
        summary['simplex'] = simplex_lint(net)
    _emit(summary)
    if not result['is_valid']:
        raise ModelDefinitionError('; '.join(result['errors']))
    logger.info(f"✅ Modelo '{net.name}' válido")
    return 0


# --- parser -----------------------------------------------------------------

def create_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--model', required=True, help="Archivo JSON del modelo")
    common.add_argument('--config', default=None, help="Archivo de configuración (config.json)")
    common.add_argument('--seed', type=int, default=None, help="Semilla maestra")
    common.add_argument('--log-level', default=None, choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--output-dir', default=None, help="Directorio de artefactos")
    common.add_argument('--profile', default=None, help="Perfil de máquina (JSON)")

    simulation = argparse.ArgumentParser(add_help=False)
    simulation.add_argument('--tol', type=float, default=None, help="Tolerancia relativa en (0,1)")
    simulation.add_argument('--confidence', type=float, default=None, help="C_A, cuantil de confianza")
    simulation.add_argument('--refine-factor', type=int, default=None, help="Factor R de refinamiento de malla")
    simulation.add_argument('--delta0', type=float, default=None, help="δ inicial de salida del retículo")
    simulation.add_argument('--cv-target', type=float, default=None, help="CV objetivo de las estadísticas por nivel")
    simulation.add_argument('--threshold-c', type=float, default=None, help="Umbral del régimen gaussiano")
    simulation.add_argument('--max-levels', type=int, default=None, help="Máximo número de niveles")
    simulation.add_argument('--workers', type=int, default=None, help="Procesos en paralelo")

    parser = argparse.ArgumentParser(
        prog='hybrid-mlmc',
        description="Monte Carlo multinivel con trayectorias híbridas Chernoff tau-leap / MNRM",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('calibrate-machine', parents=[common], help="Fase I")
    p.add_argument('--repetitions', type=int, default=None)
    p.set_defaults(func=cmd_calibrate_machine)

    p = sub.add_parser('calibrate', parents=[common, simulation], help="Fase II")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser('estimate', parents=[common, simulation], help="Fase III")
    p.add_argument('--plan', default=None, help="Plan calibrado; sin él se calibra con --tol")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser('diagnose', parents=[common, simulation], help="Tablas de diagnóstico")
    p.add_argument('--plan', default=None)
    p.add_argument('--repeats', type=int, default=1, help="Estimaciones repetidas para datos QQ")
    p.add_argument('--sweep', type=int, default=0, help="Número de TOL en el barrido (TOL/2^k)")
    p.add_argument('--reference', type=float, default=None, help="Valor exacto para estandarizar")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser('validate', parents=[common], help="Chequeos del modelo")
    p.add_argument('--simplex-lint', action='store_true', help="Busca w ≥ 1 con (w,νⱼ) ≤ 0")
    p.add_argument('--samples', type=int, default=200)
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = create_parser()
    args = parser.parse_args(argv)
    config = _config(args)
    setup_logging(args.log_level or config.get('logging.level', 'INFO'), config.get('paths.logs_dir'))
    logger.debug(f"Comando {args.command} con {vars(args)}")
    code = args.func(args)
    logs_dir = config.get('paths.logs_dir')
    if code != 0 and logs_dir:
        get_error_handler().export_to_csv(str(Path(logs_dir) / 'errors.csv'))
    return code
