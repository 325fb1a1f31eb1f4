# modules/config_manager.py
"""
Gestor centralizado de configuraciones del estimador multinivel híbrido.
"""

import os
import copy
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional
from dotenv import load_dotenv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimulationSettings:
    """Parámetros numéricos de calibración y estimación"""

    delta0: float = 0.01
    delta_refine: float = 10.0
    refine_factor: int = 2
    cv_target: float = 0.05
    initial_batch: int = 100
    max_batch: int = 65536
    threshold_c: float = 10.0
    confidence: float = 1.96
    max_levels: int = 25
    theta_min: float = 0.5
    small_decrease: float = 0.05
    min_in_lattice_fraction: float = 0.5
    delta_floor: float = 1e-16
    dt0: Optional[float] = None
    min_cells0: int = 4
    blowup_cap: float = 1e12
    mean_field_step: float = 1e-3
    convergence: float = 0.05
    max_rounds: int = 20
    workers: int = 1


class ConfigManager:
    """Gestor centralizado de configuraciones"""

    # Configuraciones por defecto
    DEFAULT_CONFIG = {
        'simulation': {
            'delta0': 0.01,
            'delta_refine': 10.0,
            'refine_factor': 2,
            'cv_target': 0.05,
            'initial_batch': 100,
            'max_batch': 65536,
            'threshold_c': 10.0,
            'confidence': 1.96,
            'max_levels': 25,
            'theta_min': 0.5,
            'small_decrease': 0.05,
            'min_in_lattice_fraction': 0.5,
            'delta_floor': 1e-16,
            'dt0': None,
            'min_cells0': 4,
            'blowup_cap': 1e12,
            'mean_field_step': 1e-3
        },
        'estimation': {
            'convergence': 0.05,
            'max_rounds': 20
        },
        'machine': {
            'profile': 'machine_profile.json',
            'repetitions': 10000,
            'retries': 3,
            'min_ticks': 10,
            'poisson_grid': [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
        },
        'parallel': {
            'workers': 1
        },
        'logging': {
            'level': 'INFO'
        },
        'paths': {
            'output_dir': 'artifacts',
            'logs_dir': 'logs'
        },
        'seed': None
    }

    def __init__(self, config_file: str = 'config.json'):
        """Inicializa el gestor de configuraciones"""
        self.config = copy.deepcopy(self.DEFAULT_CONFIG)
        self.config_file = Path(config_file)
        self._loaded_from_env = False
        self._loaded_from_file = False

        self._load_all_configs()
        self._create_directories()

        logger.debug("✅ ConfigManager inicializado")

    def _load_all_configs(self):
        """Carga configuraciones: archivo primero, entorno encima"""
        self._load_from_file()
        self._load_from_env()

    def _load_from_env(self):
        """Carga configuraciones desde variables de entorno"""
        try:
            load_dotenv()

            if workers := os.getenv('HYBRID_MLMC_WORKERS'):
                self.config['parallel']['workers'] = int(workers)
            if level := os.getenv('HYBRID_MLMC_LOG_LEVEL'):
                self.config['logging']['level'] = level.upper()
            if profile := os.getenv('HYBRID_MLMC_PROFILE'):
                self.config['machine']['profile'] = profile
            if output_dir := os.getenv('HYBRID_MLMC_OUTPUT_DIR'):
                self.config['paths']['output_dir'] = output_dir
            if seed := os.getenv('HYBRID_MLMC_SEED'):
                self.config['seed'] = int(seed)

            self._loaded_from_env = True
            logger.debug("Configuraciones cargadas desde variables de entorno")

        except ValueError as e:
            logger.warning(f"Variable de entorno con valor inválido: {e}")

    def _load_from_file(self):
        """Carga configuraciones desde archivo JSON"""
        if not self.config_file.exists():
            return
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                file_config = json.load(f)
            self._merge_config(file_config)
            self._loaded_from_file = True
            logger.debug(f"Configuraciones cargadas desde {self.config_file}")
        except json.JSONDecodeError as e:
            logger.error(f"Error de formato en archivo de configuración: {e}")
            self._backup_corrupt_config()

    def _merge_config(self, new_config: Dict):
        """Fusión recursiva de diccionarios de configuración"""
        def merge_dict(target, source):
            for key, value in source.items():
                if key in target and isinstance(target[key], dict) and isinstance(value, dict):
                    merge_dict(target[key], value)
                else:
                    target[key] = value

        merge_dict(self.config, new_config)

    def _backup_corrupt_config(self):
        """Respalda un archivo de configuración corrupto"""
        try:
            backup_name = f"{self.config_file}.corrupt.{int(os.path.getmtime(self.config_file))}"
            self.config_file.rename(backup_name)
            logger.warning(f"Archivo de configuración corrupto respaldado como {backup_name}")
        except OSError as e:
            logger.error(f"No se pudo respaldar archivo corrupto: {e}")

    def _create_directories(self):
        """Crea directorios necesarios si no existen"""
        for directory in (self.get('paths.output_dir'), self.get('paths.logs_dir')):
            if directory:
                try:
                    Path(directory).mkdir(parents=True, exist_ok=True)
                except OSError as e:
                    logger.error(f"Error al crear directorio {directory}: {e}")

    def get(self, key_path: str, default: Any = None) -> Any:
        """
        Obtiene configuración por ruta (ej: 'simulation.delta0')

        Args:
            key_path: Ruta con puntos
            default: Valor si no existe

        Returns:
            Valor de la configuración o default
        """
        value = self.config
        for key in key_path.split('.'):
            if not isinstance(value, dict) or key not in value:
                return default
            value = value[key]
        return default if value is None else value

    def set(self, key_path: str, value: Any, persist: bool = False):
        """
        Establece una configuración

        Args:
            key_path: Ruta con puntos
            value: Valor a establecer
            persist: Si es True, guarda en archivo
        """
        keys = key_path.split('.')
        config_level = self.config
        for key in keys[:-1]:
            if key not in config_level or not isinstance(config_level[key], dict):
                config_level[key] = {}
            config_level = config_level[key]
        config_level[keys[-1]] = value

        if persist:
            self.save()

    def save(self) -> bool:
        """Guarda la configuración actual en archivo"""
        try:
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=2, ensure_ascii=False)
            logger.info(f"Configuración guardada en {self.config_file}")
            return True
        except OSError as e:
            logger.error(f"Error al guardar configuración: {e}")
            return False

    def validate(self) -> Dict[str, list]:
        """
        Valida dominios numéricos

        Returns:
            Dict con errores y advertencias
        """
        errors = []
        warnings = []
        sim = self.config['simulation']

        if not 0 < sim['delta0'] < 1:
            errors.append(f"simulation.delta0 debe estar en (0,1): {sim['delta0']}")
        if sim['delta_refine'] <= 1:
            errors.append(f"simulation.delta_refine debe ser > 1: {sim['delta_refine']}")
        if sim['cv_target'] <= 0:
            errors.append(f"simulation.cv_target debe ser positivo: {sim['cv_target']}")
        if sim['confidence'] <= 0:
            errors.append(f"simulation.confidence debe ser positivo: {sim['confidence']}")
        if int(sim['refine_factor']) < 2:
            errors.append(f"simulation.refine_factor debe ser ≥ 2: {sim['refine_factor']}")
        elif int(sim['refine_factor']) != 2:
            warnings.append("El estimador de varianza dual supone refinamiento por mitades (refine_factor = 2)")
        if int(sim['max_levels']) < 1:
            errors.append(f"simulation.max_levels debe ser ≥ 1: {sim['max_levels']}")
        if not 0 < sim['theta_min'] < 1:
            errors.append(f"simulation.theta_min debe estar en (0,1): {sim['theta_min']}")
        if int(self.config['parallel']['workers']) < 1:
            errors.append("parallel.workers debe ser ≥ 1")

        return {
            'errors': errors,
            'warnings': warnings,
            'is_valid': len(errors) == 0
        }

    def simulation_settings(self) -> SimulationSettings:
        """Instantánea tipada de las secciones de simulación y estimación"""
        sim = self.config['simulation']
        est = self.config['estimation']
        return SimulationSettings(
            delta0=float(sim['delta0']),
            delta_refine=float(sim['delta_refine']),
            refine_factor=int(sim['refine_factor']),
            cv_target=float(sim['cv_target']),
            initial_batch=int(sim['initial_batch']),
            max_batch=int(sim['max_batch']),
            threshold_c=float(sim['threshold_c']),
            confidence=float(sim['confidence']),
            max_levels=int(sim['max_levels']),
            theta_min=float(sim['theta_min']),
            small_decrease=float(sim['small_decrease']),
            min_in_lattice_fraction=float(sim['min_in_lattice_fraction']),
            delta_floor=float(sim['delta_floor']),
            dt0=None if sim['dt0'] is None else float(sim['dt0']),
            min_cells0=int(sim['min_cells0']),
            blowup_cap=float(sim['blowup_cap']),
            mean_field_step=float(sim['mean_field_step']),
            convergence=float(est['convergence']),
            max_rounds=int(est['max_rounds']),
            workers=int(self.config['parallel']['workers'])
        )


# Singleton global
_config_instance = None


def get_config() -> ConfigManager:
    """Obtiene la instancia singleton de ConfigManager"""
    global _config_instance
    if _config_instance is None:
        _config_instance = ConfigManager()
    return _config_instance
