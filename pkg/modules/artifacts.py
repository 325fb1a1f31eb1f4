# modules/artifacts.py
"""
Persistencia versionada de planes, reportes y tablas de diagnóstico.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from modules.error_handler import UsageError
from modules.workmodel import host_fingerprint

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SUPPORTED_VERSIONS = {1}

LEVEL_COLUMNS = ['level', 'dt', 'delta', 'M', 'psi', 'vhat', 'EI', 'N_TL', 'N_K1', 'N_K2', 'exit_fraction']


def _plain(value: Any) -> Any:
    """Convierte escalares y arreglos de numpy a tipos JSON"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def _create_metadata(kind: str, seed: Optional[int], model_hash: str) -> Dict[str, Any]:
    """Metadata común de todos los artefactos"""
    return {
        'schema_version': SCHEMA_VERSION,
        'kind': kind,
        'created': datetime.now().isoformat(),
        'seed': seed,
        'model_hash': model_hash,
        'host': host_fingerprint()
    }


def write_json(payload: Dict[str, Any], path: Union[str, Path], kind: str,
               seed: Optional[int] = None, model_hash: str = '') -> Path:
    """Escribe `payload` bajo la clave 'data' junto con su metadata"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {'metadata': _create_metadata(kind, seed, model_hash), 'data': _plain(payload)}
    path.write_text(json.dumps(document, indent=2, ensure_ascii=False), encoding='utf-8')
    logger.info(f"💾 {kind} guardado en {path}")
    return path


def read_json(path: Union[str, Path], kind: str) -> Dict[str, Any]:
    """Lee un artefacto y verifica tipo y versión"""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"No existe el archivo {path}")
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise UsageError(f"{path} no es JSON válido: {e.msg} (línea {e.lineno})") from None

    metadata = document.get('metadata', {})
    if metadata.get('kind') != kind:
        raise UsageError(f"{path} contiene '{metadata.get('kind')}', se esperaba '{kind}'")
    if metadata.get('schema_version') not in SUPPORTED_VERSIONS:
        raise UsageError(f"Versión de esquema no soportada en {path}: {metadata.get('schema_version')}")
    return document['data']


def read_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding='utf-8')).get('metadata', {})
    except (OSError, json.JSONDecodeError):
        return {}


def write_levels_csv(plan_or_report: Any, path: Union[str, Path]) -> Path:
    """Tabla por nivel de un LevelPlan (level_rows) o de un EstimateReport (levels)"""
    rows = plan_or_report.level_rows() if hasattr(plan_or_report, 'level_rows') else plan_or_report.levels
    df = pd.DataFrame(rows, columns=LEVEL_COLUMNS)
    return _write_frame(df, path)


def write_table_csv(rows: Union[Sequence[Dict[str, Any]], pd.DataFrame], path: Union[str, Path],
                    columns: Optional[List[str]] = None) -> Path:
    """Tablas de diagnóstico: conteos por tipo de paso, datos QQ, barrido de TOL"""
    df = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(list(rows), columns=columns)
    return _write_frame(df, path)


def _write_frame(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    logger.info(f"💾 Tabla de {len(df)} filas guardada en {path}")
    return path
