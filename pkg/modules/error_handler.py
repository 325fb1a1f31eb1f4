# modules/error_handler.py
"""
Jerarquía de errores y manejo centralizado para el estimador multinivel híbrido.
"""

import traceback
import logging
import uuid
from datetime import datetime
from typing import Any, Dict, List, Optional
import functools
import pandas as pd

logger = logging.getLogger(__name__)


class HybridMLMCError(Exception):
    """Error base del dominio"""

    category = 'unknown'
    exit_code = 1


class ModelDefinitionError(HybridMLMCError):
    """Modelo de reacciones inválido (propensidad negativa, ν nulo, observable desconocido)"""

    category = 'model'
    exit_code = 3


class ModelParseError(ModelDefinitionError):
    """Archivo de modelo mal formado; conserva línea y columna"""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = f" (línea {line}, columna {column})" if line is not None else ""
        super().__init__(f"{message}{where}")


class PlanMismatchError(ModelDefinitionError):
    """El plan fue calibrado para otro modelo"""


class MeanFieldBlowUpError(ModelDefinitionError):
    """La solución de campo medio supera el tope configurado"""


class CalibrationError(HybridMLMCError):
    """Fallo en la calibración (régimen dominado por salidas, reloj, etc.)"""

    category = 'calibration'
    exit_code = 4


class DeltaUnderflowError(CalibrationError):
    """δ cayó por debajo del piso numérico"""


class InsufficientSamplesError(CalibrationError):
    """Muestras insuficientes para estimar una varianza"""


class ConvergenceError(CalibrationError):
    """La jerarquía no convergió antes del máximo de niveles"""

    def __init__(self, message: str, partial_plan: Any = None):
        self.partial_plan = partial_plan
        super().__init__(message)


class InfeasibleToleranceError(HybridMLMCError):
    """El sesgo estimado agota el presupuesto; hay que profundizar la jerarquía"""

    category = 'infeasible'
    exit_code = 5


class UsageError(HybridMLMCError):
    """Argumentos o artefactos de entrada inválidos"""

    category = 'usage'
    exit_code = 2


class ErrorHandler:
    """Manejo centralizado de errores"""

    # Categorías de errores
    ERROR_CATEGORIES = {
        'model': {
            'user_message': "❌ El modelo de reacciones es inválido. Revise el archivo del modelo.",
            'severity': 'high'
        },
        'calibration': {
            'user_message': "⚠️ La calibración no pudo completarse. Pruebe un δ inicial menor o más muestras.",
            'severity': 'high'
        },
        'infeasible': {
            'user_message': "📉 La tolerancia no es alcanzable con la jerarquía actual.",
            'severity': 'medium'
        },
        'usage': {
            'user_message': "📝 Argumentos inválidos. Revise los valores y formatos.",
            'severity': 'low'
        },
        'file': {
            'user_message': "📄 Error al procesar archivo. Verifique la ruta y los permisos.",
            'severity': 'medium'
        }
    }

    EXIT_CODES = {
        'model': 3,
        'calibration': 4,
        'infeasible': 5,
        'usage': 2,
        'file': 2
    }

    def __init__(self):
        self.error_log: List[Dict] = []
        self.max_log_size = 1000

    def handle(self, error: Exception, context: Optional[Dict] = None,
               user_context: Optional[str] = None) -> str:
        """
        Maneja un error de manera centralizada

        Args:
            error: Excepción capturada
            context: Contexto adicional para depuración
            user_context: Mensaje alternativo para el usuario

        Returns:
            Mensaje para el usuario
        """
        category = self._categorize_error(error)
        category_info = self.ERROR_CATEGORIES.get(category, {})

        error_info = {
            'id': str(uuid.uuid4())[:8],
            'timestamp': datetime.now().isoformat(),
            'type': type(error).__name__,
            'message': str(error),
            'category': category,
            'severity': category_info.get('severity', 'unknown'),
            'exit_code': self.exit_code_for(error),
            'context': context or {},
            'traceback': traceback.format_exc(),
        }

        self._log_error(error_info)

        if user_context:
            return user_context
        message = category_info.get('user_message', "⚠️ Ocurrió un error inesperado.")
        return f"{message} ({error_info['message']})"

    def _categorize_error(self, error: Exception) -> str:
        """Categoriza el error por su tipo"""
        if isinstance(error, HybridMLMCError):
            return error.category
        if isinstance(error, (FileNotFoundError, PermissionError, IsADirectoryError)):
            return 'file'
        return 'unknown'

    def exit_code_for(self, error: Exception) -> int:
        """Código de salida del proceso asociado al error"""
        if isinstance(error, HybridMLMCError):
            return error.exit_code
        return self.EXIT_CODES.get(self._categorize_error(error), 1)

    def _log_error(self, error_info: Dict):
        """Log estructurado del error"""
        self.error_log.append(error_info)
        if len(self.error_log) > self.max_log_size:
            self.error_log = self.error_log[-self.max_log_size:]

        log_msg = f"Error {error_info['id']} [{error_info['category']}]: {error_info['type']} - {error_info['message']}"

        if error_info['severity'] in ('high', 'unknown'):
            logger.error(log_msg)
            if error_info.get('context'):
                logger.error(f"Contexto: {error_info['context']}")
        elif error_info['severity'] == 'medium':
            logger.warning(log_msg)
        else:
            logger.info(log_msg)

        logger.debug(f"Traceback completo: {error_info['traceback']}")

    def get_error_report(self, category: Optional[str] = None) -> pd.DataFrame:
        """Reporte de errores registrados como DataFrame"""
        errors = self.error_log
        if category:
            errors = [e for e in errors if e['category'] == category]
        if not errors:
            return pd.DataFrame()

        df = pd.DataFrame(errors).drop(columns=['traceback'])
        df['timestamp'] = pd.to_datetime(df['timestamp'])
        return df.sort_values('timestamp', ascending=False)

    def export_to_csv(self, filepath: str) -> bool:
        """Exporta errores a CSV"""
        df = self.get_error_report()
        if df.empty:
            return False
        df.to_csv(filepath, index=False, encoding='utf-8')
        logger.info(f"Errores exportados a {filepath}")
        return True


# Singleton global
_error_handler_instance = None


def get_error_handler() -> ErrorHandler:
    """Obtiene la instancia singleton de ErrorHandler"""
    global _error_handler_instance
    if _error_handler_instance is None:
        _error_handler_instance = ErrorHandler()
    return _error_handler_instance


def error_handler_decorator(user_context: Optional[str] = None):
    """
    Decorador para comandos de la CLI: convierte errores del dominio en código de salida

    Ejemplo:
        @error_handler_decorator("Error calibrando la jerarquía")
        def cmd_calibrate(args) -> int:
            ...
    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except HybridMLMCError as e:
                handler = get_error_handler()
                message = handler.handle(e, context={'command': func.__name__},
                                         user_context=user_context)
                logger.error(message)
                return handler.exit_code_for(e)
            except Exception as e:
                get_error_handler().handle(e, context={'command': func.__name__})
                raise
        return wrapper
    return decorator
