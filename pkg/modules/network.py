# modules/network.py
"""
Modelo de red de reacciones: estequiometría, propensidades polinomiales con
recorte en la frontera del retículo, solución de campo medio, archivos de
modelo y mallas temporales.
"""

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules.error_handler import MeanFieldBlowUpError, ModelDefinitionError, ModelParseError

logger = logging.getLogger(__name__)

EMPTY_SIDE = {'', '0', '∅', 'null', 'None'}
_TERM_RE = re.compile(r'^\s*(\d*)\s*\*?\s*([A-Za-z_][A-Za-z0-9_]*)\s*$')


@dataclass(frozen=True)
class Monomial:
    """Término c·Π xᵢ^pᵢ de una propensidad polinomial general"""

    coefficient: float
    powers: Tuple[int, ...]
    coefficient_text: str = ''


@dataclass(frozen=True)
class Reaction:
    """
    Canal de reacción.

    Las reacciones de acción de masas declaran reactivos y constante; la
    propensidad es c·Π xᵢ(xᵢ−1)…(xᵢ−rᵢ+1). Si `monomials` no es None la
    propensidad es el polinomio explícito y `nu` se toma tal cual.
    """

    nu: Tuple[int, ...]
    reactants: Tuple[int, ...]
    rate: float
    rate_text: str
    equation: str = ''
    monomials: Optional[Tuple[Monomial, ...]] = None

    @property
    def is_mass_action(self) -> bool:
        return self.monomials is None


@dataclass(frozen=True)
class ReactionNetwork:
    """Modelo estático e inmutable; seguro para compartir entre procesos"""

    species_names: Tuple[str, ...]
    reactions: Tuple[Reaction, ...]
    x0: Tuple[int, ...]
    T: float
    observable: Tuple[float, ...]
    observable_name: str = 'g'
    name: str = 'model'
    nu: np.ndarray = field(init=False, repr=False, compare=False)
    _orders: np.ndarray = field(init=False, repr=False, compare=False)
    _rates: np.ndarray = field(init=False, repr=False, compare=False)
    _mass_action: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        d = len(self.species_names)
        if d == 0:
            raise ModelDefinitionError("El modelo no declara especies")
        if not self.reactions:
            raise ModelDefinitionError("El modelo no declara reacciones")
        if len(self.x0) != d or len(self.observable) != d:
            raise ModelDefinitionError("Dimensiones inconsistentes entre especies, x0 y observable")
        if any(v < 0 for v in self.x0):
            raise ModelDefinitionError(f"Estado inicial con conteos negativos: {self.x0}")
        if not self.T > 0:
            raise ModelDefinitionError(f"El tiempo final debe ser positivo: {self.T}")

        nu = np.array([r.nu for r in self.reactions], dtype=np.int64)
        if nu.shape != (len(self.reactions), d):
            raise ModelDefinitionError("Vectores estequiométricos de dimensión incorrecta")
        for j, row in enumerate(nu):
            if not row.any():
                raise ModelDefinitionError(f"La reacción {j} tiene vector estequiométrico nulo")
        orders = np.array([r.reactants for r in self.reactions], dtype=np.int64)
        rates = np.array([r.rate for r in self.reactions], dtype=float)
        if np.any(rates < 0):
            raise ModelDefinitionError("Constantes de reacción negativas")
        nu.setflags(write=False)
        object.__setattr__(self, 'nu', nu)
        object.__setattr__(self, '_orders', orders)
        object.__setattr__(self, '_rates', rates)
        object.__setattr__(self, '_mass_action', np.array([r.is_mass_action for r in self.reactions]))

    @property
    def d(self) -> int:
        return len(self.species_names)

    @property
    def J(self) -> int:
        return len(self.reactions)

    @property
    def initial_state(self) -> np.ndarray:
        return np.array(self.x0, dtype=np.int64)

    @property
    def observable_weights(self) -> np.ndarray:
        return np.array(self.observable, dtype=float)

    def g(self, x: np.ndarray) -> float:
        """Observable lineal g(x) = w·x"""
        return float(np.dot(self.observable, x))

    def g_gradient(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        return self.observable_weights

    def species_index(self, name: str) -> int:
        try:
            return self.species_names.index(name)
        except ValueError:
            raise ModelDefinitionError(f"Especie desconocida: {name}") from None

    # --- propensidades -------------------------------------------------

    def _raw(self, x: np.ndarray) -> np.ndarray:
        """Polinomios sin recorte, evaluados en x (entero o real)"""
        x = np.asarray(x, dtype=float)
        factors = np.ones(self._orders.shape)
        for k in range(int(self._orders.max(initial=0))):
            factors *= np.where(self._orders > k, x[None, :] - k, 1.0)
        a = self._rates * factors.prod(axis=1)
        if not self._mass_action.all():
            for j, reaction in enumerate(self.reactions):
                if reaction.monomials is not None:
                    a[j] = sum(m.coefficient * float(np.prod(x ** np.array(m.powers)))
                               for m in reaction.monomials)
        return a

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        """Jacobiano J×d de las propensidades (derivada del polinomio)"""
        x = np.asarray(x, dtype=float)
        J, d = self._orders.shape
        jac = np.zeros((J, d))
        for j, reaction in enumerate(self.reactions):
            if reaction.monomials is not None:
                for m in reaction.monomials:
                    powers = np.array(m.powers)
                    for i in np.flatnonzero(powers):
                        reduced = powers.copy()
                        reduced[i] -= 1
                        jac[j, i] += m.coefficient * powers[i] * float(np.prod(x ** reduced))
                continue
            orders = self._orders[j]
            falling = np.array([_falling(x[i], orders[i]) for i in range(d)])
            for i in np.flatnonzero(orders):
                others = np.prod(np.delete(falling, i))
                jac[j, i] = self._rates[j] * _falling_derivative(x[i], orders[i]) * others
        return jac

    def propensities(self, x: np.ndarray) -> np.ndarray:
        """
        Propensidades (a₁(x),…,a_J(x)) con la regla de recorte:
        aⱼ(x) = 0 si x + νⱼ sale del retículo no negativo.
        """
        a = self._raw(x)
        if np.any(a < 0):
            j = int(np.flatnonzero(a < 0)[0])
            raise ModelDefinitionError(
                f"Propensidad negativa en la reacción {j} ({self.reactions[j].equation}) para x={list(x)}"
            )
        a[np.any(np.asarray(x)[None, :] + self.nu < 0, axis=1)] = 0.0
        return a

    def total_propensity(self, x: np.ndarray) -> float:
        """a₀(x) = Σⱼ aⱼ(x)"""
        return float(self.propensities(x).sum())

    def drift(self, x: np.ndarray) -> np.ndarray:
        """Campo vectorial de campo medio νᵀa(x) evaluado en reales"""
        return self.nu.T @ np.maximum(self._raw(x), 0.0)

    def apply_reaction(self, x: np.ndarray, j: int, k: int = 1) -> np.ndarray:
        return apply_reaction(self, x, j, k)


def _falling(x: float, r: int) -> float:
    value = 1.0
    for k in range(r):
        value *= x - k
    return value


def _falling_derivative(x: float, r: int) -> float:
    total = 0.0
    for m in range(r):
        term = 1.0
        for k in range(r):
            if k != m:
                term *= x - k
        total += term
    return total


def propensities(net: ReactionNetwork, x: np.ndarray) -> np.ndarray:
    return net.propensities(x)


def apply_reaction(net: ReactionNetwork, x: np.ndarray, j: int, k: int = 1) -> np.ndarray:
    """x + k·νⱼ; puede salir del retículo, el llamador debe marcar la salida"""
    if k < 0:
        raise ValueError(f"El número de disparos debe ser no negativo: {k}")
    return np.asarray(x, dtype=np.int64) + k * net.nu[j]


def mean_field(net: ReactionNetwork, x0: Sequence[float], T: float, step: float,
               method: str = 'euler', cap: float = 1e12) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integra ẋ = νᵀa(x), x(0) = x0 en [0, T].

    Returns:
        (tiempos, estados) con estados de forma (n+1, d)
    """
    x = np.asarray(x0, dtype=float)
    if np.any(x < 0):
        raise ModelDefinitionError(f"Condición inicial negativa para campo medio: {x0}")
    if step <= 0:
        raise ValueError(f"Paso del integrador inválido: {step}")
    n = max(1, int(math.ceil(T / step - 1e-12)))
    h = T / n
    times = np.linspace(0.0, T, n + 1)
    states = np.empty((n + 1, net.d))
    states[0] = x

    for k in range(n):
        if method == 'euler':
            x = x + h * net.drift(x)
        elif method == 'rk4':
            k1 = net.drift(x)
            k2 = net.drift(x + 0.5 * h * k1)
            k3 = net.drift(x + 0.5 * h * k2)
            k4 = net.drift(x + h * k3)
            x = x + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        else:
            raise ValueError(f"Integrador desconocido: {method}")
        if not np.all(np.isfinite(x)) or np.any(np.abs(x) > cap):
            raise MeanFieldBlowUpError(
                f"La solución de campo medio supera {cap:.3g} en t={times[k + 1]:.6g}"
            )
        states[k + 1] = x

    return times, states


def stable_coarse_step(net: ReactionNetwork, T: Optional[float] = None, min_cells: int = 4,
                       solver_step: float = 1e-3, cap: float = 1e12, samples: int = 64) -> float:
    """
    Paso del nivel 0: el mayor T/2^k con |1 + Δt·λ| ≤ 1 para el espectro de
    νᵀJₐ a lo largo de la trayectoria de campo medio.
    """
    T = net.T if T is None else T
    _, states = mean_field(net, net.x0, T, solver_step, cap=cap)
    stride = max(1, len(states) // samples)
    dt_max = math.inf
    for x in states[::stride]:
        for lam in np.linalg.eigvals(net.nu.T @ net.jacobian(x)):
            if lam.real < 0:
                dt_max = min(dt_max, -2.0 * lam.real / abs(lam) ** 2)

    k = max(0, int(math.ceil(math.log2(max(min_cells, 1)))))
    while T / 2 ** k > dt_max:
        k += 1
    logger.debug(f"Paso estable de nivel 0: {T / 2 ** k:.6g} (cota {dt_max:.6g})")
    return T / 2 ** k


def uniform_mesh(T: float, dt: float) -> np.ndarray:
    n = max(1, int(round(T / dt)))
    return np.linspace(0.0, T, n + 1)


def refine_mesh(mesh: np.ndarray, factor: int = 2) -> np.ndarray:
    """Subdivide cada celda en `factor` partes iguales"""
    mesh = np.asarray(mesh, dtype=float)
    widths = np.diff(mesh)
    inner = mesh[:-1, None] + widths[:, None] * (np.arange(factor) / factor)[None, :]
    return np.append(inner.ravel(), mesh[-1])


def level_mesh(mesh0: np.ndarray, level: int, factor: int = 2) -> np.ndarray:
    mesh = np.asarray(mesh0, dtype=float)
    for _ in range(level):
        mesh = refine_mesh(mesh, factor)
    return mesh


def check_mesh(mesh: np.ndarray, T: float):
    mesh = np.asarray(mesh, dtype=float)
    if mesh.ndim != 1 or len(mesh) < 2 or mesh[0] != 0.0 or not math.isclose(mesh[-1], T):
        raise ModelDefinitionError(f"La malla debe cubrir [0, {T}]")
    if np.any(np.diff(mesh) <= 0):
        raise ModelDefinitionError("La malla debe ser estrictamente creciente")


# --- archivos de modelo -------------------------------------------------

def _locate(text: str, fragment: str) -> Tuple[Optional[int], Optional[int]]:
    idx = text.find(fragment)
    if idx < 0:
        return None, None
    return text.count('\n', 0, idx) + 1, idx - text.rfind('\n', 0, idx)


def _parse_side(side: str, species: List[str]) -> Dict[str, int]:
    counts: Dict[str, int] = {}
    side = side.strip()
    if side in EMPTY_SIDE:
        return counts
    for term in side.split('+'):
        match = _TERM_RE.match(term)
        if not match:
            raise ValueError(f"término inválido '{term.strip()}'")
        coefficient = int(match.group(1)) if match.group(1) else 1
        name = match.group(2)
        if name not in species:
            raise ValueError(f"especie desconocida '{name}'")
        counts[name] = counts.get(name, 0) + coefficient
    return counts


def _parse_equation(equation: str, species: List[str]) -> Reaction:
    if '@' not in equation or '->' not in equation:
        raise ValueError("se esperaba 'reactivos -> productos @ constante'")
    body, rate_text = equation.rsplit('@', 1)
    lhs, rhs = body.split('->', 1)
    rate_text = rate_text.strip()
    rate = float(rate_text)
    reactants = _parse_side(lhs, species)
    products = _parse_side(rhs, species)
    nu = tuple(products.get(s, 0) - reactants.get(s, 0) for s in species)
    orders = tuple(reactants.get(s, 0) for s in species)
    return Reaction(nu=nu, reactants=orders, rate=rate, rate_text=rate_text, equation=equation.strip())


def _parse_general(entry: Dict, species: List[str]) -> Reaction:
    stoichiometry = entry['stoichiometry']
    nu = tuple(int(stoichiometry.get(s, 0)) for s in species)
    for name in stoichiometry:
        if name not in species:
            raise ValueError(f"especie desconocida '{name}'")
    monomials = []
    for term in entry['monomials']:
        text = str(term['coefficient'])
        powers = term.get('powers', {})
        monomials.append(Monomial(coefficient=float(text),
                                  powers=tuple(int(powers.get(s, 0)) for s in species),
                                  coefficient_text=text))
    return Reaction(nu=nu, reactants=tuple(0 for _ in species), rate=0.0, rate_text='0',
                    equation=entry.get('label', ''), monomials=tuple(monomials))


def _observable_weights(entry: Union[str, Dict], species: List[str]) -> Tuple[Tuple[float, ...], str]:
    if isinstance(entry, str):
        if entry not in species:
            raise ModelDefinitionError(f"Observable desconocido: {entry}")
        return tuple(1.0 if s == entry else 0.0 for s in species), entry
    unknown = set(entry) - set(species)
    if unknown:
        raise ModelDefinitionError(f"Observable con especies desconocidas: {sorted(unknown)}")
    name = ' + '.join(f"{entry[s]}*{s}" for s in species if s in entry)
    return tuple(float(entry.get(s, 0.0)) for s in species), name


def parse_model(text: str, name: str = 'model') -> ReactionNetwork:
    """Construye la red a partir del texto JSON de un archivo de modelo"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelParseError(f"JSON inválido: {e.msg}", e.lineno, e.colno) from None

    for key in ('species', 'reactions', 'T', 'observable'):
        if key not in data:
            line, column = _locate(text, '{')
            raise ModelParseError(f"Falta la clave obligatoria '{key}'", line, column)

    species = list(data['species'].keys())
    x0 = tuple(int(v) for v in data['species'].values())
    reactions = []
    for entry in data['reactions']:
        fragment = entry if isinstance(entry, str) else json.dumps(entry.get('label', ''))
        try:
            if isinstance(entry, str):
                reactions.append(_parse_equation(entry, species))
            else:
                reactions.append(_parse_general(entry, species))
        except (ValueError, KeyError, TypeError) as e:
            line, column = _locate(text, fragment)
            raise ModelParseError(f"Reacción inválida '{fragment}': {e}", line, column) from None

    weights, observable_name = _observable_weights(data['observable'], species)
    return ReactionNetwork(
        species_names=tuple(species),
        reactions=tuple(reactions),
        x0=x0,
        T=float(data['T']),
        observable=weights,
        observable_name=observable_name,
        name=str(data.get('name', name))
    )


def load_model(path: Union[str, Path]) -> ReactionNetwork:
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ModelParseError(f"No se pudo leer el modelo {path}: {e}") from None
    net = parse_model(text, name=path.stem)
    logger.info(f"✅ Modelo '{net.name}' cargado: d={net.d}, J={net.J}, T={net.T}")
    return net


def model_to_dict(net: ReactionNetwork) -> Dict:
    """Representación serializable; las constantes conservan su texto decimal"""
    reactions = []
    for reaction in net.reactions:
        if reaction.monomials is None:
            lhs = ' + '.join(_term(n, s) for n, s in zip(reaction.reactants, net.species_names) if n) or '0'
            products = np.array(reaction.reactants) + np.array(reaction.nu)
            rhs = ' + '.join(_term(n, s) for n, s in zip(products, net.species_names) if n) or '0'
            reactions.append(f"{lhs} -> {rhs} @ {reaction.rate_text}")
        else:
            reactions.append({
                'label': reaction.equation,
                'stoichiometry': {s: int(v) for s, v in zip(net.species_names, reaction.nu) if v},
                'monomials': [
                    {'coefficient': m.coefficient_text or repr(m.coefficient),
                     'powers': {s: int(p) for s, p in zip(net.species_names, m.powers) if p}}
                    for m in reaction.monomials
                ]
            })
    weights = {s: w for s, w in zip(net.species_names, net.observable) if w}
    observable = next(iter(weights)) if len(weights) == 1 and list(weights.values())[0] == 1.0 else weights
    return {
        'name': net.name,
        'species': {s: int(v) for s, v in zip(net.species_names, net.x0)},
        'reactions': reactions,
        'T': net.T,
        'observable': observable
    }


def _term(count: int, name: str) -> str:
    return name if count == 1 else f"{int(count)}{name}"


def dump_model(net: ReactionNetwork, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model_to_dict(net), indent=2, ensure_ascii=False), encoding='utf-8')
    return path


def model_hash(net: ReactionNetwork) -> str:
    """Huella estable del modelo, usada para asociar planes y reportes"""
    canonical = json.dumps(model_to_dict(net), sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]
