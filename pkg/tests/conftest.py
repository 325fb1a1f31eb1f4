# tests/conftest.py
import json
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from modules.network import load_model, parse_model  # noqa: E402
from modules.streams import RandomStream  # noqa: E402
from modules.workmodel import MachineConstants  # noqa: E402


def pytest_addoption(parser):
    parser.addoption('--extended', action='store_true', default=False,
                     help="Ejecuta los oráculos estadísticos lentos")


def pytest_configure(config):
    config.addinivalue_line('markers', 'extended: oráculo estadístico lento (requiere --extended)')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--extended'):
        return
    skip = pytest.mark.skip(reason="requiere --extended")
    for item in items:
        if 'extended' in item.keywords:
            item.add_marker(skip)


def decay_model(x0: int = 1000, c: float = 1.0, T: float = 0.5):
    return parse_model(json.dumps({
        'name': 'decay',
        'species': {'X': x0},
        'reactions': [f"X -> 0 @ {c}"],
        'T': T,
        'observable': 'X'
    }))


def dimer_model(x0: int = 1000, c: float = 1e-4, T: float = 0.5):
    return parse_model(json.dumps({
        'name': 'dimer',
        'species': {'X': x0},
        'reactions': [f"2X -> 0 @ {c}"],
        'T': T,
        'observable': 'X'
    }))


@pytest.fixture
def decay_net():
    return decay_model()


@pytest.fixture
def decay_big():
    return load_model(ROOT / 'models' / 'decay.json')


@pytest.fixture
def gene_net():
    return load_model(ROOT / 'models' / 'gene.json')


@pytest.fixture
def machine():
    return MachineConstants.reference()


@pytest.fixture
def stream():
    return RandomStream(seed=20240601)
