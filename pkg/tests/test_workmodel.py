import json

import numpy as np
import pytest

from conftest import decay_model
from modules.chernoff import chernoff_tau
from modules.error_handler import CalibrationError, UsageError
from modules.paths import Method
from modules.workmodel import (MachineCalibrator, MachineConstants, PoissonCostCurve, fit_poisson_curve, k2,
                               load_profile, save_profile)


def test_poisson_curve_is_flat_below_knee():
    curve = PoissonCostCurve(intercept=2e-6, slope=1e-9, knee=10.0)
    assert curve(0.0) == pytest.approx(2e-6)
    assert curve(10.0) == pytest.approx(2e-6)
    assert curve(110.0) == pytest.approx(2e-6 + 1e-7)
    assert curve.total(np.array([0.0, 110.0])) == pytest.approx(4e-6 + 1e-7)


def test_fit_recovers_piecewise_curve():
    grid = [0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0]
    truth = PoissonCostCurve(intercept=1e-6, slope=2e-9, knee=10.0)
    curve = fit_poisson_curve(grid, [truth(lam) for lam in grid])
    assert curve.knee == 10.0
    assert curve.intercept == pytest.approx(1e-6)
    assert curve.slope == pytest.approx(2e-9)
    assert curve.r2 == pytest.approx(1.0)


def test_fit_never_returns_negative_slope():
    grid = [0.0, 10.0, 100.0, 1000.0]
    curve = fit_poisson_curve(grid, [4e-6, 3e-6, 2e-6, 1e-6])
    assert curve.slope >= 0.0


def test_reference_constants(machine):
    assert machine.k1 == pytest.approx(3.0)
    assert machine.step_cost(Method.MNRM_K1) == pytest.approx(4e-6)
    assert machine.step_cost(Method.MNRM_K2) == pytest.approx(1.6e-5)
    assert machine.step_cost(Method.SSA) == pytest.approx(3e-6)
    assert machine.step_cost(Method.ABSORBING) == 0.0
    assert machine.step_cost(Method.TL, np.array([0.0, 110.0])) == pytest.approx(1.2e-5 + 3e-6 + 1e-8)


def test_non_positive_constant_rejected():
    with pytest.raises(CalibrationError):
        MachineConstants(c1=0.0, c2=1.0, c3=1.0, c_star=1.0, poisson=PoissonCostCurve(intercept=1e-6))


def test_k2_from_components(machine):
    net = decay_model(x0=100000)
    x = np.array([100000])
    tau = chernoff_tau(net, x, 1e-2)
    expected = (machine.c3 + machine.poisson(1e5 * tau)) / (machine.c1 + machine.c3)
    assert k2(net, x, 1e-2, machine) == pytest.approx(expected)


def test_k2_with_zero_step(machine):
    net = decay_model(x0=100)
    value = k2(net, np.array([100]), 1e-2, machine, tau=0.0)
    assert value == pytest.approx((machine.c3 + machine.poisson.intercept) / (machine.c1 + machine.c3))


def test_k2_grows_with_step(machine):
    net = decay_model(x0=100000)
    x = np.array([100000])
    values = [k2(net, x, 1e-2, machine, tau=t) for t in (0.0, 0.01, 0.1, 1.0)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_profile_roundtrip(machine, tmp_path):
    path = tmp_path / 'machine.json'
    save_profile(machine, path, grid=[0.0, 10.0])
    loaded = load_profile(path, fingerprint='reference')
    assert loaded == machine
    data = json.loads(path.read_text(encoding='utf-8'))
    assert data['profiles']['reference']['units']['c1'] == 's/step'


def test_missing_profile(tmp_path):
    with pytest.raises(UsageError):
        load_profile(tmp_path / 'nothing.json')


def test_profile_for_another_host(machine, tmp_path):
    path = save_profile(machine, tmp_path / 'machine.json')
    with pytest.raises(UsageError):
        load_profile(path, fingerprint='another-host')


def test_corrupt_profile_is_a_usage_error(tmp_path):
    path = tmp_path / 'machine.json'
    path.write_text('{"profiles": {', encoding='utf-8')
    with pytest.raises(UsageError):
        load_profile(path, fingerprint='reference')


def test_calibrator_measures_positive_constants():
    calibrator = MachineCalibrator(decay_model(x0=200), repetitions=50, min_ticks=1,
                                   poisson_grid=[0.0, 1.0, 10.0, 100.0])
    constants = calibrator.run()
    assert min(constants.c1, constants.c2, constants.c3, constants.c_star) > 0
    assert constants.poisson.slope >= 0
    assert {kernel['name'] for kernel in calibrator.kernels} == {'c1', 'c2', 'c3', 'c_star', 'c0'}
    assert all(kernel['seconds'] > 0 for kernel in calibrator.kernels)


def test_calibrator_rejects_zero_repetitions():
    with pytest.raises(UsageError):
        MachineCalibrator(decay_model(), repetitions=0)
