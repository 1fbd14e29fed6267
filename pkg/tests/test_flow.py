import numpy as np
import pytest

from hjgraph import flow
from hjgraph.hamiltonian import builtin


def test_energy_is_conserved():
    f = builtin("H4")
    tr = flow.integrate(f, [0.3, -0.2], 20.0, tol=1e-11)
    assert tr.energy_drift < 1e-8


def test_forward_then_backward_returns_to_start():
    f = builtin("H3")
    fwd = flow.integrate(f, [0.5, 0.1], 3.0, tol=1e-12)
    back = flow.integrate(f, fwd.x[-1], -3.0, tol=1e-12)
    assert np.allclose(back.x[-1], [0.5, 0.1], atol=1e-8)


def test_small_oscillation_period_near_well():
    # Hessian at (1/sqrt2, 0) is diag(4, 4), so the linearised period is 2 pi / 4
    f = builtin("H3")
    T = flow.measure_period(f, [1 / np.sqrt(2) + 1e-3, 0.0])
    assert T == pytest.approx(np.pi / 2, rel=1e-4)


def test_radial_period_is_two_pi():
    assert flow.measure_period(builtin("RADIAL"), [0.7, 0.0]) == pytest.approx(2 * np.pi, rel=1e-9)


def test_period_rejects_critical_level():
    with pytest.raises(ValueError):
        flow.measure_period(builtin("H3"), [0.0, 0.0])


def test_zero_control_is_time_rescaled_flow():
    f = builtin("H3")
    eps = 0.1
    a = flow.integrate_controlled(f, [0.4, 0.3], eps, lambda t: np.zeros(2), 0.2, tol=1e-12)
    b = flow.integrate(f, [0.4, 0.3], 0.2 / eps, tol=1e-12)
    assert np.allclose(a.x[-1], b.x[-1], atol=1e-7)


def test_normal_drift_raises_energy():
    f = builtin("H3")
    x0 = [0.3, 0.0]
    assert f.H(np.array(x0)) == pytest.approx(0.3 ** 4 - 0.09)
    tr = flow.integrate_controlled(f, x0, 0.1, flow.NormalDrift(+1, 1.0), 0.05, samples=40)
    assert np.all(np.diff(f.H(tr.x)) > 0)


def test_transit_within_bound():
    r = flow.measure_transit(builtin("H4"), 0.05, 1e-2, nu=1.0, trials=16)
    assert 0 < r.max_time <= r.bound


def test_transit_bound_has_declared_scaling():
    f = builtin("H4")
    b1 = flow.transit_bound(f, 1e-2, 1.0, 1.0)
    b2 = flow.transit_bound(f, 1e-3, 1.0, 1.0)
    # exponent 1 - n/(m+2) = 1/3 for (m, n) = (1, 2)
    assert np.log10(b1 / b2) == pytest.approx(1 / 3, rel=1e-12)
