import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjgraph.hamiltonian import (builtin, classify, critical_points_csv_rows, find_critical_points,
                                 minima, parse_family, verify_structure)

FAMILIES = ["H3", "H3o", "H4", "RADIAL"]
coord = st.floats(-1.5, 1.5, allow_nan=False)


def test_h3_critical_points_are_analytic():
    pts = find_critical_points(builtin("H3"))
    saddle = [p for p in pts if p.kind == "degenerate-saddle" or "saddle" in p.kind]
    assert len(saddle) == 1 and np.allclose(saddle[0].location, 0, atol=1e-10)
    mins = sorted((p for p in pts if p.kind == "local-min"), key=lambda p: p.location[0])
    assert len(mins) == 2
    # DH = (4r^2 x1 - 2x1, 4r^2 x2 + 2x2) vanishes at x1^2 = 1/2, x2 = 0 with H = -1/4
    for p, s in zip(mins, (-1, 1)):
        assert np.allclose(p.location, [s / np.sqrt(2), 0.0], atol=1e-12)
        assert p.energy == pytest.approx(-0.25, abs=1e-14)


def test_h4_minima_have_triangular_symmetry():
    mins = minima(builtin("H4"))
    assert len(mins) == 3
    locs = np.array([p.location for p in mins])
    assert np.allclose(np.linalg.norm(locs, axis=1), 0.75, atol=1e-12)
    assert all(p.energy == pytest.approx(0.75 ** 4 - 0.75 ** 3, abs=1e-14) for p in mins)
    ang = np.sort(np.mod(np.arctan2(locs[:, 1], locs[:, 0]), 2 * np.pi))
    assert np.allclose(np.diff(ang), 2 * np.pi / 3, atol=1e-10)


@pytest.mark.parametrize("N", [5, 6])
def test_petal_family_has_N_minus_one_wells(N):
    assert len(minima(builtin("HN", N))) == N - 1


@pytest.mark.parametrize("name", FAMILIES + ["HN:5"])
@settings(max_examples=40, deadline=None)
@given(a=coord, b=coord)
def test_gradient_and_hessian_match_finite_differences(name, a, b):
    f = parse_family(name)
    x = np.array([a, b])
    e = 1e-6
    fd = np.array([(f.H(x + e * u) - f.H(x - e * u)) / (2 * e) for u in np.eye(2)])
    assert np.allclose(f.DH(x), fd, rtol=1e-6, atol=1e-6)
    fd2 = np.array([(f.DH(x + e * u) - f.DH(x - e * u)) / (2 * e) for u in np.eye(2)])
    assert np.allclose(f.D2H(x), fd2.T, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("name", FAMILIES)
@settings(max_examples=30, deadline=None)
@given(a=coord, b=coord)
def test_drift_is_tangent_to_level_sets(name, a, b):
    f = builtin(name)
    x = np.array([a, b])
    g = f.DH(x)
    assert abs(float(f.drift(x) @ g)) <= 1e-12 * (1 + g @ g)


def test_classify_origin_and_wells():
    f = builtin("H3")
    assert "saddle" in classify(f, np.zeros(2))
    assert classify(f, np.array([1 / np.sqrt(2), 0.0])) == "local-min"


def test_csv_rows_round_trip_locations():
    pts = find_critical_points(builtin("H4"))
    rows = list(critical_points_csv_rows(pts))
    assert len(rows) == len(pts)
    assert float(rows[1][1]) == pytest.approx(pts[1].location[0], abs=0)


@pytest.mark.parametrize("name", ["H3", "H4"])
def test_declared_exponents_are_verified(name):
    rep = verify_structure(builtin(name))
    assert rep.passed, rep.failed_checks()


def test_wrong_gradient_exponent_is_rejected():
    f = builtin("H4").with_exponents(m=1, n=1)
    assert "gradient_bound" in verify_structure(f).failed_checks()


def test_verify_rejects_radius_beyond_validity():
    f = builtin("H3")
    with pytest.raises(ValueError):
        verify_structure(f, radius=2 * f.r_v)


def test_unknown_family_raises():
    with pytest.raises(ValueError):
        builtin("H7x")
