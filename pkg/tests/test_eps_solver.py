import numpy as np
import pytest

from hjgraph import averaging as av
from hjgraph import eps_solver as es

LAM = 1.0
DATA = (-0.8, -1.0, -0.9)


def core_of(mask, depth=2):
    inner = mask == es.INTERIOR
    core = inner.copy()
    for s in range(1, depth + 1):
        core[s:, :] &= inner[:-s, :]
        core[:-s, :] &= inner[s:, :]
        core[:, s:] &= inner[:, :-s]
        core[:, :-s] &= inner[:, s:]
    return core


def test_legendre_closed_forms():
    x = np.array([1.0, 1.0])
    assert es.legendre(av.parse_cost("quad:zero"), x, np.array([0.3, 0.4])) == pytest.approx(0.125)
    assert es.legendre(av.parse_cost("quad:x1sq"), x, np.array([1.0, 1.0])) == pytest.approx(2.0)
    norm = av.parse_cost("norm")
    assert es.legendre(norm, x, np.array([0.5, 0.0])) == 0.0
    assert np.isinf(es.legendre(norm, x, np.array([2.0, 0.0])))


@pytest.mark.parametrize("text", ["quad:x1", "eik:r2", "norm"])
def test_closed_form_matches_numeric_conjugate(text):
    cost = av.parse_cost(text)
    x = np.array([[0.3, -0.2]] * 3)
    xi = np.array([[0.2, 0.1], [-0.5, 0.6], [0.0, 0.0]])
    assert np.allclose(es.legendre(cost, x, xi, numeric=True), es.legendre(cost, x, xi), atol=1e-6)


def test_quadratic_duality_gap(rng):
    cache = es.make_controls(av.parse_cost("quad:x1"), LAM, DATA)
    assert cache.duality_gap(rng) <= 1e-3


def test_control_set_layout():
    cache = es.make_controls(av.parse_cost("quad:zero"), LAM, DATA)
    assert len(cache.controls) == 1 + 16 * 4
    assert np.all(cache.controls[0] == 0)
    assert cache.r_ctrl == pytest.approx((1.0 * LAM + 0.5) / 1.0 + 1.0)
    assert np.max(np.linalg.norm(cache.controls, axis=1)) == pytest.approx(cache.r_ctrl)
    assert es.make_controls(av.parse_cost("norm"), LAM, DATA).r_ctrl == 1.0
    assert len(es.make_controls(av.parse_cost("const:1"), LAM, DATA).controls) == 1


def test_grid_labels_match_levels(h3_graph, small_grid):
    f, graph = h3_graph
    g = small_grid
    inner = g.mask == es.INTERIOR
    assert np.all(g.H[inner] < graph.h0)
    wells = g.well_of(g.nodes()[inner])
    cuts = np.asarray(graph.cuts)
    below = g.H[inner] < 0
    assert np.all(g.H[inner][below] > cuts[wells[below] - 1])
    pgm = g.pgm()
    assert pgm.startswith(b"P5\n65 65\n255\n") and len(pgm) == len(b"P5\n65 65\n255\n") + 65 * 65


def test_constants_are_reproduced(h3_graph, small_grid):
    f, _ = h3_graph
    u = es.solve_eps(f, av.parse_cost("const:0.3"), LAM, 0.2, small_grid, (-0.3,) * 3)
    assert np.max(np.abs(u.u[small_grid.mask == es.INTERIOR] + 0.3)) <= 1e-12


def test_zero_cost_zero_data_is_zero(h3_graph, small_grid):
    # xi = 0 never exits and costs nothing, so staying is optimal
    f, _ = h3_graph
    u = es.solve_eps(f, av.parse_cost("quad:zero"), LAM, 0.2, small_grid, (0.0,) * 3)
    assert np.max(np.abs(u.u[small_grid.mask == es.INTERIOR])) <= 1e-12


def test_norm_cost_negative_data(h3_graph, small_grid):
    # u = kappa * exp(-lam * shortest exit time) lies in [kappa, 0)
    f, _ = h3_graph
    u = es.solve_eps(f, av.parse_cost("norm"), LAM, 0.2, small_grid, (-1.0,) * 3)
    v = u.u[small_grid.mask == es.INTERIOR]
    assert np.all(v >= -1.0 - 1e-12) and np.all(v < 0)


@pytest.fixture(scope="module")
def cache():
    return es.make_controls(av.parse_cost("quad:zero"), LAM, DATA)


@pytest.fixture(scope="module")
def base(h3_graph, small_grid, cache):
    f, _ = h3_graph
    return es.solve_eps(f, cache.cost, LAM, 0.2, small_grid, DATA, cache=cache)


def test_converged_fixed_point(base):
    assert base.final_update < 1e-9 or base.fixed_point_residual < 1e-9
    assert base.fixed_point_residual < 1e-9


def test_discrete_comparison(h3_graph, small_grid, cache, base):
    f, _ = h3_graph
    inner = small_grid.mask == es.INTERIOR
    for data in [(-0.8, -0.9, -0.9), (-0.7, -1.0, -0.9)]:
        up = es.solve_eps(f, cache.cost, LAM, 0.2, small_grid, data, cache=cache)
        assert np.all(up.u[inner] >= base.u[inner] - 1e-12)
    shifted = es.solve_eps(f, cache.cost, LAM, 0.2, small_grid, tuple(d + 0.1 for d in DATA), cache=cache)
    assert np.all(shifted.u[inner] <= base.u[inner] + 0.1 + 1e-12)


def test_uniform_bound(base):
    # max(|g|, (|g| lam + M') / lam) with M' = -min L = 0 for the quadratic cost
    inner = base.grid.mask == es.INTERIOR
    assert np.max(np.abs(base.u[inner])) <= max(abs(d) for d in DATA) + 1e-12


def test_unconverged_field_has_larger_residual(h3_graph, small_grid, cache, base):
    f, _ = h3_graph
    early = es.solve_eps(f, cache.cost, LAM, 0.2, small_grid, DATA, cache=cache, max_iter=1)
    assert early.fixed_point_residual > base.fixed_point_residual
    assert es.residual(early, f, cache.cost)[0] > es.residual(base, f, cache.cost)[0]


def test_drift_flattens_along_orbits(h3_graph, small_grid, cache):
    f, _ = h3_graph
    g = small_grid
    core = core_of(g.mask)
    b = f.drift(g.nodes())
    out = []
    for eps in (0.4, 0.1):
        u = es.solve_eps(f, cache.cost, LAM, eps, g, DATA, cache=cache).u
        gy, gx = np.gradient(u, g.dy, g.dx)
        out.append(np.median(np.abs(b[..., 0] * gx + b[..., 1] * gy)[core]))
    assert out[1] < out[0]


def test_manufactured_residual(h3_graph, small_grid):
    f, _ = h3_graph
    cost = av.parse_cost("quad:manufactured", f, LAM)
    field = es.EpsField(small_grid, 0.1, LAM, small_grid.H.copy(), (0.5, -0.15, -0.15))
    med, p95, _ = es.residual(field, f, cost)
    assert med <= 0.05 and p95 <= 0.2


def test_manufactured_residual_shrinks_with_grid(h3_graph):
    f, graph = h3_graph
    cost = av.parse_cost("quad:manufactured", f, LAM)
    meds = []
    for n in (65, 129):
        g = es.make_grid(f, graph, n)
        meds.append(es.residual(es.EpsField(g, 0.1, LAM, g.H.copy(), ()), f, cost)[0])
    assert meds[1] < 0.5 * meds[0]


def test_rejects_bad_arguments(h3_graph, small_grid):
    f, _ = h3_graph
    cost = av.parse_cost("quad:zero")
    with pytest.raises(ValueError):
        es.solve_eps(f, cost, LAM, 0.0, small_grid, DATA)
    with pytest.raises(ValueError):
        es.solve_eps(f, cost, LAM, 0.1, small_grid, DATA[:2])

