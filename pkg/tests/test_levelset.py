import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjgraph import flow
from hjgraph import levelset as ls
from hjgraph.hamiltonian import builtin, find_critical_points


@pytest.fixture(scope="module")
def circle():
    return ls.trace_loop(builtin("RADIAL"), 0.5, np.array([1.0, 0.0]))


def test_circle_length_and_period(circle):
    L, T = ls.loop_metrics(circle, builtin("RADIAL"))
    assert L == pytest.approx(2 * np.pi, rel=1e-10)
    assert T == pytest.approx(2 * np.pi, rel=1e-10)
    assert circle.length == pytest.approx(L, rel=1e-10)


def test_circle_vertices_on_level(circle):
    assert np.allclose(np.linalg.norm(circle.vertices, axis=1), 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(r=st.floats(0.0, 2.0))
def test_clipped_length_of_unit_circle(circle, r):
    got = ls.clipped_length(circle, r)
    chords = float(np.sum(np.linalg.norm(np.diff(circle.vertices, axis=0), axis=1)))
    if r <= 0.99:
        assert got == 0.0
    elif r >= 1.0 + 1e-9:
        assert got == pytest.approx(chords, rel=1e-12)
    else:
        assert 0.0 <= got <= chords * (1 + 1e-12)


def test_line_integral_of_x1_squared(circle):
    # integral of cos^2 over the unit circle is pi
    assert ls.line_integral(circle, circle.vertices[:, 0] ** 2) == pytest.approx(np.pi, rel=1e-8)


@pytest.mark.parametrize("name,h,edges", [("H3", 0.2, {0}), ("H3", -0.1, {1, 2}),
                                          ("H4", 0.02, {0}), ("H4", -0.05, {1, 2, 3})])
def test_extract_all_loops_labels_edges(name, h, edges):
    f = builtin(name)
    loops = ls.extract_all_loops(f, h)
    assert {lp.edge for lp in loops} == edges
    pts = find_critical_points(f)
    for lp in loops:
        assert abs(lp.residual) <= 1e-8 * (1 + abs(h))
        assert ls.check_winding(lp, pts)


@pytest.mark.parametrize("h", [0.3, -0.2, -0.01])
def test_quadrature_period_matches_flow(h):
    f = builtin("H3")
    for lp in ls.extract_all_loops(f, h):
        _, T = ls.loop_metrics(lp, f)
        assert T == pytest.approx(flow.measure_period(f, lp.vertices[0], tol=1e-12), rel=1e-6)


def test_points_along_lie_on_level():
    f = builtin("H4")
    lp = ls.extract_all_loops(f, -1e-4)[0]
    pts = ls.points_along(lp, 16, np.random.default_rng(0), f)
    assert np.allclose(f.H(pts), -1e-4, atol=1e-12)


def test_build_graph_validates_cuts():
    f = builtin("H3")
    with pytest.raises(ValueError):
        ls.build_graph(f, 0.5, (-0.15,))
    with pytest.raises(ValueError):
        ls.build_graph(f, 0.5, (-0.3, -0.15))  # below the well minimum -1/4
    with pytest.raises(ValueError):
        ls.build_graph(builtin("RADIAL"), 0.5, ())


def test_profile_levels_are_graded_toward_node():
    lv = ls.ProfileGrid(10, 1e-4, 5).levels(-0.2)
    assert np.all(lv < 0) and np.all(np.diff(np.abs(lv)) > 0)
    assert lv[0] == pytest.approx(-0.2e-4)
    assert lv[-1] == pytest.approx(-0.2)


def test_period_grows_toward_saddle(h3_pipeline):
    for p in h3_pipeline.profiles:
        inner = np.argsort(np.abs(p.h))
        assert p.T[inner[0]] > p.T[inner[-1]]
        assert np.all(p.L > 0)
