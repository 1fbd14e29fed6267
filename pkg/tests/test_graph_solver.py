import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjgraph import graph_solver as gs
from hjgraph.averaging import AveragedTable, TableError

LAM = 1.0
datum = st.floats(-2.0, 0.95)


def eikonal_table(n=1025, q_max=8.0):
    h = np.linspace(-1.0, 0.0, n)
    q = np.linspace(-q_max, q_max, int(40 * q_max) + 1)
    return AveragedTable.from_function(1, h, q, lambda hh, qq: np.abs(qq) - 1 + 0 * hh)


def exit_time_value(h, dl, dr, lam=LAM):
    """Value of unit-speed control with running cost 1: cheapest exit through either end or stay."""
    def via(s, d):
        return (1 - np.exp(-lam * s)) / lam + np.exp(-lam * s) * d
    return np.minimum(np.minimum(via(h + 1.0, dl), via(-h, dr)), 1.0 / lam)


@pytest.fixture(scope="module")
def table():
    return eikonal_table()


@settings(max_examples=25, deadline=None)
@given(dl=datum, dr=datum)
def test_matches_exit_time_control_value(table, dl, dr):
    sol = gs.solve_edge(table, LAM, gs.Dirichlet(dl), gs.Dirichlet(dr))
    assert np.max(np.abs(sol.u - exit_time_value(sol.h, dl, dr))) <= 2e-3


def test_unattained_datum_is_flagged(table):
    sol = gs.solve_edge(table, LAM, gs.Dirichlet(-1.0), gs.Dirichlet(0.9))
    assert sol.attained == {"left": True, "right": False}
    assert sol.u[-1] < 0.9


def test_free_solution_is_stay_value(table):
    assert np.allclose(gs.free_solution(table, LAM).u, 1.0 / LAM, atol=1e-12)
    assert gs.feasibility_ceiling(table, LAM, "outer") == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(dl=datum, dr=datum, a=st.floats(0.0, 1.0))
def test_comparison_and_nonexpansive(table, dl, dr, a):
    u = gs.solve_edge(table, LAM, gs.Dirichlet(dl), gs.Dirichlet(dr)).u
    v = gs.solve_edge(table, LAM, gs.Dirichlet(dl + a), gs.Dirichlet(dr)).u
    assert np.all(v >= u - 1e-12)
    assert np.all(v <= u + a + 1e-12)


def test_sweeps_converge_to_tolerance(table):
    sol = gs.solve_edge(table, LAM, gs.Dirichlet(-0.5), gs.FREE)
    assert sol.final_update < 1e-10
    assert np.max(gs.subsolution_residual(sol, table, LAM)) <= 1e-6


def test_boundary_condition_errors(table):
    with pytest.raises(ValueError):
        gs.solve_edge(table, LAM, gs.FREE, gs.FREE)
    with pytest.raises(ValueError):
        gs.solve_edge(table, 0.0, gs.Dirichlet(0.0), gs.FREE)
    with pytest.raises(ValueError):
        gs.solve_edge(table, LAM, gs.Dirichlet(np.nan), gs.FREE)


def test_slope_outside_table_raises():
    narrow = eikonal_table(n=257, q_max=0.5)
    with pytest.raises(TableError):
        gs.solve_edge(narrow, LAM, gs.Dirichlet(-3.0), gs.Dirichlet(0.9))


def test_extrapolation_reproduces_linear_data():
    h = np.linspace(-1.0, -0.1, 10)
    v, err = gs.extrapolate_to_node(h, 2.0 * h + 0.5, "right")
    assert v == pytest.approx(0.5, abs=1e-12) and err <= 1e-12


def test_rho_above_ceiling_is_infeasible(table):
    with pytest.raises(gs.FeasibilityError):
        gs.maximal_subsolution_rho(table, LAM, 1.5)


# --- the H3 fixture ------------------------------------------------------------


@pytest.fixture(scope="module")
def problem(h3_pipeline):
    return h3_pipeline.problem


def test_junction_is_continuous(h3_pipeline):
    sol = gs.junction_solve(h3_pipeline.tables, LAM, h3_pipeline.config.data)
    assert sol.continuity_residual <= 1e-5
    assert sol.node_inequality(h3_pipeline.cost.G00()) <= 1e-3
    for e, t in zip(sol.edges, h3_pipeline.tables):
        assert gs.gronwall_excess(e, t, LAM) <= 1e-9


def test_equicontinuity_bound(h3_pipeline, problem):
    for i, t in enumerate(h3_pipeline.tables):
        sols = [problem.rho(i, d) for d in (-1.0, -0.8, -0.6)]
        assert gs.equicontinuity_excess(sols, t, LAM) <= 1e-9


def test_fixture_tuple_is_strictly_admissible(h3_pipeline, problem):
    sol = gs.junction_solve(h3_pipeline.tables, LAM, h3_pipeline.config.data)
    rep = gs.check_admissible(problem, candidate=(sol.d - 0.05, *h3_pipeline.config.data))
    assert rep.verdict and rep.in_D0 and rep.margin > 0


def test_boundary_tuple_is_not_in_D0(h3_pipeline, problem):
    sol = gs.junction_solve(h3_pipeline.tables, LAM, h3_pipeline.config.data)
    rep = gs.check_admissible(problem, candidate=(sol.d, *h3_pipeline.config.data))
    assert rep.verdict and not rep.in_D0


def test_outer_condition_violation_is_reported(problem):
    rep = gs.check_admissible(problem, candidate=(-1.2, -1.0, -0.5, -0.8))
    assert rep.failed == ["outer"]


def test_junction_rejects_data_above_ceiling(h3_pipeline):
    with pytest.raises(gs.FeasibilityError):
        gs.junction_solve(h3_pipeline.tables, LAM, (0.5, -1.0, -0.9))
