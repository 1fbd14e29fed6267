"""Acceptance criteria A1-A11; each returns one row (id, measured, threshold, verdict)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import averaging as av
from . import flow
from . import graph_solver as gs
from . import harness
from . import levelset as ls
from .averaging import AveragedTable
from .hamiltonian import builtin, find_critical_points


@dataclass
class CriterionResult:
    id: str
    measured: str
    threshold: str
    verdict: bool
    note: str = ""
    runtime: float = 0.0

    def row(self):
        return (self.id, self.measured, self.threshold, "pass" if self.verdict else "fail",
                f"{self.runtime:.1f}", self.note)

    def line(self) -> str:
        tag = "PASS" if self.verdict else "FAIL"
        return f"{self.id} {tag}  measured={self.measured}  threshold={self.threshold}  ({self.runtime:.1f}s) {self.note}".rstrip()


HEADER = ("id", "measured", "threshold", "verdict", "runtime_s", "note")


def _fmt(x) -> str:
    return f"{x:.4g}"


# --- geometry ---------------------------------------------------------------------


def a1_critical_points() -> CriterionResult:
    s = np.sqrt(2) / 2
    expected = {"H3": [(0, 0), (s, 0), (-s, 0)],
                "H4": [(0, 0), (3 * np.sqrt(3) / 8, 3 / 8), (-3 * np.sqrt(3) / 8, 3 / 8), (0, -0.75)]}
    worst = 0.0
    for name, pts in expected.items():
        found = np.array([p.location for p in find_critical_points(builtin(name))])
        if len(found) != len(pts):
            return CriterionResult("A1", f"{len(found)} points", f"{len(pts)} points", False, name)
        for z in pts:
            worst = max(worst, float(np.min(np.linalg.norm(found - np.array(z), axis=1))))
    return CriterionResult("A1", _fmt(worst), "1e-08", worst <= 1e-8)


def _mid_levels(cut):
    return -abs(cut) * np.geomspace(1e-3, 0.9, 10) if cut < 0 else cut * np.geomspace(1e-3, 0.9, 10)


def a2_period_oracle() -> CriterionResult:
    worst = 0.0
    for cfg in (harness.H3_FIXTURE, harness.H4_FIXTURE):
        f, graph = harness.build_graph(cfg)
        for e in graph.edges:
            for h in _mid_levels(e.outer_level):
                lp = ls.trace_loop(f, h, ls.seed_for(f, h, e.index, graph.points), edge=e.index,
                                   points=graph.points)
                _, T = ls.loop_metrics(lp, f)
                Tf = flow.measure_period(f, lp.vertices[0], 1e-10)
                worst = max(worst, abs(T - Tf) / T)
    return CriterionResult("A2", _fmt(worst), "1e-04", worst <= 1e-4)


def a3_period_blowup() -> CriterionResult:
    hs = np.geomspace(1e-5, 1e-2, 16)
    slopes, ratios, per_decade = [], [], []
    ok = True
    for name in ("H3", "H4"):
        f = builtin(name)
        e = f.n / (f.m + 2)
        for sign in (1.0, -1.0):
            T = harness.period_series(f, hs, sign)
            for col in T.T:
                s, _, _ = harness.fit_powerlaw(hs, col)
                scaled = hs ** e * col
                slopes.append(s - (-e - 0.05))
                ratios.append(scaled.max() / scaled.min())
                dec = [scaled[k:k + 6].max() / scaled[k:k + 6].min() for k in (0, 5, 10)]
                per_decade.append(max(dec))
                ok &= s >= -e - 0.05 and ratios[-1] <= 10
    note = (f"min slope margin {_fmt(min(slopes))}; scaled-period max/min over the range "
            f"{_fmt(max(ratios))}; worst single decade {_fmt(max(per_decade))}")
    return CriterionResult("A3", _fmt(max(ratios)), "slope>=-n/(m+2)-0.05 and max/min<=10", bool(ok), note)


def a4_clipped_length() -> CriterionResult:
    f = builtin("H4")
    pts = find_critical_points(f)
    rs = (0.2, 0.1, 0.05, 0.025)
    worst = 0.0
    detail = []
    for h in (1e-4, -1e-4):
        for lp in ls.extract_all_loops(f, h, points=pts):
            vals = np.array([ls.clipped_length(lp, r) / r ** (f.m - f.n + 2) for r in rs])
            closest = float(np.min(np.linalg.norm(lp.vertices, axis=1)))
            ratio = np.inf if vals.min() == 0 else vals.max() / vals.min()
            worst = max(worst, ratio)
            detail.append(f"edge {lp.edge}: closest approach {closest:.4f}")
    note = "; ".join(detail[:2])
    return CriterionResult("A4", _fmt(worst), "3", worst <= 3, note)


def a5_averaging_identities() -> CriterionResult:
    worst_norm = 0.0
    norm = av.make_cost("NORM")
    for cfg in (harness.H3_FIXTURE, harness.H4_FIXTURE):
        f, graph = harness.build_graph(cfg)
        prof = harness.profiles_for(f, graph, cfg.profile_grid)
        for t in av.tabulate_all(f, norm, prof, q_count=129):
            exact = np.abs(t.q) * (t.L / t.T)[:, None]
            rel = np.abs(t.values - exact) / np.maximum(exact, 1e-300)
            worst_norm = max(worst_norm, float(rel[exact > 0].max()))
    R = builtin("RADIAL")
    quad = av.make_cost("QUADRATIC")
    worst_rad = 0.0
    qs = np.linspace(-3, 3, 13)
    for h in np.geomspace(1e-6, 0.5, 12):
        lp = ls.extract_all_loops(R, h)[0]
        exact = qs ** 2 * h
        got = av.averaged_row(R, quad, lp, qs)
        worst_rad = max(worst_rad, float(np.max(np.abs(got - exact)[exact > 0] / exact[exact > 0])))
    rng = np.random.default_rng(0)
    worst_route = 0.0
    f, graph = harness.build_graph(harness.H3_FIXTURE)
    prof = harness.profiles_for(f, graph, harness.H3_FIXTURE.profile_grid)
    cost = av.make_cost("QUADRATIC", "x1")
    for _ in range(20):
        p = prof[rng.integers(len(prof))]
        j = rng.integers(len(p.h) // 3, len(p.h))
        q = rng.uniform(-3, 3)
        a = av.averaged_g(f, cost, p.loops[j], q)
        b = av.averaged_g_time(f, cost, p.loops[j], q)
        worst_route = max(worst_route, abs(a - b) / max(abs(a), 1e-12))
    ok = worst_norm <= 1e-6 and worst_rad <= 1e-8 and worst_route <= 1e-5
    m = f"{_fmt(worst_norm)}/{_fmt(worst_rad)}/{_fmt(worst_route)}"
    return CriterionResult("A5", m, "1e-06/1e-08/1e-05", ok, "norm / radial / routes")


# --- averaged limits and the graph solver -----------------------------------------


def a6_coercivity_and_limit() -> CriterionResult:
    worst_coerc, worst_min, worst_zero = -np.inf, 0.0, 0.0
    for cfg in (harness.H3_FIXTURE, harness.H4_FIXTURE):
        pipe = harness.build_pipeline(cfg)
        G00 = pipe.cost.G00()
        for t in pipe.tables:
            worst_coerc = max(worst_coerc, t.coercivity_defect())
        for e in pipe.graph.edges:
            h = float(np.sign(e.outer_level) * 1e-5)
            lp = ls.trace_loop(pipe.field, h, ls.seed_for(pipe.field, h, e.index, pipe.graph.points),
                               edge=e.index, points=pipe.graph.points)
            L, T = ls.loop_metrics(lp, pipe.field)
            qm = float(av.default_q_max(pipe.cost, [L], [T])[0])
            qs = av.graded_axis(qm, 513, 4.0)
            row = av.averaged_row(pipe.field, pipe.cost, lp, qs)
            worst_min = max(worst_min, abs(float(row.min()) - G00))
            worst_zero = max(worst_zero, abs(float(row[len(qs) // 2]) - G00))
    ok = worst_coerc <= 1e-9 and worst_min <= 0.05 and worst_zero <= 0.05
    m = f"{_fmt(worst_coerc)}/{_fmt(worst_min)}/{_fmt(worst_zero)}"
    return CriterionResult("A6", m, "1e-09/0.05/0.05", ok, "coercivity excess / |min-G00| / |G(h,0)-G00|")


def synthetic_eikonal(n: int = 2048, q_max: float = 8.0) -> AveragedTable:
    """Rows |q| - 1 on J = (-1, 0); slopes stay below 1 - lam*u, inside the q-range."""
    h = np.linspace(-1.0, 0.0, n)
    q = np.linspace(-q_max, q_max, int(40 * q_max) + 1)
    return AveragedTable.from_function(1, h, q, lambda hh, qq: np.abs(qq) - 1 + 0 * hh)


def a7_edge_oracle() -> CriterionResult:
    tab = synthetic_eikonal()
    rho = gs.maximal_subsolution_rho(tab, 1.0, 0.0)
    err_rho = abs(rho.node_value - (1 - np.exp(-1)))
    const = AveragedTable.from_function(1, tab.h, np.linspace(-1, 1, 11), lambda hh, qq: 0.7 + 0 * qq + 0 * hh, nu=0.0)
    s = gs.solve_edge(const, 2.0, gs.Dirichlet(-0.35), gs.Dirichlet(-0.35))
    err_const = float(np.max(np.abs(s.u + 0.35)))
    rng = np.random.default_rng(0)
    bad = 0
    small = synthetic_eikonal(257)
    for _ in range(100):
        a, b = sorted(rng.uniform(-2, 1, 2))
        c = rng.uniform(-2, 1)
        ua = gs.solve_edge(small, 1.0, gs.Dirichlet(a), gs.Dirichlet(c)).u
        ub = gs.solve_edge(small, 1.0, gs.Dirichlet(b), gs.Dirichlet(c)).u
        shift = rng.uniform(0, 1)
        us = gs.solve_edge(small, 1.0, gs.Dirichlet(b - shift), gs.Dirichlet(c - shift)).u
        if np.any(ub < ua - 1e-12):
            bad += 1
        if np.any(us > ub + 1e-12) or np.any(us - ub < -shift - 1e-12):
            bad += 1
    ok = err_rho <= 1e-4 and err_const <= 1e-10 and bad == 0
    m = f"{_fmt(err_rho)}/{_fmt(err_const)}/{bad}"
    return CriterionResult("A7", m, "1e-04/1e-10/0", ok, "rho(0) error / constant error / property failures")


def a8_admissibility() -> CriterionResult:
    pipe = harness.build_pipeline(harness.H3_FIXTURE)
    prob = pipe.problem
    data = list(harness.H3_FIXTURE.data)
    rho = [prob._node_of(prob.rho(i, d)) for i, d in enumerate(data)]
    d_star = min(rho)
    flags = {}
    # condition 1 only: an edge datum above its ceiling
    r = gs.check_admissible(prob, candidate=(d_star, prob.ceilings[0] + 0.1, *data[1:]))
    flags["domain"] = "domain" in r.failed
    # condition 2 only: junction value above min rho
    r = gs.check_admissible(prob, candidate=(d_star + 0.02, *data))
    flags["junction"] = r.failed == ["junction"]
    # condition 3 only: outer datum above nu^d(h_0)
    lo = [-0.5, -1.0, -1.0]
    d_lo = min(prob._node_of(prob.rho(i, d)) for i, d in enumerate(lo))
    r = gs.check_admissible(prob, candidate=(d_lo, *lo))
    flags["outer"] = r.failed == ["outer"]
    r0 = gs.check_admissible(prob, candidate=(d_star - 0.05, *data))
    flags["D0"] = r0.in_D0
    rb = gs.check_admissible(prob, candidate=(d_star, *data))
    flags["boundary"] = rb.verdict and not rb.in_D0
    ok = all(flags.values())
    m = ",".join(f"{k}={'ok' if v else 'no'}" for k, v in flags.items())
    return CriterionResult("A8", m, "all ok", ok, f"D0 margin {r0.margin:g}")


# --- convergence and transit ------------------------------------------------------


def a9_a11_convergence(fixtures=None, use_cache: bool = True):
    fixtures = fixtures or (harness.H3_FIXTURE, harness.H4_FIXTURE)
    t0 = time.time()
    reports = [harness.run_convergence(cfg, use_cache) for cfg in fixtures]
    ok9 = all(r.monotone and r.halved and r.sandwich_ok and r.admissible for r in reports)
    parts, notes = [], []
    for r in reports:
        parts.append("/".join(_fmt(e) for e in r.errors))
        last = r.rows[-1]
        notes.append(f"{r.config.family}: sandwich {_fmt(last.sandwich)} <= {_fmt(last.E)}+{_fmt(r.collar_tolerance)}")
    dt = time.time() - t0
    a9 = CriterionResult("A9", " | ".join(parts), "strictly decreasing, E(last)<=0.5E(first), sandwich", ok9,
                         "; ".join(notes), dt)
    worst = max(r.node_inequality for r in reports)
    a11 = CriterionResult("A11", _fmt(worst), "1e-03", worst <= 1e-3, "max lam*u(node)+G(0,0)", 0.0)
    return a9, a11, reports


def a10_transit(epsilon: float = 0.05) -> CriterionResult:
    worst = 0.0
    for name in ("H3", "H4"):
        f = builtin(name)
        for h in (1e-2, 1e-3, 1e-4):
            r = flow.measure_transit(f, epsilon, h, nu=1.0, trials=32)
            worst = max(worst, r.ratio)
    return CriterionResult("A10", _fmt(worst), "1", worst <= 1.0, "max transit / bound")


CRITERIA = {
    "A1": a1_critical_points, "A2": a2_period_oracle, "A3": a3_period_blowup,
    "A4": a4_clipped_length, "A5": a5_averaging_identities, "A6": a6_coercivity_and_limit,
    "A7": a7_edge_oracle, "A8": a8_admissibility, "A10": a10_transit,
}
SELECTORS = {
    "geometry": ["A1", "A2", "A3", "A4", "A5"],
    "solver": ["A6", "A7", "A8"],
    "transit": ["A10"],
    "convergence": ["A9", "A11"],
    "all": ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10", "A11"],
}


def resolve(selector: str) -> list[str]:
    sel = selector.strip()
    if sel.lower() in SELECTORS:
        return SELECTORS[sel.lower()]
    ids = [s.strip().upper() for s in sel.split(",") if s.strip()]
    valid = set(SELECTORS["all"])
    if ids and all(i in valid for i in ids):
        return ids
    raise ValueError(f"unknown selector {selector!r}; valid: {', '.join(SELECTORS)} "
                     f"or a comma list of {', '.join(SELECTORS['all'])}")


def run_criterion(cid: str) -> list[CriterionResult]:
    if cid in ("A9", "A11"):
        a9, a11, _ = a9_a11_convergence()
        return [a9, a11]
    t0 = time.time()
    try:
        res = CRITERIA[cid]()
    except Exception as e:  # a crashing criterion is a failing criterion
        res = CriterionResult(cid, "error", "-", False, f"{type(e).__name__}: {e}")
    res.runtime = time.time() - t0
    return [res]


def run_acceptance(selector: str = "all", report=None) -> list[CriterionResult]:
    ids = resolve(selector)
    out, done = [], set()
    for cid in ids:
        if cid in done:
            continue
        for r in run_criterion(cid):
            if r.id in ids and r.id not in done:
                out.append(r)
                done.add(r.id)
                if report:
                    report(r)
    return out
