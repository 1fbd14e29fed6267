"""Experiment orchestration: cached pipeline stages, convergence study, power-law fits."""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import averaging as av
from . import eps_solver as es
from . import graph_solver as gs
from . import levelset as ls
from . import storage
from .hamiltonian import HamiltonianField, find_critical_points, parse_family


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, partial: dict):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage, self.cause, self.partial = stage, cause, partial


def _floats(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "h3"
    h0: float = 0.5
    cuts: tuple = (-0.15, -0.15)
    cost: str = "quad:zero"
    lam: float = 1.0
    data: tuple = (-0.8, -1.0, -0.9)  # d_0 (outer), d_1, ...
    junction: float | None = None  # d of the boundary tuple; None uses d* - 0.05
    eps: tuple = (0.4, 0.2, 0.1, 0.05)
    grid: int = 257
    output: str = "hj-out"
    seed: int = 0
    profile_points: int = 60
    profile_innermost: float = 1e-6
    profile_uniform: int = 40
    q_count: int = 513
    dt_factor: float = 1.0

    KEYS = ("family", "h0", "cuts", "cost", "lambda", "data", "junction", "eps", "grid",
            "output", "seed", "profile_points", "profile_innermost", "profile_uniform",
            "q_count", "dt_factor")

    @classmethod
    def from_mapping(cls, kv: dict) -> "ExperimentConfig":
        unknown = set(kv) - set(cls.KEYS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}; valid: {', '.join(cls.KEYS)}")
        conv = {
            "family": str, "h0": float, "cuts": _floats, "cost": str, "lambda": float,
            "data": _floats, "junction": lambda v: None if str(v).lower() in ("", "auto", "none") else float(v),
            "eps": _floats, "grid": int, "output": str, "seed": int, "profile_points": int,
            "profile_innermost": float, "profile_uniform": int, "q_count": int, "dt_factor": float,
        }
        args = {("lam" if k == "lambda" else k): conv[k](v) for k, v in kv.items()}
        cfg = cls(**args)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(storage.read_flat_config(Path(path).read_text()))

    def validate(self):
        if len(self.data) != len(self.cuts) + 1:
            raise ValueError(f"data needs {len(self.cuts) + 1} values (outer edge first)")
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps list must be strictly decreasing")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")

    def to_text(self) -> str:
        def fmt(v):
            return ",".join(repr(x) for x in v) if isinstance(v, tuple) else ("auto" if v is None else str(v))
        lines = []
        for k in self.KEYS:
            lines.append(f"{k} = {fmt(getattr(self, 'lam' if k == 'lambda' else k))}")
        return "\n".join(lines) + "\n"

    @property
    def field(self) -> HamiltonianField:
        return parse_family(self.family)

    @property
    def profile_grid(self) -> ls.ProfileGrid:
        return ls.ProfileGrid(self.profile_points, self.profile_innermost, self.profile_uniform)


H3_FIXTURE = ExperimentConfig()
H4_FIXTURE = ExperimentConfig(family="h4", h0=0.05, cuts=(-0.05, -0.05, -0.05),
                              data=(-0.9, -1.0, -1.0, -1.0), grid=321)


# --- cached stages --------------------------------------------------------------


def build_graph(cfg: ExperimentConfig):
    f = cfg.field
    return f, ls.build_graph(f, cfg.h0, cfg.cuts, points=find_critical_points(f))


def _field_key(f: HamiltonianField):
    return {"name": f.name, "N": f.N, "m": f.m, "n": f.n}


def profiles_for(f, graph, grid: ls.ProfileGrid, use_cache: bool = True):
    key = storage.content_key(kind="profiles", field=_field_key(f), h0=graph.h0, cuts=graph.cuts,
                              grid=(grid.graded, grid.innermost, grid.uniform), v=1)
    return storage.cached("profiles", key, lambda: ls.tabulate_profiles(f, graph, grid),
                          storage.save_profiles, storage.load_profiles, use_cache)


def tables_for(f, graph, profiles, cost: av.RunningCostSpec, lam: float, data,
               q_count: int = 513, grid: ls.ProfileGrid | None = None, use_cache: bool = True):
    bound = max(abs(float(d)) for d in data) if len(data) else 1.0
    grid = grid or ls.ProfileGrid()
    key = storage.content_key(kind="tables", field=_field_key(f), h0=graph.h0, cuts=graph.cuts,
                              grid=(grid.graded, grid.innermost, grid.uniform), cost=cost.label,
                              lam=lam, bound=bound, q=q_count, v=1)
    build = lambda: av.tabulate_all(f, cost, profiles, q_count=q_count, lam=lam, data_bound=bound)
    return storage.cached("tables", key, build, storage.save_tables, storage.load_tables, use_cache)


@dataclass
class Pipeline:
    config: ExperimentConfig
    field: HamiltonianField
    graph: ls.FlowGraph
    cost: av.RunningCostSpec
    profiles: list
    tables: list

    @property
    def problem(self) -> gs.GraphProblem:
        return gs.GraphProblem(self.tables, self.config.lam)


def build_pipeline(cfg: ExperimentConfig, use_cache: bool = True) -> Pipeline:
    partial: dict = {}
    try:
        f, graph = build_graph(cfg)
        partial["graph"] = graph
    except Exception as e:
        raise StageError("graph", e, partial) from e
    cost = av.parse_cost(cfg.cost, f, cfg.lam)
    try:
        prof = profiles_for(f, graph, cfg.profile_grid, use_cache)
        partial["profiles"] = prof
    except Exception as e:
        raise StageError("profiles", e, partial) from e
    try:
        tabs = tables_for(f, graph, prof, cost, cfg.lam, cfg.data, cfg.q_count, cfg.profile_grid, use_cache)
    except Exception as e:
        raise StageError("tables", e, partial) from e
    return Pipeline(cfg, f, graph, cost, prof, tabs)


# --- convergence ------------------------------------------------------------------


def limit_on_grid(grid: es.GridSpec, solution: gs.GraphSolution, innermost: np.ndarray):
    """u_i(H(x)) at interior nodes; nodes inside the innermost collar get the junction value."""
    X = grid.nodes()
    inner = grid.mask == es.INTERIOR
    lab = grid.region_of(X, grid.H)
    ub = np.full(grid.H.shape, np.nan)
    for i in range(len(solution.edges)):
        sel = inner & (lab == i)
        ub[sel] = solution.evaluate(i, grid.H[sel])
    collar = inner & (np.abs(grid.H) <= innermost[np.clip(lab, 0, len(innermost) - 1)])
    ub[collar] = solution.d
    return ub, collar


@dataclass
class EpsRow:
    epsilon: float
    E: float
    region_errors: dict
    boundary_layer: dict
    sandwich: float
    runtime: float
    iterations: int
    fixed_point_residual: float


@dataclass
class ConvergenceReport:
    config: ExperimentConfig
    d_star: float
    admissible: bool
    admissibility: gs.AdmissibilityReport
    rows: list = dc_field(default_factory=list)
    collar_tolerance: float = 0.0
    collar_width: float = 0.0
    node_inequality: float = -np.inf
    node_extrapolation_error: float = 0.0
    fields: list = dc_field(default_factory=list, repr=False)
    solution: gs.GraphSolution | None = dc_field(default=None, repr=False)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.E for r in self.rows])

    @property
    def eps(self) -> np.ndarray:
        return np.array([r.epsilon for r in self.rows])

    @property
    def monotone(self) -> bool:
        e = self.errors
        return bool(np.all(np.diff(e) < 0))

    @property
    def halved(self) -> bool:
        return bool(self.errors[-1] <= 0.5 * self.errors[0])

    @property
    def sandwich_ok(self) -> bool:
        r = self.rows[-1]
        return bool(r.sandwich <= r.E + self.collar_tolerance)

    def csv_rows(self):
        for r in self.rows:
            regions = ";".join(f"{k}:{v!r}" for k, v in sorted(r.region_errors.items()))
            layer = ";".join(f"{k}:{v!r}" for k, v in sorted(r.boundary_layer.items()))
            yield (repr(r.epsilon), repr(r.E), regions, layer, repr(r.sandwich),
                   f"{r.runtime:.2f}", r.iterations, repr(r.fixed_point_residual))


CONVERGENCE_HEADER = ("epsilon", "E", "region_errors", "boundary_layer", "sandwich",
                      "runtime_s", "iterations", "fixed_point_residual")


def all_edge_solutions(pipe: Pipeline, solution: gs.GraphSolution):
    prob = pipe.problem
    out = list(prob.free) + list(solution.edges)
    for i, d in enumerate(solution.data):
        if d <= prob.ceilings[i]:
            out.append(prob.rho(i, d))
        if solution.d <= prob.node_ceilings[i]:
            out.append(prob.nu(i, solution.d))
    return out


def run_convergence(cfg: ExperimentConfig, use_cache: bool = True, progress=None,
                    keep_fields: bool = False) -> ConvergenceReport:
    pipe = build_pipeline(cfg, use_cache)
    partial = {"pipeline": pipe}
    try:
        sol = gs.junction_solve(pipe.tables, cfg.lam, cfg.data)
    except Exception as e:
        raise StageError("graph-solve", e, partial) from e
    d = sol.d - 0.05 if cfg.junction is None else cfg.junction
    rep = gs.check_admissible(pipe.problem, candidate=(d, *cfg.data))
    G00 = pipe.cost.G00()
    edges = all_edge_solutions(pipe, sol)
    report = ConvergenceReport(cfg, sol.d, rep.in_D0, rep, solution=sol)
    report.node_inequality = max(cfg.lam * e.node_value + G00 for e in edges)
    report.node_extrapolation_error = max(e.node_error for e in sol.edges)
    try:
        grid = es.make_grid(pipe.field, pipe.graph, cfg.grid)
    except Exception as e:
        raise StageError("grid", e, partial) from e
    innermost = np.array([np.min(np.abs(p.h)) for p in pipe.profiles])
    ub, collar = limit_on_grid(grid, sol, innermost)
    X = grid.nodes()
    inner = grid.mask == es.INTERIOR
    dist0 = np.abs(grid.H) / np.maximum(np.linalg.norm(pipe.field.DH(X), axis=-1), 1e-300)
    near = inner & (dist0 <= 2 * grid.spacing)
    report.collar_tolerance = float(np.max(np.abs(ub[near] - sol.d)) + report.node_extrapolation_error) if near.any() else 0.0
    report.collar_width = float(innermost.max())
    measured = inner & ~collar
    lab = grid.region_of(X, grid.H)
    ring = _band_ring(grid)
    cache = es.make_controls(pipe.cost, cfg.lam, cfg.data)
    for eps in cfg.eps:
        t0 = time.time()
        try:
            ef = es.solve_eps(pipe.field, pipe.cost, cfg.lam, eps, grid, cfg.data,
                              dt_factor=cfg.dt_factor, cache=cache)
        except Exception as e:
            partial["report"] = report
            raise StageError(f"eps-solve({eps})", e, partial) from e
        err = np.abs(ef.u - ub)
        regions = {int(i): float(err[measured & (lab == i)].max()) for i in range(len(sol.edges))
                   if np.any(measured & (lab == i))}
        layer = {int(i): float(np.max(np.abs(ef.u[ring[i]] - cfg.data[i]))) for i in ring if ring[i].any()}
        row = EpsRow(float(eps), float(err[measured].max()), regions, layer,
                     float(np.max(np.abs(ef.u[near] - sol.d))) if near.any() else 0.0,
                     time.time() - t0, ef.iterations, ef.fixed_point_residual)
        report.rows.append(row)
        if keep_fields:
            report.fields.append(ef)
        if progress:
            progress(row)
    return report


def _band_ring(grid: es.GridSpec) -> dict:
    """Interior nodes adjacent to the band of each boundary component."""
    band = grid.mask == es.BAND
    inner = grid.mask == es.INTERIOR
    out = {}
    for i in np.unique(grid.label[band]):
        b = band & (grid.label == i)
        adj = np.zeros_like(b)
        adj[1:, :] |= b[:-1, :]
        adj[:-1, :] |= b[1:, :]
        adj[:, 1:] |= b[:, :-1]
        adj[:, :-1] |= b[:, 1:]
        out[int(i)] = adj & inner
    return out


# --- fits -----------------------------------------------------------------------


def fit_powerlaw(xs, ys):
    """Least squares on log-log: (slope, intercept, rms residual)."""
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if len(xs) < 4 or len(xs) != len(ys):
        raise ValueError("need at least 4 matching points")
    d = np.diff(xs)
    if not (np.all(d > 0) or np.all(d < 0)):
        raise ValueError("xs must be strictly monotone")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("xs and ys must be positive")
    lx, ly = np.log(xs), np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    res = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return float(slope), float(intercept), res


def period_series(f: HamiltonianField, hs, sign: float = -1.0):
    """Periods T(h) of every loop at the levels sign*|h|; one column per loop."""
    pts = find_critical_points(f)
    cols = []
    for h in hs:
        loops = ls.extract_all_loops(f, sign * abs(h), points=pts)
        cols.append([ls.loop_metrics(lp, f)[1] for lp in loops])
    return np.array(cols)


def write_outputs(report: ConvergenceReport, pipe: Pipeline | None, out_dir, figures: bool = True):
    """CSV tables plus PNG figures for a convergence report."""
    from . import plots

    out = Path(out_dir)
    storage.write_csv(out / "convergence.csv", CONVERGENCE_HEADER, report.csv_rows())
    sol = report.solution
    for e in sol.edges:
        storage.write_csv(out / f"edge_{e.edge}.csv", ("h", "u"), e.rows())
    (out / "admissibility.txt").write_text(report.admissibility.text() + "\n")
    (out / "config.txt").write_text(report.config.to_text())
    if figures:
        plots.convergence_figure(report.eps, report.errors, out / "convergence.png",
                                 title=report.config.family)
        plots.edge_solution_figure(sol, out / "edges.png")
        if pipe is not None:
            plots.period_figure(pipe.profiles, out / "periods.png", title=report.config.family)
        for ef in report.fields:
            plots.field_figure(ef, out / f"field_eps{ef.epsilon:g}.png")
    return out


def replace_config(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    out = replace(cfg, **kw)
    out.validate()
    return out
