"""Limit problems lam*u + Gbar_i(h, u') = 0 on the edges, junction value and admissibility."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numba
import numpy as np
from scipy.interpolate import PchipInterpolator

from .averaging import AveragedTable, TableError

MAX_SWEEPS = 10 ** 6


class FeasibilityError(ValueError):
    pass


@dataclass(frozen=True)
class Free:
    def __repr__(self):
        return "free"


@dataclass(frozen=True)
class Dirichlet:
    value: float

    def __repr__(self):
        return f"dirichlet({self.value!r})"


FREE = Free()


# --- Godunov sweep kernel -----------------------------------------------------


@numba.njit(cache=True)
def _branch_root(u_nb, delta, q, v, kstar, lam, side):
    """Root u of lam*u + row(p) = 0 on the monotone branch facing the neighbour.

    side=+1: neighbour on the left, p = (u - u_nb)/delta >= q*.
    side=-1: neighbour on the right, p = (u_nb - u)/delta <= q*.
    Returns (u, clipped); u = +inf when the branch has no root below the stay value.
    """
    nq = q.shape[0]
    if side > 0:
        if lam * (u_nb + delta * q[kstar]) + v[kstar] >= 0.0:
            return np.inf, False
        if lam * (u_nb + delta * q[nq - 1]) + v[nq - 1] < 0.0:
            return u_nb + delta * q[nq - 1], True
        lo, hi = kstar, nq - 1
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if lam * (u_nb + delta * q[mid]) + v[mid] < 0.0:
                lo = mid
            else:
                hi = mid
        f0 = lam * (u_nb + delta * q[lo]) + v[lo]
        f1 = lam * (u_nb + delta * q[hi]) + v[hi]
        p = q[lo] + (q[hi] - q[lo]) * (-f0) / (f1 - f0)
        return u_nb + delta * p, False
    else:
        if lam * (u_nb - delta * q[kstar]) + v[kstar] >= 0.0:
            return np.inf, False
        if lam * (u_nb - delta * q[0]) + v[0] < 0.0:
            return u_nb - delta * q[0], True
        lo, hi = 0, kstar  # phi decreasing in p on this branch
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if lam * (u_nb - delta * q[mid]) + v[mid] < 0.0:
                hi = mid
            else:
                lo = mid
        f0 = lam * (u_nb - delta * q[lo]) + v[lo]
        f1 = lam * (u_nb - delta * q[hi]) + v[hi]
        p = q[lo] + (q[hi] - q[lo]) * (-f0) / (f1 - f0)
        return u_nb - delta * p, False


@numba.njit(cache=True)
def _local(j, u, h, Q, V, kstar, stay, lam):
    n = u.shape[0]
    best = stay[j]
    clipped = False
    if j > 0:
        r, c = _branch_root(u[j - 1], h[j] - h[j - 1], Q[j], V[j], kstar[j], lam, 1)
        clipped = clipped or c
        if r < best:
            best = r
    if j < n - 1:
        r, c = _branch_root(u[j + 1], h[j + 1] - h[j], Q[j], V[j], kstar[j], lam, -1)
        clipped = clipped or c
        if r < best:
            best = r
    return best, clipped


@numba.njit(cache=True)
def _sweeps(u, h, Q, V, kstar, stay, lam, dl, dr, tol, max_sweeps):
    """Alternating Gauss-Seidel; dl/dr are Dirichlet values (nan = free end)."""
    n = u.shape[0]
    clipped = 0
    for s in range(max_sweeps):
        worst = 0.0
        forward = s % 2 == 0
        for k in range(n):
            j = k if forward else n - 1 - k
            val, c = _local(j, u, h, Q, V, kstar, stay, lam)
            if c:
                clipped += 1
            if j == 0 and not np.isnan(dl):
                val = min(val, dl)
            if j == n - 1 and not np.isnan(dr):
                val = min(val, dr)
            d = abs(val - u[j])
            if d > worst:
                worst = d
            u[j] = val
        if worst < tol:
            return s + 1, worst, clipped
    return max_sweeps, worst, clipped


# --- edge solutions -------------------------------------------------------------


@dataclass
class EdgeSolution:
    edge: int
    h: np.ndarray
    u: np.ndarray
    left: object
    right: object
    node_side: str  # "left" | "right" | "none"
    node_value: float
    node_error: float
    attained: dict
    sweeps: int
    final_update: float

    def value_at(self, hq):
        return PchipInterpolator(self.h, self.u, extrapolate=True)(hq)

    @property
    def outer_value(self) -> float:
        return float(self.u[0] if self.node_side == "right" else self.u[-1])

    def rows(self):
        for a, b in zip(self.h, self.u):
            yield (repr(float(a)), repr(float(b)))


def _node_side(table: AveragedTable) -> str:
    if table.h[-1] <= 0:
        return "right"
    if table.h[0] >= 0:
        return "left"
    return "none"


def extrapolate_to_node(h, u, side: str):
    """Monotone-cubic value at h = 0 from the 4 innermost levels; error from the 3-point fit."""
    if side == "none":
        return float("nan"), float("nan")
    hh, uu = (h[-4:], u[-4:]) if side == "right" else (h[:4], u[:4])
    if np.any(hh == 0):
        return float(uu[hh == 0][0]), 0.0
    v4 = float(PchipInterpolator(hh, uu, extrapolate=True)(0.0))
    h3, u3 = (hh[1:], uu[1:]) if side == "right" else (hh[:3], uu[:3])
    v3 = float(PchipInterpolator(h3, u3, extrapolate=True)(0.0))
    return v4, abs(v4 - v3)


def _prepare(table: AveragedTable, lam: float):
    Q = np.ascontiguousarray(table.q, dtype=float)
    V = np.ascontiguousarray(table.values, dtype=float)
    kstar = np.argmin(V, axis=1).astype(np.int64)
    stay = -V[np.arange(len(V)), kstar] / lam
    return Q, V, kstar, stay


def _solve(table: AveragedTable, lam: float, left, right, tol: float = 1e-10,
           max_sweeps: int = MAX_SWEEPS, u0=None) -> EdgeSolution:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    for bc in (left, right):
        if isinstance(bc, Dirichlet) and not np.isfinite(bc.value):
            raise ValueError("Dirichlet values must be finite")
    h = np.ascontiguousarray(table.h, dtype=float)
    Q, V, kstar, stay = _prepare(table, lam)
    dl = left.value if isinstance(left, Dirichlet) else np.nan
    dr = right.value if isinstance(right, Dirichlet) else np.nan
    u = stay.copy() if u0 is None else np.array(u0, dtype=float)
    if not np.isnan(dl):
        u[0] = min(u[0], dl)
    if not np.isnan(dr):
        u[-1] = min(u[-1], dr)
    sweeps, upd, clipped = _sweeps(u, h, Q, V, kstar, stay, float(lam), dl, dr, tol, max_sweeps)
    if clipped:
        raise TableError(f"edge {table.edge}: {clipped} slope queries left the tabulated q-range")
    if upd >= tol:
        raise RuntimeError(f"edge {table.edge}: no convergence in {max_sweeps} sweeps (update {upd:.2e})")
    # interior value at a Dirichlet end, to report whether the data is attained
    attained = {}
    for end, d in (("left", dl), ("right", dr)):
        if not np.isnan(d):
            j = 0 if end == "left" else len(u) - 1
            interior, _ = _local(j, u, h, Q, V, kstar, stay, float(lam))
            attained[end] = bool(d <= interior)
    side = _node_side(table)
    nv, ne = extrapolate_to_node(h, u, side)
    return EdgeSolution(table.edge, h, u, left, right, side, nv, ne, attained, int(sweeps), float(upd))


def solve_edge(table: AveragedTable, lam: float, left_bc, right_bc, tol: float = 1e-10,
               max_sweeps: int = MAX_SWEEPS) -> EdgeSolution:
    """Maximal discrete subsolution with min(data, interior) imposed at Dirichlet ends."""
    if not (isinstance(left_bc, Dirichlet) or isinstance(right_bc, Dirichlet)):
        raise ValueError("at least one endpoint must carry Dirichlet data")
    return _solve(table, lam, left_bc, right_bc, tol, max_sweeps)


def _ends(table):
    """(outer end, node end) as 'left'/'right'."""
    return ("left", "right") if _node_side(table) == "right" else ("right", "left")


def _bcs(table, outer=FREE, node=FREE):
    o, _ = _ends(table)
    return (outer, node) if o == "left" else (node, outer)


def free_solution(table: AveragedTable, lam: float, tol: float = 1e-10) -> EdgeSolution:
    left, right = _bcs(table)
    return _solve(table, lam, left, right, tol)


def feasibility_ceiling(table: AveragedTable, lam: float, endpoint: str = "outer",
                        tol: float = 1e-10) -> float:
    """Largest datum at ``endpoint`` ('outer' or 'node') that some subsolution attains."""
    sol = free_solution(table, lam, tol)
    if endpoint == "outer":
        return sol.outer_value
    if endpoint == "node":
        return float(sol.u[-1] if sol.node_side == "right" else sol.u[0])
    raise ValueError("endpoint must be 'outer' or 'node'")


def is_attained(table: AveragedTable, lam: float, endpoint: str, d: float) -> bool:
    if endpoint == "outer":
        left, right = _bcs(table, outer=Dirichlet(d))
    else:
        left, right = _bcs(table, node=Dirichlet(d))
    sol = _solve(table, lam, left, right)
    o, n = _ends(table)
    return sol.attained[o if endpoint == "outer" else n]


def maximal_subsolution_rho(table: AveragedTable, lam: float, d: float,
                            ceiling: float | None = None) -> EdgeSolution:
    """rho^d: data d at the outer cut, free at the node."""
    a = feasibility_ceiling(table, lam, "outer") if ceiling is None else ceiling
    if d > a:
        raise FeasibilityError(f"edge {table.edge}: d={d} exceeds the feasibility ceiling {a}")
    left, right = _bcs(table, outer=Dirichlet(d))
    return _solve(table, lam, left, right)


def maximal_subsolution_nu(table: AveragedTable, lam: float, d: float,
                           ceiling: float | None = None) -> EdgeSolution:
    """nu^d: data d at the node (innermost level), free at the outer cut."""
    a = feasibility_ceiling(table, lam, "node") if ceiling is None else ceiling
    if d > a:
        raise FeasibilityError(f"edge {table.edge}: node datum {d} exceeds the ceiling {a}")
    left, right = _bcs(table, node=Dirichlet(d))
    return _solve(table, lam, left, right)


def node_value(sol: EdgeSolution) -> float:
    return sol.node_value


# --- admissibility ----------------------------------------------------------------


@dataclass
class AdmissibilityReport:
    ceilings: list  # a_i, I_i = (-inf, a_i]
    node_ceilings: list  # sup_d rho_i^d(0) per edge
    rho0: float
    rho_node: list  # rho_i^{d_i}(0), nan when d_i is infeasible
    nu_outer: list  # nu_i^d(h_i), nan when d is infeasible
    in_domain: bool  # condition 1: d in I and d_i in I_i
    junction_ok: bool  # condition 2: min_i rho_i^{d_i}(0) >= d
    outer_ok: bool  # condition 3: nu_i^d(h_i) >= d_i
    margin: float  # largest shift a with the shifted tuple admissible (0 if none)
    candidate: tuple

    @property
    def verdict(self) -> bool:
        return self.in_domain and self.junction_ok and self.outer_ok

    @property
    def in_D0(self) -> bool:
        return self.verdict and self.margin > 0

    @property
    def failed(self) -> list[str]:
        names = ("domain", "junction", "outer")
        flags = (self.in_domain, self.junction_ok, self.outer_ok)
        return [n for n, f in zip(names, flags) if not f]

    def text(self) -> str:
        lines = [f"candidate = {list(self.candidate)}",
                 f"ceilings a_i = {self.ceilings}", f"rho0 = {self.rho0!r}",
                 f"rho_i(0) = {self.rho_node}", f"nu_i(h_i) = {self.nu_outer}",
                 f"domain = {self.in_domain}", f"junction = {self.junction_ok}",
                 f"outer = {self.outer_ok}", f"verdict = {self.verdict}",
                 f"margin = {self.margin!r}", f"D0 = {self.in_D0}"]
        return "\n".join(lines)


class GraphProblem:
    """Per-edge tables with memoised ceilings and maximal subsolutions."""

    def __init__(self, tables: list[AveragedTable], lam: float):
        self.tables = tables
        self.lam = float(lam)
        self.free = [free_solution(t, lam) for t in tables]
        self.ceilings = [s.outer_value for s in self.free]
        self.node_ceilings = [float(s.u[-1] if s.node_side == "right" else s.u[0]) for s in self.free]
        self.rho0 = min(self.node_ceilings)

    def rho(self, i, d) -> EdgeSolution:
        return maximal_subsolution_rho(self.tables[i], self.lam, d, self.ceilings[i])

    def nu(self, i, d) -> EdgeSolution:
        return maximal_subsolution_nu(self.tables[i], self.lam, d, self.node_ceilings[i])

    def _node_of(self, sol):
        return float(sol.u[-1] if sol.node_side == "right" else sol.u[0])

    def evaluate(self, d, data):
        dom = d <= self.rho0 and all(di <= a for di, a in zip(data, self.ceilings))
        rho_node = [self._node_of(self.rho(i, di)) if di <= self.ceilings[i] else float("nan")
                    for i, di in enumerate(data)]
        nu_out = [self.nu(i, d).outer_value if d <= self.node_ceilings[i] else float("nan")
                  for i in range(len(self.tables))]
        junction = bool(np.all(np.isfinite(rho_node)) and min(rho_node) >= d)
        outer = bool(np.all(np.isfinite(nu_out)) and all(v >= di for v, di in zip(nu_out, data)))
        return dom, junction, outer, rho_node, nu_out


def check_admissible(tables_or_problem, lam: float | None = None, candidate=None,
                     shifts: int = 20) -> AdmissibilityReport:
    """Evaluate the three admissibility conditions and the D0 shift test for (d, d_0, ...)."""
    prob = tables_or_problem if isinstance(tables_or_problem, GraphProblem) else GraphProblem(tables_or_problem, lam)
    d, data = float(candidate[0]), [float(x) for x in candidate[1:]]
    if len(data) != len(prob.tables):
        raise ValueError(f"candidate needs {len(prob.tables)} edge data after d")
    dom, junction, outer, rho_node, nu_out = prob.evaluate(d, data)
    margin = 0.0
    if dom and junction and outer:
        for k in range(shifts + 1):
            a = 2.0 ** -k
            if all(prob.evaluate(d + a, [x + a for x in data])[:3]):
                margin = a
                break
    return AdmissibilityReport(prob.ceilings, prob.node_ceilings, prob.rho0, rho_node, nu_out,
                               dom, junction, outer, margin, (d, *data))


# --- junction ---------------------------------------------------------------------


@dataclass
class GraphSolution:
    edges: list[EdgeSolution]
    d: float
    data: list
    report: AdmissibilityReport
    lam: float

    @property
    def continuity_residual(self) -> float:
        return float(max(abs(e.node_value - self.d) for e in self.edges))

    @property
    def attained(self) -> dict:
        return {e.edge: dict(e.attained) for e in self.edges}

    def evaluate(self, edge: int, hq):
        return self.edges[edge].value_at(hq)

    def node_inequality(self, G00: float) -> float:
        """max_i lam*u_i(node) + G(0,0) (should be <= 0 up to the scheme)."""
        return float(max(self.lam * e.node_value + G00 for e in self.edges))


def junction_solve(tables: list[AveragedTable], lam: float, data) -> GraphSolution:
    """d* = min_i rho_i^{d_i}(0), then each edge solved with d_i outside and d* at the node."""
    prob = GraphProblem(tables, lam)
    data = [float(x) for x in data]
    for i, (di, a) in enumerate(zip(data, prob.ceilings)):
        if di > a:
            raise FeasibilityError(f"edge {i}: datum {di} exceeds the feasibility ceiling {a}")
    rho_node = [prob._node_of(prob.rho(i, di)) for i, di in enumerate(data)]
    d_star = min(rho_node)
    edges = []
    for t, di in zip(tables, data):
        left, right = _bcs(t, outer=Dirichlet(di), node=Dirichlet(d_star))
        edges.append(_solve(t, lam, left, right))
    report = check_admissible(prob, candidate=(d_star, *data))
    return GraphSolution(edges, d_star, data, report, float(lam))


# --- diagnostics ------------------------------------------------------------------


def subsolution_residual(sol: EdgeSolution, table: AveragedTable, lam: float) -> np.ndarray:
    """Godunov residual lam*u_j + g(D-u, D+u) at interior nodes."""
    u, h = sol.u, sol.h
    out = np.empty(len(u) - 2)
    for j in range(1, len(u) - 1):
        q, v = table.row(j)
        k = int(np.argmin(v))
        qs = q[k]
        a = (u[j] - u[j - 1]) / (h[j] - h[j - 1])
        b = (u[j + 1] - u[j]) / (h[j + 1] - h[j])
        ga = np.interp(min(max(a, qs), q[-1]), q, v)
        gb = np.interp(max(min(b, qs), q[0]), q, v)
        out[j - 1] = lam * u[j] + max(ga, gb)
    return out


def gronwall_excess(sol: EdgeSolution, table: AveragedTable, lam: float) -> float:
    """max over grid pairs of |lam u(h) - M| - |lam u(a) - M| exp(lam |int T/(nu L)|)."""
    w = table.T / (table.nu * table.L)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(table.h))])
    lhs = np.abs(lam * sol.u - table.M)
    growth = np.exp(lam * np.abs(cum[:, None] - cum[None, :]))
    return float(np.max(lhs[:, None] - lhs[None, :] * growth))


def equicontinuity_excess(solutions: list[EdgeSolution], table: AveragedTable, lam: float) -> float:
    """max |u(h) - u(h')| - int (T/(nu L)) (M + lam max|u|) over consecutive pairs."""
    w = table.T / (table.nu * table.L)
    seg = 0.5 * (w[1:] + w[:-1]) * np.diff(table.h)
    bound_u = max(np.max(np.abs(s.u)) for s in solutions)
    worst = -np.inf
    for s in solutions:
        worst = max(worst, float(np.max(np.abs(np.diff(s.u)) - seg * (table.M + lam * bound_u))))
    return worst
