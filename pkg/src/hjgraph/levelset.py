"""Loops of constant energy, their length/period integrals, and the graph of loops."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from matplotlib.path import Path
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .hamiltonian import CriticalPoint, HamiltonianField, find_critical_points

LENGTH_CAP = 1e3
PANEL_TURN = 0.1  # max turning angle (and log|DH| change) per Simpson panel
MIN_PANELS = 64


class LevelSetError(RuntimeError):
    pass


@dataclass
class LevelLoop:
    """Closed polyline on {H = level}; vertices double as Simpson panel nodes.

    ``arclength`` is the cumulative arclength of the traced curve (the integrator's
    parameter), ``weights`` the composite Simpson weights against arclength.
    """

    edge: int
    level: float
    vertices: np.ndarray
    arclength: np.ndarray
    weights: np.ndarray
    residual: float

    @property
    def length(self) -> float:
        return float(self.arclength[-1])

    def contains(self, pts) -> np.ndarray:
        return Path(self.vertices).contains_points(np.atleast_2d(pts))

    def rows(self):
        for (a, b), s in zip(self.vertices, self.arclength):
            yield (repr(float(a)), repr(float(b)), repr(float(s)))


def project_to_level(field: HamiltonianField, x, h: float, iters: int = 4):
    x = np.array(x, dtype=float, copy=True)
    for _ in range(iters):
        g = field.DH(x)
        g2 = np.sum(g * g, axis=-1)
        x -= ((field.H(x) - h) / np.where(g2 > 0, g2, 1.0))[..., None] * g
    return x


def _unit_tangent(field):
    def rhs(s, y):
        g = field.DH(y)
        ng = np.hypot(g[0], g[1])
        if ng == 0.0:
            raise LevelSetError(f"tracing reached a critical point at {y}")
        return np.array([g[1] / ng, -g[0] / ng])
    return rhs


def _turn_rates(field, x):
    # curvature of the level curve and d log|DH| / ds, both along the loop
    g = field.DH(x)
    A = field.D2H(x)
    ng = np.linalg.norm(g, axis=1)
    t = np.stack([g[:, 1], -g[:, 0]], axis=1) / ng[:, None]
    At = np.einsum("nij,nj->ni", A, t)
    kappa = np.abs(np.einsum("ni,ni->n", t, At)) / ng
    dlog = np.abs(np.einsum("ni,ni->n", At, g)) / ng ** 2
    return np.maximum(kappa, dlog), ng


def trace_loop(field: HamiltonianField, h: float, seed, tol: float = 1e-9,
               edge: int | None = None, points: list[CriticalPoint] | None = None) -> LevelLoop:
    """Trace the component of {H = h} through ``seed`` by unit-speed flow along b."""
    if h == 0:
        raise ValueError("the critical level h = 0 cannot be traced")
    x0 = project_to_level(field, np.asarray(seed, dtype=float), h, iters=8)
    g0 = field.DH(x0)
    t0 = np.array([g0[1], -g0[0]]) / np.hypot(*g0)
    rhs = _unit_tangent(field)
    rtol, atol = max(tol * 1e-3, 2.3e-14), tol * 1e-3

    def section(s, y):
        return float((y[0] - x0[0]) * t0[0] + (y[1] - x0[1]) * t0[1])

    section.direction = 1.0
    pieces, s0, y0, reach, chunk = [], 0.0, x0, 0.0, 1.0
    closed_at = None
    while s0 < LENGTH_CAP and closed_at is None:
        span = (s0, min(s0 + chunk, LENGTH_CAP))
        sol = solve_ivp(rhs, span, y0, method="DOP853", rtol=rtol, atol=atol,
                        events=section, dense_output=True)
        if sol.status == -1:
            raise LevelSetError(f"tracing failed at level {h}: {sol.message}")
        pieces.append(sol)
        reach = max(reach, float(np.max(np.linalg.norm(sol.y.T - x0, axis=1))))
        for se, ye in zip(sol.t_events[0], sol.y_events[0]):
            if se > 1e-9 and np.linalg.norm(ye - x0) < 0.5 * reach:
                closed_at = float(se)
                break
        s0, y0 = float(sol.t[-1]), sol.y[:, -1]
        chunk *= 2
    if closed_at is None:
        raise LevelSetError(f"loop at level {h} did not close within length {LENGTH_CAP}")
    L = closed_at

    steps = np.concatenate([p.t for p in pieces])
    steps = np.unique(np.clip(steps, 0.0, L))
    if steps[-1] < L:
        steps = np.append(steps, L)

    def at(s):
        s = np.atleast_1d(s)
        out = np.empty((len(s), 2))
        lo = 0.0
        for p in pieces:
            sel = (s >= lo) & (s <= p.t[-1] + 1e-15)
            if sel.any():
                out[sel] = p.sol(s[sel]).T
            lo = p.t[-1]
        return out

    rate, ng = _turn_rates(field, at(steps))
    med = np.median(ng)
    seg = np.diff(steps)
    rmax = np.maximum(rate[:-1], rate[1:])
    npan = np.maximum(np.ceil(seg * rmax / PANEL_TURN), np.ceil(seg * MIN_PANELS / L))
    small = np.minimum(ng[:-1], ng[1:]) < 0.1 * med
    npan = np.where(small, 4 * npan, npan).astype(int)
    npan = np.maximum(npan, 1)
    bounds = [np.linspace(a, b, k + 1)[:-1] for a, b, k in zip(steps[:-1], steps[1:], npan)]
    edges_s = np.append(np.concatenate(bounds), L)
    mids = 0.5 * (edges_s[:-1] + edges_s[1:])
    s_nodes = np.empty(2 * len(mids) + 1)
    s_nodes[0::2] = edges_s
    s_nodes[1::2] = mids
    verts = project_to_level(field, at(s_nodes), h)
    verts[-1] = verts[0]
    widths = np.diff(edges_s)
    w = np.zeros(len(s_nodes))
    w[0:-1:2] += widths / 6
    w[2::2] += widths / 6
    w[1::2] += 4 * widths / 6
    residual = float(np.max(np.abs(field.H(verts) - h)))
    if residual > 1e-8 * (1 + abs(h)):
        raise LevelSetError(f"level residual {residual:.2e} at level {h}")

    loop = LevelLoop(-1, float(h), verts, s_nodes, w, residual)
    loop.edge = _identify_edge(field, loop, points) if edge is None else edge
    return loop


def _identify_edge(field, loop, points):
    if loop.level > 0:
        return 0
    points = find_critical_points(field) if points is None else points
    inside = [p.index for p in points if p.kind == "local-min" and loop.contains(p.location)[0]]
    if len(inside) != 1:
        raise LevelSetError(f"loop at level {loop.level} encloses {len(inside)} minima")
    return inside[0]


def check_winding(loop: LevelLoop, points: list[CriticalPoint]) -> bool:
    if loop.edge == 0:
        return bool(np.all(loop.contains(np.array([p.location for p in points]))))
    z = [p.location for p in points if p.index == loop.edge][0]
    others = [p.location for p in points if p.index != loop.edge]
    ok_self = bool(loop.contains(z)[0])
    ok_others = not np.any(loop.contains(np.array(others))) if others else True
    return ok_self and ok_others


def ray_seed(field: HamiltonianField, h: float, start, direction, reach: float = 8.0):
    """First point with H = h on the ray start + t*direction, t > 0."""
    start = np.asarray(start, float)
    u = np.asarray(direction, float)
    u = u / np.linalg.norm(u)
    f = lambda t: float(field.H(start + t * u) - h)
    if f(0.0) >= 0:
        raise LevelSetError(f"ray start is not below level {h}")
    ts = np.linspace(0.0, reach, 4001)
    vals = field.H(start + ts[:, None] * u) - h
    k = np.argmax(vals > 0)
    if vals[k] <= 0:
        raise LevelSetError(f"level {h} not reached along the seed ray")
    t = brentq(f, ts[k - 1], ts[k], xtol=1e-15, rtol=1e-15)
    return start + t * u


def _well_ray(point: CriticalPoint):
    z = point.location
    nz = np.linalg.norm(z)
    return z, (z / nz if nz > 0 else np.array([1.0, 0.0]))


def seed_for(field, h, edge, points):
    mins = [p for p in points if p.kind == "local-min"]
    if edge == 0:
        if field.N < 3:
            return ray_seed(field, h, mins[0].location, (1.0, 0.0))
        start, u = _well_ray(mins[0])
    else:
        start, u = _well_ray([p for p in points if p.index == edge][0])
    return ray_seed(field, h, start, u)


def extract_all_loops(field: HamiltonianField, h: float, tol: float = 1e-9,
                      points: list[CriticalPoint] | None = None) -> list[LevelLoop]:
    """All components of {H = h}: one per well below h for h < 0, one outer loop for h > 0."""
    if h == 0:
        raise ValueError("h must be non-zero")
    points = find_critical_points(field) if points is None else points
    if h > 0:
        lp = trace_loop(field, h, seed_for(field, h, 0, points), tol, edge=0, points=points)
        if not check_winding(lp, points):
            raise LevelSetError(f"outer loop at level {h} does not enclose every critical point")
        return [lp]
    loops = []
    for p in points:
        if p.kind == "local-min" and p.energy < h and field.N >= 3:
            lp = trace_loop(field, h, seed_for(field, h, p.index, points), tol,
                            edge=p.index, points=points)
            if not check_winding(lp, points):
                raise LevelSetError(f"loop of well {p.index} at level {h} has wrong topology")
            loops.append(lp)
    return loops


def points_along(loop: LevelLoop, k: int, rng=None, field: HamiltonianField | None = None):
    """k points spread uniformly in arclength (random phase if rng is given).

    With ``field`` the points are projected back onto the loop's level.
    """
    phase = rng.uniform() if rng is not None else 0.0
    s = (np.arange(k) + phase) / k * loop.length
    x = np.column_stack([np.interp(s, loop.arclength, loop.vertices[:, 0]),
                         np.interp(s, loop.arclength, loop.vertices[:, 1])])
    return x if field is None else project_to_level(field, x, loop.level, iters=6)


def loop_metrics(loop: LevelLoop, field: HamiltonianField):
    """Length L and period T = integral of 1/|DH| along the loop."""
    ng = np.linalg.norm(field.DH(loop.vertices), axis=1)
    if ng.min() < 1e-12:
        raise LevelSetError(f"|DH| below 1e-12 on the loop at level {loop.level}")
    return float(np.sum(loop.weights)), float(np.sum(loop.weights / ng))


def line_integral(loop: LevelLoop, values) -> float:
    return float(np.sum(loop.weights * values))


def clipped_length(loop: LevelLoop, r: float) -> float:
    """Total polyline length inside the open disc of radius r about the origin."""
    p = loop.vertices[:-1]
    d = loop.vertices[1:] - p
    a = np.sum(d * d, axis=1)
    b = 2 * np.sum(p * d, axis=1)
    c = np.sum(p * p, axis=1) - r * r
    disc = b * b - 4 * a * c
    ok = (disc > 0) & (a > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    safe = np.where(a > 0, a, 1.0)
    t1 = np.clip((-b - sq) / (2 * safe), 0.0, 1.0)
    t2 = np.clip((-b + sq) / (2 * safe), 0.0, 1.0)
    frac = np.where(ok, t2 - t1, 0.0)
    return float(np.sum(np.sqrt(a) * frac))


# --- the graph of loops ------------------------------------------------------


@dataclass
class Edge:
    index: int
    interval: tuple[float, float]  # open interval J_i
    outer_level: float  # h_i (h_0 for the outer edge)
    minimum: CriticalPoint | None

    @property
    def node_sign(self) -> float:
        return 1.0 if self.index == 0 else -1.0


@dataclass
class FlowGraph:
    field_name: str
    h0: float
    cuts: tuple[float, ...]
    edges: list[Edge]
    points: list[CriticalPoint]
    boundary_loops: dict[int, list[LevelLoop]] = dc_field(default_factory=dict)

    @property
    def node_degree(self) -> int:
        return len(self.edges)

    @property
    def h_bar(self) -> float:
        return min(abs(e.outer_level) for e in self.edges)

    def edge(self, i: int) -> Edge:
        return self.edges[i]


def build_graph(field: HamiltonianField, h0: float, cuts, box_radius: float = 4.0,
                points: list[CriticalPoint] | None = None) -> FlowGraph:
    """One node at level 0, one edge per well plus the outer edge (0, h0)."""
    if not field.is_graph_type:
        raise ValueError(f"{field.name} has no saddle; no graph can be built")
    points = find_critical_points(field) if points is None else points
    mins = [p for p in points if p.kind == "local-min"]
    cuts = tuple(float(c) for c in cuts)
    if h0 <= 0:
        raise ValueError("h0 must be positive")
    if len(cuts) != len(mins):
        raise ValueError(f"need {len(mins)} cuts, got {len(cuts)}")
    for p, c in zip(mins, cuts):
        if not (p.energy < c < 0):
            raise ValueError(f"cut {c} for well {p.index} must lie in ({p.energy:.6g}, 0)")
    outer = extract_all_loops(field, h0, points=points)
    if np.max(np.linalg.norm(outer[0].vertices, axis=1)) > box_radius:
        raise ValueError(f"level h0={h0} leaves the compute box of radius {box_radius}")
    edges = [Edge(0, (0.0, h0), h0, None)]
    loops = {0: outer}
    for p, c in zip(mins, cuts):
        edges.append(Edge(p.index, (c, 0.0), c, p))
        lp = trace_loop(field, c, seed_for(field, c, p.index, points), edge=p.index,
                        points=points)
        loops[p.index] = [lp]
    return FlowGraph(field.name, h0, cuts, edges, points, loops)


@dataclass(frozen=True)
class ProfileGrid:
    """Levels graded geometrically toward the node plus a uniform layer."""

    graded: int = 60
    innermost: float = 1e-6  # relative to |h_i|
    uniform: int = 40

    def levels(self, outer: float) -> np.ndarray:
        mag = abs(outer)
        g = mag * np.geomspace(1.0, self.innermost, self.graded)
        u = np.linspace(mag, 0.0, self.uniform + 1)[:-1] if self.uniform else np.empty(0)
        lv = np.unique(np.concatenate([g, u]))
        return np.sign(outer) * lv


@dataclass
class EdgeProfile:
    edge: int
    h: np.ndarray  # ascending
    L: np.ndarray
    T: np.ndarray
    loops: list[LevelLoop] = dc_field(repr=False, default_factory=list)
    truncated: bool = False

    @property
    def node_index(self) -> int:
        """Index of the level nearest to the node h = 0."""
        return int(np.argmin(np.abs(self.h)))

    @property
    def outer_index(self) -> int:
        return int(np.argmax(np.abs(self.h)))

    def rows(self):
        for a, b, c in zip(self.h, self.L, self.T):
            yield (repr(float(a)), repr(float(b)), repr(float(c)))


def profile_for_edge(field, edge: Edge, grid: ProfileGrid, points, tol: float = 1e-9) -> EdgeProfile:
    levels = grid.levels(edge.outer_level)
    order = np.argsort(np.abs(levels))[::-1]  # from the outer cut toward the node
    hs, Ls, Ts, loops = [], [], [], []
    truncated = False
    for k in order:
        h = float(levels[k])
        try:
            lp = trace_loop(field, h, seed_for(field, h, edge.index, points), tol,
                            edge=edge.index, points=points)
            L, T = loop_metrics(lp, field)
        except LevelSetError:
            truncated = True
            break
        hs.append(h)
        Ls.append(L)
        Ts.append(T)
        loops.append(lp)
    idx = np.argsort(hs)
    return EdgeProfile(edge.index, np.asarray(hs)[idx], np.asarray(Ls)[idx],
                       np.asarray(Ts)[idx], [loops[i] for i in idx], truncated)


def tabulate_profiles(field: HamiltonianField, graph: FlowGraph,
                      grid: ProfileGrid | None = None, tol: float = 1e-9) -> list[EdgeProfile]:
    grid = ProfileGrid() if grid is None else grid
    return [profile_for_edge(field, e, grid, graph.points, tol) for e in graph.edges]


def trapezoid_T(profile: EdgeProfile) -> float:
    """Trapezoidal integral of T over the tabulated part of the edge."""
    return float(np.trapz(profile.T, profile.h))
