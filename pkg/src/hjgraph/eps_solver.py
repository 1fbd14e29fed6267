"""Semi-Lagrangian solver for lam*u - b.Du/eps + G(x, Du) = 0 in the domain between the cuts."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .averaging import RunningCostSpec
from .hamiltonian import HamiltonianField
from .levelset import FlowGraph

EXTERIOR, INTERIOR, BAND = 0, 1, 2


# --- grid ---------------------------------------------------------------------


@dataclass
class GridSpec:
    """Uniform node grid over the domain's bounding box with region labels.

    ``mask`` is EXTERIOR/INTERIOR/BAND per node and ``label`` the edge index of
    interior nodes, or of the boundary component an exterior node belongs to.
    Arrays are indexed [j, i] with j along x2.
    """

    box: tuple
    nx: int
    ny: int
    h0: float
    cuts: tuple
    minima: np.ndarray
    mask: np.ndarray = dc_field(repr=False)
    label: np.ndarray = dc_field(repr=False)
    H: np.ndarray = dc_field(repr=False)

    @property
    def dx(self) -> float:
        return (self.box[1] - self.box[0]) / (self.nx - 1)

    @property
    def dy(self) -> float:
        return (self.box[3] - self.box[2]) / (self.ny - 1)

    @property
    def spacing(self) -> float:
        return max(self.dx, self.dy)

    def nodes(self) -> np.ndarray:
        xs = np.linspace(self.box[0], self.box[1], self.nx)
        ys = np.linspace(self.box[2], self.box[3], self.ny)
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def well_of(self, x) -> np.ndarray:
        """Edge index (1..) of the nearest minimum."""
        d = np.linalg.norm(np.asarray(x)[..., None, :] - self.minima, axis=-1)
        return np.argmin(d, axis=-1) + 1

    def cut_of(self, x) -> np.ndarray:
        return np.asarray(self.cuts)[self.well_of(x) - 1]

    def region_of(self, x, Hx) -> np.ndarray:
        """Edge label of points (0 above the node level, else their well)."""
        return np.where(Hx > 0, 0, self.well_of(x))

    def pgm(self) -> bytes:
        shade = np.where(self.mask == INTERIOR, 255, np.where(self.mask == BAND, 128, 0)).astype(np.uint8)
        head = f"P5\n{self.nx} {self.ny}\n255\n".encode()
        return head + shade[::-1].tobytes()


def make_grid(field: HamiltonianField, graph: FlowGraph, n: int, box=None,
              margin_cells: int = 3) -> GridSpec:
    if n < 9:
        raise ValueError("grid needs at least 9 nodes per axis")
    mins = np.array([p.location for p in graph.points if p.kind == "local-min"])
    if box is None:
        v = graph.boundary_loops[0][0].vertices
        lo, hi = v.min(axis=0), v.max(axis=0)
        pad = (hi - lo) * margin_cells / (n - 1 - 2 * margin_cells)
        box = (lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])
    g = GridSpec(tuple(float(b) for b in box), n, n, graph.h0, tuple(graph.cuts), mins,
                 np.zeros((n, n), np.int8), np.zeros((n, n), np.int16), np.zeros((n, n)))
    X = g.nodes()
    H = field.H(X)
    well = g.well_of(X)
    cut = np.asarray(graph.cuts)[well - 1]
    inside = (H < graph.h0) & (H > cut)
    outer_side = H >= graph.h0
    label = np.where(inside, np.where(H > 0, 0, well), np.where(outer_side, 0, well))
    grown = inside.copy()
    grown[1:, :] |= inside[:-1, :]
    grown[:-1, :] |= inside[1:, :]
    grown[:, 1:] |= inside[:, :-1]
    grown[:, :-1] |= inside[:, 1:]
    grown[1:, 1:] |= inside[:-1, :-1]
    grown[:-1, :-1] |= inside[1:, 1:]
    grown[1:, :-1] |= inside[:-1, 1:]
    grown[:-1, 1:] |= inside[1:, :-1]
    mask = np.where(inside, INTERIOR, np.where(grown, BAND, EXTERIOR)).astype(np.int8)
    if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
        raise ValueError("domain touches the bounding box; enlarge the box")
    g.mask, g.label, g.H = mask, label.astype(np.int16), H
    return g


# --- Legendre transform ----------------------------------------------------------


def legendre(cost: RunningCostSpec, x, xi, numeric: bool = False, p_radius: float = 50.0):
    """L(x, xi) = sup_p {-xi.p - G(x, p)} (closed form for builtins, +inf encoded as inf)."""
    x = np.asarray(x, float)
    xi = np.asarray(xi, float)
    if numeric:
        return _legendre_numeric(cost, x, xi, p_radius)
    n = np.sqrt(xi[..., 0] ** 2 + xi[..., 1] ** 2)
    if cost.form == "QUADRATIC":
        return 0.5 * n ** 2 + cost.f(x)
    if cost.form == "EIKONAL":
        return np.where(n <= 1 + 1e-12, cost.f(x), np.inf)
    if cost.form == "NORM":
        return np.where(n <= 1 + 1e-12, 0.0, np.inf) + 0 * x[..., 0]
    return np.where(n == 0, -cost.c, np.inf) + 0 * x[..., 0]


def _legendre_numeric(cost, x, xi, R, rounds: int = 6, k: int = 41):
    # polar grid search with successive zoom around the best p
    x = np.atleast_2d(x)
    xi = np.atleast_2d(xi)
    out = np.empty(len(xi))
    for m in range(len(xi)):
        c, half = np.zeros(2), R
        best = -np.inf
        for _ in range(rounds):
            g = np.linspace(-half, half, k)
            P = np.stack(np.meshgrid(g, g), axis=-1).reshape(-1, 2) + c
            vals = -(P @ xi[m]) - cost.G(np.broadcast_to(x[m % len(x)], P.shape), P)
            j = int(np.argmax(vals))
            best = max(best, float(vals[j]))
            if j in (0, len(P) - 1) or np.any(np.abs(P[j] - c) >= half * 0.999):
                half *= 2
            else:
                half *= 4.0 / (k - 1)
            c = P[j]
        out[m] = best if best < 1e6 else np.inf
    return out


@dataclass
class LegendreCache:
    """Controls and their running-cost data for one running cost."""

    cost: RunningCostSpec
    r_ctrl: float
    controls: np.ndarray  # (C, 2), zero control first

    def L(self, x, c: int):
        return legendre(self.cost, x, np.broadcast_to(self.controls[c], np.shape(x)))

    def duality_gap(self, rng, samples: int = 50) -> float:
        """max |G(x,p) - max_xi {-xi.p - L(x,xi)}| over a fine disc of xi."""
        x = rng.uniform(-1, 1, (samples, 2))
        p = rng.normal(0, 0.3, (samples, 2))
        r = np.linspace(0, self.r_ctrl, 801)
        th = np.linspace(0, 2 * np.pi, 721)[:-1]
        R, TH = np.meshgrid(r, th)
        XI = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
        gap = 0.0
        for xx, pp in zip(x, p):
            vals = -(XI @ pp) - legendre(self.cost, np.broadcast_to(xx, XI.shape), XI)
            gap = max(gap, abs(float(self.cost.G(xx, pp)) - float(np.max(vals)) ))
        return gap


def control_radius(cost: RunningCostSpec, lam: float, data) -> float:
    if not cost.coercive:
        return 0.0
    return (max(abs(float(d)) for d in data) * lam + cost.M) / cost.nu + 1.0


def make_controls(cost: RunningCostSpec, lam: float, data, directions: int = 16,
                  magnitudes: int = 4) -> LegendreCache:
    R = control_radius(cost, lam, data)
    if cost.form in ("EIKONAL", "NORM"):
        R = 1.0
    ctrl = [np.zeros(2)]
    if R > 0:
        th = 2 * np.pi * np.arange(directions) / directions
        for k in range(1, magnitudes + 1):
            r = R * k / magnitudes
            ctrl.extend(np.column_stack([r * np.cos(th), r * np.sin(th)]))
    return LegendreCache(cost, R, np.array(ctrl))


# --- foot points -----------------------------------------------------------------


@dataclass
class Footprint:
    """Per (control, interior node): exit flag, cost-to-go data and bilinear stencil."""

    cost: np.ndarray  # (C, n) discounted running cost up to the foot or the exit
    exit_value: np.ndarray  # (C, n) discounted boundary payoff (exit) or nan
    idx: np.ndarray  # (C, n, 4) flat grid indices
    w: np.ndarray  # (C, n, 4)
    disc: float
    dt: float
    substeps: int


def _rk4_paths(field, grid, cache, x, xi, eps, lam, dt, nsub, data):
    """March dX = b/eps + xi for time dt; stop at the first boundary crossing."""
    h = dt / nsub
    n = len(x)
    J = np.zeros(n)
    exit_val = np.full(n, np.nan)
    active = np.ones(n, bool)
    t = 0.0
    Hx = field.H(x)
    cut_levels = np.asarray(grid.cuts)
    data = np.asarray(data, float)
    const_L = cache.cost.form == "QUADRATIC" and cache.cost.fname == "zero"
    xi_n2 = float(xi @ xi)

    def vel(y):
        g = field.DH(y)
        return np.stack([g[:, 1] / eps + xi[0], -g[:, 0] / eps + xi[1]], axis=1)

    def run_cost(y, tt):
        if const_L:
            return np.full(len(y), 0.5 * xi_n2 * np.exp(-lam * tt))
        return legendre(cache.cost, y, np.broadcast_to(xi, y.shape)) * np.exp(-lam * tt)

    for _ in range(nsub):
        a = np.flatnonzero(active)
        if a.size == 0:
            break
        y = x[a]
        k1 = vel(y)
        k2 = vel(y + 0.5 * h * k1)
        k3 = vel(y + 0.5 * h * k2)
        k4 = vel(y + h * k3)
        ynew = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        # Simpson for the running cost on the substep
        l0 = run_cost(y, t)
        lm = run_cost(0.5 * (y + ynew) + 0.125 * h * (k1 - k4), t + 0.5 * h)  # Hermite midpoint
        l1 = run_cost(ynew, t + h)
        dJ = h / 6 * (l0 + 4 * lm + l1)
        Hn = field.H(ynew)
        Ho = Hx[a]
        up = Hn >= grid.h0
        well = grid.well_of(ynew)
        down = Hn <= cut_levels[well - 1]
        hit = up | down
        if hit.any():
            level = np.where(up, grid.h0, cut_levels[well - 1])
            den = np.where(Hn != Ho, Hn - Ho, 1.0)
            theta = np.clip((level - Ho) / den, 0.0, 1.0)[hit]
            te = t + theta * h
            dval = np.where(up, data[0], data[np.minimum(well, len(data) - 1)])[hit]
            ai = a[hit]
            exit_val[ai] = J[ai] + theta * dJ[hit] + np.exp(-lam * te) * dval
            active[ai] = False
        keep = ~hit
        x[a[keep]] = ynew[keep]
        J[a[keep]] += dJ[keep]
        Hx[a[keep]] = Hn[keep]
        t += h
    return x, J, exit_val


def _stencil(grid, y):
    fx = (y[:, 0] - grid.box[0]) / grid.dx
    fy = (y[:, 1] - grid.box[2]) / grid.dy
    i = np.clip(np.floor(fx).astype(np.int64), 0, grid.nx - 2)
    j = np.clip(np.floor(fy).astype(np.int64), 0, grid.ny - 2)
    tx = np.clip(fx - i, 0.0, 1.0)
    ty = np.clip(fy - j, 0.0, 1.0)
    base = j * grid.nx + i
    idx = np.stack([base, base + 1, base + grid.nx, base + grid.nx + 1], axis=1)
    w = np.stack([(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty], axis=1)
    return idx, w


def footprints(field, grid, cache, eps, lam, dt, data, substep_cells: float = 1.0) -> Footprint:
    X = grid.nodes().reshape(-1, 2)
    interior = np.flatnonzero(grid.mask.ravel() == INTERIOR)
    x0 = X[interior]
    bmax = float(np.max(np.linalg.norm(field.DH(x0), axis=1)))
    speed = bmax / eps + cache.r_ctrl
    nsub = max(1, int(np.ceil(dt * speed / (substep_cells * grid.spacing))))
    C, n = len(cache.controls), len(interior)
    cost = np.empty((C, n))
    exitv = np.empty((C, n))
    idx = np.empty((C, n, 4), np.int64)
    w = np.empty((C, n, 4))
    for c, xi in enumerate(cache.controls):
        y, J, ev = _rk4_paths(field, grid, cache, x0.copy(), xi, eps, lam, dt, nsub, data)
        cost[c] = J
        exitv[c] = ev
        idx[c], w[c] = _stencil(grid, y)
    return Footprint(cost, exitv, idx, w, float(np.exp(-lam * dt)), dt, nsub)


# --- fixed point -----------------------------------------------------------------


@dataclass
class EpsField:
    grid: GridSpec = dc_field(repr=False)
    epsilon: float = 0.0
    lam: float = 1.0
    u: np.ndarray = dc_field(default=None, repr=False)  # (ny, nx); boundary data outside
    data: tuple = ()
    iterations: int = 0
    final_update: float = np.inf
    fixed_point_residual: float = np.inf
    dt: float = 0.0
    substeps: int = 0
    policy: np.ndarray = dc_field(default=None, repr=False)

    def rows(self, field: HamiltonianField):
        X = self.grid.nodes()
        for j in range(self.grid.ny):
            for i in range(self.grid.nx):
                if self.grid.mask[j, i] == INTERIOR:
                    x = X[j, i]
                    yield (repr(float(x[0])), repr(float(x[1])), repr(float(self.grid.H[j, i])),
                           repr(float(self.u[j, i])))


def boundary_values(grid: GridSpec, data) -> np.ndarray:
    data = np.asarray(data, float)
    return data[grid.label.astype(int)]


def _q_values(fp: Footprint, ufull):
    cont = fp.cost + fp.disc * np.einsum("cnk,cnk->cn", fp.w, ufull[fp.idx])
    return np.where(np.isnan(fp.exit_value), cont, fp.exit_value)


def _policy_solve(fp, policy, ufull, interior, col):
    n = len(interior)
    rows = np.arange(n)
    ex = fp.exit_value[policy, rows]
    is_exit = ~np.isnan(ex)
    I4 = fp.idx[policy, rows]  # (n, 4)
    W4 = fp.w[policy, rows] * fp.disc
    cols = col[I4]
    inner = (cols >= 0) & ~is_exit[:, None]
    rhs = np.where(is_exit, ex, fp.cost[policy, rows])
    fixed = (~inner) & ~is_exit[:, None]
    rhs = rhs + np.sum(np.where(fixed, W4 * ufull[I4], 0.0), axis=1)
    r = np.repeat(rows, 4)[inner.ravel()]
    cc = cols.ravel()[inner.ravel()]
    vv = -W4.ravel()[inner.ravel()]
    A = sp.csr_matrix((np.concatenate([np.ones(n), vv]), (np.concatenate([rows, r]), np.concatenate([rows, cc]))),
                      shape=(n, n))
    return spsolve(A.tocsc(), rhs)


def solve_eps(field: HamiltonianField, cost: RunningCostSpec, lam: float, epsilon: float,
              grid: GridSpec, data, dt: float | None = None, dt_factor: float = 1.0,
              tol: float = 1e-9, max_iter: int = 200, cache: LegendreCache | None = None) -> EpsField:
    """Policy iteration for the semi-Lagrangian fixed point.

    The time step defaults to ``dt_factor * spacing / max(R_ctrl, 1)``; the drift is
    followed exactly along each step, so dt does not shrink with epsilon.
    """
    if epsilon <= 0 or lam <= 0:
        raise ValueError("epsilon and lambda must be positive")
    data = tuple(float(d) for d in data)
    if len(data) != len(grid.cuts) + 1:
        raise ValueError(f"need {len(grid.cuts) + 1} boundary data values")
    cache = make_controls(cost, lam, data) if cache is None else cache
    if dt is None:
        dt = dt_factor * grid.spacing / max(cache.r_ctrl, 1.0)
    fp = footprints(field, grid, cache, epsilon, lam, dt, data)
    interior = np.flatnonzero(grid.mask.ravel() == INTERIOR)
    col = np.full(grid.nx * grid.ny, -1, np.int64)
    col[interior] = np.arange(len(interior))
    ufull = boundary_values(grid, data).ravel().astype(float)
    policy = np.zeros(len(interior), np.int64)
    ufull[interior] = _policy_solve(fp, policy, ufull, interior, col)
    update, it = np.inf, 0
    for it in range(1, max_iter + 1):
        Q = _q_values(fp, ufull)
        new_policy = np.argmin(Q, axis=0)
        better = Q[new_policy, np.arange(len(interior))] < Q[policy, np.arange(len(interior))] - 1e-14
        policy = np.where(better, new_policy, policy)
        unew = _policy_solve(fp, policy, ufull, interior, col)
        update = float(np.max(np.abs(unew - ufull[interior])))
        ufull[interior] = unew
        if update < tol or not better.any():
            break
    Q = _q_values(fp, ufull)
    resid = float(np.max(np.abs(Q.min(axis=0) - ufull[interior])))
    return EpsField(grid, float(epsilon), float(lam), ufull.reshape(grid.ny, grid.nx), data, it,
                    update, resid, float(dt), fp.substeps, policy)


def residual(eps_field: EpsField, field: HamiltonianField, cost: RunningCostSpec,
             h_collar: float | None = None):
    """Central-difference PDE residual at nodes two cells inside; (median, 95th pct)."""
    g = eps_field.grid
    u = eps_field.u
    inner = g.mask == INTERIOR
    core = inner.copy()
    for s in (1, 2):
        core[s:, :] &= inner[:-s, :]
        core[:-s, :] &= inner[s:, :]
        core[:, s:] &= inner[:, :-s]
        core[:, :-s] &= inner[:, s:]
    X = g.nodes()
    dH = np.linalg.norm(field.DH(X), axis=-1)
    collar = 2 * g.spacing * dH if h_collar is None else h_collar
    core &= np.abs(g.H) > collar
    ux = np.zeros_like(u)
    uy = np.zeros_like(u)
    ux[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * g.dx)
    uy[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * g.dy)
    Du = np.stack([ux, uy], axis=-1)
    gH = field.DH(X)
    b = np.stack([gH[..., 1], -gH[..., 0]], axis=-1)
    r = eps_field.lam * u - np.sum(b * Du, axis=-1) / eps_field.epsilon + cost.G(X, Du)
    vals = np.abs(r[core])
    return float(np.median(vals)), float(np.percentile(vals, 95)), vals
