"""Orbit-averaged Hamiltonians Gbar_i(h, q) and their tables."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .flow import measure_period
from .hamiltonian import HamiltonianField
from .levelset import EdgeProfile, LevelLoop, loop_metrics

FORMS = ("QUADRATIC", "EIKONAL", "CONSTANT", "NORM")
F_BOX = 2.0  # sup |f| is taken over [-F_BOX, F_BOX]^2


class TableError(ValueError):
    pass


def _f_zero(x):
    return np.zeros(np.shape(x)[:-1])


def _f_x1(x):
    return np.asarray(x)[..., 0] * 1.0


def _f_x1sq(x):
    return np.asarray(x)[..., 0] ** 2


def _f_r2(x):
    x = np.asarray(x)
    return x[..., 0] ** 2 + x[..., 1] ** 2


def manufactured_f(field: HamiltonianField, lam: float) -> Callable:
    """f with u = H solving lam*u - b.Du/eps + 1/2|Du|^2 - f = 0 for every eps."""
    def f(x):
        g = field.DH(x)
        return lam * field.H(x) + 0.5 * np.sum(g * g, axis=-1)
    return f


F_REGISTRY = {"zero": _f_zero, "x1": _f_x1, "x1sq": _f_x1sq, "r2": _f_r2}


@dataclass(frozen=True)
class RunningCostSpec:
    """A builtin convex running cost G(x, p) with coercivity data G >= nu|p| - M."""

    form: str
    f: Callable = _f_zero
    fname: str = "zero"
    c: float = 0.0
    f_sup: float = 0.0  # sup of f over the working box
    lip_x: float = 0.0  # Lipschitz constant of G in x at bounded p

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown cost form {self.form!r}; choose from {FORMS}")

    @property
    def nu(self) -> float:
        return 0.0 if self.form == "CONSTANT" else 1.0

    @property
    def M(self) -> float:
        if self.form == "QUADRATIC":
            return 0.5 + max(self.f_sup, 0.0)
        if self.form == "EIKONAL":
            return max(self.f_sup, 0.0)
        if self.form == "CONSTANT":
            return max(-self.c, 0.0)
        return 0.0

    @property
    def coercive(self) -> bool:
        return self.nu > 0

    @property
    def label(self) -> str:
        if self.form == "CONSTANT":
            return f"const:{self.c!r}"
        if self.form == "NORM":
            return "norm"
        return f"{self.form[:4].lower()}:{self.fname}"

    def G(self, x, p) -> np.ndarray:
        x = np.asarray(x, float)
        p = np.asarray(p, float)
        shape = np.broadcast_shapes(x.shape, p.shape)[:-1]
        if self.form == "CONSTANT":
            return np.full(shape, self.c)
        pn2 = p[..., 0] ** 2 + p[..., 1] ** 2
        if self.form == "NORM":
            return np.broadcast_to(np.sqrt(pn2), shape).copy()
        fx = self.f(x)
        if self.form == "QUADRATIC":
            return 0.5 * pn2 - fx
        return np.sqrt(pn2) - fx

    def G00(self) -> float:
        return float(self.G(np.zeros(2), np.zeros(2)))

    def convexity_violation(self, rng, samples: int = 2000, scale: float = 5.0) -> float:
        x = rng.uniform(-F_BOX, F_BOX, (samples, 2))
        p = rng.normal(0, scale, (samples, 2))
        q = rng.normal(0, scale, (samples, 2))
        gap = self.G(x, 0.5 * (p + q)) - 0.5 * (self.G(x, p) + self.G(x, q))
        return float(gap.max())

    def coercivity_violation(self, rng, samples: int = 2000, scale: float = 5.0) -> float:
        x = rng.uniform(-F_BOX, F_BOX, (samples, 2))
        p = rng.normal(0, scale, (samples, 2))
        gap = self.nu * np.linalg.norm(p, axis=1) - self.M - self.G(x, p)
        return float(gap.max())


def _box_stats(f):
    g = np.linspace(-F_BOX, F_BOX, 401)
    X = np.stack(np.meshgrid(g, g), axis=-1)
    v = f(X)
    d = g[1] - g[0]
    lip = max(np.abs(np.diff(v, axis=0)).max(), np.abs(np.diff(v, axis=1)).max()) / d
    return float(v.max()), float(lip)


def make_cost(form: str, fname: str = "zero", c: float = 0.0,
              field: HamiltonianField | None = None, lam: float = 1.0) -> RunningCostSpec:
    form = form.upper()
    if form in ("CONSTANT", "NORM"):
        return RunningCostSpec(form, c=float(c))
    if fname == "manufactured":
        if field is None:
            raise ValueError("the manufactured cost needs a Hamiltonian field")
        f = manufactured_f(field, lam)
    elif fname in F_REGISTRY:
        f = F_REGISTRY[fname]
    else:
        raise ValueError(f"unknown f {fname!r}; choose from {sorted(F_REGISTRY) + ['manufactured']}")
    sup, lip = _box_stats(f)
    return RunningCostSpec(form, f=f, fname=fname, f_sup=sup, lip_x=lip)


def parse_cost(text: str, field: HamiltonianField | None = None, lam: float = 1.0) -> RunningCostSpec:
    """Parse ``const:c``, ``norm``, ``quad:<f>`` or ``eik:<f>``."""
    head, _, arg = text.strip().partition(":")
    head = head.lower()
    if head == "const":
        return make_cost("CONSTANT", c=float(arg or 0.0))
    if head == "norm":
        return make_cost("NORM")
    if head in ("quad", "eik"):
        return make_cost("QUADRATIC" if head == "quad" else "EIKONAL", arg or "zero", field=field, lam=lam)
    raise ValueError(f"cannot parse cost {text!r}; use const:c | norm | quad:f | eik:f")


# --- averaging ---------------------------------------------------------------


def averaged_row(field: HamiltonianField, cost: RunningCostSpec, loop: LevelLoop, qs) -> np.ndarray:
    """Line-integral average (1/T) * integral of G(x, q DH)/|DH| dl for every q."""
    qs = np.atleast_1d(np.asarray(qs, float))
    x = loop.vertices
    g = field.DH(x)
    w = loop.weights / np.linalg.norm(g, axis=1)
    T = w.sum()
    out = np.empty(len(qs))
    block = max(1, 2_000_000 // len(x))
    for k in range(0, len(qs), block):
        qb = qs[k:k + block]
        vals = cost.G(x[None, :, :], qb[:, None, None] * g[None, :, :])
        out[k:k + block] = vals @ w / T
    return out


def averaged_g(field: HamiltonianField, cost: RunningCostSpec, loop: LevelLoop, q: float) -> float:
    return float(averaged_row(field, cost, loop, [q])[0])


def averaged_g_time(field: HamiltonianField, cost: RunningCostSpec, loop: LevelLoop,
                    q: float, tol: float = 1e-11) -> float:
    """Time average of G(X(t), q DH(X(t))) over one period of the flow."""
    x0 = loop.vertices[0]
    period = measure_period(field, x0, tol)

    def rhs(t, y):
        g = field.DH(y[:2])
        return np.array([g[1], -g[0]], dtype=float).tolist() + [float(cost.G(y[:2], q * g))]

    sol = solve_ivp(rhs, (0.0, period), np.array([x0[0], x0[1], 0.0]), method="DOP853",
                    rtol=max(tol, 2.3e-14), atol=tol)
    return float(sol.y[2, -1] / period)


# --- tables ------------------------------------------------------------------


def graded_axis(q_max: float, count: int, grading: float) -> np.ndarray:
    """Symmetric nodes on [-q_max, q_max], clustered at 0 by a sinh map."""
    if count < 3 or count % 2 == 0:
        raise ValueError("q_count must be odd and at least 3")
    s = np.linspace(-1.0, 1.0, count)
    if grading <= 0:
        return q_max * s
    return q_max * np.sinh(grading * s) / np.sinh(grading)


@dataclass
class AveragedTable:
    """Rows Gbar(h_j, q) on per-row symmetric q-grids; rows ascending in h."""

    edge: int
    h: np.ndarray
    q: np.ndarray  # (nh, nq)
    values: np.ndarray  # (nh, nq)
    L: np.ndarray
    T: np.ndarray
    nu: float
    M: float
    G00: float
    cost_label: str = ""
    meta: dict = dc_field(default_factory=dict)

    @classmethod
    def from_function(cls, edge, h, q, fn, nu=1.0, M=0.0, G00=None, L=None, T=None, label="synthetic"):
        """Table of an explicit fn(h, q) (vectorised) on a shared q-grid."""
        h = np.asarray(h, float)
        q = np.broadcast_to(np.asarray(q, float), (len(h), np.size(q))).copy()
        vals = fn(h[:, None], q)
        L = np.ones_like(h) if L is None else np.asarray(L, float)
        T = np.ones_like(h) if T is None else np.asarray(T, float)
        G00 = float(vals[np.argmin(np.abs(h))].min()) if G00 is None else G00
        return cls(edge, h, q, np.asarray(vals, float), L, T, nu, M, G00, label)

    @property
    def q_max(self) -> np.ndarray:
        return self.q[:, -1]

    def row(self, j: int):
        return self.q[j], self.values[j]

    def row_value(self, j: int, q):
        """Piecewise-linear value of row j at q; raises TableError outside the grid."""
        qj = self.q[j]
        q = np.asarray(q, float)
        if np.any(np.abs(q) > qj[-1] * (1 + 1e-12)):
            raise TableError(f"q={np.max(np.abs(q)):.4g} outside [-{qj[-1]:.4g}, {qj[-1]:.4g}] "
                             f"on edge {self.edge} at h={self.h[j]:.4g}")
        return np.interp(q, qj, self.values[j])

    def value(self, h: float, q):
        """Linear in q on each row, monotone cubic across rows in h."""
        if not (self.h[0] - 1e-15 <= h <= self.h[-1] + 1e-15):
            raise TableError(f"h={h} outside the table range [{self.h[0]}, {self.h[-1]}]")
        j = int(np.searchsorted(self.h, h))
        if j < len(self.h) and self.h[j] == h:
            return self.row_value(j, q)
        lo, hi = max(0, j - 3), min(len(self.h), j + 3)
        cols = np.array([self.row_value(k, q) for k in range(lo, hi)])
        return PchipInterpolator(self.h[lo:hi], cols, axis=0)(h)

    def rows(self):
        for j, hj in enumerate(self.h):
            for qq, v in zip(self.q[j], self.values[j]):
                yield (repr(float(hj)), repr(float(qq)), repr(float(v)))

    def convexity_defect(self) -> float:
        """Most negative second divided difference over all rows."""
        worst = 0.0
        for j in range(len(self.h)):
            q, v = self.q[j], self.values[j]
            s = np.diff(v) / np.diff(q)
            worst = min(worst, float(np.min(np.diff(s))))
        return worst

    def coercivity_defect(self) -> float:
        """max of (nu L/T |q| - M) - Gbar over all nodes (<= 0 when the bound holds)."""
        bound = self.nu * (self.L / self.T)[:, None] * np.abs(self.q) - self.M
        return float(np.max(bound - self.values))


def min_over_q(table: AveragedTable, h: float):
    """Vertex minimum of the piecewise-linear row at h: (value, argmin)."""
    j = np.flatnonzero(table.h == h)
    if len(j):
        q, v = table.row(int(j[0]))
    else:
        q = table.q[int(np.argmin(np.abs(table.h - h)))]
        v = np.asarray(table.value(h, q))
    k = int(np.argmin(v))
    return float(v[k]), float(q[k])


def default_q_max(cost: RunningCostSpec, L, T, lam: float = 1.0, data_bound: float = 1.0):
    """Per-row range 8 (M + lam |data| + 1) T/(nu L): the solver's slopes stay well inside."""
    if not cost.coercive:
        return np.ones_like(np.asarray(L, float))
    return 8.0 * (cost.M + lam * data_bound + 1.0) * np.asarray(T) / (cost.nu * np.asarray(L))


def tabulate_gbar(field: HamiltonianField, cost: RunningCostSpec, profile: EdgeProfile,
                  q_max=None, q_count: int = 513, grading: float = 4.0,
                  lam: float = 1.0, data_bound: float = 1.0) -> AveragedTable:
    nh = len(profile.h)
    if q_max is None:
        qm = default_q_max(cost, profile.L, profile.T, lam, data_bound)
    else:
        qm = np.broadcast_to(np.asarray(q_max, float), (nh,))
    q = np.array([graded_axis(qm[j], q_count, grading) for j in range(nh)])
    vals = np.array([averaged_row(field, cost, lp, q[j]) for j, lp in enumerate(profile.loops)])
    if cost.coercive:
        mid = q_count // 2
        short = np.minimum(vals[:, 0], vals[:, -1]) < vals[:, mid] + 1.0
        if short.any():
            j = int(np.flatnonzero(short)[0])
            raise TableError(f"q_max={qm[j]:.4g} too small at h={profile.h[j]:.6g} "
                             f"(row minimum not interior)")
    return AveragedTable(profile.edge, profile.h.copy(), q, vals, profile.L.copy(),
                         profile.T.copy(), cost.nu, cost.M, cost.G00(), cost.label,
                         {"q_count": q_count, "grading": grading})


def tabulate_all(field, cost, profiles, **kw) -> list[AveragedTable]:
    return [tabulate_gbar(field, cost, p, **kw) for p in profiles]


def loop_average_of(field: HamiltonianField, loop: LevelLoop, values) -> float:
    """Time average of sampled values at the loop vertices."""
    L, T = loop_metrics(loop, field)
    w = loop.weights / np.linalg.norm(field.DH(loop.vertices), axis=1)
    return float(np.sum(w * values) / T)
