"""Planar Hamiltonians with a single (possibly degenerate) saddle at the origin.

Every evaluator is vectorised over a trailing axis of length 2, so ``x`` may be
a single point ``(x1, x2)`` or an array of shape ``(..., 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

KINDS = ("local-min", "nondegenerate-saddle", "degenerate-saddle")
DEGENERACY_THRESHOLD = 1e-8
MERGE_RADIUS = 1e-6


class CriticalPointError(RuntimeError):
    pass


@dataclass(frozen=True)
class HamiltonianField:
    """Immutable bundle of H, DH, D2H plus the structural data of the family.

    ``m`` and ``n`` are the declared growth exponents: ``|D2H| <= C|x|^m`` and
    ``|DH| >= c|x|^n`` near the origin (ball of radius ``r_v``).
    """

    name: str
    energy: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    N: int
    m: float
    n: float
    r_v: float = 0.5
    known_points: tuple = field(default=(), compare=False)

    def H(self, x):
        return self.energy(np.asarray(x, dtype=float))

    def DH(self, x):
        return self.gradient(np.asarray(x, dtype=float))

    def D2H(self, x):
        return self.hessian(np.asarray(x, dtype=float))

    def drift(self, x):
        """Hamiltonian vector field b = (H_x2, -H_x1)."""
        g = self.DH(x)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def with_exponents(self, m: float, n: float) -> "HamiltonianField":
        return replace(self, m=m, n=n)

    @property
    def is_graph_type(self) -> bool:
        return self.N >= 3


@dataclass(frozen=True)
class CriticalPoint:
    index: int
    location: np.ndarray
    energy: float
    kind: str


# --- builtin families -------------------------------------------------------


def _xy(x):
    return x[..., 0], x[..., 1]


def _radial():
    def H(x):
        x1, x2 = _xy(x)
        return 0.5 * (x1 * x1 + x2 * x2)

    def DH(x):
        return np.array(x, dtype=float, copy=True)

    def D2H(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out

    return HamiltonianField("RADIAL", H, DH, D2H, N=1, m=0, n=1,
                            known_points=((0.0, 0.0),))


def _h3():
    def H(x):
        x1, x2 = _xy(x)
        r2 = x1 * x1 + x2 * x2
        return r2 * r2 - x1 * x1 + x2 * x2

    def DH(x):
        x1, x2 = _xy(x)
        r2 = x1 * x1 + x2 * x2
        return np.stack([4 * x1 * r2 - 2 * x1, 4 * x2 * r2 + 2 * x2], axis=-1)

    def D2H(x):
        x1, x2 = _xy(x)
        r2 = x1 * x1 + x2 * x2
        out = np.empty(np.shape(x1) + (2, 2))
        out[..., 0, 0] = 4 * r2 + 8 * x1 * x1 - 2
        out[..., 0, 1] = out[..., 1, 0] = 8 * x1 * x2
        out[..., 1, 1] = 4 * r2 + 8 * x2 * x2 + 2
        return out

    s = np.sqrt(2) / 2
    return HamiltonianField("H3", H, DH, D2H, N=3, m=0, n=1,
                            known_points=((0.0, 0.0), (s, 0.0), (-s, 0.0)))


def _h3o():
    def H(x):
        x1, x2 = _xy(x)
        r2 = x1 * x1 + x2 * x2
        return r2 ** 3 - x1 ** 4 + x2 ** 4

    def DH(x):
        x1, x2 = _xy(x)
        r4 = (x1 * x1 + x2 * x2) ** 2
        return np.stack([6 * x1 * r4 - 4 * x1 ** 3, 6 * x2 * r4 + 4 * x2 ** 3], axis=-1)

    def D2H(x):
        x1, x2 = _xy(x)
        r2 = x1 * x1 + x2 * x2
        out = np.empty(np.shape(x1) + (2, 2))
        out[..., 0, 0] = 6 * r2 * r2 + 24 * r2 * x1 * x1 - 12 * x1 * x1
        out[..., 0, 1] = out[..., 1, 0] = 24 * r2 * x1 * x2
        out[..., 1, 1] = 6 * r2 * r2 + 24 * r2 * x2 * x2 + 12 * x2 * x2
        return out

    s = np.sqrt(6) / 3
    return HamiltonianField("H3o", H, DH, D2H, N=3, m=2, n=3,
                            known_points=((0.0, 0.0), (s, 0.0), (-s, 0.0)))


def _petals(N: int, name: str):
    # H = |x|^N - Im (x1 + i x2)^(N-1), i.e. r^N - r^(N-1) sin((N-1) theta)
    k = N - 1

    def H(x):
        x1, x2 = _xy(x)
        z = x1 + 1j * x2
        return (x1 * x1 + x2 * x2) ** (N / 2) - (z ** k).imag

    def DH(x):
        x1, x2 = _xy(x)
        z = x1 + 1j * x2
        r2 = x1 * x1 + x2 * x2
        radial = N * r2 ** (N / 2 - 1)
        dz = k * z ** (k - 1)
        return np.stack([radial * x1 - dz.imag, radial * x2 - dz.real], axis=-1)

    def D2H(x):
        x1, x2 = _xy(x)
        z = x1 + 1j * x2
        r2 = x1 * x1 + x2 * x2
        a = N * r2 ** (N / 2 - 1)
        bcoef = N * (N - 2) * r2 ** (N / 2 - 2) if N > 4 else np.full_like(r2, N * (N - 2))
        d2z = k * (k - 1) * z ** (k - 2)
        out = np.empty(np.shape(x1) + (2, 2))
        out[..., 0, 0] = a + bcoef * x1 * x1 - d2z.imag
        out[..., 0, 1] = out[..., 1, 0] = bcoef * x1 * x2 - d2z.real
        out[..., 1, 1] = a + bcoef * x2 * x2 + d2z.imag
        return out

    r = (N - 1) / N
    pts = [(0.0, 0.0)]
    for j in range(k):
        th = (np.pi / 2 + 2 * np.pi * j) / k
        pts.append((r * np.cos(th), r * np.sin(th)))
    return HamiltonianField(name, H, DH, D2H, N=N, m=N - 3, n=N - 2,
                            known_points=tuple(pts))


FAMILIES = ("H3", "H3o", "H4", "HN", "RADIAL")


def builtin(name: str, N: int | None = None) -> HamiltonianField:
    """Return one of the builtin families (H3, H3o, H4, HN, RADIAL)."""
    key = name.strip().upper()
    if key == "H3":
        return _h3()
    if key == "H3O":
        return _h3o()
    if key == "H4":
        return _petals(4, "H4")
    if key == "HN":
        if N is None or N < 4:
            raise ValueError("HN requires N >= 4")
        return _petals(int(N), f"H{int(N)}")
    if key == "RADIAL":
        return _radial()
    raise ValueError(f"unknown Hamiltonian family {name!r}; expected one of {FAMILIES}")


def parse_family(text: str) -> HamiltonianField:
    """CLI form: h3 | h3o | h4 | hN:<N> | radial."""
    s = text.strip()
    if s.lower().startswith("hn:"):
        return builtin("HN", int(s.split(":", 1)[1]))
    return builtin(s)


def from_callables(name, H, DH, D2H, N, m, n, r_v=0.5) -> HamiltonianField:
    """Extension point for user-supplied vectorised evaluators (untested territory)."""
    return HamiltonianField(name, H, DH, D2H, N=N, m=m, n=n, r_v=r_v)


def evaluate(field: HamiltonianField, x, order: int = 0):
    if order == 0:
        return field.H(x)
    if order == 1:
        return field.DH(x)
    if order == 2:
        return field.D2H(x)
    raise ValueError(f"order must be 0, 1 or 2, got {order}")


# --- critical points --------------------------------------------------------


def _newton(field: HamiltonianField, x: np.ndarray, iters: int = 300) -> np.ndarray:
    x = x.copy()
    for _ in range(iters):
        g = field.DH(x)
        A = field.D2H(x)
        det = A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
        ok = (np.abs(det) > 1e-300) & np.any(g != 0.0, axis=1)
        if not ok.any():
            break
        safe = np.where(ok, det, 1.0)
        dx = np.stack([(A[:, 1, 1] * g[:, 0] - A[:, 0, 1] * g[:, 1]) / safe,
                       (A[:, 0, 0] * g[:, 1] - A[:, 1, 0] * g[:, 0]) / safe], axis=1)
        dx[~ok] = 0.0
        step = np.linalg.norm(dx, axis=1)
        scale = np.minimum(1.0, 0.5 / np.maximum(step, 1e-300))
        x -= dx * scale[:, None]
    return x


def classify(field: HamiltonianField, z) -> str:
    A = field.D2H(np.asarray(z, dtype=float))
    eig = np.linalg.eigvalsh(A)
    if eig[0] > 0:
        return "local-min"
    if abs(np.linalg.det(A)) < DEGENERACY_THRESHOLD:
        return "degenerate-saddle"
    return "nondegenerate-saddle"


_FOUND: dict = {}


def find_critical_points(field: HamiltonianField, search_box=(-2.0, 2.0, -2.0, 2.0),
                         seed_spacing: float = 0.05) -> list[CriticalPoint]:
    """Newton from a uniform seed grid, merged within ``MERGE_RADIUS``.

    Points are ordered: the saddle first (index 0), then minima by polar angle.
    Results are memoised per (field, search box, spacing).
    """
    key = (field, tuple(search_box), seed_spacing)
    if key not in _FOUND:
        _FOUND[key] = _find_critical_points(field, search_box, seed_spacing)
    return list(_FOUND[key])


def _find_critical_points(field, search_box, seed_spacing):
    x0, x1, y0, y1 = search_box
    gx = np.arange(x0, x1 + 0.5 * seed_spacing, seed_spacing)
    gy = np.arange(y0, y1 + 0.5 * seed_spacing, seed_spacing)
    X, Y = np.meshgrid(gx, gy)
    seeds = np.column_stack([X.ravel(), Y.ravel()])
    pts = _newton(field, seeds)
    res = np.linalg.norm(field.DH(pts), axis=1)
    inside = ((pts[:, 0] >= x0 - 1e-9) & (pts[:, 0] <= x1 + 1e-9)
              & (pts[:, 1] >= y0 - 1e-9) & (pts[:, 1] <= y1 + 1e-9))
    pts = pts[(res <= 1e-10) & inside & np.all(np.isfinite(pts), axis=1)]

    reps: list[np.ndarray] = []
    for p in pts:
        if not any(np.linalg.norm(p - q) < MERGE_RADIUS for q in reps):
            reps.append(p)
    reps = [r for r in _newton(field, np.array(reps), 100)] if reps else []

    found = []
    for z in reps:
        found.append((z, float(field.H(z)), classify(field, z)))
    if len(found) != field.N:
        raise CriticalPointError(
            f"{field.name}: found {len(found)} critical points, expected {field.N}")
    saddles = [f for f in found if f[2] != "local-min"]
    minima = [f for f in found if f[2] == "local-min"]
    if field.N >= 3:
        if len(saddles) != 1 or np.linalg.norm(saddles[0][0]) > 1e-6:
            raise CriticalPointError(f"{field.name}: expected a single saddle at the origin")
        if any(e >= 0 for _, e, _ in minima):
            raise CriticalPointError(f"{field.name}: minima must lie below level 0")
    minima.sort(key=lambda f: np.mod(np.arctan2(f[0][1], f[0][0]), 2 * np.pi))
    ordered = saddles + minima
    return [CriticalPoint(i, np.asarray(z), e, k) for i, (z, e, k) in enumerate(ordered)]


def minima(field: HamiltonianField, points: Sequence[CriticalPoint] | None = None):
    points = find_critical_points(field) if points is None else points
    return [p for p in points if p.kind == "local-min"]


def critical_points_csv_rows(points: Sequence[CriticalPoint]):
    for p in points:
        yield (p.index, repr(float(p.location[0])), repr(float(p.location[1])),
               repr(p.energy), p.kind)


# --- growth-exponent diagnostics -------------------------------------------


@dataclass
class InequalityCheck:
    label: str
    constant: float
    worst_violation: float  # max ratio of validation-sample excess, 1.0 = tight
    envelope_slope: float | None
    declared_exponent: float | None
    passed: bool


@dataclass
class StructureReport:
    field_name: str
    m: float
    n: float
    radius: float
    sample_count: int
    hessian_bound: InequalityCheck
    gradient_bound: InequalityCheck
    energy_gradient_bound: InequalityCheck
    exponent_relation_ok: bool

    @property
    def C(self):
        return self.hessian_bound.constant

    @property
    def c(self):
        return self.gradient_bound.constant

    @property
    def c0(self):
        return self.energy_gradient_bound.constant

    @property
    def passed(self) -> bool:
        return (self.exponent_relation_ok and self.hessian_bound.passed
                and self.gradient_bound.passed and self.energy_gradient_bound.passed)

    def failed_checks(self):
        return [c.label for c in (self.hessian_bound, self.gradient_bound,
                                  self.energy_gradient_bound) if not c.passed]


def _envelope_slope(r, ratio_times_power, upper: bool, bins: int = 12):
    # log-log slope of the per-radius-bin max (or min) of the raw quantity
    edges = np.quantile(np.log(r), np.linspace(0, 1, bins + 1))
    idx = np.clip(np.searchsorted(edges, np.log(r), side="right") - 1, 0, bins - 1)
    xs, ys = [], []
    for b in range(bins):
        sel = idx == b
        if not sel.any():
            continue
        vals = ratio_times_power[sel]
        xs.append(np.log(np.median(r[sel])))
        ys.append(np.log(vals.max() if upper else vals.min()))
    return float(np.polyfit(xs, ys, 1)[0])


def _check(label, r, q, power, upper, exponent, slope_tol=0.2, outer_frac=0.5):
    """Fit the extreme constant on the outer radii, validate on the inner ones."""
    ratio = q / r ** power if exponent is not None else q
    finite = np.isfinite(ratio)
    r, q, ratio = r[finite], q[finite], ratio[finite]
    split = np.quantile(r, 1 - outer_frac)
    outer = r >= split
    if upper:
        fit = ratio[outer].max()
        worst = ratio[~outer].max() / fit
        const = ratio.max()
    else:
        fit = ratio[outer].min()
        worst = fit / max(ratio[~outer].min(), 1e-300)
        const = ratio.min()
    passed = worst <= 1.01
    slope = None
    if exponent is not None:
        slope = _envelope_slope(r, q, upper)
        passed = passed and abs(slope - exponent) <= slope_tol
    return InequalityCheck(label, float(const), float(worst), slope, exponent, bool(passed))


def sample_ball(radius: float, count: int, rng, inner_ratio: float = 1e-3):
    r = radius * np.exp(rng.uniform(np.log(inner_ratio), 0.0, count))
    th = rng.uniform(0.0, 2 * np.pi, count)
    return np.column_stack([r * np.cos(th), r * np.sin(th)])


def verify_structure(field: HamiltonianField, radius: float | None = None,
                     sample_count: int = 10_000, seed: int = 0) -> StructureReport:
    """Fit C, c, c0 of the three local growth inequalities on log-uniform radii.

    A check fails when the constant fitted on the outer half of the radii is
    beaten by more than 1 % on the inner half, or when the radial envelope's
    log-log slope departs from the declared exponent (non-sharp exponents).
    """
    radius = field.r_v if radius is None else radius
    if radius > field.r_v:
        raise ValueError("radius must not exceed the validity radius r_v")
    if sample_count < 1000:
        raise ValueError("sample_count must be at least 1000")
    rng = np.random.default_rng(seed)
    x = sample_ball(radius, sample_count, rng)
    r = np.linalg.norm(x, axis=1)
    hess = np.abs(field.D2H(x)).reshape(len(x), 4).max(axis=1)
    grad = np.linalg.norm(field.DH(x), axis=1)
    en = np.abs(field.H(x))
    m, n = field.m, field.n
    alpha = n / (m + 2)
    hb = _check("hessian_bound", r, hess, m, upper=True, exponent=m)
    gb = _check("gradient_bound", r, grad, n, upper=False, exponent=n)
    with np.errstate(divide="ignore"):
        ratio = grad / en ** alpha
    eg = _check("energy_gradient_bound", r, ratio, 0.0, upper=False, exponent=None)
    relation = (n < m + 2) and (m + 1 <= n + 1e-12)
    return StructureReport(field.name, m, n, radius, sample_count, hb, gb, eg, relation)


def fitted_c0(field: HamiltonianField, extra_points: np.ndarray | None = None,
              sample_count: int = 10_000, seed: int = 0) -> float:
    """Largest c0 with c0 |H|^(n/(m+2)) <= |DH| over the validity ball and ``extra_points``."""
    rep = verify_structure(field, field.r_v, sample_count, seed)
    c0 = rep.c0
    if extra_points is not None and len(extra_points):
        alpha = field.n / (field.m + 2)
        en = np.abs(field.H(extra_points))
        gr = np.linalg.norm(field.DH(extra_points), axis=1)
        sel = en > 0
        if sel.any():
            c0 = min(c0, float((gr[sel] / en[sel] ** alpha).min()))
    return c0
