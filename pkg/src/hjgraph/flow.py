"""Time integration of the Hamiltonian flow and its controlled perturbations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .hamiltonian import HamiltonianField, fitted_c0

ORIGIN_EXCLUSION = 1e-8
_MIN_RTOL = 2.3e-14


class FlowError(RuntimeError):
    pass


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    energy_drift: float
    reason: str  # time-elapsed | returned-to-start | left-region

    @property
    def end(self) -> np.ndarray:
        return self.x[-1]

    def rows(self, field: HamiltonianField):
        Hs = field.H(self.x)
        for t, (a, b), e in zip(self.t, self.x, Hs):
            yield (repr(float(t)), repr(float(a)), repr(float(b)), repr(float(e)))


def _tolerances(tol: float):
    return max(tol * 1e-2, _MIN_RTOL), tol * 1e-2


def _solve(rhs, span, x0, tol, events=None, dense=False, max_step=np.inf):
    rtol, atol = _tolerances(tol)
    sol = solve_ivp(rhs, span, np.asarray(x0, dtype=float), method="DOP853",
                    rtol=rtol, atol=atol, events=events, dense_output=dense,
                    max_step=max_step)
    if sol.status == -1:
        where = sol.y[:, -1] if sol.y.size else x0
        raise FlowError(f"integration failed near x={np.round(where, 12)}: {sol.message}")
    return sol


def integrate(field: HamiltonianField, x0, horizon: float, tol: float = 1e-10,
              samples: int | None = None) -> Trajectory:
    """Integrate dX/dt = b(X) over [0, horizon] (negative horizon runs backwards)."""
    if horizon == 0 or tol <= 0:
        raise ValueError("need horizon != 0 and tol > 0")

    def rhs(t, y):
        g = field.DH(y)
        return np.array([g[1], -g[0]])

    t_eval = None if samples is None else np.linspace(0.0, horizon, samples)
    rtol, atol = _tolerances(tol)
    sol = solve_ivp(rhs, (0.0, horizon), np.asarray(x0, dtype=float), method="DOP853",
                    rtol=rtol, atol=atol, t_eval=t_eval)
    if sol.status == -1:
        raise FlowError(f"step-size underflow near x={sol.y[:, -1]}: {sol.message}")
    xs = sol.y.T
    drift = float(np.max(np.abs(field.H(xs) - field.H(np.asarray(x0, float)))))
    return Trajectory(np.abs(sol.t) if horizon < 0 else sol.t, xs, drift, "time-elapsed")


def measure_period(field: HamiltonianField, x0, tol: float = 1e-10,
                   cap_factor: float = 1e6) -> float:
    """First-return time to the section through x0 normal to b(x0)."""
    x0 = np.asarray(x0, dtype=float)
    if field.H(x0) == 0.0:
        raise ValueError("x0 lies on the critical level")
    b0 = field.drift(x0)
    speed = float(np.linalg.norm(b0))
    if speed == 0.0:
        raise ValueError("x0 is a critical point")
    lam = np.abs(np.linalg.eigvalsh(field.D2H(x0))).max()
    estimate = 2 * np.pi / max(lam, 1e-12)
    cap = cap_factor * estimate

    def rhs(t, y):
        g = field.DH(y)
        return np.array([g[1], -g[0]])

    def section(t, y):
        return float((y[0] - x0[0]) * b0[0] + (y[1] - x0[1]) * b0[1])

    section.direction = 1.0
    t0, y0, reach = 0.0, x0, 0.0
    chunk = estimate
    while t0 < cap:
        sol = _solve(rhs, (t0, t0 + chunk), y0, tol, events=section, dense=True)
        reach = max(reach, float(np.max(np.linalg.norm(sol.y.T - x0, axis=1))))
        for te, ye in zip(sol.t_events[0], sol.y_events[0]):
            if te > 1e-12 * max(1.0, chunk) and np.linalg.norm(ye - x0) < 0.5 * reach:
                return _refine_return(sol.sol, section, float(te), tol)
        t0, y0 = float(sol.t[-1]), sol.y[:, -1]
        chunk *= 2
    raise FlowError(f"no return to the section within {cap:.3g} time units")


def _refine_return(dense, section, te, tol):
    # secant polish on the dense interpolant
    a, b = te - 1e-6 * max(te, 1.0), te + 1e-6 * max(te, 1.0)
    fa, fb = section(a, dense(a)), section(b, dense(b))
    for _ in range(50):
        if fb == fa:
            break
        c = b - fb * (b - a) / (fb - fa)
        a, fa = b, fb
        b, fb = c, section(c, dense(c))
        if abs(b - a) < tol * 1e-3 * max(1.0, abs(b)):
            break
    return float(b) if abs(b - te) < 1e-3 * max(1.0, te) else te


@dataclass(frozen=True)
class NormalDrift:
    """Control law sign * nu * DH/|DH| (pushes energy up for sign=+1)."""

    sign: int
    nu: float


def _controlled_rhs(field, epsilon, control, direction=1.0):
    if isinstance(control, NormalDrift):
        def rhs(t, y):
            g = field.DH(y)
            ng = np.hypot(g[0], g[1])
            ng = ng if ng > 0 else 1.0
            return direction * np.array([g[1] / epsilon + control.sign * control.nu * g[0] / ng,
                                         -g[0] / epsilon + control.sign * control.nu * g[1] / ng])
    else:
        def rhs(t, y):
            g = field.DH(y)
            a = np.asarray(control(direction * t), dtype=float)
            return direction * np.array([g[1] / epsilon + a[0], -g[0] / epsilon + a[1]])
    return rhs


def integrate_controlled(field: HamiltonianField, x0, epsilon: float,
                         control: Callable | NormalDrift, horizon: float,
                         tol: float = 1e-10, stop: list | None = None,
                         samples: int | None = None) -> Trajectory:
    """Integrate dX/dt = b(X)/epsilon + alpha(t); ``stop`` holds extra terminal events.

    A negative horizon integrates the same law backwards in time.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    direction = 1.0 if horizon > 0 else -1.0
    rhs = _controlled_rhs(field, epsilon, control, direction)

    def near_origin(t, y):
        return float(np.hypot(y[0], y[1]) - ORIGIN_EXCLUSION)

    near_origin.terminal = True
    events = [near_origin] + list(stop or [])
    for ev in events:
        ev.terminal = True
    t_eval = None if samples is None else np.linspace(0, abs(horizon), samples)
    rtol, atol = _tolerances(tol)
    sol = solve_ivp(rhs, (0.0, abs(horizon)), np.asarray(x0, dtype=float), method="DOP853",
                    rtol=rtol, atol=atol, events=events, t_eval=t_eval)
    if sol.status == -1:
        raise FlowError(f"step-size underflow near x={sol.y[:, -1]}: {sol.message}")
    t, xs = sol.t, sol.y.T
    reason = "time-elapsed"
    if sol.status == 1:
        reason = "left-region"
        hit = [i for i, te in enumerate(sol.t_events) if len(te)]
        te = sol.t_events[hit[0]][0]
        ye = sol.y_events[hit[0]][0]
        if t_eval is not None and (len(t) == 0 or t[-1] < te):
            t, xs = np.append(t, te), np.vstack([xs, ye])
    if isinstance(control, NormalDrift):
        _check_energy_rate(field, xs, epsilon, control)
    drift = float(np.max(np.abs(field.H(xs) - field.H(np.asarray(x0, float)))))
    return Trajectory(t, xs, drift, reason)


def _check_energy_rate(field, xs, epsilon, control):
    g = field.DH(xs)
    ng = np.linalg.norm(g, axis=1)
    ok = ng > 0
    b = np.stack([g[:, 1], -g[:, 0]], axis=1)
    vel = b / epsilon + control.sign * control.nu * g / np.where(ok, ng, 1.0)[:, None]
    rate = np.einsum("ij,ij->i", g, vel)
    want = control.sign * control.nu * ng
    err = np.abs(rate - want)[ok]
    scale = np.abs(want[ok]) + np.linalg.norm(b[ok], axis=1) ** 2 / epsilon * 1e-12
    if err.size and np.any(err > 1e-6 * scale + 1e-300):
        raise FlowError("energy rate along the normal-drift trajectory deviates from +-nu|DH|")


# --- transit through the critical neighbourhood ----------------------------


def transit_bound(field: HamiltonianField, h: float, nu: float, c0: float) -> float:
    m, n = field.m, field.n
    return 2 * (m + 2) / (nu * c0 * (m - n + 2)) * h ** ((m - n + 2) / (m + 2))


@dataclass
class TransitResult:
    h: float
    epsilon: float
    nu: float
    c0: float
    times: np.ndarray
    max_time: float
    bound: float

    @property
    def ratio(self) -> float:
        return self.max_time / self.bound


def _exit_events(field, h):
    def up(t, y):
        return float(field.H(y) - h)

    def down(t, y):
        return float(field.H(y) + h)

    return [up, down]


def measure_transit(field: HamiltonianField, epsilon: float, h: float, nu: float = 1.0,
                    trials: int = 32, tol: float = 1e-9, seed: int = 0) -> TransitResult:
    """Longest sojourn of the normally-pushed trajectories inside {|H| < h}.

    Start points lie on the loops at levels +h/2 and -h/2; for every start point
    both drift signs are run forwards and backwards to the exit of {|H| < h}.
    """
    from .levelset import extract_all_loops, points_along

    if trials < 16:
        raise ValueError("trials must be at least 16")
    rng = np.random.default_rng(seed)
    pos = extract_all_loops(field, h / 2)
    neg = extract_all_loops(field, -h / 2)
    starts = []
    per = trials // 2
    starts.extend(points_along(pos[0], per, rng, field))
    for j, lp in enumerate(neg):
        k = per // len(neg) + (1 if j < per % len(neg) else 0)
        starts.extend(points_along(lp, k, rng, field))
    probe = []
    for lvl in (0.25, 0.5, 0.75, 1.0):
        for sgn in (1, -1):
            for lp in extract_all_loops(field, sgn * lvl * h):
                probe.append(lp.vertices)
    c0 = fitted_c0(field, np.vstack(probe))
    bound = transit_bound(field, h, nu, c0)
    horizon = 50.0 * bound
    times = []
    for x0 in starts:
        for sign in (1, -1):
            law = NormalDrift(sign, nu)
            total = 0.0
            for hz in (horizon, -horizon):
                tr = integrate_controlled(field, x0, epsilon, law, hz, tol=tol,
                                          stop=_exit_events(field, h))
                if tr.reason == "time-elapsed":
                    raise FlowError(f"trajectory from {x0} stalled inside the neighbourhood")
                total += float(tr.t[-1])
            times.append(total)
    times = np.asarray(times)
    return TransitResult(h, epsilon, nu, c0, times, float(times.max()), bound)
