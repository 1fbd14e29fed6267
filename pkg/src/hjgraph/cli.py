"""Command line entry point ``hj``."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import acceptance, flow, harness, storage
from . import averaging as av
from . import eps_solver as es
from . import graph_solver as gs
from . import levelset as ls
from .hamiltonian import (critical_points_csv_rows, find_critical_points, parse_family,
                          verify_structure)


def _config(args) -> harness.ExperimentConfig:
    fam = (args.hamiltonian or "").lower()
    base = harness.H4_FIXTURE if fam == "h4" else harness.H3_FIXTURE
    if getattr(args, "config", None):
        base = harness.ExperimentConfig.from_file(args.config)
    kv = {}
    if args.hamiltonian:
        kv["family"] = args.hamiltonian
    for opt in ("h0", "cost", "grid", "q_count", "dt_factor"):
        v = getattr(args, opt, None)
        if v is not None:
            kv[opt] = v
    if getattr(args, "lam", None) is not None:
        kv["lam"] = args.lam
    for opt in ("cuts", "data", "eps"):
        v = getattr(args, opt, None)
        if v is not None:
            kv[opt] = harness._floats(v)
    if getattr(args, "out", None):
        kv["output"] = args.out
    cfg = replace(base, **kv)
    if "family" in kv and "cuts" not in kv and base.family != cfg.family:
        raise SystemExit(f"family {cfg.family} differs from the base config; pass --cuts and --h0")
    cfg.validate()
    return cfg


def _out(args, name, header, rows):
    if args.out:
        p = storage.write_csv(Path(args.out) / name, header, rows)
        print(p)
    else:
        storage.emit_csv(sys.stdout, header, rows)


def cmd_analyze(args):
    f = parse_family(args.hamiltonian or "h3")
    _out(args, "critical_points.csv", ("index", "x1", "x2", "H", "kind"),
         critical_points_csv_rows(find_critical_points(f)))


def cmd_verify(args):
    f = parse_family(args.hamiltonian or "h3")
    rep = verify_structure(f, radius=args.radius, sample_count=args.samples, seed=args.seed)
    rows = [(c.label, repr(c.constant), repr(c.worst_violation), repr(c.envelope_slope),
             repr(c.declared_exponent), c.passed) for c in (rep.hessian_bound, rep.gradient_bound, rep.energy_gradient_bound)]
    _out(args, "structure.csv", ("check", "constant", "worst_violation", "envelope_slope",
                                 "declared_exponent", "passed"), rows)
    return 0 if rep.passed else 1


def cmd_levelset(args):
    if args.action == "trace":
        f = parse_family(args.hamiltonian or "h3")
        loops = ls.extract_all_loops(f, args.level)
        rows = [(lp.edge, *r) for lp in loops for r in lp.rows()]
        _out(args, "loops.csv", ("edge", "x1", "x2", "s"), rows)
        return
    cfg = _config(args)
    f, graph = harness.build_graph(cfg)
    prof = harness.profiles_for(f, graph, cfg.profile_grid, not args.no_cache)
    rows = [(p.edge, *r) for p in prof for r in p.rows()]
    _out(args, "profiles.csv", ("edge", "h", "L", "T"), rows)
    if args.figures and args.out:
        from . import plots
        plots.period_figure(prof, Path(args.out) / "periods.png", cfg.family)


def cmd_flow(args):
    f = parse_family(args.hamiltonian or "h3")
    if args.action == "trace":
        x0 = harness._floats(args.x0)
        if args.eps is None:
            tr = flow.integrate(f, x0, args.horizon, args.tol, samples=args.samples)
        else:
            law = flow.NormalDrift(args.drift, args.nu)
            tr = flow.integrate_controlled(f, x0, args.eps, law, args.horizon, args.tol, samples=args.samples)
        _out(args, "trajectory.csv", ("t", "x1", "x2", "H"), tr.rows(f))
        return
    r = flow.measure_transit(f, args.eps or 0.05, args.h, args.nu, args.trials, seed=args.seed)
    _out(args, "transit.csv", ("h", "epsilon", "nu", "c0", "max_time", "bound", "ratio"),
         [(repr(r.h), repr(r.epsilon), repr(r.nu), repr(r.c0), repr(r.max_time), repr(r.bound), repr(r.ratio))])


def cmd_average(args):
    cfg = _config(args)
    pipe = harness.build_pipeline(cfg, not args.no_cache)
    tabs = pipe.tables if args.edge is None else [pipe.tables[args.edge]]
    rows = [(t.edge, *r) for t in tabs for r in t.rows()]
    _out(args, "gbar.csv", ("edge", "h", "q", "value"), rows)
    if args.figures and args.out:
        from . import plots
        for t in tabs:
            plots.rows_figure(t, Path(args.out) / f"gbar_edge{t.edge}.png")


def cmd_solve_graph(args):
    cfg = _config(args)
    pipe = harness.build_pipeline(cfg, not args.no_cache)
    sol = gs.junction_solve(pipe.tables, cfg.lam, cfg.data)
    rows = [(e.edge, *r) for e in sol.edges for r in e.rows()]
    _out(args, "graph_solution.csv", ("edge", "h", "u"), rows)
    text = sol.report.text() + f"\nd_star = {sol.d!r}\ncontinuity = {sol.continuity_residual!r}\n"
    if args.out:
        (Path(args.out) / "admissibility.txt").write_text(text)
        if args.figures:
            from . import plots
            plots.edge_solution_figure(sol, Path(args.out) / "edges.png")
    else:
        sys.stdout.write(text)


def cmd_solve_eps(args):
    cfg = _config(args)
    f, graph = harness.build_graph(cfg)
    cost = av.parse_cost(cfg.cost, f, cfg.lam)
    grid = es.make_grid(f, graph, cfg.grid)
    eps = args.eps_value if args.eps_value is not None else cfg.eps[-1]
    field = es.solve_eps(f, cost, cfg.lam, eps, grid, cfg.data, dt_factor=cfg.dt_factor)
    _out(args, "u_eps.csv", ("x1", "x2", "H", "u"), field.rows(f))
    if args.out:
        (Path(args.out) / "mask.pgm").write_bytes(grid.pgm())
        if args.figures:
            from . import plots
            plots.field_figure(field, Path(args.out) / f"field_eps{eps:g}.png")


def cmd_converge(args):
    cfg = _config(args)
    out = Path(args.out or cfg.output)

    def progress(row):
        print(f"eps={row.epsilon:g} E={row.E:.6g} ({row.runtime:.1f}s)", file=sys.stderr)

    with storage.DirectoryLock(out):
        rep = harness.run_convergence(cfg, not args.no_cache, progress, keep_fields=args.figures)
        pipe = harness.build_pipeline(cfg)
        harness.write_outputs(rep, pipe, out, figures=args.figures)
    print(out / "convergence.csv")
    return 0 if (rep.monotone and rep.admissible) else 1


def cmd_accept(args):
    ids = acceptance.resolve(args.selector)
    rows = []

    def report(r):
        print(r.line(), file=sys.stderr)
        rows.append(r.row())

    results = acceptance.run_acceptance(",".join(ids), report)
    _out(args, "acceptance.csv", acceptance.HEADER, rows)
    return 0 if all(r.verdict for r in results) else 1


def _common(p, config=True):
    p.add_argument("--hamiltonian", help="h3 | h3o | h4 | hN:<N> | radial")
    p.add_argument("--out", help="output directory (CSV to stdout when omitted)")
    p.add_argument("--figures", action="store_true", help="also write PNG figures (needs --out)")
    if config:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--h0", type=float)
        p.add_argument("--cuts", help="comma list h_1,...")
        p.add_argument("--cost", help="const:c | norm | quad:f | eik:f")
        p.add_argument("--lambda", dest="lam", type=float)
        p.add_argument("--data", help="comma list d_0,d_1,...")
        p.add_argument("--no-cache", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hj", description="Averaging and graph limits for HJ equations with large drift")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="critical points")
    _common(p, config=False)
    p.set_defaults(run=cmd_analyze)

    p = sub.add_parser("verify", help="structure inequalities near the saddle")
    _common(p, config=False)
    p.add_argument("--radius", type=float)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=cmd_verify)

    p = sub.add_parser("levelset", help="trace loops or tabulate edge profiles")
    p.add_argument("action", choices=("trace", "profiles"))
    _common(p)
    p.add_argument("--level", type=float, default=0.1)
    p.set_defaults(run=cmd_levelset)

    p = sub.add_parser("flow", help="trajectories and transit times")
    p.add_argument("action", choices=("trace", "transit"))
    _common(p, config=False)
    p.add_argument("--x0", default="0.3,0.2")
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--eps", type=float)
    p.add_argument("--drift", type=int, choices=(-1, 1), default=1)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--samples", type=int)
    p.add_argument("--h", type=float, default=1e-2)
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=cmd_flow)

    p = sub.add_parser("average", help="averaged Hamiltonian tables")
    _common(p)
    p.add_argument("--edge", type=int)
    p.add_argument("--q-count", dest="q_count", type=int)
    p.set_defaults(run=cmd_average)

    p = sub.add_parser("solve-graph", help="limit problem on the graph")
    _common(p)
    p.set_defaults(run=cmd_solve_graph)

    p = sub.add_parser("solve-eps", help="2-D problem at one epsilon")
    _common(p)
    p.add_argument("--eps", dest="eps_value", type=float)
    p.add_argument("--grid", type=int)
    p.add_argument("--dt-factor", dest="dt_factor", type=float)
    p.set_defaults(run=cmd_solve_eps)

    p = sub.add_parser("converge", help="convergence study over an epsilon list")
    _common(p)
    p.add_argument("--eps", help="comma list, decreasing")
    p.add_argument("--grid", type=int)
    p.set_defaults(run=cmd_converge)

    p = sub.add_parser("accept", help="acceptance criteria")
    p.add_argument("selector", nargs="?", default="all",
                   help=f"{' | '.join(acceptance.SELECTORS)} or ids like A1,A7")
    p.add_argument("--out")
    p.set_defaults(run=cmd_accept)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        rc = args.run(args)
    except BrokenPipeError:
        sys.stderr.close()
        return 0
    except (ValueError, RuntimeError) as e:
        print(f"hj: error: {e}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    raise SystemExit(main())
