import csv
import io

import pytest

from hjgraph import cli


def run(capsys, *argv):
    rc = cli.main(list(argv))
    out = capsys.readouterr()
    return rc, out.out, out.err


def test_analyze_lists_critical_points(capsys):
    rc, out, _ = run(capsys, "analyze", "--hamiltonian", "h3")
    rows = list(csv.reader(io.StringIO(out)))
    assert rc == 0 and rows[0] == ["index", "x1", "x2", "H", "kind"] and len(rows) == 4


def test_verify_exit_code(capsys):
    rc, out, _ = run(capsys, "verify", "--hamiltonian", "h4")
    assert rc == 0 and "gradient_bound" in out


def test_flow_trace_csv(capsys):
    rc, out, _ = run(capsys, "flow", "trace", "--hamiltonian", "h4", "--horizon", "1", "--samples", "5")
    assert rc == 0 and len(out.strip().splitlines()) == 6


def test_solve_graph_writes_outputs(tmp_path, capsys):
    rc, _, _ = run(capsys, "solve-graph", "--out", str(tmp_path), "--figures")
    assert rc == 0
    assert (tmp_path / "graph_solution.csv").exists() and (tmp_path / "edges.png").exists()
    assert "verdict = True" in (tmp_path / "admissibility.txt").read_text()


def test_average_single_edge(capsys):
    rc, out, _ = run(capsys, "average", "--edge", "2")
    rows = out.strip().splitlines()
    assert rc == 0 and all(r.startswith("2,") for r in rows[1:])


def test_solve_eps_small_grid(tmp_path, capsys):
    rc, _, _ = run(capsys, "solve-eps", "--eps", "0.3", "--grid", "49", "--out", str(tmp_path))
    assert rc == 0 and (tmp_path / "u_eps.csv").exists()
    assert (tmp_path / "mask.pgm").read_bytes().startswith(b"P5")


def test_accept_subset(tmp_path, capsys):
    rc, _, err = run(capsys, "accept", "A1,A7", "--out", str(tmp_path))
    assert rc == 0 and "A1 PASS" in err and "A7 PASS" in err
    assert (tmp_path / "acceptance.csv").read_text().startswith("id,measured")


def test_config_errors_exit_2(capsys):
    rc, _, err = run(capsys, "solve-graph", "--data=-1,-1")
    assert rc == 2 and "data needs 3 values" in err


def test_family_switch_needs_cuts():
    with pytest.raises(SystemExit):
        cli.main(["solve-graph", "--hamiltonian", "h3o"])


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        cli.main(["nosuch"])
