import numpy as np
import pytest

from hjgraph import acceptance, harness


def test_fit_powerlaw_exact():
    x = np.geomspace(1e-4, 1e-1, 7)
    slope, intercept, res = harness.fit_powerlaw(x, 3.0 * x ** -0.4)
    assert slope == pytest.approx(-0.4, abs=1e-12)
    assert np.exp(intercept) == pytest.approx(3.0, rel=1e-12)
    assert res < 1e-12


@pytest.mark.parametrize("xs,ys", [([1, 2, 3], [1, 2, 3]), ([1, 3, 2, 4], [1, 1, 1, 1]),
                                   ([1, 2, 3, 4], [1, 0, 1, 1])])
def test_fit_powerlaw_rejects(xs, ys):
    with pytest.raises(ValueError):
        harness.fit_powerlaw(xs, ys)


def test_config_text_round_trip(tmp_path):
    cfg = harness.H4_FIXTURE
    p = tmp_path / "c.cfg"
    p.write_text(cfg.to_text())
    assert harness.ExperimentConfig.from_file(p) == cfg


def test_config_validation():
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_mapping({"bogus": "1"})
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_mapping({"data": "-1,-1"})
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_mapping({"eps": "0.1,0.2"})
    with pytest.raises(ValueError):
        harness.ExperimentConfig.from_mapping({"lambda": "0"})
    assert harness.ExperimentConfig.from_mapping({"junction": "auto"}).junction is None


def test_stage_error_names_stage():
    cfg = harness.replace_config(harness.H3_FIXTURE, cuts=(-0.3, -0.15))
    with pytest.raises(harness.StageError) as ei:
        harness.build_pipeline(cfg)
    assert ei.value.stage == "graph"


def test_period_series_grows():
    cols = harness.period_series(harness.H3_FIXTURE.field, [1e-2, 1e-3, 1e-4])
    assert cols.shape == (3, 2)
    assert np.all(np.diff(cols, axis=0) > 0)


def test_small_convergence_run(tmp_path):
    cfg = harness.replace_config(harness.H3_FIXTURE, eps=(0.4, 0.2), grid=65)
    rep = harness.run_convergence(cfg, keep_fields=True)
    assert rep.admissible and rep.monotone
    assert len(rep.rows) == 2 and len(rep.fields) == 2
    out = harness.write_outputs(rep, None, tmp_path, figures=True)
    names = {p.name for p in out.iterdir()}
    assert {"convergence.csv", "admissibility.txt", "config.txt", "convergence.png",
            "edges.png", "edge_0.csv", "field_eps0.4.png"} <= names


@pytest.mark.parametrize("sel,ids", [("geometry", ["A1", "A2", "A3", "A4", "A5"]),
                                     ("a7, A1", ["A7", "A1"]), ("convergence", ["A9", "A11"])])
def test_selectors(sel, ids):
    assert acceptance.resolve(sel) == ids


def test_unknown_selector():
    with pytest.raises(ValueError):
        acceptance.resolve("A12")
