import csv
import json

import numpy as np
import pytest
from scipy import stats

from hdinfer import cli
from hdinfer.hierarchy import ClusterTree
from hdinfer.simulation import ScenarioConfig


def write_csv(path, y, x, names=None):
    names = names or [f"x{j}" for j in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + names)
        w.writerows(np.column_stack([y, x]))
    return str(path)


@pytest.fixture
def lowdim(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((80, 5))
    y = x @ np.array([1.0, 0.0, 0.0, 0.5, 0.0]) + rng.standard_normal(80)
    return write_csv(tmp_path / "d.csv", y, x), x, y


def fit(path, *extra):
    return cli.main(["fit", "--data", path, "--response", "y", *extra])


def test_ridge_ci_matches_ols(lowdim, tmp_path):
    path, x, y = lowdim
    out = str(tmp_path / "o.json")
    assert fit(path, "--lambda-ridge", "1e-8", "--adjust", "none", "--out", out) == 0
    r = json.load(open(out))["result"]
    xc, yc = x - x.mean(0), y - y.mean()
    inv = np.linalg.inv(xc.T @ xc)
    b = inv @ xc.T @ yc
    half = stats.norm.ppf(0.975) * r["sigma"] * np.sqrt(np.diag(inv))
    assert np.allclose(r["estimate"], b, rtol=1e-5, atol=1e-6)
    assert np.allclose(r["ci_lower"], b - half, rtol=1e-4, atol=1e-6)
    assert np.allclose(r["ci_upper"], b + half, rtol=1e-4, atol=1e-6)


def test_threshold_filters_rows(lowdim, capsys):
    path, _, _ = lowdim
    assert fit(path, "--pval-corr-threshold", "0.05") == 0
    out = capsys.readouterr().out
    assert "x0 " in out and "x3 " in out
    assert "x1 " not in out and "x2 " not in out


def test_threshold_reports_empty(tmp_path, capsys):
    rng = np.random.default_rng(1)
    path = write_csv(tmp_path / "n.csv", rng.standard_normal(60), rng.standard_normal((60, 4)))
    assert fit(path, "--pval-corr-threshold", "1e-9") == 0
    assert "no variable" in capsys.readouterr().out


def test_missing_response(lowdim, capsys):
    path, _, _ = lowdim
    assert cli.main(["fit", "--data", path, "--response", "outcome"]) == 2
    assert "outcome" in capsys.readouterr().err


def test_non_numeric_cell(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("y,a,b\n1,2,3\n2,oops,4\n3,1,1\n")
    assert fit(str(p)) == 2
    err = capsys.readouterr().err
    assert "'a'" in err and "oops" in err


def test_bad_seed_env(lowdim, monkeypatch, capsys):
    path, _, _ = lowdim
    monkeypatch.setenv("HDINFER_SEED", "abc")
    assert fit(path) == 2
    assert "HDINFER_SEED" in capsys.readouterr().err


def test_constant_column_is_dimension_error(tmp_path, capsys):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((30, 3))
    x[:, 1] = 4.0
    path = write_csv(tmp_path / "c.csv", rng.standard_normal(30), x)
    assert fit(path) == 3
    assert "x1" in capsys.readouterr().err


def test_groups_by_index_and_name(lowdim, tmp_path, capsys):
    path, _, _ = lowdim
    out = str(tmp_path / "g.json")
    assert fit(path, "--groups", '[["x1","x2"],[0,3]]', "--out", out) == 0
    groups = json.load(open(out))["groups"]
    assert [g["members"] for g in groups] == [[1, 2], [0, 3]]
    assert groups[1]["pvalue"] < 0.01 < groups[0]["pvalue"]


def test_parse_groups():
    names = ["a", "b", "c"]
    assert cli.parse_groups("0,2", names) == [[0, 2]]
    assert cli.parse_groups('["a", "c"]', names) == [[0, 2]]
    assert cli.parse_groups('[[1], ["a", "b"]]', names) == [[1], [0, 1]]
    assert cli.parse_groups(None, names) == []
    for bad in ("0,7", "a,zz", "[[1,"):
        with pytest.raises(cli.CliError) as exc:
            cli.parse_groups(bad, names)
        assert exc.value.code == 2


def test_cluster_tree_written(lowdim, tmp_path):
    path, _, _ = lowdim
    tree = tmp_path / "tree.json"
    assert fit(path, "--cluster-groups", "--tree-out", str(tree)) == 0
    t = ClusterTree.from_json(tree)
    assert sorted(t.leaf_order) == list(range(5))
    assert sorted(t.nodes[t.root].members) == list(range(5))
    # the global null is false here, so the root must be rejected
    assert t.nodes[t.root].pvalue <= 0.05


@pytest.fixture
def scenario(tmp_path):
    cfg = ScenarioConfig(name="tiny", n=40, p=30, s0=2, n_y_replicates=2, n_outer_replicates=2,
                         methods=["ridge-proj", "lasso-proj"], seed=1)
    path = tmp_path / "tiny.json"
    cfg.to_json(path)
    return str(path)


def test_simulate_methods_override(scenario, tmp_path):
    out = tmp_path / "res"
    assert cli.main(["simulate", "--scenario", scenario, "--out", str(out),
                     "--methods", "ridge-proj", "--threads", "1"]) == 0
    d = json.loads((out / "tiny.json").read_text())
    assert list(d["summary"]) == ["ridge-proj"]
    assert (out / "tiny.csv").exists()


def test_simulate_invalid_scenario(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"design": "banded"}))
    assert cli.main(["simulate", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 5
    assert "design" in capsys.readouterr().err


def test_report(scenario, tmp_path):
    res = tmp_path / "res"
    assert cli.main(["simulate", "--scenario", scenario, "--out", str(res),
                     "--threads", "1"]) == 0
    rep = tmp_path / "rep"
    assert cli.main(["report", "--results", str(res), "--out", str(rep)]) == 0
    with open(rep / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["scenario"] for r in rows} == {"tiny"}
    assert {r["method"] for r in rows} == {"ridge-proj", "lasso-proj"}
    svg = (rep / "fwer.svg").read_text()
    assert 'class="reference"' in svg
    assert 'class="reference"' not in (rep / "power.svg").read_text()


def test_report_missing_directory(tmp_path):
    assert cli.main(["report", "--results", str(tmp_path / "none")]) == 2
