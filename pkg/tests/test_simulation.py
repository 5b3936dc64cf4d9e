import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from hdinfer.errors import ConfigurationError
from hdinfer.simulation import (COEFFICIENTS, ScenarioConfig, ScenarioResult,
                                ci_coverage_protocol, design_covariance, generate_coefficients,
                                generate_design, group_indices, rejections, run_scenario,
                                summarize)


def offdiag(c):
    return c[~np.eye(c.shape[0], dtype=bool)]


# ---------------------------------------------------------------- designs

def test_equicorr_moments():
    cfg = ScenarioConfig(design="equi-corr", n=2000, p=30)
    c = np.corrcoef(generate_design(cfg, 1), rowvar=False)
    assert abs(offdiag(c).mean() - 0.8) < 0.05


def test_toeplitz_adjacent_correlation():
    cfg = ScenarioConfig(design="toeplitz", n=2000, p=30)
    c = np.corrcoef(generate_design(cfg, 2), rowvar=False)
    assert abs(np.diag(c, 1).mean() - 0.9) < 0.02
    assert abs(np.diag(c, 5).mean() - 0.9 ** 5) < 0.05


def test_block_design_cross_correlation():
    cfg = ScenarioConfig(design="block-equi-corr", n=2000, p=40, rho=0.6, block_size=20)
    c = np.corrcoef(generate_design(cfg, 3), rowvar=False)
    assert abs(c[:20, 20:].mean()) < 0.03
    assert abs(offdiag(c[:20, :20]).mean() - 0.6) < 0.05


def test_expdecay_precision():
    cfg = ScenarioConfig(design="exp-decay", p=25)
    prec = np.linalg.inv(design_covariance(cfg))
    lag = np.abs(np.subtract.outer(np.arange(25), np.arange(25)))
    assert np.allclose(prec, 0.4 ** (lag / 5.0), atol=1e-8)


def test_covariance_entries():
    cov = design_covariance(ScenarioConfig(design="toeplitz", p=6))
    assert cov[0, 3] == pytest.approx(0.9 ** 3)
    cov = design_covariance(ScenarioConfig(design="equi-corr", p=6))
    assert np.all(offdiag(cov) == 0.8) and np.all(np.diag(cov) == 1.0)


def test_design_seed_determinism():
    cfg = ScenarioConfig(n=20, p=10)
    assert np.array_equal(generate_design(cfg, [5, 1]), generate_design(cfg, [5, 1]))
    assert not np.array_equal(generate_design(cfg, [5, 1]), generate_design(cfg, [5, 2]))


def test_real_design_keeps_highest_variance(tmp_path):
    rng = np.random.default_rng(0)
    scale = np.array([1.0, 5.0, 0.1, 3.0, 2.0])
    x = rng.standard_normal((40, 5)) * scale
    path = tmp_path / "x.csv"
    np.savetxt(path, x, delimiter=",", header="a,b,c,d,e", comments="")
    cfg = ScenarioConfig(design="real-x", real_x_path=str(path), n=30, p=3)
    out = generate_design(cfg, 0)
    assert out.shape == (30, 3)
    kept = x[:, [1, 3, 4]]
    assert all(any(np.array_equal(r, k) for k in kept) for r in out)


# ---------------------------------------------------------------- coefficients

def test_fixed_coefficients():
    cfg = ScenarioConfig(p=50, s0=3, coefficients="fixed(2)")
    t = generate_coefficients(cfg, 0)
    assert np.sum(t.beta == 2.0) == 3 and np.count_nonzero(t.beta) == 3
    assert np.array_equal(np.flatnonzero(t.beta), t.support)


@given(st.sampled_from(COEFFICIENTS), st.integers(0, 10_000))
def test_coefficient_ranges(scheme, seed):
    cfg = ScenarioConfig(p=30, s0=5, coefficients=scheme)
    t = generate_coefficients(cfg, seed)
    vals = t.beta[t.support]
    assert t.support.size == 5 and np.unique(t.support).size == 5
    if scheme.startswith("U"):
        lo, hi = (float(v) for v in scheme[2:-1].split(","))
        assert np.all((vals >= lo) & (vals <= hi))
    else:
        assert np.all(vals == float(scheme[6:-1]))


def test_first_positions():
    t = generate_coefficients(ScenarioConfig(p=20, s0=4, positions="first-s0"), 9)
    assert t.support.tolist() == [0, 1, 2, 3]


def test_random_positions_uniform():
    cfg = ScenarioConfig(p=20, s0=3)
    counts = np.zeros(20)
    for seed in range(2000):
        counts[generate_coefficients(cfg, seed).support] += 1
    assert stats.chisquare(counts).pvalue > 0.001


def test_block_positions():
    cfg = ScenarioConfig(design="block-equi-corr", p=100, s0=4, positions="one-block")
    s = generate_coefficients(cfg, 1).support
    assert np.unique(s // 20).size == 1
    cfg = cfg.replace(positions="separate-blocks")
    s = generate_coefficients(cfg, 1).support
    assert np.unique(s // 20).size == 4


def test_group_indices():
    cfg = ScenarioConfig(design="block-equi-corr", p=60, s0=2, positions="separate-blocks")
    t = generate_coefficients(cfg, 4)
    assert group_indices(cfg, t, "all").size == 60
    assert np.array_equal(group_indices(cfg, t, "active"), t.support)
    assert group_indices(cfg, t, "inactive").size == 58
    assert group_indices(cfg, t, "active-blocks").size == 40


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ConfigurationError, match="design"):
        ScenarioConfig(design="banded").validate()
    with pytest.raises(ConfigurationError, match="s0"):
        ScenarioConfig(p=5, s0=6).validate()
    with pytest.raises(ConfigurationError, match="methods"):
        ScenarioConfig(methods=["bogus"]).validate()
    with pytest.raises(ConfigurationError, match="n_mc"):
        ScenarioConfig(group_tests=["all"], n_mc=100).validate()
    with pytest.raises(ConfigurationError, match="colour"):
        ScenarioConfig.from_dict({"colour": "red"})


def test_config_json_round_trip(tmp_path):
    cfg = ScenarioConfig(name="x", design="equi-corr", methods=["lasso-proj:cv"], seed=7)
    path = tmp_path / "cfg.json"
    cfg.to_json(path)
    again = ScenarioConfig.from_json(path)
    assert again == cfg and again.to_json() == cfg.to_json()


def test_bundled_scenarios_valid():
    from importlib import resources
    root = resources.files("hdinfer") / "scenarios"
    names = [f.name for f in root.iterdir() if f.name.endswith(".json")]
    assert "toeplitz_s3.json" in names
    for name in names:
        ScenarioConfig.from_dict(json.loads((root / name).read_text()))


# ---------------------------------------------------------------- metrics

def tiny(**kw):
    base = dict(n=40, p=30, s0=2, coefficients="fixed(2)", n_y_replicates=3,
                n_outer_replicates=2, methods=["ridge-proj", "oracle"], seed=3)
    base.update(kw)
    return ScenarioConfig(**base).validate()


def test_rejections_level_zero():
    assert rejections([0.0, 0.0], 0.0).size == 0
    assert rejections([0.01, 0.2], 0.05).tolist() == [0]


def test_alpha_zero_rejects_nothing():
    res = run_scenario(tiny(alpha=0.0))
    for s in res.summary.values():
        assert s["fwer"] == 0.0 and s["power"] == 0.0 and s["avg_v"] == 0.0


def test_oracle_accounting():
    s = run_scenario(tiny(methods=["oracle"])).summary["oracle"]
    assert s["power"] == 1.0 and s["fwer"] == 0.0 and s["avg_v"] == 0.0


def test_summary_fields_and_ranges():
    res = run_scenario(tiny(group_tests=["all", "inactive"], n_mc=10_000))
    s = res.summary["ridge-proj"]
    assert s["n_replicates"] == 6 and s["failures"] == 0
    assert 0 <= s["fwer"] <= 1 and 0 <= s["power"] <= 1 and s["avg_v"] >= 0
    assert 0 <= s["ci_coverage_inactive"] <= 1
    assert "group_reject:all" in s and "group_reject:inactive" in s
    # per-active bookkeeping: rejected plus missed sums to one per variable
    for o in res.outers:
        for r in o["records"]:
            assert len(r["active_rejected"]) == 2
            assert r["tp"] == sum(r["active_rejected"])


def test_scenario_determinism_and_threads():
    cfg = tiny()
    a, b = run_scenario(cfg), run_scenario(cfg, n_jobs=2)
    strip = lambda r: [{k: v for k, v in rec.items() if k != "seconds"}  # noqa: E731
                       for o in r.outers for rec in o["records"]]
    assert strip(a) == strip(b)
    for m in cfg.methods:
        assert {k: v for k, v in a.summary[m].items() if k != "runtime"} == \
               {k: v for k, v in b.summary[m].items() if k != "runtime"}


def test_result_round_trip(tmp_path):
    res = run_scenario(tiny())
    path = tmp_path / "r.json"
    res.to_json(path)
    again = ScenarioResult.from_json(path)
    assert again.config == res.config
    assert again.summary == json.loads(json.dumps(res.summary))
    res.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "scenario,method,metric,value,replicate"
    assert any(line.endswith(",all") for line in lines)


def test_summarize_counts_failures():
    cfg = tiny(methods=["ridge-proj"])
    outers = [{"outer": 0, "records": [
        {"method": "ridge-proj", "failed": True, "seconds": 0.1},
        {"method": "ridge-proj", "failed": False, "seconds": 0.1, "v": 1, "tp": 2,
         "groups": {}}]}]
    s = summarize(cfg, outers)["ridge-proj"]
    assert s["failures"] == 1 and s["n_replicates"] == 1
    assert s["fwer"] == 1.0 and s["power"] == 1.0


def test_coverage_protocol_null():
    cfg = tiny(s0=0, methods=["ridge-proj"])
    cov = ci_coverage_protocol(cfg, n_replicates=4)
    assert cov.covered["ridge-proj"].max() <= 4
    assert 0.0 <= cov.inactive_coverage("ridge-proj") <= 1.0


def test_coverage_protocol_undefined_counted_separately():
    cfg = tiny(methods=["multi-split"], n_splits=5, p=30)
    cov = ci_coverage_protocol(cfg, n_replicates=2)
    total = cov.covered["multi-split"] + cov.undefined["multi-split"]
    assert np.all(total <= 2)
    assert cov.undefined["multi-split"].sum() > 0
