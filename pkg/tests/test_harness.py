import math

import numpy as np
import pytest

from loo_certify import harness
from loo_certify.core import ConfigError


def small(name="kde-sine", **kw):
    base = dict(n_grid=[16, 32, 64], reps=12, oracle_M=2000, z_samples=20,
                profile_probes=100, delta3_reps=100, delta3_M=200, restriction_reps=500)
    base.update(kw)
    return harness.preset(name).replace(**base)


def test_parse_config_roundtrip():
    cfg = small("ols-gaussian")
    again = harness.parse_config_text(harness.format_config(cfg))
    assert again == cfg


def test_parse_config_values():
    cfg = harness.parse_config_text("""
        # comment
        name = demo
        generator = gaussian_linear
        estimator = ols_simple
        loss = absolute
        n_grid = 8, 16, 32
        reps = 5
        two_sided = true
        lipschitz_const = 2.5   # trailing comment
        eps_bound_grid = 0.1, 1e3
    """)
    assert cfg.name == "demo" and cfg.n_grid == [8, 16, 32] and cfg.reps == 5
    assert cfg.two_sided is True and cfg.lipschitz_const == 2.5
    assert cfg.eps_bound_grid == [0.1, 1000.0]


@pytest.mark.parametrize("text,needle", [
    ("bogus = 1", "bogus"),
    ("reps = 3\nreps = 4", "reps"),
    ("reps = many", "reps"),
    ("estimator = svm", "svm"),
    ("n_grid = 32, 16", "increasing"),
    ("generator = gaussian_linear\nsigma2_mu = 1", "sigma2_mu"),
    ("just a line", "key = value"),
    ("estimator = kde\nbandwidth = 0", "bandwidth"),
    ("generator = gaussian_sine\ngen_noise = 0", "noise"),
])
def test_parse_config_errors(text, needle):
    with pytest.raises(ConfigError, match=needle):
        harness.parse_config_text(text)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_config(tmp_path / "nope.cfg")


def test_presets():
    assert set(harness.PRESETS) == {"kde-sine", "ols-gaussian", "nw-stabilized"}
    kde = harness.preset("kde-sine")
    assert kde.bandwidth == 0.1 and kde.eps_tail == 0.02 and kde.reps == 200
    assert kde.oracle_M == 100_000 and kde.n_grid == [32, 64, 128, 256, 512, 1024, 2048]
    nw = harness.preset("nw-stabilized")
    assert nw.bandwidth == 0.01 and nw.stabilizer == 0.01
    with pytest.raises(ConfigError):
        harness.preset("nope")
    # presets hand out copies
    harness.preset("kde-sine").n_grid.append(4096)
    assert harness.preset("kde-sine").n_grid[-1] == 2048


def test_summary_consistent_with_records():
    res = harness.run_experiment(small(), with_bounds=False)
    assert [(r.n, r.rep) for r in res.records] == [(n, k) for n in (16, 32, 64) for k in range(12)]
    for s in res.summaries:
        err = res.errors(s.n)
        assert s.std_dev == pytest.approx(np.std(err, ddof=1), rel=1e-14)
        assert s.tail_freq == np.mean(np.abs(err) > 0.02)
        assert s.tail_se == pytest.approx(math.sqrt(s.tail_freq * (1 - s.tail_freq) / 12))
    for r in res.records:
        assert r.error == r.risk - r.loo_estimate
        assert r.oracle_se > 0


def test_csv_headers_and_roundtrip(tmp_path):
    res = harness.run_experiment(small("ols-gaussian"))
    paths = harness.emit_csv(res, tmp_path)
    names = sorted(p.name for p in paths)
    assert names == ["ols-gaussian_bounds.csv", "ols-gaussian_records.csv", "ols-gaussian_summary.csv"]
    rec = (tmp_path / "ols-gaussian_records.csv").read_text()
    assert rec.splitlines()[0] == "n,rep,loo_estimate,risk,error,oracle_se"
    summ = (tmp_path / "ols-gaussian_summary.csv").read_text().splitlines()
    assert summ[0] == "n,std_dev,tail_freq,tail_se,bound_main,bound_simplified,bound_data_dependent,valid_main"
    assert len(summ) == 4
    assert "\r" not in rec
    # full round-trip precision
    assert harness.read_records(tmp_path / "ols-gaussian_records.csv") == res.records
    for line, s in zip(summ[1:], res.summaries):
        row = line.split(",")
        # the Lipschitz-case bound only applies to a profile with delta2 = 0
        assert (row[5] == "") == (res.profiles[s.n]["delta2"] > 0)
        assert row[6] != "" and row[7] in ("true", "false")


def test_kde_run_has_simplified_bound(tmp_path):
    res = harness.run_experiment(small())
    assert all(s.bound_simplified is not None and s.bound_data_dependent is None for s in res.summaries)
    assert all(0 < s.bound_main <= 1 for s in res.summaries)


def test_determinism_across_threads(tmp_path):
    cfg = small("nw-stabilized")
    out = {}
    for threads in (1, 3):
        d = tmp_path / f"t{threads}"
        harness.emit_csv(harness.run_experiment(cfg, threads=threads), d)
        out[threads] = {p.name: p.read_bytes() for p in d.iterdir()}
    assert out[1] == out[3]


def test_seed_changes_output():
    a = harness.run_experiment(small(), with_bounds=False)
    b = harness.run_experiment(small(base_seed=7), with_bounds=False)
    assert a.records != b.records


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("LOO_CERTIFY_THREADS", raising=False)
    assert harness.resolve_threads(None) == 1
    monkeypatch.setenv("LOO_CERTIFY_THREADS", "4")
    assert harness.resolve_threads(None) == 4
    assert harness.resolve_threads(0) == 1


def test_slope_fits():
    n = np.array([32, 64, 128, 256])
    slope, icpt, r2 = harness.fit_loglog_slope(zip(n, 3.0 * n**-0.5))
    assert slope == pytest.approx(-0.5) and icpt == pytest.approx(math.log(3.0)) and r2 == pytest.approx(1.0)
    slope, _, r2 = harness.fit_semilog_slope(zip(n, np.exp(-0.01 * n)))
    assert slope == pytest.approx(-0.01) and r2 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        harness.fit_loglog_slope([(1, 1.0), (2, 0.0), (3, 1.0)])
    with pytest.raises(ValueError):
        harness.fit_semilog_slope([(1, 1.0), (2, 1.0)])


def test_build_profile_analytic_and_fitted():
    prof, info = harness.build_profile(small(), 100)
    assert prof.provenance == "analytic"
    assert info["delta1"] == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi) / (0.01 * 10))
    mean_cfg = small(estimator="empirical_mean", sample_coord="y", loss="absolute")
    prof, info = harness.build_profile(mean_cfg, 65)
    assert info["delta1"] == pytest.approx(1 / math.sqrt(65)) and info["delta2"] == 0.0
    assert info["delta3"] == pytest.approx(2 * mean_cfg.make_generator().abs_moment("y") / 64)
    prof, info = harness.build_profile(small("ols-gaussian"), 32)
    assert prof.provenance == "fitted" and info["delta3"] >= info["delta3_estimate"]


def test_restriction_variances():
    gen = harness.preset("ols-gaussian").make_generator()
    assert harness.restriction_variances(harness.preset("ols-gaussian"), gen) == (1.0, 26.0)
    cfg = harness.preset("kde-sine").replace(restriction_var_x=2.0, restriction_var_y=3.0)
    assert harness.restriction_variances(cfg, cfg.make_generator()) == (2.0, 3.0)


def test_two_sided_doubles_bounds():
    one = harness.run_experiment(small(), with_bounds=True)
    two = harness.run_experiment(small(two_sided=True), with_bounds=True)
    for a, b in zip(one.summaries, two.summaries):
        assert b.bound_main == pytest.approx(min(1.0, 2 * a.bound_main)) or b.bound_main == 1.0


def test_emit_svg(tmp_path):
    res = harness.run_experiment(small())
    paths = harness.emit_svg(res, tmp_path)
    assert len(paths) == 3
    assert all(p.read_text().startswith("<svg") for p in paths)


def test_stability_table():
    rows = harness.stability_table(small("ols-gaussian", n_grid=[16, 32]))
    assert [r["n"] for r in rows] == [16, 32]
    assert all(r["violations"] == 0 and r["probes"] == 100 for r in rows)
