import json
import math

import pytest

from fbmlab import asymlab, cli


@pytest.fixture(autouse=True)
def cache_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "cache"))
    return tmp_path / "cache"


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_innerprod_all_methods(tmp_path, capsys):
    assert run("innerprod", "--f", "1@[0,1]", "--g", "1@[2,3]", "--method", "all", "--out", tmp_path) == 0
    res = json.loads((tmp_path / "innerprod.json").read_text())
    vals = res["values"]
    assert set(vals) == {"jolis", "window", "fourier", "grid"}
    ref = 0.5 * (3**0.6 - 2 * 2**0.6 + 1)
    for v in vals.values():
        assert v == pytest.approx(ref, abs=5e-3)
    assert "window - jolis" in capsys.readouterr().out


def test_innerprod_variance(tmp_path):
    assert run("innerprod", "--f", "1@[0,2]", "--g", "1@[0,2]", "--method", "jolis", "--out", tmp_path) == 0
    v = json.loads((tmp_path / "innerprod.json").read_text())["values"]["jolis"]
    assert v == pytest.approx(2**0.6, rel=1e-10)


def test_innerprod_overlap_is_user_error(tmp_path):
    assert run("innerprod", "--f", "1@[0,2]", "--g", "1@[1,3]", "--method", "disjoint", "--out", tmp_path) == 2


def test_innerprod_parse_error(tmp_path, capsys):
    assert run("innerprod", "--f", "1@[0,1] 2@[1,2]", "--g", "1@[1,3]", "--out", tmp_path) == 2
    assert "position" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["identity", "--h", "0.7"], ["identity", "--t-grid", "5,3"], ["identity", "--threads", "0"]])
def test_config_errors(argv, tmp_path):
    assert run(*argv, "--out", tmp_path) == 2


def test_unknown_subcommand():
    assert run("nosuch") == 2


def test_config_file_and_override(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\nh = 0.35\nt_grid = 10, 20\nseed = 5\n")
    ap = cli.build_parser()
    cfg = cli.build_config(ap.parse_args(["identity", "--config", str(cfgfile), "--seed", "9"]))
    assert cfg.h == 0.35 and cfg.t_grid == (10.0, 20.0) and cfg.seed == 9
    cfgfile.write_text("bogus = 1\n")
    with pytest.raises(cli.ConfigError):
        cli.build_config(ap.parse_args(["identity", "--config", str(cfgfile)]))


def test_identity_json(tmp_path):
    assert run("identity", "--h", "0.3", "--out", tmp_path) == 0
    res = json.loads((tmp_path / "identity.json").read_text())
    assert res["H"] == 0.3
    assert res["rel_err"] <= 1e-4
    assert {"lhs", "rhs", "config", "version"} <= set(res)


def test_appendix_q_csv(tmp_path):
    assert run("appendix", "--ids", "Q", "--t-grid", "8,16,32,64", "--out", tmp_path) == 0
    meta, rows = cli.read_csv(tmp_path / "appendix.csv")
    assert meta["operation"] == "appendix"
    assert meta["config"]["t_grid"] == [8.0, 16.0, 32.0, 64.0]
    assert list(rows[0]) == ["id", "T", "value", "fitted_slope", "closed_slope", "rel_err", "status"]
    assert all(float(r["closed_slope"]) == 6 * math.exp(-2) + 2 for r in rows)
    assert float(rows[0]["rel_err"]) < 1e-2
    assert float(rows[1]["value"]) == asymlab.eval_appendix_integral("Q", 16.0, 0.3)


def test_ftnorm_oracle_and_cache(tmp_path, cache_dir):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("ftnorm", "--t-grid", "2,3", "--oracle", "--out", out1) == 0
    _, rows = cli.read_csv(out1 / "ftnorm.csv")
    for r in rows:
        assert r["status"] == "ok"
        assert float(r["total"]) == pytest.approx(float(r["oracle"]), rel=1e-2)
    assert run("ftnorm", "--t-grid", "2,3", "--out", out2) == 0
    env = json.loads((out2 / "ftnorm.json").read_text())
    assert env["cache_hits"] == 2
    _, rows2 = cli.read_csv(out2 / "ftnorm.csv")
    assert [r["total"] for r in rows2] == [r["total"] for r in rows]
    fresh = asymlab.norm_ft_sq(asymlab.FtKernelParams(3.0, 1.0, 0.3)).total
    assert float(rows2[1]["total"]) == fresh


def test_cache_key_depends_on_config():
    k = cli.Cache.key
    assert k("ftnorm", {"h": 0.3}) != k("ftnorm", {"h": 0.35})
    assert k("ftnorm", {"h": 0.3}) != k("appendix", {"h": 0.3})
    assert k("ftnorm", {"h": 0.3, "T": 2}) == k("ftnorm", {"T": 2, "h": 0.3})


def test_be_rate_small_run_unreliable_and_reproducible(tmp_path):
    args = ("be-rate", "--n-reps", "100", "--t-grid", "5,10", "--delta", "0.125", "--out", tmp_path)
    assert run(*args) == 0
    first = (tmp_path / "be.csv").read_bytes()
    be = json.loads((tmp_path / "be.json").read_text())
    assert be["outputs"]["beta_lse_status"] == "unreliable"
    assert be["outputs"]["beta_lse"] is None
    assert run(*args) == 0
    assert (tmp_path / "be.csv").read_bytes() == first
    meta, rows = cli.read_csv(tmp_path / "be.csv")
    assert list(rows[0]) == ["T", "n_reps", "dk_lse", "dk_mm", "var_norm_lse", "var_norm_mm", "mc_floor"]
    assert float(rows[0]["mc_floor"]) == pytest.approx(0.06)
    dat = (tmp_path / "be_rate.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat) == 3


def test_be_rate_grid_mismatch(tmp_path):
    assert run("be-rate", "--n-reps", "100", "--t-grid", "5.05", "--out", tmp_path) == 2


def test_selftest_fault_injection(monkeypatch):
    monkeypatch.setattr(asymlab, "norm_slope", lambda h: 1.01 * 0.33819482331669)
    (name, ok, msg), = cli.run_selftest(cli.RunConfig(), [c for c in cli.SELFTESTS if c[0] == "slope identity"])
    assert not ok


def test_selftest_tightened_tolerance():
    base = cli.RunConfig()
    tight = cli.RunConfig(tol_abs=base.tol_abs / 100, tol_rel=base.tol_rel / 100)
    checks = [c for c in cli.SELFTESTS if c[0] == "slope identity"]
    (_, ok, msg), = cli.run_selftest(tight, checks)
    assert not ok and msg.startswith("budget exceeded")


def test_selftest_clean(capsys):
    assert run("selftest") == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
