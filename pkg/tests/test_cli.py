import io
import json
import math
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from ellipdep import cli
from ellipdep import models as m
from ellipdep import panel as pn
from ellipdep.models import ModelSpec as S
from ellipdep.samplers import SeedSpec


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def frame(text):
    return pd.read_csv(io.StringIO(text))


class TestPredict:
    def test_zeta1_grid(self, capsys):
        code, out, _ = run(capsys, "predict", "--model", "student", "--nu", 5, "--observable", "zeta1",
                           "--rho-grid", "0:1:0.05")
        assert code == 0
        df = frame(out)
        assert len(df) == 21
        pred = m.elliptical_predictions(S.student(5), df.rho.to_numpy()).zeta1
        assert np.allclose(df.zeta1, pred, rtol=1e-11, atol=1e-12)

    def test_cstar(self, capsys):
        _, out, _ = run(capsys, "predict", "--model", "gaussian", "--observable", "cstar", "--rho", 0.5)
        assert frame(out).cstar.iloc[0] == pytest.approx(1 / 3, abs=1e-12)

    def test_beta(self, capsys):
        _, out, _ = run(capsys, "predict", "--model", "student", "--nu", 4, "--rho", 0.3, "--observable", "beta")
        assert frame(out).beta.iloc[0] == pytest.approx(0.263, abs=1e-3)

    def test_tail_columns(self, capsys):
        _, out, _ = run(capsys, "predict", "--model", "student", "--nu", 5, "--rho", 0.3,
                        "--observable", "tauUU_exact,tauUU_expansion,tauUU_asymptote", "--p-grid", "0.95,0.99")
        df = frame(out)
        assert list(df.columns) == ["rho", "p", "tauUU_exact", "tauUU_expansion", "tauUU_asymptote"]
        assert df.tauUU_exact.iloc[0] == pytest.approx(m.model_tail_exact(S.student(5), 0.3, 0.95), rel=1e-10)

    def test_usage_errors(self, capsys):
        with pytest.raises(SystemExit) as info:
            cli.main(["predict", "--model", "student", "--observable", "zeta1", "--rho", "0.3"])
        assert info.value.code == 2
        with pytest.raises(SystemExit):
            cli.main(["predict", "--model", "gaussian", "--observable", "zeta1", "--rho", "0.3", "--bogus"])

    def test_json_mirrors_csv(self, capsys):
        args = ["predict", "--model", "student", "--nu", 6, "--observable", "zeta2,cstar", "--rho-grid", "0:0.5:0.25"]
        _, out_csv, _ = run(capsys, *args)
        _, out_json, _ = run(capsys, *args, "--format", "json")
        rec = json.loads(out_json)
        df = frame(out_csv)
        assert len(rec) == len(df)
        for r, (_, row) in zip(rec, df.iterrows()):
            assert set(r) == set(df.columns)
            for k in r:
                assert r[k] == pytest.approx(row[k], rel=1e-11)


class TestSimulate:
    def test_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert run(capsys, "simulate", "--model", "student", "--nu", 5, "--n", 10, "--t", 1000,
                       "--rho", 0.3, "--seed", 7, "--out", path)[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert b"\r\n" not in a.read_bytes()

    def test_threads_do_not_change_output(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        base = ["simulate", "--model", "lognormal", "--s", 0.4, "--n", 3, "--t", 70000, "--seed", 2]
        run(capsys, *base, "--threads", 1, "--out", a)
        run(capsys, *base, "--threads", 3, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_two_assets_rho(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        T = 20000
        run(capsys, "simulate", "--model", "gaussian", "--n", 2, "--t", T, "--rho", 0.3, "--seed", 3, "--out", path)
        panel = pn.load_panel(path)
        r = np.corrcoef(panel.returns.T)[0, 1]
        assert abs(r - 0.3) < 3 * (1 - 0.09) / math.sqrt(T)

    def test_toy(self, tmp_path, capsys):
        path = tmp_path / "toy.csv"
        run(capsys, "simulate", "--model", "toy", "--kappa1", 0, "--kappa2", 1, "--n", 2, "--t", 200000,
            "--seed", 4, "--out", path)
        _, out, _ = run(capsys, "pairscan", "--in", path)
        row = frame(out).iloc[0]
        assert abs(row.rho) < 0.01 and row.cstar > 0.25 + 3 * math.sqrt(3 / 16 / 200000)

    def test_non_psd(self, tmp_path, capsys):
        corr = tmp_path / "c.csv"
        corr.write_text("1,0.9,-0.9\n0.9,1,0.9\n-0.9,0.9,1\n")
        code, _, err = run(capsys, "simulate", "--model", "gaussian", "--n", 3, "--t", 10, "--corr", corr,
                           "--out", tmp_path / "x.csv")
        assert code == 1 and "positive semi-definite" in err
        assert not (tmp_path / "x.csv").exists()


@pytest.fixture(scope="module")
def panel_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "panel.csv"
    assert cli.main(["simulate", "--model", "student", "--nu", "5", "--n", "12", "--t", "3000",
                     "--loadings", ",".join(f"{v:.3f}" for v in np.linspace(0.2, 0.9, 12)),
                     "--seed", "11", "--out", str(path)]) == 0
    return path


class TestStages:
    def test_pairscan_three_assets(self, tmp_path, capsys):
        path = tmp_path / "p.csv"
        run(capsys, "simulate", "--model", "gaussian", "--n", 3, "--t", 400, "--out", path)
        code, out, _ = run(capsys, "pairscan", "--in", path)
        df = frame(out)
        assert code == 0 and len(df) == 3
        assert list(df.columns) == list(pn.PAIRSCAN_COLUMNS)

    def test_pairscan_threads(self, panel_path, capsys):
        _, a, _ = run(capsys, "pairscan", "--in", panel_path, "--threads", 1)
        _, b, _ = run(capsys, "pairscan", "--in", panel_path, "--threads", 0)
        assert a == b

    def test_bins_equal_counts(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        t = pd.DataFrame({"asset_i": [f"a{k}" for k in range(95)], "asset_j": "b",
                          "rho": rng.uniform(-1, 1, 95), "cstar": rng.uniform(0, 0.5, 95)})
        path = tmp_path / "t.csv"
        t.to_csv(path, index=False)
        _, out, _ = run(capsys, "bins", "--in", path, "--n-bins", 10, "--observables", "cstar")
        df = frame(out)
        assert list(df.columns) == ["bin_index", "rho_lo", "rho_hi", "rho_mean", "count", "cstar_mean", "cstar_sd"]
        assert df["count"].max() - df["count"].min() <= 1 and df["count"].sum() == 95

    def test_bins_schema_mismatch(self, tmp_path, capsys):
        path = tmp_path / "t.csv"
        pd.DataFrame({"asset_i": ["a"], "corr": [0.1]}).to_csv(path, index=False)
        code, _, err = run(capsys, "bins", "--in", path)
        assert code == 1 and "'rho'" in err
        pd.DataFrame({"rho": [0.1, 0.2]}).to_csv(path, index=False)
        code, _, err = run(capsys, "bins", "--in", path, "--n-bins", 1, "--observables", "zeta1")
        assert code == 1 and "'zeta1'" in err

    def test_profile(self, panel_path, capsys):
        _, out, _ = run(capsys, "profile", "--in", panel_path, "--n-bins", 3, "--grid", "0.25,0.5,0.75")
        df = frame(out)
        assert list(df.columns) == ["bin_index", "rho_mean", "p", "delta_diag_mean", "delta_diag_sd",
                                    "delta_anti_mean", "delta_anti_sd", "count"]
        half = df[df.p == 0.5]
        assert np.array_equal(half.delta_diag_mean, half.delta_anti_mean)

    def test_rolling(self, panel_path, capsys):
        _, out, _ = run(capsys, "rolling", "--in", panel_path, "--window", 500, "--step", 500,
                        "--overlay", "student_nu5,gaussian")
        df = frame(out)
        assert list(df.columns) == ["window_end_date", "stat", "value", "pred_student_nu5_meanrho",
                                    "pred_student_nu5_rhodist", "pred_gaussian_meanrho", "pred_gaussian_rhodist"]
        assert len(df) == 6 * 4

    def test_ewma(self, panel_path, capsys):
        _, out, _ = run(capsys, "ewma", "--in", panel_path, "--timescale", 125)
        df = frame(out)
        assert set(df.stat) == {"q0.05", "q0.25", "q0.5", "q0.75", "q0.95"}
        assert len(df) == (3000 - 125) * 5

    def test_elliptest_self(self, panel_path, capsys):
        code, out, _ = run(capsys, "elliptest", "--in", panel_path, "--model", "student", "--nu", 5,
                           "--n-bins", 6, "--seed", 3, "--format", "json")
        rep = json.loads(out)
        assert code == 0 and len(rep["bins"]) == 6
        lib = pn.elliptest(pn.load_panel(panel_path), S.student(5), 6, SeedSpec(3))
        assert rep["fraction_bins_null_consistent"] == pytest.approx(lib.fraction_null_consistent(), abs=1e-12)
        for b, (_, row) in zip(rep["bins"], lib.comparison.iterrows()):
            assert b["residual_mean"] == pytest.approx(row.residual_mean, rel=1e-11, abs=1e-14)
            assert b["sim_residual_sd"] == pytest.approx(row.sim_residual_sd, rel=1e-11)

    def test_missing_input(self, tmp_path, capsys):
        code, _, err = run(capsys, "pairscan", "--in", tmp_path / "nope.csv")
        assert code == 1 and "nope.csv" in err


class TestProcess:
    def test_help_lists_defaults(self):
        text = subprocess.run([sys.executable, "-m", "ellipdep.cli", "rolling", "--help"], capture_output=True,
                              text=True, check=True).stdout
        for token in ("default: 250", "default: 25)", "default: 0.95", "default: 0)"):
            assert token in text
        text = subprocess.run([sys.executable, "-m", "ellipdep.cli", "ewma", "--help"], capture_output=True,
                              text=True, check=True).stdout
        assert "default: 125" in text and "0.05,0.25,0.5,0.75,0.95" in text
        text = subprocess.run([sys.executable, "-m", "ellipdep.cli", "bins", "--help"], capture_output=True,
                              text=True, check=True).stdout
        assert "default: 10" in text

    def test_failed_write_leaves_no_file(self, tmp_path, monkeypatch, capsys):
        path = tmp_path / "out.csv"

        def broken(self, fh, **kw):
            fh.write("rho,zeta1\n0.1,")
            raise OSError("disk full")

        monkeypatch.setattr(pd.DataFrame, "to_csv", broken)
        code, _, err = run(capsys, "predict", "--model", "gaussian", "--observable", "zeta1", "--rho", 0.1,
                           "--out", path)
        assert code == 1 and "disk full" in err
        assert list(tmp_path.iterdir()) == []
