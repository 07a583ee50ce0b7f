import csv
import json
import math

import numpy as np
import pytest

from hypokinetic import cli

SMALL = """
[grid]
nx = 16
nv = 8
[time]
t_end = 2
"""


def write(tmp_path, text, name="s.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestRates:
    def test_scaled_constants_example(self, tmp_path, capsys):
        code = cli.main(["rates", "--a", "1", "--c", "1", "--d", "1", "--scaling", "highfield", "--kn", "1", "--out", str(tmp_path)])
        assert code == 0
        (row,) = rows(tmp_path / "rates.csv")
        assert float(row["eps0_highfield"]) == 0.25

    def test_unit_triple_highfield(self, tmp_path):
        # alpha = beta = gamma = 1 maps to (a, c, d) = (1, 1/2, 1)
        assert cli.main(["rates", "--alpha", "1", "--beta", "1", "--gamma", "1", "--scaling", "highfield", "--out", str(tmp_path)]) == 0
        (row,) = rows(tmp_path / "rates.csv")
        assert float(row["eps0_highfield"]) == pytest.approx(1 / 6)

    def test_parabolic_sweep_uniform(self, tmp_path):
        args = ["rates", "--alpha", "1", "--beta", "1", "--gamma", "1", "--kn", "1,0.1,0.01", "--scaling", "parabolic"]
        assert cli.main(args + ["--out", str(tmp_path)]) == 0
        table = rows(tmp_path / "rates.csv")
        assert len(table) == 3
        lam = [float(r["lambda_parabolic"]) for r in table]
        assert max(lam) / min(lam) <= 3
        # 17 significant digits round-trip
        assert all(float(r["lambda_lower"]) == float(format(float(r["lambda_lower"]), ".17g")) for r in table)

    @pytest.mark.parametrize("args", [
        ["rates"],
        ["rates", "--alpha", "1", "--beta", "1"],
        ["rates", "--alpha", "-1", "--beta", "1", "--gamma", "1"],
        ["rates", "--alpha", "1", "--beta", "1", "--gamma", "1", "--kn", "0.1"],
        ["rates", "--a", "1", "--c", "1", "--d", "1", "--kn", "0.1", "--scaling", "parabolic"],
        ["rates", "--alpha", "1", "--beta", "1", "--gamma", "1", "--kn", "abc"],
    ])
    def test_usage_errors(self, args, capsys):
        assert cli.main(args) == 2
        assert "error" in capsys.readouterr().err

    def test_measured_from_config(self, tmp_path, capsys):
        assert cli.main(["rates", "--config", write(tmp_path, SMALL)]) == 0
        assert "measured alpha" in capsys.readouterr().out


class TestSimulate:
    def test_outputs_and_entropy(self, tmp_path):
        out = tmp_path / "run"
        assert cli.main(["simulate", "--config", write(tmp_path, SMALL), "--out", str(out)]) == 0
        table = rows(out / "norms.csv")
        ent = np.array([float(r["entropy"]) for r in table])
        assert np.all(np.diff(ent) <= 1e-10)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["fitted_rate_ok"] and summary["envelope_ok"]
        assert summary["mass_drift"] <= 1e-12

    def test_small_kn_parabolic(self, tmp_path):
        out = tmp_path / "p"
        assert cli.main(["simulate", "--config", write(tmp_path, SMALL), "--kn", "0.01", "--scaling", "parabolic", "--out", str(out)]) == 0
        s = json.loads((out / "summary.json").read_text())
        assert s["fitted_rate"] >= s["rate_plan"]["lambda_lower"] - 0.01

    def test_deterministic(self, tmp_path):
        cfg = write(tmp_path, SMALL + "[initial]\nkind = random\nseed = 5\n")
        for name in ("a", "b"):
            assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "norms.csv").read_bytes() == (tmp_path / "b" / "norms.csv").read_bytes()

    def test_bad_key_named(self, tmp_path, capsys):
        assert cli.main(["simulate", "--config", write(tmp_path, "[grid]\nnxx = 4\n")]) == 2
        assert "nxx" in capsys.readouterr().err

    def test_unstable_dt(self, tmp_path, capsys):
        assert cli.main(["simulate", "--config", write(tmp_path, SMALL + "dt = 0.5\n"), "--out", str(tmp_path / "o")]) == 3
        assert "stability" in capsys.readouterr().err

    def test_single_kn_only(self, tmp_path):
        assert cli.main(["simulate", "--config", write(tmp_path, SMALL), "--kn", "0.1,0.01", "--scaling", "parabolic"]) == 2


class TestHierarchy:
    @pytest.mark.parametrize("kind,sigma1", [("affine", 0.5), ("analytic", 0.4)])
    def test_zero_violations(self, tmp_path, capsys, kind, sigma1):
        cfg = write(tmp_path, SMALL + f"[sigma]\nkind = {kind}\nsigma1 = {sigma1}\n[initial]\nh = 1\n")
        out = tmp_path / "h"
        assert cli.main(["hierarchy", "--config", cfg, "--lmax", "5", "--out", str(out)]) == 0
        assert "bound violations: 0" in capsys.readouterr().out
        table = rows(out / "hierarchy.csv")
        measured = "norm_gl" if kind == "affine" else "norm_gl_over_lfact"
        assert all(float(r[measured]) <= float(r["bound_kn"]) * (1 + 1e-12) for r in table)
        if kind == "analytic":
            assert all(math.isnan(float(r["bound_gl1"])) for r in table)
        radius = rows(out / "radius.csv")
        assert [int(r["lmax"]) for r in radius] == [5]
        assert float(radius[0]["radius_proxy"]) >= 1 / (2 * 2) - 0.02

    def test_lmax_guard(self, tmp_path):
        assert cli.main(["hierarchy", "--config", write(tmp_path, SMALL), "--lmax", "11"]) == 2


class TestSweep:
    def test_grid_of_runs(self, tmp_path, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "2")
        out = tmp_path / "sw"
        args = ["sweep", "--config", write(tmp_path, SMALL), "--kn", "0.5,0.1", "--scaling", "parabolic,highfield", "--out", str(out)]
        assert cli.main(args) == 0
        table = rows(out / "sweep.csv")
        assert {(r["scaling"], float(r["kn"])) for r in table} == {
            (s, k) for s in ("parabolic", "highfield") for k in (0.5, 0.1)
        }
        assert (out / "highfield_kn0.1" / "norms.csv").exists()

    def test_worker_count(self, monkeypatch):
        monkeypatch.setenv(cli.THREADS_ENV, "3")
        assert cli.worker_count(10) == 3
        assert cli.worker_count(2) == 2
        monkeypatch.setenv(cli.THREADS_ENV, "many")
        with pytest.raises(cli.UsageError):
            cli.worker_count(2)


class TestVerify:
    def test_asymmetric_grid_fails(self, tmp_path, capsys):
        assert cli.main(["verify", "--config", write(tmp_path, "[grid]\nv_shift = 0.3\n")]) == 1
        assert "ΠTΠ ≠ 0" in capsys.readouterr().out

    def test_sigma_crossing_zero(self, tmp_path):
        assert cli.main(["verify", "--config", write(tmp_path, "[sigma]\nkind = affine\nsigma1 = 1.5\n")]) == 2

    def test_default_scenario_exits_zero(self, capsys):
        code = cli.main(["verify"])
        out = capsys.readouterr().out
        print(out)
        assert out.count("criterion") == 11
        assert code == 0
