"""Command-line interface: subcommands, config merging, output formats and exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from hybridlik.asymptotics import kappa_a, population_blocks
from hybridlik.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, SCHEMA_VERSION, main
from hybridlik.config import ConfigError, load_csv, parse_grid
from hybridlik.controls import moment_control
from hybridlik.hl import control_focus
from hybridlik.models import builtin_model, builtin_wide, fit_ml


def write_column(path, values, header="y"):
    with open(path, "w") as fh:
        if header:
            fh.write(header + "\n")
        for v in values:
            fh.write(f"{float(v)!r}\n")
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def gamma_csv(tmp_path):
    y = builtin_model("gamma").sample([2.0, 0.5], 150, 0)
    return write_column(tmp_path / "y.csv", y), y


@pytest.fixture
def beta_config(tmp_path):
    y = builtin_wide("beta_one_in_beta").sample([2.0], [1.1], 150, 1)
    cfg = {"data": write_column(tmp_path / "b.csv", y), "model": "beta_one",
           "wide_model": {"name": "beta_one_in_beta", "gamma0": [1.0]},
           "controls": [{"kind": "moment", "powers": [2]}],
           "focus": {"kind": "control", "index": 0}, "a": 0.0, "seed": 3,
           "output_dir": str(tmp_path / "out"), "grid": "0:0.9:0.1"}
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path), tmp_path / "out"


def gamma_args(data, out, *extra):
    return ["--data", data, "--model", "gamma", "--controls", "cell:2,5", "--focus", "control:0",
            "--output-dir", str(out), "--threads", "1", *extra]


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


class TestFit:
    def test_fixed_a(self, gamma_csv, tmp_path):
        data, y = gamma_csv
        out = tmp_path / "o"
        assert main(["fit", *gamma_args(data, out, "--a", "0.4")]) == EXIT_OK
        rec = json.loads((out / "fit.json").read_text())
        assert rec["schema_version"] == SCHEMA_VERSION
        assert rec["a"] == 0.4 and rec["n"] == y.size
        assert len(rec["theta_hat"]) == 2 and len(rec["se_theta"]) == 2
        assert 0 < rec["psi_hat"] < 1

    def test_a_zero_standard_errors_are_ml(self, gamma_csv, tmp_path):
        data, y = gamma_csv
        out = tmp_path / "o"
        assert main(["fit", *gamma_args(data, out, "--a", "0")]) == EXIT_OK
        rec = json.loads((out / "fit.json").read_text())
        model = builtin_model("gamma")
        th = fit_ml(model, y)
        U = model.score(y, th)
        se = np.sqrt(np.diag(np.linalg.inv(U.T @ U / y.size)) / y.size)
        np.testing.assert_allclose(rec["theta_hat"], th, atol=1e-6)
        np.testing.assert_allclose(rec["se_theta"], se, rtol=1e-4)

    def test_efficiency_cap_writes_kappa_curve(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        out = tmp_path / "o"
        assert main(["fit", *gamma_args(data, out), "--set", "a={efficiency_cap: 0.1}"]) == EXIT_OK
        rows = read_rows(out / "curve_kappa.csv")
        ratio = np.array([float(r["kappa_ratio"]) for r in rows])
        a = np.array([float(r["a"]) for r in rows])
        assert ratio[0] == pytest.approx(1.0)
        chosen = json.loads((out / "fit.json").read_text())["a"]
        assert np.all(ratio[a <= chosen + 1e-12] <= 1.1 + 1e-9)

    def test_alt_method(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        out = tmp_path / "o"
        assert main(["fit", *gamma_args(data, out, "--a", "0.5", "--method", "alt")]) == EXIT_OK
        rec = json.loads((out / "fit.json").read_text())
        assert rec["method"] == "alt" and rec["caveat"]

    def test_yaml_config_and_override(self, beta_config):
        path, out = beta_config
        assert main(["fit", path, "--set", "a=0.3"]) == EXIT_OK
        assert json.loads((out / "fit.json").read_text())["a"] == 0.3


# ---------------------------------------------------------------------------
# scan and confcurve
# ---------------------------------------------------------------------------


class TestScan:
    def test_endpoint_is_ml_and_single_point_is_fit(self, gamma_csv, tmp_path):
        data, y = gamma_csv
        out = tmp_path / "o"
        assert main(["scan", *gamma_args(data, out, "--grid", "0,0.3")]) == EXIT_OK
        rows = read_rows(out / "curve_phat.csv")
        assert [r["status"] for r in rows] == ["ok", "ok"]
        model = builtin_model("gamma")
        p_ml = np.diff(model.cdf(np.array([2.0, 5.0]), fit_ml(model, y)))[0]
        assert float(rows[0]["psi_hat"]) == pytest.approx(p_ml, abs=1e-6)
        assert main(["fit", *gamma_args(data, tmp_path / "f", "--a", "0.3")]) == EXIT_OK
        rec = json.loads((tmp_path / "f" / "fit.json").read_text())
        assert float(rows[1]["psi_hat"]) == pytest.approx(rec["psi_hat"], abs=1e-9)

    def test_flat_when_controls_hold_at_ml(self, tmp_path):
        # symmetric data: the normal ML fit reproduces the sample third moment
        half = np.abs(builtin_model("normal").sample([0.0, 1.0], 60, 2))
        y = np.concatenate([1 + half, 1 - half])
        data = write_column(tmp_path / "s.csv", y)
        out = tmp_path / "o"
        args = ["--data", data, "--model", "normal", "--controls", "moment:3", "--focus",
                "theta:0", "--output-dir", str(out), "--threads", "1", "--grid", "0,0.4,0.8"]
        assert main(["scan", *args]) == EXIT_OK
        psi = [float(r["psi_hat"]) for r in read_rows(out / "curve_phat.csv")]
        np.testing.assert_allclose(psi, y.mean(), atol=1e-6)


class TestConfcurve:
    def test_rows(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        out = tmp_path / "o"
        assert main(["confcurve", *gamma_args(data, out, "--a", "0.3")]) == EXIT_OK
        rows = read_rows(out / "confcurve.csv")
        cc = np.array([float(r["cc"]) for r in rows])
        dev = np.array([float(r["deviance"]) for r in rows])
        assert np.any(cc == 0.0)
        assert np.all((cc >= 0) & (cc <= 1)) and np.all(dev >= 0)

    def test_psi_range(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        out = tmp_path / "o"
        assert main(["confcurve", *gamma_args(data, out, "--a", "0.3",
                                              "--psi-range", "0.2:0.5:7")]) == EXIT_OK
        assert len(read_rows(out / "confcurve.csv")) == 8  # seven points plus psi_hat


# ---------------------------------------------------------------------------
# fic, gof, el
# ---------------------------------------------------------------------------


class TestFocusedCommands:
    def test_fic(self, beta_config):
        path, out = beta_config
        assert main(["fic", path]) == EXIT_OK
        rows = read_rows(out / "fic.csv")
        assert list(rows[0]) == ["a", "fic", "bias2", "tau2"]
        assert len(rows) == 10
        info = json.loads((out / "fic.json").read_text())
        assert info["a_star"] in [float(r["a"]) for r in rows]
        fic = np.array([float(r["fic"]) for r in rows])
        assert np.all(np.isfinite(fic)) and np.all(fic >= 0)

    def test_gof(self, beta_config):
        path, out = beta_config
        assert main(["gof", path]) == EXIT_OK
        v = json.loads((out / "gof.json").read_text())
        assert v["reject"] == (v["statistic"] > v["threshold"])
        assert v["alpha"] == pytest.approx(0.3173, abs=1e-4)

    def test_fic_needs_wide_model(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        assert main(["fic", *gamma_args(data, tmp_path / "o")]) == EXIT_CONFIG

    def test_el(self, tmp_path, capsys):
        data = write_column(tmp_path / "e.csv", [-0.25, 0.75], header=None)
        assert main(["el", "--data", data, "--model", "normal", "--controls", "moment:1",
                     "--focus", "theta:0", "--mu", "0"]) == EXIT_OK
        out = json.loads(capsys.readouterr().out)
        assert out["log_ratio"] == pytest.approx(np.log(0.75 * 0.25 * 4), abs=1e-8)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def sim_config(tmp_path, reps, n, a_values, seed=5, methods=("ml", "hl")):
    cfg = {"model": "beta_one", "wide_model": {"name": "beta_one_in_beta", "gamma0": [1.0]},
           "controls": ["moment:2"], "focus": "control:0", "seed": seed,
           "output_dir": str(tmp_path / f"sim{seed}"),
           "simulate": {"n": n, "reps": reps, "theta0": [2.0], "delta": [0.0],
                        "a_values": list(a_values), "methods": list(methods)}}
    path = tmp_path / f"sim{seed}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path), tmp_path / f"sim{seed}"


class TestSimulate:
    def test_deterministic(self, tmp_path):
        path, out = sim_config(tmp_path, 4, 80, [0.0, 0.5])
        assert main(["simulate", path, "--threads", "1"]) == EXIT_OK
        first = (out / "replications.csv").read_text()
        assert main(["simulate", path, "--threads", "2"]) == EXIT_OK
        assert (out / "replications.csv").read_text() == first
        rows = read_rows(out / "replications.csv")
        assert len(rows) == 4 * 3
        assert {r["method"] for r in rows} == {"ml", "hl"}

    def test_alt_rows(self, tmp_path):
        path, out = sim_config(tmp_path, 2, 100, [0.3], methods=("alt",))
        assert main(["simulate", path, "--threads", "1"]) == EXIT_OK
        assert {r["method"] for r in read_rows(out / "replications.csv")} == {"alt"}

    @pytest.mark.slow
    def test_spread_matches_plug_in(self, tmp_path):
        # model-true, n = 1000: sd of psi_hat near kappa_a / sqrt(n)
        n, a = 1000, 0.5
        path, out = sim_config(tmp_path, 400, n, [a], methods=("hl",))
        assert main(["simulate", path, "--threads", "1"]) == EXIT_OK
        psi = np.array([float(r["psi_hat"]) for r in read_rows(out / "replications.csv")])
        model = builtin_model("beta_one")
        cs = moment_control(model, [2])
        blocks = population_blocks(model, cs, [2.0]).at(a)
        kappa = kappa_a(blocks, control_focus(cs).gradient([2.0]))
        assert np.std(psi, ddof=1) == pytest.approx(kappa / np.sqrt(n), rel=0.10)


# ---------------------------------------------------------------------------
# Inputs, formats and exit codes
# ---------------------------------------------------------------------------


class TestInputs:
    def test_header_detection(self, tmp_path):
        p1 = write_column(tmp_path / "h.csv", [1.0, 2.0], header="value")
        p2 = write_column(tmp_path / "n.csv", [1.0, 2.0], header=None)
        np.testing.assert_array_equal(load_csv(p1), [1.0, 2.0])
        np.testing.assert_array_equal(load_csv(p2), [1.0, 2.0])

    def test_column_by_name_and_index(self, tmp_path):
        p = tmp_path / "two.csv"
        p.write_text("a,b\n1,10\n2,20\n")
        np.testing.assert_array_equal(load_csv(str(p), "b"), [10, 20])
        np.testing.assert_array_equal(load_csv(str(p), 1), [10, 20])
        with pytest.raises(ConfigError):
            load_csv(str(p), "c")

    def test_grid_parsing(self):
        np.testing.assert_allclose(parse_grid("0:0.3:0.1"), [0, 0.1, 0.2, 0.3])
        np.testing.assert_allclose(parse_grid("0.5,0.1"), [0.5, 0.1])

    def test_csv_format(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        out = tmp_path / "o"
        assert main(["scan", *gamma_args(data, out, "--grid", "0,0.2")]) == EXIT_OK
        raw = (out / "curve_phat.csv").read_bytes()
        raw.decode("utf-8")
        assert raw.endswith(b"\n") and b"\r" not in raw
        assert raw.splitlines()[0] == b"a,psi_hat,kappa,se_psi,status"
        assert b"," not in raw.splitlines()[1].split(b",")[1]


class TestExitCodes:
    def test_missing_file(self, tmp_path):
        assert main(["fit", *gamma_args(str(tmp_path / "nope.csv"), tmp_path)]) == EXIT_CONFIG

    def test_unknown_key(self, tmp_path, gamma_csv):
        data, _ = gamma_csv
        assert main(["fit", *gamma_args(data, tmp_path), "--set", "colour=red"]) == EXIT_CONFIG

    def test_bad_control_token(self, tmp_path, gamma_csv):
        data, _ = gamma_csv
        args = ["fit", "--data", data, "--model", "gamma", "--controls", "nonsense:1",
                "--focus", "theta:0", "--output-dir", str(tmp_path)]
        assert main(args) == EXIT_CONFIG

    def test_wrong_gamma0(self, beta_config):
        path, _ = beta_config
        assert main(["fic", path, "--set", "wide_model.gamma0=[2.0]"]) == EXIT_CONFIG

    def test_numerical_failure_writes_diagnostic(self, tmp_path):
        data = write_column(tmp_path / "bad.csv", [0.2, 0.5, 0.0, 0.7, 0.3])
        out = tmp_path / "o"
        args = ["fit", "--data", data, "--model", "beta_one", "--controls", "moment:2",
                "--focus", "theta:0", "--a", "0.3", "--output-dir", str(out)]
        with np.errstate(divide="ignore"):
            assert main(args) == EXIT_NUMERICAL
        diag = json.loads((out / "error.json").read_text())
        assert diag["command"] == "fit" and diag["error"]

    def test_console_script(self, gamma_csv, tmp_path):
        data, _ = gamma_csv
        res = subprocess.run([sys.executable, "-m", "hybridlik.cli", "fit",
                              *gamma_args(data, tmp_path / "o", "--a", "0.2")],
                             capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        assert "psi_hat=" in res.stdout
