import json

import numpy as np
import pytest

import polystab.analysis
from polystab.analysis import BoundFamilyResult, ProofBoundReport
from polystab.cli import main
from polystab.ensemble import CSV_HEADER, MomentSeries


def run(argv):
    return main(argv)


def write_power_law_csv(path, exponent, n=60, t_max=1e4, n_paths=100):
    t = np.concatenate([[0.0], np.geomspace(0.01, t_max, n - 1)])
    lines = [CSV_HEADER]
    for i, ti in enumerate(t):
        m2 = float((1 + ti) ** exponent)
        lines.append(f"{i},{float(ti)!r},{m2!r},0.0,{n_paths},0")
    path.write_text("\n".join(lines) + "\n")


class TestSimulate:
    def test_writes_artifacts(self, tmp_path, capsys):
        code = run([
            "simulate", "--problem", "linear", "--scheme", "em", "--dt", "0.1",
            "--steps", "200", "--paths", "32", "--seed", "42",
            "--out-dir", str(tmp_path),
        ])
        assert code == 0
        csv_path = tmp_path / "linear_em_seed42.csv"
        cfg_path = tmp_path / "linear_em_seed42_config.json"
        assert csv_path.exists() and cfg_path.exists()
        series = MomentSeries.from_csv(csv_path)
        assert series.step_index[-1] == 200
        config = json.loads(cfg_path.read_text())
        assert config["problem"] == "linear" and config["seed"] == 42
        out = capsys.readouterr().out
        assert "mean_square" in out

    def test_missing_flags_usage_error(self, capsys):
        assert run(["simulate", "--problem", "linear"]) == 1
        assert "missing required flags" in capsys.readouterr().err

    def test_invalid_value_usage_error(self, tmp_path, capsys):
        code = run([
            "simulate", "--problem", "linear", "--scheme", "em", "--dt", "-0.1",
            "--steps", "10", "--paths", "4", "--seed", "1", "--out-dir", str(tmp_path),
        ])
        assert code == 1

    def test_bem_dt_violation_is_usage_error(self, tmp_path):
        code = run([
            "simulate", "--problem", "counterexample", "--scheme", "bem", "--dt", "0.5",
            "--steps", "10", "--paths", "4", "--seed", "1", "--out-dir", str(tmp_path),
        ])
        assert code == 2

    def test_envelope_file(self, tmp_path):
        code = run([
            "simulate", "--problem", "linear", "--scheme", "em", "--dt", "0.1",
            "--steps", "100", "--paths", "16", "--seed", "7",
            "--out-dir", str(tmp_path), "--prefix", "env", "--envelope",
        ])
        assert code == 0
        lines = (tmp_path / "env_envelope.csv").read_text().splitlines()
        assert lines[0] == "k,t,envelope"
        series = MomentSeries.from_csv(tmp_path / "env.csv")
        assert len(lines) == 1 + len(series)

    def test_spec_file(self, tmp_path):
        spec = {
            "problem": "linear", "scheme": "em", "dt": 0.1, "steps": 100,
            "paths": 16, "seed": 3, "out_dir": str(tmp_path), "prefix": "from_spec",
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert run(["simulate", "--spec", str(spec_path)]) == 0
        assert (tmp_path / "from_spec.csv").exists()

    def test_spec_file_flag_override(self, tmp_path):
        spec = {
            "problem": "linear", "scheme": "em", "dt": 0.1, "steps": 100,
            "paths": 16, "seed": 3, "out_dir": str(tmp_path),
        }
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps(spec))
        assert run(["simulate", "--spec", str(spec_path), "--seed", "9"]) == 0
        assert (tmp_path / "linear_em_seed9.csv").exists()

    def test_spec_file_unknown_key(self, tmp_path, capsys):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(json.dumps({"problem": "linear", "fancy": 1}))
        assert run(["simulate", "--spec", str(spec_path)]) == 1
        assert "unknown spec keys" in capsys.readouterr().err

    def test_counterexample_blow_up_fraction_reported(self, tmp_path, capsys):
        code = run([
            "simulate", "--problem", "counterexample", "--scheme", "em", "--dt", "0.1",
            "--steps", "200", "--paths", "64", "--seed", "1", "--out-dir", str(tmp_path),
        ])
        assert code == 0
        out = capsys.readouterr().out
        assert "blown up 64" in out
        assert "lower bounds" in out


class TestAnalyze:
    def test_conforming_power_law(self, tmp_path, capsys):
        csv = tmp_path / "m.csv"
        write_power_law_csv(csv, -5.0)
        code = run(["analyze", "--csv", str(csv), "--k1", "3.0"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["slope"] == pytest.approx(-5.0, abs=1e-9)
        assert report["theoretical_bound"] == -5.0
        assert report["conforms"] is True

    def test_report_to_file(self, tmp_path):
        csv = tmp_path / "m.csv"
        write_power_law_csv(csv, -1.0)
        out = tmp_path / "report.json"
        code = run(["analyze", "--csv", str(csv), "--k1", "1.0", "--out", str(out)])
        assert code == 0
        assert json.loads(out.read_text())["conforms"] is True

    def test_nonconforming_exit_code(self, tmp_path, capsys):
        csv = tmp_path / "m.csv"
        write_power_law_csv(csv, -1.0)
        code = run(["analyze", "--csv", str(csv), "--k1", "3.0"])
        assert code == 3
        assert "conformance failure" in capsys.readouterr().err

    def test_blow_ups_in_window_numerical_error(self, tmp_path, capsys):
        csv = tmp_path / "m.csv"
        t = np.concatenate([[0.0], np.geomspace(0.01, 1e4, 59)])
        lines = [CSV_HEADER]
        for i, ti in enumerate(t):
            blown = 5 if i >= len(t) - 3 else 0
            lines.append(f"{i},{float(ti)!r},{float((1 + ti) ** -1)!r},0.0,{100 - blown},{blown}")
        csv.write_text("\n".join(lines) + "\n")
        code = run(["analyze", "--csv", str(csv), "--k1", "1.0"])
        assert code == 2
        assert "estimation error" in capsys.readouterr().err

    def test_malformed_csv_names_line(self, tmp_path, capsys):
        csv = tmp_path / "bad.csv"
        csv.write_text(CSV_HEADER + "\n0,0.0,1.0,0.0,10,0\noops\n")
        code = run(["analyze", "--csv", str(csv), "--k1", "1.0"])
        assert code == 2
        assert "line 3" in capsys.readouterr().err

    def test_missing_file_usage_error(self, tmp_path):
        assert run(["analyze", "--csv", str(tmp_path / "nope.csv"), "--k1", "1.0"]) == 1


class TestRoundTrip:
    def test_simulate_then_analyze_deterministic(self, tmp_path):
        def one_round(tag):
            out_dir = tmp_path / tag
            assert run([
                "simulate", "--problem", "linear", "--scheme", "em", "--dt", "0.1",
                "--steps", "2000", "--paths", "200", "--seed", "5",
                "--out-dir", str(out_dir), "--prefix", "run",
            ]) == 0
            report = out_dir / "report.json"
            assert run([
                "analyze", "--csv", str(out_dir / "run.csv"), "--k1", "1.0",
                "--out", str(report),
            ]) == 0
            payload = json.loads(report.read_text())
            payload.pop("csv")  # path differs between rounds by construction
            return (out_dir / "run.csv").read_bytes(), payload

        csv_a, report_a = one_round("a")
        csv_b, report_b = one_round("b")
        assert csv_a == csv_b
        assert report_a == report_b
        assert report_a["conforms"] is True


class TestVerifyGamma:
    def test_default_grids_pass(self, capsys):
        code = run(["verify-gamma", "--samples", "200", "--k-max", "40"])
        assert code == 0
        out = capsys.readouterr().out
        assert "all gamma checks passed" in out
        assert "product identity" in out
        assert "em-sum-term" in out

    def test_violation_reported_with_point(self, monkeypatch, capsys):
        fake = ProofBoundReport(
            families=(
                BoundFamilyResult(
                    name="em-initial-term", worst_margin=-1.0,
                    worst_point=(7, 0.1, 2.0), n_points=10,
                ),
            ),
            slack=1e-12,
        )
        monkeypatch.setattr(polystab.analysis, "verify_proof_bounds", lambda **kw: fake)
        code = run(["verify-gamma", "--samples", "50", "--k-max", "10"])
        assert code == 2
        err = capsys.readouterr().err
        assert "em-initial-term" in err and "(7, 0.1, 2.0)" in err


class TestCounterexample:
    def test_reports_divergence_step(self, capsys):
        code = run(["counterexample", "--dt", "0.1", "--cap", "1e12", "--paths", "64",
                    "--steps", "120", "--seed", "1"])
        assert code == 0
        out = capsys.readouterr().out
        assert "exceeded at step" in out
        assert "invariant" in out and "holds" in out
        assert "blown up" in out

    def test_dt_out_of_range_usage(self, capsys):
        assert run(["counterexample", "--dt", "0.6"]) == 1
        assert "0, 0.5" in capsys.readouterr().err.replace("(", "").replace(")", "")

    def test_help_exits_zero(self):
        assert run(["--help"]) == 0

    def test_unknown_command_usage(self):
        assert run(["frobnicate"]) == 1
