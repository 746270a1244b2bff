import json
import math
import subprocess
import sys

import pytest

from shapesize import __version__
from shapesize.cli import main


def _simulate(out, n=50, seed=3, extra=()):
    return main([
        "simulate", "--scenario", "M1", "--n", str(n), "--seed", str(seed),
        "--out-dir", str(out), *extra,
    ])


class TestSimulateCommand:
    def test_writes_expected_files(self, tmp_path):
        out = tmp_path / "run"
        assert _simulate(out, n=50) == 0
        assert (out / "subjects.csv").read_text().count("\n") == 51
        assert (out / "events.csv").exists()
        truth = json.loads((out / "truth.json").read_text())
        assert truth == {
            "beta0": [0.8, 0.6], "gamma0": [0.6, 0.8],
            "scenario": "M1", "seed": 3,
        }
        man = json.loads((out / "manifest.json").read_text())
        assert man["command"] == "simulate"
        assert man["version"] == __version__
        assert "out_dir" not in man["options"]

    def test_rerun_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        _simulate(a)
        _simulate(b)
        for name in ("subjects.csv", "events.csv", "truth.json", "manifest.json"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_manifest_round_trip_overrides_flags(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        _simulate(a, seed=7)
        # conflicting flag values lose to the recorded manifest
        rc = main([
            "simulate", "--scenario", "M2", "--n", "5", "--seed", "999",
            "--out-dir", str(b), "--config", str(a / "manifest.json"),
        ])
        assert rc == 0
        assert (a / "subjects.csv").read_bytes() == (b / "subjects.csv").read_bytes()
        assert (a / "events.csv").read_bytes() == (b / "events.csv").read_bytes()

    def test_unknown_scenario_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--scenario", "M4", "--n", "5",
                  "--out-dir", str(tmp_path)])
        assert exc.value.code == 2

    def test_config_for_wrong_command_rejected(self, tmp_path, capsys):
        out = tmp_path / "a"
        _simulate(out)
        rc = main([
            "fit", "--subjects", str(out / "subjects.csv"),
            "--events", str(out / "events.csv"), "--tau", "1",
            "--out-dir", str(tmp_path / "b"),
            "--config", str(out / "manifest.json"),
        ])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestFitCommand:
    @pytest.fixture()
    def sim_dir(self, tmp_path):
        out = tmp_path / "data"
        _simulate(out, n=60, seed=5)
        return out

    def _fit(self, sim_dir, out, extra=()):
        return main([
            "fit", "--subjects", str(sim_dir / "subjects.csv"),
            "--events", str(sim_dir / "events.csv"), "--tau", "1",
            "--out-dir", str(out), *extra,
        ])

    def test_default_fit_output(self, sim_dir, tmp_path, capsys):
        out = tmp_path / "fit"
        assert self._fit(sim_dir, out) == 0
        res = json.loads((out / "fit.json").read_text())
        beta = res["shape"]["beta"]
        assert math.hypot(*beta) == pytest.approx(1.0, abs=1e-9)
        assert beta[-1] > 0.0
        assert res["shape"]["objective_kind"] == "simplified"
        assert res["projected_counts"]["n"] == 60
        assert res["size_exp"]["link"] == "exp"
        assert res["size_mre"]["link"] == "rank"
        assert "bootstrap" not in res
        assert "shape direction:" in capsys.readouterr().out

    def test_size_link_none(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        assert self._fit(sim_dir, out, ["--size-link", "none"]) == 0
        res = json.loads((out / "fit.json").read_text())
        assert "projected_counts" not in res
        assert "size_exp" not in res

    def test_full_objective_flag(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        assert self._fit(
            sim_dir, out, ["--shape-objective", "full", "--size-link", "none"]) == 0
        res = json.loads((out / "fit.json").read_text())
        assert res["shape"]["objective_kind"] == "full"

    def test_bootstrap_block(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        rc = self._fit(
            sim_dir, out,
            ["--size-link", "exp", "--bootstrap-b", "4", "--seed", "2"])
        assert rc == 0
        res = json.loads((out / "fit.json").read_text())
        boot = res["bootstrap"]
        assert set(boot) == {"shape_simplified", "size_exp"}
        assert boot["shape_simplified"]["B"] == 4
        assert len(boot["size_exp"]["ci"]) == 2

    def test_fit_reruns_identically(self, sim_dir, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        self._fit(sim_dir, a, ["--bootstrap-b", "3"])
        self._fit(sim_dir, b, ["--bootstrap-b", "3"])
        assert (a / "fit.json").read_bytes() == (b / "fit.json").read_bytes()

    def test_trim_flags_recorded(self, sim_dir, tmp_path):
        out = tmp_path / "fit"
        rc = self._fit(sim_dir, out, [
            "--trim-tau0", "0.05", "--trim-tau1", "0.95",
            "--z-box=-2,2,-2,2", "--size-link", "none"])
        assert rc == 0
        res = json.loads((out / "fit.json").read_text())
        assert res["shape"]["trim"]["tau0"] == 0.05
        assert res["shape"]["trim"]["z_lower"] == [-2.0, -2.0]

    def test_missing_file_is_runtime_error(self, tmp_path, capsys):
        rc = main([
            "fit", "--subjects", str(tmp_path / "nope.csv"),
            "--events", str(tmp_path / "nope2.csv"), "--tau", "1",
            "--out-dir", str(tmp_path / "out"),
        ])
        assert rc == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_z_box(self, sim_dir, tmp_path, capsys):
        rc = self._fit(sim_dir, tmp_path / "out", ["--z-box", "1,2,3"])
        assert rc == 1
        assert "even count" in capsys.readouterr().err


class TestReproduceCommand:
    def test_tiny_run_without_reference(self, tmp_path, capsys):
        out = tmp_path / "rep"
        rc = main([
            "reproduce", "--table", "1", "--scenario", "M1", "--n", "40",
            "--replicates", "2", "--estimators", "shape_simplified",
            "--seed", "1", "--out-dir", str(out),
        ])
        assert rc == 0
        text = capsys.readouterr().out
        assert "no comparison emitted" in text
        assert (out / "mc_table.csv").exists()
        assert not (out / "comparison.csv").exists()
        png = (out / "table.png").read_bytes()
        assert png[:8] == b"\x89PNG\r\n\x1a\n"

    def test_referenced_run_emits_comparison(self, tmp_path, capsys):
        out = tmp_path / "rep"
        rc = main([
            "reproduce", "--table", "1", "--scenario", "M1", "--n", "200",
            "--replicates", "2", "--estimators", "shape_simplified",
            "--seed", "1", "--out-dir", str(out),
        ])
        assert rc == 0
        text = capsys.readouterr().out
        assert "shape_simplified beta1:" in text
        lines = (out / "comparison.csv").read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("estimator,parameter,bias_x1000")
        # no bootstrap: ASE and CP flagged not estimable, not failed
        assert "not estimable" in text
        png = (out / "comparison.png").read_bytes()
        assert png[:8] == b"\x89PNG\r\n\x1a\n"
        man = json.loads((out / "manifest.json").read_text())
        assert man["command"] == "reproduce"

    def test_no_figures(self, tmp_path):
        out = tmp_path / "rep"
        rc = main([
            "reproduce", "--table", "1", "--scenario", "M1", "--n", "40",
            "--replicates", "2", "--estimators", "shape_simplified",
            "--seed", "1", "--out-dir", str(out), "--no-figures",
        ])
        assert rc == 0
        assert not (out / "table.png").exists()
        assert not (out / "comparison.png").exists()

    def test_m3_clamp_note(self, tmp_path, capsys):
        out = tmp_path / "rep"
        rc = main([
            "reproduce", "--table", "1", "--scenario", "M3", "--n", "40",
            "--replicates", "2", "--estimators", "shape_simplified",
            "--seed", "1", "--out-dir", str(out), "--no-figures",
        ])
        assert rc == 0
        assert "clamped at zero" in capsys.readouterr().out

    def test_unknown_estimator(self, tmp_path, capsys):
        rc = main([
            "reproduce", "--table", "2", "--scenario", "M1", "--n", "40",
            "--replicates", "2", "--estimators", "shape_cubic",
            "--seed", "1", "--out-dir", str(tmp_path / "rep"),
        ])
        assert rc == 1
        assert "unknown estimator" in capsys.readouterr().err


class TestEntryPoints:
    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--version"])
        assert exc.value.code == 0
        assert capsys.readouterr().out.strip() == f"shapesize {__version__}"

    def test_missing_command(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "shapesize", "--version"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.strip() == f"shapesize {__version__}"
