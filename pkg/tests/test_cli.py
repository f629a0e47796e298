"""Command-line behavior: output shapes, exit codes, schema rejection."""

import json
import subprocess
import sys
from importlib import resources

import pytest

from ntpsim.cli import main

CONFIGS = resources.files("ntpsim").joinpath("configs")


def run_cli(capsys, *argv):
    rc = main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


def test_shardmap_prints_contrast_stats(capsys):
    rc, out, _ = run_cli(capsys, "shardmap", "--k", "12000", "--n1", "32", "--n2", "30")
    assert rc == 0
    assert "max 25 sent / 375 received" in out
    assert "750 columns" in out


def test_shardmap_equal_groups_has_empty_plans(capsys):
    rc, out, _ = run_cli(capsys, "shardmap", "--k", "8", "--n1", "4", "--n2", "4")
    assert rc == 0
    assert "0 columns over 0 links" in out


def test_shardmap_json_round_trips(capsys):
    rc, out, _ = run_cli(capsys, "shardmap", "--k", "100", "--n1", "8", "--n2", "6", "--json")
    assert rc == 0
    doc = json.loads(out)
    assert doc["map"]["k"] == 100
    assert doc["post_sync"]["total_cols_moved"] == doc["pre_sync"]["total_cols_moved"]


def test_shardmap_rejects_invalid_groups(capsys):
    rc, _, err = run_cli(capsys, "shardmap", "--k", "8", "--n1", "4", "--n2", "6")
    assert rc == 2
    assert "error" in err


def test_verify_all_suites_pass(capsys):
    rc, out, _ = run_cli(capsys, "verify")
    assert rc == 0
    lines = [l for l in out.splitlines() if l.startswith("PASS")]
    assert len(lines) == 4
    assert not any(l.startswith("FAIL") for l in out.splitlines())


def test_verify_single_suite_json(capsys):
    rc, out, _ = run_cli(capsys, "verify", "--suite", "golden", "--json")
    assert rc == 0
    doc = json.loads(out)
    assert doc["passed"] is True
    assert doc["suites"][0]["name"] == "golden"


def test_verify_catches_activation_drift(capsys, monkeypatch):
    import ntpsim.tpnumerics as tpn

    monkeypatch.setattr(tpn, "GELU_C", 0.0447)
    rc, out, _ = run_cli(capsys, "verify", "--suite", "golden")
    assert rc == 1
    assert "FAIL golden" in out
    assert "case:" in out  # the offending field is serialized


def test_simulate_timeline_writes_outputs(capsys, tmp_path):
    scenario = str(CONFIGS / "timeline_example.json")
    rc, out, _ = run_cli(capsys, "simulate", "--scenario", scenario, "--out", str(tmp_path))
    assert rc == 0
    csv_text = (tmp_path / "timeline.csv").read_text()
    assert csv_text.startswith("t_days,")
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["policy"] == "ntp"
    assert 0.9 < summary["mean_throughput_frac"] <= 1.0


def test_simulate_availability_is_byte_deterministic(capsys, tmp_path):
    scenario = str(CONFIGS / "availability_vs_tp.json")
    outs = []
    for sub in ("a", "b"):
        d = tmp_path / sub
        rc, _, _ = run_cli(capsys, "simulate", "--scenario", scenario, "--out", str(d))
        assert rc == 0
        outs.append((d / "availability_vs_tp.csv").read_bytes())
    assert outs[0] == outs[1]


def test_simulate_honours_out_env(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("NTPSIM_OUT", str(tmp_path / "envdir"))
    monkeypatch.chdir(tmp_path)
    scenario = str(CONFIGS / "timeline_example.json")
    rc, _, _ = run_cli(capsys, "simulate", "--scenario", scenario)
    assert rc == 0
    assert (tmp_path / "envdir" / "timeline.csv").exists()


def write_scenario(tmp_path, doc):
    path = tmp_path / "scenario.json"
    path.write_text(json.dumps(doc))
    return str(path)


BASE_TIMELINE = {
    "mode": "timeline",
    "cluster": {"total_gpus": 2048, "domain_size": 32},
    "parallel": {
        "tp": 32,
        "pp": 8,
        "dp": 8,
        "domain_size": 32,
        "local_batch": 8,
        "seq_len": 16384,
    },
    "policy": "ntp",
}


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda d: d.update(surprise=1), "unknown keys"),
        (lambda d: d["cluster"].update(rack_count=4), "unknown keys"),
        (lambda d: d.update(mode="wat"), "mode"),
        (lambda d: d.update(policy="best-effort"), "policy"),
        (lambda d: d.update(seed="zero"), "expected integer"),
        (lambda d: d.pop("parallel"), "requires keys"),
        (lambda d: d.update(spare_counts=[0]), "unknown keys"),
    ],
)
def test_simulate_rejects_bad_scenarios(capsys, tmp_path, mutate, fragment):
    doc = json.loads(json.dumps(BASE_TIMELINE))
    mutate(doc)
    rc, _, err = run_cli(
        capsys, "simulate", "--scenario", write_scenario(tmp_path, doc), "--out", str(tmp_path)
    )
    assert rc == 2
    assert fragment in err


def test_simulate_missing_file(capsys, tmp_path):
    rc, _, err = run_cli(
        capsys, "simulate", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)
    )
    assert rc == 2
    assert "error" in err


def test_calibrate_iter_time_is_idempotent(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "calibrate", "--target", "iter-time", "--out", str(tmp_path))
    assert rc == 0
    assert "PASS" in out
    first = (tmp_path / "calibrated_iter_time.json").read_bytes()
    rc, _, _ = run_cli(capsys, "calibrate", "--target", "iter-time", "--out", str(tmp_path))
    assert rc == 0
    assert (tmp_path / "calibrated_iter_time.json").read_bytes() == first
    doc = json.loads(first)
    model = doc["iter_time_model"]
    assert model["max_residual"] <= 0.01
    assert model["compute_share"]["provenance"] == "fitted"


def test_calibrate_trace_stats_small_scenario(capsys, tmp_path):
    doc = {
        "mode": "trace_stats",
        "cluster": {"total_gpus": 4096, "domain_size": 32},
        "arms": [{"rate_multiplier": 1.0, "hw_recovery_days": 5.0}],
        "seeds": [0, 1, 2, 3],
        "duration_days": 10.0,
        "threshold_fraction": 0.001,
        "target_occupancy": 0.6,
    }
    rc, out, _ = run_cli(
        capsys,
        "calibrate",
        "--target",
        "trace-stats",
        "--scenario",
        write_scenario(tmp_path, doc),
        "--out",
        str(tmp_path),
    )
    assert rc == 0
    payload = json.loads((tmp_path / "calibrated_trace_stats.json").read_text())
    fitted = payload["failure"]["rate_per_gpu_day"]
    assert fitted["provenance"] == "fitted"
    assert fitted["value"] > 0
    assert abs(payload["failure"]["achieved_occupancy"] - 0.6) <= 0.01


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "ntpsim.cli", "--version"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert "ntpsim" in proc.stdout
