import json
import os
import subprocess
import sys

import pytest

from qla.cli import main

BASE = """\
model: vol-contrast
schedule: [100, 400]
reps: 500
seed: 3
"""


def write_cfg(tmp_path, probes, extra=""):
    p = tmp_path / "cfg.yaml"
    p.write_text(BASE + f"probes: {probes}\n" + extra)
    return str(p)


def files(d):
    return {f: open(os.path.join(d, f), "rb").read() for f in sorted(os.listdir(d))
            if os.path.isfile(os.path.join(d, f))}


def test_empty_probe_list_is_vacuous_pass(tmp_path):
    cfg = write_cfg(tmp_path, "[]")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    s = json.load(open(tmp_path / "o" / "summary.json"))
    assert s["probes"] == [] and s["status"] == 0
    assert not (tmp_path / "o" / "PARTIAL").exists()


def test_repeat_and_thread_count_give_identical_bytes(tmp_path):
    cfg = write_cfg(tmp_path, "[identifiability, mle_bayes_gap, {pld_tail: {reps: 1000}}]")
    outs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "8")):
        out = str(tmp_path / name)
        assert main(["run", "--config", cfg, "--out", out, "--threads", threads]) == 0
        outs.append(files(out))
    assert outs[0] == outs[1] == outs[2]
    assert any(f.endswith(".csv") for f in outs[0])


def test_failing_probe_sets_status_and_report(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[identifiability, gamma_uniform_consistency]")
    out = str(tmp_path / "o")
    assert main(["run", "--config", cfg, "--out", out]) == 1
    capsys.readouterr()
    assert main(["report", out]) == 1
    text = capsys.readouterr().out
    lines = [l for l in text.splitlines() if l.startswith(("identifiability", "gamma_uniform"))]
    assert len(lines) == 2
    assert lines[0].endswith("PASS") and lines[1].endswith("FAIL")
    assert "gamma_uniform_consistency.csv" in text


def test_report_missing_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path / "nope")]) == 1
    assert str(tmp_path / "nope") in capsys.readouterr().err


def test_partial_marker_on_io_failure(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[identifiability]")
    out = tmp_path / "o"
    out.mkdir()
    (out / "identifiability.json").mkdir()  # blocks the report write
    assert main(["run", "--config", cfg, "--out", str(out)]) == 1
    assert (out / "PARTIAL").exists()
    assert main(["report", str(out)]) == 2
    assert "incomplete run" in capsys.readouterr().out


def test_unwritable_output_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_cfg(tmp_path, "[identifiability]")
    assert main(["run", "--config", cfg, "--out", str(blocker / "sub")]) == 1


def test_bad_config_exit_one(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(BASE + "rho2: 1.2\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "rho2" in err and "line 5" in err


def test_probe_error_is_recorded(tmp_path, monkeypatch):
    import qla.cli as cli

    def boom(name, cfg, threads):
        raise ValueError("synthetic failure")

    monkeypatch.setattr(cli, "call_probe", boom)
    cfg = write_cfg(tmp_path, "[identifiability]")
    out = str(tmp_path / "o")
    assert main(["run", "--config", cfg, "--out", out]) == 1
    s = json.load(open(os.path.join(out, "summary.json")))
    assert s["probes"][0]["verdict"] == "error" and "synthetic failure" in s["probes"][0]["message"]
    assert not os.path.exists(os.path.join(out, "PARTIAL"))


def test_single_probe_and_dump_paths(tmp_path):
    cfg = write_cfg(tmp_path, "[]")
    out = str(tmp_path / "o")
    assert main(["probe", "identifiability", "--config", cfg, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "identifiability.csv"))
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "p"), "--dump-paths"]) == 0
    assert sorted(os.listdir(tmp_path / "p" / "paths")) == ["path_T100000.csv", "path_T400000.csv"]
    assert main(["probe", "nope", "--config", cfg, "--out", out]) == 1


def test_resolved_config_written_without_exec_settings(tmp_path):
    cfg = write_cfg(tmp_path, "[]")
    out = tmp_path / "o"
    main(["run", "--config", cfg, "--out", str(out), "--threads", "2"])
    r = json.load(open(out / "config.resolved.json"))
    assert "threads" not in r and "out_dir" not in r
    assert r["profile"]["rho1"] == pytest.approx(0.125)


def test_estimate_subcommand(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[]")
    assert main(["estimate", "--config", cfg]) == 0
    rec = json.loads(capsys.readouterr().out)
    assert rec["T"] == 400 and abs(rec["u_m"][0] - rec["u_b"][0]) < 0.2


def test_console_script_runs(tmp_path):
    cfg = write_cfg(tmp_path, "[identifiability]")
    env = dict(os.environ, QLA_OUT_DIR=str(tmp_path / "envout"))
    r = subprocess.run([sys.executable, "-m", "qla.cli", "run", "--config", cfg], env=env, capture_output=True,
                       text=True)
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "envout" / "summary.txt").read_text().splitlines()[-1] == "status 0"
