import csv
import io
import json
import shutil
import subprocess

import numpy as np
import pytest

from tagnav.cli import main
from tagnav.config import ExperimentConfig
from tagnav.geometry import wall_marker_map
from tagnav.sim import ProfileKind, TrajectoryProfile

SHORT = ExperimentConfig(profiles=(
    TrajectoryProfile(ProfileKind.SPIRAL_EIGHT, center_x=2.03, period=8.0, duration=4.0,
                      name="spiral"),
    TrajectoryProfile(ProfileKind.RECTANGULAR_EIGHT, center_x=2.03, speed=0.5, duration=4.0,
                      name="rect"),
), seed=3, timing=False)


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "short.yaml"
    path.write_text(SHORT.dump_yaml())
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(text):
    return list(csv.reader(io.StringIO(text)))


# -- pipeline -------------------------------------------------------------------

def test_pipe_equals_monolith(tmp_path, cfg, capsys):
    sim, bench = tmp_path / "sim", tmp_path / "bench"
    assert run(capsys, "simulate", "--config", cfg, "--out", sim)[0] == 0
    assert run(capsys, "bench", "--config", cfg, "--out", bench, "--no-timing")[0] == 0
    digest = SHORT.digest()
    for name in ("spiral", "rect"):
        d = sim / name
        for f in ("truth.csv", "detections.jsonl"):
            assert (d / f).read_bytes() == (bench / name / f).read_bytes()
        assert run(capsys, "estimate", d / "detections.jsonl", "--map", sim / "map.json",
                   "--intrinsics", sim / "intrinsics.json", "--frame-times", d / "truth.csv",
                   "-o", d / "raw.csv")[0] == 0
        assert run(capsys, "filter", d / "raw.csv", "--auto-cutoff", "0.95",
                   "--cutoff-scale", "20", "-o", d / "filtered.csv")[0] == 0
        for f in ("raw.csv", "filtered.csv"):
            assert (d / f).read_bytes() == (bench / name / f).read_bytes()
        for label in ("raw", "filtered"):
            code, out, _ = run(capsys, "evaluate", d / f"{label}.csv", d / "truth.csv",
                               "--config-digest", digest, "--label", label)
            assert code == 0
            assert out == (bench / name / f"report_{label}.json").read_text()


def test_estimate_reads_stdin(tmp_path, cfg, capsys, monkeypatch):
    sim = tmp_path / "sim"
    run(capsys, "simulate", "--config", cfg, "--out", sim, "--profile", "spiral")
    assert not (sim / "rect").exists()
    dets = sim / "spiral" / "detections.jsonl"
    monkeypatch.setattr("sys.stdin", io.StringIO(dets.read_text()))
    code, piped, _ = run(capsys, "estimate", "-")
    assert code == 0
    assert piped == run(capsys, "estimate", dets)[1]
    assert run(capsys, "estimate", dets, "--jobs", "3")[1] == piped


def test_evaluate_identical_files(tmp_path, cfg, capsys):
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    truth = tmp_path / "spiral" / "truth.csv"
    code, out, _ = run(capsys, "evaluate", truth, truth)
    rep = json.loads(out)
    assert code == 0 and rep["hausdorff"] == 0 and rep["frechet"] == 0


def test_bench_table(tmp_path, capsys):
    """The shipped default config, with timing."""
    code, out, _ = run(capsys, "bench", "--out", tmp_path)
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split()[:2] == ["Profile", "Trajectory"]
    assert "Hausdorff" in lines[0] and "Frechet" in lines[0] and "FPS" in lines[0]
    rows = [ln.split() for ln in lines[2:]]
    assert [(r[0], r[1]) for r in rows] == [("spiral", "raw"), ("spiral", "filtered"),
                                            ("rect", "raw"), ("rect", "filtered")]
    for r in rows:
        assert float(r[2]) <= float(r[3])
        assert r[5] == "+/-" and float(r[4]) > 0
    assert (tmp_path / "table.txt").read_text() == out


def test_bench_plots(tmp_path, cfg, capsys):
    assert run(capsys, "bench", "--config", cfg, "--out", tmp_path, "--no-timing",
               "--plots")[0] == 0
    svg = (tmp_path / "spiral" / "trajectories.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg


def test_bench_coverage_warning_on_stderr(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    noisy = SHORT.with_overrides(profiles=SHORT.profiles[:1])
    cfg.write_text(noisy.dump_yaml().replace("dropout_prob: 0.1", "dropout_prob: 0.6")
                   .replace("min_markers: 1", "min_markers: 4"))
    code, out, err = run(capsys, "bench", "--config", cfg, "--out", tmp_path / "o")
    assert code == 0 and "spiral" in out
    assert err.count("gap records") == 1 and err.startswith("tagnav: WARNING:")


def test_seed_override(tmp_path, cfg, capsys):
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "a", "--seed", "11")
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "b")
    a = (tmp_path / "a" / "spiral" / "detections.jsonl").read_bytes()
    b = (tmp_path / "b" / "spiral" / "detections.jsonl").read_bytes()
    assert a != b


# -- analysis commands ------------------------------------------------------------

def test_bode_csv(tmp_path, capsys):
    code, out, _ = run(capsys, "bode", "--cutoff", "1.0", "--points", "50",
                       "--svg", tmp_path / "b.svg")
    rows = read_csv(out)
    assert code == 0 and rows[0] == ["omega_rad_s", "magnitude_db", "phase_deg"]
    data = np.array(rows[1:], dtype=float)
    assert data.shape == (50, 3)
    assert data[0, 0] == pytest.approx(0.01) and data[-1, 0] == pytest.approx(100)
    k = int(np.argmin(np.abs(data[:, 0] - 1.0)))
    assert np.all(np.diff(data[:, 1]) < 0)
    assert data[k, 2] == pytest.approx(-90, abs=10)
    assert (tmp_path / "b.svg").read_text().startswith("<?xml")


def test_svg_output_is_reproducible(tmp_path, capsys):
    for name in ("a.svg", "b.svg"):
        run(capsys, "bode", "--cutoff", "2", "--svg", tmp_path / name, "-o", tmp_path / "x.csv")
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_spectrum_csv(tmp_path, cfg, capsys):
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    truth = tmp_path / "spiral" / "truth.csv"
    code, out, err = run(capsys, "-v", "spectrum", truth, "--columns", "x,theta",
                         "--svg", tmp_path / "s.svg")
    rows = read_csv(out)
    assert code == 0 and rows[0] == ["omega_rad_s", "amplitude"]
    assert len(rows) - 1 == 120 // 2 + 1
    assert "suggested cutoff" in err
    assert (tmp_path / "s.svg").is_file()


def test_spectrum_rejects_unknown_column(tmp_path, cfg, capsys):
    run(capsys, "simulate", "--config", cfg, "--out", tmp_path)
    code, _, err = run(capsys, "spectrum", tmp_path / "spiral" / "truth.csv", "--columns", "w")
    assert code == 1 and "unknown column" in err


def test_map_gen(tmp_path, capsys):
    code, out, _ = run(capsys, "map-gen", "--intrinsics-out", tmp_path / "k.json")
    assert code == 0 and json.loads(out) == wall_marker_map().to_dict()
    assert json.loads((tmp_path / "k.json").read_text())["width"] == 856
    code, out, _ = run(capsys, "map-gen", "--n", "3", "--side", "0.1")
    assert len(json.loads(out)["markers"]) == 3


# -- errors and exit codes ------------------------------------------------------------

def test_filter_cutoff_above_nyquist(tmp_path, capsys):
    raw = tmp_path / "raw.csv"
    raw.write_text("t,x,y,z,theta\n0,0,0,0,0\n")
    code, out, err = run(capsys, "filter", raw, "--cutoff", "200", "-o", tmp_path / "f.csv")
    assert code == 1 and out == ""
    assert err.startswith("tagnav: error: Invalid-Spec") and len(err.splitlines()) == 1
    assert not (tmp_path / "f.csv").exists()


def test_usage_errors(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "bode")[0] == 1  # --cutoff is required
    assert run(capsys, "filter", "x.csv", "--cutoff", "1", "--auto-cutoff", "0.9")[0] == 1
    code, _, err = run(capsys, "bode", "--cutoff", "1", "--omega-min", "5", "--omega-max", "1")
    assert code == 1 and "omega" in err


def test_input_errors(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", tmp_path / "missing.csv", tmp_path / "missing.csv")
    assert code == 2 and err.startswith("tagnav: error:")
    bad = tmp_path / "d.jsonl"
    bad.write_text('{"t": 0, "frame": 0, "id": 1}\n')
    code, _, err = run(capsys, "estimate", bad)
    assert code == 2 and "line 1" in err
    cfg = tmp_path / "c.yaml"
    cfg.write_text("seeed: 1\n")
    assert run(capsys, "bench", "--config", cfg, "--out", tmp_path / "o")[0] == 2


def test_numerical_failure(tmp_path, capsys):
    n = 60
    rows = ["t,x,y,z,theta"] + [f"{k / 30!r},{1.75e308 if k >= 5 else 1.0!r},0,1,0"
                                for k in range(n)]
    raw = tmp_path / "raw.csv"
    raw.write_text("\n".join(rows) + "\n")
    code, _, err = run(capsys, "filter", raw, "--cutoff", "2", "-o", tmp_path / "f.csv")
    assert code == 3 and "Non-Finite" in err
    assert not (tmp_path / "f.csv").exists()


def test_stage_attributed_error_from_bench(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("filter: {cutoff: 500.0}\ntiming: false\n")
    code, _, err = run(capsys, "bench", "--config", cfg, "--out", tmp_path / "o")
    assert code == 1 and "[filter]" in err


def test_failed_write_leaves_previous_output(tmp_path, capsys):
    out = tmp_path / "f.csv"
    out.write_text("previous\n")
    raw = tmp_path / "raw.csv"
    raw.write_text("t,x,y,z,theta\n0,0,0,0,0\n")  # too short for an automatic cutoff
    code, _, _ = run(capsys, "filter", raw, "-o", out)
    assert code == 2
    assert out.read_text() == "previous\n"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["f.csv", "raw.csv"]


def test_outputs_are_rerun_identical(tmp_path, cfg, capsys):
    for d in ("a", "b"):
        run(capsys, "simulate", "--config", cfg, "--out", tmp_path / d)
        run(capsys, "estimate", tmp_path / d / "rect" / "detections.jsonl",
            "-o", tmp_path / d / "raw.csv")
    assert (tmp_path / "a" / "raw.csv").read_bytes() == (tmp_path / "b" / "raw.csv").read_bytes()


# -- help and entry point -------------------------------------------------------------

def test_help_lists_every_command(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("simulate", "estimate", "filter", "evaluate", "bench", "bode", "spectrum",
                "map-gen"):
        assert cmd in out
    assert "TAGNAV_CONFIG_DIR" in out


@pytest.mark.parametrize("cmd", ["simulate", "estimate", "filter", "evaluate", "bench", "bode",
                                 "spectrum", "map-gen"])
def test_subcommand_help(cmd, capsys):
    with pytest.raises(SystemExit) as exc:
        main([cmd, "--help"])
    assert exc.value.code == 0 and "usage: tagnav " + cmd in capsys.readouterr().out


@pytest.mark.skipif(shutil.which("tagnav") is None, reason="console script not installed")
def test_console_script():
    done = subprocess.run(["tagnav", "bode", "--cutoff", "1", "--points", "3"],
                          capture_output=True, text=True)
    assert done.returncode == 0 and done.stdout.startswith("omega_rad_s")
    done = subprocess.run(["tagnav", "bode", "--cutoff", "1000"], capture_output=True, text=True)
    assert done.returncode == 1 and done.stdout == ""
    assert done.stderr.count("\n") == 1
