import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

from lumenrem import cli, evalmap, forest, mlp
from lumenrem.dataset import Dataset
from lumenrem.scene import Scene, preset_scene


def run(monkeypatch, tmp_path, *argv):
    monkeypatch.chdir(tmp_path)
    return cli.main(list(argv))


@pytest.fixture()
def workdir(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One small dataset + trained MLP + reference shared by read-only tests."""
    d = tmp_path_factory.mktemp("trained")
    assert cli.main(["generate", "--scene", "small", "--per-axis", "6",
                     "--seed", "3", "--out", str(d / "d.csv")]) == 0
    assert cli.main(["train", "--model", "mlp32x128", "--data", str(d / "d.csv"),
                     "--train-size", "100", "--epochs", "3", "--batch-size", "16",
                     "--seed", "1", "--out", str(d / "m.json")]) == 0
    assert cli.main(["generate", "--scene", "small", "--reference", "25",
                     "--seed", "5", "--out", str(d / "ref.csv")]) == 0
    return d


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def test_generate_fixed_grid(workdir):
    assert cli.main(["generate", "--scene", "small", "--per-axis", "4",
                     "--seed", "0", "--out", "d.csv"]) == 0
    ds = Dataset.load("d.csv")
    assert len(ds) == 64
    assert ds.feature_names == ("x", "y", "z")
    assert Path("d.meta.json").exists()
    assert Path("d.csv.run.meta.json").exists()


def test_generate_variable(workdir):
    assert cli.main(["generate", "--variable", "--per-xy", "2", "--per-z", "2",
                     "--per-dim", "2", "--seed", "0", "--out", "v.csv"]) == 0
    ds = Dataset.load("v.csv")
    assert len(ds) == 2 * 2 * 2 * 2 * 2
    assert ds.feature_names == ("x", "y", "z", "lx", "ly")


def test_generate_reference_modes(workdir):
    assert cli.main(["generate", "--scene", "small", "--reference", "10",
                     "--seed", "1", "--out", "r.csv"]) == 0
    assert len(Dataset.load("r.csv")) == 10
    assert cli.main(["generate", "--variable", "--reference", "8",
                     "--seed", "1", "--out", "rv.csv"]) == 0
    rv = Dataset.load("rv.csv")
    assert len(rv) == 8 and rv.n_features == 5


def test_generate_with_noise_records_osnr(workdir, capsys):
    assert cli.main(["generate", "--scene", "small", "--per-axis", "4",
                     "--noise-factor", "0.5", "--seed", "2", "--out", "n.csv"]) == 0
    out = capsys.readouterr().out
    assert "OSNR" in out
    meta = json.loads(Path("n.meta.json").read_text())
    assert meta["noise_factor"] == 0.5
    assert np.isfinite(meta["mean_osnr_db"])


def test_generate_scene_file(workdir):
    scene = preset_scene("small", led_count=4)
    scene.save("room.json")
    assert cli.main(["generate", "--scene", "room.json", "--per-axis", "3",
                     "--out", "d.csv"]) == 0
    loaded = json.loads(Path("d.meta.json").read_text())
    assert len(loaded["scene"]["transmitters"]) == 4


def test_generate_usage_conflicts(workdir):
    base = ["generate", "--out", "x.csv"]
    assert cli.main(base + ["--per-axis", "3", "--variable",
                            "--per-xy", "2", "--per-z", "2", "--per-dim", "2"]) == 1
    assert cli.main(base + ["--reference", "5", "--per-axis", "3"]) == 1
    assert cli.main(base + ["--variable", "--per-xy", "2"]) == 1
    assert cli.main(base) == 1  # no size flags at all


def test_missing_out_is_usage_error(workdir, capsys):
    assert cli.main(["generate", "--scene", "small", "--per-axis", "3"]) == 1
    capsys.readouterr()


def test_unknown_preset_is_runtime_error(workdir):
    assert cli.main(["generate", "--scene", "warehouse", "--per-axis", "3",
                     "--out", "d.csv"]) == 2


# ---------------------------------------------------------------------------
# train / evaluate / predict
# ---------------------------------------------------------------------------

def test_train_logs_requested_epochs(trained):
    model = mlp.load_model(trained / "m.json")
    assert len(model.training_log) == 3
    assert model.config.batch_size == 16


def test_train_tree_kinds(workdir, trained):
    for extra, kind in ((["--xt-trees", "4"], "xt"),
                        (["--adaboost-estimators", "2", "--adaboost-base-trees", "2"], "adaboost"),
                        (["--max-depth", "3"], "dt")):
        out = f"{kind}.json"
        assert cli.main(["train", "--model", kind, "--data", str(trained / "d.csv"),
                         "--train-size", "80", "--seed", "2", "--out", out] + extra) == 0
        model = forest.load_forest(out)
        assert evalmap.model_label(model) == kind
    assert forest.load_forest("dt.json").params.max_depth == 3


def test_train_size_too_big_is_runtime_error(workdir, trained):
    assert cli.main(["train", "--model", "dt", "--data", str(trained / "d.csv"),
                     "--train-size", "100000", "--out", "m.json"]) == 2


def test_evaluate_writes_report(workdir, trained, capsys):
    assert cli.main(["evaluate", "--model", str(trained / "m.json"),
                     "--reference", str(trained / "ref.csv"), "--out", "report.json"]) == 0
    report = json.loads(Path("report.json").read_text())
    assert report["n_points"] == 25
    assert report["mae_dbm"] > 0
    assert "abs_error_summary" in report
    assert "MAE" in capsys.readouterr().out


def test_predict_matches_library(workdir, trained, capsys):
    rc = cli.main(["predict", "--model", str(trained / "m.json"),
                   "--at", "1.5,1.5,1.0", "--at", "0.5,2.0,0.25", "--out", "p.csv"])
    assert rc == 0
    model = mlp.load_model(trained / "m.json")
    expected = evalmap.predict_any(
        model, np.array([[1.5, 1.5, 1.0], [0.5, 2.0, 0.25]]))
    lines = Path("p.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,prediction_dbm"
    got = [float(line.split(",")[-1]) for line in lines[1:]]
    assert got == list(expected)
    printed = [float(v) for v in capsys.readouterr().out.split()]
    assert printed == list(expected)


def test_predict_arity_mismatch_is_usage_error(workdir, trained):
    assert cli.main(["predict", "--model", str(trained / "m.json"),
                     "--at", "1.0,2.0", "--out", "p.csv"]) == 1
    assert cli.main(["predict", "--model", str(trained / "m.json"),
                     "--at", "a,b,c", "--out", "p.csv"]) == 1


# ---------------------------------------------------------------------------
# map / bench / campaign
# ---------------------------------------------------------------------------

def test_map_simulate_matches_library(workdir):
    assert cli.main(["map", "--simulate", "--scene", "small", "--z", "1.0",
                     "--spacing", "1.0", "--out", "map.csv", "--pgm", "map.pgm"]) == 0
    m = evalmap.simulate_map(preset_scene("small"), 1.0, 1.0)
    lines = Path("map.csv").read_text().splitlines()
    assert len(lines) == 2 + 9
    x, y, v = (float(t) for t in lines[2].split(","))
    assert (x, y) == (0.5, 0.5)
    assert v == m.values[0, 0]
    assert Path("map.pgm").read_text().startswith("P2\n3 3\n255\n")


def test_map_from_model(workdir, trained, capsys):
    assert cli.main(["map", "--model", str(trained / "m.json"), "--scene", "small",
                     "--z", "1.0", "--spacing", "1.5", "--out", "pm.csv"]) == 0
    assert "predicted:mlp32x128" in capsys.readouterr().out


def test_map_requires_exactly_one_source(workdir, trained):
    assert cli.main(["map", "--scene", "small", "--out", "m.csv"]) == 1
    assert cli.main(["map", "--simulate", "--model", str(trained / "m.json"),
                     "--out", "m.csv"]) == 1


def test_bench_writes_timing_report(workdir, trained):
    assert cli.main(["bench", "--model-kind", "dt", "--data", str(trained / "d.csv"),
                     "--reps", "1", "--out", "bench.json"]) == 0
    report = json.loads(Path("bench.json").read_text())
    assert report["train_seconds"] > 0
    assert report["predict_us_per_sample"] > 0
    assert report["hardware_note"]
    assert report["n_predict"] == 10_000


def test_bench_rejects_small_prediction_count(workdir, trained):
    assert cli.main(["bench", "--model-kind", "dt", "--data", str(trained / "d.csv"),
                     "--reps", "1", "--n-predict", "10", "--out", "b.json"]) == 2


def test_campaign_runs_tiny_grid(workdir, capsys):
    spec = {
        "preset": "small", "models": ["dt"], "train_sizes": [60],
        "epochs": [1], "batch_sizes": [32], "noise_factors": [0.0],
        "repetitions": 2, "seed": 3, "pool_per_axis": 5, "reference_n": 15,
    }
    Path("spec.json").write_text(json.dumps(spec))
    assert cli.main(["campaign", "--spec", "spec.json", "--out", "camp"]) == 0
    rows = Path("camp/results.csv").read_text().splitlines()
    assert len(rows) == 1 + 2
    assert Path("camp/summary.csv").exists()
    assert Path("camp/run.meta.json").exists()


def test_campaign_rejects_unknown_field(workdir):
    Path("spec.json").write_text(json.dumps({"models": ["dt"], "mystery": 1}))
    assert cli.main(["campaign", "--spec", "spec.json", "--out", "camp"]) == 2


# ---------------------------------------------------------------------------
# replay and plumbing
# ---------------------------------------------------------------------------

def _replay_and_compare(monkeypatch, tmp_path, first_argv, stage=()):
    """Run a command in one directory, replay it from run.meta.json in a
    second one, and require byte-identical outputs (meta included)."""
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir(), b.mkdir()
    monkeypatch.chdir(a)
    assert cli.main(list(first_argv)) == 0
    metas = list(a.glob("**/run.meta.json")) + list(a.glob("*.run.meta.json"))
    assert len(metas) == 1
    meta = json.loads(metas[0].read_text())
    for name in stage:
        shutil.copy(a / name, b / name)
    monkeypatch.chdir(b)
    assert cli.main(cli.argv_from_meta(meta)) == 0
    for out in meta["outputs"] + [str(metas[0].relative_to(a))]:
        assert (b / out).read_bytes() == (a / out).read_bytes(), out


def test_replay_generate(monkeypatch, tmp_path):
    _replay_and_compare(monkeypatch, tmp_path,
                        ["generate", "--scene", "small", "--per-axis", "4",
                         "--noise-factor", "0.3", "--seed", "11", "--out", "d.csv"])


def test_replay_map(monkeypatch, tmp_path):
    _replay_and_compare(monkeypatch, tmp_path,
                        ["map", "--simulate", "--scene", "small", "--z", "0.75",
                         "--spacing", "0.8", "--out", "map.csv", "--pgm", "map.pgm"])


def test_replay_train(monkeypatch, tmp_path, trained):
    _replay_and_compare(monkeypatch, tmp_path,
                        ["train", "--model", "xt", "--xt-trees", "4",
                         "--data", str(trained / "d.csv"), "--train-size", "60",
                         "--seed", "4", "--out", "model.json"])


def test_help_and_version_exit_zero(capsys):
    assert cli.main(["--help"]) == 0
    assert cli.main(["--version"]) == 0
    out = capsys.readouterr().out
    assert "lumenrem" in out


def test_no_subcommand_is_usage_error(capsys):
    assert cli.main([]) == 1
    capsys.readouterr()


def test_console_script_installed():
    exe = shutil.which("lumenrem")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run([exe, "--version"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "lumenrem" in proc.stdout


def test_argv_round_trip_through_parser():
    meta = {
        "subcommand": "generate",
        "resolved": {
            "scene": "mid", "leds": 4, "per_axis": None, "variable": True,
            "per_xy": 3, "per_z": 2, "per_dim": 2, "reference": None,
            "noise_factor": 0.25, "patch_edge": 0.2, "seed": 9, "out": "d.csv",
        },
    }
    argv = cli.argv_from_meta(meta, out="other.csv")
    args = cli.build_parser().parse_args(argv)
    assert args.variable is True
    assert args.per_axis is None
    assert args.noise_factor == 0.25
    assert args.out == "other.csv"
