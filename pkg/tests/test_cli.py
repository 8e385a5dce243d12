import csv
from pathlib import Path

import numpy as np
import pytest

from cwcc.cli import main
from cwcc.dataset import load_manifest, read_image
from cwcc.formats import read_tensors
from cwcc.metrics import ErrorSummary, pearson, summarize


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root: Path):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert run("synth", "--n", 12, "--size", 32, "--folds", 3, "--seed", 4, "--out", root) == 0
    return root


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert run("train", "--manifest", data / "manifest.csv", "--out", out, "--epochs", 3,
               "--batch", 4, "--lr", 3e-3, "--input-size", 32, "--test-fold", 2) == 0
    return out


def summary_rows(text):
    """Parse the ``recovery``/``reproduction`` rows of a report block."""
    rows = {}
    for line in text.splitlines():
        parts = line.split()
        if parts and parts[0] in ("recovery", "reproduction"):
            rows[parts[0]] = parts[1:]
    return rows


# ---------------------------------------------------------------------- synth
def test_synth_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--n", 5, "--size", 16, "--seed", 7, "--out", tmp_path / name) == 0
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_synth_zero_writes_nothing(tmp_path, capsys):
    assert run("synth", "--n", 0, "--out", tmp_path / "x") == 1
    assert not (tmp_path / "x").exists()
    assert "--n must be >= 1" in capsys.readouterr().err


def test_synth_manifest_validates(data):
    samples = load_manifest(data / "manifest.csv")
    assert len(samples) == 12 and [s.fold for s in samples[:4]] == [0, 1, 2, 0]


# ---------------------------------------------------------------------- train
def test_train_outputs(trained):
    rows = read_csv(trained / "train_log.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2]
    assert all(r["val_err_deg"] == "" for r in rows)
    report = (trained / "report.txt").read_text()
    assert report.startswith("# cwcc 0.1.0 train\n# seed: 0\n# config_hash: ")
    assert "# checkpoint_crc: " in report and (trained / "model.cwck").exists()
    _, meta = read_tensors(trained / "model.cwck")
    assert meta["test_fold"] == 2


def test_train_deterministic(data, tmp_path):
    for name in ("a", "b"):
        assert run("train", "--manifest", data / "manifest.csv", "--out", tmp_path / name,
                   "--epochs", 1, "--batch", 4, "--input-size", 32, "--val-fold", 1) == 0
    a, b = (tmp_path / n / "train_log.csv" for n in "ab")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a/model.cwck").read_bytes() == (tmp_path / "b/model.cwck").read_bytes()


def test_train_per_channel_is_larger(data, tmp_path):
    for variant in ("shared", "per_channel"):
        assert run("train", "--manifest", data / "manifest.csv", "--out", tmp_path / variant,
                   "--epochs", 0, "--input-size", 32, "--variant", variant) == 0
    sizes = {v: sum(t.size for t in read_tensors(tmp_path / v / "model.cwck")[0].values())
             for v in ("shared", "per_channel")}
    assert sizes["per_channel"] > sizes["shared"]


def test_training_beats_untrained(data, trained, tmp_path):
    assert run("train", "--manifest", data / "manifest.csv", "--out", tmp_path / "u",
               "--epochs", 0, "--input-size", 32) == 0

    def mean_error(ckpt, out):
        assert run("eval", "--manifest", data / "manifest.csv", "--checkpoint", ckpt,
                   "--out", out, "--fold", 0) == 0
        return np.mean([float(r["recovery_deg"]) for r in read_csv(out / "errors.csv")])
    assert mean_error(trained / "model.cwck", tmp_path / "e1") < \
        mean_error(tmp_path / "u/model.cwck", tmp_path / "e2")


# ----------------------------------------------------------------------- eval
def test_eval_ground_truth_is_zero(data, tmp_path, capsys):
    assert run("eval", "--manifest", data / "manifest.csv", "--method", "ground_truth",
               "--out", tmp_path) == 0
    rows = summary_rows(capsys.readouterr().out)
    assert rows["recovery"] == ["0.0000"] * 5 and rows["reproduction"] == ["0.0000"] * 5


def test_eval_grey_world_on_grey_scenes(tmp_path):
    assert run("synth", "--n", 10, "--size", 32, "--grey-mean", "--out", tmp_path / "d") == 0
    assert run("eval", "--manifest", tmp_path / "d/manifest.csv", "--method", "grey_world",
               "--out", tmp_path / "e") == 0
    errors = [float(r["recovery_deg"]) for r in read_csv(tmp_path / "e/errors.csv")]
    assert np.mean(errors) < 0.5


@pytest.mark.parametrize("method,extra", [("white_patch", []),
                                          ("shades_of_grey", ["--p", 4]),
                                          ("grey_edge", ["--order", 2, "--sigma", 1])])
def test_eval_report_matches_csv(data, tmp_path, method, extra):
    assert run("eval", "--manifest", data / "manifest.csv", "--method", method,
               "--out", tmp_path, *extra) == 0
    rows = read_csv(tmp_path / "errors.csv")
    assert len(rows) == 12
    reported = summary_rows((tmp_path / "report.txt").read_text())
    for metric in ("recovery", "reproduction"):
        s = summarize([float(r[f"{metric}_deg"]) for r in rows])
        assert reported[metric] == [f"{getattr(s, f):.4f}" for f in ErrorSummary.FIELDS]


def test_eval_cross_validation_average(data, tmp_path):
    assert run("eval", "--manifest", data / "manifest.csv", "--method", "grey_world",
               "--cv", 3, "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "errors.csv")
    per_fold = [summarize([float(r["recovery_deg"]) for r in rows if r["fold"] == str(k)])
                for k in range(3)]
    report = (tmp_path / "report.txt").read_text()
    average = report.split("average over 3 folds")[1]
    mean = ErrorSummary.average(per_fold)
    assert summary_rows(average)["recovery"] == [f"{getattr(mean, f):.4f}"
                                                 for f in ErrorSummary.FIELDS]


def test_eval_cwcc_needs_checkpoint(data, tmp_path, capsys):
    assert run("eval", "--manifest", data / "manifest.csv", "--out", tmp_path) == 1
    assert "--checkpoint is required" in capsys.readouterr().err


def test_missing_manifest(tmp_path, capsys):
    assert run("eval", "--manifest", tmp_path / "none.csv", "--method", "grey_world",
               "--out", tmp_path) == 1
    captured = capsys.readouterr()
    assert "manifest not found" in captured.err and captured.out == ""


# -------------------------------------------------------------------- predict
def test_predict_output_contract(data, trained, tmp_path, capsys):
    image = data / "images/00000.rif"
    assert run("predict", "--checkpoint", trained / "model.cwck", "--image", image,
               "--out", tmp_path) == 0
    e = np.array([float(v) for v in capsys.readouterr().out.split()])
    assert e.shape == (3,) and np.all(e > 0)
    assert abs(np.linalg.norm(e) - 1) < 1e-6
    corrected = read_image(tmp_path / "00000_corrected.rif")
    assert corrected.shape == read_image(image).shape


# ------------------------------------------------------------------------- uq
def test_uq_outputs(data, trained, tmp_path, capsys):
    assert run("uq", "--manifest", data / "manifest.csv", "--checkpoint",
               trained / "model.cwck", "--out", tmp_path, "--epochs", 5, "--cv", 3) == 0
    out = capsys.readouterr().out
    scatter = read_csv(tmp_path / "scatter.csv")
    assert len(scatter) == 12
    for k in range(3):
        rows = [r for r in scatter if r["fold"] == str(k)]
        r = pearson([float(x["predicted_deg"]) for x in rows], [float(x["true_deg"]) for x in rows])
        assert f"fold {k}: pearson {r:.4f}" in out
    sweep = read_csv(tmp_path / "tau_sweep.csv")
    accepted = [int(r["accepted"]) for r in sweep]
    assert accepted == sorted(accepted)
    assert [float(r["tau_deg"]) for r in sweep] == sorted(float(r["tau_deg"]) for r in sweep)
    assert "threshold: tau=2.5000" in out
    tensors, meta = read_tensors(tmp_path / "uq_fold0.cwck")
    assert any(k.startswith("uq/") for k in tensors) and meta["uq_test_fold"] == 0


def test_uq_uses_checkpoint_test_fold(data, trained, tmp_path):
    assert run("uq", "--manifest", data / "manifest.csv", "--checkpoint",
               trained / "model.cwck", "--out", tmp_path, "--epochs", 2) == 0
    scatter = read_csv(tmp_path / "scatter.csv")
    assert {r["fold"] for r in scatter} == {"2"} and len(scatter) == 4


def test_predict_reports_uncertainty(data, trained, tmp_path, capsys):
    run("uq", "--manifest", data / "manifest.csv", "--checkpoint", trained / "model.cwck",
        "--out", tmp_path, "--epochs", 2)
    capsys.readouterr()
    assert run("predict", "--checkpoint", tmp_path / "uq.cwck",
               "--image", data / "images/00003.rif") == 0
    line = capsys.readouterr().out.splitlines()[1]
    assert line.startswith("predicted_error_deg ") and float(line.split()[1]) >= 0


# ------------------------------------------------------ trained-model checks
@pytest.mark.slow
def test_predict_neutral_and_correction_idempotence(bench, tmp_path, capsys):
    from cwcc.dataset import SynthConfig, synthesize, write_image
    from cwcc.metrics import recovery_error
    from cwcc.model import save_checkpoint
    import benchmark

    model = bench.runs["shared"].model
    save_checkpoint(model, tmp_path / "m.cwck")
    grey = np.ones(3) / np.sqrt(3)
    neutral = synthesize(benchmark.SCENES, 1, illuminant=[1, 1, 1])[0]
    write_image(neutral.image, tmp_path / "n.rif")
    assert run("predict", "--checkpoint", tmp_path / "m.cwck", "--image", tmp_path / "n.rif",
               "--out", tmp_path / "n") == 0
    e = np.array([float(v) for v in capsys.readouterr().out.split()])
    assert recovery_error(grey, e) < 3.0
    corrected = read_image(tmp_path / "n/n_corrected.rif")
    assert np.abs(corrected - neutral.image).max() < 0.1

    cast = synthesize(SynthConfig(**{**benchmark.SCENES.__dict__, "seed": 99}), 10)
    drift = []
    for i, s in enumerate(cast):
        write_image(s.image, tmp_path / f"c{i}.rif")
        run("predict", "--checkpoint", tmp_path / "m.cwck", "--image", tmp_path / f"c{i}.rif",
            "--out", tmp_path / "c")
        capsys.readouterr()
        run("predict", "--checkpoint", tmp_path / "m.cwck",
            "--image", tmp_path / f"c/c{i}_corrected.rif")
        again = np.array([float(v) for v in capsys.readouterr().out.split()])
        drift.append(recovery_error(grey, again))
    assert np.mean(drift) < 2.0
