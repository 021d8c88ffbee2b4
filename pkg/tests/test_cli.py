import json

import numpy as np
import pytest
from PIL import Image

from scene2patch.cli import OUTPUT_ROOT_ENV, _resolve, build_parser, main
from scene2patch.data import DatasetManifest, compute_proportions, decode_mask, load_rgb, save_png
from scene2patch.models import load_model, read_model


def files_under(path):
    return sorted(p.relative_to(path) for p in path.rglob("*") if p.is_file())


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "synth"
    assert main(["synth", "--n", "20", "--size", "48", "--seed", "0", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "train"
    rc = main(["train", "--model", "s2p-small", "--grid", "8", "--manifest", str(synth_dir / "manifest.csv"),
               "--max-epochs", "5", "--patience", "5", "--lr", "5e-4", "--out", str(out)])
    assert rc == 0
    return out


def test_synth_outputs_and_labels(synth_dir):
    files = files_under(synth_dir)
    assert sum(f.name.endswith("_sat.png") for f in files) == 20
    assert sum(f.name.endswith("_mask.png") for f in files) == 20
    manifest = DatasetManifest.load(synth_dir / "manifest.csv")
    for e in manifest.entries:
        assert np.array_equal(compute_proportions(decode_mask(load_rgb(e.mask_path), strict=True)), e.proportions)


def test_synth_deterministic(tmp_path, synth_dir):
    out = tmp_path / "again"
    assert main(["synth", "--n", "20", "--size", "48", "--seed", "0", "--out", str(out)]) == 0
    assert files_under(out) == files_under(synth_dir)
    for f in files_under(out):
        assert (out / f).read_bytes() == (synth_dir / f).read_bytes()


def test_synth_bad_size_is_usage_error(tmp_path):
    assert main(["synth", "--size", "40", "--out", str(tmp_path / "x")]) == 2
    assert not (tmp_path / "x").exists()


def test_env_var_sets_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert main(["synth", "--n", "2", "--seed", "1"]) == 0
    assert (tmp_path / "root" / "synth" / "manifest.csv").is_file()


def test_prepare_pairs_and_determinism(tmp_path, capsys):
    ds = tmp_path / "ds"
    masks = {"a": np.full((8, 8), 4), "b": np.zeros((8, 8), int), "c": np.eye(8, dtype=int)}
    table = np.array([(0, 255, 255), (255, 255, 0), (255, 0, 255), (0, 255, 0), (0, 0, 255),
                      (255, 255, 255), (0, 0, 0)], np.uint8)
    for name, m in masks.items():
        save_png(ds / f"{name}_sat.png", np.full((8, 8, 3), 100, np.uint8))
        save_png(ds / f"{name}_mask.png", table[m])
    save_png(ds / "lonely_mask.png", table[np.zeros((8, 8), int)])
    assert main(["prepare", str(ds), "--out", str(tmp_path / "m")]) == 0
    captured = capsys.readouterr()
    assert "1 unpaired" in captured.err and "water" in captured.out
    first = (tmp_path / "m" / "manifest.csv").read_bytes()
    rows = first.decode().splitlines()[1:]
    assert len(rows) == 3
    assert rows[0].split(",")[3:] == ["0.0", "0.0", "0.0", "0.0", "1.0", "0.0", "0.0"]
    assert main(["prepare", str(ds), "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "manifest.csv").read_bytes() == first


def test_prepare_zero_pairs_is_runtime_error(tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["prepare", str(tmp_path / "empty"), "--out", str(tmp_path / "m")]) == 1


def test_train_usage_errors_write_nothing(tmp_path, synth_dir):
    out = tmp_path / "t"
    assert main(["train", "--model", "resnet18", "--manifest", str(synth_dir / "manifest.csv"),
                 "--out", str(out)]) == 2
    assert main(["train", "--model", "s2p-small-8", "--manifest", str(tmp_path / "missing.csv"),
                 "--out", str(out)]) == 2
    assert main(["train", "--model", "s2p-small-8", "--grid", "16", "--manifest",
                 str(synth_dir / "manifest.csv"), "--out", str(out)]) == 2
    assert main(["train", "--bogus-flag"]) == 2
    assert not out.exists()


def test_train_outputs(trained):
    assert {p.name for p in trained.iterdir()} == {"model.ckpt", "train_log.csv", "summary.txt"}
    model, meta = read_model(trained / "model.ckpt")
    assert model.config_id == "s2p-small-8" and len(meta["mean"]) == 3
    again = load_model(trained / "model.ckpt")
    assert all(np.array_equal(a, b) for a, b in zip(model.state_dict().values(), again.state_dict().values()))
    log = (trained / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,train_loss,val_rmse,seconds" and len(log) == 6
    assert "best val RMSE" in (trained / "summary.txt").read_text()


def test_train_patience_stop(tmp_path, synth_dir):
    out = tmp_path / "p"
    # a zero learning rate keeps validation RMSE flat, so patience runs out
    assert main(["train", "--model", "s2p-small-8", "--manifest", str(synth_dir / "manifest.csv"),
                 "--lr", "0", "--weight-decay", "0", "--patience", "1", "--max-epochs", "3", "--out", str(out)]) == 0
    assert "stop reason: patience" in (out / "summary.txt").read_text()


def test_eval_twice_identical(tmp_path, trained, synth_dir):
    args = ["eval", "--checkpoint", str(trained / "model.ckpt"), "--manifest", str(synth_dir / "manifest.csv"),
            "--fold", "0"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("metrics.csv", "metrics.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    text = (tmp_path / "a" / "metrics.csv").read_text()
    assert "patch_miou" in text and "pixel_miou" in text


def test_eval_without_masks(tmp_path, trained, synth_dir):
    lines = (synth_dir / "manifest.csv").read_text().splitlines()
    rows = [lines[0]]
    for line in lines[1:]:
        cols = line.split(",")
        cols[1] = str((synth_dir / cols[1]).resolve())
        cols[2] = ""
        rows.append(",".join(cols))
    nomask = tmp_path / "nomask.csv"
    nomask.write_text("\n".join(rows) + "\n")
    (tmp_path / "nomask.stats.json").write_text((synth_dir / "manifest.stats.json").read_text())
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--manifest", str(nomask),
                 "--out", str(out)]) == 0
    csv_text = (out / "metrics.csv").read_text()
    assert "s2p-small-8,patch_miou,N/A" in csv_text and "s2p-small-8,pixel_miou,N/A" in csv_text
    assert "note: no masks available" in (out / "metrics.txt").read_text()


def test_eval_model_mismatch_is_runtime_error(tmp_path, trained, synth_dir):
    assert main(["eval", "--checkpoint", str(trained / "model.ckpt"), "--manifest",
                 str(synth_dir / "manifest.csv"), "--model", "s2p-large-8", "--out", str(tmp_path / "x")]) == 1


def test_segment_outputs(tmp_path, trained, synth_dir):
    out = tmp_path / "seg"
    assert main(["segment", "--checkpoint", str(trained / "model.ckpt"), "--image",
                 str(synth_dir / "synth_0000_sat.png"), "--mask", str(synth_dir / "synth_0000_mask.png"),
                 "--out", str(out)]) == 0
    comp = Image.open(out / "composite.png")
    assert comp.size == (3 * 48 + 2 * 8, 48)
    assert len(list((out / "evidence").glob("*.png"))) == 14
    pred = np.asarray(Image.open(out / "prediction.png").convert("RGB")).reshape(-1, 3)
    table = {(0, 255, 255), (255, 255, 0), (255, 0, 255), (0, 255, 0), (0, 0, 255), (255, 255, 255), (0, 0, 0)}
    assert {tuple(c) for c in pred} <= table


def test_segment_evidence_options(tmp_path, trained, synth_dir):
    out = tmp_path / "seg"
    assert main(["segment", "--checkpoint", str(trained / "model.ckpt"), "--image",
                 str(synth_dir / "synth_0001_sat.png"), "--evidence", "weighted", "--out", str(out)]) == 0
    names = [p.name for p in (out / "evidence").glob("*.png")]
    assert len(names) == 7 and all(n.endswith("_weighted.png") for n in names)
    assert Image.open(out / "composite.png").size == (2 * 48 + 8, 48)


def test_segment_geometry_error_has_hint(tmp_path, trained, capsys):
    save_png(tmp_path / "odd.png", np.zeros((50, 50, 3), np.uint8))
    assert main(["segment", "--checkpoint", str(trained / "model.ckpt"), "--image", str(tmp_path / "odd.png"),
                 "--out", str(tmp_path / "s")]) == 1
    assert "multiple of 8" in capsys.readouterr().err


def test_report_and_cv(tmp_path, synth_dir, capsys):
    cv_out = tmp_path / "cv"
    assert main(["cv", "--model", "s2p-small-8", "--manifest", str(synth_dir / "manifest.csv"), "--fold", "1",
                 "--max-epochs", "1", "--patience", "1", "--out", str(cv_out)]) == 0
    assert (cv_out / "fold_result_r0_f1.csv").is_file()
    capsys.readouterr()
    assert main(["report", str(cv_out), "--out", str(tmp_path / "rep")]) == 0
    text = capsys.readouterr().out
    assert "S2P Small 8" in text and "± 0.000" in text
    assert (tmp_path / "rep" / "results_table.csv").is_file()


def test_report_without_results_is_usage_error(tmp_path):
    (tmp_path / "none").mkdir()
    assert main(["report", str(tmp_path / "none"), "--out", str(tmp_path / "r")]) == 2
    assert not (tmp_path / "r").exists()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"model": "s2p-large-8", "max_epochs": 12, "seed": 4, "learning_rate": 1e-3}))
    args = build_parser().parse_args(["train", "--config", str(cfg), "--seed", "9"])
    run = _resolve(args)
    assert (run.model, run.max_epochs, run.seed, run.learning_rate) == ("s2p-large-8", 12, 9, 1e-3)
    assert run.weight_decay is None  # falls through to the tabulated default


def test_config_unknown_key_is_usage_error(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"modle": "s2p-small-8"}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
