import json
import re

import numpy as np
import pytest

from modalign.cli import main
from modalign.evaluator import read_pairs_csv

import oracles
from conftest import build_quarter_dataset, write_registered_pairs


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_data")
    manifest = build_quarter_dataset(root, n_images=3, pairs_per_image=2, seed=3,
                                     test_fraction=0.34)
    return manifest


def test_generate_counts_and_checksum_reproducible(tmp_path, capsys):
    src = write_registered_pairs(tmp_path / "reg", 2, 48, 7)
    args = [
        "generate", "--input-dir", str(src), "--out-dir", str(tmp_path / "d1"),
        "--pairs-per-image", "3", "--target-size", "48", "--source-size", "32",
        "--jitter-radius", "8", "--seed", "5", "--test-fraction", "0.5",
    ]
    code, out, _ = run(capsys, *args)
    assert code == 0
    assert "6 pairs (train 3 / test 3)" in out
    sha1 = re.search(r"manifest sha256 (\w+)", out).group(1)

    args[4] = str(tmp_path / "d2")
    code, out2, _ = run(capsys, *args)
    sha2 = re.search(r"manifest sha256 (\w+)", out2).group(1)
    assert code == 0 and sha1 == sha2


def test_generate_missing_input_dir_exits_3(tmp_path, capsys):
    code, _, err = run(
        capsys, "generate", "--input-dir", str(tmp_path / "missing"),
        "--out-dir", str(tmp_path / "out"),
    )
    assert code == 3
    assert "i/o error" in err


def test_generate_bad_config_exits_2(tmp_path, capsys):
    src = write_registered_pairs(tmp_path / "reg", 1, 48, 0)
    code, _, err = run(
        capsys, "generate", "--input-dir", str(src), "--out-dir", str(tmp_path / "out"),
        "--pairs-per-image", "0",
    )
    assert code == 2


def test_generate_missing_required_option_exits_2(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--out-dir", str(tmp_path / "out"))
    assert code == 2
    assert "input-dir" in err


def test_config_file_with_flag_override(tmp_path, capsys):
    src = write_registered_pairs(tmp_path / "reg", 2, 48, 9)
    cfg = {
        "input_dir": str(src),
        "out_dir": str(tmp_path / "from_file"),
        "pairs_per_image": 2,
        "target_size": 48,
        "source_size": 32,
        "jitter_radius": 8,
        "seed": 1,
    }
    cfg_path = tmp_path / "gen.json"
    cfg_path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "generate", "--config", str(cfg_path),
                       "--pairs-per-image", "1")
    assert code == 0
    assert "2 pairs" in out  # flag override: 1 per image x 2 images


def test_train_backbone_zero_epochs(dataset, tmp_path, capsys):
    code, out, _ = run(
        capsys, "train-backbone", "--manifest", str(dataset),
        "--checkpoint-dir", str(tmp_path / "ck"), "--epochs", "0", "--scale", "0.25",
    )
    assert code == 0
    assert "backbone checkpoint" in out


def test_train_head_missing_backbone_exits_2(dataset, tmp_path, capsys):
    code, _, err = run(
        capsys, "train-head", "--manifest", str(dataset),
        "--checkpoint-dir", str(tmp_path / "ck"), "--epochs", "1", "--scale", "0.25",
        "--backbone-checkpoint", str(tmp_path / "nope.ckpt"),
    )
    assert code == 2
    assert "backbone checkpoint" in err


def test_full_cli_pipeline_and_report_consistency(dataset, tmp_path, capsys):
    ck = tmp_path / "ck"
    code, *_ = run(
        capsys, "train-backbone", "--manifest", str(dataset), "--checkpoint-dir", str(ck),
        "--epochs", "2", "--scale", "0.25", "--learning-rate", "1e-3", "--seed", "4",
    )
    assert code == 0
    code, out, _ = run(
        capsys, "train-head", "--manifest", str(dataset), "--checkpoint-dir", str(ck),
        "--backbone-checkpoint", str(ck / "backbone.ckpt"), "--epochs", "2",
        "--scale", "0.25", "--learning-rate", "1e-3", "--seed", "4", "--head", "corners",
    )
    assert code == 0
    model_ckpt = re.search(r"model checkpoint (\S+)", out).group(1)

    out_dir = tmp_path / "eval"
    code, out, _ = run(
        capsys, "evaluate", "--checkpoint", model_ckpt, "--manifest", str(dataset),
        "--split", "test", "--out-dir", str(out_dir),
    )
    assert code == 0
    assert (out_dir / "pairs.csv").exists()
    assert (out_dir / "summary.json").exists()
    assert (out_dir / "boxplot.svg").exists()

    # summary quartiles must equal an offline recomputation from the CSV
    summary = json.loads((out_dir / "summary.json").read_text())
    errors = [r.ace for r in read_pairs_csv(out_dir / "pairs.csv")]
    assert summary["q1"] == pytest.approx(oracles.quantile_sorted(errors, 0.25), abs=1e-12)
    assert summary["median"] == pytest.approx(oracles.quantile_sorted(errors, 0.50), abs=1e-12)
    assert summary["q3"] == pytest.approx(oracles.quantile_sorted(errors, 0.75), abs=1e-12)

    # the report subcommand reproduces the same summary from the CSV alone
    rep_dir = tmp_path / "report"
    code, *_ = run(capsys, "report", "--pairs-csv", str(out_dir / "pairs.csv"),
                   "--out-dir", str(rep_dir))
    assert code == 0
    assert json.loads((rep_dir / "summary.json").read_text()) == summary

    # training logs are line-oriented JSON events
    log_lines = (ck / "train_head.log.jsonl").read_text().strip().splitlines()
    events = [json.loads(l) for l in log_lines]
    assert all("event" in e for e in events)


def test_evaluate_ground_truth_injection_all_zero(dataset, tmp_path, capsys):
    out_dir = tmp_path / "gt_eval"
    code, out, _ = run(
        capsys, "evaluate", "--predict-ground-truth", "--manifest", str(dataset),
        "--split", "train", "--out-dir", str(out_dir),
    )
    assert code == 0
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["mean"] == 0.0 and summary["max"] == 0.0


def test_evaluate_empty_split_exits_2(tmp_path, capsys):
    manifest = build_quarter_dataset(tmp_path, n_images=2, pairs_per_image=2, seed=6,
                                     test_fraction=0.0)
    code, _, err = run(
        capsys, "evaluate", "--predict-ground-truth", "--manifest", str(manifest),
        "--split", "test", "--out-dir", str(tmp_path / "ev"),
    )
    assert code == 2


def test_evaluate_missing_checkpoint_option_exits_2(dataset, tmp_path, capsys):
    code, _, err = run(
        capsys, "evaluate", "--manifest", str(dataset), "--out-dir", str(tmp_path / "ev"),
    )
    assert code == 2
    assert "checkpoint" in err


def test_report_missing_csv_exits_3(tmp_path, capsys):
    code, *_ = run(capsys, "report", "--pairs-csv", str(tmp_path / "no.csv"),
                   "--out-dir", str(tmp_path / "r"))
    assert code == 3
