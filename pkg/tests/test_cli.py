import numpy as np
import pytest
import yaml

from stmem.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from stmem.formats import read_ply


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.yaml"
    cfg.write_text(yaml.safe_dump({"train": {"max_iters": 10, "finetune_iters": 5, "eval_every": 5}}))
    data = root / "data"
    for split in ("train", "val", "test"):
        assert main(["simulate", "--config", str(cfg), "--split", split, "--count", "1", "--out", str(data)]) == EXIT_OK
    return root, cfg, data


def test_train_infer_eval_export(tiny, capsys):
    root, cfg, data = tiny
    out = root / "out"
    for mode in ("memory", "single_sweep"):
        assert main(["train", "--config", str(cfg), "--data", str(data), "--mode", mode, "--out", str(out)]) == EXIT_OK
    assert (out / "model_memory.stmc").exists() and (out / "metrics_single_sweep.csv").exists()
    assert main(["eval", "--config", str(cfg), "--data", str(data / "test"), "--memory-model", str(out / "model_memory.stmc"),
                 "--single-model", str(out / "model_single_sweep.stmc"), "--out", str(out)]) == EXIT_OK
    csv = (out / "eval.csv").read_text().splitlines()
    assert csv[0].startswith("model,") and sum(line.startswith("memory,all") for line in csv) == 1
    assert {line.split(",")[0] for line in csv[1:]} == {"memory", "single_sweep", "image_baseline"}
    assert main(["infer", "--config", str(cfg), "--data", str(data / "test"), "--model", str(out / "model_memory.stmc"), "--out", str(out / "pred")]) == EXIT_OK
    npy = list((out / "pred").glob("*.npy"))
    assert len(npy) == 1
    pts, _ = read_ply(npy[0].with_suffix(".ply"))
    assert len(pts) == len(np.load(npy[0]))
    seq = sorted((data / "test").glob("*.stms"))[0].with_suffix("")
    assert main(["export", "--config", str(cfg), "--sequence", str(seq), "--out", str(out / "exp")]) == EXIT_OK
    assert len(list((out / "exp").iterdir())) == 3


def test_eval_without_checkpoints_runs_baseline_only(tiny):
    root, cfg, data = tiny
    out = root / "base"
    assert main(["eval", "--config", str(cfg), "--data", str(data / "test"), "--out", str(out)]) == EXIT_OK
    assert {line.split(",")[0] for line in (out / "eval.csv").read_text().splitlines()[1:]} == {"image_baseline"}


def test_validation_errors_exit_2(tiny, tmp_path):
    root, cfg, data = tiny
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {bogus: 1}\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["eval", "--data", str(tmp_path), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["infer", "--data", str(data / "test"), "--mode", "memory", "--out", str(tmp_path)]) == EXIT_VALIDATION
    junk = tmp_path / "junk.stmc"
    junk.write_bytes(b"not a checkpoint")
    assert main(["infer", "--data", str(data / "test"), "--model", str(junk), "--out", str(tmp_path)]) == EXIT_VALIDATION
    assert main(["simulate", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == EXIT_VALIDATION
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # argparse usage error
    assert exc.value.code == 2


def test_runtime_failure_exit_1(tmp_path):
    (tmp_path / "train").mkdir()
    assert main(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
