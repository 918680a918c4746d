"""Command line entry point: simulate -> gtgen -> train -> infer -> eval -> export."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .ccnet.checkpoint import ArchitectureMismatchError, load_checkpoint, save_checkpoint
from .ccnet.train import TrainingError, write_metrics
from .formats import FormatError, write_labels, write_ply
from .gtgen import label_agreement
from .harness.config import ConfigError, load_config
from .harness.experiment import iter_load, iter_split, library_scenario, load_sequence, save_sequence, simulate, split_paths
from .harness.pipeline import MODES, associations, replay_memory, run_pipeline
from .harness.runner import net_config, prepare_split, score_cases, sequence_gt, train_model
from .occlusion import build_depth_raster, fill_gaps
from .sim.scenario import ScenarioError

log = logging.getLogger("stmem")

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def _split_dir(data: Path, split: str) -> Path:
    d = data / split
    if not d.is_dir():
        raise ConfigError(f"no {split} split under {data} (run `stmem simulate --split {split}` first)")
    return d


def cmd_simulate(args, cfg) -> int:
    out = Path(args.out)
    if args.scenario:
        seq = simulate(library_scenario(args.scenario, cfg, args.extension), cfg, args.extension)
        base = save_sequence(seq, out)
        print(f"wrote {base}.stms ({len(seq.sweeps)} sweeps, key frame {seq.key_frame_index})")
        return EXIT_OK
    splits = args.split or ["train", "val", "test"]
    counts = {"train": cfg.data.n_train, "val": cfg.data.n_val, "test": cfg.data.n_test}
    for split in splits:
        n = args.count if args.count is not None else counts.get(split, 1)
        for seq in iter_split(cfg, split, n, args.extension):
            save_sequence(seq, out / split)
        print(f"wrote {n} {split} sequences to {out / split}")
    return EXIT_OK


def cmd_gtgen(args, cfg) -> int:
    data = Path(args.data)
    if not split_paths(data):
        raise ConfigError(f"no sequences in {data}")
    seqs = iter_load(data)
    gen_cfg = cfg
    gen_cfg.data.gt_source = "generated"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        labels = sequence_gt(seq, gen_cfg)
        write_labels(out / f"{seq.name}.gen.stmg", labels, labels, seq.key_frame_index)
        agree = label_agreement(labels, [seq.gt_labels[s] for s in seq.window])
        print(f"{seq.name}: agreement with simulator labels {100 * agree:.2f}%")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    data = Path(args.data)
    examples, _ = prepare_split(iter_load(_split_dir(data, "train")), cfg, (args.mode,))
    val_dir = data / "val"
    _, val_cases = prepare_split(iter_load(val_dir) if val_dir.is_dir() else [], cfg, (), (args.mode,))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    net, history = train_model(cfg, [], [], args.mode, examples=examples[args.mode], val_cases=val_cases[args.mode])
    ckpt = out / f"model_{args.mode}.stmc"
    save_checkpoint(ckpt, net)
    write_metrics(out / f"metrics_{args.mode}.csv", history)
    best = max((h.val_miou for h in history), default=float("nan"))
    print(f"wrote {ckpt} ({len(history)} evaluations, best val mIoU {best:.4f})")
    return EXIT_OK


def _load_model(path, cfg):
    net, _ = load_checkpoint(path, expect=net_config(cfg))
    if net.stats is None:
        raise ArchitectureMismatchError(f"{path} carries no feature statistics")
    return net


def cmd_infer(args, cfg) -> int:
    seqs = iter_load(args.data) if Path(args.data).is_dir() else [load_sequence(args.data)]
    net = _load_model(args.model, cfg) if args.mode != "image_baseline" else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        ev, pred, _ = run_pipeline(net, seq, args.mode, cfg, sequence_gt(seq, cfg))
        write_ply(out / f"{seq.name}.{args.mode}.ply", ev.positions, pred)
        np.save(out / f"{seq.name}.{args.mode}.npy", pred)
        print(f"{seq.name}: {len(pred)} evaluated points, {int((pred != 0).sum())} foreground")
    return EXIT_OK


def cmd_eval(args, cfg) -> int:
    if not split_paths(args.data):
        raise ConfigError(f"no sequences in {args.data}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = {"memory": args.memory_model, "single_sweep": args.single_model}
    modes = []
    for mode in args.modes:
        if mode != "image_baseline" and not models[mode]:
            print(f"skipping {mode}: no checkpoint given")
            continue
        modes.append(mode)
    nets = {m: _load_model(models[m], cfg) if m != "image_baseline" else None for m in modes}
    _, cases = prepare_split(iter_load(args.data), cfg, (), modes)
    rows, tables = [], []
    for mode in modes:
        report, _ = score_cases(cases[mode], nets[mode], cfg, mode)
        rows.append(report.to_csv() if not rows else report.to_csv().split("\n", 1)[1])
        tables.append(report.table())
    (out / "eval.csv").write_text("".join(rows))
    text = "\n\n".join(tables)
    (out / "eval.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_export(args, cfg) -> int:
    seq = load_sequence(args.sequence)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pts = np.concatenate([seq.sweeps[s].world_points() for s in seq.window])
    lab = np.concatenate([seq.keyframe_labels[s] for s in seq.window])
    write_ply(out / f"{seq.name}.gt.ply", pts, lab)
    state = replay_memory(seq, cfg, associations(seq))
    state.store.export_ply(out / f"{seq.name}.memory.ply")
    key = seq.sweeps[seq.key_frame_index]
    fill_gaps(build_depth_raster(key, seq.lidar), cfg.occlusion.fill_radius).export_ppm(out / f"{seq.name}.raster.ppm")
    print(f"exported {seq.name}: gt cloud, memory snapshot ({len(state.store)} points), key-frame raster")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="experiment seed (overrides the config)")
    common.add_argument("--config", type=Path, default=None, help="YAML config file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="stmem", description="Spatio-temporal point memory segmentation toolkit", parents=[common])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate synthetic sequences")
    s.add_argument("--scenario", help="library scenario name (forget, remember, reinforce) or a YAML path")
    s.add_argument("--split", action="append", choices=["train", "val", "test", "overfit"], help="random split(s) to generate")
    s.add_argument("--count", type=int, default=None, help="sequences per split (default from config)")
    s.add_argument("--extension", action="store_true", help="also simulate the ground-truth extension after the key frame")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("gtgen", parents=[common], help="generate ground truth from near-range labels")
    s.add_argument("--data", required=True, help="directory of sequences (simulated with --extension)")
    s.set_defaults(func=cmd_gtgen)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", required=True, help="dataset root with train/ and val/")
    s.add_argument("--mode", choices=["memory", "single_sweep"], default="memory")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="label sequences with a trained model")
    s.add_argument("--data", required=True, help="sequence base path or directory")
    s.add_argument("--model", help="checkpoint (.stmc)")
    s.add_argument("--mode", choices=MODES, default="memory")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="IoU report for all modes")
    s.add_argument("--data", required=True, help="directory of test sequences")
    s.add_argument("--memory-model", help="memory-mode checkpoint")
    s.add_argument("--single-model", help="single-sweep checkpoint")
    s.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", parents=[common], help="PLY/PPM debug exports for one sequence")
    s.add_argument("--sequence", required=True, help="sequence base path")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed} if args.seed is not None else None)
        if args.command == "infer" and args.mode != "image_baseline" and not args.model:
            raise ConfigError("--model is required for learned modes")
        return args.func(args, cfg)
    except (ConfigError, ScenarioError, FormatError, ArchitectureMismatchError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingError, Exception) as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
