"""Training and evaluation over whole splits."""

from __future__ import annotations

import logging

import numpy as np

from ..ccnet.network import CCNetwork, NetConfig
from ..ccnet.train import Example, TrainConfig, compute_stats, fit
from ..gtgen import DbscanParams, generate_gt
from ..sim.sequence import LabeledSequence
from .config import Config
from .metrics import EvalReport, IoUCounter
from .pipeline import Case, associations, build_case, evaluation_set, memory_example, predict_case, replay_memory, single_sweep_examples

log = logging.getLogger(__name__)


def net_config(cfg: Config) -> NetConfig:
    return NetConfig(dims=tuple(cfg.net.dims), hidden=cfg.net.hidden, k=cfg.memory.k, normalize=cfg.net.normalize, scalar_kernel=cfg.net.scalar_kernel)


def train_config(cfg: Config) -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.lr, t.finetune_lr, t.max_iters, t.finetune_iters, t.eval_every, t.patience, cfg.seed)


def sequence_gt(seq: LabeledSequence, cfg: Config):
    """Training/eval targets for the window sweeps according to data.gt_source."""
    if cfg.data.gt_source == "sim":
        return None
    g = cfg.gtgen
    labels = generate_gt(seq.sweeps, seq.camera, targets=seq.window, range_limit=g.range_limit,
                         params=DbscanParams(g.eps, g.min_pts), delta=g.delta)
    return labels


def training_examples(seqs: list[LabeledSequence], cfg: Config, mode: str) -> list[Example]:
    out = []
    for seq in seqs:
        gt = sequence_gt(seq, cfg)
        if mode == "memory":
            out.append(memory_example(seq, cfg, gt))
        elif mode == "single_sweep":
            labels = gt if gt is not None else seq.gt_labels
            out.extend(single_sweep_examples(seq, cfg, labels, associations(seq)))
        else:
            raise ValueError(f"mode {mode!r} is not trainable")
    return out


def build_cases(seqs: list[LabeledSequence], cfg: Config, mode: str) -> list[Case]:
    return [build_case(seq, cfg, mode, sequence_gt(seq, cfg)) for seq in seqs]


def prepare_split(seqs, cfg: Config, train_modes=(), case_modes=()):
    """Stream sequences into training examples and evaluation cases.

    Sequences carry full label images, so each one is reduced to its cached
    inputs and dropped before the next is simulated or loaded.
    Returns ({mode: [Example]}, {mode: [Case]}).
    """
    examples = {m: [] for m in train_modes}
    cases = {m: [] for m in case_modes}
    for seq in seqs:
        gt = sequence_gt(seq, cfg)
        assocs = associations(seq)
        state = None
        if "memory" in train_modes or "memory" in case_modes:
            state = replay_memory(seq, cfg, assocs)
        for m in train_modes:
            if m == "memory":
                examples[m].append(memory_example(seq, cfg, gt, state))
            elif m == "single_sweep":
                labels = gt if gt is not None else seq.gt_labels
                examples[m].extend(single_sweep_examples(seq, cfg, labels, assocs))
            else:
                raise ValueError(f"mode {m!r} is not trainable")
        if case_modes:
            ev = evaluation_set(seq, gt)
            for m in case_modes:
                cases[m].append(build_case(seq, cfg, m, gt, assocs=assocs, state=state, ev=ev))
            ev.compact()
        log.debug("prepared %s", seq.name)
        del seq
    return examples, cases


def score_cases(cases: list[Case], net: CCNetwork | None, cfg: Config, model_name: str = "model") -> tuple[EvalReport, list[np.ndarray]]:
    counter = IoUCounter(3, tuple(cfg.eval.bin_edges))
    preds = []
    per_seq = []
    for case in cases:
        pred = predict_case(case, net)
        preds.append(pred)
        counter.add(pred, case.eval_set.gt, case.eval_set.distance)
        if cfg.eval.pooling == "per_sequence":
            c = IoUCounter(3)
            c.add(pred, case.eval_set.gt)
            per_seq.append(c.mean_iou())
    mean = None
    if cfg.eval.pooling == "per_sequence":
        v = np.array(per_seq)
        mean = float(np.nanmean(v)) if np.isfinite(v).any() else float("nan")
    return EvalReport.from_counter(model_name, counter, len(cases), mean_override=mean), preds


def train_model(cfg: Config, train_seqs: list[LabeledSequence], val_seqs: list[LabeledSequence], mode: str = "memory", progress=None,
                examples: list[Example] | None = None, val_cases: list[Case] | None = None):
    """(network, history).  Feature statistics come from the training examples."""
    examples = examples if examples is not None else training_examples(train_seqs, cfg, mode)
    val_cases = val_cases if val_cases is not None else build_cases(val_seqs, cfg, mode)
    net = CCNetwork.create(net_config(cfg), seed=cfg.seed)
    net.stats = compute_stats(examples)
    net.meta["mode"] = mode

    def validate(n):
        return score_cases(val_cases, n, cfg)[0].mean_iou if val_cases else float("nan")

    history = fit(net, examples, validate if val_cases else None, train_config(cfg), progress)
    return net, history


def evaluate(cfg: Config, net: CCNetwork | None, seqs: list[LabeledSequence], mode: str, model_name: str | None = None):
    _, cases = prepare_split(seqs, cfg, (), (mode,))
    cases = cases[mode]
    return score_cases(cases, net, cfg, model_name or mode)

