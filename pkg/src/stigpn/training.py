"""Data preparation, minibatching, the training loop, evaluation and checkpoints."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import TrainConfig
from .data import SyntheticVisual, VideoSample, attach_visual, uniform_sample_frames
from .features import collate
from .metrics import MetricsReport, classification_report
from .model import STIGPN, VideoPrediction
from .numkernel import AdamState, Tape, adam_step, backward, checkpoint

log = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "lr", "loss", "loss_visual", "loss_visual_h", "loss_visual_o",
                "loss_semantic", "loss_semantic_h", "loss_semantic_o",
                "val_activity_f1", "val_affordance_f1"]


def prepare(samples: Sequence[VideoSample], cfg: TrainConfig,
            visual: tuple[int, dict[str, np.ndarray]] | None = None) -> list[VideoSample]:
    """Resample every clip to ``cfg.frames`` and attach raw visual vectors.

    Without a precomputed feature file, visual vectors come from the seeded
    class-prototype generator (only when a visual stream is configured).
    """
    out = [uniform_sample_frames(s, cfg.frames) for s in samples]
    if cfg.stream == "semantic":
        return out
    dims = cfg.resolved_dims
    if visual is not None:
        dim, videos = visual
        if dim != dims.raw:
            raise ValueError(f"visual feature file has dim {dim}, config expects {dims.raw}")
        attach_visual(out, dim, videos)
    else:
        SyntheticVisual(dims.raw, cfg.num_object_classes, cfg.visual_seed, cfg.visual_noise).attach(out)
    return out


def make_batches(samples: Sequence[VideoSample], batch_size: int,
                 rng: np.random.Generator | None = None) -> list[list[int]]:
    """Index batches whose clips share (T, M); shuffled when ``rng`` is given."""
    groups: dict[tuple[int, int], list[int]] = {}
    for i, s in enumerate(samples):
        groups.setdefault((s.num_frames, s.num_instances), []).append(i)
    batches = []
    for key in sorted(groups):
        idx = groups[key]
        if rng is not None:
            idx = [idx[j] for j in rng.permutation(len(idx))]
        batches += [idx[k:k + batch_size] for k in range(0, len(idx), batch_size)]
    if rng is not None:
        batches = [batches[j] for j in rng.permutation(len(batches))]
    return batches


def evaluate(model: STIGPN, samples: Sequence[VideoSample], batch_size: int = 32) -> list[VideoPrediction]:
    """Fused predictions in dataset order (model switched to evaluation mode)."""
    was_training = model.training
    model.eval()
    preds: dict[int, VideoPrediction] = {}
    try:
        for idx in make_batches(samples, batch_size):
            batch = collate([samples[i] for i in idx])
            for i, p in zip(idx, model.predict(batch)):
                preds[i] = p
    finally:
        model.train(was_training)
    return [preds[i] for i in range(len(samples))]


def metrics_report(samples: Sequence[VideoSample], preds: Sequence[VideoPrediction]) -> MetricsReport:
    act_truth = [s.activity for s in samples]
    if any(a is None for a in act_truth):
        raise ValueError("evaluation needs activity labels on every clip")
    activity = classification_report(act_truth, np.stack([p.activity for p in preds]))
    aff_truth, aff_probs = [], []
    for s, p in zip(samples, preds):
        for m, inst in enumerate(s.instances):
            if not inst.is_human and inst.affordance is not None:
                aff_truth.append(inst.affordance)
                aff_probs.append(p.affordance[m])
    affordance = classification_report(aff_truth, np.stack(aff_probs)) if aff_truth else None
    return MetricsReport(activity, affordance)


# ---- checkpoints ------------------------------------------------------------------

def save_checkpoint(path: str | Path, model: STIGPN, state: AdamState | None = None,
                    extra: dict | None = None) -> None:
    tensors = dict(model.state_dict())
    meta = {"config": model.config.to_dict()}
    if state is not None:
        for name, m in state.first_moment.items():
            tensors[f"adam.m.{name}"] = m
            tensors[f"adam.v.{name}"] = state.second_moment[name]
        meta["adam"] = {"learning_rate": state.learning_rate, "decay_factor": state.decay_factor,
                        "decay_interval": state.decay_interval, "step": state.step, "epoch": state.epoch}
    meta.update(extra or {})
    checkpoint.save(path, tensors, meta)


def load_checkpoint(path: str | Path) -> tuple[STIGPN, AdamState | None, dict]:
    tensors, meta = checkpoint.load(path)
    cfg = TrainConfig.from_dict(meta["config"])
    model = STIGPN(cfg)
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("adam.")})
    state = None
    if "adam" in meta:
        a = meta["adam"]
        state = AdamState(a["learning_rate"], a["decay_factor"], a["decay_interval"], a["step"], a["epoch"])
        for k, v in tensors.items():
            if k.startswith("adam.m."):
                state.first_moment[k[len("adam.m."):]] = v
            elif k.startswith("adam.v."):
                state.second_moment[k[len("adam.v."):]] = v
    model.eval()
    return model, state, meta


# ---- training loop --------------------------------------------------------------------

@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_f1: float = float("-inf")


def train_epoch(model: STIGPN, samples: Sequence[VideoSample], state: AdamState, cfg: TrainConfig,
                rng: np.random.Generator) -> dict[str, float]:
    model.train()
    params = model.named_parameters()
    sums: dict[str, float] = {}
    for idx in make_batches(samples, cfg.batch_size, rng):
        batch = collate([samples[i] for i in idx])
        model.zero_grad()
        with Tape():
            report = model.loss(batch)
        backward(report.total)
        adam_step(params, {k: p.grad for k, p in params.items()}, state)
        for k, v in report.row().items():
            sums[k] = sums.get(k, 0.0) + v * len(idx)
    n = max(len(samples), 1)
    return {k: v / n for k, v in sums.items()}


def fit(model: STIGPN, train: Sequence[VideoSample], val: Sequence[VideoSample] | None = None,
        log_path: str | Path | None = None, checkpoint_path: str | Path | None = None,
        epochs: int | None = None) -> TrainResult:
    """Train for ``cfg.epochs``; keep the checkpoint with the best validation activity macro F1.

    Without a validation set the final epoch is checkpointed.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    state = AdamState(cfg.learning_rate, cfg.decay_factor, cfg.decay_interval)
    rng = np.random.default_rng([cfg.seed, 7])
    result = TrainResult()
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=LOSS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for epoch in range(epochs):
        lr = state.effective_lr
        row = {"epoch": epoch, "lr": lr, **train_epoch(model, train, state, cfg, rng)}
        state.end_epoch()
        row["val_activity_f1"] = row["val_affordance_f1"] = ""
        improved = False
        if val:
            rep = metrics_report(val, evaluate(model, val, cfg.batch_size * 4))
            row["val_activity_f1"] = rep.activity.macro_f1
            row["val_affordance_f1"] = rep.affordance.macro_f1 if rep.affordance else ""
            if rep.activity.macro_f1 > result.best_f1:
                result.best_f1, result.best_epoch, improved = rep.activity.macro_f1, epoch, True
        elif epoch == epochs - 1:
            result.best_epoch, improved = epoch, True
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        result.history.append(row)
        if improved and checkpoint_path is not None:
            save_checkpoint(checkpoint_path, model, state, {"epoch": epoch, "val_activity_f1": row["val_activity_f1"]})
        if log_path is not None:
            Path(log_path).write_text(buf.getvalue())
        log.info("epoch %d loss %.5f val_f1 %s", epoch, row["loss"], row["val_activity_f1"])
    return result
