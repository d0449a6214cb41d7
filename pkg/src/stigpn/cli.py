"""Command line: synth-gen, train, eval, export-graph."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ABLATIONS, PRESETS, STREAMS, ConfigError, TrainConfig
from .data import (
    ACTIVITIES,
    AFFORDANCES,
    ORDERING_ACTIVITIES,
    DataError,
    SyntheticConfig,
    load_dataset,
    load_visual_features,
    save_dataset,
    synth_generate,
)
from .features import collate
from .graph import adjacency_dot, adjacency_json
from .model import STIGPN, canonical_graph
from .numkernel.checkpoint import CheckpointError
from .training import evaluate, fit, load_checkpoint, metrics_report, prepare

log = logging.getLogger("stigpn")

TASKS = {"motion": ACTIVITIES, "ordering": ORDERING_ACTIVITIES}


class CLIError(Exception):
    pass


def _load_data(path: str, what: str = "data"):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise CLIError(f"cannot read {what} file {path}: {exc}") from exc


def _config_from_args(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.preset is not None:
        overrides["preset"] = args.preset
    if args.ablation:
        overrides["ablation"] = tuple(args.ablation)
    if args.stream is not None:
        overrides["stream"] = args.stream
    if args.no_norm:
        overrides["use_norm"] = False
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    return replace(cfg, **overrides) if overrides else cfg


def check_class_counts(cfg: TrainConfig, samples) -> None:
    """Labels and class ids in ``samples`` must fit the configured heads and embedding."""
    for s in samples:
        if s.activity is not None and not 0 <= s.activity < cfg.num_activities:
            raise CLIError(f"video {s.video_id}: activity {s.activity} outside the model's "
                           f"{cfg.num_activities} classes")
        for m, inst in enumerate(s.instances):
            if not 0 <= inst.class_id < cfg.num_object_classes:
                raise CLIError(f"video {s.video_id}: instance {m} class id {inst.class_id} outside the "
                               f"model's {cfg.num_object_classes} object classes")
            if inst.affordance is not None and not 0 <= inst.affordance < cfg.num_affordances:
                raise CLIError(f"video {s.video_id}: instance {m} affordance {inst.affordance} outside the "
                               f"model's {cfg.num_affordances} classes")


def _visual(args):
    return load_visual_features(args.visual) if getattr(args, "visual", None) else None


# ---- commands -------------------------------------------------------------------------

def cmd_synth_gen(args) -> int:
    seed = 0 if args.seed is None else args.seed
    cfg = SyntheticConfig(activities=TASKS[args.task], samples_per_class=args.samples_per_class, seed=seed)
    samples = synth_generate(cfg)
    save_dataset(args.out, samples)
    print(f"wrote {len(samples)} clips to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    train = _load_data(args.data)
    if not train:
        raise CLIError(f"{args.data} holds no clips")
    val = _load_data(args.val, "validation") if args.val else None
    check_class_counts(cfg, train + (val or []))
    visual = _visual(args)
    train = prepare(train, cfg, visual)
    val = prepare(val, cfg, visual) if val else None
    ckpt = Path(args.checkpoint)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".csv")
    result = fit(STIGPN(cfg), train, val, log_path=log_path, checkpoint_path=ckpt)
    print(f"trained {cfg.epochs} epochs; checkpoint from epoch {result.best_epoch} -> {ckpt}; loss log -> {log_path}")
    return 0


def cmd_eval(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    cfg = model.config
    samples = _load_data(args.data)
    if not samples:
        raise CLIError(f"{args.data} holds no clips")
    check_class_counts(cfg, samples)
    samples = prepare(samples, cfg, _visual(args))
    report = metrics_report(samples, evaluate(model, samples, cfg.batch_size * 4))
    text = json.dumps(report.to_dict(), indent=1)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    names = ACTIVITIES if cfg.num_activities == len(ACTIVITIES) else None
    print(report.table(names, AFFORDANCES if cfg.num_affordances == len(AFFORDANCES) else None))
    return 0


def cmd_export_graph(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    cfg = model.config
    samples = _load_data(args.data)
    match = [s for s in samples if s.video_id == args.video_id]
    if not match:
        raise CLIError(f"video {args.video_id!r} not found in {args.data}")
    check_class_counts(cfg, match)
    sample = prepare(match, cfg, _visual(args))[0]
    streams = model.streams()
    name = args.graph_stream or ("semantic" if "semantic" in streams else "visual")
    if name not in streams:
        raise CLIError(f"checkpoint has no {name} stream")
    batch = collate([sample])
    model.eval()
    out = model.forward(batch)[name]
    graph = canonical_graph(sample.num_frames, sample.num_instances)
    intra, inter = out.adjacency.intra.data[0], out.adjacency.inter.data[0]
    order = batch.order[0]
    labels = [("human" if sample.instances[m].is_human else f"obj{m}") for m in order]
    prefix = Path(args.out)
    prefix.with_suffix(".dot").write_text(adjacency_dot(sample.video_id, graph, intra, inter, args.top_n, labels))
    prefix.with_suffix(".json").write_text(adjacency_json(sample.video_id, graph, intra, inter) + "\n")
    print(f"wrote {prefix.with_suffix('.dot')} and {prefix.with_suffix('.json')} ({name} stream)")
    return 0


# ---- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stigpn", description="Spatio-temporal interaction graph parsing networks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate a synthetic tracklet dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--samples-per-class", type=int, default=50)
    g.add_argument("--task", choices=sorted(TASKS), default="motion")
    g.set_defaults(func=cmd_synth_gen)

    t = sub.add_parser("train", help="train a model and write checkpoint + loss CSV")
    t.add_argument("--data", required=True)
    t.add_argument("--val", help="validation set; the best-macro-F1 epoch is checkpointed")
    t.add_argument("--checkpoint", required=True)
    t.add_argument("--log", help="loss CSV path (default: checkpoint path with .csv)")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--preset", choices=sorted(PRESETS))
    t.add_argument("--ablation", action="append", choices=ABLATIONS)
    t.add_argument("--stream", choices=STREAMS)
    t.add_argument("--no-norm", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--visual", help="precomputed visual feature file")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint; prints metrics JSON and a table")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", help="write metrics JSON here instead of stdout")
    e.add_argument("--visual")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-graph", help="write a clip's parsed graphs as DOT and JSON")
    x.add_argument("--data", required=True)
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--video-id", required=True)
    x.add_argument("--out", required=True, help="output prefix; .dot and .json are appended")
    x.add_argument("--top-n", type=int, default=3)
    x.add_argument("--stream", dest="graph_stream", choices=("visual", "semantic"))
    x.add_argument("--visual")
    x.set_defaults(func=cmd_export_graph)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (CLIError, ConfigError, DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
