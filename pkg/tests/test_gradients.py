"""Every-coordinate finite-difference check of the full two-stream model at reduced width."""

import numpy as np

from gradcheck import ZERO_FLOOR, numeric_grad, rel_error
from stigpn.config import TrainConfig
from stigpn.data import SyntheticConfig, SyntheticVisual, synth_generate
from stigpn.features import collate
from stigpn.model import STIGPN
from stigpn.numkernel import Tape, backward

TINY = {"raw": 5, "visual": 4, "spatial": 4, "semantic": 3, "evolve": 6, "fuse": 6, "head_hidden": 5, "head_mid": 3}


def _check(cfg):
    model = STIGPN(cfg)
    clips = synth_generate(SyntheticConfig(samples_per_class=1, objects=(2, 2), frames=(3, 3), seed=4))[:3]
    SyntheticVisual(cfg.resolved_dims.raw, cfg.num_object_classes).attach(clips)
    batch = collate(clips)
    model.zero_grad()
    with Tape():
        rep = model.loss(batch)
    backward(rep.total)
    errors = {}
    for name, p in model.named_parameters().items():
        num = numeric_grad(lambda: model.loss(batch).total.item(), p.data)
        errors[name] = rel_error(p.grad, num, ZERO_FLOOR)
    return errors


def test_every_coordinate_two_stream():
    errors = _check(TrainConfig(seed=2, dims=TINY))
    bad = {k: v for k, v in errors.items() if v >= 1e-4}
    assert not bad, bad


def test_every_coordinate_ablations():
    for abl in (("no-te",), ("intra-only",), ("inter-only",), ("dense-baseline",)):
        errors = _check(TrainConfig(seed=3, dims=TINY, stream="semantic", ablation=abl))
        bad = {k: v for k, v in errors.items() if v >= 1e-4}
        assert not bad, (abl, bad)


def test_every_coordinate_without_norm():
    errors = _check(TrainConfig(seed=5, dims=TINY, use_norm=False, loss_weight=0.5))
    assert max(errors.values()) < 1e-4
