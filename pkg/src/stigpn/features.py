"""Per-instance, per-frame input features and the two stream inputs built from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import Dims
from .data import DataError, VideoSample
from .numkernel import MLP, Embedding, Linear, Module, ShapeError, Tensor, concat


def spatial_quad(boxes, width: float, height: float) -> np.ndarray:
    """Pixel ``[x, y, w, h]`` boxes to normalised ``[x_c, y_c, w, h]`` quadruples in [0, 1].

    Boxes are clipped to the image first.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"image dimensions must be positive, got {width}x{height}")
    b = np.asarray(boxes, dtype=np.float64)
    x0 = np.clip(b[..., 0], 0, width)
    y0 = np.clip(b[..., 1], 0, height)
    x1 = np.clip(b[..., 0] + np.maximum(b[..., 2], 0), 0, width)
    y1 = np.clip(b[..., 1] + np.maximum(b[..., 3], 0), 0, height)
    return np.stack([(x0 + x1) / (2 * width), (y0 + y1) / (2 * height),
                     (x1 - x0) / width, (y1 - y0) / height], axis=-1)


class SpatialEncoder(Module):
    """Linear(d/2)-BatchNorm-ReLU-Linear(d)-BatchNorm-ReLU over quadruples."""

    def __init__(self, d_out: int, rng: np.random.Generator, use_norm: bool = True):
        self.mlp = MLP([4, d_out // 2, d_out], rng, use_norm=use_norm)
        self.d_out = d_out

    def __call__(self, quads) -> Tensor:
        return self.mlp(quads if isinstance(quads, Tensor) else Tensor(np.asarray(quads, dtype=np.float64)))

    def encode(self, boxes, width: float, height: float) -> Tensor:
        return self(spatial_quad(boxes, width, height))


class SemanticTable(Embedding):
    def lookup(self, class_ids) -> Tensor:
        ids = np.asarray(class_ids, dtype=np.int64)
        n = self.num_embeddings
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise IndexError(f"unknown class id(s) {ids[(ids < 0) | (ids >= n)].tolist()}; table has {n} rows")
        return self(ids)


class VisualProjection(Linear):
    def project(self, raw) -> Tensor:
        raw = raw if isinstance(raw, Tensor) else Tensor(np.asarray(raw, dtype=np.float64))
        d_raw = self.weight.shape[0]
        if raw.shape[-1] != d_raw:
            raise ShapeError(f"visual vector length {raw.shape[-1]} != expected {d_raw}")
        return self(raw)


@dataclass
class Batch:
    """Clips sharing (T, M), with the human moved to instance slot 0."""

    samples: list[VideoSample]
    order: np.ndarray          # (B, M): original instance index held in each slot
    quads: np.ndarray          # (B, T, M, 4)
    class_ids: np.ndarray      # (B, M)
    visual: np.ndarray | None  # (B, T, M, d_raw)
    activity: np.ndarray       # (B,), -1 where unlabelled
    affordance: np.ndarray     # (B, M), -1 where unlabelled or human

    @property
    def shape(self) -> tuple[int, int, int]:
        B, T, M, _ = self.quads.shape
        return B, T, M


def canonical_order(sample: VideoSample) -> list[int]:
    """Human first, then objects sorted by their own content.

    Every instance permutation of a clip yields the same canonical arrangement,
    which makes predictions exactly (bitwise) equivariant to object order.
    """
    h = sample.human_index
    objs = [m for m in range(sample.num_instances) if m != h]
    keys = []
    for m in objs:
        inst = sample.instances[m]
        parts = [np.array([inst.class_id], dtype=np.float64), inst.boxes.ravel()]
        if inst.visual is not None:
            parts.append(inst.visual.ravel())
        keys.append(np.concatenate(parts))
    key_mat = np.array(keys)
    # lexsort treats the last key as primary
    ranked = np.lexsort(key_mat.T[::-1]) if len(objs) > 1 else np.arange(len(objs))
    return [h] + [objs[i] for i in ranked]


def collate(samples: Sequence[VideoSample], canonical: bool = True) -> Batch:
    """Stack clips of equal (T, M); ``canonical`` reorders instances per :func:`canonical_order`."""
    if not samples:
        raise ValueError("empty batch")
    T, M = samples[0].num_frames, samples[0].num_instances
    B = len(samples)
    order = np.zeros((B, M), dtype=np.int64)
    quads = np.zeros((B, T, M, 4))
    class_ids = np.zeros((B, M), dtype=np.int64)
    has_visual = all(inst.visual is not None for s in samples for inst in s.instances)
    visual = None
    activity = np.full(B, -1, dtype=np.int64)
    affordance = np.full((B, M), -1, dtype=np.int64)
    for b, s in enumerate(samples):
        if s.num_frames != T or s.num_instances != M:
            raise DataError(f"video {s.video_id}: batch needs T={T}, M={M}, got "
                            f"T={s.num_frames}, M={s.num_instances}")
        perm = canonical_order(s) if canonical else list(range(M))
        order[b] = perm
        for slot, m in enumerate(perm):
            inst = s.instances[m]
            if inst.boxes.shape[0] != T:
                raise DataError(f"video {s.video_id}: instance {m} has no box at frame {inst.boxes.shape[0]}")
            if has_visual and inst.visual.shape[0] != T:
                raise DataError(f"video {s.video_id}: instance {m} has no visual vector at frame "
                                f"{inst.visual.shape[0]}")
            quads[b, :, slot] = spatial_quad(inst.boxes, s.width, s.height)
            class_ids[b, slot] = inst.class_id
            if inst.affordance is not None and not inst.is_human:
                affordance[b, slot] = inst.affordance
            if has_visual:
                if visual is None:
                    visual = np.zeros((B, T, M, inst.visual.shape[1]))
                visual[b, :, slot] = inst.visual
        if s.activity is not None:
            activity[b] = s.activity
    return Batch(list(samples), order, quads, class_ids, visual, activity, affordance)


@dataclass
class StreamInputs:
    visual_spatial: Tensor | None    # (B, T, M, d_vis + d_spa)
    spatial_semantic: Tensor | None  # (B, T, M, d_spa + d_sem)


class FeatureEncoder(Module):
    """Learnable feature front end shared by both streams."""

    def __init__(self, dims: Dims, num_classes: int, rng: np.random.Generator, use_norm: bool = True,
                 need_visual: bool = True, need_semantic: bool = True):
        self.spatial = SpatialEncoder(dims.spatial, rng, use_norm)
        self.semantic = SemanticTable(num_classes, dims.semantic, rng) if need_semantic else None
        self.visual = VisualProjection(dims.raw, dims.visual, rng) if need_visual else None

    def __call__(self, batch: Batch) -> StreamInputs:
        return self.assemble(batch)

    def assemble(self, batch: Batch) -> StreamInputs:
        B, T, M = batch.shape
        spa = self.spatial(batch.quads)
        vis_spa = sem_spa = None
        if self.visual is not None:
            if batch.visual is None:
                raise DataError("visual stream requested but clips carry no visual features")
            vis = self.visual.project(batch.visual)
            vis_spa = concat([vis, spa], axis=-1)
        if self.semantic is not None:
            ids = np.broadcast_to(batch.class_ids[:, None, :], (B, T, M))
            emb = self.semantic.lookup(ids)                                # (B, T, M, d_sem)
            sem_spa = concat([spa, emb], axis=-1)
        return StreamInputs(vis_spa, sem_spa)
