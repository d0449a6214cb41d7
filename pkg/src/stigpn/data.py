"""Tracklet datasets: JSON ingestion, frame sampling, splitting and a synthetic scene generator.

Tracklet file layout (a JSON array, one object per clip)::

    {"video_id": str, "width": int, "height": int, "activity": int,
     "instances": [{"class_id": int, "is_human": bool, "affordance": int | null,
                    "boxes": [[x, y, w, h], ...]}]}

Boxes are pixel rectangles with a top-left corner, one per frame.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class InstanceTrack:
    class_id: int
    is_human: bool
    boxes: np.ndarray                     # (L, 4) pixel [x, y, w, h]
    affordance: int | None = None
    visual: np.ndarray | None = None      # (L, d_raw) when attached


@dataclass
class VideoSample:
    video_id: str
    width: int
    height: int
    instances: list[InstanceTrack]
    activity: int | None = None
    # original frame index of every kept frame; identity until resampled
    frames: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.frames and self.instances:
            self.frames = list(range(len(self.instances[0].boxes)))

    @property
    def num_frames(self) -> int:
        return len(self.frames)

    @property
    def num_instances(self) -> int:
        return len(self.instances)

    @property
    def human_index(self) -> int:
        return next(i for i, inst in enumerate(self.instances) if inst.is_human)

    def permuted(self, order: Sequence[int]) -> "VideoSample":
        return replace(self, instances=[self.instances[i] for i in order])


# ---- validation / (de)serialisation --------------------------------------------

def validate(sample: VideoSample) -> None:
    vid = sample.video_id
    if sample.width <= 0 or sample.height <= 0:
        raise DataError(f"video {vid}: image size must be positive")
    if len(sample.instances) < 2:
        raise DataError(f"video {vid}: need one human and at least one object")
    humans = [m for m, inst in enumerate(sample.instances) if inst.is_human]
    if len(humans) != 1:
        raise DataError(f"video {vid}: expected exactly one human track, found {len(humans)} "
                        f"(instances {humans})")
    n = len(sample.frames)
    for m, inst in enumerate(sample.instances):
        if inst.boxes.shape != (n, 4):
            raise DataError(f"video {vid}: instance {m} has {inst.boxes.shape[0]} boxes, expected {n}")
        if inst.visual is not None and inst.visual.shape[0] != n:
            raise DataError(f"video {vid}: instance {m} has {inst.visual.shape[0]} visual vectors, "
                            f"expected {n}")


def sample_from_dict(d: dict) -> VideoSample:
    vid = d.get("video_id", "?")
    try:
        raw_instances = d["instances"]
        width, height = int(d["width"]), int(d["height"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"video {vid}: malformed record ({exc})") from exc
    n_frames = max((len(inst.get("boxes") or []) for inst in raw_instances), default=0)
    instances = []
    for m, inst in enumerate(raw_instances):
        boxes = inst.get("boxes") or []
        for t in range(n_frames):
            box = boxes[t] if t < len(boxes) else None
            if box is None or len(box) != 4 or any(v is None for v in box):
                raise DataError(f"video {vid}: missing box at frame {t}, instance {m}")
        affordance = inst.get("affordance")
        instances.append(InstanceTrack(
            class_id=int(inst["class_id"]),
            is_human=bool(inst["is_human"]),
            boxes=np.asarray(boxes, dtype=np.float64).reshape(n_frames, 4),
            affordance=None if affordance is None else int(affordance),
        ))
    activity = d.get("activity")
    sample = VideoSample(video_id=str(vid), width=width, height=height, instances=instances,
                         activity=None if activity is None else int(activity))
    validate(sample)
    return sample


def sample_to_dict(sample: VideoSample) -> dict:
    return {
        "video_id": sample.video_id,
        "width": sample.width,
        "height": sample.height,
        "activity": sample.activity,
        "instances": [
            {"class_id": inst.class_id, "is_human": inst.is_human, "affordance": inst.affordance,
             "boxes": inst.boxes.tolist()}
            for inst in sample.instances
        ],
    }


def load_dataset(path: str | Path) -> list[VideoSample]:
    text = Path(path).read_text()
    if not text.strip():
        return []
    records = json.loads(text)
    if not isinstance(records, list):
        raise DataError(f"{path}: expected a JSON array of clips")
    samples = [sample_from_dict(r) for r in records]
    seen = set()
    for s in samples:
        if s.video_id in seen:
            raise DataError(f"duplicate video_id {s.video_id!r}")
        seen.add(s.video_id)
    return samples


def save_dataset(path: str | Path, samples: Sequence[VideoSample]) -> None:
    Path(path).write_text(json.dumps([sample_to_dict(s) for s in samples]))


# ---- visual sidecar -----------------------------------------------------------------

VISUAL_FORMAT = "stigpn-visual"


def load_visual_features(path: str | Path) -> tuple[int, dict[str, np.ndarray]]:
    """Read a precomputed feature file.

    Layout: ``{"format": "stigpn-visual", "version": 1, "dim": d_raw,
    "videos": {video_id: [[vector for each instance] for each frame]}}``.
    Returns ``(dim, {video_id: array (L, M, dim)})``.
    """
    body = json.loads(Path(path).read_text())
    if body.get("format") != VISUAL_FORMAT:
        raise DataError(f"{path}: not a visual feature file")
    dim = int(body["dim"])
    out = {}
    for vid, frames in body["videos"].items():
        arr = np.asarray(frames, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != dim:
            raise DataError(f"{path}: video {vid} features have shape {arr.shape}, expected (L, M, {dim})")
        out[vid] = arr
    return dim, out


def save_visual_features(path: str | Path, dim: int, videos: dict[str, np.ndarray]) -> None:
    body = {"format": VISUAL_FORMAT, "version": 1, "dim": dim,
            "videos": {vid: np.asarray(a).tolist() for vid, a in videos.items()}}
    Path(path).write_text(json.dumps(body))


def attach_visual(samples: Sequence[VideoSample], dim: int, videos: dict[str, np.ndarray]) -> None:
    for s in samples:
        arr = videos.get(s.video_id)
        if arr is None:
            raise DataError(f"no visual features for video {s.video_id}")
        for m, inst in enumerate(s.instances):
            for t in s.frames:
                if t >= arr.shape[0] or m >= arr.shape[1]:
                    raise DataError(f"video {s.video_id}: missing visual vector at frame {t}, instance {m}")
            inst.visual = arr[s.frames, m, :].copy()


# ---- sampling / splitting -------------------------------------------------------------

def sample_indices(length: int, T: int) -> list[int]:
    if length < 1:
        raise DataError("cannot sample frames from an empty clip")
    return [(i * length) // T for i in range(T)]


def uniform_sample_frames(sample: VideoSample, T: int) -> VideoSample:
    idx = sample_indices(sample.num_frames, T)
    instances = [
        replace(inst, boxes=inst.boxes[idx],
                visual=None if inst.visual is None else inst.visual[idx])
        for inst in sample.instances
    ]
    return replace(sample, instances=instances, frames=[sample.frames[i] for i in idx])


def dataset_split(samples: Sequence[VideoSample], ratio: float, seed: int
                  ) -> tuple[list[VideoSample], list[VideoSample]]:
    """Seeded, class-stratified split; per class ``round(ratio * n)`` go to train."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    by_class: dict = {}
    for i, s in enumerate(samples):
        by_class.setdefault(s.activity, []).append(i)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in sorted(by_class, key=lambda c: (c is None, c)):
        idx = by_class[cls]
        if len(idx) < 2:
            raise DataError(f"class {cls} has {len(idx)} sample(s); stratified split needs at least 2")
        order = rng.permutation(len(idx))
        k = min(max(int(round(ratio * len(idx))), 1), len(idx) - 1)
        train_idx += [idx[j] for j in order[:k]]
        test_idx += [idx[j] for j in order[k:]]
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(test_idx)]


# ---- synthetic scenes ---------------------------------------------------------------------

ACTIVITIES = ("idle", "reach", "move", "place")
ORDERING_ACTIVITIES = ("move_then_stop", "stop_then_move")
AFFORDANCES = ("stationary", "reachable", "movable", "placeable")
TARGET_AFFORDANCE = {"reach": 1, "move": 2, "place": 3, "move_then_stop": 2, "stop_then_move": 2}
HUMAN_CLASS = 0


@dataclass(frozen=True)
class SyntheticConfig:
    activities: tuple[str, ...] = ACTIVITIES
    samples_per_class: int = 50
    objects: tuple[int, int] = (2, 3)
    frames: tuple[int, int] = (12, 24)
    object_kinds: int = 5
    width: int = 640
    height: int = 480
    jitter: float = 1.5          # box-center noise, pixels
    size_jitter: float = 1.0     # box-extent noise, pixels
    seed: int = 0
    shuffle_instances: bool = True


def _smooth_path(rng: np.random.Generator, steps: int, speed: float) -> np.ndarray:
    """Per-step displacements with wavering speed and heading; (steps, 2)."""
    heading = rng.uniform(0, 2 * math.pi)
    phase = rng.uniform(0, 2 * math.pi, size=2)
    t = np.arange(steps)
    spd = speed * (1.0 + 0.3 * np.sin(2 * math.pi * t / 7.0 + phase[0]))
    ang = heading + 0.5 * np.sin(2 * math.pi * t / 9.0 + phase[1])
    return np.stack([spd * np.cos(ang), spd * np.sin(ang)], axis=1)


def _ease(n: int) -> np.ndarray:
    """Fractions 0..1 over ``n`` frames with smooth start and stop."""
    if n <= 1:
        return np.ones(n)
    u = np.linspace(0.0, 1.0, n)
    return 0.5 - 0.5 * np.cos(math.pi * u)


def _place_objects(rng, k, cfg) -> np.ndarray:
    centers: list[np.ndarray] = []
    while len(centers) < k:
        c = np.array([rng.uniform(180, cfg.width - 180), rng.uniform(150, cfg.height - 150)])
        if all(np.linalg.norm(c - o) > 90 for o in centers):
            centers.append(c)
    return np.array(centers)


def _scene(activity: str, L: int, objs: np.ndarray, target: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Clean center trajectories: hand (L, 2) and objects (L, K, 2)."""
    K = len(objs)
    obj_path = np.repeat(objs[None], L, axis=0)
    grasp = objs[target] + np.array([0.0, -25.0])
    if activity == "idle":
        start = objs.mean(axis=0) + rng.uniform(-60, 60, size=2) + np.array([0.0, 120.0])
        vel = np.zeros(2)
        hand = np.empty((L, 2))
        pos = start
        for t in range(L):
            vel = 0.7 * vel + rng.normal(scale=2.0, size=2)
            pos = pos + vel
            hand[t] = pos
        return hand, obj_path
    if activity == "reach":
        away = rng.normal(size=2)
        away /= np.linalg.norm(away)
        start = grasp + away * rng.uniform(150, 200)
        arrive = min(L, max(2, int(round(rng.uniform(0.5, 0.7) * L))))
        frac = _ease(arrive)
        hand = np.empty((L, 2))
        hand[:arrive] = start + (grasp - start) * frac[:, None]
        hand[arrive:] = grasp
        # the touched object is nudged along the approach direction
        nudge = -away * rng.uniform(10, 15)
        contact = L - arrive
        obj_path[arrive:, target] += nudge * _ease(contact)[:, None] if contact else 0.0
        hand[arrive:] += nudge * _ease(contact)[:, None] if contact else 0.0
        return hand, obj_path
    if activity in ("move", "place", "move_then_stop", "stop_then_move"):
        moving = np.ones(L, dtype=bool)
        if activity == "place":
            moving[max(2, int(round(rng.uniform(0.4, 0.6) * L))):] = False
        elif activity == "move_then_stop":
            moving[L // 2:] = False
        elif activity == "stop_then_move":
            moving[: L // 2] = False
        steps = _smooth_path(rng, L, rng.uniform(8, 12)) * moving[:, None]
        steps[0] = 0.0
        offset = np.cumsum(steps, axis=0)
        obj_path[:, target] = objs[target] + offset
        hand = grasp + offset
        return hand, obj_path
    raise ValueError(f"unknown activity {activity!r}")


def synth_generate(cfg: SyntheticConfig, *, clean: bool = False) -> list[VideoSample]:
    """Seeded scenes, ``samples_per_class`` for each activity in the roster.

    ``clean=True`` drops the box jitter; the clean and noisy datasets share
    every other random draw, so they differ exactly by the noise.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    noise_rng = np.random.default_rng([cfg.seed, 1])
    samples = []
    for label, activity in enumerate(cfg.activities):
        for i in range(cfg.samples_per_class):
            K = int(rng.integers(cfg.objects[0], cfg.objects[1] + 1))
            L = int(rng.integers(cfg.frames[0], cfg.frames[1] + 1))
            objs = _place_objects(rng, K, cfg)
            target = int(rng.integers(K))
            kinds = rng.integers(1, cfg.object_kinds + 1, size=K)
            sizes = rng.uniform(30, 60, size=(K, 2))
            hand, obj_path = _scene(activity, L, objs, target, rng)
            order = rng.permutation(K + 1) if cfg.shuffle_instances else np.arange(K + 1)

            centers = np.concatenate([hand[:, None], obj_path], axis=1)       # (L, K+1, 2)
            extents = np.concatenate([np.array([[40.0, 40.0]]), sizes])[None].repeat(L, axis=0)
            jit_c = noise_rng.normal(scale=cfg.jitter, size=centers.shape)
            jit_s = noise_rng.normal(scale=cfg.size_jitter, size=extents.shape)
            if not clean:
                centers = centers + jit_c
                extents = np.maximum(extents + jit_s, 1.0)
            boxes = np.concatenate([centers - extents / 2, extents], axis=2)

            instances = []
            for j in order:
                if j == 0:
                    instances.append(InstanceTrack(HUMAN_CLASS, True, boxes[:, 0].copy(), None))
                else:
                    k = j - 1
                    aff = TARGET_AFFORDANCE.get(activity, 0) if k == target else 0
                    instances.append(InstanceTrack(int(kinds[k]), False, boxes[:, j].copy(), aff))
            samples.append(VideoSample(f"syn-{activity}-{i:04d}", cfg.width, cfg.height,
                                       instances, activity=label))
    return samples


def target_instance(sample: VideoSample) -> int | None:
    """Index of the object carrying a non-stationary affordance, if any."""
    for m, inst in enumerate(sample.instances):
        if not inst.is_human and inst.affordance not in (None, 0):
            return m
    return None


class SyntheticVisual:
    """Appearance stand-in: a seeded per-class prototype plus per-frame noise."""

    def __init__(self, dim: int, num_classes: int, seed: int = 1234, noise: float = 0.1):
        self.dim = dim
        self.noise = noise
        self.seed = seed
        self.prototypes = np.random.default_rng([seed, 0]).standard_normal((num_classes, dim))

    def features(self, sample: VideoSample) -> np.ndarray:
        """(L, M, dim) vectors for the clip's current frames, keyed by original frame index."""
        vid_key = zlib.crc32(sample.video_id.encode())
        out = np.empty((sample.num_frames, sample.num_instances, self.dim))
        for m, inst in enumerate(sample.instances):
            if not 0 <= inst.class_id < len(self.prototypes):
                raise DataError(f"video {sample.video_id}: class id {inst.class_id} outside prototype table")
            for i, t in enumerate(sample.frames):
                rng = np.random.default_rng([self.seed, vid_key, t, m])
                out[i, m] = self.prototypes[inst.class_id] + self.noise * rng.standard_normal(self.dim)
        return out

    def attach(self, samples: Sequence[VideoSample]) -> None:
        for s in samples:
            feats = self.features(s)
            for m, inst in enumerate(s.instances):
                inst.visual = feats[:, m]
