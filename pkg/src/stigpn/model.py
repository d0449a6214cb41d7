"""Per-stream network, two-stream fusion and the joint loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .config import Ablation, ConfigError, TrainConfig
from .data import DataError
from .features import Batch, FeatureEncoder, StreamInputs
from .graph import (
    Affinity,
    DenseGraph,
    ParsedAdjacency,
    build_dense_masks,
    pairwise_affinity,
    parse_adjacency,
    uniform_adjacency,
)
from .numkernel import (
    MLP,
    Module,
    ShapeError,
    Tensor,
    concat,
    cross_entropy,
    linear,
    matmul,
    softmax_np,
    stack,
    tanh,
    uniform_init,
)


class BiRNN(Module):
    """Elman recurrence in both time directions with a shared linear read-out.

    Hidden activation is tanh, read-out activation is identity; both
    directions start from a zero state.  Input ``(S, T, d_in)``, output
    ``(S, T, d_out)``.
    """

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fwd_x = uniform_init(rng, (d_in, d_hidden), d_in)
        self.fwd_h = uniform_init(rng, (d_hidden, d_hidden), d_hidden)
        self.fwd_b = uniform_init(rng, (d_hidden,), d_in)
        self.bwd_x = uniform_init(rng, (d_in, d_hidden), d_in)
        self.bwd_h = uniform_init(rng, (d_hidden, d_hidden), d_hidden)
        self.bwd_b = uniform_init(rng, (d_hidden,), d_in)
        self.out_w = uniform_init(rng, (2 * d_hidden, d_out), 2 * d_hidden)
        self.out_b = uniform_init(rng, (d_out,), 2 * d_hidden)

    def _direction(self, xw: Tensor, w_h: Tensor, steps) -> list[Tensor]:
        h = None
        out = {}
        for t in steps:
            pre = xw[:, t]
            if h is not None:
                pre = pre + matmul(h, w_h)
            h = tanh(pre)
            out[t] = h
        return [out[t] for t in sorted(out)]

    def __call__(self, X: Tensor) -> Tensor:
        T = X.shape[1]
        xf = linear(X, self.fwd_x, self.fwd_b)
        xb = linear(X, self.bwd_x, self.bwd_b)
        hf = stack(self._direction(xf, self.fwd_h, range(T)), axis=1)
        hb = stack(self._direction(xb, self.bwd_h, range(T - 1, -1, -1)), axis=1)
        return linear(concat([hf, hb], axis=-1), self.out_w, self.out_b)


def temporal_enhance(X: Tensor, rnn: BiRNN) -> Tensor:
    """Per-instance BiRNN over time: ``(B, T, M, d) -> (B, T, M, d_out)``."""
    B, T, M, d = X.shape
    seq = X.swapaxes(1, 2).reshape(B * M, T, d)
    out = rnn(seq)
    return out.reshape(B, M, T, out.shape[-1]).swapaxes(1, 2)


class GraphEvolve(Module):
    def __init__(self, d_in: int, d_branch: int, rng: np.random.Generator):
        self.W_intra = uniform_init(rng, (d_in, d_branch), d_in)
        self.W_inter = uniform_init(rng, (d_in, d_branch), d_in)


def graph_evolve(Y: Tensor, adj: ParsedAdjacency, params: GraphEvolve) -> Tensor:
    """``[A_intra Y W_intra || A_inter Y W_inter]`` over ``(..., N, d)`` node features."""
    if adj.intra.shape[-1] != Y.shape[-2] or adj.inter.shape[-1] != Y.shape[-2]:
        raise ShapeError(f"adjacency {adj.intra.shape} does not match {Y.shape[-2]} nodes")
    intra = matmul(adj.intra, linear(Y, params.W_intra))
    inter = matmul(adj.inter, linear(Y, params.W_inter))
    return concat([intra, inter], axis=-1)



@dataclass
class StreamOutput:
    human_logits: Tensor    # (B, T, C_h)
    object_logits: Tensor   # (B, T, M-1, C_o), objects in slot order
    adjacency: ParsedAdjacency
    scores: Tensor | None = None


@lru_cache(maxsize=64)
def canonical_graph(T: int, M: int) -> DenseGraph:
    """Dense graph for batches whose human occupies instance slot 0."""
    return build_dense_masks(T, M, (True,) + (False,) * (M - 1))


class Stream(Module):
    """TE BiRNN -> attention parsing -> dual-graph GCN -> fusion BiRNN -> read-out heads."""

    def __init__(self, d_in: int, cfg: TrainConfig, rng: np.random.Generator):
        dims = cfg.resolved_dims
        self.te = BiRNN(d_in, max(1, (d_in + 1) // 2), d_in, rng)
        self.affinity = Affinity(d_in, dims.branch, rng)
        self.evolve = GraphEvolve(d_in, dims.branch, rng)
        self.fuse = BiRNN(dims.evolve, max(1, dims.fuse // 2), dims.fuse, rng)
        head = [dims.fuse, dims.head_hidden, dims.head_mid]
        self.human_head = MLP(head + [cfg.num_activities], rng, cfg.use_norm, final_linear=True)
        self.object_head = MLP(head + [cfg.num_affordances], rng, cfg.use_norm, final_linear=True)

    def __call__(self, X: Tensor, graph: DenseGraph, ablation: Ablation = Ablation()) -> StreamOutput:
        return stream_forward(X, self, graph, ablation)


def stream_forward(X: Tensor, params: Stream, graph: DenseGraph, ablation: Ablation = Ablation()
                   ) -> StreamOutput:
    B, T, M, d = X.shape
    humans = [m for m, h in enumerate(graph.human_flags) if h]
    objects = [m for m, h in enumerate(graph.human_flags) if not h]
    if len(humans) != 1:
        raise ConfigError(f"prediction needs exactly one human per frame, found {len(humans)}")
    if (graph.T, graph.M) != (T, M):
        raise ShapeError(f"graph built for T={graph.T}, M={graph.M} but input is T={T}, M={M}")

    Y = X if ablation.no_te else temporal_enhance(X, params.te)
    N = T * M
    nodes = Y.reshape(B, N, Y.shape[-1])
    scores = None
    if ablation.dense_baseline:
        dense = Tensor(uniform_adjacency(graph.dense_mask))
        adj = ParsedAdjacency(dense, dense)
    else:
        scores = pairwise_affinity(nodes, params.affinity, graph.dense_mask)
        adj = parse_adjacency(scores, graph.intra_mask, graph.inter_mask)
        if ablation.intra_only:
            adj = ParsedAdjacency(adj.intra, Tensor(np.zeros((N, N))))
        elif ablation.inter_only:
            adj = ParsedAdjacency(Tensor(np.zeros((N, N))), adj.inter)
    Z = graph_evolve(nodes, adj, params.evolve)                     # (B, N, d_evolve)
    Z = Z.reshape(B, T, M, Z.shape[-1])
    fused = temporal_enhance(Z, params.fuse)                        # (B, T, M, d_fuse)
    obj_index = slice(1, M) if objects == list(range(1, M)) else objects
    human_logits = params.human_head(fused[:, :, humans[0]])
    object_logits = params.object_head(fused[:, :, obj_index])
    return StreamOutput(human_logits, object_logits, adj, scores)


# ---- prediction / fusion / loss -----------------------------------------------------

def average_logits(logits: Tensor) -> Tensor:
    """Mean over the frame axis (axis 1)."""
    return logits.mean(axis=1)


def predict(out: StreamOutput) -> tuple[np.ndarray, np.ndarray]:
    """Frame-averaged logits, softmaxed: ``(B, C_h)`` and ``(B, M-1, C_o)``."""
    return softmax_np(average_logits(out.human_logits).data), softmax_np(average_logits(out.object_logits).data)


def two_stream_fuse(p_visual: np.ndarray, p_semantic: np.ndarray) -> np.ndarray:
    p_visual, p_semantic = np.asarray(p_visual), np.asarray(p_semantic)
    if p_visual.shape != p_semantic.shape:
        raise ShapeError(f"cannot fuse predictions of shapes {p_visual.shape} and {p_semantic.shape}")
    return (p_visual + p_semantic) / 2.0


@dataclass
class LossReport:
    total: Tensor
    loss_weight: float
    streams: dict[str, Tensor] = field(default_factory=dict)
    human: dict[str, float] = field(default_factory=dict)
    objects: dict[str, float] = field(default_factory=dict)

    def row(self) -> dict[str, float]:
        out = {"loss": self.total.item()}
        for s in ("visual", "semantic"):
            out[f"loss_{s}"] = self.streams[s].item() if s in self.streams else 0.0
            out[f"loss_{s}_h"] = self.human.get(s, 0.0)
            out[f"loss_{s}_o"] = self.objects.get(s, 0.0)
        return out


def compute_loss(outputs: dict[str, StreamOutput], activity: np.ndarray, affordance: np.ndarray,
                 loss_weight: float) -> LossReport:
    """Sum over streams of ``L_h + loss_weight * L_o`` (cross-entropy on frame-averaged logits).

    ``affordance`` holds one label per object slot, ``-1`` where unlabelled; the
    object term is zero when no object is labelled or the weight is zero.
    """
    activity = np.asarray(activity)
    if activity.size == 0 or np.any(activity < 0):
        raise DataError("every clip needs a human activity label for training")
    report = LossReport(total=Tensor(0.0), loss_weight=loss_weight)
    total = None
    for name, out in outputs.items():
        l_h = cross_entropy(average_logits(out.human_logits), activity)
        stream_loss = l_h
        report.human[name] = l_h.item()
        report.objects[name] = 0.0
        labels = np.asarray(affordance).reshape(-1)
        keep = np.flatnonzero(labels >= 0)
        if loss_weight != 0.0 and keep.size:
            obj = average_logits(out.object_logits)
            obj = obj.reshape(-1, obj.shape[-1])
            l_o = cross_entropy(obj[keep] if keep.size != labels.size else obj, labels[keep])
            report.objects[name] = l_o.item()
            stream_loss = l_h + l_o * loss_weight
        report.streams[name] = stream_loss
        total = stream_loss if total is None else total + stream_loss
    report.total = total
    return report


# ---- full model --------------------------------------------------------------------

@dataclass
class VideoPrediction:
    video_id: str
    activity: np.ndarray                 # (C_h,) fused distribution
    affordance: np.ndarray               # (M, C_o) in the clip's own instance order; NaN row for the human
    per_stream: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)


class STIGPN(Module):
    def __init__(self, cfg: TrainConfig):
        rng = np.random.default_rng(cfg.seed)
        dims = cfg.resolved_dims
        want_v = cfg.stream in ("visual", "both")
        want_s = cfg.stream in ("semantic", "both")
        self.features = FeatureEncoder(dims, cfg.num_object_classes, rng, cfg.use_norm,
                                       need_visual=want_v, need_semantic=want_s)
        self.visual_stream = Stream(dims.visual_spatial, cfg, rng) if want_v else None
        self.semantic_stream = Stream(dims.spatial_semantic, cfg, rng) if want_s else None
        self._cfg = cfg
        self._ablation = cfg.ablation_flags

    @property
    def config(self) -> TrainConfig:
        return self._cfg

    def streams(self) -> dict[str, Stream]:
        out = {}
        if self.visual_stream is not None:
            out["visual"] = self.visual_stream
        if self.semantic_stream is not None:
            out["semantic"] = self.semantic_stream
        return out

    def forward(self, batch: Batch) -> dict[str, StreamOutput]:
        _, T, M = batch.shape
        graph = canonical_graph(T, M)
        inputs: StreamInputs = self.features(batch)
        outs = {}
        if self.visual_stream is not None:
            outs["visual"] = self.visual_stream(inputs.visual_spatial, graph, self._ablation)
        if self.semantic_stream is not None:
            outs["semantic"] = self.semantic_stream(inputs.spatial_semantic, graph, self._ablation)
        return outs

    __call__ = forward

    def loss(self, batch: Batch, outputs: dict[str, StreamOutput] | None = None) -> LossReport:
        outputs = self.forward(batch) if outputs is None else outputs
        return compute_loss(outputs, batch.activity, batch.affordance[:, 1:], self._cfg.loss_weight)

    def predict(self, batch: Batch, outputs: dict[str, StreamOutput] | None = None) -> list[VideoPrediction]:
        outputs = self.forward(batch) if outputs is None else outputs
        per_stream = {name: predict(out) for name, out in outputs.items()}
        probs = list(per_stream.values())
        p_h, p_o = probs[0] if len(probs) == 1 else (two_stream_fuse(probs[0][0], probs[1][0]),
                                                     two_stream_fuse(probs[0][1], probs[1][1]))
        B, _, M = batch.shape
        preds = []
        for b, sample in enumerate(batch.samples):
            aff = np.full((M, p_o.shape[-1]), np.nan)
            for slot in range(1, M):
                aff[batch.order[b, slot]] = p_o[b, slot - 1]
            streams = {}
            for name, (sh, so) in per_stream.items():
                s_aff = np.full_like(aff, np.nan)
                for slot in range(1, M):
                    s_aff[batch.order[b, slot]] = so[b, slot - 1]
                streams[name] = (sh[b], s_aff)
            preds.append(VideoPrediction(sample.video_id, p_h[b], aff, streams))
        return preds
