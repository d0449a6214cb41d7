"""Dense human-object graph over T*M nodes, attention affinities, and parsed adjacencies.

Node ``n(t, m) = t * M + m``.  The dense graph links every human node with every
object node in both directions, across all frames; the intra-frame and
inter-frame graphs split it by whether the endpoints share a frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ConfigError
from .numkernel import Module, Tensor, leaky_relu, linear, masked_row_softmax, matmul, uniform_init


@dataclass(frozen=True)
class DenseGraph:
    T: int
    M: int
    human_flags: tuple[bool, ...]
    dense_mask: np.ndarray   # (T*M, T*M) bool
    intra_mask: np.ndarray
    inter_mask: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.T * self.M


def build_dense_masks(T: int, M: int, human_flags: Sequence[bool]) -> DenseGraph:
    flags = tuple(bool(f) for f in human_flags)
    if len(flags) != M:
        raise ConfigError(f"{len(flags)} human flags for {M} instances")
    if T < 1:
        raise ConfigError("need at least one frame")
    if all(flags) or not any(flags):
        raise ConfigError("the instance set needs at least one human and one object")
    human = np.tile(np.array(flags), T)              # per node
    frame = np.repeat(np.arange(T), M)
    dense = human[:, None] != human[None, :]         # heterogeneous pairs only; excludes i == i
    same = frame[:, None] == frame[None, :]
    return DenseGraph(T, M, flags, dense, dense & same, dense & ~same)


class Affinity(Module):
    """Shared node transform ``W`` and attention vector ``a`` (split as source | target)."""

    def __init__(self, d_in: int, d_att: int, rng: np.random.Generator):
        self.W = uniform_init(rng, (d_in, d_att), d_in)
        self.a = uniform_init(rng, (2 * d_att, 1), 2 * d_att)
        self.d_att = d_att


def pairwise_affinity(Y: Tensor, params: Affinity, mask: np.ndarray) -> Tensor:
    """``LeakyReLU(a . [W y_i || W y_j])`` for masked pairs; other entries hold 0.

    ``Y`` is ``(..., N, d_in)``; the result is ``(..., N, N)``.  The zero filler is
    never normalised over: parsing always restricts the softmax to a mask.
    """
    proj = linear(Y, params.W)                                   # (..., N, d_att)
    d = params.d_att
    src = matmul(proj, params.a[:d])                             # (..., N, 1)
    dst = matmul(proj, params.a[d:]).swapaxes(-1, -2)            # (..., 1, N)
    return leaky_relu(src + dst) * mask.astype(np.float64)


@dataclass
class ParsedAdjacency:
    intra: Tensor   # (..., N, N)
    inter: Tensor


def parse_adjacency(scores: Tensor, intra_mask: np.ndarray, inter_mask: np.ndarray) -> ParsedAdjacency:
    return ParsedAdjacency(masked_row_softmax(scores, intra_mask), masked_row_softmax(scores, inter_mask))


def uniform_adjacency(mask: np.ndarray) -> np.ndarray:
    """Row-normalised indicator of ``mask`` (all-zero rows stay zero)."""
    m = mask.astype(np.float64)
    rows = m.sum(axis=-1, keepdims=True)
    return m / np.where(rows > 0, rows, 1.0)


# ---- export ---------------------------------------------------------------------------

def adjacency_record(video_id: str, graph: DenseGraph, intra: np.ndarray, inter: np.ndarray) -> dict:
    return {
        "video_id": video_id,
        "T": graph.T,
        "M": graph.M,
        "human_flags": list(graph.human_flags),
        "A_intra": np.asarray(intra).tolist(),
        "A_inter": np.asarray(inter).tolist(),
    }


def adjacency_json(video_id: str, graph: DenseGraph, intra: np.ndarray, inter: np.ndarray) -> str:
    return json.dumps(adjacency_record(video_id, graph, intra, inter), indent=1)


def salient_edges(graph: DenseGraph, intra: np.ndarray, inter: np.ndarray, top_n: int = 3
                  ) -> tuple[list[tuple[int, int, float]], list[tuple[int, int, float]]]:
    """Edges drawn for inspection, as ``(source, target, weight)`` into human nodes.

    Intra: the strongest same-frame object for each human node.  Inter: the
    ``top_n`` strongest other-frame objects for each human node.
    """
    M = graph.M
    solid, dashed = [], []
    for t in range(graph.T):
        for m, is_h in enumerate(graph.human_flags):
            if not is_h:
                continue
            i = t * M + m
            row = intra[i]
            cand = np.flatnonzero(graph.intra_mask[i])
            if cand.size:
                j = int(cand[np.argmax(row[cand])])
                solid.append((j, i, float(row[j])))
            cand = np.flatnonzero(graph.inter_mask[i])
            if cand.size and top_n > 0:
                # stable descending order; ties keep node order
                best = cand[np.argsort(-inter[i][cand], kind="stable")[:top_n]]
                dashed.extend((int(j), i, float(inter[i][j])) for j in best)
    return solid, dashed


def adjacency_dot(video_id: str, graph: DenseGraph, intra: np.ndarray, inter: np.ndarray,
                  top_n: int = 3, labels: Sequence[str] | None = None) -> str:
    M = graph.M
    solid, dashed = salient_edges(graph, intra, inter, top_n)
    safe_id = video_id.replace("\\", "\\\\").replace('"', '\\"')
    lines = [f'digraph "{safe_id}" {{', "  rankdir=LR;"]
    for t in range(graph.T):
        lines.append(f"  subgraph cluster_t{t} {{")
        lines.append(f'    label="t={t}";')
        for m in range(M):
            name = labels[m] if labels else ("human" if graph.human_flags[m] else f"obj{m}")
            shape = "box" if graph.human_flags[m] else "ellipse"
            lines.append(f'    n{t * M + m} [label="{name}@{t}", shape={shape}];')
        lines.append("  }")
    for j, i, w in solid:
        lines.append(f'  n{j} -> n{i} [style=solid, label="{w:.3f}"];')
    for j, i, w in dashed:
        lines.append(f'  n{j} -> n{i} [style=dashed, label="{w:.3f}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"
