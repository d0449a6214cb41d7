import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stigpn.config import ConfigError
from stigpn.graph import (
    Affinity,
    adjacency_dot,
    adjacency_record,
    build_dense_masks,
    pairwise_affinity,
    parse_adjacency,
    salient_edges,
    uniform_adjacency,
)
from stigpn.numkernel import Tensor


def brute_neighbourhoods(T, M, flags):
    """Enumerate (t, m) pairs directly instead of going through node-index algebra."""
    N = T * M
    intra = np.zeros((N, N), dtype=bool)
    inter = np.zeros((N, N), dtype=bool)
    for t1 in range(T):
        for m1 in range(M):
            for t2 in range(T):
                for m2 in range(M):
                    if flags[m1] == flags[m2]:
                        continue
                    (intra if t1 == t2 else inter)[t1 * M + m1, t2 * M + m2] = True
    return intra, inter


@pytest.mark.parametrize("T,M,dense,intra,inter", [(2, 2, 8, 4, 4), (1, 3, 4, 4, 0), (3, 3, 36, 12, 24)])
def test_edge_counts(T, M, dense, intra, inter):
    g = build_dense_masks(T, M, [True] + [False] * (M - 1))
    assert (g.dense_mask.sum(), g.intra_mask.sum(), g.inter_mask.sum()) == (dense, intra, inter)


def test_needs_human_and_object():
    with pytest.raises(ConfigError):
        build_dense_masks(2, 2, [False, False])
    with pytest.raises(ConfigError):
        build_dense_masks(2, 2, [True, True])


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(2, 4), st.data())
def test_masks_match_enumeration(T, M, data):
    flags = data.draw(st.lists(st.booleans(), min_size=M, max_size=M).filter(lambda f: any(f) and not all(f)))
    g = build_dense_masks(T, M, flags)
    intra, inter = brute_neighbourhoods(T, M, flags)
    np.testing.assert_array_equal(g.intra_mask, intra)
    np.testing.assert_array_equal(g.inter_mask, inter)
    assert not np.any(g.intra_mask & g.inter_mask)
    np.testing.assert_array_equal(g.intra_mask | g.inter_mask, g.dense_mask)
    assert not np.any(np.diag(g.dense_mask))


def test_affinity_worked_values():
    aff = Affinity(2, 1, np.random.default_rng(0))
    aff.W.data[:] = [[1.0], [0.0]]
    aff.a.data[:] = [[1.0], [1.0]]
    mask = np.array([[False, True], [True, False]])
    Y = Tensor(np.array([[2.0, 9.0], [3.0, 9.0]]))
    s = pairwise_affinity(Y, aff, mask).data
    assert s[0, 1] == 5.0
    Y = Tensor(np.array([[-2.0, 0.0], [-3.0, 0.0]]))
    s = pairwise_affinity(Y, aff, mask).data
    assert s[0, 1] == pytest.approx(-1.0)   # 0.2 * -5
    assert s[0, 0] == 0.0


def test_parse_rows_and_supports():
    g = build_dense_masks(3, 3, [False, True, False])
    rng = np.random.default_rng(1)
    scores = Tensor(rng.normal(size=(9, 9)))
    adj = parse_adjacency(scores, g.intra_mask, g.inter_mask)
    for A, mask in ((adj.intra.data, g.intra_mask), (adj.inter.data, g.inter_mask)):
        assert np.all(A[~mask] == 0)
        rows = mask.any(axis=1)
        np.testing.assert_allclose(A[rows].sum(axis=1), 1.0, atol=1e-12)


def test_single_frame_inter_rows_are_zero():
    g = build_dense_masks(1, 3, [True, False, False])
    adj = parse_adjacency(Tensor(np.ones((3, 3))), g.intra_mask, g.inter_mask)
    assert np.all(adj.inter.data == 0)
    np.testing.assert_allclose(adj.intra.data[0], [0, 0.5, 0.5])


def test_uniform_adjacency_rows():
    g = build_dense_masks(2, 3, [True, False, False])
    U = uniform_adjacency(g.dense_mask)
    np.testing.assert_allclose(U.sum(axis=1), 1.0)
    assert U[0, 1] == pytest.approx(1 / 4)


def _toy():
    g = build_dense_masks(2, 3, [True, False, False])
    rng = np.random.default_rng(3)
    adj = parse_adjacency(Tensor(rng.normal(size=(6, 6))), g.intra_mask, g.inter_mask)
    return g, adj.intra.data, adj.inter.data


def test_salient_edges_pick_maxima():
    g, intra, inter = _toy()
    solid, dashed = salient_edges(g, intra, inter, top_n=1)
    assert len(solid) == 2 and len(dashed) == 2
    for j, i, w in solid:
        assert w == intra[i].max()
    for j, i, w in dashed:
        assert w == inter[i].max()


def test_dot_export_shape():
    g, intra, inter = _toy()
    dot = adjacency_dot('clip "1"', g, intra, inter, top_n=2)
    assert dot.startswith('digraph "clip \\"1\\"" {')
    assert dot.count("subgraph cluster_t") == 2
    assert dot.count("style=solid") == 2 and dot.count("style=dashed") == 4
    assert dot.count("{") == dot.count("}")
    rec = adjacency_record("v", g, intra, inter)
    assert set(rec) == {"video_id", "T", "M", "human_flags", "A_intra", "A_inter"}
