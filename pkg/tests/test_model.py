import numpy as np
import pytest

from stigpn.config import Ablation, ConfigError, TrainConfig
from stigpn.data import DataError, SyntheticConfig, SyntheticVisual, synth_generate
from stigpn.features import collate
from stigpn.model import (
    STIGPN,
    BiRNN,
    GraphEvolve,
    canonical_graph,
    compute_loss,
    graph_evolve,
    stream_forward,
    temporal_enhance,
    two_stream_fuse,
)
from stigpn.graph import ParsedAdjacency
from stigpn.numkernel import ShapeError, Tape, Tensor, backward, cross_entropy


def _samples(n=4, M=3, T=4, seed=0, dim=64):
    s = synth_generate(SyntheticConfig(samples_per_class=n, objects=(M - 1, M - 1), frames=(T, T), seed=seed))
    SyntheticVisual(dim, 6).attach(s)
    return s


def test_birnn_single_step_closed_form():
    rng = np.random.default_rng(0)
    rnn = BiRNN(3, 2, 4, rng)
    x = rng.normal(size=(1, 1, 3))
    out = rnn(Tensor(x)).data[0, 0]
    hf = np.tanh(x[0, 0] @ rnn.fwd_x.data + rnn.fwd_b.data)
    hb = np.tanh(x[0, 0] @ rnn.bwd_x.data + rnn.bwd_b.data)
    np.testing.assert_allclose(out, np.concatenate([hf, hb]) @ rnn.out_w.data + rnn.out_b.data)


def test_birnn_recurrence_by_hand():
    rng = np.random.default_rng(1)
    rnn = BiRNN(2, 3, 2, rng)
    x = rng.normal(size=(1, 3, 2))
    hf, h = [], np.zeros(3)
    for t in range(3):
        h = np.tanh(x[0, t] @ rnn.fwd_x.data + rnn.fwd_b.data + h @ rnn.fwd_h.data)
        hf.append(h)
    hb, h = [None] * 3, np.zeros(3)
    for t in (2, 1, 0):
        h = np.tanh(x[0, t] @ rnn.bwd_x.data + rnn.bwd_b.data + h @ rnn.bwd_h.data)
        hb[t] = h
    ref = np.stack([np.concatenate([hf[t], hb[t]]) for t in range(3)]) @ rnn.out_w.data + rnn.out_b.data
    np.testing.assert_allclose(rnn(Tensor(x)).data[0], ref, atol=1e-14)


def test_temporal_enhance_is_per_instance():
    rng = np.random.default_rng(2)
    rnn = BiRNN(4, 2, 4, rng)
    X = rng.normal(size=(2, 5, 3, 4))
    full = temporal_enhance(Tensor(X), rnn).data
    one = rnn(Tensor(X[1, :, 2][None])).data[0]
    np.testing.assert_allclose(full[1, :, 2], one, atol=1e-14)


def test_graph_evolve_matches_dense_algebra():
    rng = np.random.default_rng(3)
    ev = GraphEvolve(4, 3, rng)
    Y = rng.normal(size=(6, 4))
    Ai, Ae = rng.random((6, 6)), rng.random((6, 6))
    Z = graph_evolve(Tensor(Y), ParsedAdjacency(Tensor(Ai), Tensor(Ae)), ev).data
    np.testing.assert_allclose(Z, np.hstack([Ai @ Y @ ev.W_intra.data, Ae @ Y @ ev.W_inter.data]))
    with pytest.raises(ShapeError):
        graph_evolve(Tensor(Y[:5]), ParsedAdjacency(Tensor(Ai), Tensor(Ae)), ev)


def test_output_shapes_and_distributions():
    cfg = TrainConfig(seed=0)
    model = STIGPN(cfg)
    batch = collate(_samples()[:5])
    outs = model(batch)
    assert outs["visual"].human_logits.shape == (5, 4, 4)
    assert outs["semantic"].object_logits.shape == (5, 4, 2, 4)
    for p in model.predict(batch):
        assert p.activity.sum() == pytest.approx(1.0)
        assert np.isnan(p.affordance).all(axis=1).sum() == 1


def test_single_frame_inter_branch_is_zero():
    cfg = TrainConfig(seed=0, stream="semantic")
    model = STIGPN(cfg)
    batch = collate(_samples(T=1)[:3])
    out = model(batch)["semantic"]
    assert np.all(out.adjacency.inter.data == 0)


def test_loss_identities():
    cfg = TrainConfig(seed=0)
    model = STIGPN(cfg)
    batch = collate(_samples()[:6])
    outs = model(batch)
    rep = compute_loss(outs, batch.activity, batch.affordance[:, 1:], 1.0)
    manual = 0.0
    for o in outs.values():
        manual += cross_entropy(o.human_logits.mean(axis=1), batch.activity).item()
        obj = o.object_logits.mean(axis=1)
        manual += cross_entropy(obj.reshape(-1, 4), batch.affordance[:, 1:].reshape(-1)).item()
    assert rep.total.item() == pytest.approx(manual, rel=1e-12)
    rep0 = compute_loss(outs, batch.activity, batch.affordance[:, 1:], 0.0)
    assert rep0.row()["loss_visual_o"] == 0.0
    assert rep0.total.item() == pytest.approx(sum(rep0.human.values()), rel=1e-12)
    bad = batch.activity.copy()
    bad[0] = -1
    with pytest.raises(DataError):
        compute_loss(outs, bad, batch.affordance[:, 1:], 1.0)


def test_fuse_shape_mismatch():
    with pytest.raises(ShapeError):
        two_stream_fuse(np.ones((2, 4)), np.ones((2, 3)))
    np.testing.assert_allclose(two_stream_fuse([[1.0, 0.0]], [[0.0, 1.0]]), [[0.5, 0.5]])


def test_ablation_conflicts():
    with pytest.raises(ConfigError):
        TrainConfig(ablation=("intra-only", "inter-only"))
    with pytest.raises(ConfigError):
        Ablation(dense_baseline=True, intra_only=True)


def test_dense_baseline_leaves_attention_untouched():
    cfg = TrainConfig(seed=0, stream="semantic", ablation=("dense-baseline",))
    model = STIGPN(cfg)
    batch = collate(_samples()[:4])
    with Tape():
        rep = model.loss(batch)
    backward(rep.total)
    aff = model.semantic_stream.affinity
    assert not aff.W.grad.any() and not aff.a.grad.any()
    assert model.semantic_stream.evolve.W_intra.grad.any()


@pytest.mark.parametrize("flag,zero", [("intra-only", "inter"), ("inter-only", "intra")])
def test_single_graph_ablation(flag, zero):
    model = STIGPN(TrainConfig(seed=0, stream="semantic", ablation=(flag,)))
    out = model(collate(_samples()[:2]))["semantic"]
    assert not getattr(out.adjacency, zero).data.any()


def test_object_permutation_equivariance():
    model = STIGPN(TrainConfig(seed=3))
    model.eval()
    samples = _samples(M=4)[:4]
    base = model.predict(collate(samples))
    rng = np.random.default_rng(0)
    perms = [rng.permutation(s.num_instances) for s in samples]
    moved = model.predict(collate([s.permuted(p) for s, p in zip(samples, perms)]))
    for b0, b1, p in zip(base, moved, perms):
        assert np.array_equal(b0.activity, b1.activity)
        np.testing.assert_array_equal(b1.affordance, b0.affordance[p])


def test_stream_rejects_wrong_graph():
    model = STIGPN(TrainConfig(seed=0, stream="semantic"))
    inputs = model.features(collate(_samples()[:2]))
    with pytest.raises(ShapeError):
        stream_forward(inputs.spatial_semantic, model.semantic_stream, canonical_graph(3, 3))
