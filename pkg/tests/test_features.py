import numpy as np
import pytest

from stigpn.config import PRESETS
from stigpn.data import DataError, InstanceTrack, SyntheticConfig, SyntheticVisual, VideoSample, synth_generate
from stigpn.features import FeatureEncoder, SemanticTable, VisualProjection, canonical_order, collate, spatial_quad
from stigpn.numkernel import ShapeError


def test_full_image_box():
    np.testing.assert_allclose(spatial_quad([0, 0, 640, 480], 640, 480), [0.5, 0.5, 1.0, 1.0])


def test_box_is_clipped():
    q = spatial_quad([[-10, -10, 20, 20], [600, 400, 100, 100]], 640, 480)
    np.testing.assert_allclose(q[0], [5 / 640, 5 / 480, 10 / 640, 10 / 480])
    assert np.all((q >= 0) & (q <= 1))


def test_bad_image_size():
    with pytest.raises(ValueError):
        spatial_quad([0, 0, 1, 1], 0, 10)


def test_unknown_class_id():
    table = SemanticTable(6, 8, np.random.default_rng(0))
    with pytest.raises(IndexError):
        table.lookup([1, 6])


def test_visual_length_checked():
    proj = VisualProjection(64, 32, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        proj.project(np.zeros((2, 63)))


def test_paper_dims_stream_widths():
    d = PRESETS["paper"]
    assert d.visual_spatial == 1280 and d.spatial_semantic == 384 and d.branch == 512


def test_stream_input_shapes():
    dims = PRESETS["desk"]
    samples = synth_generate(SyntheticConfig(samples_per_class=2, objects=(2, 2), frames=(5, 5), seed=0))
    SyntheticVisual(dims.raw, 6).attach(samples)
    batch = collate(samples[:3])
    enc = FeatureEncoder(dims, 6, np.random.default_rng(0))
    out = enc(batch)
    assert out.visual_spatial.shape == (3, 5, 3, dims.visual_spatial)
    assert out.spatial_semantic.shape == (3, 5, 3, dims.spatial_semantic)


def test_canonical_order_ignores_input_permutation():
    s = synth_generate(SyntheticConfig(samples_per_class=1, objects=(3, 3), seed=4))[2]
    base = [s.instances[m] for m in canonical_order(s)]
    for perm in ([3, 2, 1, 0], [1, 0, 3, 2], [2, 3, 0, 1]):
        p = s.permuted(perm)
        assert [p.instances[m] for m in canonical_order(p)] == base
    assert base[0].is_human


def test_collate_rejects_mismatched_shapes():
    a, b = synth_generate(SyntheticConfig(samples_per_class=1, objects=(2, 3), seed=1))[:2]
    if a.num_instances == b.num_instances:
        b = VideoSample(b.video_id, b.width, b.height, b.instances[:-1], b.activity)
    with pytest.raises(DataError, match=b.video_id):
        collate([a, b])
