import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stigpn.metrics import classification_report, confusion_matrix


def brute_macro_f1(truth, pred, C):
    """Per-class counts by explicit enumeration; average over classes seen anywhere."""
    f1s = []
    for c in range(C):
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        if tp + fp + fn == 0:
            continue
        f1s.append(2 * tp / (2 * tp + fp + fn))
    return sum(f1s) / len(f1s) if f1s else 0.0


def one_hot(pred, C):
    p = np.zeros((len(pred), C))
    p[np.arange(len(pred)), pred] = 1.0
    return p


def test_hand_example():
    rep = classification_report([0, 0, 1], one_hot([0, 1, 1], 2))
    assert rep.f1 == pytest.approx([2 / 3, 2 / 3])
    assert rep.macro_f1 == pytest.approx(2 / 3)
    assert rep.precision == [1.0, 0.5]
    assert rep.recall == [0.5, 1.0]
    assert rep.confusion == [[1, 1], [0, 1]]


def test_confusion_matches_loop():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 5, 200), rng.integers(0, 5, 200)
    cm = confusion_matrix(t, p, 5)
    ref = np.zeros((5, 5), dtype=int)
    for a, b in zip(t, p):
        ref[a, b] += 1
    np.testing.assert_array_equal(cm, ref)


def test_absent_class_excluded_from_macro():
    rep = classification_report([0, 0, 1], one_hot([0, 0, 1], 4))
    assert rep.classes_in_macro == [0, 1]
    assert rep.macro_f1 == 1.0


def test_topk():
    probs = np.array([[0.1, 0.2, 0.3, 0.4, 0.0, 0.0],
                      [0.6, 0.1, 0.1, 0.1, 0.1, 0.0]])
    rep = classification_report([0, 0], probs)
    assert rep.top1 == 0.5
    assert rep.top5 == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6).flatmap(lambda C: st.tuples(
    st.just(C),
    st.lists(st.tuples(st.integers(0, C - 1), st.integers(0, C - 1)), min_size=1, max_size=40))))
def test_macro_f1_matches_brute_force(case):
    C, pairs = case
    truth, pred = [a for a, _ in pairs], [b for _, b in pairs]
    rep = classification_report(truth, one_hot(pred, C))
    assert rep.macro_f1 == brute_macro_f1(truth, pred, C)
