import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpp.gumbel import GumbelConfig
from vpp.heads import MlpHead
from vpp.selective_module import SmHead, sm_backward, sm_flops, sm_forward
from vpp.tensor_math import SeededRng
from vpp.vit_sim import PatchFeatures


def biased_head(e, keep_bias):
    # zero weights; only the output bias decides
    return MlpHead(np.zeros((e, e // 2)), np.zeros(e // 2), np.zeros((e // 2, 2)), np.array([keep_bias, 0.0]))


def feats(n=6, e=4, ids=None, seed=0, grid=(2, 3)):
    ids = np.arange(n) if ids is None else np.asarray(ids)
    return PatchFeatures(0, 3, SeededRng(seed).normal(size=(len(ids), e)), ids, grid)


def test_confident_keep_leaves_mask_unchanged():
    x = feats(ids=[0, 2, 3, 5])
    res = sm_forward(x, SmHead(3, 0.6, biased_head(4, 20.0)), GumbelConfig(10.0, False))
    assert np.array_equal(res.mask.keep, x.keep_vector())
    assert not res.degenerate


def test_symmetric_logits_keep_half():
    n = 10**4
    x = PatchFeatures(0, 3, np.zeros((n, 4)), np.arange(n), (100, 100))
    res = sm_forward(x, SmHead(3, 0.5, biased_head(4, 0.0)), GumbelConfig(1.0, True, SeededRng(1)))
    assert abs(res.mask.density - 0.5) < 0.02


def test_all_drop_keeps_best_patch(caplog):
    x = feats()
    head = MlpHead.init(4, SeededRng(2), scale=3.0)
    head.b2 = np.array([-50.0, 0.0])
    with caplog.at_level(logging.WARNING):
        res = sm_forward(x, SmHead(6, 0.4, head), GumbelConfig(10.0, False))
    assert res.degenerate and res.mask.keep.sum() == 1
    assert res.mask.ids[0] == x.active_ids[np.argmax(res.soft_keep)]
    assert "dropped every patch" in caplog.text


def test_empty_input_rejected():
    x = PatchFeatures(0, 3, np.zeros((0, 4)), np.array([], dtype=int), (2, 3))
    with pytest.raises(ValueError):
        sm_forward(x, SmHead(3, 0.5, biased_head(4, 0.0)), GumbelConfig())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_output_inside_incoming_set(seed):
    rng = SeededRng(seed)
    ids = np.flatnonzero(rng.uniform(size=12) < 0.6)
    if len(ids) == 0:
        ids = np.array([4])
    x = feats(e=6, ids=ids, seed=seed, grid=(3, 4))
    res = sm_forward(x, SmHead(3, 0.5, MlpHead.init(6, rng, scale=3.0)), GumbelConfig(1.0, True, rng.child(1)))
    assert not np.any(res.mask.keep & ~x.keep_vector())
    assert res.mask.keep.sum() >= 1


def test_straight_through_gradient_uses_soft_path():
    x = feats()
    head = SmHead(3, 0.5, MlpHead.init(4, SeededRng(3), scale=2.0))
    res = sm_forward(x, head, GumbelConfig(10.0, True, SeededRng(4)))
    zero = sm_backward(head, res, np.zeros(x.n_active))
    assert all(np.all(v == 0) for v in zero.values())
    g = sm_backward(head, res, np.ones(x.n_active))
    assert any(np.any(v != 0) for v in g.values())


def test_flops_match_head():
    h = MlpHead.init(8, SeededRng(0))
    assert sm_flops(10, SmHead(3, 0.5, h)) == 2 * 10 * (8 * 4 + 4 * 2)
