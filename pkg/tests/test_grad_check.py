import csv

import numpy as np
import pytest

from vpp.grad_check import (CHECKS, check_all, check_gumbel_soft, check_sm_head, compare, convergence_ratio,
                            failures, fd_gradient, relative_error, write_report)
from vpp.gumbel import GumbelConfig, soft_from_logits
from vpp.heads import KEEP
from vpp.map_sm import SparsitySchedule, score_and_mask, score_backward
from vpp.pipeline import PipelineConfig, VppModel
from vpp.sparsity_losses import loss_sp_map, loss_sp_map_grad
from vpp.tensor_math import SeededRng
from vpp.vit_sim import PatchFeatures


def test_fd_polynomial_and_constant():
    assert fd_gradient(lambda t: float(t[0] ** 2), np.array([3.0]), 1e-5)[0] == pytest.approx(6.0, abs=1e-8)
    assert np.array_equal(fd_gradient(lambda t: 4.0, np.ones(5)), np.zeros(5))


def test_fd_step_and_finiteness_guards():
    with pytest.raises(ValueError):
        fd_gradient(lambda t: 0.0, np.ones(2), h=1e-2)
    with pytest.raises(ValueError):
        fd_gradient(lambda t: 0.0, np.ones(2), h=1e-9)
    with pytest.raises(FloatingPointError):
        fd_gradient(lambda t: float("inf") if t[0] > 0 else 0.0, np.array([0.0]), 1e-5)


def test_relative_error_definition():
    assert relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0
    assert relative_error([2.0], [1.0]) == pytest.approx(0.5)


def test_map_loss_through_gumbel_on_four_patches():
    rng = SeededRng(0)
    cfg = GumbelConfig(10.0, True, rng)
    z = rng.normal(size=(4, 2))
    g = cfg.draw(z.shape)

    def f(x):
        return loss_sp_map(soft_from_logits(x, cfg, g)[0][:, KEEP])

    soft, _ = soft_from_logits(z, cfg, g)
    up = np.zeros_like(soft)
    up[:, KEEP] = loss_sp_map_grad(soft[:, KEEP])
    from vpp.gumbel import logits_grad
    analytic = logits_grad(soft, up)
    for h in (1e-4, 1e-5):
        assert relative_error(analytic, fd_gradient(f, z, h)) < 1e-5


def test_fresh_init_all_pass():
    reports = check_all(tolerance=1e-4, seed=3, instances=2)
    assert len(reports) == 2 * len(CHECKS)
    assert failures(reports) == []


def test_pipeline_heads_checked():
    cfg = PipelineConfig()
    model = VppModel.init(cfg)
    reports = check_all(model, instances=1)
    names = [r.name for r in reports]
    assert "mapsm" in names and "sm3" in names and "sm9" in names
    assert failures(reports) == []


def test_sign_flip_is_caught():
    rng = SeededRng(4)
    e = 6
    from vpp.heads import MlpHead, flatten_grads
    head = MlpHead.init(e, rng, scale=3.0)
    x = PatchFeatures(0, 1, rng.normal(size=(5, e)), np.arange(5), (1, 5))
    cfg = GumbelConfig(10.0, True, rng.child(1))
    p, _, sp = score_and_mask(x, head, SparsitySchedule(topk_fraction=1.0), cfg)
    d_p = rng.normal(size=5)
    good = flatten_grads(score_backward(head, sp, d_p))

    def f(theta):
        soft, _ = soft_from_logits(head.with_flat(theta).forward(x.tokens)[0], cfg, sp.noise)
        return float(np.sum(d_p * soft[:, KEEP]))

    assert compare("ok", good, f, head.flat()).passed
    bad = good.copy()
    bad[3] = -bad[3]
    rep = compare("flipped", bad, f, head.flat())
    assert not rep.passed and failures([rep]) == ["flipped"]


def test_zero_upstream_gives_zero_gradients():
    for fn in (check_gumbel_soft, check_sm_head):
        shape = (4, 3) if fn is check_gumbel_soft else (6,)
        rep = fn(SeededRng(5), upstream=np.zeros(shape))
        assert np.all(rep.analytic == 0) and np.all(np.abs(rep.numeric) < 1e-12) and rep.passed


def test_convergence_ratio_is_quadratic():
    theta = np.array([0.3, -0.7, 1.1])
    f = lambda t: float(np.sum(np.sin(t) * np.exp(t)))
    grad = np.cos(theta) * np.exp(theta) + np.sin(theta) * np.exp(theta)
    assert 50 <= convergence_ratio(f, grad, theta) <= 200


def test_report_csv(tmp_path):
    reports = check_all(instances=1)
    write_report(tmp_path / "g.csv", reports)
    with open(tmp_path / "g.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(reports) and rows[0]["passed"] == "True"
