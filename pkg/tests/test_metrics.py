import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpp.metrics import (FgsProbe, compute_ioi, compute_pkr, expected_random_ioi, ioi_rows, pkr_rows, probe_fgs,
                         random_masks_like, write_rows)
from vpp.synth_video import GtInstanceMask
from vpp.tensor_math import SeededRng


def inst(frame, ids, n=100, k=0):
    p = np.zeros(n, dtype=bool)
    p[list(ids)] = True
    return GtInstanceMask(frame, k, p)


def test_pkr_dense_and_step_profile():
    assert compute_pkr(np.ones((3, 12, 100), dtype=bool)).mean == 1.0
    m = np.ones((12, 100), dtype=bool)
    m[1:, 50:] = False
    rep = compute_pkr(m)
    assert rep.mean == pytest.approx((1 + 11 * 0.5) / 12)
    assert round(rep.mean, 4) == 0.5417
    assert rep.mean == pytest.approx(np.mean(rep.per_layer))


def test_ioi_perfect_and_partial():
    gt = [inst(0, range(10)), inst(0, range(40, 60), k=1)]
    masks = np.zeros((1, 12, 100), dtype=bool)
    masks[:, :, :10] = True
    masks[:, :, 40:60] = True
    assert compute_ioi(masks, gt).overall == 1.0
    masks[0, 6:, 40:50] = False  # half of instance 1 pruned from layer 7 on
    rep = compute_ioi(masks, gt)
    assert rep.per_instance[1] == pytest.approx((6 + 6 * 0.5) / 12)
    assert rep.by_stratum == {"S": pytest.approx(1.0), "M": pytest.approx(0.75), "L": None}


def test_ioi_without_instances_is_nan():
    rep = compute_ioi(np.ones((2, 12, 100), dtype=bool), [])
    assert np.isnan(rep.overall)
    assert ioi_rows(rep)[0]["instances"] == 0


def test_ioi_rejects_empty_instance():
    with pytest.raises(ValueError):
        compute_ioi(np.ones((1, 12, 100), dtype=bool), [inst(0, [])])


def test_random_mask_ioi_tracks_density():
    rng = SeededRng(0)
    vals, dens = [], []
    for t in range(200):
        m = np.zeros((12, 100), dtype=bool)
        keep = rng.permutation(100)[:60]
        m[:, keep] = True
        rnd = random_masks_like(m, rng.child(t))
        assert np.array_equal(rnd.sum(axis=1), m.sum(axis=1))
        vals.append(compute_ioi(rnd[None], [inst(0, range(30))]).overall)
        dens.append(expected_random_ioi(m[None])[0])
    assert abs(np.mean(vals) - 0.6) < 0.02
    assert np.allclose(dens, 0.6)


def test_random_masks_are_nested():
    m = np.ones((2, 12, 50), dtype=bool)
    m[:, 3:, 30:] = False
    m[:, 8:, 10:] = False
    rnd = random_masks_like(m, SeededRng(1))
    assert np.all(rnd[:, 1:] <= rnd[:, :-1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_ioi_monotone_under_union(seed):
    rng = SeededRng(seed)
    a = rng.uniform(size=(1, 12, 30)) < 0.5
    b = rng.uniform(size=(1, 12, 30)) < 0.5
    gt = [inst(0, np.flatnonzero(rng.uniform(size=30) < 0.3), n=30)]
    if not gt[0].patches.any():
        gt = [inst(0, [0], n=30)]
    ia, iu = compute_ioi(a, gt).overall, compute_ioi(a | b, gt).overall
    assert 0 <= ia <= iu <= 1
    full = compute_ioi(a | gt[0].patches[None, None, :], gt).overall
    assert full == 1.0
    if not np.all(a[0][:, gt[0].patches]):
        assert ia < 1.0


def frames_from(features, labels, per_frame=50):
    xs = [features[i : i + per_frame] for i in range(0, len(features), per_frame)]
    ys = [labels[i : i + per_frame] for i in range(0, len(labels), per_frame)]
    return xs, ys


def test_probe_on_shuffled_labels_is_chance():
    accs = []
    for seed in range(10):
        rng = SeededRng(seed)
        x = rng.normal(size=(2000, 8))
        y = rng.uniform(size=2000) < 0.3
        xt = rng.normal(size=(2000, 8))
        yt = rng.uniform(size=2000) < 0.3
        accs.append(probe_fgs(*frames_from(x, y), *frames_from(xt, yt), FgsProbe(0)))
    assert all(abs(a - 0.5) <= 0.03 for a in accs)


def test_probe_on_separable_features():
    rng = SeededRng(2)
    y = rng.uniform(size=1000) < 0.3
    x = np.hstack([rng.normal(size=(1000, 5)), y[:, None].astype(float)])
    yt = rng.uniform(size=1000) < 0.3
    xt = np.hstack([rng.normal(size=(1000, 5)), yt[:, None].astype(float)])
    probe = FgsProbe(3)
    assert probe_fgs(*frames_from(x, y), *frames_from(xt, yt), probe) >= 0.95
    assert 0.0 <= probe.accuracy <= 1.0 and probe.r_fg == pytest.approx(y.mean(), abs=0.05)


def test_probe_needs_contrast():
    with pytest.raises(ValueError):
        FgsProbe(0).fit([np.zeros((4, 2))], [np.zeros(4, dtype=bool)])
    with pytest.raises(RuntimeError):
        FgsProbe(0).predict(np.zeros((1, 2)))


def test_csv_rows(tmp_path):
    m = np.ones((12, 10), dtype=bool)
    rows = pkr_rows(compute_pkr(m))
    assert rows[-1] == {"layer": "mean", "density": 1.0}
    rep = compute_ioi(m[None], [inst(0, [1, 2], n=10)])
    write_rows(tmp_path / "ioi.csv", ioi_rows(rep))
    with open(tmp_path / "ioi.csv") as fh:
        got = list(csv.DictReader(fh))
    assert got[0] == {"stratum": "all", "ioi": "1.0", "instances": "1"}
    assert got[1]["ioi"] == "n/a" and got[2]["ioi"] == "1.0"  # 2 of 10 patches is medium
    with pytest.raises(ValueError):
        write_rows(tmp_path / "x.csv", [])
