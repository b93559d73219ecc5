import numpy as np
import pytest
from dataclasses import replace

from vpp.metrics import compute_pkr
from vpp.pipeline import (ABLATION_ROWS, ConfigError, NumericalError, PipelineConfig, VppModel,
                          analytic_ledger, analytic_profile, forward_video, mask_images, render_masks, run_video,
                          scene_switch_experiment, solve_schedule, train_heads)
from vpp.synth_video import InstanceSpec, SynthScenario, default_suite, generate, read_pgm
from vpp.tensor_math import SeededRng


@pytest.fixture(scope="module")
def video():
    return generate(default_suite(1)[0])


@pytest.fixture(scope="module")
def briefly_trained():
    model = VppModel.init(PipelineConfig())
    train_heads(model, [generate(s) for s in default_suite(0)], steps=60)
    return model


def test_config_validation():
    for kw in (dict(sm_indices=(3, 3)), dict(sm_indices=(12,)), dict(mapsm_index=3),
               dict(mapsm_index=1, ref_layer=1), dict(goal_pkr=0.0), dict(lr=0.0), dict(momentum=1.0)):
        with pytest.raises(ConfigError):
            PipelineConfig(**kw)
    assert PipelineConfig(sm_indices=(9, 3, 6)).sm_indices == (3, 6, 9)


@pytest.mark.parametrize("goal,topk", [(0.55, 0.7), (0.40, 0.6)])
def test_schedule_hits_goal(goal, topk):
    cfg = PipelineConfig(goal_pkr=goal)
    k, rho = solve_schedule(cfg)
    assert k == topk and 0 < rho < 1
    prof = analytic_profile(cfg, k, rho)
    assert prof.mean() == pytest.approx(goal, abs=1e-9)
    # steps after blocks 1, 3, 6 and 9; flat in between
    assert list(prof[:2]) == [1.0, k]
    assert prof[3] == pytest.approx(rho) and prof[6] == pytest.approx(rho**2) and prof[9] == pytest.approx(rho**3)
    assert np.all(np.diff(prof) <= 0)


def test_default_deepest_density():
    cfg = PipelineConfig()
    _, rho = solve_schedule(cfg)
    assert analytic_profile(cfg, 0.7, rho)[-1] == pytest.approx(rho**3)
    assert 0.25 < rho**3 < 0.35


def test_const_keep_ratio_and_dense_layouts():
    cfg = PipelineConfig(sm_indices=())
    k, rho = solve_schedule(cfg)
    prof = analytic_profile(cfg, k, 0.5)
    assert rho is None and prof.mean() == pytest.approx(0.55, abs=1e-9)
    assert np.all(prof[1:] == prof[1])
    assert solve_schedule(PipelineConfig(mapsm_index=None, sm_indices=())) == (1.0, None)
    with pytest.raises(ConfigError):
        solve_schedule(PipelineConfig(goal_pkr=0.01))


def test_no_pruning_is_dense(video):
    model = VppModel.init(PipelineConfig(mapsm_index=None, sm_indices=()))
    art = run_video(model, video)
    assert art.pkr.mean == 1.0 and art.masks.all()
    assert art.ioi.overall == 1.0


def test_const_kr_run_is_flat_after_first_block(video):
    model = VppModel.init(PipelineConfig(sm_indices=()))
    art = run_video(model, video)
    lm = art.layer_masks
    assert np.all(lm[0] == True)  # frame 0 has no reference
    for t in range(1, video.n_frames):
        assert lm[t, 0].all()
        assert all(np.array_equal(lm[t, 1], lm[t, l]) for l in range(2, 12))
        assert lm[t, 1].sum() == int(np.ceil(model.topk * 100 - 1e-9))


def test_masks_monotone_and_recount(video):
    art = run_video(VppModel.init(PipelineConfig()), video)
    assert np.all(art.masks[:, 1:] <= art.masks[:, :-1])
    dumped = np.frombuffer(np.ascontiguousarray(art.masks, dtype=np.uint8).tobytes(), dtype=np.uint8)
    recount = dumped.reshape(art.masks.shape)[:, :-1].astype(bool)
    assert compute_pkr(recount).mean == art.pkr.mean
    assert np.array_equal(art.profile, recount.mean(axis=(0, 2)))


def test_truncation_causality():
    sc = default_suite(3)[1]
    long_v = generate(sc)
    short_v = generate(replace(sc, frames=5))
    assert np.array_equal(long_v.frames[:5], short_v.frames)
    model = VppModel.init(PipelineConfig())
    a = forward_video(model, long_v, SeededRng(1))
    b = forward_video(model, short_v, SeededRng(1))
    assert all(np.array_equal(x.masks, y.masks) for x, y in zip(a[:5], b))


def test_untrained_heads_look_random():
    model = VppModel.init(PipelineConfig())
    arts = [run_video(model, generate(s)) for s in default_suite(1)]
    ioi = np.mean([a.ioi.overall for a in arts])
    rnd = np.mean([a.random_ioi.overall for a in arts])
    assert abs(ioi - rnd) <= 0.05


def test_render_shading(tmp_path):
    cfg = PipelineConfig()
    masks = np.ones((1, 13, 100), dtype=bool)
    masks[0, 1:, 0] = False   # gone from block 2 on: survives index 1..L never
    masks[0, 9:, 1] = False   # survives indices 1..8
    img = mask_images(masks, cfg.vit)
    assert img[0, 0, 0] == 0
    assert img[0, 0, 4] == 170
    assert img[0, 20, 20] == 255
    art = run_video(VppModel.init(PipelineConfig(mapsm_index=None, sm_indices=())), generate(default_suite(0)[0]))
    paths = render_masks(art, tmp_path, cfg.vit)
    assert len(paths) == 8 and np.all(read_pgm(paths[0]) == 255)


def test_checkpoint_roundtrip(tmp_path, video):
    model = VppModel.init(PipelineConfig(seed=4))
    model.save(tmp_path / "c.vppw")
    back = VppModel.load(PipelineConfig(seed=4), tmp_path / "c.vppw")
    assert np.array_equal(run_video(model, video).masks, run_video(back, video).masks)
    with pytest.raises(ConfigError):
        VppModel.load(PipelineConfig(mapsm_index=None, sm_indices=(0, 3, 6, 9)), tmp_path / "c.vppw")


def test_training_curves_and_divergence():
    model = VppModel.init(PipelineConfig())
    vs = [generate(s) for s in default_suite(0, count=2)]
    res = train_heads(model, vs, steps=3)
    assert [r["step"] for r in res.curves] == [0, 1, 2]
    assert {"task", "l_sp_map", "l_sp_sm0", "total", "pkr", "density_sm3", "mean_p"} <= set(res.curves[0])
    model.map_head.w2[:] = np.nan
    with pytest.raises(NumericalError):
        train_heads(model, vs, steps=1)


def test_mask_sizes_are_not_clamped(briefly_trained):
    # only the batch mean is regularised, so per-frame sizes move with content
    small = SynthScenario(seed=7, instances=(InstanceSpec("rect", 0.05, (0.5, 0.0)),))
    large = SynthScenario(seed=7, instances=(InstanceSpec("rect", 0.3, (0.5, 0.0)),))
    sizes = []
    for sc in (small, large):
        art = run_video(briefly_trained, generate(sc))
        per_frame = art.masks[1:, [3, 6, 9]].sum(axis=2)
        assert np.all(per_frame.std(axis=0) > 0)
        sizes.append(per_frame.sum())
    assert sizes[0] != sizes[1]


def test_flop_ledger_accounts_heads():
    ledger, dense = analytic_ledger(PipelineConfig())
    assert set(ledger.overhead) == {"mapsm", "sm3", "sm6", "sm9"}
    assert ledger.total < dense.total
    assert dense.overhead_total == 0


def test_scene_switch_needs_blank_prefix(briefly_trained):
    with pytest.raises(ConfigError):
        scene_switch_experiment(briefly_trained, default_suite(0)[0])
    rep = scene_switch_experiment(briefly_trained, default_suite(1, blank_prefix=3)[0])
    assert rep.ioi[:3] == [None, None, None] and rep.random[:3] == [None, None, None]
    assert all(v is not None for v in rep.ioi[3:])


def test_ablation_rows_cover_grid():
    names = [r[0] for r in ABLATION_ROWS]
    assert len(names) == 5 and sum(r[1] is None for r in ABLATION_ROWS) == 2
