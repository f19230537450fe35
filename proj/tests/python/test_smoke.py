"""Smoke tests for the python bindings."""

import numpy as np
import pytest

import cmtm


def test_version():
    assert cmtm.__version__ == "0.1.0"


def test_positional_embedding_shape_and_origin():
    table = cmtm.positional_embedding(2, 3, 8)
    assert table.shape == (6, 8)
    # cosine channel at frequency 0, position (0, 0)
    assert table[0, 1] == pytest.approx(1.0)
    again = cmtm.positional_embedding(2, 3, 8)
    np.testing.assert_array_equal(table, again)
    with pytest.raises(ValueError):
        cmtm.positional_embedding(2, 3, 7)


def test_flow_to_rgb_endpoints():
    flow = np.zeros((2, 2, 2), dtype=np.float32)
    rgb = cmtm.flow_to_rgb(flow, 4.0)
    np.testing.assert_allclose(rgb[..., 0], 0.5)
    np.testing.assert_allclose(rgb[..., 1], 0.5)
    np.testing.assert_allclose(rgb[..., 2], 0.0)

    flow[0, 0, 0] = 4.0
    rgb = cmtm.flow_to_rgb(flow, 4.0)
    assert rgb[0, 0, 0] == pytest.approx(1.0)
    assert rgb[0, 0, 2] == pytest.approx(1.0)


def test_metrics_analytic_cases():
    gt = np.zeros((8, 8), dtype=np.uint8)
    gt[2:6, 2:6] = 1
    assert cmtm.region_similarity(gt, gt) == 1.0
    half = np.zeros_like(gt)
    half[2:6, 2:4] = 1
    assert cmtm.region_similarity(half, gt) == 0.5
    assert cmtm.boundary_accuracy(gt, gt, tol_px=1) == 1.0
    shifted = np.roll(gt, 1, axis=1)
    assert cmtm.boundary_accuracy(shifted, gt, tol_px=1) == 1.0


def test_sample_mask_plan_counts_and_determinism():
    retain, masked = cmtm.sample_mask_plan(10, 0.4, seed=3)
    assert retain.shape == (10,)
    assert masked.shape == (4,)
    assert retain.sum() == 6
    assert all(retain[i] == 0 for i in masked)
    retain2, masked2 = cmtm.sample_mask_plan(10, 0.4, seed=3)
    np.testing.assert_array_equal(masked, masked2)
    with pytest.raises(ValueError):
        cmtm.sample_mask_plan(10, 1.5)


def test_generate_sequence_structure():
    frames = cmtm.generate_sequence(height=32, width=32, shape_vx=2.0, shape_vy=0.0,
                                    frames=4, seed=11)
    assert len(frames) == 4
    sample = frames[0]
    assert sample["frame"].shape == (32, 32, 3)
    assert sample["flow"].shape == (32, 32, 2)
    assert sample["flow_rgb"].shape == (32, 32, 3)
    assert sample["gt_mask"].shape == (32, 32)
    mask = sample["gt_mask"].astype(bool)
    assert mask.any()
    # exact analytic flow: shape velocity inside, background velocity outside
    np.testing.assert_array_equal(sample["flow"][mask][:, 0], 2.0)
    np.testing.assert_array_equal(sample["flow"][~mask][:, 0], 0.0)


def test_modulator_eval_deterministic_and_mask_counts():
    mod = cmtm.Modulator(channels=8, blocks=1, mask_ratio=0.4, seed=5)
    f_app = np.random.default_rng(0).normal(size=(4, 4, 8)).astype(np.float32)
    f_mo = np.random.default_rng(1).normal(size=(4, 4, 8)).astype(np.float32)

    out_a1, out_m1, plan_a1, plan_m1 = mod.forward(f_app, f_mo, train=False)
    out_a2, out_m2, _, _ = mod.forward(f_app, f_mo, train=False)
    np.testing.assert_array_equal(out_a1, out_a2)
    np.testing.assert_array_equal(out_m1, out_m2)
    assert out_a1.shape == (4, 4, 8)
    assert plan_a1 is None and plan_m1 is None

    _, _, plan_a, plan_m = mod.forward(f_app, f_mo, train=True, seed=9)
    # floor(0.4 * 16) = 6 masked tokens per stream
    assert plan_a.shape == (6,)
    assert plan_m.shape == (6,)

    zero = cmtm.Modulator(channels=8, blocks=1, mask_ratio=0.0, seed=5)
    t_app, t_mo, _, _ = zero.forward(f_app, f_mo, train=True, seed=2)
    e_app, e_mo, _, _ = zero.forward(f_app, f_mo, train=False)
    np.testing.assert_array_equal(t_app, e_app)
    np.testing.assert_array_equal(t_mo, e_mo)


def test_default_config_round_trip_text():
    text = cmtm.default_config()
    assert "cmtm.mask_ratio=0.4" in text
    assert "optim.steps=500" in text
