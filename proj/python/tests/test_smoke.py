import json
import math

import numpy as np
import pytest

import reachcal

TINY = {
    "dataset": {"N": 400, "K": 3, "dt": 0.1},
    "seed": 4,
    "denoiser": {"hidden_dim": 16, "layers": 1, "embed_dim": 8, "epochs": 2, "batch_size": 128},
    "score": {"repeats": 2},
    "evaluation": {"cells": 16},
}


def test_hb_pvalue_zero_risk():
    assert reachcal.hb_pvalue(0.0, 100, 0.05) == pytest.approx(0.95**100, rel=1e-12)


def test_min_calibration_size():
    assert reachcal.min_calibration_size(0.05, 0.2 / 30) == 98


def test_calibrate_uniform_square():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(500, 2))
    scores = np.hypot(pts[:, 0], pts[:, 1]).tolist()
    (q,) = reachcal.calibrate([scores], alpha=0.1, delta=0.2)
    assert q is not None
    assert 0.9 < q <= max(scores)
    assert reachcal.calibrate([scores[:10]], alpha=0.05, delta=0.2) == [None]


def test_simulate_duffing_starts_at_initial_state():
    traj = reachcal.simulate_duffing(np.array([0.5, -0.25]), K=5)
    assert traj.shape == (5, 2)
    np.testing.assert_array_equal(traj[0], [0.5, -0.25])


def test_generate_dataset_shape_and_determinism():
    cfg = json.dumps(TINY)
    a = reachcal.generate_dataset(cfg)
    b = reachcal.generate_dataset(cfg)
    assert a.shape == (400, 3, 2)
    np.testing.assert_array_equal(a, b)
    assert np.all(np.abs(a[:, 0, :]) <= 1.0)


def test_unknown_config_key_raises():
    with pytest.raises(reachcal.ConfigError, match="dataset.M"):
        reachcal.generate_dataset(json.dumps({"dataset": {"M": 3}}))


def test_christoffel_scores_trace_identity():
    rng = np.random.default_rng(1)
    samples = rng.normal(size=(300, 2))
    scores = reachcal.christoffel_scores(samples, samples, 2)
    assert np.mean(scores) == pytest.approx(6.0, rel=1e-4)


def test_iou_precision():
    pred = [True, True, False, False]
    ref = [False, True, True, False]
    iou, precision, recall = reachcal.iou_precision(pred, ref, 2, 2)
    assert iou == pytest.approx(1 / 3)
    assert precision == pytest.approx(0.5)
    assert recall == pytest.approx(0.5)


def test_pipeline_end_to_end():
    p = reachcal.Pipeline(json.dumps(TINY))
    data = p.generate()
    assert data.shape == (400, 3, 2)
    loss = p.train()
    assert len(loss) == 3
    q = p.calibrate()
    assert len(q) == 3 and all(v is not None for v in q)
    report = p.evaluate()
    assert report["steps"] == [0, 1, 2]
    assert 0.0 <= report["fnr_max"] <= 1.0
    assert 0.0 <= report["mean_iou"] <= 1.0
    s = p.score(data[:5, 1, :].astype(float), 1)
    assert len(s) == 5 and all(math.isfinite(v) for v in s)


def test_pipeline_stage_order_enforced():
    p = reachcal.Pipeline(json.dumps(TINY))
    with pytest.raises(reachcal.ContractViolation):
        p.calibrate()
