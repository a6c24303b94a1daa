"""Segmentation and depth metrics against independent oracles."""

import numpy as np
import pytest

from mapdiff.errors import ContractError
from mapdiff.metrics import (
    IGNORE_LABEL,
    confusion_matrix,
    depth_metrics,
    mean_accuracy,
    miou,
    uncertainty_agreement,
)


def test_confusion_matrix_counts():
    gt = np.array([[0, 0], [1, 2]])
    pred = np.array([[0, 1], [1, 1]])
    cm = confusion_matrix(gt, pred, 3)
    assert cm.sum() == 4
    assert cm[0, 0] == 1 and cm[0, 1] == 1 and cm[1, 1] == 1 and cm[2, 1] == 1


def test_confusion_matrix_ignore_label():
    gt = np.array([0, IGNORE_LABEL, 1])
    pred = np.array([0, 0, 1])
    cm = confusion_matrix(gt, pred, 2)
    assert cm.sum() == 2


def test_confusion_matrix_contracts():
    with pytest.raises(ContractError):
        confusion_matrix(np.zeros(3), np.zeros(4), 2)
    with pytest.raises(ContractError):
        confusion_matrix(np.array([0, 5]), np.array([0, 0]), 2)


def test_miou_perfect():
    cm = np.diag([10, 20, 30])
    per_class, mean = miou(cm)
    assert np.allclose(per_class, 1.0)
    assert mean == 1.0


def test_miou_all_predicted_as_one_class():
    # 2 balanced classes, everything predicted class 0
    gt = np.array([0] * 50 + [1] * 50)
    pred = np.zeros(100, dtype=int)
    per_class, mean = miou(confusion_matrix(gt, pred, 2))
    assert per_class[0] == pytest.approx(0.5)
    assert per_class[1] == 0.0
    assert mean == pytest.approx(0.25)


def test_miou_absent_class_excluded():
    cm = np.zeros((3, 3), dtype=int)
    cm[0, 0] = 5
    cm[1, 1] = 5
    per_class, mean = miou(cm)
    assert np.isnan(per_class[2])
    assert mean == 1.0


def test_miou_against_set_oracle():
    rng = np.random.default_rng(0)
    gt = rng.integers(0, 4, size=(8, 8))
    pred = rng.integers(0, 4, size=(8, 8))
    per_class, mean = miou(confusion_matrix(gt, pred, 4))
    # independent recomputation with per-pixel index sets
    ious = []
    for k in range(4):
        gset = {i for i, v in enumerate(gt.reshape(-1)) if v == k}
        pset = {i for i, v in enumerate(pred.reshape(-1)) if v == k}
        if gset | pset:
            ious.append(len(gset & pset) / len(gset | pset))
    assert mean == pytest.approx(float(np.mean(ious)), rel=1e-12)


def test_miou_empty_matrix():
    with pytest.raises(ContractError):
        miou(np.zeros((3, 3)))


def test_mean_accuracy():
    gt = np.array([0, 0, 1, 1])
    pred = np.array([0, 1, 1, 1])
    assert mean_accuracy(confusion_matrix(gt, pred, 2)) == pytest.approx(0.75)


def test_depth_identity():
    gt = np.linspace(0.5, 9.5, 64).reshape(8, 8)
    m = depth_metrics(gt, gt)
    assert m.delta1 == 1.0
    assert m.rel == 0.0 and m.rmse == 0.0 and m.rmse_log == 0.0
    assert m.sq_rel == 0.0 and m.log10 == 0.0


def test_depth_threshold_strictness():
    gt = np.full((4, 4), 2.0)
    m = depth_metrics(1.25 * gt, gt)
    assert m.delta1 == 0.0  # strict inequality at the boundary
    assert m.delta2 == 1.0
    assert m.delta3 == 1.0
    assert m.rel == pytest.approx(0.25)


def test_depth_against_per_pixel_oracle():
    rng = np.random.default_rng(1)
    gt = rng.uniform(0.5, 10.0, size=(8, 8))
    pred = gt * rng.uniform(0.6, 1.8, size=(8, 8))
    m = depth_metrics(pred, gt)
    hits = [0, 0, 0]
    rels, sqs, sqerr, loge, l10 = [], [], [], [], []
    for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
        r = max(p / g, g / p)
        for i in range(3):
            hits[i] += r < 1.25 ** (i + 1)
        rels.append(abs(p - g) / g)
        sqs.append((p - g) ** 2 / g)
        sqerr.append((p - g) ** 2)
        loge.append((np.log(p) - np.log(g)) ** 2)
        l10.append(abs(np.log10(p) - np.log10(g)))
    n = gt.size
    assert m.delta1 == pytest.approx(hits[0] / n)
    assert m.delta2 == pytest.approx(hits[1] / n)
    assert m.delta3 == pytest.approx(hits[2] / n)
    assert m.rel == pytest.approx(np.mean(rels))
    assert m.sq_rel == pytest.approx(np.mean(sqs))
    assert m.rmse == pytest.approx(np.sqrt(np.mean(sqerr)))
    assert m.rmse_log == pytest.approx(np.sqrt(np.mean(loge)))
    assert m.log10 == pytest.approx(np.mean(l10))


def test_depth_delta_ordering():
    rng = np.random.default_rng(2)
    for _ in range(20):
        gt = rng.uniform(0.1, 10.0, size=(6, 6))
        pred = gt * np.exp(rng.normal(0, 0.5, size=(6, 6)))
        m = depth_metrics(pred, gt)
        assert m.delta1 <= m.delta2 <= m.delta3


def test_depth_mask_and_contracts():
    gt = np.ones((2, 2))
    pred = np.array([[1.0, 1.0], [1.0, 5.0]])
    mask = np.array([[True, True], [True, False]])
    assert depth_metrics(pred, gt, mask).rel == 0.0
    with pytest.raises(ContractError):
        depth_metrics(pred, gt, np.zeros((2, 2), dtype=bool))
    with pytest.raises(ContractError):
        depth_metrics(np.zeros((2, 2)), gt)
    with pytest.raises(ContractError):
        depth_metrics(np.ones((2, 3)), gt)


def test_uncertainty_agreement_matches_pearson():
    rng = np.random.default_rng(3)
    unc = rng.uniform(0, 1, size=200)
    err = (rng.uniform(0, 1, size=200) < unc).astype(int)  # correlated
    got = uncertainty_agreement(unc, err)
    expected = np.corrcoef(unc, err.astype(float))[0, 1]
    assert got == pytest.approx(expected, rel=1e-9)
    assert got > 0


def test_uncertainty_agreement_constant_sides():
    assert uncertainty_agreement(np.zeros(10), np.arange(10) % 2) == 0.0
    assert uncertainty_agreement(np.arange(10.0), np.ones(10)) == 0.0


def test_uncertainty_agreement_range_and_sign():
    unc = np.array([0.0, 0.0, 1.0, 1.0])
    assert uncertainty_agreement(unc, np.array([0, 0, 1, 1])) == pytest.approx(1.0)
    assert uncertainty_agreement(unc, np.array([1, 1, 0, 0])) == pytest.approx(-1.0)
