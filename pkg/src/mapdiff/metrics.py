"""Evaluation metrics: confusion-matrix segmentation scores, threshold and
error statistics for depth, and uncertainty-error agreement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

IGNORE_LABEL = 255


@dataclass
class DepthMetrics:
    delta1: float
    delta2: float
    delta3: float
    rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    log10: float


def confusion_matrix(gt, pred, num_classes: int) -> np.ndarray:
    """K x K counts, rows = ground truth, columns = prediction; pixels with
    the ignore label are dropped."""
    gt = np.asarray(gt).reshape(-1)
    pred = np.asarray(pred).reshape(-1)
    if gt.shape != pred.shape:
        raise ContractError("gt and pred must have the same number of pixels")
    keep = gt != IGNORE_LABEL
    gt = gt[keep].astype(np.int64)
    pred = pred[keep].astype(np.int64)
    if np.any((gt < 0) | (gt >= num_classes)) or np.any(
        (pred < 0) | (pred >= num_classes)
    ):
        raise ContractError(f"labels outside [0, {num_classes})")
    idx = gt * num_classes + pred
    counts = np.bincount(idx, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def miou(cm: np.ndarray):
    """(per_class_iou with NaN for classes absent from both sides, mean
    over the present classes)."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.sum() == 0:
        raise ContractError("empty confusion matrix")
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    per_class = np.full(cm.shape[0], np.nan)
    present = union > 0
    per_class[present] = tp[present] / union[present]
    return per_class, float(np.nanmean(per_class))


def mean_accuracy(cm: np.ndarray) -> float:
    """Mean over GT-present classes of the per-class recall."""
    cm = np.asarray(cm, dtype=np.float64)
    gt_counts = cm.sum(axis=1)
    present = gt_counts > 0
    if not present.any():
        raise ContractError("empty confusion matrix")
    return float(np.mean(np.diag(cm)[present] / gt_counts[present]))


def depth_metrics(pred, gt, valid_mask=None) -> DepthMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError("pred and gt shapes must match")
    if valid_mask is None:
        valid_mask = np.ones(gt.shape, dtype=bool)
    mask = np.asarray(valid_mask, dtype=bool)
    if not mask.any():
        raise ContractError("empty valid mask")
    p = pred[mask]
    g = gt[mask]
    if np.any(g <= 0) or np.any(p <= 0):
        raise ContractError("depth values must be positive on the valid mask")
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    dlog = np.log(p) - np.log(g)
    return DepthMetrics(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
        rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean(dlog**2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
    )


def uncertainty_agreement(uncertainty, error_mask) -> float:
    """Point-biserial correlation between per-pixel uncertainty and the
    misprediction indicator; 0 when either side is constant."""
    u = np.asarray(uncertainty, dtype=np.float64).reshape(-1)
    e = np.asarray(error_mask).reshape(-1).astype(np.float64)
    if u.shape != e.shape:
        raise ContractError("uncertainty and error mask shapes must match")
    su = u.std()
    se = e.std()
    if su == 0 or se == 0:
        return 0.0
    return float(np.mean((u - u.mean()) * (e - e.mean())) / (su * se))
