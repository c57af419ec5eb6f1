"""Multi-level displacement loss."""

from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, mean, sum_
from .model import Plan


def level_targets(plan: Plan, phi_gt: np.ndarray) -> list[np.ndarray]:
    """Ground truth per output: the full field on valid rows, then FPS-gathered copies."""
    if phi_gt is None:
        raise ValueError("ground-truth displacement is required")
    phi_gt = np.asarray(phi_gt, dtype=np.float64)
    if phi_gt.shape != (plan.n_rows, 3):
        raise ValueError(f"ground truth shape {phi_gt.shape} != ({plan.n_rows}, 3)")
    valid = phi_gt[plan.vol.rows]
    if not np.isfinite(valid).all():
        raise ValueError("ground truth has non-finite values on valid points")
    return [valid[idx] for idx in plan.vol.to_rows]


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over points of the squared displacement error norm."""
    d = pred - Tensor(target)
    return mean(sum_(d * d, axis=-1))


def multilevel_loss(preds: list, targets: list, weights) -> Tensor:
    weights = list(weights)
    if not (len(preds) == len(targets) == len(weights)):
        raise ValueError("predictions, targets and weights differ in length")
    total = None
    for pred, tgt, w in zip(preds, targets, weights):
        term = mse(pred, tgt) * float(w)
        total = term if total is None else total + term
    return total
