"""Reconstruction losses and the gaze-estimation metric.

The similarity loss applies the reversed mask to reconstruction and target,
flattens the whole batch into one vector pair, and returns 1 - cosine. Its
value therefore depends only on the masked elements.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateLossError, ShapeError
from .masking import Mask, apply_reversed_mask
from .tensor import Tensor, reshape, sqrt, tsum

COSINE_EPS = 1e-12  # guards the norm product; never applied to raise a zero target


class LossKind(enum.Enum):
    SIMILARITY = "similarity"
    MSE = "mse"
    RMSE_MM = "rmse_mm"


@dataclass
class LossValue:
    """Scalar loss plus the graph node training backpropagates through."""

    value: float
    kind: LossKind
    node: Tensor | None = None


def _pair(x_hat, x, mask: Mask) -> tuple[Tensor, Tensor]:
    x_hat = x_hat if isinstance(x_hat, Tensor) else Tensor(x_hat)
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x_hat.shape != x.shape:
        raise ShapeError(f"reconstruction shape {x_hat.shape} != target shape {x.shape}")
    if len(mask) == 0:
        raise DegenerateLossError("mask selects no elements; loss undefined")
    return x_hat, x


def similarity_loss(x_hat, x, mask: Mask) -> LossValue:
    """1 - cosine(masked x_hat, masked x), flattened across the whole batch."""
    x_hat, x = _pair(x_hat, x, mask)
    target_kept = apply_reversed_mask(x, mask)
    if not np.any(target_kept.data):
        raise DegenerateLossError("masked target elements are all zero; cosine undefined")
    recon_kept = apply_reversed_mask(x_hat, mask)
    a = reshape(recon_kept, (recon_kept.size,))
    b = reshape(target_kept, (target_kept.size,))
    dot = tsum(a * b)
    norms = sqrt(tsum(a * a)) * sqrt(tsum(b * b))
    loss = 1.0 - dot / (norms + COSINE_EPS)
    return LossValue(value=float(loss.data), kind=LossKind.SIMILARITY, node=loss)


def mse_loss(x_hat, x, mask: Mask) -> LossValue:
    """Mean squared error over the masked positions only."""
    x_hat, x = _pair(x_hat, x, mask)
    diff = apply_reversed_mask(x_hat - x, mask)
    batch = int(np.prod(x.shape[:-2])) if len(x.shape) > 2 else 1
    count = batch * len(mask)
    loss = tsum(diff * diff) * (1.0 / count)
    return LossValue(value=float(loss.data), kind=LossKind.MSE, node=loss)


def rmse_mm(pred, target) -> LossValue:
    """Root mean squared Euclidean distance between (N, 2) positions, in mm."""
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise ShapeError(f"expected matching (N, 2) arrays, got {pred.shape} and {target.shape}")
    if pred.shape[0] < 1:
        raise ContractError("rmse_mm requires at least one sample")
    sq = np.sum((pred - target) ** 2, axis=1)
    return LossValue(value=float(np.sqrt(sq.mean())), kind=LossKind.RMSE_MM)


def mean_squared_distance(pred: Tensor, target) -> Tensor:
    """Differentiable fine-tuning objective: mean squared Euclidean distance.

    Monotone in RMSE, so minimizing it minimizes the reported metric.
    """
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != label shape {target.shape}")
    diff = pred - target
    return tsum(diff * diff) * (1.0 / pred.shape[0])
