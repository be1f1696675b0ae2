"""Training objectives: row location, vertical range, offset, focal point, RIM state.

All functions take torch tensors for predictions (gradients flow through them)
and numpy arrays or RowwiseTarget for ground truth. Each returns a scalar
tensor connected to the prediction's graph, including the zero-contribution
edge cases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
import torch

from .geometry import RowwiseTarget

LOG_EPS = 1e-12

COMPONENT_NAMES = ("point", "row", "range", "offset", "state")


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the weighted total: point + alpha*row + beta*range
    + gamma*offset + eta*state."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.4
    eta: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class FocalParams:
    """Exponents of the point focal loss (CornerNet convention)."""

    alpha_exp: float = 2.0
    beta_exp: float = 4.0

    def __post_init__(self):
        if self.alpha_exp <= 0 or self.beta_exp <= 0:
            raise ValueError("focal exponents must be > 0")


def _as_tensor(arr, like: torch.Tensor) -> torch.Tensor:
    return torch.as_tensor(arr, dtype=like.dtype, device=like.device)


def row_loss(exp_loc: torch.Tensor, target: RowwiseTarget) -> torch.Tensor:
    """Mean L1 between the expected column and the target column over valid rows.

    Rows outside the target's vertical range contribute nothing; an
    all-invalid target yields a connected zero.
    """
    valid = torch.as_tensor(target.valid, device=exp_loc.device)
    if not valid.any():
        return exp_loc.sum() * 0.0
    tloc = _as_tensor(np.nan_to_num(target.loc), exp_loc)
    diff = (exp_loc - tloc).abs()
    return diff[valid].mean()


def range_loss(range_logits: torch.Tensor, valid: np.ndarray) -> torch.Tensor:
    """Per-row 2-way classification of lane presence, summed over all rows.

    range_logits: (Y, 2), column 1 scores "row is on the lane". The softmaxed
    probability enters a binary cross-entropy; the sum (not mean) over rows
    follows the formulation, normalization across instances happens upstream.
    """
    if range_logits.ndim != 2 or range_logits.shape[1] != 2:
        raise ValueError("range_logits must have shape (Y, 2)")
    v = torch.softmax(range_logits, dim=1)[:, 1]
    y = _as_tensor(np.asarray(valid, dtype=np.float64), range_logits)
    pos = torch.log(v.clamp_min(LOG_EPS))
    neg = torch.log((1.0 - v).clamp_min(LOG_EPS))
    return -(y * pos + (1.0 - y) * neg).sum()


def offset_loss(pred_offset: torch.Tensor, target: RowwiseTarget) -> torch.Tensor:
    """Mean L1 over the offset supervision region; zero gradient outside it."""
    mask = torch.as_tensor(target.offset_mask, device=pred_offset.device)
    if not mask.any():
        return pred_offset.sum() * 0.0
    tmap = _as_tensor(target.offset_map, pred_offset)
    return (pred_offset - tmap).abs()[mask].mean()


def focal_point_loss(
    pred: torch.Tensor,
    target: Union[np.ndarray, torch.Tensor],
    params: FocalParams = FocalParams(),
) -> torch.Tensor:
    """Penalty-reduced focal loss on the proposal heatmap.

    Cells where the target is exactly 1 are positives; elsewhere the
    (1 - target)^beta factor down-weights the negative term near peaks.
    Normalized by the positive count, with a floor of 1 for empty scenes.
    """
    t = _as_tensor(np.asarray(target) if isinstance(target, np.ndarray) else target, pred)
    if t.shape != pred.shape:
        raise ValueError(f"heatmap shape mismatch: {tuple(pred.shape)} vs {tuple(t.shape)}")
    pos = t == 1.0
    n_pos = max(int(pos.sum().item()), 1)
    p = pred.clamp(LOG_EPS, 1.0 - LOG_EPS)
    pos_term = (1.0 - p).pow(params.alpha_exp) * torch.log(p)
    neg_term = (1.0 - t).pow(params.beta_exp) * p.pow(params.alpha_exp) * torch.log(1.0 - p)
    total = torch.where(pos, pos_term, neg_term).sum()
    return -total / n_pos


def rim_state_loss(
    state_logits: Sequence[torch.Tensor], labels: Sequence[int]
) -> torch.Tensor:
    """Mean binary cross-entropy over all recurrence steps in the batch.

    Each element of state_logits is a (2,) tensor ordered (continue, stop);
    labels hold 1 for continue and 0 for stop.
    """
    if len(state_logits) != len(labels):
        raise ValueError("state_logits and labels must pair up")
    if len(state_logits) == 0:
        return torch.zeros(())
    logits = torch.stack(list(state_logits))
    s = torch.softmax(logits, dim=1)[:, 0]
    y = _as_tensor(np.asarray(labels, dtype=np.float64), logits)
    pos = torch.log(s.clamp_min(LOG_EPS))
    neg = torch.log((1.0 - s).clamp_min(LOG_EPS))
    return -(y * pos + (1.0 - y) * neg).mean()


def total_loss(
    components: Mapping[str, torch.Tensor], weights: LossWeights = LossWeights()
) -> torch.Tensor:
    """Weighted sum of the five named components.

    components must carry exactly the keys "point", "row", "range",
    "offset", "state".
    """
    missing = set(COMPONENT_NAMES) - set(components)
    extra = set(components) - set(COMPONENT_NAMES)
    if missing or extra:
        raise ValueError(f"bad component keys: missing={sorted(missing)} extra={sorted(extra)}")
    return (
        components["point"]
        + weights.alpha * components["row"]
        + weights.beta * components["range"]
        + weights.gamma * components["offset"]
        + weights.eta * components["state"]
    )
