"""End-to-end assembly: target encoding, training steps, inference, evaluation.

Training gathers kernel features at ground-truth proposal cells and, with RIM
enabled, teacher-forces the recurrence to the labeled instance count. The
logged total is recomputed from the logged component floats with the same
weights, so the weighted-sum identity holds exactly in every record.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .geometry import (
    GridSpec,
    LanePolyline,
    ProposalTarget,
    RowwiseTarget,
    decode_lane,
    encode_rowwise_targets,
    extract_proposal_points,
    render_proposal_heatmap,
)
from .heads import conditional_forward, gather_kernels, row_expected_abscissa
from .losses import (
    COMPONENT_NAMES,
    FocalParams,
    LossWeights,
    focal_point_loss,
    offset_loss,
    range_loss,
    rim_state_loss,
    row_loss,
)
from .metrics import EvalReport, MatchConfig, match_and_score
from .model import LaneDetector
from .rim import rim_teacher_targets
from .synth import Sample


@dataclass
class SampleTargets:
    proposal: ProposalTarget
    rowwise: List[RowwiseTarget]   # aligned with the sample's lane list


def encode_sample(sample: Sample, cfg: ModelConfig) -> SampleTargets:
    shape_grid = cfg.shape_grid()
    proposal = render_proposal_heatmap(
        sample.lanes, cfg.proposal_grid(), sigma=cfg.heatmap_sigma
    )
    rowwise = [
        encode_rowwise_targets(lane, shape_grid, omega=cfg.omega)
        for lane in sample.lanes
    ]
    return SampleTargets(proposal=proposal, rowwise=rowwise)


def batch_images(samples: Sequence[Sample]) -> torch.Tensor:
    return torch.stack([torch.from_numpy(s.image) for s in samples])


def compute_losses(
    model: LaneDetector,
    samples: Sequence[Sample],
    targets: Sequence[SampleTargets],
    weights: LossWeights = LossWeights(),
    focal: FocalParams = FocalParams(),
) -> Tuple[torch.Tensor, dict]:
    """Returns (differentiable total, per-component float breakdown)."""
    cfg = model.config
    out = model(batch_images(samples))
    zero = out.heatmap.sum() * 0.0

    point_terms = []
    row_terms = []
    range_terms = []
    offset_terms = []
    state_logits = []
    state_labels = []

    for i, (sample, target) in enumerate(zip(samples, targets)):
        point_terms.append(
            focal_point_loss(out.heatmap[i], target.proposal.heatmap, focal)
        )
        shared = out.shared[i]
        inst_row = []
        inst_range = []
        inst_offset = []
        for point in target.proposal.points:
            (feature,) = gather_kernels(out.param_map[i], [(point.x, point.y)])
            instances = [sample.lanes[j] for j in point.lane_indices]
            order, labels = rim_teacher_targets(instances)
            if model.rim is not None:
                steps = model.rim.unroll_forced(feature, len(instances))
                kernels = [s.kernel for s in steps]
                state_logits.extend(s.state_logits for s in steps)
                state_labels.extend(labels)
                paired = [target.rowwise[point.lane_indices[j]] for j in order]
            else:
                # without the recurrence only one kernel exists per cell:
                # train it on the first instance in the canonical order
                kernels = [feature]
                paired = [target.rowwise[point.lane_indices[order[0]]]]
            for kernel, row_target in zip(kernels, paired):
                loc, off = conditional_forward(shared, kernel)
                exp = row_expected_abscissa(loc)[0]
                inst_row.append(row_loss(exp, row_target))
                inst_range.append(
                    range_loss(model.shape_head.vertical_range(loc), row_target.valid)
                )
                if cfg.offset_enabled:
                    inst_offset.append(offset_loss(off[0], row_target))
        if inst_row:
            row_terms.append(torch.stack(inst_row).mean())
            range_terms.append(torch.stack(inst_range).mean())
        if inst_offset:
            offset_terms.append(torch.stack(inst_offset).mean())

    point_t = torch.stack(point_terms).mean() if point_terms else zero
    row_t = torch.stack(row_terms).mean() if row_terms else zero
    range_t = torch.stack(range_terms).mean() if range_terms else zero
    offset_t = torch.stack(offset_terms).mean() if offset_terms else zero
    state_t = rim_state_loss(state_logits, state_labels) if state_logits else zero

    total = (
        point_t
        + weights.alpha * row_t
        + weights.beta * range_t
        + weights.gamma * offset_t
        + weights.eta * state_t
    )
    breakdown = {
        "point": float(point_t.item()),
        "row": float(row_t.item()),
        "range": float(range_t.item()),
        "offset": float(offset_t.item()),
        "state": float(state_t.item()),
    }
    return total, breakdown


def breakdown_total(breakdown: dict, weights: LossWeights = LossWeights()) -> float:
    return (
        breakdown["point"]
        + weights.alpha * breakdown["row"]
        + weights.beta * breakdown["range"]
        + weights.gamma * breakdown["offset"]
        + weights.eta * breakdown["state"]
    )


def train_step(
    model: LaneDetector,
    optimizer: torch.optim.Optimizer,
    samples: Sequence[Sample],
    targets: Sequence[SampleTargets],
    weights: LossWeights = LossWeights(),
    focal: FocalParams = FocalParams(),
) -> Tuple[float, dict]:
    """One optimizer update; returns (logged total, component breakdown)."""
    model.train()
    optimizer.zero_grad()
    loss, breakdown = compute_losses(model, samples, targets, weights, focal)
    if not np.isfinite(list(breakdown.values())).all():
        raise RuntimeError(f"non-finite loss, components: {breakdown}")
    loss.backward()
    optimizer.step()
    return breakdown_total(breakdown, weights), breakdown


def fit(
    model: LaneDetector,
    samples: Sequence[Sample],
    train_cfg: TrainConfig,
    log: Optional[Callable[[dict], None]] = None,
    epoch_end: Optional[Callable[[int, int], None]] = None,
    start_step: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
) -> List[dict]:
    """Epoch loop with step-decayed Adam; returns the loss history records.

    Pass a restored optimizer (with start_step) to continue a previous run;
    the decay schedule is then re-applied over the configured epochs.
    """
    targets = [encode_sample(s, model.config) for s in samples]
    if optimizer is None:
        optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    milestone = int(train_cfg.decay_at * train_cfg.epochs)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(
        optimizer,
        milestones=[milestone] if 0 < milestone < train_cfg.epochs else [],
        gamma=train_cfg.decay_gamma,
    )
    rng = np.random.default_rng(train_cfg.seed)
    torch.manual_seed(train_cfg.seed)
    history = []
    step = start_step
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(order), train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            total, breakdown = train_step(
                model, optimizer,
                [samples[i] for i in idx], [targets[i] for i in idx],
                train_cfg.weights, train_cfg.focal,
            )
            step += 1
            record = {
                "step": step,
                "epoch": epoch,
                "lr": optimizer.param_groups[0]["lr"],
                "total": total,
                **breakdown,
            }
            history.append(record)
            if log is not None:
                log(record)
        scheduler.step()
        if epoch_end is not None:
            epoch_end(epoch, step)
    return history


def infer(
    model: LaneDetector,
    image: np.ndarray,
    threshold: Optional[float] = None,
    rim_max_steps: Optional[int] = None,
    use_offsets: Optional[bool] = None,
) -> List[Tuple[LanePolyline, float]]:
    """Detections for one (3, H, W) image, ordered by proposal score.

    rim_max_steps caps the recurrence (1 disables multi-instance emission);
    use_offsets=False decodes with the cell-center fallback instead of the
    predicted offsets. Both exist for ablations and default to the config.
    """
    cfg = model.config
    thr = cfg.proposal_threshold if threshold is None else threshold
    offsets_on = cfg.offset_enabled if use_offsets is None else use_offsets
    shape_grid = cfg.shape_grid()
    model.eval()
    with torch.no_grad():
        out = model(torch.from_numpy(np.ascontiguousarray(image)))
        heat = out.heatmap[0].numpy()
        points = extract_proposal_points(heat, thr)
        detections = []
        for x, y, score in points:
            (feature,) = gather_kernels(out.param_map[0], [(x, y)])
            if model.rim is not None:
                steps = model.rim.unroll(feature, max_steps=rim_max_steps)
                kernels = [s.kernel for s in steps]
            else:
                kernels = [feature]
            for kernel in kernels:
                loc, off = conditional_forward(out.shared[0], kernel)
                exp = row_expected_abscissa(loc)[0].numpy()
                logits = model.shape_head.vertical_range(loc).numpy()
                offsets = off[0].numpy() if offsets_on else None
                lane = decode_lane(exp, logits, offsets, shape_grid)
                if lane is not None:
                    detections.append((lane, float(score)))
    return detections


def evaluate(
    model: LaneDetector,
    samples: Sequence[Sample],
    iou_threshold: float = 0.5,
    threshold: Optional[float] = None,
) -> EvalReport:
    preds = []
    gts = []
    categories = []
    for sample in samples:
        detections = infer(model, sample.image, threshold=threshold)
        preds.append([lane for lane, _ in detections])
        gts.append(list(sample.lanes))
        categories.append(sample.category)
    cfg = MatchConfig.for_image(model.config.canvas, iou_threshold=iou_threshold)
    return match_and_score(preds, gts, cfg, categories=categories)
