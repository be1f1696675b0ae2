"""Recurrent instance module: one kernel vector per lane sharing a proposal point.

An LSTM cell is fed the same 128-dim kernel feature at every step and emits a
(continue, stop) state plus a 134-dim dynamic kernel per step. The stop step
still carries a usable kernel, so m instances take exactly m steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .geometry import LanePolyline
from .heads import KERNEL_DIM, RIM_FEATURE_DIM

STATE_CONTINUE = 0
STATE_STOP = 1

LABEL_CONTINUE = 1
LABEL_STOP = 0


@dataclass
class RIMStep:
    state_logits: torch.Tensor   # (2,) ordered (continue, stop)
    kernel: torch.Tensor         # (KERNEL_DIM,)

    @property
    def stops(self) -> bool:
        return int(torch.argmax(self.state_logits).item()) == STATE_STOP


class RecurrentInstanceModule(nn.Module):
    def __init__(self, feature_dim: int = RIM_FEATURE_DIM, max_steps: int = 5):
        super().__init__()
        if max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        self.feature_dim = feature_dim
        self.max_steps = max_steps
        self.cell = nn.LSTMCell(feature_dim, feature_dim)
        self.state_fc = nn.Linear(feature_dim, 2)
        self.kernel_fc = nn.Linear(feature_dim, KERNEL_DIM)

    def _step(self, feature, state) -> Tuple[RIMStep, tuple]:
        h, c = self.cell(feature[None], state)
        step = RIMStep(state_logits=self.state_fc(h)[0], kernel=self.kernel_fc(h)[0])
        return step, (h, c)

    def _initial_state(self, feature: torch.Tensor) -> tuple:
        zeros = torch.zeros(1, self.feature_dim, device=feature.device,
                            dtype=feature.dtype)
        return zeros, zeros.clone()

    def unroll(self, feature: torch.Tensor, max_steps: int = None) -> List[RIMStep]:
        """Emit steps until the state decides stop, capped at max_steps."""
        if feature.shape != (self.feature_dim,):
            raise ValueError(f"feature must be ({self.feature_dim},)")
        cap = self.max_steps if max_steps is None else max_steps
        if cap < 1:
            raise ValueError("max_steps must be >= 1")
        state = self._initial_state(feature)
        steps = []
        for _ in range(cap):
            step, state = self._step(feature, state)
            steps.append(step)
            if step.stops:
                break
        return steps

    def unroll_forced(self, feature: torch.Tensor, steps: int) -> List[RIMStep]:
        """Exactly `steps` steps regardless of state outputs (teacher forcing)."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        state = self._initial_state(feature)
        out = []
        for _ in range(steps):
            step, state = self._step(feature, state)
            out.append(step)
        return out


def rim_teacher_targets(instances: Sequence[LanePolyline]) -> Tuple[List[int], List[int]]:
    """Ordering and state labels for the instances at one proposal point.

    Returns (order, labels): order[t] is the index of the instance paired
    with step t (ascending mean x, stable); labels are LABEL_CONTINUE for
    all but the last step, which is LABEL_STOP.
    """
    if not instances:
        raise ValueError("a proposal point must carry at least one instance")
    order = list(np.argsort([lane.mean_x for lane in instances], kind="stable"))
    labels = [LABEL_CONTINUE] * (len(instances) - 1) + [LABEL_STOP]
    return [int(i) for i in order], labels
