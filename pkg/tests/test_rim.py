"""Tests for the recurrent instance module."""

import numpy as np
import pytest
import torch

from condlane.geometry import LanePolyline
from condlane.heads import KERNEL_DIM, RIM_FEATURE_DIM
from condlane.losses import rim_state_loss
from condlane.rim import (
    LABEL_CONTINUE,
    LABEL_STOP,
    RecurrentInstanceModule,
    rim_teacher_targets,
)


def lane_at(x_mean):
    return LanePolyline([(x_mean, 200.0), (x_mean, 100.0)])


class TestUnroll:
    def test_always_terminates(self):
        for seed in range(8):
            torch.manual_seed(seed)
            rim = RecurrentInstanceModule(max_steps=5).eval()
            feature = torch.randn(RIM_FEATURE_DIM)
            with torch.no_grad():
                steps = rim.unroll(feature)
            assert 1 <= len(steps) <= 5
            for s in steps[:-1]:
                assert not s.stops

    def test_deterministic(self):
        torch.manual_seed(1)
        rim = RecurrentInstanceModule().eval()
        feature = torch.randn(RIM_FEATURE_DIM)
        with torch.no_grad():
            a = rim.unroll(feature)
            b = rim.unroll(feature.clone())
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            assert torch.equal(sa.kernel, sb.kernel)
            assert torch.equal(sa.state_logits, sb.state_logits)

    def test_first_step_independent_of_cap(self):
        torch.manual_seed(2)
        rim = RecurrentInstanceModule().eval()
        feature = torch.randn(RIM_FEATURE_DIM)
        with torch.no_grad():
            short = rim.unroll(feature, max_steps=1)
            long = rim.unroll(feature, max_steps=5)
        assert torch.equal(short[0].kernel, long[0].kernel)
        assert torch.equal(short[0].state_logits, long[0].state_logits)

    def test_step_shapes(self):
        torch.manual_seed(3)
        rim = RecurrentInstanceModule().eval()
        with torch.no_grad():
            steps = rim.unroll(torch.randn(RIM_FEATURE_DIM))
        assert steps[0].kernel.shape == (KERNEL_DIM,)
        assert steps[0].state_logits.shape == (2,)

    def test_bad_feature_shape(self):
        rim = RecurrentInstanceModule()
        with pytest.raises(ValueError):
            rim.unroll(torch.randn(64))

    def test_bad_cap(self):
        rim = RecurrentInstanceModule()
        with pytest.raises(ValueError):
            rim.unroll(torch.randn(RIM_FEATURE_DIM), max_steps=0)
        with pytest.raises(ValueError):
            RecurrentInstanceModule(max_steps=0)


class TestUnrollForced:
    def test_exact_length(self):
        torch.manual_seed(4)
        rim = RecurrentInstanceModule().eval()
        feature = torch.randn(RIM_FEATURE_DIM)
        for n in (1, 2, 4):
            with torch.no_grad():
                assert len(rim.unroll_forced(feature, n)) == n

    def test_prefix_consistency_with_unroll(self):
        # greedy unroll and forced unroll share the recurrence
        torch.manual_seed(5)
        rim = RecurrentInstanceModule().eval()
        feature = torch.randn(RIM_FEATURE_DIM)
        with torch.no_grad():
            greedy = rim.unroll(feature, max_steps=3)
            forced = rim.unroll_forced(feature, 3)
        for sg, sf in zip(greedy, forced):
            assert torch.equal(sg.kernel, sf.kernel)

    def test_gradients_reach_parameters(self):
        torch.manual_seed(6)
        rim = RecurrentInstanceModule()
        feature = torch.randn(RIM_FEATURE_DIM)
        steps = rim.unroll_forced(feature, 3)
        loss = sum(s.kernel.sum() for s in steps) + rim_state_loss(
            [s.state_logits for s in steps], [1, 1, 0]
        )
        loss.backward()
        for name, p in rim.named_parameters():
            assert p.grad is not None, name
            assert p.grad.abs().sum() > 0, name


class TestTeacherTargets:
    def test_single_instance(self):
        order, labels = rim_teacher_targets([lane_at(100.0)])
        assert order == [0]
        assert labels == [LABEL_STOP]

    def test_three_instances(self):
        order, labels = rim_teacher_targets(
            [lane_at(100.0), lane_at(50.0), lane_at(150.0)]
        )
        assert labels == [LABEL_CONTINUE, LABEL_CONTINUE, LABEL_STOP]
        assert order == [1, 0, 2]

    def test_mean_x_ordering(self):
        order, _ = rim_teacher_targets([lane_at(120.0), lane_at(80.0)])
        assert order == [1, 0]

    def test_stable_on_ties(self):
        order, _ = rim_teacher_targets([lane_at(90.0), lane_at(90.0)])
        assert order == [0, 1]

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            rim_teacher_targets([])
