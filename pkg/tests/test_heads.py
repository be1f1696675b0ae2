"""Tests for proposal and conditional shape heads."""

import numpy as np
import pytest
import torch

from condlane.geometry import GridSpec, ImageSpec, encode_rowwise_targets, expected_abscissa
from condlane.heads import (
    KERNEL_DIM,
    RIM_FEATURE_DIM,
    SHARED_CHANNELS,
    InstancePrediction,
    ProposalHead,
    ShapeHead,
    conditional_forward,
    coordinate_channels,
    gather_kernels,
    row_expected_abscissa,
    split_kernel,
)
from condlane.losses import offset_loss, range_loss, row_loss, total_loss
from helpers import gradient_rel_error, random_lane

torch.manual_seed(0)


class TestProposalHead:
    def test_output_shapes_reference(self):
        head = ProposalHead(in_channels=64).eval()
        with torch.no_grad():
            heat, params = head(torch.randn(64, 20, 50))
        assert heat.shape == (1, 20, 50)
        assert params.shape == (KERNEL_DIM, 20, 50)

    def test_heatmap_open_interval(self):
        head = ProposalHead().eval()
        with torch.no_grad():
            heat, _ = head(torch.randn(64, 8, 12) * 10)
        assert torch.all(heat > 0) and torch.all(heat < 1)

    def test_param_channels_modes(self):
        assert ProposalHead(param_channels=RIM_FEATURE_DIM).param_branch[-1].out_channels == 128
        assert ProposalHead(param_channels=KERNEL_DIM).param_branch[-1].out_channels == 134
        with pytest.raises(ValueError):
            ProposalHead(param_channels=100)

    def test_param_map_unbounded(self):
        # no activation on the parameter branch: values exceed (0, 1)
        head = ProposalHead().eval()
        with torch.no_grad():
            _, params = head(torch.randn(64, 8, 12) * 20)
        assert params.min() < 0 or params.max() > 1

    def test_batched(self):
        head = ProposalHead().eval()
        with torch.no_grad():
            heat, params = head(torch.randn(2, 64, 8, 12))
        assert heat.shape == (2, 1, 8, 12)
        assert params.shape == (2, KERNEL_DIM, 8, 12)


class TestSharedShapeFeature:
    def test_coordinate_channels_exact(self):
        head = ShapeHead(grid_cols=100).eval()
        with torch.no_grad():
            shared = head.shared_forward(torch.randn(64, 40, 100))
        assert shared.shape == (SHARED_CHANNELS, 40, 100)
        cols = torch.arange(100, dtype=torch.float32) / 99.0
        rows = torch.arange(40, dtype=torch.float32) / 39.0
        assert torch.equal(shared[64, 7], cols)
        assert torch.equal(shared[65, :, 13], rows)

    def test_coordinate_helper_range(self):
        c = coordinate_channels(5, 9)
        assert c.shape == (2, 5, 9)
        assert c.min() == 0.0 and c.max() == 1.0

    def test_single_cell_guard(self):
        c = coordinate_channels(1, 1)
        assert torch.all(c == 0.0)


class TestConditionalForward:
    def shared(self, rows=6, cols=10, seed=1):
        g = torch.Generator().manual_seed(seed)
        learned = torch.randn(64, rows, cols, generator=g, dtype=torch.float64)
        coords = coordinate_channels(rows, cols, dtype=torch.float64)
        return torch.cat([learned, coords])

    def test_zero_kernel_gives_biases(self):
        shared = self.shared()
        kernel = torch.zeros(KERNEL_DIM, dtype=torch.float64)
        kernel[66] = 3.5
        kernel[133] = -1.25
        loc, off = conditional_forward(shared, kernel)
        assert torch.all(loc == 3.5)
        assert torch.all(off == -1.25)

    def test_coordinate_passthrough(self):
        shared = self.shared(rows=4, cols=8)
        kernel = torch.zeros(KERNEL_DIM, dtype=torch.float64)
        kernel[64] = 1.0  # select the x-coordinate channel
        loc, _ = conditional_forward(shared, kernel)
        expect = torch.arange(8, dtype=torch.float64) / 7.0
        assert torch.allclose(loc[0, 2], expect)

    def test_linearity(self):
        shared = self.shared()
        g = torch.Generator().manual_seed(2)
        k1 = torch.randn(KERNEL_DIM, generator=g, dtype=torch.float64)
        k2 = torch.randn(KERNEL_DIM, generator=g, dtype=torch.float64)
        loc12, off12 = conditional_forward(shared, k1 + k2)
        loc1, off1 = conditional_forward(shared, k1)
        loc2, off2 = conditional_forward(shared, k2)
        assert torch.allclose(loc12, loc1 + loc2, rtol=1e-5, atol=1e-9)
        assert torch.allclose(off12, off1 + off2, rtol=1e-5, atol=1e-9)
        loc_s, _ = conditional_forward(shared, 2.5 * k1)
        assert torch.allclose(loc_s, 2.5 * loc1, rtol=1e-5, atol=1e-9)

    def test_instance_independence(self):
        shared = self.shared()
        g = torch.Generator().manual_seed(3)
        k1 = torch.randn(KERNEL_DIM, generator=g, dtype=torch.float64)
        k2 = torch.randn(KERNEL_DIM, generator=g, dtype=torch.float64)
        loc_a, _ = conditional_forward(shared, k1)
        # recompute k1's maps after "processing" another instance
        conditional_forward(shared, k2)
        loc_b, _ = conditional_forward(shared, k1)
        assert torch.equal(loc_a, loc_b)

    def test_wrong_kernel_length(self):
        with pytest.raises(ValueError):
            conditional_forward(self.shared(), torch.zeros(128, dtype=torch.float64))

    def test_split_layout(self):
        k = torch.arange(KERNEL_DIM, dtype=torch.float64)
        w_loc, b_loc, w_off, b_off = split_kernel(k)
        assert torch.equal(w_loc, k[:66])
        assert b_loc == 66.0
        assert torch.equal(w_off, k[67:133])
        assert b_off == 133.0


class TestRowExpectedAbscissa:
    def test_matches_reference_simplex(self):
        g = torch.Generator().manual_seed(4)
        logits = torch.randn(1, 6, 10, generator=g, dtype=torch.float64)
        exp = row_expected_abscissa(logits)[0]
        for i in range(6):
            p = torch.softmax(logits[0, i], dim=0).numpy()
            assert exp[i].item() == pytest.approx(expected_abscissa(p), abs=1e-9)

    def test_simplex_and_range(self):
        g = torch.Generator().manual_seed(5)
        logits = torch.randn(3, 8, 12, generator=g)
        p = torch.softmax(logits, dim=-1)
        assert torch.allclose(p.sum(-1), torch.ones(3, 8))
        exp = row_expected_abscissa(logits)
        assert torch.all(exp >= 0) and torch.all(exp <= 11)


class TestVerticalRange:
    def test_identical_rows_identical_logits(self):
        head = ShapeHead(grid_cols=10).eval()
        row = torch.randn(10)
        loc = row.expand(6, 10)[None]
        logits = head.vertical_range(loc)
        assert logits.shape == (6, 2)
        assert torch.allclose(logits, logits[0].expand(6, 2))

    def test_row_permutation_equivariance(self):
        head = ShapeHead(grid_cols=10).eval()
        loc = torch.randn(1, 6, 10)
        perm = torch.tensor([3, 1, 5, 0, 2, 4])
        assert torch.allclose(
            head.vertical_range(loc[:, perm]), head.vertical_range(loc)[perm]
        )

    def test_wrong_width_raises(self):
        head = ShapeHead(grid_cols=10)
        with pytest.raises(ValueError):
            head.vertical_range(torch.randn(1, 6, 11))


class TestGatherKernels:
    def test_single_point(self):
        pm = torch.randn(KERNEL_DIM, 5, 8)
        (vec,) = gather_kernels(pm, [(3, 2)])
        assert torch.equal(vec, pm[:, 2, 3])

    def test_empty(self):
        assert gather_kernels(torch.randn(4, 5, 8), []) == []

    def test_order_preserved(self):
        pm = torch.randn(4, 5, 8)
        vecs = gather_kernels(pm, [(1, 1), (7, 4), (0, 0)])
        assert torch.equal(vecs[1], pm[:, 4, 7])
        assert torch.equal(vecs[2], pm[:, 0, 0])

    def test_out_of_grid(self):
        pm = torch.randn(4, 5, 8)
        with pytest.raises(IndexError):
            gather_kernels(pm, [(8, 0)])
        with pytest.raises(IndexError):
            gather_kernels(pm, [(0, -1)])

    def test_scatter_back_round_trip(self):
        pm = torch.randn(6, 5, 8)
        points = [(2, 3), (5, 1)]
        vecs = gather_kernels(pm, points)
        rebuilt = torch.zeros_like(pm)
        for (x, y), v in zip(points, vecs):
            rebuilt[:, y, x] = v
        for x, y in points:
            assert torch.equal(rebuilt[:, y, x], pm[:, y, x])


class TestEndToEndGradient:
    def test_param_vector_gradient_matches_fd(self):
        image = ImageSpec(height=64, width=160)
        grid = GridSpec(rows=8, cols=20, image=image)
        rng = np.random.default_rng(6)
        lane = random_lane(rng, image, bend_scale=10.0, n=12)
        target = encode_rowwise_targets(lane, grid, omega=2)

        g = torch.Generator().manual_seed(7)
        learned = torch.randn(64, 8, 20, generator=g, dtype=torch.float64)
        shared = torch.cat([learned, coordinate_channels(8, 20, dtype=torch.float64)])

        def loss_of_kernel(kernel):
            loc, off = conditional_forward(shared, kernel)
            comps = {
                "point": torch.zeros((), dtype=torch.float64),
                "row": row_loss(row_expected_abscissa(loc)[0], target),
                "range": range_loss(
                    loc[0] @ torch.randn(20, 2, generator=torch.Generator().manual_seed(8),
                                         dtype=torch.float64),
                    target.valid,
                ),
                "offset": offset_loss(off[0], target),
                "state": torch.zeros((), dtype=torch.float64),
            }
            return total_loss(comps)

        kernel = torch.randn(KERNEL_DIM, generator=g, dtype=torch.float64)
        assert gradient_rel_error(loss_of_kernel, kernel, eps=1e-6) <= 1e-4
