"""Shared test utilities: finite-difference gradient checks, lane generators."""

import numpy as np
import torch

from condlane.geometry import LanePolyline


def fd_gradient(fn, x, eps=1e-6):
    """Central finite differences of a scalar function, elementwise at float64."""
    x = x.detach().clone().double()
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.numel()):
        orig = flat[k].item()
        flat[k] = orig + eps
        hi = float(fn(x))
        flat[k] = orig - eps
        lo = float(fn(x))
        flat[k] = orig
        gflat[k] = (hi - lo) / (2.0 * eps)
    return grad


def gradient_rel_error(fn, x, eps=1e-6):
    """Norm-relative disagreement between autograd and central differences."""
    xg = x.detach().clone().double().requires_grad_(True)
    fn(xg).backward()
    analytic = xg.grad.detach()
    numeric = fd_gradient(fn, x, eps)
    denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / denom


def random_lane(rng, image, bend_scale=50.0, n=40):
    """Quadratic lane fully inside the image, bottom-to-top point order."""
    y_bottom = rng.uniform(0.75, 0.98) * (image.height - 1)
    y_top = rng.uniform(0.05, 0.3) * (image.height - 1)
    margin = bend_scale / 4.0 + 10.0
    x0 = rng.uniform(margin, image.width - 1 - margin)
    x1 = rng.uniform(margin, image.width - 1 - margin)
    bend = rng.uniform(-bend_scale, bend_scale)
    ys = np.linspace(y_bottom, y_top, n)
    u = (y_bottom - ys) / (y_bottom - y_top)
    xs = x0 * (1 - u) + x1 * u + bend * u * (u - 1)
    return LanePolyline(np.stack([xs, ys], axis=1))
