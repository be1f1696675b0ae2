"""Grid geometry: supervision-target encoding and prediction decoding.

Everything here is plain numpy with no learned parameters. Lanes are
polylines ordered bottom-to-top; the row-wise formulation describes a lane
by one abscissa per grid row plus a sub-cell horizontal offset, and lane
instances are anchored by their start (bottom-most) point on a coarse
proposal grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLaneError

# inclusion tolerance for rows that land exactly on a lane endpoint
_ROW_EPS = 1e-9


@dataclass(frozen=True)
class ImageSpec:
    """Input image dimensions in pixels."""

    height: int = 320
    width: int = 800

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError(
                f"image dimensions must be positive, got {self.height}x{self.width}"
            )


@dataclass(frozen=True)
class GridSpec:
    """A rows x cols grid that must tile the image exactly."""

    rows: int
    cols: int
    image: ImageSpec

    def __post_init__(self):
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"grid must be positive, got {self.rows}x{self.cols}")
        if self.image.height % self.rows != 0 or self.image.width % self.cols != 0:
            raise ValueError(
                f"grid {self.rows}x{self.cols} does not tile image "
                f"{self.image.height}x{self.image.width}"
            )

    @property
    def cell_height(self) -> float:
        return self.image.height / self.rows

    @property
    def cell_width(self) -> float:
        return self.image.width / self.cols


class LanePolyline:
    """Ordered lane coordinates in image pixels, bottom (max y) first.

    Invariants: at least two points, y strictly decreasing. Bound checks
    against a concrete image are done by :meth:`within` since a polyline by
    itself carries no image size.
    """

    __slots__ = ("points",)

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("a lane needs at least two (x, y) points")
        if not np.all(np.diff(pts[:, 1]) < 0):
            raise ValueError("lane y coordinates must strictly decrease bottom-to-top")
        self.points = pts

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        x0, y0 = self.points[0]
        x1, y1 = self.points[-1]
        return (
            f"LanePolyline({len(self.points)} pts, "
            f"({x0:.1f},{y0:.1f})->({x1:.1f},{y1:.1f}))"
        )

    @property
    def xs(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.points[:, 1]

    @property
    def start_point(self) -> tuple[float, float]:
        """Bottom-most point; anchors the lane instance on the proposal grid."""
        return float(self.points[0, 0]), float(self.points[0, 1])

    @property
    def mean_x(self) -> float:
        return float(self.points[:, 0].mean())

    def within(self, image: ImageSpec) -> bool:
        return bool(
            np.all(self.xs >= 0.0)
            and np.all(self.xs <= image.width - 1)
            and np.all(self.ys >= 0.0)
            and np.all(self.ys <= image.height - 1)
        )

    def x_at(self, y):
        """Abscissa at ordinate(s) y by linear interpolation along the polyline.

        Values outside the vertical span clamp to the nearest endpoint.
        """
        # np.interp wants increasing sample points; ours decrease
        return np.interp(y, self.ys[::-1], self.xs[::-1])


@dataclass
class RowwiseTarget:
    """Per-row supervision for one lane instance on a shape grid.

    loc holds the interpolated abscissa in grid columns (NaN outside the
    vertical range); offset_map carries the sub-cell fraction of loc on a
    band of columns (the masked region) around the lane in each valid row.
    """

    loc: np.ndarray          # (Y,) float64, NaN where invalid
    valid: np.ndarray        # (Y,) bool
    v_min: int
    v_max: int
    offset_map: np.ndarray   # (Y, X) float64 in [0, 1)
    offset_mask: np.ndarray  # (Y, X) bool

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())


@dataclass(frozen=True)
class ProposalPoint:
    """One quantized start cell; lane_indices lists the lanes that share it."""

    x: int
    y: int
    lane_indices: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.lane_indices)


@dataclass
class ProposalTarget:
    """Start-point heatmap (1 x Hp x Wp) and its annotated cells."""

    heatmap: np.ndarray
    points: list[ProposalPoint]


def expected_abscissa(prob_row) -> float:
    """Probability-weighted column index of a per-row distribution.

    The input must be a simplex over the grid columns (non-negative, summing
    to 1 within 1e-6); anything else is a contract violation.
    """
    p = np.asarray(prob_row, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("expected a 1-D probability vector")
    if np.any(p < 0.0) or abs(float(p.sum()) - 1.0) > 1e-6:
        raise ValueError("input is not a probability simplex")
    return float(np.dot(np.arange(p.size, dtype=np.float64), p))


def encode_rowwise_targets(
    lane: LanePolyline, grid: GridSpec, omega: int
) -> RowwiseTarget:
    """Encode a ground-truth lane into per-row location and offset targets.

    For every grid row the lane crosses (row i sits at ordinate
    cell_height * i), loc[i] is the interpolated lane abscissa in grid
    columns. The offset target is the fractional part of loc, written on the
    columns within +-omega of floor(loc[i]) in that row.
    """
    if omega < 1:
        raise ValueError("omega must be >= 1")
    if not lane.within(grid.image):
        raise ValueError(f"lane exceeds image bounds: {lane!r}")

    ch, cw = grid.cell_height, grid.cell_width
    y_bottom = float(lane.ys[0])
    y_top = float(lane.ys[-1])
    i_min = math.ceil(y_top / ch - _ROW_EPS)
    i_max = math.floor(y_bottom / ch + _ROW_EPS)
    i_min = max(i_min, 0)
    i_max = min(i_max, grid.rows - 1)
    if i_max - i_min + 1 < 2:
        raise DegenerateLaneError(
            f"lane spans {max(i_max - i_min + 1, 0)} grid rows, need >= 2"
        )

    rows = np.arange(i_min, i_max + 1)
    loc_cols = lane.x_at(rows * ch) / cw

    loc = np.full(grid.rows, np.nan)
    loc[rows] = loc_cols
    valid = np.zeros(grid.rows, dtype=bool)
    valid[rows] = True

    offset_map = np.zeros((grid.rows, grid.cols))
    offset_mask = np.zeros((grid.rows, grid.cols), dtype=bool)
    j0 = np.floor(loc_cols).astype(int)
    frac = loc_cols - j0
    for i, j, f in zip(rows, j0, frac):
        lo = max(j - omega, 0)
        hi = min(j + omega + 1, grid.cols)
        offset_map[i, lo:hi] = f
        offset_mask[i, lo:hi] = True

    return RowwiseTarget(
        loc=loc,
        valid=valid,
        v_min=int(i_min),
        v_max=int(i_max),
        offset_map=offset_map,
        offset_mask=offset_mask,
    )


def _longest_true_run(flags: np.ndarray):
    """Longest contiguous run of True; ties resolved to the bottom-most run."""
    best = None
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            run = (start, i - 1)
            if best is None or run[1] - run[0] >= best[1] - best[0]:
                best = run
            start = None
    if start is not None:
        run = (start, len(flags) - 1)
        if best is None or run[1] - run[0] >= best[1] - best[0]:
            best = run
    return best


def decode_lane(exp_loc, range_logits, offset_map, grid: GridSpec):
    """Decode per-row predictions into a polyline.

    Rows are kept where the 2-way range classifier picks "crossed"
    (index 1); non-contiguous positives collapse to the longest contiguous
    run. For each kept row i, y = cell_height * i and
    x = cell_width * (floor(exp_loc[i]) + delta), where delta is looked up
    in the offset map at the floored column. Passing offset_map=None decodes
    at cell centers (delta = 0.5) so the quantization error stays within
    half a cell.

    Returns None when no usable range survives (an empty or one-row run
    cannot form a polyline).
    """
    exp_loc = np.asarray(exp_loc, dtype=np.float64)
    logits = np.asarray(range_logits, dtype=np.float64)
    if logits.shape != (grid.rows, 2):
        raise ValueError(f"range logits must be ({grid.rows}, 2), got {logits.shape}")
    positive = np.argmax(logits, axis=1) == 1
    run = _longest_true_run(positive)
    if run is None or run[1] - run[0] + 1 < 2:
        return None
    v_min, v_max = run

    ch, cw = grid.cell_height, grid.cell_width
    pts = []
    for i in range(v_max, v_min - 1, -1):
        col = int(math.floor(exp_loc[i]))
        col = min(max(col, 0), grid.cols - 1)
        delta = 0.5 if offset_map is None else float(offset_map[i, col])
        x = cw * (col + delta)
        pts.append((min(max(x, 0.0), grid.image.width - 1.0), ch * i))
    return LanePolyline(pts)


def render_proposal_heatmap(
    lanes: list[LanePolyline], grid_p: GridSpec, sigma: float
) -> ProposalTarget:
    """Splat an unnormalized Gaussian at each quantized lane start cell.

    Overlapping Gaussians combine by element-wise max; lanes whose start
    points quantize to the same cell merge into a single point carrying all
    their indices (the instance count).
    """
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    heat = np.zeros((grid_p.rows, grid_p.cols), dtype=np.float32)
    by_cell: dict[tuple[int, int], list[int]] = {}
    for k, lane in enumerate(lanes):
        x, y = lane.start_point
        col = min(int(x // grid_p.cell_width), grid_p.cols - 1)
        row = min(int(y // grid_p.cell_height), grid_p.rows - 1)
        by_cell.setdefault((col, row), []).append(k)

    ys, xs = np.mgrid[0 : grid_p.rows, 0 : grid_p.cols]
    points = []
    for (col, row), idxs in by_cell.items():
        d2 = (xs - col) ** 2 + (ys - row) ** 2
        heat = np.maximum(heat, np.exp(-d2 / (2.0 * sigma**2)).astype(np.float32))
        points.append(ProposalPoint(x=col, y=row, lane_indices=tuple(idxs)))
    return ProposalTarget(heatmap=heat[None], points=points)


def extract_proposal_points(heatmap, threshold: float):
    """Pick cells that are strict maxima of their 3x3 neighborhood.

    Ties inside a neighborhood break toward the smaller row-major index, so
    a flat plateau yields a single point. Returns (x, y, score) tuples with
    score >= threshold, sorted by descending score.
    """
    heat = np.asarray(heatmap, dtype=np.float64)
    if heat.ndim == 3:
        if heat.shape[0] != 1:
            raise ValueError(f"expected a single-channel heatmap, got {heat.shape}")
        heat = heat[0]
    padded = np.pad(heat, 1, constant_values=-np.inf)

    def shifted(dy, dx):
        return padded[1 + dy : 1 + dy + heat.shape[0], 1 + dx : 1 + dx + heat.shape[1]]

    # neighbors earlier in row-major order must be strictly smaller,
    # later ones at most equal
    before = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]
    after = [(0, 1), (1, -1), (1, 0), (1, 1)]
    max_before = np.maximum.reduce([shifted(dy, dx) for dy, dx in before])
    max_after = np.maximum.reduce([shifted(dy, dx) for dy, dx in after])
    peaks = (heat > max_before) & (heat >= max_after) & (heat >= threshold)

    rows, cols = np.nonzero(peaks)
    out = [(int(x), int(y), float(heat[y, x])) for y, x in zip(rows, cols)]
    out.sort(key=lambda p: (-p[2], p[1] * heat.shape[1] + p[0]))
    return out
