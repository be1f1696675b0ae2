"""Annotation file I/O.

Two formats:
- lane-per-line text: each line holds space-separated "x y" pairs for one
  lane, 6-decimal floats; point order normalized to bottom-first on read.
- row-sampled JSONL: one JSON record per line with keys "lanes" (lists of x
  aligned to "h_samples", -2 where the lane has no point) and "raw_file".
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import AnnotationFormatError
from .geometry import LanePolyline

ABSENT = -2.0


def read_culane(path) -> List[LanePolyline]:
    lanes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) % 2 != 0:
                raise AnnotationFormatError(
                    f"{path}:{lineno}: odd token count {len(tokens)}"
                )
            try:
                vals = [float(t) for t in tokens]
            except ValueError as exc:
                raise AnnotationFormatError(f"{path}:{lineno}: {exc}") from None
            pts = np.asarray(vals).reshape(-1, 2)
            if len(pts) < 2:
                warnings.warn(f"{path}:{lineno}: lane with < 2 points skipped")
                continue
            if pts[0, 1] < pts[-1, 1]:
                pts = pts[::-1]
            try:
                lanes.append(LanePolyline(pts))
            except ValueError as exc:
                raise AnnotationFormatError(f"{path}:{lineno}: {exc}") from None
    return lanes


def write_culane(path, lanes: Sequence[LanePolyline]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lane in lanes:
            fh.write(" ".join(f"{v:.6f}" for v in lane.points.ravel()))
            fh.write("\n")


@dataclass
class RowSampledRecord:
    """One image's lanes on a fixed row grid; x = ABSENT marks missing points."""

    lanes: List[List[float]]
    h_samples: List[float]
    raw_file: str = ""

    def __post_init__(self):
        for idx, lane in enumerate(self.lanes):
            if len(lane) != len(self.h_samples):
                raise AnnotationFormatError(
                    f"lane {idx} has {len(lane)} entries for "
                    f"{len(self.h_samples)} h_samples"
                )

    def lane_xs(self) -> List[np.ndarray]:
        """x arrays aligned to h_samples with NaN where absent."""
        out = []
        for lane in self.lanes:
            xs = np.asarray(lane, dtype=float)
            xs[xs == ABSENT] = np.nan
            out.append(xs)
        return out

    def polylines(self) -> List[LanePolyline]:
        """Lanes as polylines over their present rows; < 2 points dropped."""
        ys = np.asarray(self.h_samples, dtype=float)
        out = []
        for xs in self.lane_xs():
            present = ~np.isnan(xs)
            if present.sum() < 2:
                continue
            pts = np.stack([xs[present], ys[present]], axis=1)
            out.append(LanePolyline(pts[np.argsort(-pts[:, 1], kind="stable")]))
        return out


def record_from_polylines(lanes: Sequence[LanePolyline],
                          h_samples: Sequence[float],
                          raw_file: str = "") -> RowSampledRecord:
    ys = np.asarray(h_samples, dtype=float)
    rows = []
    for lane in lanes:
        xs = np.full(len(ys), ABSENT)
        inside = (ys >= lane.ys.min()) & (ys <= lane.ys.max())
        xs[inside] = [float(lane.x_at(float(y))) for y in ys[inside]]
        rows.append(xs.tolist())
    return RowSampledRecord(lanes=rows, h_samples=list(map(float, h_samples)),
                            raw_file=raw_file)


def read_tusimple(path) -> List[RowSampledRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationFormatError(f"{path}:{lineno}: {exc}") from None
            try:
                records.append(RowSampledRecord(
                    lanes=obj["lanes"],
                    h_samples=obj["h_samples"],
                    raw_file=obj.get("raw_file", ""),
                ))
            except (KeyError, TypeError) as exc:
                raise AnnotationFormatError(f"{path}:{lineno}: {exc}") from None
            except AnnotationFormatError as exc:
                raise AnnotationFormatError(f"{path}:{lineno}: {exc}") from None
    return records


def write_tusimple(path, records: Sequence[RowSampledRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({
                "lanes": rec.lanes,
                "h_samples": rec.h_samples,
                "raw_file": rec.raw_file,
            }))
            fh.write("\n")
