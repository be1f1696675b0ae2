"""Procedural lane scenes with normal, curve, dense and fork topologies.

Each sample is fully determined by (seed, index): the per-sample generator is
np.random.default_rng([seed, index]), so datasets are reproducible and
order-independent. Lanes follow x(u) = lerp(x0, xt, u) + c*u*(u-1) with u
running 0 at the bottom to 1 at the top; the quadratic term's largest
interior deviation from the chord is |c|/4.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Tuple

import cv2
import numpy as np

from .errors import ConfigError
from .formats import read_culane, write_culane
from .geometry import ImageSpec, LanePolyline

# start points this far apart always land in distinct downscale-16 cells
MIN_SPACING = 40.0
POINTS_PER_LANE = 24
FORK_TOP_SEPARATION = 60.0

CATEGORIES = ("normal", "curve", "dense", "fork")


@dataclass(frozen=True)
class SceneConfig:
    image: ImageSpec = ImageSpec(height=320, width=800)
    lane_count: Tuple[int, int] = (2, 4)
    curvature: Tuple[float, float] = (-60.0, 60.0)
    fork_probability: float = 0.0
    dense_probability: float = 0.0
    dense_gap: float = 12.0
    noise: float = 8.0
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.lane_count
        if not (1 <= lo <= hi):
            raise ConfigError("lane_count must satisfy 1 <= lo <= hi")
        if self.curvature[0] > self.curvature[1]:
            raise ConfigError("curvature bounds must be ordered")
        for name in ("fork_probability", "dense_probability"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1]")
        if self.dense_gap < 4.0:
            raise ConfigError("dense_gap must be >= 4 px")
        if self.noise < 0.0:
            raise ConfigError("noise must be >= 0")


@dataclass
class Sample:
    image: np.ndarray              # (3, H, W) float32 in [0, 1]
    lanes: List[LanePolyline]
    category: str
    index: int = 0


def _lane_points(x0, xt, c, y_bottom, y_top, width):
    ys = np.linspace(y_bottom, y_top, POINTS_PER_LANE)
    u = (y_bottom - ys) / (y_bottom - y_top)
    xs = x0 * (1 - u) + xt * u + c * u * (u - 1)
    xs = np.clip(xs, 1.0, width - 2.0)
    return LanePolyline(np.stack([xs, ys], axis=1))


def _clamped_curvature(rng, cfg, x0, xt):
    c = float(rng.uniform(*cfg.curvature))
    lo_chord = min(x0, xt)
    hi_chord = max(x0, xt)
    # keep the parabola's extreme deviation |c|/4 inside the canvas
    if c > 0:
        c = min(c, 4.0 * max(lo_chord - 2.0, 0.0))
    else:
        c = max(c, -4.0 * max(cfg.image.width - 3.0 - hi_chord, 0.0))
    return c


def _render(rng, cfg, lanes) -> np.ndarray:
    h, w = cfg.image.height, cfg.image.width
    base = rng.uniform(30.0, 70.0)
    texture = rng.normal(0.0, 1.0, (max(h // 8, 1), max(w // 8, 1)))
    texture = cv2.resize(texture, (w, h), interpolation=cv2.INTER_LINEAR)
    canvas = np.clip(base + texture * rng.uniform(5.0, 15.0), 0, 255)
    canvas = canvas.astype(np.uint8)
    for lane in lanes:
        pts = np.round(lane.points).astype(np.int32).reshape(-1, 1, 2)
        brightness = int(rng.integers(200, 256))
        thickness = int(rng.integers(2, 5))
        cv2.polylines(canvas, [pts], False, brightness, thickness, cv2.LINE_AA)
    noisy = canvas.astype(np.float64) + rng.normal(0.0, cfg.noise, (h, w))
    gray = np.clip(noisy, 0, 255).astype(np.uint8)
    return np.repeat(gray[None].astype(np.float32) / 255.0, 3, axis=0)


def generate_scene(cfg: SceneConfig, index: int) -> Sample:
    """Deterministic scene for (cfg.seed, index); see module docstring."""
    rng = np.random.default_rng([cfg.seed, index])
    h, w = cfg.image.height, cfg.image.width
    n = int(rng.integers(cfg.lane_count[0], cfg.lane_count[1] + 1))
    fork = rng.random() < cfg.fork_probability
    dense = (not fork) and rng.random() < cfg.dense_probability
    if fork or dense:
        n = max(n, 2)

    margin = min(40.0, w / 8.0)
    usable = (w - 1.0) - 2.0 * margin - (n - 1) * MIN_SPACING
    if usable < 0:
        raise ConfigError(f"{n} lanes do not fit a width-{w} canvas")
    offsets = np.sort(rng.uniform(0.0, usable, n))
    bottoms = margin + offsets + np.arange(n) * MIN_SPACING

    y_bottom = rng.uniform(0.82, 0.97) * (h - 1)
    y_top = rng.uniform(0.10, 0.30) * (h - 1)

    lanes = []
    curvatures = []
    for i in range(n):
        x0 = float(bottoms[i])
        xt = float(np.clip(x0 + rng.uniform(-0.35, 0.35) * w, 8.0, w - 9.0))
        c = _clamped_curvature(rng, cfg, x0, xt)
        lanes.append(_lane_points(x0, xt, c, y_bottom, y_top, w))
        curvatures.append(c)

    if fork:
        # second lane re-rooted at the first lane's exact bottom point
        base = lanes[0]
        x0, _ = base.start_point
        xt_base = float(base.points[-1, 0])
        sign = 1.0 if rng.random() < 0.5 else -1.0
        xt = xt_base + sign * rng.uniform(FORK_TOP_SEPARATION, 2.5 * FORK_TOP_SEPARATION)
        xt = float(np.clip(xt, 8.0, w - 9.0))
        if abs(xt - xt_base) < FORK_TOP_SEPARATION:
            xt = float(np.clip(xt_base - sign * FORK_TOP_SEPARATION, 8.0, w - 9.0))
        c = _clamped_curvature(rng, cfg, x0, xt)
        lanes[1] = _lane_points(x0, xt, c, y_bottom, y_top, w)
        curvatures[1] = c
    elif dense:
        # second lane parallels the first at dense_gap lateral offset
        base = lanes[0]
        pts = base.points.copy()
        pts[:, 0] = np.clip(pts[:, 0] + cfg.dense_gap, 1.0, w - 2.0)
        lanes[1] = LanePolyline(pts)
        curvatures[1] = curvatures[0]

    if fork:
        category = "fork"
    elif dense:
        category = "dense"
    else:
        bound = max(abs(cfg.curvature[0]), abs(cfg.curvature[1]))
        curved = bound > 0 and max(abs(c) for c in curvatures) > 0.5 * bound
        category = "curve" if curved else "normal"

    image = _render(rng, cfg, lanes)
    return Sample(image=image, lanes=lanes, category=category, index=index)


def generate_dataset(cfg: SceneConfig, count: int) -> List[Sample]:
    return [generate_scene(cfg, i) for i in range(count)]


def _config_record(cfg: SceneConfig) -> dict:
    return {
        "height": cfg.image.height,
        "width": cfg.image.width,
        "lane_count": list(cfg.lane_count),
        "curvature": list(cfg.curvature),
        "fork_probability": cfg.fork_probability,
        "dense_probability": cfg.dense_probability,
        "dense_gap": cfg.dense_gap,
        "noise": cfg.noise,
        "seed": cfg.seed,
    }


def config_from_record(rec: dict) -> SceneConfig:
    return SceneConfig(
        image=ImageSpec(height=int(rec["height"]), width=int(rec["width"])),
        lane_count=tuple(rec["lane_count"]),
        curvature=tuple(rec["curvature"]),
        fork_probability=rec["fork_probability"],
        dense_probability=rec["dense_probability"],
        dense_gap=rec["dense_gap"],
        noise=rec["noise"],
        seed=int(rec["seed"]),
    )


def save_dataset(out_dir, cfg: SceneConfig, count: int) -> dict:
    """Write images, lane annotations and a manifest; returns the manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        sample = generate_scene(cfg, i)
        image_rel = f"images/{i:06d}.png"
        label_rel = f"labels/{i:06d}.lines.txt"
        gray = np.round(sample.image[0] * 255.0).astype(np.uint8)
        if not cv2.imwrite(str(out / image_rel), gray):
            raise IOError(f"failed to write {out / image_rel}")
        write_culane(out / label_rel, sample.lanes)
        entries.append({
            "index": i,
            "image": image_rel,
            "annotation": label_rel,
            "category": sample.category,
        })
    manifest = {"config": _config_record(cfg), "count": count, "samples": entries}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_dataset(in_dir) -> List[Sample]:
    root = Path(in_dir)
    with open(root / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    samples = []
    for entry in manifest["samples"]:
        gray = cv2.imread(str(root / entry["image"]), cv2.IMREAD_GRAYSCALE)
        if gray is None:
            raise IOError(f"unreadable image {root / entry['image']}")
        image = np.repeat(gray[None].astype(np.float32) / 255.0, 3, axis=0)
        lanes = read_culane(root / entry["annotation"])
        samples.append(Sample(image=image, lanes=lanes,
                              category=entry["category"], index=entry["index"]))
    return samples
