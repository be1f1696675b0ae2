"""Static overlay rendering: colored per-instance polylines on input images.

Colors come from a fixed palette and cycle by instance index, so the n-th
detection always gets the same color regardless of image content. Drawing
uses hard (non-antialiased) strokes so palette colors survive exactly in
the output pixels.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .geometry import LanePolyline

# RGB. Eight visually distinct hues; index i maps to PALETTE[i % 8].
PALETTE: Tuple[Tuple[int, int, int], ...] = (
    (66, 133, 244),
    (219, 68, 55),
    (244, 180, 0),
    (15, 157, 88),
    (171, 71, 188),
    (0, 172, 193),
    (255, 112, 67),
    (240, 98, 146),
)

LINE_THICKNESS = 2
MARKER_RADIUS = 4


def palette_color(index: int) -> Tuple[int, int, int]:
    return PALETTE[index % len(PALETTE)]


def image_to_uint8(image: np.ndarray) -> np.ndarray:
    """(3, H, W) float in [0, 1] or (H, W[, 3]) uint8 -> (H, W, 3) uint8 RGB."""
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] == 3 and np.issubdtype(arr.dtype, np.floating):
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
        return np.ascontiguousarray(arr.transpose(1, 2, 0))
    if arr.dtype != np.uint8:
        raise ValueError(f"expected float CHW or uint8 image, got {arr.dtype} {arr.shape}")
    if arr.ndim == 2:
        return np.ascontiguousarray(np.repeat(arr[:, :, None], 3, axis=2))
    if arr.ndim == 3 and arr.shape[2] == 3:
        return np.ascontiguousarray(arr)
    raise ValueError(f"unsupported image shape {arr.shape}")


def draw_detections(
    image: np.ndarray,
    detections: Sequence[Tuple[LanePolyline, float]],
    annotate_empty: bool = True,
) -> np.ndarray:
    """Overlay polylines and start-point markers; returns a new uint8 RGB array.

    Zero detections leave the pixels untouched apart from a "0 lanes" text
    annotation in the top-left corner (suppressed by annotate_empty=False).
    """
    canvas = image_to_uint8(image).copy()
    if not detections:
        if annotate_empty:
            cv2.putText(canvas, "0 lanes", (6, 18), cv2.FONT_HERSHEY_SIMPLEX,
                        0.5, (255, 255, 255), 1, cv2.LINE_8)
        return canvas
    for idx, (lane, _score) in enumerate(detections):
        color = palette_color(idx)
        pts = np.round(lane.points).astype(np.int32).reshape(-1, 1, 2)
        cv2.polylines(canvas, [pts], False, color, LINE_THICKNESS, cv2.LINE_8)
        # lanes are stored bottom-first, so points[0] is the proposal point
        x0, y0 = np.round(lane.points[0]).astype(int)
        cv2.circle(canvas, (int(x0), int(y0)), MARKER_RADIUS, color, -1, cv2.LINE_8)
    return canvas


def save_image(path, rgb: np.ndarray) -> None:
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8, got {rgb.dtype} {rgb.shape}")
    if not cv2.imwrite(str(path), rgb[:, :, ::-1]):
        raise IOError(f"failed to write {path}")


def load_image(path) -> Optional[np.ndarray]:
    """Read any gray/color image as model input (3, H, W) float32 in [0, 1]."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        return None
    rgb = bgr[:, :, ::-1].astype(np.float32) / 255.0
    return np.ascontiguousarray(rgb.transpose(2, 0, 1))
