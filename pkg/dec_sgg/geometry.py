"""Axis-aligned box arithmetic.

Boxes are ``(x_t, y_t, x_b, y_b)`` pixel rectangles: top-left corner then
bottom-right corner. Coordinates are held as Python floats (IEEE doubles).
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .error_handler import GeometryError


@dataclass(frozen=True)
class BoundingBox:
    x_t: float
    y_t: float
    x_b: float
    y_b: float

    def __post_init__(self):
        coords = (self.x_t, self.y_t, self.x_b, self.y_b)
        try:
            values = tuple(float(c) for c in coords)
        except (TypeError, ValueError):
            raise GeometryError("Box coordinates must be numbers", {'box': list(coords)})
        if not all(math.isfinite(v) for v in values):
            raise GeometryError("Box coordinates must be finite", {'box': list(values)})
        if min(values) < 0:
            raise GeometryError("Box coordinates must be non-negative", {'box': list(values)})
        if not (values[2] > values[0] and values[3] > values[1]):
            raise GeometryError("Box must have positive width and height", {'box': list(values)})
        for name, value in zip(('x_t', 'y_t', 'x_b', 'y_b'), values):
            object.__setattr__(self, name, value)

    @property
    def width(self) -> float:
        return self.x_b - self.x_t

    @property
    def height(self) -> float:
        return self.y_b - self.y_t

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x_t, self.y_t, self.x_b, self.y_b)

    def shifted(self, dx: float, dy: float) -> 'BoundingBox':
        return BoundingBox(self.x_t + dx, self.y_t + dy, self.x_b + dx, self.y_b + dy)

    @classmethod
    def from_sequence(cls, values) -> 'BoundingBox':
        if len(values) != 4:
            raise GeometryError("A box needs exactly four coordinates", {'box': list(values)})
        return cls(*values)


def area(b: BoundingBox) -> float:
    """Area in square pixels"""
    return (b.x_b - b.x_t) * (b.y_b - b.y_t)


def intersection(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_b, b.x_b) - max(a.x_t, b.x_t)
    ih = min(a.y_b, b.y_b) - max(a.y_t, b.y_t)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes, 1 for identical ones"""
    inter = intersection(a, b)
    if inter == 0.0:
        return 0.0
    union = area(a) + area(b) - inter
    return min(1.0, inter / union)


def normalize_to_origin(b: BoundingBox) -> BoundingBox:
    """Move the top-left corner to (0, 0), keeping width and height"""
    return BoundingBox(0.0, 0.0, b.x_b - b.x_t, b.y_b - b.y_t)


def shape_similarity(a: BoundingBox, b: BoundingBox) -> float:
    """Overlap ratio of the two boxes once both are anchored at the origin.

    Translation invariant, symmetric, in (0, 1], and 1 exactly when widths
    and heights agree.
    """
    na = normalize_to_origin(a)
    nb = normalize_to_origin(b)
    # origin-anchored boxes overlap on [0, min(x_b)] x [0, min(y_b)]
    overlap = min(na.x_b, nb.x_b) * min(na.y_b, nb.y_b)
    return overlap / (area(na) + area(nb) - overlap)


def shape_similarity_many(query: BoundingBox, widths: np.ndarray, heights: np.ndarray) -> np.ndarray:
    """Vectorised ``shape_similarity`` of one box against many (width, height) shapes.

    Performs the same IEEE operations in the same order as the scalar form, so
    results are bit-identical to it.
    """
    qw = query.x_b - query.x_t
    qh = query.y_b - query.y_t
    overlap = np.minimum(qw, widths) * np.minimum(qh, heights)
    return overlap / ((qw * qh) + (widths * heights) - overlap)


def _clip_span(low: float, high: float, limit: float) -> Tuple[float, float]:
    low = min(max(low, 0.0), limit)
    high = min(max(high, 0.0), limit)
    if high <= low:
        # span starts at or past the far edge: keep a 1-pixel strip on that edge
        low = limit - min(1.0, limit)
        high = limit
    return low, high


def clamp_to_image(b: BoundingBox, image_w: float, image_h: float) -> BoundingBox:
    """Clip a box to the image rectangle.

    A box lying wholly past the right or bottom edge becomes a 1-pixel strip
    along that edge.
    """
    x_t, x_b = _clip_span(b.x_t, b.x_b, image_w)
    y_t, y_b = _clip_span(b.y_t, b.y_b, image_h)
    return BoundingBox(x_t, y_t, x_b, y_b)


def within_image(b: BoundingBox, image_w: float, image_h: float) -> bool:
    return b.x_b <= image_w and b.y_b <= image_h
