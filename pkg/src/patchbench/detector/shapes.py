"""Synthetic single-object shape images used to train and exercise the toy detector.

Each image is one solid shape (disk, square, triangle, or cross) drawn over
a smooth noise background, 64x64 pixels. Generation is fully determined by
an RngStream, so every corpus is reproducible byte for byte.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..core import Image, RngStream

IMAGE_SIZE = 64
CLASS_NAMES = ("disk", "square", "triangle", "cross")


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    # Low-resolution noise upsampled: smooth light blotches, no sharp
    # structure that could be confused with an object or a patch.
    base = rng.uniform(0.6, 0.9)
    coarse = base + rng.uniform(-0.12, 0.12, size=(8, 8, 3))
    zoom = size / 8
    return np.clip(ndimage.zoom(coarse, (zoom, zoom, 1), order=1, mode="nearest"), 0.0, 1.0)


def _shape_mask(rng: np.random.Generator, class_id: int, size: int) -> np.ndarray:
    cy = rng.uniform(size * 0.38, size * 0.62)
    cx = rng.uniform(size * 0.38, size * 0.62)
    r = rng.uniform(size * 0.22, size * 0.3)
    yy, xx = np.mgrid[0:size, 0:size]
    dy, dx = yy - cy, xx - cx
    name = CLASS_NAMES[class_id]
    if name == "disk":
        return dy * dy + dx * dx <= r * r
    if name == "square":
        s = r * 0.85
        return (np.abs(dy) <= s) & (np.abs(dx) <= s)
    if name == "triangle":
        return _triangle(dy, dx, r)
    if name == "cross":
        arm = r * 0.38
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= r)) | (
            (np.abs(dx) <= arm) & (np.abs(dy) <= r)
        )
    raise ValueError(f"unknown class id {class_id}")


def _triangle(dy: np.ndarray, dx: np.ndarray, r: float) -> np.ndarray:
    # Upward triangle: apex at (-r, 0), base corners at (0.8 r, +-r).
    apex_y, base_y = -r, 0.8 * r
    t = (dy - apex_y) / (base_y - apex_y)
    half_width = np.clip(t, 0.0, 1.0) * r
    return (dy >= apex_y) & (dy <= base_y) & (np.abs(dx) <= half_width)


def _object_color(rng: np.random.Generator) -> np.ndarray:
    # Dark saturated colors against the light background: shape polarity
    # is consistent, so the toy net can learn geometry, not color trivia.
    return rng.uniform(0.05, 0.4, size=3)


def generate_image(rng: np.random.Generator, class_id: int, size: int = IMAGE_SIZE):
    """One labeled image. Returns (Image, bbox) with bbox as (x, y, w, h)."""
    bg = _background(rng, size)
    mask = _shape_mask(rng, class_id, size)
    color = _object_color(rng)
    img = bg.copy()
    img[mask] = color
    img += rng.normal(0.0, 0.03, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    bbox = (int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1))
    return Image(img), bbox


def _add_distractor(rng: np.random.Generator, img: np.ndarray, bbox, size: int) -> np.ndarray:
    """Paste one background distractor rectangle, mostly clear of the object.

    The fill kinds mimic what defenses leave behind (zero-filled boxes,
    flat light fill), so a trained detector treats such regions as
    background rather than objects. Unstructured noise is deliberately
    absent: that is the adversary's territory.
    """
    oh = int(rng.integers(8, 20))
    ow = int(rng.integers(8, 20))
    x, y, w, h = bbox
    oy = ox = None
    for _ in range(10):
        ty = int(rng.integers(0, size - oh + 1))
        tx = int(rng.integers(0, size - ow + 1))
        overlap_h = max(0, min(ty + oh, y + h) - max(ty, y))
        overlap_w = max(0, min(tx + ow, x + w) - max(tx, x))
        if overlap_h * overlap_w <= 0.5 * w * h:
            oy, ox = ty, tx
            break
    if oy is None:
        return img
    if int(rng.integers(2)) == 0:
        fill = 0.0
    else:
        fill = rng.uniform(0.5, 0.9)
    img[oy : oy + oh, ox : ox + ow] = fill
    return img


def make_dataset(stream: RngStream, per_class: int = 500, size: int = IMAGE_SIZE,
                 distractor_probability: float = 0.0):
    """A full corpus: (images array (N,size,size,3), labels (N,), bboxes list).

    Sample i of class c is generated from the sub-stream (c, i), so any
    subset of the corpus is reproducible independently of the rest.
    ``distractor_probability`` adds occluder-like background rectangles,
    used to harden detector training; fixtures leave it at 0.
    """
    images, labels, bboxes = [], [], []
    for class_id in range(len(CLASS_NAMES)):
        for i in range(per_class):
            rng = stream.child(class_id, i).generator()
            img, bbox = generate_image(rng, class_id, size)
            data = img.data.copy()
            if rng.uniform() < distractor_probability:
                data = _add_distractor(rng, data, bbox, size)
            images.append(data)
            labels.append(class_id)
            bboxes.append(bbox)
    return np.stack(images), np.array(labels, dtype=np.int64), bboxes
