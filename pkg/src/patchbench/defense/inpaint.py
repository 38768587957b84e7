"""Isophote-propagating hole filling in fast-marching order.

Unknown pixels are visited outward from the mask boundary by increasing
distance T (solved from the eikonal equation on the pixel grid). Each
pixel is estimated as a weighted average of first-order extrapolations
from already-known neighbors inside a radius; the weights are the product
of a direction factor (alignment of the neighbor offset with the distance
gradient, which carries level lines into the hole), a geometric distance
factor, and a level-set proximity factor.
"""

from __future__ import annotations

import heapq
import math

import numpy as np
from scipy import ndimage

from ..core import BinaryMask, Image, PatchBenchError, ShapeError

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_KNOWN, _BAND, _INSIDE = 0, 1, 2
_FAR = 1e6
_MIN_DIRECTION = 1e-6


class InpaintError(PatchBenchError):
    """The mask leaves no known boundary to propagate from."""


def _solve_step(T: np.ndarray, flags: np.ndarray, ia: int, ja: int,
                ib: int, jb: int) -> float:
    # Distance update from up to two perpendicular known neighbors.
    h, w = T.shape
    known_a = 0 <= ia < h and 0 <= ja < w and flags[ia, ja] == _KNOWN
    known_b = 0 <= ib < h and 0 <= jb < w and flags[ib, jb] == _KNOWN
    if known_a and known_b:
        ta, tb = T[ia, ja], T[ib, jb]
        if abs(ta - tb) >= 1.0:
            return min(ta, tb) + 1.0
        return (ta + tb + math.sqrt(2.0 - (ta - tb) ** 2)) / 2.0
    if known_a:
        return T[ia, ja] + 1.0
    if known_b:
        return T[ib, jb] + 1.0
    return _FAR


def _eikonal(T: np.ndarray, flags: np.ndarray, i: int, j: int) -> float:
    return min(
        _solve_step(T, flags, i - 1, j, i, j - 1),
        _solve_step(T, flags, i - 1, j, i, j + 1),
        _solve_step(T, flags, i + 1, j, i, j - 1),
        _solve_step(T, flags, i + 1, j, i, j + 1),
    )


def _field_gradient(field: np.ndarray, flags: np.ndarray, i: int, j: int):
    # Central difference where both neighbors are usable, one-sided where
    # only one is, zero otherwise. "Usable" means not still unknown.
    h, w = field.shape[:2]

    def axis(low_ok, high_ok, low, high, here):
        if low_ok and high_ok:
            return (high - low) / 2.0
        if high_ok:
            return high - here
        if low_ok:
            return here - low
        return 0.0 * here

    up_ok = i > 0 and flags[i - 1, j] != _INSIDE
    down_ok = i < h - 1 and flags[i + 1, j] != _INSIDE
    left_ok = j > 0 and flags[i, j - 1] != _INSIDE
    right_ok = j < w - 1 and flags[i, j + 1] != _INSIDE
    gy = axis(up_ok, down_ok,
              field[i - 1, j] if up_ok else None,
              field[i + 1, j] if down_ok else None, field[i, j])
    gx = axis(left_ok, right_ok,
              field[i, j - 1] if left_ok else None,
              field[i, j + 1] if right_ok else None, field[i, j])
    return gy, gx


def _paint_pixel(out: np.ndarray, T: np.ndarray, flags: np.ndarray,
                 i: int, j: int, radius: int) -> None:
    h, w = T.shape
    grad_ty, grad_tx = _field_gradient(T, flags, i, j)
    numerator = np.zeros(3)
    denominator = 0.0
    for k in range(max(0, i - radius), min(h, i + radius + 1)):
        for l in range(max(0, j - radius), min(w, j + radius + 1)):
            if flags[k, l] == _INSIDE or (k == i and l == j):
                continue
            ry, rx = i - k, j - l
            length_sq = ry * ry + rx * rx
            if length_sq > radius * radius:
                continue
            length = math.sqrt(length_sq)
            direction = abs(ry * grad_ty + rx * grad_tx) / length
            if direction < _MIN_DIRECTION:
                direction = _MIN_DIRECTION
            distance = 1.0 / length_sq
            level = 1.0 / (1.0 + abs(T[k, l] - T[i, j]))
            weight = direction * distance * level
            giy, gix = _field_gradient(out, flags, k, l)
            estimate = out[k, l] + giy * ry + gix * rx
            numerator += weight * estimate
            denominator += weight
    out[i, j] = np.clip(numerator / denominator, 0.0, 1.0)


def inpaint(image: Image, mask: BinaryMask, radius: int = 3) -> Image:
    """Fill masked pixels by isophote propagation; others stay bit-exact.

    An empty mask returns the image unchanged. A mask covering the whole
    image raises InpaintError since there is no boundary to march from.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    hole = mask.data
    if hole.shape != (image.height, image.width):
        raise ShapeError(
            f"mask shape {hole.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    if not hole.any():
        return image
    if hole.all():
        raise InpaintError("mask covers the entire image; no boundary to propagate from")

    out = np.array(image.data, copy=True)
    flags = np.where(hole, _INSIDE, _KNOWN).astype(np.int8)
    T = np.where(hole, _FAR, 0.0)

    # The initial band is the ring of known pixels 4-adjacent to the hole.
    ring = ndimage.binary_dilation(hole, structure=_FOUR_CONNECTED) & ~hole
    heap: list[tuple[float, int, int]] = []
    for i, j in zip(*np.nonzero(ring)):
        flags[i, j] = _BAND
        heapq.heappush(heap, (0.0, int(i), int(j)))

    h, w = T.shape
    while heap:
        t, i, j = heapq.heappop(heap)
        if flags[i, j] != _BAND:
            continue
        flags[i, j] = _KNOWN
        for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if not (0 <= ni < h and 0 <= nj < w) or flags[ni, nj] == _KNOWN:
                continue
            new_t = _eikonal(T, flags, ni, nj)
            if new_t < T[ni, nj]:
                T[ni, nj] = new_t
            if flags[ni, nj] == _INSIDE:
                _paint_pixel(out, T, flags, ni, nj, radius)
                flags[ni, nj] = _BAND
            heapq.heappush(heap, (float(T[ni, nj]), ni, nj))
    return Image(out)
