"""Grid-search placement of a patch inside a salient region.

Candidate anchors step by a stride across the region; every candidate is
scored by applying the patch there and reading the detector's confidence
for the true class, and the minimizing position wins. Ties break toward
the lowest row-major index so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import Image, Patch, PatchBenchError, Region, apply_patch
from .detector.base import CapabilityError
from .evaluate import score_detection


class PlacementError(PatchBenchError):
    """Grid search over an empty candidate set."""


@dataclass(frozen=True)
class PlacementGrid:
    """Candidate top-left anchors, row-major and unique.

    ``fits`` is False when the patch was larger than the source region,
    in which case positions is empty.
    """

    positions: tuple[tuple[int, int], ...]
    stride: int
    region: Region
    fits: bool = True

    def __post_init__(self):
        seen = set()
        last = None
        for pos in self.positions:
            if pos in seen:
                raise ValueError(f"duplicate candidate position {pos}")
            if last is not None and pos <= last:
                raise ValueError(f"positions not in row-major order at {pos}")
            seen.add(pos)
            last = pos


def _axis_anchors(start: int, extent: int, size: int, stride: int) -> list[int]:
    # Stride steps from the region edge, plus the last fitting anchor even
    # when it is off-stride, so the far edge is always reachable.
    last = start + extent - size
    anchors = list(range(start, last + 1, stride))
    if anchors[-1] != last:
        anchors.append(last)
    return anchors


def default_stride(patch_h: int, patch_w: int) -> int:
    """Half the smaller patch side, rounded up: adjacent candidates overlap."""
    side = min(patch_h, patch_w)
    return max(1, (side + 1) // 2)


def candidate_positions(region: Region, patch_h: int, patch_w: int, stride: int) -> PlacementGrid:
    """All in-region anchors stepping by ``stride``, in image coordinates.

    A patch larger than the region produces an empty grid flagged
    ``fits=False`` rather than an error.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if patch_h < 1 or patch_w < 1:
        raise ValueError(f"patch size must be positive, got {patch_h}x{patch_w}")
    if patch_h > region.height or patch_w > region.width:
        return PlacementGrid(positions=(), stride=stride, region=region, fits=False)
    rows = _axis_anchors(region.top, region.height, patch_h, stride)
    cols = _axis_anchors(region.left, region.width, patch_w, stride)
    positions = tuple((r, c) for r in rows for c in cols)
    return PlacementGrid(positions=positions, stride=stride, region=region)


def grid_search(handle, image: Image, patch: Patch, grid: PlacementGrid,
                true_class: int, mode: str = "min_confidence") -> tuple[tuple[int, int], float]:
    """Best patch anchor over the grid, with the score achieved there.

    ``min_confidence`` minimizes the true-class confidence under the
    zeroing rule (a changed predicted class scores 0, so any
    class-flipping position is immediately optimal). ``max_loss``
    maximizes the cross-entropy of the true class instead and needs a
    handle exposing class probabilities. Neither the image nor the patch
    is modified.
    """
    if not grid.positions:
        raise PlacementError("grid search requires at least one candidate position")
    if mode not in ("min_confidence", "max_loss"):
        raise ValueError(f"mode must be 'min_confidence' or 'max_loss', got {mode!r}")
    if mode == "max_loss" and not hasattr(handle, "class_probabilities"):
        raise CapabilityError("max_loss placement needs class probabilities")

    best_index, best_value = 0, None
    for index, position in enumerate(grid.positions):
        candidate = apply_patch(image, replace(patch, position=position))
        if mode == "min_confidence":
            value = score_detection(handle.detect(candidate), true_class)
            better = best_value is None or value < best_value
        else:
            probs = handle.class_probabilities(candidate)
            value = float(-np.log(max(float(probs[int(true_class)]), 1e-300)))
            better = best_value is None or value > best_value
        if better:
            best_index, best_value = index, value

    position = grid.positions[best_index]
    if mode == "min_confidence":
        return position, float(best_value)
    final = apply_patch(image, replace(patch, position=position))
    return position, score_detection(handle.detect(final), true_class)
