"""EigenCAM saliency and salient-region extraction.

The heatmap is the projection of a layer's flattened feature maps onto
their first right singular vector, taken in absolute value and
max-normalized. Regions are bounding rectangles of 4-connected components
of the thresholded heatmap, used downstream to restrict the patch
placement search.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .core import Heatmap, PatchBenchError, Region
from .detector.base import FeatureMaps


class NumericError(PatchBenchError):
    """An input contained non-finite values."""


_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def eigencam(features: FeatureMaps) -> Heatmap:
    """Project feature maps onto their first right singular vector.

    The (H_f x W_f x C_f) features flatten to a matrix O with one row per
    spatial cell; the heatmap is |O v1| reshaped to H_f x W_f and divided
    by its maximum. The singular vector's sign is arbitrary, which the
    absolute value removes. All-zero features give an all-zero heatmap.
    """
    data = features.data
    if not np.isfinite(data).all():
        raise NumericError("feature maps contain non-finite values")
    hf, wf, cf = data.shape
    if not data.any():
        return Heatmap(np.zeros((hf, wf)))
    flat = data.reshape(hf * wf, cf)
    _, _, vt = np.linalg.svd(flat, full_matrices=False)
    projected = np.abs(flat @ vt[0])
    return Heatmap((projected / projected.max()).reshape(hf, wf))


def _axis_positions(src: int, dst: int) -> np.ndarray:
    # Corner-aligned sampling: output corners land on input corners.
    if dst == 1:
        return np.zeros(1)
    return np.linspace(0.0, src - 1.0, dst)


def upsample(heatmap: Heatmap, target_h: int, target_w: int) -> Heatmap:
    """Bilinear, corner-aligned resize to (target_h, target_w), renormalized."""
    if target_h < 1 or target_w < 1:
        raise ValueError(f"target size must be positive, got {target_h}x{target_w}")
    src = heatmap.data
    sh, sw = src.shape
    rows = _axis_positions(sh, target_h)
    cols = _axis_positions(sw, target_w)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, sh - 1)
    c1 = np.minimum(c0 + 1, sw - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = src[np.ix_(r0, c0)] * (1 - fc) + src[np.ix_(r0, c1)] * fc
    bottom = src[np.ix_(r1, c0)] * (1 - fc) + src[np.ix_(r1, c1)] * fc
    out = top * (1 - fr) + bottom * fr
    peak = out.max()
    if peak > 0:
        out = out / peak
    return Heatmap(np.clip(out, 0.0, 1.0))


def extract_salient_regions(heatmap: Heatmap, threshold_fraction: float = 0.6) -> list[Region]:
    """Bounding rectangles of above-threshold 4-connected components.

    Binarizes at threshold_fraction times the heatmap maximum (strictly
    above), so an all-zero heatmap yields no regions while any uniform
    nonzero heatmap yields one region covering the whole map. Regions are
    sorted by descending component mass (sum of heatmap values), ties by
    top-left position.
    """
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError(
            f"threshold_fraction must be in (0, 1], got {threshold_fraction}"
        )
    data = heatmap.data
    cutoff = threshold_fraction * data.max()
    binary = data > cutoff
    if not binary.any():
        return []
    labels, count = ndimage.label(binary, structure=_FOUR_CONNECTED)
    regions = []
    for index in range(1, count + 1):
        component = labels == index
        rows = np.flatnonzero(component.any(axis=1))
        cols = np.flatnonzero(component.any(axis=0))
        region = Region(
            top=int(rows[0]),
            left=int(cols[0]),
            height=int(rows[-1] - rows[0] + 1),
            width=int(cols[-1] - cols[0] + 1),
        )
        mass = float(data[component].sum())
        regions.append((mass, region))
    regions.sort(key=lambda item: (-item[0], item[1].top, item[1].left))
    return [region for _, region in regions]


def export_heatmap_png(heatmap: Heatmap, path) -> None:
    """Write the heatmap as an 8-bit grayscale PNG."""
    pixels = np.clip(np.rint(heatmap.data * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(pixels, mode="L").save(path, format="PNG")
