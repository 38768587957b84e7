"""Mask post-processing and patch removal.

Shape completion turns a noisy per-pixel segmentation into a solid
removal mask: binarize, drop specks, dilate, and fill enclosed holes.
Removal zeroes the masked pixels.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from ..core import BinaryMask, Image, ShapeError

_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_DILATION_STRUCTURE = np.ones((3, 3), dtype=bool)


def shape_complete(probabilities: np.ndarray, binarize_threshold: float = 0.5,
                   min_component: int = 10, dilation_iterations: int = 2) -> BinaryMask:
    """Refine a probability mask into a solid binary removal mask.

    Binarizes at the threshold, drops 4-connected components smaller than
    ``min_component`` pixels, dilates with a 3 x 3 structuring element for
    ``dilation_iterations`` rounds, then fills enclosed holes. The result
    contains every pixel of the size-filtered binarized input.
    """
    if not 0.0 < binarize_threshold < 1.0:
        raise ValueError(f"binarize_threshold must be in (0, 1), got {binarize_threshold}")
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.ndim != 2:
        raise ValueError(f"probability mask must be 2-D, got shape {probs.shape}")
    binary = probs >= binarize_threshold
    if binary.any() and min_component > 1:
        labels, _ = ndimage.label(binary, structure=_FOUR_CONNECTED)
        sizes = np.bincount(labels.ravel())
        keep = sizes >= min_component
        keep[0] = False
        binary = keep[labels]
    if binary.any():
        if dilation_iterations > 0:
            binary = ndimage.binary_dilation(
                binary, structure=_DILATION_STRUCTURE, iterations=dilation_iterations
            )
        binary = ndimage.binary_fill_holes(binary)
    return BinaryMask(binary)


def remove_patch(image: Image, mask: BinaryMask) -> Image:
    """Zero out the masked pixels; unmasked pixels are copied bit-exact."""
    if mask.data.shape != (image.height, image.width):
        raise ShapeError(
            f"mask shape {mask.data.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    out = np.array(image.data, copy=True)
    out[mask.data] = 0.0
    return Image(out)


def export_mask_png(mask: BinaryMask, path) -> None:
    """Write the mask as a 1-bit PNG (white = masked)."""
    pixels = (mask.data.astype(np.uint8) * 255)
    PILImage.fromarray(pixels, mode="L").convert("1").save(path, format="PNG")
