"""Shared domain types, the patch application operator, and seeded RNG streams.

Images, patches, masks and heatmaps are thin wrappers around numpy arrays.
Pixel values live in the unit interval; 8-bit data is converted on ingest
(``Image.from_u8``) and on export (``Image.to_u8``). All wrapped arrays are
frozen after construction, so values are safe to share across workers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


class PatchBenchError(Exception):
    """Base class for all errors raised by this package."""


class BoundsError(PatchBenchError):
    """A patch or region does not fit inside its image."""


class ShapeError(PatchBenchError):
    """Two arrays that must agree in shape do not."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Image:
    """An H x W x 3 image with values in [0, 1], row-major."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image data must be HxWx3, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"image must be at least 1x1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("image data contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"image values must lie in [0, 1], got range "
                f"[{arr.min():.6g}, {arr.max():.6g}]"
            )
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_u8(cls, arr: np.ndarray) -> "Image":
        """Ingest 8-bit pixel data by dividing by 255."""
        return cls(np.asarray(arr, dtype=np.float64) / 255.0)

    def to_u8(self) -> np.ndarray:
        """Export as 8-bit pixels (scale by 255 and round)."""
        return np.clip(np.rint(self.data * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Patch:
    """A localized perturbation: h x w x 3 pixels plus an anchor position.

    ``shape_mask`` selects which patch pixels are applied (True = applied);
    when absent the whole rectangle is used. ``position`` is the (row, col)
    of the top-left corner in image coordinates.
    """

    data: np.ndarray
    position: tuple[int, int] = (0, 0)
    shape_mask: np.ndarray | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"patch data must be hxwx3, got shape {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("patch values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))
        if self.shape_mask is not None:
            mask = np.asarray(self.shape_mask, dtype=bool)
            if mask.shape != arr.shape[:2]:
                raise ValueError(
                    f"shape_mask {mask.shape} does not match patch {arr.shape[:2]}"
                )
            object.__setattr__(self, "shape_mask", _freeze(mask))
        object.__setattr__(self, "position", (int(self.position[0]), int(self.position[1])))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def mask_or_full(self) -> np.ndarray:
        """The shape mask, or an all-True mask when none was given."""
        if self.shape_mask is None:
            return np.ones(self.data.shape[:2], dtype=bool)
        return self.shape_mask


@dataclass(frozen=True)
class Detection:
    """One detector output: class label, confidence, and an (x, y, w, h) box."""

    class_id: int
    confidence: float
    bbox: tuple[int, int, int, int]

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "confidence", float(self.confidence))
        object.__setattr__(self, "bbox", tuple(int(v) for v in self.bbox))


@dataclass(frozen=True)
class BinaryMask:
    """An H x W boolean mask over an image (True = masked pixel)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=bool)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def area_fraction(self) -> float:
        return float(self.data.mean())


@dataclass(frozen=True)
class Heatmap:
    """A nonnegative saliency map normalized so that max = 1 unless all-zero."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"heatmap must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValueError("heatmap contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("heatmap values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))


@dataclass(frozen=True)
class Region:
    """An axis-aligned rectangle in pixel coordinates."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError(f"region must have positive size, got {self}")
        if self.top < 0 or self.left < 0:
            raise ValueError(f"region origin must be nonnegative, got {self}")

    @property
    def bottom(self) -> int:
        return self.top + self.height

    @property
    def right(self) -> int:
        return self.left + self.width

    def intersect(self, other: "Region") -> "Region | None":
        top = max(self.top, other.top)
        left = max(self.left, other.left)
        bottom = min(self.bottom, other.bottom)
        right = min(self.right, other.right)
        if bottom <= top or right <= left:
            return None
        return Region(top, left, bottom - top, right - left)


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible randomness source.

    The same (master_seed, stream_id) pair produces an identical draw
    sequence on every platform; distinct stream ids are independent. The
    seed material is a SHA-256 digest of the two fields, so derivation does
    not depend on process state or hash randomization.
    """

    master_seed: int
    stream_id: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "stream_id", tuple(int(i) for i in self.stream_id))

    def _digest(self) -> bytes:
        text = str(self.master_seed) + "".join(f"/{i}" for i in self.stream_id)
        return hashlib.sha256(text.encode("ascii")).digest()

    def generator(self) -> np.random.Generator:
        """A fresh generator; every call restarts the same sequence."""
        seed = int.from_bytes(self._digest()[:16], "big")
        return np.random.Generator(np.random.PCG64(seed))

    def child(self, *ids: int) -> "RngStream":
        """Derive a sub-stream by extending the id path."""
        return RngStream(self.master_seed, self.stream_id + tuple(ids))


def derive_stream(master_seed: int, stream_id: tuple[int, ...] = ()) -> RngStream:
    """Derive the deterministic RNG stream for (master_seed, stream_id)."""
    return RngStream(master_seed, stream_id)


def apply_patch(image: Image, patch: Patch) -> Image:
    """Overlay a patch onto an image at the patch's anchor position.

    Pixels inside the patch rectangle where the shape mask is True take the
    patch value; every other pixel is copied from the input unchanged. The
    input image is not modified.

    Raises BoundsError when the patch does not fit inside the image at its
    position, naming the offending coordinate.
    """
    r, c = patch.position
    h, w = patch.height, patch.width
    if r < 0 or c < 0:
        raise BoundsError(f"patch position ({r}, {c}) has a negative coordinate")
    if r + h > image.height:
        raise BoundsError(
            f"patch bottom row {r + h} exceeds image height {image.height} "
            f"(position row {r})"
        )
    if c + w > image.width:
        raise BoundsError(
            f"patch right column {c + w} exceeds image width {image.width} "
            f"(position col {c})"
        )
    out = np.array(image.data, copy=True)
    mask = patch.mask_or_full()
    window = out[r : r + h, c : c + w]
    window[mask] = patch.data[mask]
    return Image(out)
