"""Detector contract shared by the in-process toy model and the remote client."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Detection, Image, PatchBenchError, _freeze


class CapabilityError(PatchBenchError):
    """The handle does not support the requested operation."""


class LayerLookupError(PatchBenchError):
    """The requested feature layer does not exist."""


class TransportError(PatchBenchError):
    """A remote call failed in transit; the request may be retried."""


class ProtocolError(PatchBenchError):
    """A wire message violated the protocol schema."""


@dataclass(frozen=True)
class FeatureMaps:
    """Activations of one named layer, shaped H_f x W_f x C_f."""

    layer_id: str
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] < 1:
            raise ValueError(f"feature maps must be HxWxC with C >= 1, got {arr.shape}")
        object.__setattr__(self, "data", _freeze(arr))


class DetectorHandle:
    """Uniform detector interface.

    Implementations advertise their capabilities; callers must check
    ``has_gradients`` / ``has_features`` before using the corresponding
    operations. Handles are immutable after construction and safe to share
    across concurrent workers.
    """

    kind: str = "abstract"
    has_gradients: bool = False
    has_features: bool = False
    class_count: int = 0
    default_feature_layer: str = ""

    def detect(self, image: Image) -> list[Detection]:
        raise NotImplementedError

    def feature_maps(self, image: Image, layer_id: str) -> FeatureMaps:
        raise CapabilityError(f"{self.kind} detector does not expose feature maps")

    def input_gradient(self, image: Image, label: int, mode: str = "untargeted") -> np.ndarray:
        raise CapabilityError(f"{self.kind} detector does not expose input gradients")
