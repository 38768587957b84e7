"""Detector contract with two implementations: in-process toy and remote client."""

from .base import (
    CapabilityError,
    DetectorHandle,
    FeatureMaps,
    LayerLookupError,
    ProtocolError,
    TransportError,
)
from .remote import RemoteDetector
from .service import DetectorService, serve_detector
from .shapes import CLASS_NAMES, IMAGE_SIZE, generate_image, make_dataset
from .toy import ToyDetector, ToyDetectorParams, train_toy_detector

__all__ = [
    "CapabilityError",
    "DetectorHandle",
    "FeatureMaps",
    "LayerLookupError",
    "ProtocolError",
    "TransportError",
    "RemoteDetector",
    "DetectorService",
    "serve_detector",
    "CLASS_NAMES",
    "IMAGE_SIZE",
    "generate_image",
    "make_dataset",
    "ToyDetector",
    "ToyDetectorParams",
    "train_toy_detector",
]
