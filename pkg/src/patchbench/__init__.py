"""Adversarial patch placement attacks and mask-based defenses.

The pipeline: a detector scores images, EigenCAM saliency plus a grid
search choose where a patch hurts most, projected gradient descent
optimizes the patch, and three defenses (zero-fill removal, isophote
inpainting, masked diffusion restoration) try to undo it. Everything is
numpy-first and deterministic given a master seed.
"""

from .attack import (
    AttackConfig,
    AttackResult,
    DivergenceError,
    SizeError,
    attack_loss,
    init_patch,
    optimize_patch,
    project_patch,
    run_attack,
)
from .core import (
    BinaryMask,
    BoundsError,
    Detection,
    Heatmap,
    Image,
    Patch,
    PatchBenchError,
    Region,
    RngStream,
    ShapeError,
    apply_patch,
    derive_stream,
)
from .detector import (
    CapabilityError,
    DetectorHandle,
    FeatureMaps,
    LayerLookupError,
    ProtocolError,
    RemoteDetector,
    ToyDetector,
    TransportError,
    train_toy_detector,
)
from .placement import (
    PlacementError,
    PlacementGrid,
    candidate_positions,
    default_stride,
    grid_search,
)
from .saliency import (
    NumericError,
    eigencam,
    export_heatmap_png,
    extract_salient_regions,
    upsample,
)

__all__ = [
    "AttackConfig",
    "AttackResult",
    "BinaryMask",
    "BoundsError",
    "CapabilityError",
    "Detection",
    "DetectorHandle",
    "DivergenceError",
    "FeatureMaps",
    "Heatmap",
    "Image",
    "LayerLookupError",
    "NumericError",
    "Patch",
    "PatchBenchError",
    "PlacementError",
    "PlacementGrid",
    "ProtocolError",
    "Region",
    "RemoteDetector",
    "RngStream",
    "ShapeError",
    "SizeError",
    "ToyDetector",
    "TransportError",
    "apply_patch",
    "attack_loss",
    "candidate_positions",
    "default_stride",
    "derive_stream",
    "eigencam",
    "export_heatmap_png",
    "extract_salient_regions",
    "grid_search",
    "init_patch",
    "optimize_patch",
    "project_patch",
    "run_attack",
    "train_toy_detector",
    "upsample",
]

__version__ = "0.1.0"
