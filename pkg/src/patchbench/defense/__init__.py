"""Mask-based defenses: removal, inpainting, and diffusion restoration."""

from .diffusion import (
    AnalyticGaussianDenoiser,
    DenoiserParams,
    NoiseSchedule,
    StepError,
    ToyDenoiser,
    diffusion_restore,
    forward_diffuse,
    reverse_step,
    train_denoiser,
)
from .inpaint import InpaintError, inpaint
from .masks import export_mask_png, remove_patch, shape_complete
from .pipeline import (
    BRANCH_NAMES,
    STAGE_BY_BRANCH,
    BranchResult,
    DefenseReport,
    run_defenses,
)
from .segmenter import (
    DatasetError,
    SegmenterParams,
    bce_loss,
    make_segmentation_dataset,
    segment,
    train_segmenter,
)

__all__ = [
    "AnalyticGaussianDenoiser",
    "DenoiserParams",
    "NoiseSchedule",
    "StepError",
    "ToyDenoiser",
    "diffusion_restore",
    "forward_diffuse",
    "reverse_step",
    "train_denoiser",
    "InpaintError",
    "inpaint",
    "export_mask_png",
    "remove_patch",
    "shape_complete",
    "BRANCH_NAMES",
    "STAGE_BY_BRANCH",
    "BranchResult",
    "DefenseReport",
    "run_defenses",
    "DatasetError",
    "SegmenterParams",
    "bce_loss",
    "make_segmentation_dataset",
    "segment",
    "train_segmenter",
]
