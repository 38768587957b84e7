"""Run the three mask-based defenses on one adversarial image.

One segmentation pass produces the removal mask; the three branches
(zero-masking removal, isophote inpainting, masked diffusion restoration)
then run independently, each re-detected afterward. A branch failure is
recorded in its result without aborting the others.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import BinaryMask, Image, RngStream
from .diffusion import NoiseSchedule, diffusion_restore
from .inpaint import inpaint
from .masks import remove_patch, shape_complete
from .segmenter import SegmenterParams, segment

BRANCH_NAMES = ("removal", "inpaint", "diffusion")
# Pipeline stage labels for each branch's restored image.
STAGE_BY_BRANCH = {"removal": "sac", "inpaint": "inpainted", "diffusion": "diffused"}


@dataclass(frozen=True)
class BranchResult:
    """Outcome of one defense branch: top re-detection or an error."""

    name: str
    class_id: int | None
    confidence: float | None
    error: str | None = None


@dataclass(frozen=True)
class DefenseReport:
    """All three branch outcomes plus the shared mask and restored images."""

    branches: tuple[BranchResult, ...]
    mask_area_fraction: float
    mask: BinaryMask
    images: dict
    detections: dict

    def to_json_dict(self) -> dict:
        return {
            "branches": [
                {
                    "name": b.name,
                    "class_id": b.class_id,
                    "confidence": b.confidence,
                    **({"error": b.error} if b.error is not None else {}),
                }
                for b in self.branches
            ],
            "mask_area_fraction": self.mask_area_fraction,
        }


def run_defenses(adv_image: Image, handle, segmenter: SegmenterParams, denoiser,
                 schedule: NoiseSchedule, stream: RngStream,
                 binarize_threshold: float = 0.5, min_component: int = 10,
                 dilation_iterations: int = 2, inpaint_radius: int = 3) -> DefenseReport:
    """Segment once, then restore and re-detect along all three branches.

    Only the diffusion branch consumes randomness; it draws from the
    sub-stream at its branch index so reports are reproducible.
    """
    probabilities = segment(segmenter, adv_image)
    mask = shape_complete(
        probabilities,
        binarize_threshold=binarize_threshold,
        min_component=min_component,
        dilation_iterations=dilation_iterations,
    )

    def removal_branch() -> Image:
        return remove_patch(adv_image, mask)

    def inpaint_branch() -> Image:
        return inpaint(adv_image, mask, radius=inpaint_radius)

    def diffusion_branch() -> Image:
        rng = stream.child(BRANCH_NAMES.index("diffusion")).generator()
        return diffusion_restore(adv_image, mask, denoiser, schedule, rng)

    runners = {
        "removal": removal_branch,
        "inpaint": inpaint_branch,
        "diffusion": diffusion_branch,
    }
    branches = []
    images = {}
    detections = {}
    for name in BRANCH_NAMES:
        try:
            restored = runners[name]()
            found = tuple(handle.detect(restored))
            images[name] = restored
            detections[name] = found
            if found:
                top = max(found, key=lambda d: d.confidence)
                branches.append(BranchResult(name=name, class_id=top.class_id,
                                             confidence=top.confidence))
            else:
                branches.append(BranchResult(name=name, class_id=None, confidence=None))
        except Exception as exc:
            branches.append(BranchResult(name=name, class_id=None, confidence=None,
                                         error=str(exc)))
    return DefenseReport(
        branches=tuple(branches),
        mask_area_fraction=float(np.mean(mask.data)),
        mask=mask,
        images=images,
        detections=detections,
    )
