"""Patch initialization, attack loss, projected gradient optimization, and
the end-to-end placement-optimized attack pipeline.

The loop alternates a gradient step on the patch pixels with a projection
back into the feasible set (an L-infinity ball around the initial patch
intersected with the pixel range). Placement comes first: saliency
restricts the search area, grid search picks the anchor, and the patch is
then optimized at that anchor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    Image,
    Patch,
    PatchBenchError,
    Region,
    RngStream,
    ShapeError,
    apply_patch,
    derive_stream,
)
from .detector.base import CapabilityError
from .placement import PlacementGrid, candidate_positions, default_stride, grid_search
from .saliency import eigencam, extract_salient_regions, upsample

# Sub-stream ids drawn from an attack's RNG stream.
_PATCH_INIT_SUBSTREAM = 0


class SizeError(PatchBenchError):
    """A configured patch size degenerates to zero pixels."""


class DivergenceError(PatchBenchError):
    """The optimization loss became non-finite."""


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters.

    ``target_class`` None selects the untargeted mode (degrade the true
    class); an integer selects the targeted mode (drive prediction toward
    that class). ``p`` is the regularizer norm order: 1, 2, or
    float("inf"). ``epsilon`` bounds the per-pixel deviation from the
    initial patch; 1.0 leaves only the pixel-range clip active.
    """

    target_class: int | None = None
    lam: float = 0.01
    p: float = 2
    eta: float = 0.05
    iterations: int = 500
    epsilon: float = 1.0
    patch_size_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.target_class is not None:
            object.__setattr__(self, "target_class", int(self.target_class))
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        p = float(self.p)
        if p not in (1.0, 2.0, math.inf):
            raise ValueError(f"p must be 1, 2 or inf, got {self.p}")
        object.__setattr__(self, "p", p)
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not 0.0 < self.patch_size_fraction <= 0.5:
            raise ValueError(
                f"patch_size_fraction must be in (0, 0.5], got {self.patch_size_fraction}"
            )

    @property
    def targeted(self) -> bool:
        return self.target_class is not None


@dataclass(frozen=True)
class AttackResult:
    """Everything produced by one attack run."""

    patch: Patch
    position: tuple[int, int]
    loss_trace: tuple[float, ...]
    pre_detections: tuple
    post_detections: tuple
    true_class: int
    grid: PlacementGrid | None
    placement_confidence: float | None
    patched_image: Image

    def __post_init__(self):
        object.__setattr__(self, "loss_trace", tuple(float(v) for v in self.loss_trace))
        object.__setattr__(self, "pre_detections", tuple(self.pre_detections))
        object.__setattr__(self, "post_detections", tuple(self.post_detections))


def init_patch(image_h: int, image_w: int, config: AttackConfig,
               stream: RngStream | None = None) -> Patch:
    """A square patch of i.i.d. uniform pixels covering the configured
    fraction of the image area, anchored at the origin."""
    side = int(math.floor(math.sqrt(config.patch_size_fraction * image_h * image_w)))
    if side < 1:
        raise SizeError(
            f"patch_size_fraction {config.patch_size_fraction} on a "
            f"{image_h}x{image_w} image gives a zero-pixel patch"
        )
    if stream is None:
        stream = derive_stream(config.seed).child(_PATCH_INIT_SUBSTREAM)
    rng = stream.generator()
    return Patch(data=rng.uniform(0.0, 1.0, size=(side, side, 3)))


def _norm_and_gradient(delta: np.ndarray, mask: np.ndarray, p: float):
    """p-norm of the masked patch pixels and its subgradient.

    The gradient is zero outside the shape mask and uses the standard
    subgradient at kinks (sign for p=1, the max coordinate for p=inf).
    """
    values = np.where(mask[..., None], delta, 0.0)
    if p == 1.0:
        norm = float(np.abs(values).sum())
        grad = np.sign(values)
    elif p == 2.0:
        norm = float(np.sqrt((values ** 2).sum()))
        grad = values / norm if norm > 0 else np.zeros_like(values)
    else:
        norm = float(np.abs(values).max()) if values.size else 0.0
        grad = np.zeros_like(values)
        if norm > 0:
            flat = np.argmax(np.abs(values))
            grad.flat[flat] = np.sign(values.flat[flat])
    grad = np.where(mask[..., None], grad, 0.0)
    return norm, grad


def _class_distribution(handle, image: Image) -> np.ndarray:
    """Class probabilities for an image, from the handle if it has them.

    Detection-only handles are approximated by putting the top detection's
    confidence on its class and spreading the rest uniformly; this keeps
    loss evaluation available everywhere while optimization still requires
    a gradient-capable handle.
    """
    if hasattr(handle, "class_probabilities"):
        return np.asarray(handle.class_probabilities(image), dtype=np.float64)
    detections = handle.detect(image)
    k = max(int(handle.class_count), 2)
    probs = np.full(k, 1.0 / k)
    if detections:
        top = max(detections, key=lambda d: d.confidence)
        probs = np.full(k, (1.0 - top.confidence) / (k - 1))
        probs[top.class_id] = top.confidence
    return probs


def attack_loss(handle, image: Image, patch: Patch, label: int,
                lam: float, p: float, mode: str = "untargeted") -> float:
    """Cross-entropy objective plus the norm regularizer.

    Targeted: CE(prediction, label) + lam * ||delta||_p, minimized to pull
    the prediction toward the target. Untargeted: -CE(prediction, label) +
    lam * ||delta||_p, minimized to push the prediction off the true class.
    """
    if mode not in ("targeted", "untargeted"):
        raise ValueError(f"mode must be 'targeted' or 'untargeted', got {mode!r}")
    patched = apply_patch(image, patch)
    probs = _class_distribution(handle, patched)
    ce = -math.log(max(float(probs[int(label)]), 1e-300))
    norm, _ = _norm_and_gradient(patch.data, patch.mask_or_full(), float(p))
    if mode == "targeted":
        return ce + lam * norm
    return -ce + lam * norm


def project_patch(patch: Patch, reference: Patch, epsilon: float) -> Patch:
    """Clamp the patch into the feasible set around a reference.

    The deviation from the reference is clipped to [-epsilon, epsilon]
    elementwise, then the result is clipped to the pixel range [0, 1].
    """
    if patch.data.shape != reference.data.shape:
        raise ShapeError(
            f"patch shape {patch.data.shape} does not match reference "
            f"{reference.data.shape}"
        )
    delta = np.clip(patch.data - reference.data, -epsilon, epsilon)
    projected = np.clip(reference.data + delta, 0.0, 1.0)
    return replace(patch, data=projected)


def optimize_patch(handle, image: Image, patch: Patch, position: tuple[int, int],
                   config: AttackConfig, true_class: int | None = None,
                   on_step=None) -> tuple[Patch, tuple[float, ...]]:
    """Projected gradient optimization of the patch pixels at one anchor.

    Runs ``config.iterations`` steps of: full-image loss gradient,
    restriction to the patch rectangle (the chain rule through patch
    application: covered pixels pass through, everything else and any
    masked-out pixel contributes nothing), a step of size eta, then
    projection. The feasibility reference is the patch as passed in.
    Returns the final patch and the loss trace (initial loss plus one
    entry per iteration).

    ``on_step(iteration, patch, loss)`` is invoked after each iteration
    when provided.
    """
    if not handle.has_gradients:
        raise CapabilityError("patch optimization needs input gradients")
    if config.targeted:
        label, mode = config.target_class, "targeted"
    else:
        if true_class is None:
            detections = handle.detect(image)
            if not detections:
                raise PatchBenchError("untargeted attack needs a true class or a detection")
            label = max(detections, key=lambda d: d.confidence).class_id
        else:
            label = int(true_class)
        mode = "untargeted"

    reference = replace(patch, position=tuple(position))
    current = project_patch(reference, reference, config.epsilon)
    mask = current.mask_or_full()
    mask3 = mask[..., None]
    r, c = current.position
    h, w = current.height, current.width

    losses = [attack_loss(handle, image, current, label, config.lam, config.p, mode)]
    if not math.isfinite(losses[0]):
        raise DivergenceError("loss is non-finite at iteration 0")
    for iteration in range(config.iterations):
        patched = apply_patch(image, current)
        ce_grad = handle.input_gradient(patched, label, mode=mode)
        patch_grad = np.where(mask3, ce_grad[r : r + h, c : c + w, :], 0.0)
        if mode == "untargeted":
            patch_grad = -patch_grad
        # Steepest-descent scaling under the max norm: a saturated softmax
        # shrinks the raw gradient to ~1e-16 and stalls plain eta steps,
        # so only the direction of the data term is kept.
        peak = np.abs(patch_grad).max()
        if peak > 0.0:
            patch_grad = patch_grad / peak
        _, norm_grad = _norm_and_gradient(current.data, mask, config.p)
        step = patch_grad + config.lam * norm_grad
        updated = np.clip(current.data - config.eta * step, 0.0, 1.0)
        current = project_patch(replace(current, data=updated), reference, config.epsilon)
        loss = attack_loss(handle, image, current, label, config.lam, config.p, mode)
        if not math.isfinite(loss):
            raise DivergenceError(f"loss became non-finite at iteration {iteration + 1}")
        losses.append(loss)
        if on_step is not None:
            on_step(iteration, current, loss)
    return current, tuple(losses)


def _bbox_region(bbox: tuple[int, int, int, int], image: Image) -> Region:
    x, y, w, h = bbox
    top = min(max(int(y), 0), image.height - 1)
    left = min(max(int(x), 0), image.width - 1)
    height = max(1, min(int(h), image.height - top))
    width = max(1, min(int(w), image.width - left))
    return Region(top=top, left=left, height=height, width=width)


def _center_position(region: Region, patch_h: int, patch_w: int,
                     image: Image) -> tuple[int, int]:
    # Patch centered on the region's center, clamped fully inside the image.
    row = region.top + region.height // 2 - patch_h // 2
    col = region.left + region.width // 2 - patch_w // 2
    row = min(max(row, 0), image.height - patch_h)
    col = min(max(col, 0), image.width - patch_w)
    return (row, col)


def _merge_grids(grids, stride: int, source: Region) -> PlacementGrid:
    positions = sorted({pos for grid in grids for pos in grid.positions})
    return PlacementGrid(positions=tuple(positions), stride=stride, region=source,
                         fits=bool(positions))


def run_attack(handle, image: Image, config: AttackConfig,
               true_class: int | None = None, stream: RngStream | None = None,
               use_saliency: bool = True, saliency_threshold: float = 0.6,
               feature_layer: str | None = None) -> AttackResult:
    """The full attack: init, saliency, placement, then optimization.

    The search area is the union of salient regions intersected with the
    detected object's box; when saliency is disabled, finds nothing, or no
    candidate fits, the patch goes to the center of the detected box.
    ``true_class`` defaults to the clean top detection's class.
    """
    if not handle.has_gradients:
        raise CapabilityError("the attack needs a gradient-capable detector")

    if stream is None:
        stream = derive_stream(config.seed)

    pre_detections = handle.detect(image)
    if true_class is None:
        if not pre_detections:
            raise PatchBenchError("no clean detection to derive the true class from")
        true_class = max(pre_detections, key=lambda d: d.confidence).class_id
    true_class = int(true_class)

    patch = init_patch(image.height, image.width, config,
                       stream=stream.child(_PATCH_INIT_SUBSTREAM))

    if pre_detections:
        top_detection = max(pre_detections, key=lambda d: d.confidence)
        bbox_region = _bbox_region(top_detection.bbox, image)
    else:
        bbox_region = Region(0, 0, image.height, image.width)
    stride = default_stride(patch.height, patch.width)

    grid = None
    if use_saliency and handle.has_features:
        features = handle.feature_maps(image, feature_layer or handle.default_feature_layer)
        heatmap = upsample(eigencam(features), image.height, image.width)
        regions = extract_salient_regions(heatmap, saliency_threshold)
        search_areas = [
            area for area in (region.intersect(bbox_region) for region in regions)
            if area is not None
        ]
        grids = [candidate_positions(area, patch.height, patch.width, stride)
                 for area in search_areas]
        merged = _merge_grids(grids, stride, bbox_region)
        if merged.positions:
            grid = merged

    if grid is not None:
        position, placement_confidence = grid_search(
            handle, image, patch, grid, true_class
        )
    else:
        position = _center_position(bbox_region, patch.height, patch.width, image)
        placement_confidence = None

    final_patch, losses = optimize_patch(
        handle, image, patch, position, config, true_class=true_class
    )
    patched_image = apply_patch(image, final_patch)
    post_detections = handle.detect(patched_image)
    return AttackResult(
        patch=final_patch,
        position=tuple(position),
        loss_trace=losses,
        pre_detections=tuple(pre_detections),
        post_detections=tuple(post_detections),
        true_class=true_class,
        grid=grid,
        placement_confidence=placement_confidence,
        patched_image=patched_image,
    )
