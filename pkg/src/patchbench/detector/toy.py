"""In-process differentiable toy detector.

A small convolutional classifier acts as a single-object detector: the
softmax maximum gives the class and confidence, and the bounding box is
read off the thresholded extent of the last convolutional activation.
Everything is float64 numpy, so analytic input gradients can be checked
against finite differences at tight tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _nn
from ..core import Detection, Image, RngStream
from .base import DetectorHandle, FeatureMaps, LayerLookupError
from .shapes import CLASS_NAMES, IMAGE_SIZE, make_dataset

# Fixed architecture: conv(3x3, 3->8), pool2, conv(3x3, 8->16), pool2,
# dense(->64), dense(->classes). Feature layers "conv1" and "conv2" are the
# post-ReLU convolution outputs at full and half resolution.
CONV1_CHANNELS = 8
CONV2_CHANNELS = 16
HIDDEN_UNITS = 64
FEATURE_LAYERS = ("conv1", "conv2")


@dataclass
class ToyDetectorParams:
    """Weights of the fixed toy architecture plus provenance metadata."""

    weights: dict[str, np.ndarray]
    seed: int
    image_size: int = IMAGE_SIZE
    class_names: tuple[str, ...] = CLASS_NAMES

    @classmethod
    def initialize(cls, stream: RngStream, image_size: int = IMAGE_SIZE,
                   class_names: tuple[str, ...] = CLASS_NAMES) -> "ToyDetectorParams":
        """He-initialized weights drawn from the given stream."""
        rng = stream.generator()
        flat = (image_size // 4) * (image_size // 4) * CONV2_CHANNELS
        k = len(class_names)
        weights = {
            "conv1_w": _nn.he_init(rng, (3, 3, 3, CONV1_CHANNELS), fan_in=3 * 9),
            "conv1_b": np.zeros(CONV1_CHANNELS),
            "conv2_w": _nn.he_init(rng, (3, 3, CONV1_CHANNELS, CONV2_CHANNELS),
                                   fan_in=CONV1_CHANNELS * 9),
            "conv2_b": np.zeros(CONV2_CHANNELS),
            "fc1_w": _nn.he_init(rng, (flat, HIDDEN_UNITS), fan_in=flat),
            "fc1_b": np.zeros(HIDDEN_UNITS),
            "fc2_w": _nn.he_init(rng, (HIDDEN_UNITS, k), fan_in=HIDDEN_UNITS),
            "fc2_b": np.zeros(k),
        }
        return cls(weights=weights, seed=stream.master_seed, image_size=image_size,
                   class_names=tuple(class_names))

    def save(self, path) -> None:
        np.savez(path, seed=self.seed, image_size=self.image_size,
                 class_names=np.array(self.class_names), **self.weights)

    @classmethod
    def load(cls, path) -> "ToyDetectorParams":
        with np.load(path) as archive:
            names = tuple(str(n) for n in archive["class_names"])
            weights = {k: archive[k] for k in archive.files
                       if k not in ("seed", "image_size", "class_names")}
            return cls(weights=weights, seed=int(archive["seed"]),
                       image_size=int(archive["image_size"]), class_names=names)


def _forward(weights: dict[str, np.ndarray], x: np.ndarray):
    """Batch forward pass. Returns (logits, conv1 act, conv2 act, cache)."""
    # Fixed affine centering; the shift has unit Jacobian, so input
    # gradients are unaffected.
    x = x - 0.5
    z1, cv1 = _nn.conv2d(x, weights["conv1_w"], weights["conv1_b"])
    a1, r1 = _nn.relu(z1)
    p1, s1 = _nn.avgpool2(a1)
    z2, cv2 = _nn.conv2d(p1, weights["conv2_w"], weights["conv2_b"])
    a2, r2 = _nn.relu(z2)
    p2, s2 = _nn.avgpool2(a2)
    flat = p2.reshape(x.shape[0], -1)
    h, ch = _nn.dense(flat, weights["fc1_w"], weights["fc1_b"])
    hr, rh = _nn.relu(h)
    logits, cl = _nn.dense(hr, weights["fc2_w"], weights["fc2_b"])
    cache = (cv1, r1, s1, cv2, r2, s2, p2.shape, ch, rh, cl)
    return logits, a1, a2, cache


def _backward(dlogits: np.ndarray, cache):
    """Gradients of the scalar loss behind dlogits. Returns (dx, dweights)."""
    cv1, r1, s1, cv2, r2, s2, p2_shape, ch, rh, cl = cache
    dhr, dfc2_w, dfc2_b = _nn.dense_backward(dlogits, cl)
    dh = _nn.relu_backward(dhr, rh)
    dflat, dfc1_w, dfc1_b = _nn.dense_backward(dh, ch)
    dp2 = dflat.reshape(p2_shape)
    da2 = _nn.avgpool2_backward(dp2, s2)
    dz2 = _nn.relu_backward(da2, r2)
    dp1, dconv2_w, dconv2_b = _nn.conv2d_backward(dz2, cv2)
    da1 = _nn.avgpool2_backward(dp1, s1)
    dz1 = _nn.relu_backward(da1, r1)
    dx, dconv1_w, dconv1_b = _nn.conv2d_backward(dz1, cv1)
    grads = {
        "conv1_w": dconv1_w, "conv1_b": dconv1_b,
        "conv2_w": dconv2_w, "conv2_b": dconv2_b,
        "fc1_w": dfc1_w, "fc1_b": dfc1_b,
        "fc2_w": dfc2_w, "fc2_b": dfc2_b,
    }
    return dx, grads


class ToyDetector(DetectorHandle):
    """Classifier-as-detector over small single-object images.

    Emits exactly one detection per image: the softmax argmax with its
    probability as the confidence, boxed by the extent of the mean conv2
    activation above half its maximum. Fully differentiable, so it also
    serves the attack path via ``input_gradient``.
    """

    kind = "toy"
    has_gradients = True
    has_features = True

    def __init__(self, params: ToyDetectorParams):
        self.params = params
        self.class_count = len(params.class_names)
        self.default_feature_layer = "conv2"

    def _check_image(self, image: Image) -> np.ndarray:
        size = self.params.image_size
        if image.height != size or image.width != size:
            raise ValueError(
                f"toy detector expects {size}x{size} images, got "
                f"{image.height}x{image.width}"
            )
        return image.data[None]

    def class_probabilities(self, image: Image) -> np.ndarray:
        """Softmax class distribution for one image, shape (class_count,)."""
        logits, _, _, _ = _forward(self.params.weights, self._check_image(image))
        return _nn.softmax(logits)[0]

    def detect(self, image: Image) -> list[Detection]:
        x = self._check_image(image)
        logits, _, a2, _ = _forward(self.params.weights, x)
        probs = _nn.softmax(logits)[0]
        class_id = int(np.argmax(probs))
        bbox = self._activation_bbox(a2[0])
        return [Detection(class_id=class_id, confidence=float(probs[class_id]), bbox=bbox)]

    def _activation_bbox(self, a2: np.ndarray) -> tuple[int, int, int, int]:
        # Extent of mean activation cells >= half the peak, scaled back to
        # image resolution. A dead feature map boxes the whole image.
        act = a2.mean(axis=2)
        peak = act.max()
        size = self.params.image_size
        if peak <= 0.0:
            return (0, 0, size, size)
        rows = np.flatnonzero((act >= 0.5 * peak).any(axis=1))
        cols = np.flatnonzero((act >= 0.5 * peak).any(axis=0))
        scale = size // act.shape[0]
        x, y = int(cols[0]) * scale, int(rows[0]) * scale
        w = (int(cols[-1]) - int(cols[0]) + 1) * scale
        h = (int(rows[-1]) - int(rows[0]) + 1) * scale
        return (x, y, w, h)

    def feature_maps(self, image: Image, layer_id: str | None = None) -> FeatureMaps:
        if layer_id is None:
            layer_id = self.default_feature_layer
        if layer_id not in FEATURE_LAYERS:
            raise LayerLookupError(
                f"unknown feature layer {layer_id!r}; available: {FEATURE_LAYERS}"
            )
        _, a1, a2, _ = _forward(self.params.weights, self._check_image(image))
        data = a1[0] if layer_id == "conv1" else a2[0]
        return FeatureMaps(layer_id=layer_id, data=data)

    def input_gradient(self, image: Image, label: int, mode: str = "untargeted") -> np.ndarray:
        """Gradient of the cross-entropy toward ``label`` w.r.t. input pixels.

        Both modes differentiate the same function; they differ only in
        which label the caller supplies (attack target vs ground truth).
        Sign conventions for ascent or descent live in the attack loop.
        """
        if mode not in ("targeted", "untargeted"):
            raise ValueError(f"mode must be 'targeted' or 'untargeted', got {mode!r}")
        if not 0 <= int(label) < self.class_count:
            raise ValueError(f"label {label} outside [0, {self.class_count})")
        x = self._check_image(image)
        logits, _, _, cache = _forward(self.params.weights, x)
        _, dlogits = _nn.softmax_cross_entropy(logits, np.array([int(label)]))
        dx, _ = _backward(dlogits, cache)
        return dx[0]

    def cross_entropy(self, image: Image, label: int) -> float:
        """Cross-entropy of the detector's class distribution against ``label``."""
        logits, _, _, _ = _forward(self.params.weights, self._check_image(image))
        loss, _ = _nn.softmax_cross_entropy(logits, np.array([int(label)]))
        return loss


def train_toy_detector(stream: RngStream, per_class: int = 150, epochs: int = 12,
                       batch_size: int = 32, lr: float = 5e-3) -> ToyDetector:
    """Train the toy detector on the synthetic shapes corpus.

    Deterministic given the stream: corpus, initialization and shuffling
    each draw from fixed sub-streams, and the optimizer is plain Adam.
    """
    images, labels, _ = make_dataset(stream.child(0), per_class=per_class,
                                     distractor_probability=0.6)
    params = ToyDetectorParams.initialize(stream.child(1))
    shuffle_rng = stream.child(2).generator()
    opt = _nn.Adam(params.weights, lr=lr)
    n = images.shape[0]
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits, _, _, cache = _forward(params.weights, images[idx])
            _, dlogits = _nn.softmax_cross_entropy(logits, labels[idx])
            _, grads = _backward(dlogits, cache)
            opt.step(grads)
    return ToyDetector(params)
