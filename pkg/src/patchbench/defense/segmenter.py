"""Toy adversarial-patch segmenter.

A small encoder-decoder (two downsampling and two upsampling stages with
skip connections, per-pixel sigmoid head) maps an image to a per-pixel
patch probability. Trained with binary cross-entropy on a synthetic
corpus of clean and patch-pasted shape images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _nn
from ..core import Image, PatchBenchError, RngStream, ShapeError
from ..detector.shapes import CLASS_NAMES, IMAGE_SIZE, generate_image

ENC1_CHANNELS = 8
ENC2_CHANNELS = 16
MID_CHANNELS = 16


class DatasetError(PatchBenchError):
    """Training requires a nonempty dataset."""


@dataclass
class SegmenterParams:
    """Weights of the fixed encoder-decoder plus the initialization seed."""

    weights: dict[str, np.ndarray]
    seed: int

    @classmethod
    def initialize(cls, stream: RngStream) -> "SegmenterParams":
        rng = stream.generator()
        c1, c2, cm = ENC1_CHANNELS, ENC2_CHANNELS, MID_CHANNELS
        weights = {
            "enc1_w": _nn.he_init(rng, (3, 3, 3, c1), fan_in=3 * 9),
            "enc1_b": np.zeros(c1),
            "enc2_w": _nn.he_init(rng, (3, 3, c1, c2), fan_in=c1 * 9),
            "enc2_b": np.zeros(c2),
            "mid_w": _nn.he_init(rng, (3, 3, c2, cm), fan_in=c2 * 9),
            "mid_b": np.zeros(cm),
            "dec2_w": _nn.he_init(rng, (3, 3, cm + c2, c2), fan_in=(cm + c2) * 9),
            "dec2_b": np.zeros(c2),
            "dec1_w": _nn.he_init(rng, (3, 3, c2 + c1, c1), fan_in=(c2 + c1) * 9),
            "dec1_b": np.zeros(c1),
            "head_w": _nn.he_init(rng, (3, 3, c1, 1), fan_in=c1 * 9),
            "head_b": np.zeros(1),
        }
        return cls(weights=weights, seed=stream.master_seed)

    def save(self, path) -> None:
        np.savez(path, seed=self.seed, **self.weights)

    @classmethod
    def load(cls, path) -> "SegmenterParams":
        with np.load(path) as archive:
            weights = {k: archive[k] for k in archive.files if k != "seed"}
            return cls(weights=weights, seed=int(archive["seed"]))


def _forward(weights: dict[str, np.ndarray], x: np.ndarray):
    """Batch forward to per-pixel logits. Returns (logits (N,H,W,1), cache)."""
    z1, cv1 = _nn.conv2d(x, weights["enc1_w"], weights["enc1_b"])
    a1, r1 = _nn.relu(z1)
    p1, s1 = _nn.avgpool2(a1)
    z2, cv2 = _nn.conv2d(p1, weights["enc2_w"], weights["enc2_b"])
    a2, r2 = _nn.relu(z2)
    p2, s2 = _nn.avgpool2(a2)
    zm, cvm = _nn.conv2d(p2, weights["mid_w"], weights["mid_b"])
    am, rm = _nn.relu(zm)
    u2, us2 = _nn.upsample_nearest2(am)
    cat2 = np.concatenate([u2, a2], axis=3)
    zd2, cvd2 = _nn.conv2d(cat2, weights["dec2_w"], weights["dec2_b"])
    ad2, rd2 = _nn.relu(zd2)
    u1, us1 = _nn.upsample_nearest2(ad2)
    cat1 = np.concatenate([u1, a1], axis=3)
    zd1, cvd1 = _nn.conv2d(cat1, weights["dec1_w"], weights["dec1_b"])
    ad1, rd1 = _nn.relu(zd1)
    logits, cvh = _nn.conv2d(ad1, weights["head_w"], weights["head_b"])
    cache = (cv1, r1, s1, cv2, r2, s2, cvm, rm, us2, cvd2, rd2, us1, cvd1, rd1, cvh,
             u2.shape[3], u1.shape[3])
    return logits, cache


def _backward(dlogits: np.ndarray, cache):
    """Weight gradients for the loss behind dlogits."""
    (cv1, r1, s1, cv2, r2, s2, cvm, rm, us2, cvd2, rd2, us1, cvd1, rd1, cvh,
     split2, split1) = cache
    dad1, dhead_w, dhead_b = _nn.conv2d_backward(dlogits, cvh)
    dzd1 = _nn.relu_backward(dad1, rd1)
    dcat1, ddec1_w, ddec1_b = _nn.conv2d_backward(dzd1, cvd1)
    du1, da1_skip = dcat1[..., :split1], dcat1[..., split1:]
    dad2 = _nn.upsample_nearest2_backward(du1, us1)
    dzd2 = _nn.relu_backward(dad2, rd2)
    dcat2, ddec2_w, ddec2_b = _nn.conv2d_backward(dzd2, cvd2)
    du2, da2_skip = dcat2[..., :split2], dcat2[..., split2:]
    dam = _nn.upsample_nearest2_backward(du2, us2)
    dzm = _nn.relu_backward(dam, rm)
    dp2, dmid_w, dmid_b = _nn.conv2d_backward(dzm, cvm)
    da2 = _nn.avgpool2_backward(dp2, s2) + da2_skip
    dz2 = _nn.relu_backward(da2, r2)
    dp1, denc2_w, denc2_b = _nn.conv2d_backward(dz2, cv2)
    da1 = _nn.avgpool2_backward(dp1, s1) + da1_skip
    dz1 = _nn.relu_backward(da1, r1)
    _, denc1_w, denc1_b = _nn.conv2d_backward(dz1, cv1)
    return {
        "enc1_w": denc1_w, "enc1_b": denc1_b,
        "enc2_w": denc2_w, "enc2_b": denc2_b,
        "mid_w": dmid_w, "mid_b": dmid_b,
        "dec2_w": ddec2_w, "dec2_b": ddec2_b,
        "dec1_w": ddec1_w, "dec1_b": ddec1_b,
        "head_w": dhead_w, "head_b": dhead_b,
    }


def segment(params: SegmenterParams, image) -> np.ndarray:
    """Per-pixel adversarial-patch probability, shape H x W in [0, 1].

    Accepts an Image or a raw H x W x 3 array.
    """
    pixels = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    logits, _ = _forward(params.weights, pixels[None])
    return _nn.sigmoid(logits)[0, :, :, 0]


def bce_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean binary cross-entropy; predictions are clamped to avoid log(0)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth_arr = np.asarray(truth)
    if pred.shape != truth_arr.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} does not match truth {truth_arr.shape}"
        )
    y = truth_arr.astype(np.float64)
    p = np.clip(pred, 1e-7, 1.0 - 1e-7)
    return float(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).mean())


def train_segmenter(dataset, epochs: int, stream: RngStream,
                    batch_size: int = 8, lr: float = 2e-3) -> SegmenterParams:
    """BCE-trained segmenter weights, deterministic given the stream.

    ``dataset`` is a sequence of (image array H x W x 3, truth mask H x W
    booleans) pairs. epochs = 0 returns the untouched initialization.
    """
    pairs = list(dataset)
    if not pairs:
        raise DatasetError("segmenter training requires a nonempty dataset")
    images = np.stack([np.asarray(img, dtype=np.float64) for img, _ in pairs])
    truths = np.stack([np.asarray(t, dtype=bool) for _, t in pairs])
    params = SegmenterParams.initialize(stream.child(0))
    shuffle_rng = stream.child(1).generator()
    opt = _nn.Adam(params.weights, lr=lr)
    n = images.shape[0]
    for _ in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits, cache = _forward(params.weights, images[idx])
            probs = _nn.sigmoid(logits)
            target = truths[idx][..., None].astype(np.float64)
            # d(mean BCE)/dlogits for a sigmoid head.
            dlogits = (probs - target) / probs.size
            opt.step(_backward(dlogits, cache))
    return params


def make_segmentation_dataset(stream: RngStream, count: int,
                              size: int = IMAGE_SIZE, clean_fraction: float = 0.25):
    """Synthetic training pairs: shape images, three quarters patch-pasted.

    Pasted patches cycle through textures an optimized patch tends toward
    (dense uniform noise, noisy solid color, noisy checkerboard); the
    truth mask is the pasted rectangle, or empty for clean samples.
    """
    pairs = []
    for index in range(count):
        rng = stream.child(index).generator()
        image, _ = generate_image(rng, class_id=index % len(CLASS_NAMES), size=size)
        data = np.array(image.data)
        truth = np.zeros((size, size), dtype=bool)
        if rng.uniform() >= clean_fraction:
            fraction = rng.uniform(0.04, 0.2)
            side = max(2, int(math.floor(math.sqrt(fraction * size * size))))
            row = int(rng.integers(0, size - side + 1))
            col = int(rng.integers(0, size - side + 1))
            kind = int(rng.integers(0, 3))
            if kind == 0:
                texture = rng.uniform(0.0, 1.0, size=(side, side, 3))
            elif kind == 1:
                color = rng.uniform(0.0, 1.0, size=3)
                texture = np.clip(color + rng.normal(0.0, 0.15, (side, side, 3)), 0, 1)
            else:
                a = rng.uniform(0.0, 1.0, size=3)
                b = rng.uniform(0.0, 1.0, size=3)
                yy, xx = np.mgrid[0:side, 0:side]
                checker = ((yy // 2 + xx // 2) % 2).astype(np.float64)[..., None]
                texture = np.clip(
                    a * checker + b * (1 - checker) + rng.normal(0.0, 0.1, (side, side, 3)),
                    0, 1,
                )
            data[row : row + side, col : col + side] = texture
            truth[row : row + side, col : col + side] = True
        pairs.append((data, truth))
    return pairs
