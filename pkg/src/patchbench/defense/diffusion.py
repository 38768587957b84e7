"""Forward noising, learned reverse denoising, and masked restoration.

The forward process mixes an image toward standard normal noise under a
cumulative schedule; the reverse chain walks back one step at a time
using a noise predictor. Restoration confines generation to masked
pixels by reinjecting the forward-noised known region at every step.

The noising chain escapes the pixel range by construction, so these
operations work on raw float arrays; unit-interval Image values enter
and leave only at the diffusion_restore boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _nn
from ..core import BinaryMask, Image, PatchBenchError, RngStream


class StepError(PatchBenchError):
    """A diffusion step index outside the schedule."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise fractions and their cumulative products.

    ``betas[t-1]`` is the noise fraction of step t (1-based). The
    cumulative signal factor alpha_bar(t) is the product of (1 - beta)
    up to t, with alpha_bar(0) = 1 by convention; it decreases strictly.
    """

    betas: tuple[float, ...]

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        if len(betas) < 1:
            raise ValueError("schedule needs at least one step")
        for t, beta in enumerate(betas, start=1):
            if not 0.0 < beta < 1.0:
                raise ValueError(f"beta at step {t} must be in (0, 1), got {beta}")
        object.__setattr__(self, "betas", betas)
        bars = [1.0]
        for beta in betas:
            bars.append(bars[-1] * (1.0 - beta))
        for t in range(1, len(bars)):
            if not 0.0 < bars[t] < bars[t - 1]:
                raise ValueError("cumulative signal factors must decrease strictly in (0, 1]")
        object.__setattr__(self, "_alpha_bars", tuple(bars))

    @classmethod
    def linear(cls, steps: int = 50, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        """Linearly spaced betas from beta_start to beta_end."""
        if steps < 1:
            raise ValueError(f"steps must be >= 1, got {steps}")
        return cls(betas=tuple(np.linspace(beta_start, beta_end, steps)))

    @property
    def steps(self) -> int:
        return len(self.betas)

    def beta(self, t: int) -> float:
        self._check_step(t)
        return self.betas[t - 1]

    def alpha(self, t: int) -> float:
        return 1.0 - self.beta(t)

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.steps:
            raise StepError(f"step {t} outside [0, {self.steps}]")
        return self._alpha_bars[t]

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.steps:
            raise StepError(f"step {t} outside [1, {self.steps}]")


def _as_array(x) -> np.ndarray:
    if isinstance(x, Image):
        return np.array(x.data, copy=True)
    return np.asarray(x, dtype=np.float64)


def forward_diffuse(x0, t: int, schedule: NoiseSchedule,
                    rng: np.random.Generator) -> np.ndarray:
    """Noised sample at step t: sqrt(abar) x0 + sqrt(1 - abar) eps.

    t = 0 returns a copy of the input without consuming the generator
    (the alpha_bar(0) = 1 convention); 1 <= t <= steps draws one standard
    normal field.
    """
    data = _as_array(x0)
    if not 0 <= t <= schedule.steps:
        raise StepError(f"step {t} outside [0, {schedule.steps}]")
    if t == 0:
        return data
    abar = schedule.alpha_bar(t)
    noise = rng.standard_normal(data.shape)
    return math.sqrt(abar) * data + math.sqrt(1.0 - abar) * noise


def reverse_step(x_t, t: int, denoiser, schedule: NoiseSchedule,
                 rng: np.random.Generator) -> np.ndarray:
    """One denoising step from x_t to x_{t-1}.

    The predicted noise is removed from the scaled mean and fresh noise
    of scale sqrt(beta_t) is added, except at t = 1 where the chain ends
    deterministically.
    """
    data = _as_array(x_t)
    schedule._check_step(t)
    beta = schedule.beta(t)
    alpha = schedule.alpha(t)
    abar = schedule.alpha_bar(t)
    eps_hat = np.asarray(denoiser(data, t), dtype=np.float64)
    if eps_hat.shape != data.shape:
        raise ValueError(
            f"denoiser output shape {eps_hat.shape} does not match input {data.shape}"
        )
    mean = (data - beta / math.sqrt(1.0 - abar) * eps_hat) / math.sqrt(alpha)
    if t == 1:
        return mean
    return mean + math.sqrt(beta) * rng.standard_normal(data.shape)


def diffusion_restore(image: Image, mask: BinaryMask, denoiser,
                      schedule: NoiseSchedule, rng: np.random.Generator) -> Image:
    """Regenerate only the masked pixels through the reverse chain.

    Walks the chain down from t = T; after every step the unmasked pixels
    are overwritten with the forward-noised original at the same step, so
    the generated content is conditioned on the known region and the
    final unmasked pixels equal the input bit-exactly. The chain starts
    from a noised copy whose masked pixels are first replaced by the
    unmasked region's channel means: with a short toy schedule the start
    state retains signal, and seeding it with the masked content would
    leak the very pixels the mask is meant to discard. An empty mask
    short-circuits to the input unchanged.
    """
    hole = mask.data
    if hole.shape != (image.height, image.width):
        raise PatchBenchError(
            f"mask shape {hole.shape} does not match image "
            f"{(image.height, image.width)}"
        )
    if not hole.any():
        return image
    known = ~hole
    base = image.data.copy()
    base[hole] = image.data[known].mean(axis=0)
    x = forward_diffuse(base, schedule.steps, schedule, rng)
    for t in range(schedule.steps, 0, -1):
        x = reverse_step(x, t, denoiser, schedule, rng)
        reference = forward_diffuse(image.data, t - 1, schedule, rng)
        x[known] = reference[known]
    return Image(np.clip(x, 0.0, 1.0))


class AnalyticGaussianDenoiser:
    """Posterior-mean noise predictor for elementwise Gaussian data.

    For data distributed N(mean, std ** 2) per element, the conditional
    expectation of the forward noise given x_t has the closed form used
    here; it is the optimal predictor for that toy distribution.
    """

    kind = "analytic-gaussian"

    def __init__(self, schedule: NoiseSchedule, mean: float, std: float):
        self.schedule = schedule
        self.mean = float(mean)
        self.std = float(std)

    def __call__(self, x_t: np.ndarray, t: int) -> np.ndarray:
        abar = self.schedule.alpha_bar(t)
        root = math.sqrt(1.0 - abar)
        variance = abar * self.std ** 2 + (1.0 - abar)
        return root * (np.asarray(x_t) - math.sqrt(abar) * self.mean) / variance


# Toy trained denoiser: three same-size convolutions over the image
# concatenated with a constant channel carrying alpha_bar(t).
DENOISER_CHANNELS = 16


@dataclass
class DenoiserParams:
    """Weights of the toy noise predictor plus the initialization seed."""

    weights: dict[str, np.ndarray]
    seed: int

    @classmethod
    def initialize(cls, stream: RngStream, channels: int = DENOISER_CHANNELS) -> "DenoiserParams":
        rng = stream.generator()
        c = channels
        weights = {
            "c1_w": _nn.he_init(rng, (3, 3, 4, c), fan_in=4 * 9),
            "c1_b": np.zeros(c),
            "c2_w": _nn.he_init(rng, (3, 3, c, c), fan_in=c * 9),
            "c2_b": np.zeros(c),
            "c3_w": _nn.he_init(rng, (3, 3, c, 3), fan_in=c * 9),
            "c3_b": np.zeros(3),
        }
        return cls(weights=weights, seed=stream.master_seed)

    def save(self, path) -> None:
        np.savez(path, seed=self.seed, **self.weights)

    @classmethod
    def load(cls, path) -> "DenoiserParams":
        with np.load(path) as archive:
            weights = {k: archive[k] for k in archive.files if k != "seed"}
            return cls(weights=weights, seed=int(archive["seed"]))


def _denoiser_forward(weights: dict[str, np.ndarray], x: np.ndarray,
                      abar: np.ndarray):
    """x is (N, H, W, 3); abar is (N,) conditioning values."""
    n, h, w, _ = x.shape
    condition = np.broadcast_to(abar[:, None, None, None], (n, h, w, 1))
    inp = np.concatenate([x, condition], axis=3)
    z1, cv1 = _nn.conv2d(inp, weights["c1_w"], weights["c1_b"])
    a1, r1 = _nn.relu(z1)
    z2, cv2 = _nn.conv2d(a1, weights["c2_w"], weights["c2_b"])
    a2, r2 = _nn.relu(z2)
    out, cv3 = _nn.conv2d(a2, weights["c3_w"], weights["c3_b"])
    return out, (cv1, r1, cv2, r2, cv3)


def _denoiser_backward(dout: np.ndarray, cache):
    cv1, r1, cv2, r2, cv3 = cache
    da2, dc3_w, dc3_b = _nn.conv2d_backward(dout, cv3)
    dz2 = _nn.relu_backward(da2, r2)
    da1, dc2_w, dc2_b = _nn.conv2d_backward(dz2, cv2)
    dz1 = _nn.relu_backward(da1, r1)
    _, dc1_w, dc1_b = _nn.conv2d_backward(dz1, cv1)
    return {"c1_w": dc1_w, "c1_b": dc1_b, "c2_w": dc2_w, "c2_b": dc2_b,
            "c3_w": dc3_w, "c3_b": dc3_b}


class ToyDenoiser:
    """Trained noise predictor; callable as denoiser(x_t, t)."""

    kind = "toy-trained"

    def __init__(self, params: DenoiserParams, schedule: NoiseSchedule):
        self.params = params
        self.schedule = schedule

    def __call__(self, x_t: np.ndarray, t: int) -> np.ndarray:
        x = np.asarray(x_t, dtype=np.float64)[None]
        abar = np.array([self.schedule.alpha_bar(t)])
        out, _ = _denoiser_forward(self.params.weights, x, abar)
        return out[0]


def train_denoiser(images: np.ndarray, schedule: NoiseSchedule, stream: RngStream,
                   epochs: int = 10, batch_size: int = 8, lr: float = 2e-3,
                   channels: int = DENOISER_CHANNELS) -> ToyDenoiser:
    """Noise-prediction training: sample a step, noise the batch, regress.

    ``images`` is (N, H, W, 3) in the unit interval. Deterministic given
    the stream; epochs = 0 returns the raw initialization.
    """
    data = np.asarray(images, dtype=np.float64)
    if data.ndim != 4 or data.shape[0] < 1:
        raise ValueError(f"images must be (N, H, W, 3) with N >= 1, got {data.shape}")
    params = DenoiserParams.initialize(stream.child(0), channels=channels)
    train_rng = stream.child(1).generator()
    opt = _nn.Adam(params.weights, lr=lr)
    n = data.shape[0]
    bars = np.array([schedule.alpha_bar(t) for t in range(schedule.steps + 1)])
    for _ in range(epochs):
        order = train_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            x0 = data[idx]
            t = train_rng.integers(1, schedule.steps + 1, size=len(idx))
            abar = bars[t]
            noise = train_rng.standard_normal(x0.shape)
            x_t = (np.sqrt(abar)[:, None, None, None] * x0
                   + np.sqrt(1.0 - abar)[:, None, None, None] * noise)
            out, cache = _denoiser_forward(params.weights, x_t, abar)
            dout = 2.0 * (out - noise) / out.size
            opt.step(_denoiser_backward(dout, cache))
    return ToyDenoiser(params, schedule)
