"""Session fixtures: trained toy models, cached on disk across runs.

Training is deterministic given the pinned seeds below, so the cache is
purely a speedup; deleting tests/_cache reproduces identical weights.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from _support import ACCEPTANCE_VERDICTS, fixture_set
from patchbench.core import derive_stream
from patchbench.defense.diffusion import (
    DenoiserParams,
    NoiseSchedule,
    ToyDenoiser,
    train_denoiser,
)
from patchbench.defense.segmenter import (
    SegmenterParams,
    make_segmentation_dataset,
    train_segmenter,
)
from patchbench.detector.shapes import make_dataset
from patchbench.detector.toy import ToyDetector, ToyDetectorParams, train_toy_detector

settings.register_profile(
    "suite",
    deadline=None,
    max_examples=25,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

_CACHE = Path(__file__).resolve().parent / "_cache"

# Pinned training runs shared by the whole suite. Budgets are the same as
# the CLI defaults; seeds are arbitrary but fixed.
DETECTOR_TRAIN = {"seed": 11, "per_class": 150, "epochs": 12}
SEGMENTER_TRAIN = {"data_seed": 21, "train_seed": 22, "count": 240, "epochs": 10}
DENOISER_TRAIN = {"data_seed": 31, "train_seed": 32, "per_class": 60, "epochs": 10}


def _cache_path(name: str, params: dict) -> Path:
    digest = hashlib.sha256(
        json.dumps(params, sort_keys=True).encode("ascii")
    ).hexdigest()[:10]
    return _CACHE / f"{name}_{digest}.npz"


@pytest.fixture(scope="session")
def toy_detector() -> ToyDetector:
    path = _cache_path("detector", DETECTOR_TRAIN)
    if path.exists():
        return ToyDetector(ToyDetectorParams.load(path))
    spec = DETECTOR_TRAIN
    handle = train_toy_detector(
        derive_stream(spec["seed"]), per_class=spec["per_class"], epochs=spec["epochs"]
    )
    _CACHE.mkdir(exist_ok=True)
    handle.params.save(path)
    return handle


@pytest.fixture(scope="session")
def segmenter_params() -> SegmenterParams:
    path = _cache_path("segmenter", SEGMENTER_TRAIN)
    if path.exists():
        return SegmenterParams.load(path)
    spec = SEGMENTER_TRAIN
    dataset = make_segmentation_dataset(derive_stream(spec["data_seed"]), spec["count"])
    params = train_segmenter(dataset, spec["epochs"], derive_stream(spec["train_seed"]))
    _CACHE.mkdir(exist_ok=True)
    params.save(path)
    return params


@pytest.fixture(scope="session")
def default_schedule() -> NoiseSchedule:
    return NoiseSchedule.linear()


@pytest.fixture(scope="session")
def toy_denoiser(default_schedule) -> ToyDenoiser:
    path = _cache_path("denoiser", DENOISER_TRAIN)
    if path.exists():
        return ToyDenoiser(DenoiserParams.load(path), default_schedule)
    spec = DENOISER_TRAIN
    images, _, _ = make_dataset(derive_stream(spec["data_seed"]), per_class=spec["per_class"])
    denoiser = train_denoiser(images, default_schedule, derive_stream(spec["train_seed"]),
                              epochs=spec["epochs"])
    _CACHE.mkdir(exist_ok=True)
    denoiser.params.save(path)
    return denoiser


@pytest.fixture(scope="session")
def eval_set():
    """20 labeled shape images under the first acceptance master seed."""
    return fixture_set(101)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_VERDICTS:
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{status}  {name}: {detail}")
