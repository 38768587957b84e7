"""Shape completion morphology and patch removal."""

from collections import deque

import numpy as np
import pytest
from PIL import Image as PILImage

from patchbench.core import BinaryMask, Image, ShapeError
from patchbench.defense.masks import export_mask_png, remove_patch, shape_complete


# loop-based morphology oracle


def _components_oracle(mask: np.ndarray) -> list[np.ndarray]:
    h, w = mask.shape
    seen = np.zeros_like(mask, dtype=bool)
    out = []
    for si in range(h):
        for sj in range(w):
            if not mask[si, sj] or seen[si, sj]:
                continue
            comp = np.zeros_like(mask, dtype=bool)
            queue = deque([(si, sj)])
            seen[si, sj] = True
            while queue:
                i, j = queue.popleft()
                comp[i, j] = True
                for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    ni, nj = i + di, j + dj
                    if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                        seen[ni, nj] = True
                        queue.append((ni, nj))
            out.append(comp)
    return out


def _dilate_oracle(mask: np.ndarray, iterations: int) -> np.ndarray:
    out = mask.copy()
    h, w = mask.shape
    for _ in range(iterations):
        src = out
        out = np.zeros_like(src)
        for i in range(h):
            for j in range(w):
                hit = False
                for di in (-1, 0, 1):
                    for dj in (-1, 0, 1):
                        ni, nj = i + di, j + dj
                        if 0 <= ni < h and 0 <= nj < w and src[ni, nj]:
                            hit = True
                out[i, j] = hit
    return out


def _fill_oracle(mask: np.ndarray) -> np.ndarray:
    # Flood the complement from the border, 4-connected; what the flood
    # cannot reach is an enclosed hole.
    h, w = mask.shape
    open_air = np.zeros_like(mask, dtype=bool)
    queue = deque()
    for i in range(h):
        for j in (0, w - 1):
            if not mask[i, j] and not open_air[i, j]:
                open_air[i, j] = True
                queue.append((i, j))
    for j in range(w):
        for i in (0, h - 1):
            if not mask[i, j] and not open_air[i, j]:
                open_air[i, j] = True
                queue.append((i, j))
    while queue:
        i, j = queue.popleft()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and not mask[ni, nj] and not open_air[ni, nj]:
                open_air[ni, nj] = True
                queue.append((ni, nj))
    return mask | ~open_air


def _shape_complete_oracle(probs, threshold=0.5, min_component=10, iterations=2):
    binary = np.asarray(probs, dtype=np.float64) >= threshold
    if binary.any() and min_component > 1:
        kept = np.zeros_like(binary)
        for comp in _components_oracle(binary):
            if comp.sum() >= min_component:
                kept |= comp
        binary = kept
    if binary.any():
        binary = _dilate_oracle(binary, iterations)
        binary = _fill_oracle(binary)
    return binary


def _blob_probs(rng, size=20):
    probs = rng.uniform(0.0, 0.45, size=(size, size))
    for _ in range(int(rng.integers(1, 4))):
        h = int(rng.integers(2, 8))
        w = int(rng.integers(2, 8))
        r = int(rng.integers(0, size - h + 1))
        c = int(rng.integers(0, size - w + 1))
        probs[r : r + h, c : c + w] = rng.uniform(0.55, 1.0, size=(h, w))
    return probs


# shape_complete


def test_empty_probabilities_give_an_empty_mask():
    mask = shape_complete(np.zeros((16, 16)))
    assert not mask.data.any()
    assert mask.area_fraction == 0.0


def test_interior_hole_is_filled():
    probs = np.zeros((20, 20))
    probs[4:16, 4:16] = 0.9
    probs[9:11, 9:11] = 0.0
    mask = shape_complete(probs)
    assert mask.data[9:11, 9:11].all()
    assert mask.data[4:16, 4:16].all()


def test_small_specks_are_dropped():
    probs = np.zeros((20, 20))
    probs[3, 3:8] = 0.9
    mask = shape_complete(probs, min_component=10)
    assert not mask.data.any()
    kept = shape_complete(probs, min_component=5)
    assert kept.data.any()


def test_output_contains_the_size_filtered_input():
    rng = np.random.default_rng(90)
    for _ in range(10):
        probs = _blob_probs(rng)
        binary = probs >= 0.5
        kept = np.zeros_like(binary)
        for comp in _components_oracle(binary):
            if comp.sum() >= 10:
                kept |= comp
        mask = shape_complete(probs)
        assert np.all(mask.data[kept])


def test_dilation_grows_the_mask_by_the_expected_margin():
    probs = np.zeros((20, 20))
    probs[8:12, 8:12] = 1.0
    mask = shape_complete(probs, dilation_iterations=2)
    assert mask.data[6:14, 6:14].all()
    assert not mask.data[5, :].any()
    assert not mask.data[:, 5].any()


def test_shape_complete_matches_the_morphology_oracle():
    rng = np.random.default_rng(91)
    for _ in range(25):
        probs = _blob_probs(rng)
        got = shape_complete(probs).data
        want = _shape_complete_oracle(probs)
        assert np.array_equal(got, want)


def test_shape_complete_respects_custom_parameters():
    rng = np.random.default_rng(92)
    probs = _blob_probs(rng)
    got = shape_complete(probs, binarize_threshold=0.7, min_component=4,
                         dilation_iterations=1).data
    want = _shape_complete_oracle(probs, threshold=0.7, min_component=4, iterations=1)
    assert np.array_equal(got, want)


def test_threshold_is_validated():
    with pytest.raises(ValueError):
        shape_complete(np.zeros((4, 4)), binarize_threshold=0.0)
    with pytest.raises(ValueError):
        shape_complete(np.zeros((4, 4)), binarize_threshold=1.0)
    with pytest.raises(ValueError):
        shape_complete(np.zeros((4, 4, 2)))


# remove_patch


def test_empty_mask_removal_is_bit_exact_identity():
    rng = np.random.default_rng(93)
    image = Image(rng.uniform(size=(8, 8, 3)))
    out = remove_patch(image, BinaryMask(np.zeros((8, 8), dtype=bool)))
    assert np.array_equal(out.data, image.data)


def test_full_mask_removal_zeroes_everything():
    rng = np.random.default_rng(94)
    image = Image(rng.uniform(size=(8, 8, 3)))
    out = remove_patch(image, BinaryMask(np.ones((8, 8), dtype=bool)))
    assert np.array_equal(out.data, np.zeros((8, 8, 3)))


def test_removal_matches_the_elementwise_oracle():
    rng = np.random.default_rng(95)
    image = Image(rng.uniform(size=(10, 10, 3)))
    mask = rng.uniform(size=(10, 10)) > 0.5
    out = remove_patch(image, BinaryMask(mask))
    for i in range(10):
        for j in range(10):
            if mask[i, j]:
                assert np.all(out.data[i, j] == 0.0)
            else:
                assert np.array_equal(out.data[i, j], image.data[i, j])


def test_removal_rejects_shape_mismatch():
    image = Image(np.zeros((8, 8, 3)))
    with pytest.raises(ShapeError):
        remove_patch(image, BinaryMask(np.zeros((4, 4), dtype=bool)))


def test_removal_does_not_mutate_the_input():
    rng = np.random.default_rng(96)
    image = Image(rng.uniform(low=0.5, size=(6, 6, 3)))
    before = np.array(image.data, copy=True)
    remove_patch(image, BinaryMask(np.ones((6, 6), dtype=bool)))
    assert np.array_equal(image.data, before)


# export


def test_mask_png_round_trips(tmp_path):
    rng = np.random.default_rng(97)
    mask = BinaryMask(rng.uniform(size=(12, 9)) > 0.5)
    path = tmp_path / "mask.png"
    export_mask_png(mask, path)
    with PILImage.open(path) as img:
        pixels = np.asarray(img.convert("L")) > 0
    assert np.array_equal(pixels, mask.data)
