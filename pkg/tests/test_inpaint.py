"""Isophote inpainting: constants, gradients, and untouched pixels."""

import numpy as np
import pytest

from patchbench.core import BinaryMask, Image, ShapeError
from patchbench.defense.inpaint import InpaintError, inpaint


def _hole(shape, rows, cols):
    mask = np.zeros(shape, dtype=bool)
    mask[rows, cols] = True
    return BinaryMask(mask)


def test_empty_mask_is_identity_bit_exact():
    rng = np.random.default_rng(100)
    image = Image(rng.uniform(size=(12, 12, 3)))
    out = inpaint(image, BinaryMask(np.zeros((12, 12), dtype=bool)))
    assert np.array_equal(out.data, image.data)


def test_constant_image_is_restored_to_the_constant():
    image = Image(np.full((16, 16, 3), 0.4))
    mask = _hole((16, 16), slice(5, 11), slice(6, 12))
    out = inpaint(image, mask)
    assert np.max(np.abs(out.data - 0.4)) < 1e-6


def test_linear_gradient_is_continued_into_the_hole():
    # Horizontal ramp; a centered 8x8 hole must be rebuilt from the sides.
    w = 24
    ramp = np.linspace(0.1, 0.9, w)
    data = np.broadcast_to(ramp[None, :, None], (24, w, 3)).copy()
    image = Image(data)
    mask = _hole((24, w), slice(8, 16), slice(8, 16))
    out = inpaint(image, mask)
    assert np.max(np.abs(out.data - data)) <= 0.05


def test_unmasked_pixels_are_bit_exact():
    rng = np.random.default_rng(101)
    image = Image(rng.uniform(size=(14, 14, 3)))
    hole = np.zeros((14, 14), dtype=bool)
    hole[3:8, 4:9] = True
    out = inpaint(image, BinaryMask(hole))
    assert np.array_equal(out.data[~hole], image.data[~hole])
    assert not np.array_equal(out.data[hole], image.data[hole])


def test_output_stays_in_pixel_range():
    rng = np.random.default_rng(102)
    image = Image(rng.uniform(size=(12, 12, 3)))
    hole = np.zeros((12, 12), dtype=bool)
    hole[2:10, 2:10] = True
    out = inpaint(image, BinaryMask(hole))
    assert out.data.min() >= 0.0 and out.data.max() <= 1.0


def test_full_mask_raises_inpaint_error():
    image = Image(np.full((8, 8, 3), 0.5))
    with pytest.raises(InpaintError):
        inpaint(image, BinaryMask(np.ones((8, 8), dtype=bool)))


def test_shape_mismatch_is_rejected():
    image = Image(np.zeros((8, 8, 3)))
    with pytest.raises(ShapeError):
        inpaint(image, BinaryMask(np.zeros((4, 4), dtype=bool)))


def test_radius_is_validated():
    image = Image(np.zeros((8, 8, 3)))
    with pytest.raises(ValueError):
        inpaint(image, BinaryMask(np.zeros((8, 8), dtype=bool)), radius=0)


def test_multiple_disjoint_holes_are_all_filled():
    image = Image(np.full((16, 16, 3), 0.7))
    hole = np.zeros((16, 16), dtype=bool)
    hole[2:5, 2:5] = True
    hole[10:14, 9:13] = True
    out = inpaint(image, BinaryMask(hole))
    assert np.max(np.abs(out.data - 0.7)) < 1e-6


def test_inpaint_is_deterministic():
    rng = np.random.default_rng(103)
    image = Image(rng.uniform(size=(12, 12, 3)))
    hole = np.zeros((12, 12), dtype=bool)
    hole[4:9, 5:10] = True
    a = inpaint(image, BinaryMask(hole))
    b = inpaint(image, BinaryMask(hole))
    assert np.array_equal(a.data, b.data)


def test_input_image_is_not_mutated():
    rng = np.random.default_rng(104)
    image = Image(rng.uniform(size=(10, 10, 3)))
    before = np.array(image.data, copy=True)
    hole = np.zeros((10, 10), dtype=bool)
    hole[3:6, 3:6] = True
    inpaint(image, BinaryMask(hole))
    assert np.array_equal(image.data, before)


def test_vertical_gradient_is_continued_too():
    h = 24
    ramp = np.linspace(0.2, 0.8, h)
    data = np.broadcast_to(ramp[:, None, None], (h, 24, 3)).copy()
    image = Image(data)
    mask = _hole((h, 24), slice(8, 16), slice(8, 16))
    out = inpaint(image, mask)
    assert np.max(np.abs(out.data - data)) <= 0.05
