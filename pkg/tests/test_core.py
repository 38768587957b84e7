"""Domain types, patch application, and seeded RNG streams."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patchbench.core import (
    BinaryMask,
    BoundsError,
    Detection,
    Heatmap,
    Image,
    Patch,
    Region,
    RngStream,
    apply_patch,
    derive_stream,
)


# type validation


def test_image_accepts_unit_interval_hwc3():
    img = Image(np.zeros((2, 3, 3)))
    assert img.height == 2 and img.width == 3
    assert not img.data.flags.writeable


def test_image_rejects_bad_shape_and_range():
    with pytest.raises(ValueError):
        Image(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        Image(np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), -0.1))
    bad = np.zeros((2, 2, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        Image(bad)


def test_image_u8_round_trip():
    arr = np.array([[[0, 128, 255]]], dtype=np.uint8)
    img = Image.from_u8(arr)
    assert np.array_equal(img.to_u8(), arr)


def test_patch_coerces_position_and_checks_mask_shape():
    patch = Patch(np.zeros((2, 2, 3)), position=(np.int64(3), 4.0))
    assert patch.position == (3, 4)
    assert isinstance(patch.position[0], int)
    assert patch.mask_or_full().all()
    with pytest.raises(ValueError):
        Patch(np.zeros((2, 2, 3)), shape_mask=np.ones((3, 3), dtype=bool))


def test_detection_validates_confidence():
    d = Detection(class_id=np.int64(2), confidence=0.5, bbox=(1.0, 2, 3, 4))
    assert d.class_id == 2 and d.bbox == (1, 2, 3, 4)
    with pytest.raises(ValueError):
        Detection(class_id=0, confidence=1.2, bbox=(0, 0, 1, 1))


def test_binary_mask_area_fraction():
    mask = BinaryMask(np.array([[True, False], [False, False]]))
    assert mask.area_fraction == 0.25
    with pytest.raises(ValueError):
        BinaryMask(np.zeros((2, 2, 2), dtype=bool))


def test_heatmap_range_checked():
    Heatmap(np.array([[0.0, 1.0]]))
    with pytest.raises(ValueError):
        Heatmap(np.array([[0.0, 1.1]]))
    with pytest.raises(ValueError):
        Heatmap(np.array([[-0.01, 0.5]]))


def test_region_validation_and_intersection():
    with pytest.raises(ValueError):
        Region(0, 0, 0, 5)
    with pytest.raises(ValueError):
        Region(-1, 0, 2, 2)
    a = Region(0, 0, 4, 4)
    b = Region(2, 2, 4, 4)
    assert a.intersect(b) == Region(2, 2, 2, 2)
    assert a.intersect(Region(10, 10, 2, 2)) is None
    inner = Region(1, 1, 2, 2)
    assert a.intersect(inner) == inner


# apply_patch


def test_apply_patch_identity_when_patch_equals_covered_region():
    rng = np.random.default_rng(0)
    img = Image(rng.uniform(size=(6, 6, 3)))
    patch = Patch(img.data[1:4, 2:5], position=(1, 2))
    out = apply_patch(img, patch)
    assert np.array_equal(out.data, img.data)


def test_apply_patch_single_pixel():
    img = Image(np.zeros((4, 4, 3)))
    out = apply_patch(img, Patch(np.full((1, 1, 3), 0.5), position=(0, 0)))
    assert np.all(out.data[0, 0] == 0.5)
    assert np.count_nonzero(out.data) == 3


def test_apply_patch_matches_elementwise_oracle():
    rng = np.random.default_rng(1)
    img = Image(rng.uniform(size=(8, 8, 3)))
    patch = Patch(rng.uniform(size=(3, 3, 3)), position=(2, 5))
    out = apply_patch(img, patch)
    expected = np.array(img.data, copy=True)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                expected[2 + i, 5 + j, k] = patch.data[i, j, k]
    assert np.array_equal(out.data, expected)


def test_apply_patch_leaves_input_untouched():
    img = Image(np.zeros((4, 4, 3)))
    before = np.array(img.data, copy=True)
    apply_patch(img, Patch(np.ones((2, 2, 3)), position=(1, 1)))
    assert np.array_equal(img.data, before)


def test_apply_patch_respects_shape_mask():
    img = Image(np.zeros((4, 4, 3)))
    mask = np.array([[True, False], [False, True]])
    patch = Patch(np.ones((2, 2, 3)), position=(0, 0), shape_mask=mask)
    out = apply_patch(img, patch)
    assert np.all(out.data[0, 0] == 1.0) and np.all(out.data[1, 1] == 1.0)
    assert np.all(out.data[0, 1] == 0.0) and np.all(out.data[1, 0] == 0.0)


def test_apply_patch_all_false_mask_is_identity():
    rng = np.random.default_rng(2)
    img = Image(rng.uniform(size=(5, 5, 3)))
    patch = Patch(rng.uniform(size=(3, 3, 3)), position=(1, 1),
                  shape_mask=np.zeros((3, 3), dtype=bool))
    assert np.array_equal(apply_patch(img, patch).data, img.data)


def test_apply_patch_bounds_errors_name_the_offending_coordinate():
    img = Image(np.zeros((8, 8, 3)))
    patch = np.ones((3, 3, 3))
    with pytest.raises(BoundsError, match="negative"):
        apply_patch(img, Patch(patch, position=(-1, 0)))
    with pytest.raises(BoundsError, match="bottom row 9"):
        apply_patch(img, Patch(patch, position=(6, 0)))
    with pytest.raises(BoundsError, match="right column 10"):
        apply_patch(img, Patch(patch, position=(0, 7)))


@given(seed=st.integers(0, 10**6))
def test_apply_patch_only_covered_pixels_change(seed):
    rng = np.random.default_rng(seed)
    h, w = int(rng.integers(2, 12)), int(rng.integers(2, 12))
    ph, pw = int(rng.integers(1, h + 1)), int(rng.integers(1, w + 1))
    r, c = int(rng.integers(0, h - ph + 1)), int(rng.integers(0, w - pw + 1))
    img = Image(rng.uniform(size=(h, w, 3)))
    patch = Patch(rng.uniform(size=(ph, pw, 3)), position=(r, c))
    out = apply_patch(img, patch)
    inside = np.zeros((h, w), dtype=bool)
    inside[r : r + ph, c : c + pw] = True
    assert np.array_equal(out.data[~inside], img.data[~inside])
    assert np.array_equal(out.data[r : r + ph, c : c + pw], patch.data)


@given(seed=st.integers(0, 10**6))
def test_apply_patch_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    img = Image(rng.uniform(size=(6, 6, 3)))
    patch = Patch(rng.uniform(size=(2, 3, 3)), position=(int(rng.integers(0, 5)),
                                                         int(rng.integers(0, 4))))
    once = apply_patch(img, patch)
    twice = apply_patch(once, patch)
    assert np.array_equal(once.data, twice.data)


# RNG streams


def test_same_stream_yields_identical_draws():
    a = derive_stream(7, (3, 1)).generator().uniform(size=64)
    b = derive_stream(7, (3, 1)).generator().uniform(size=64)
    assert np.array_equal(a, b)


def test_generator_restarts_the_sequence():
    stream = derive_stream(5)
    first = stream.generator().uniform(size=8)
    again = stream.generator().uniform(size=8)
    assert np.array_equal(first, again)


def test_sibling_streams_differ():
    a = derive_stream(7, (0,)).generator().uniform(size=64)
    b = derive_stream(7, (1,)).generator().uniform(size=64)
    assert not np.array_equal(a, b)


def test_child_extends_the_id_path():
    stream = derive_stream(9, (1,))
    assert stream.child(2, 3) == RngStream(9, (1, 2, 3))
    direct = derive_stream(9, (1, 2, 3)).generator().uniform(size=16)
    via_child = stream.child(2, 3).generator().uniform(size=16)
    assert np.array_equal(direct, via_child)


def test_thousand_stream_ids_give_distinct_prefixes():
    prefixes = set()
    for i in range(1000):
        raw = derive_stream(123, (i,)).generator().bytes(128)
        prefixes.add(raw)
    assert len(prefixes) == 1000


def test_stream_id_depth_matters():
    flat = derive_stream(4, (12,)).generator().uniform(size=16)
    nested = derive_stream(4, (1, 2)).generator().uniform(size=16)
    assert not np.array_equal(flat, nested)
