"""Toy detector: forward oracle, gradients, training, and the shapes corpus."""

import numpy as np
import pytest
from _support import central_difference, conv2d_oracle, fixture_set, rel_err

from patchbench.core import Image, derive_stream
from patchbench.detector.base import LayerLookupError
from patchbench.detector.shapes import CLASS_NAMES, generate_image, make_dataset
from patchbench.detector.toy import (
    ToyDetector,
    ToyDetectorParams,
    train_toy_detector,
)


def _zeroed_detector() -> ToyDetector:
    params = ToyDetectorParams.initialize(derive_stream(50))
    for key in params.weights:
        params.weights[key] = np.zeros_like(params.weights[key])
    return ToyDetector(params)


# shapes corpus


def test_generate_image_is_deterministic_and_in_range():
    img_a, bbox_a = generate_image(derive_stream(40).generator(), 2)
    img_b, bbox_b = generate_image(derive_stream(40).generator(), 2)
    assert np.array_equal(img_a.data, img_b.data)
    assert bbox_a == bbox_b
    x, y, w, h = bbox_a
    assert 0 <= x and 0 <= y and x + w <= 64 and y + h <= 64 and w > 0 and h > 0


def test_make_dataset_shapes_and_labels():
    images, labels, bboxes = make_dataset(derive_stream(41), per_class=3)
    assert images.shape == (12, 64, 64, 3)
    assert labels.shape == (12,)
    assert sorted(labels.tolist()) == sorted([0, 1, 2, 3] * 3)
    assert len(bboxes) == 12
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_make_dataset_images_independent_of_count():
    # Per-example child streams: the first images match across corpus sizes.
    small, _, _ = make_dataset(derive_stream(42), per_class=2)
    large, _, _ = make_dataset(derive_stream(42), per_class=5)
    assert np.array_equal(small[0], large[0])
    assert np.array_equal(small[1], large[1])


# detector forward


def test_detect_emits_exactly_one_valid_detection(toy_detector):
    image, _ = fixture_set(101, count=1)[0]
    detections = toy_detector.detect(image)
    assert len(detections) == 1
    det = detections[0]
    assert 0 <= det.class_id < len(CLASS_NAMES)
    assert 0.0 <= det.confidence <= 1.0
    x, y, w, h = det.bbox
    assert x >= 0 and y >= 0 and x + w <= 64 and y + h <= 64


def test_class_probabilities_sum_to_one_on_100_images(toy_detector):
    for image, _ in fixture_set(101, count=100):
        probs = toy_detector.class_probabilities(image)
        assert probs.shape == (4,)
        assert np.all(probs >= 0.0)
        assert abs(float(probs.sum()) - 1.0) < 1e-9


def test_trained_detector_is_confident_on_a_clean_disk(toy_detector):
    image, _ = generate_image(derive_stream(43).child(0).generator(), 0)
    det = toy_detector.detect(image)[0]
    assert det.class_id == 0
    assert det.confidence >= 0.9


def test_held_out_accuracy_at_least_090(toy_detector, eval_set):
    hits = sum(
        toy_detector.detect(image)[0].class_id == label for image, label in eval_set
    )
    assert hits / len(eval_set) >= 0.9


def test_forward_matches_straight_line_oracle(toy_detector):
    image, _ = fixture_set(202, count=1)[0]
    w = toy_detector.params.weights

    x = image.data[None] - 0.5
    a1 = np.maximum(conv2d_oracle(x, w["conv1_w"], w["conv1_b"]), 0.0)
    p1 = a1.reshape(1, 32, 2, 32, 2, 8).mean(axis=(2, 4))
    a2 = np.maximum(conv2d_oracle(p1, w["conv2_w"], w["conv2_b"]), 0.0)
    p2 = a2.reshape(1, 16, 2, 16, 2, 16).mean(axis=(2, 4))
    h = np.maximum(p2.reshape(1, -1) @ w["fc1_w"] + w["fc1_b"], 0.0)
    logits = (h @ w["fc2_w"] + w["fc2_b"])[0]
    e = np.exp(logits - logits.max())
    expected = e / e.sum()

    probs = toy_detector.class_probabilities(image)
    assert np.max(np.abs(probs - expected)) < 1e-6

    feats = toy_detector.feature_maps(image, "conv2")
    assert np.max(np.abs(feats.data - a2[0])) < 1e-6


def test_rejects_wrong_image_size(toy_detector):
    with pytest.raises(ValueError, match="64x64"):
        toy_detector.detect(Image(np.zeros((32, 32, 3))))


# feature maps


def test_feature_map_shapes_and_default_layer(toy_detector):
    image, _ = fixture_set(101, count=1)[0]
    f1 = toy_detector.feature_maps(image, "conv1")
    f2 = toy_detector.feature_maps(image, "conv2")
    assert f1.data.shape == (64, 64, 8)
    assert f2.data.shape == (32, 32, 16)
    assert toy_detector.default_feature_layer == "conv2"
    default = toy_detector.feature_maps(image)
    assert default.layer_id == "conv2"
    assert np.array_equal(default.data, f2.data)


def test_unknown_layer_raises_lookup_error(toy_detector):
    image, _ = fixture_set(101, count=1)[0]
    with pytest.raises(LayerLookupError, match="conv9"):
        toy_detector.feature_maps(image, "conv9")


def test_zero_weights_give_zero_feature_maps_and_full_frame_box():
    detector = _zeroed_detector()
    image, _ = fixture_set(101, count=1)[0]
    assert np.all(detector.feature_maps(image, "conv1").data == 0.0)
    assert np.all(detector.feature_maps(image, "conv2").data == 0.0)
    det = detector.detect(image)[0]
    assert det.bbox == (0, 0, 64, 64)
    assert det.confidence == pytest.approx(0.25)


# gradients


def test_constant_detector_has_zero_input_gradient():
    detector = _zeroed_detector()
    image, _ = fixture_set(101, count=1)[0]
    grad = detector.input_gradient(image, label=1)
    assert grad.shape == (64, 64, 3)
    assert np.all(grad == 0.0)


def test_input_gradient_matches_finite_differences(toy_detector):
    image, label = fixture_set(505, count=1)[0]
    grad = toy_detector.input_gradient(image, label)

    def f(x):
        return toy_detector.cross_entropy(Image(x), label)

    step = 1e-4
    flat_img = image.data.reshape(-1)
    flat_grad = grad.reshape(-1)
    rng = np.random.default_rng(812)
    # Interior pixels only, so +-step stays inside the valid range.
    interior = np.flatnonzero((flat_img > step) & (flat_img < 1.0 - step))
    for idx in rng.choice(interior, size=10, replace=False):
        where = np.unravel_index(int(idx), image.data.shape)
        numeric = central_difference(f, image.data, where, step)
        assert rel_err(flat_grad[int(idx)], numeric, floor=1e-8) < 1e-4


def test_gradient_ascent_raises_cross_entropy_in_most_trials(toy_detector):
    eta = 1e-3
    wins = 0
    for image, label in fixture_set(303, count=50):
        grad = toy_detector.input_gradient(image, label)
        moved = Image(np.clip(image.data + eta * grad, 0.0, 1.0))
        if toy_detector.cross_entropy(moved, label) > toy_detector.cross_entropy(image, label):
            wins += 1
    assert wins >= 45


def test_input_gradient_validates_mode_and_label(toy_detector):
    image, _ = fixture_set(101, count=1)[0]
    with pytest.raises(ValueError, match="mode"):
        toy_detector.input_gradient(image, 0, mode="sideways")
    with pytest.raises(ValueError, match="label"):
        toy_detector.input_gradient(image, 7)


# training and persistence


def test_training_is_deterministic():
    a = train_toy_detector(derive_stream(900), per_class=4, epochs=1)
    b = train_toy_detector(derive_stream(900), per_class=4, epochs=1)
    for key in a.params.weights:
        assert np.array_equal(a.params.weights[key], b.params.weights[key])


def test_training_seed_changes_weights():
    a = train_toy_detector(derive_stream(900), per_class=4, epochs=1)
    b = train_toy_detector(derive_stream(901), per_class=4, epochs=1)
    assert any(
        not np.array_equal(a.params.weights[k], b.params.weights[k])
        for k in a.params.weights
    )


def test_params_round_trip_through_npz(tmp_path, toy_detector):
    path = tmp_path / "det.npz"
    toy_detector.params.save(path)
    loaded = ToyDetectorParams.load(path)
    assert loaded.seed == toy_detector.params.seed
    assert loaded.class_names == toy_detector.params.class_names
    assert loaded.image_size == toy_detector.params.image_size
    assert set(loaded.weights) == set(toy_detector.params.weights)
    for key, value in toy_detector.params.weights.items():
        assert np.array_equal(loaded.weights[key], value)


def test_capability_flags(toy_detector):
    assert toy_detector.has_gradients and toy_detector.has_features
    assert toy_detector.kind == "toy"
    assert toy_detector.class_count == 4
