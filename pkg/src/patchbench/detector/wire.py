"""Wire codecs for the remote detector protocol.

Images travel as base64 of row-major little-endian 32-bit floats; raw
float transport keeps round trips bit-exact where PNG would quantize.
JSON is emitted canonically (sorted keys, compact separators), so any
given message has exactly one byte encoding. Decoders validate every
field and raise ProtocolError naming the offending field.
"""

from __future__ import annotations

import base64
import binascii
import json

import numpy as np

from ..core import Detection, Image
from .base import FeatureMaps, ProtocolError


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("ascii")


def _parse(data: bytes, where: str) -> dict:
    try:
        obj = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"{where}: body is not valid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ProtocolError(f"{where}: body must be a JSON object")
    return obj


def _field(obj: dict, name: str, kind, where: str):
    if name not in obj:
        raise ProtocolError(f"{where}: missing field {name!r}")
    value = obj[name]
    # bool is an int subclass; an int field must not accept true/false.
    if kind is int and isinstance(value, bool):
        raise ProtocolError(f"{where}: field {name!r} must be an integer, got a boolean")
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if not isinstance(value, kind):
        raise ProtocolError(
            f"{where}: field {name!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _decode_floats(b64: str, count: int, name: str, where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ProtocolError(f"{where}: field {name!r} is not valid base64") from exc
    if len(raw) != count * 4:
        raise ProtocolError(
            f"{where}: field {name!r} holds {len(raw)} bytes, expected {count * 4}"
        )
    values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    if not np.isfinite(values).all():
        raise ProtocolError(f"{where}: field {name!r} contains non-finite values")
    return values


def _encode_floats(arr: np.ndarray) -> str:
    packed = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return base64.b64encode(packed).decode("ascii")


def encode_image_payload(image: Image) -> dict:
    return {
        "h": image.height,
        "w": image.width,
        "c": 3,
        "data_b64": _encode_floats(image.data),
    }


def decode_image_payload(obj, where: str) -> Image:
    if not isinstance(obj, dict):
        raise ProtocolError(f"{where}: field 'image' must be an object")
    h = _field(obj, "h", int, where)
    w = _field(obj, "w", int, where)
    c = _field(obj, "c", int, where)
    if h < 1 or w < 1:
        raise ProtocolError(f"{where}: image size {h}x{w} is not positive")
    if c != 3:
        raise ProtocolError(f"{where}: field 'c' must be 3, got {c}")
    b64 = _field(obj, "data_b64", str, where)
    values = _decode_floats(b64, h * w * c, "data_b64", where)
    data = np.clip(values.reshape(h, w, c), 0.0, 1.0)
    return Image(data)


def encode_detect_request(image: Image) -> bytes:
    return _canonical({"image": encode_image_payload(image)})


def decode_detect_request(data: bytes) -> Image:
    where = "detect request"
    obj = _parse(data, where)
    if "image" not in obj:
        raise ProtocolError(f"{where}: missing field 'image'")
    return decode_image_payload(obj["image"], where)


def encode_detect_response(detections) -> bytes:
    return _canonical({
        "detections": [
            {
                "class_id": d.class_id,
                "confidence": d.confidence,
                "bbox": list(d.bbox),
            }
            for d in detections
        ]
    })


def decode_detect_response(data: bytes) -> list[Detection]:
    where = "detect response"
    obj = _parse(data, where)
    rows = _field(obj, "detections", list, where)
    out = []
    for i, row in enumerate(rows):
        spot = f"{where}: detections[{i}]"
        if not isinstance(row, dict):
            raise ProtocolError(f"{spot} must be an object")
        class_id = _field(row, "class_id", int, spot)
        confidence = _field(row, "confidence", float, spot)
        bbox = _field(row, "bbox", list, spot)
        if len(bbox) != 4 or not all(
            isinstance(v, int) and not isinstance(v, bool) for v in bbox
        ):
            raise ProtocolError(f"{spot}: field 'bbox' must be four integers")
        try:
            out.append(Detection(class_id=class_id, confidence=confidence, bbox=tuple(bbox)))
        except ValueError as exc:
            raise ProtocolError(f"{spot}: {exc}") from exc
    return out


def encode_features_request(image: Image, layer_id: str) -> bytes:
    return _canonical({"image": encode_image_payload(image), "layer_id": layer_id})


def decode_features_request(data: bytes) -> tuple[Image, str]:
    where = "features request"
    obj = _parse(data, where)
    if "image" not in obj:
        raise ProtocolError(f"{where}: missing field 'image'")
    layer_id = _field(obj, "layer_id", str, where)
    return decode_image_payload(obj["image"], where), layer_id


def encode_features_response(features: FeatureMaps) -> bytes:
    return _canonical({
        "layer_id": features.layer_id,
        "shape": list(features.data.shape),
        "data_b64": _encode_floats(features.data),
    })


def decode_features_response(data: bytes) -> FeatureMaps:
    where = "features response"
    obj = _parse(data, where)
    layer_id = _field(obj, "layer_id", str, where)
    shape = _field(obj, "shape", list, where)
    if len(shape) != 3 or not all(
        isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in shape
    ):
        raise ProtocolError(f"{where}: field 'shape' must be three positive integers")
    b64 = _field(obj, "data_b64", str, where)
    hf, wf, cf = shape
    values = _decode_floats(b64, hf * wf * cf, "data_b64", where)
    return FeatureMaps(layer_id=layer_id, data=values.reshape(hf, wf, cf))


def encode_capabilities(has_features: bool, class_count: int) -> bytes:
    return _canonical({"has_features": bool(has_features), "class_count": int(class_count)})


def decode_capabilities(data: bytes) -> dict:
    where = "capabilities response"
    obj = _parse(data, where)
    has_features = _field(obj, "has_features", bool, where)
    class_count = _field(obj, "class_count", int, where)
    if class_count < 1:
        raise ProtocolError(f"{where}: field 'class_count' must be >= 1, got {class_count}")
    return {"has_features": has_features, "class_count": class_count}


def encode_error(kind: str, message: str) -> bytes:
    return _canonical({"error": {"kind": kind, "message": message}})


def decode_error(data: bytes) -> tuple[str, str]:
    """Best-effort parse of an error body; falls back to a generic kind."""
    try:
        obj = json.loads(data)
        err = obj["error"]
        return str(err["kind"]), str(err["message"])
    except Exception:
        return "bad_request", data.decode("utf-8", errors="replace")[:200]
