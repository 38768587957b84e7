"""HTTP client for a remote detector service.

The client speaks the JSON wire protocol and advertises the capabilities
reported by the service. Input gradients are never available remotely:
shipping pixel gradients over a wire is impractical, so the attack path
requires a gradient-capable in-process handle.
"""

from __future__ import annotations

import requests

from ..core import Detection, Image
from .base import (
    CapabilityError,
    DetectorHandle,
    FeatureMaps,
    LayerLookupError,
    ProtocolError,
    TransportError,
)
from . import wire

_ERROR_KINDS = {
    "layer_lookup": LayerLookupError,
    "capability": CapabilityError,
    "bad_request": ProtocolError,
}


class RemoteDetector(DetectorHandle):
    """Detector handle backed by an HTTP service.

    ``feature_layer`` names the layer used when feature_maps is called
    without an explicit layer_id; the protocol has no layer discovery, so
    the choice is configuration.
    """

    kind = "remote"
    has_gradients = False

    def __init__(self, base_url: str, feature_layer: str | None = None,
                 timeout: float = 30.0, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()
        caps = wire.decode_capabilities(self._get("/v1/capabilities"))
        self.has_features = caps["has_features"]
        self.class_count = caps["class_count"]
        self.default_feature_layer = feature_layer or ""

    def _get(self, path: str) -> bytes:
        try:
            resp = self._session.get(self.base_url + path, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"GET {path} failed: {exc}") from exc
        return self._check(resp, path)

    def _post(self, path: str, body: bytes) -> bytes:
        try:
            resp = self._session.post(
                self.base_url + path, data=body,
                headers={"Content-Type": "application/json"}, timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"POST {path} failed: {exc}") from exc
        return self._check(resp, path)

    def _check(self, resp: requests.Response, path: str) -> bytes:
        if resp.status_code >= 500:
            raise TransportError(f"{path} returned status {resp.status_code}")
        if resp.status_code >= 400:
            kind, message = wire.decode_error(resp.content)
            exc_type = _ERROR_KINDS.get(kind, ProtocolError)
            raise exc_type(f"{path}: {message}")
        return resp.content

    def detect(self, image: Image) -> list[Detection]:
        body = wire.encode_detect_request(image)
        return wire.decode_detect_response(self._post("/v1/detect", body))

    def feature_maps(self, image: Image, layer_id: str | None = None) -> FeatureMaps:
        if not self.has_features:
            raise CapabilityError("remote detector does not expose feature maps")
        layer = layer_id or self.default_feature_layer
        if not layer:
            raise LayerLookupError(
                "no feature layer configured; pass layer_id or set feature_layer"
            )
        body = wire.encode_features_request(image, layer)
        return wire.decode_features_response(self._post("/v1/features", body))
