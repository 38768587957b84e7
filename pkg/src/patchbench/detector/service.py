"""Minimal HTTP sidecar exposing any detector handle over the wire protocol.

Intended for tests and for serving the toy detector to out-of-process
clients; a production detector would implement the same three routes.
"""

from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .base import CapabilityError, DetectorHandle, LayerLookupError, ProtocolError
from . import wire


class DetectorService:
    """A running HTTP server bound to one detector handle."""

    def __init__(self, handle: DetectorHandle, host: str = "127.0.0.1", port: int = 0):
        service = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, fmt, *args):
                pass

            def _send(self, status: int, body: bytes) -> None:
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/v1/capabilities":
                    body = wire.encode_capabilities(
                        service.handle.has_features, service.handle.class_count
                    )
                    self._send(200, body)
                else:
                    self._send(404, wire.encode_error("bad_request", f"no route {self.path}"))

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                payload = self.rfile.read(length)
                try:
                    if self.path == "/v1/detect":
                        image = wire.decode_detect_request(payload)
                        body = wire.encode_detect_response(service.handle.detect(image))
                    elif self.path == "/v1/features":
                        image, layer_id = wire.decode_features_request(payload)
                        features = service.handle.feature_maps(image, layer_id)
                        body = wire.encode_features_response(features)
                    else:
                        self._send(404, wire.encode_error("bad_request", f"no route {self.path}"))
                        return
                except ProtocolError as exc:
                    self._send(400, wire.encode_error("bad_request", str(exc)))
                    return
                except LayerLookupError as exc:
                    self._send(400, wire.encode_error("layer_lookup", str(exc)))
                    return
                except CapabilityError as exc:
                    self._send(400, wire.encode_error("capability", str(exc)))
                    return
                except Exception as exc:
                    self._send(500, wire.encode_error("internal", str(exc)))
                    return
                self._send(200, body)

        self.handle = handle
        self._server = ThreadingHTTPServer((host, port), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def close(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5.0)

    def __enter__(self) -> "DetectorService":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_detector(handle: DetectorHandle, host: str = "127.0.0.1", port: int = 0) -> DetectorService:
    """Start a sidecar service for the handle; caller closes it when done."""
    return DetectorService(handle, host=host, port=port)
