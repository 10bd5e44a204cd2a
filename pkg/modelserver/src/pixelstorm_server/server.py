"""HTTP serving of a :class:`ServedModel` over the probability-oracle protocol.

``GET /info`` reports input dimensions and labels; ``POST /predict`` takes
``{"images": [<base64 raw bytes>, ...]}`` and answers ``{"probs": [[...]]}``.
Malformed requests get a 400 with ``{"error": <message>}``.  Each predict
request is answered from one forward pass over the whole batch, serialized
by a lock so concurrent clients see a single-worker server.
"""

import base64
import binascii
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from .modelfile import ServedModel, load_model


class _RequestError(Exception):
    """Maps to an HTTP 400 with the message in the error payload."""


class _Handler(BaseHTTPRequestHandler):
    server_version = "pixelstorm-server/0.1"
    protocol_version = "HTTP/1.1"

    def _send_json(self, status, payload):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/info":
            self._send_json(200, self.server.model.info_dict())
        else:
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})

    def do_POST(self):
        if self.path != "/predict":
            self._send_json(404, {"error": f"no such endpoint: {self.path}"})
            return
        try:
            probs = self._predict(self._read_batch())
        except _RequestError as exc:
            self._send_json(400, {"error": str(exc)})
            return
        self._send_json(200, {"probs": probs})

    def _read_batch(self):
        try:
            length = int(self.headers.get("Content-Length", 0))
        except ValueError:
            raise _RequestError("invalid Content-Length header") from None
        try:
            body = json.loads(self.rfile.read(length))
        except (ValueError, UnicodeDecodeError):
            raise _RequestError("request body is not valid JSON") from None
        if not isinstance(body, dict) or "images" not in body:
            raise _RequestError('request body must be {"images": [...]}')
        images = body["images"]
        if not isinstance(images, list):
            raise _RequestError('"images" must be a list of base64 strings')
        expected = self.server.model.pixel_values
        rows = []
        for i, entry in enumerate(images):
            if not isinstance(entry, str):
                raise _RequestError(f"images[{i}]: expected a base64 string")
            try:
                raw = base64.b64decode(entry, validate=True)
            except (binascii.Error, ValueError):
                raise _RequestError(f"images[{i}]: invalid base64") from None
            if len(raw) != expected:
                raise _RequestError(
                    f"images[{i}]: expected {expected} bytes, got {len(raw)}"
                )
            rows.append(np.frombuffer(raw, dtype=np.uint8))
        return rows

    def _predict(self, rows):
        if not rows:
            return []
        batch = np.stack(rows)
        with self.server.forward_lock:
            probs = self.server.model.predict(batch)
        return probs.tolist()

    def log_message(self, fmt, *args):
        if self.server.verbose:
            super().log_message(fmt, *args)


class _HttpServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, model, verbose):
        super().__init__(address, _Handler)
        self.model = model
        self.verbose = verbose
        self.forward_lock = threading.Lock()


class OracleServer:
    """Serve a model in-process; use as a context manager in tests."""

    def __init__(self, model: ServedModel, host="127.0.0.1", port=0, verbose=False):
        self._httpd = _HttpServer((host, port), model, verbose)
        self._thread = None

    @property
    def url(self):
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._thread.start()
        return self

    def serve_forever(self):
        self._httpd.serve_forever()

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


def serve(model_path, port, host="127.0.0.1", verbose=True):
    """Load a model file and serve it until interrupted (CLI entry point)."""
    model = load_model(model_path)
    server = OracleServer(model, host=host, port=port, verbose=verbose)
    print(
        f"serving {model.architecture} "
        f"({model.width}x{model.height}x{model.channels}, "
        f"{model.num_classes} classes) on {server.url}"
    )
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
