"""Probability oracles: the black-box classifiers under attack.

An oracle maps raw uint8 images to class-probability vectors and exposes its
expected geometry via :class:`OracleInfo`.  The attack side only ever sees
probabilities — no gradients, no logits.  Built-in oracles normalize by 255
internally; callers always work in raw byte space.
"""
from __future__ import annotations

import base64
import dataclasses
import json
import struct
import threading
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import requests

from .errors import FormatError, ProtocolError, TransportError
from .imagery import ImageTensor

PROB_SUM_TOL = 1e-3

WEIGHTS_MAGIC = b"PXWT"
WEIGHTS_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclasses.dataclass(frozen=True)
class OracleInfo:
    width: int
    height: int
    channels: int
    num_classes: int
    labels: Optional[tuple] = None

    def __post_init__(self):
        if min(self.width, self.height, self.channels) < 1 or self.num_classes < 2:
            raise ValueError("degenerate oracle geometry")
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))
            if len(self.labels) != self.num_classes:
                raise ValueError("labels length does not match num_classes")

    @property
    def pixel_values(self):
        return self.width * self.height * self.channels


def softmax(logits):
    """Numerically safe softmax along the last axis (max subtraction)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def validate_probs(probs, num_classes):
    """Check a (n, K) block of probability vectors; raises ValueError."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] != num_classes:
        raise ValueError(f"expected (n, {num_classes}) probabilities, got {probs.shape}")
    if not np.isfinite(probs).all():
        raise ValueError("non-finite probability")
    if (probs < 0.0).any() or (probs > 1.0).any():
        raise ValueError("probability outside [0, 1]")
    sums = probs.sum(axis=1)
    off = np.abs(sums - 1.0)
    if (off > PROB_SUM_TOL).any():
        i = int(off.argmax())
        raise ValueError(f"probabilities sum to {sums[i]}, outside 1 +/- {PROB_SUM_TOL}")
    return probs


class Oracle:
    """Base class: concrete oracles implement :meth:`predict_raw`."""

    def __init__(self, info: OracleInfo):
        self.info = info

    def predict_raw(self, batch: np.ndarray) -> np.ndarray:
        """Map a (n, W*H*C) uint8 batch to a validated (n, K) probability block."""
        raise NotImplementedError

    def _check_raw(self, batch):
        batch = np.asarray(batch)
        if batch.ndim != 2 or batch.shape[1] != self.info.pixel_values:
            raise ValueError(
                f"batch shape {batch.shape} does not match oracle input "
                f"({self.info.width}x{self.info.height}x{self.info.channels})"
            )
        if batch.dtype != np.uint8:
            if not np.issubdtype(batch.dtype, np.integer):
                raise ValueError(f"raw batch must be integer-valued, got {batch.dtype}")
            if batch.min() < 0 or batch.max() > 255:
                raise ValueError("raw intensities outside [0, 255]")
            batch = batch.astype(np.uint8)
        return batch

    def _check_image(self, image: ImageTensor):
        if (image.width, image.height, image.channels) != (
            self.info.width,
            self.info.height,
            self.info.channels,
        ):
            raise ValueError(
                f"image {image.width}x{image.height}x{image.channels} does not match "
                f"oracle input {self.info.width}x{self.info.height}x{self.info.channels}"
            )

    def predict(self, image: ImageTensor) -> np.ndarray:
        self._check_image(image)
        return self.predict_raw(image.data[None, :])[0]

    def predict_batch(self, images: Sequence[ImageTensor]) -> list:
        if len(images) == 0:
            return []
        for img in images:
            self._check_image(img)
        batch = np.stack([img.data for img in images])
        probs = self.predict_raw(batch)
        return [probs[i] for i in range(len(images))]


class LinearSoftmaxOracle(Oracle):
    """softmax(W @ (flatten(x)/255) + b) — a deliberately simple test-bench model."""

    def __init__(self, info: OracleInfo, weights, bias=None):
        super().__init__(info)
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (info.num_classes, info.pixel_values):
            raise ValueError(
                f"weights shape {self.weights.shape} != "
                f"({info.num_classes}, {info.pixel_values})"
            )
        self.bias = (
            np.zeros(info.num_classes) if bias is None else np.asarray(bias, np.float64)
        )
        if self.bias.shape != (info.num_classes,):
            raise ValueError(f"bias shape {self.bias.shape} != ({info.num_classes},)")

    def predict_raw(self, batch):
        batch = self._check_raw(batch)
        logits = (batch.astype(np.float64) / 255.0) @ self.weights.T + self.bias
        return validate_probs(softmax(logits), self.info.num_classes)


class PocketCnnOracle(Oracle):
    """A fixed-weight two-layer CNN: 3x3 valid conv, relu, global average pool,
    linear head, softmax.  Small but genuinely non-linear in pixel space."""

    def __init__(self, info: OracleInfo, filters, dense, bias=None):
        super().__init__(info)
        if min(info.width, info.height) < 3:
            raise ValueError("pocket CNN needs at least a 3x3 input")
        self.filters = np.asarray(filters, dtype=np.float64)
        if (
            self.filters.ndim != 4
            or self.filters.shape[1:3] != (3, 3)
            or self.filters.shape[3] != info.channels
        ):
            raise ValueError(
                f"filters shape {self.filters.shape} != (F, 3, 3, {info.channels})"
            )
        n_filters = self.filters.shape[0]
        self.dense = np.asarray(dense, dtype=np.float64)
        if self.dense.shape != (info.num_classes, n_filters):
            raise ValueError(
                f"dense shape {self.dense.shape} != ({info.num_classes}, {n_filters})"
            )
        self.bias = (
            np.zeros(info.num_classes) if bias is None else np.asarray(bias, np.float64)
        )

    def predict_raw(self, batch):
        batch = self._check_raw(batch)
        info = self.info
        x = batch.astype(np.float64).reshape(-1, info.height, info.width, info.channels)
        x /= 255.0
        windows = np.lib.stride_tricks.sliding_window_view(x, (3, 3), axis=(1, 2))
        # windows: (n, H-2, W-2, C, 3, 3); filters: (F, 3, 3, C)
        acts = np.einsum("nhwcij,fijc->nhwf", windows, self.filters, optimize=True)
        np.maximum(acts, 0.0, out=acts)
        pooled = acts.mean(axis=(1, 2))
        logits = pooled @ self.dense.T + self.bias
        return validate_probs(softmax(logits), info.num_classes)


class ConstantOracle(Oracle):
    """Always answers the same probability vector (test bench)."""

    def __init__(self, info: OracleInfo, probs):
        super().__init__(info)
        self.probs = validate_probs(np.asarray(probs, np.float64)[None, :], info.num_classes)[0]

    def predict_raw(self, batch):
        batch = self._check_raw(batch)
        return np.tile(self.probs, (len(batch), 1))


class CallableOracle(Oracle):
    """Wraps a plain function ``(n, W*H*C) uint8 -> (n, K)`` as an oracle."""

    def __init__(self, info: OracleInfo, fn):
        super().__init__(info)
        self._fn = fn

    def predict_raw(self, batch):
        batch = self._check_raw(batch)
        return validate_probs(self._fn(batch), self.info.num_classes)


class EvalCounter:
    """Thread-safe count of oracle invocations (one per image, not per batch)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    @property
    def count(self):
        with self._lock:
            return self._count

    def add(self, n):
        with self._lock:
            self._count += n

    def reset(self):
        with self._lock:
            self._count = 0


class CountingOracle(Oracle):
    def __init__(self, inner: Oracle, counter: EvalCounter):
        super().__init__(inner.info)
        self.inner = inner
        self.counter = counter

    def predict_raw(self, batch):
        probs = self.inner.predict_raw(batch)
        self.counter.add(len(probs))
        return probs


def counting_wrapper(oracle: Oracle):
    """Wrap an oracle so every predicted image bumps a shared counter."""
    counter = EvalCounter()
    return CountingOracle(oracle, counter), counter


class RemoteOracle(Oracle):
    """Client for the HTTP oracle protocol (GET /info, POST /predict).

    Requests are serialized internally, retried idempotently on transport
    failures, and responses are validated against /info before use.
    """

    def __init__(self, endpoint, retries=3, timeout=60.0, session=None):
        self.endpoint = endpoint.rstrip("/")
        self.retries = retries
        self.timeout = timeout
        self._session = session if session is not None else requests.Session()
        self._lock = threading.Lock()
        super().__init__(self._fetch_info())

    def _request(self, method, path, payload=None):
        last_error = None
        for _ in range(self.retries + 1):
            try:
                with self._lock:
                    resp = self._session.request(
                        method,
                        self.endpoint + path,
                        json=payload,
                        timeout=self.timeout,
                    )
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code >= 500:
                last_error = ProtocolError(f"{path}: server error {resp.status_code}")
                continue
            return resp
        raise TransportError(
            f"oracle at {self.endpoint} unreachable after {self.retries + 1} attempts: {last_error}"
        )

    def _fetch_info(self) -> OracleInfo:
        resp = self._request("GET", "/info")
        body = self._json(resp, "/info")
        try:
            return OracleInfo(
                width=int(body["width"]),
                height=int(body["height"]),
                channels=int(body["channels"]),
                num_classes=int(body["num_classes"]),
                labels=tuple(body["labels"]) if body.get("labels") else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"/info payload invalid: {exc}") from exc

    @staticmethod
    def _json(resp, path):
        try:
            body = resp.json()
        except ValueError as exc:
            raise ProtocolError(f"{path}: response is not JSON") from exc
        if resp.status_code != 200:
            message = body.get("error") if isinstance(body, dict) else None
            raise ProtocolError(f"{path}: HTTP {resp.status_code}: {message or body}")
        if not isinstance(body, dict):
            raise ProtocolError(f"{path}: expected a JSON object")
        return body

    def predict_raw(self, batch):
        batch = self._check_raw(batch)
        images = [base64.b64encode(row.tobytes()).decode("ascii") for row in batch]
        resp = self._request("POST", "/predict", payload={"images": images})
        body = self._json(resp, "/predict")
        probs = body.get("probs")
        if not isinstance(probs, list) or len(probs) != len(batch):
            raise ProtocolError(
                f"/predict: expected {len(batch)} probability vectors, got "
                f"{len(probs) if isinstance(probs, list) else type(probs).__name__}"
            )
        try:
            block = np.asarray(probs, dtype=np.float64)
            return validate_probs(block, self.info.num_classes)
        except ValueError as exc:
            raise ProtocolError(f"/predict: {exc}") from exc


# ---------------------------------------------------------------------------
# Weight files and builtin-oracle bundles


def save_weights(path, matrix):
    """Write a 2-D float32 matrix: 16-byte header (magic, version, rows, cols)
    followed by row-major little-endian float32 payload."""
    matrix = np.asarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise ValueError("weight matrices are 2-D")
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, rows, cols))
        fh.write(np.ascontiguousarray(matrix).tobytes())


def load_weights(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols = _HEADER.unpack_from(raw)
    if magic != WEIGHTS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + rows * cols * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw)} bytes, expected {expected}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return flat.reshape(rows, cols).astype(np.float64)


def _info_to_dict(info: OracleInfo):
    return {
        "width": info.width,
        "height": info.height,
        "channels": info.channels,
        "num_classes": info.num_classes,
        "labels": list(info.labels) if info.labels else None,
    }


def _info_from_dict(body) -> OracleInfo:
    return OracleInfo(
        width=body["width"],
        height=body["height"],
        channels=body["channels"],
        num_classes=body["num_classes"],
        labels=tuple(body["labels"]) if body.get("labels") else None,
    )


def save_linear_oracle(bundle_dir, info: OracleInfo, weights, bias=None):
    """Persist a linear-softmax oracle as a bundle directory.

    ``linear.bin`` holds (K, n) weights, or (K, n+1) with the bias as the last
    column when a bias is given.
    """
    bundle = Path(bundle_dir)
    bundle.mkdir(parents=True, exist_ok=True)
    (bundle / "info.json").write_text(json.dumps(_info_to_dict(info), indent=2))
    matrix = np.asarray(weights, dtype=np.float64)
    if bias is not None:
        matrix = np.hstack([matrix, np.asarray(bias, np.float64)[:, None]])
    save_weights(bundle / "linear.bin", matrix)


def save_pocket_cnn_oracle(bundle_dir, info: OracleInfo, filters, dense, bias=None):
    """Persist a pocket-CNN oracle bundle: ``conv.bin`` is (F, 9*C) flattened
    3x3 filters, ``dense.bin`` is (K, F) or (K, F+1) with a bias column."""
    bundle = Path(bundle_dir)
    bundle.mkdir(parents=True, exist_ok=True)
    (bundle / "info.json").write_text(json.dumps(_info_to_dict(info), indent=2))
    filters = np.asarray(filters, dtype=np.float64)
    save_weights(bundle / "conv.bin", filters.reshape(filters.shape[0], -1))
    matrix = np.asarray(dense, dtype=np.float64)
    if bias is not None:
        matrix = np.hstack([matrix, np.asarray(bias, np.float64)[:, None]])
    save_weights(bundle / "dense.bin", matrix)


def load_builtin_oracle(bundle_dir) -> Oracle:
    """Load a builtin oracle bundle written by one of the save functions."""
    bundle = Path(bundle_dir)
    info_path = bundle / "info.json"
    if not info_path.is_file():
        raise FormatError(f"{bundle}: missing info.json")
    try:
        info = _info_from_dict(json.loads(info_path.read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{info_path}: {exc}") from exc

    if (bundle / "linear.bin").is_file():
        matrix = load_weights(bundle / "linear.bin")
        n = info.pixel_values
        if matrix.shape[1] == n + 1:
            return LinearSoftmaxOracle(info, matrix[:, :n], matrix[:, n])
        return LinearSoftmaxOracle(info, matrix)

    if (bundle / "conv.bin").is_file() and (bundle / "dense.bin").is_file():
        conv = load_weights(bundle / "conv.bin")
        filters = conv.reshape(conv.shape[0], 3, 3, info.channels)
        dense = load_weights(bundle / "dense.bin")
        n_filters = conv.shape[0]
        if dense.shape[1] == n_filters + 1:
            return PocketCnnOracle(info, filters, dense[:, :n_filters], dense[:, n_filters])
        return PocketCnnOracle(info, filters, dense)

    raise FormatError(f"{bundle}: no recognized weight files (linear.bin or conv.bin+dense.bin)")
