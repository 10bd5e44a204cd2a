"""Shared test helpers: a stub oracle HTTP server and independent reference
implementations (softmax, linear forward pass, exhaustive one-pixel search)
used as ground truth.  Nothing here imports the package's oracle math."""
import base64
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest


# ---------------------------------------------------------------------------
# Reference math (kept deliberately separate from the package implementation)


def ref_softmax(logits):
    m = max(logits)
    exps = [math.exp(v - m) for v in logits]
    total = sum(exps)
    return [e / total for e in exps]


def ref_linear_probs(weights, bias, flat_image):
    """Forward pass computed with plain Python loops."""
    scaled = [v / 255.0 for v in flat_image]
    logits = []
    for k in range(len(weights)):
        acc = bias[k]
        for j, x in enumerate(scaled):
            acc += weights[k][j] * x
        logits.append(acc)
    return ref_softmax(logits)


def brute_force_one_pixel(weights, bias, flat_image, num_values=256):
    """Exhaustively try every (position, value) overwrite on a 1-channel image.

    Returns (probs_block, positions, values) where probs_block[i] is the class
    distribution after overwrite i; vectorized numpy, but independent of the
    package: softmax and the forward pass are re-derived here.
    """
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    base = np.asarray(flat_image, dtype=np.float64)
    n = base.size
    positions = np.repeat(np.arange(n), num_values)
    values = np.tile(np.arange(num_values), n)
    batch = np.tile(base, (n * num_values, 1))
    batch[np.arange(n * num_values), positions] = values
    logits = (batch / 255.0) @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    exps = np.exp(logits)
    probs = exps / exps.sum(axis=1, keepdims=True)
    return probs, positions, values


def ref_linear_probs_np(weights, bias, batch):
    """Vectorized reference forward pass (still independent of the package)."""
    logits = (np.asarray(batch, np.float64) / 255.0) @ np.asarray(weights).T + np.asarray(bias)
    logits -= logits.max(axis=1, keepdims=True)
    exps = np.exp(logits)
    return exps / exps.sum(axis=1, keepdims=True)


class AttackCase:
    """One ground-truthed test case for the 8x8 grayscale linear bench."""

    def __init__(self, image_flat, true_class, target_class, optimum):
        self.image_flat = image_flat
        self.true_class = true_class
        self.target_class = target_class
        self.optimum = optimum  # exhaustive max of P(target) over one-pixel overwrites


def linear_attack_fixture(num_cases=30, fixture_seed=20, weight_scale=0.6):
    """An 8x8 grayscale linear-softmax bench with exhaustive ground truth.

    Every returned case is attackable: some single-pixel overwrite makes its
    target class the argmax.  The target is the strongest attackable class and
    ``optimum`` the exhaustive best P(target), both from the 64*256 = 16384
    overwrite enumeration done here with reference math.
    """
    num_classes, width, height = 10, 8, 8
    rng = np.random.default_rng(fixture_seed)
    weights = rng.normal(0, weight_scale, size=(num_classes, width * height))
    bias = rng.normal(0, 0.05, size=num_classes)
    cases = []
    candidate = 0
    while len(cases) < num_cases:
        if candidate >= 400:
            raise RuntimeError("fixture exhausted its candidate budget")
        flat = np.random.default_rng(1000 + candidate).integers(
            0, 256, width * height, dtype=np.uint8
        )
        candidate += 1
        clean = ref_linear_probs_np(weights, bias, flat[None, :])[0]
        true_class = int(clean.argmax())
        probs, _, _ = brute_force_one_pixel(weights, bias, flat)
        flips = probs.argmax(axis=1)
        best_target, best_optimum = None, -1.0
        for target in range(num_classes):
            if target == true_class or not (flips == target).any():
                continue
            optimum = float(probs[:, target].max())
            if optimum > best_optimum:
                best_target, best_optimum = target, optimum
        if best_target is not None:
            cases.append(AttackCase(flat, true_class, best_target, best_optimum))
    return weights, bias, cases


# ---------------------------------------------------------------------------
# Synthetic outcome fixtures (plain record builders; no package math involved)


def make_outcome(image_id, mode, success, original, target, probs, distortion=1.0):
    from pixelstorm.attack import AttackOutcome, PixelPerturbation

    probs = np.asarray(probs, dtype=np.float64)
    return AttackOutcome(
        id=image_id,
        mode=mode,
        success=success,
        original_class=original,
        target_class=target,
        predicted_class=int(np.argmax(probs)),
        perturbation=[PixelPerturbation(0, 0, (0,))],
        final_probs=probs,
        generations_run=1,
        evaluations_used=10,
        stopped_early=False,
        distortion=distortion,
    )


def synth_targeted_campaign(rng, num_images=None, num_classes=None, success_rate=0.4):
    """A random but internally consistent targeted campaign: K-1 outcomes per
    image, successes having the target class as strict argmax."""
    num_classes = num_classes or int(rng.integers(3, 11))
    num_images = num_images or int(rng.integers(1, 8))
    outcomes = []
    for i in range(num_images):
        true_class = int(rng.integers(0, num_classes))
        for target in range(num_classes):
            if target == true_class:
                continue
            success = bool(rng.random() < success_rate)
            probs = rng.random(num_classes) + 0.01
            if success:
                probs[target] = probs.max() + rng.random() + 0.05
            elif int(np.argmax(probs)) == target:
                probs[target], probs[true_class] = probs[true_class], probs[target] + 0.05
            probs /= probs.sum()
            outcomes.append(
                make_outcome(
                    f"img{i:03d}",
                    "targeted",
                    success,
                    true_class,
                    target,
                    probs,
                    distortion=float(rng.uniform(0, 200)),
                )
            )
    return outcomes, num_classes


# ---------------------------------------------------------------------------
# Stub oracle server


class StubOracleHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _send(self, status, body):
        payload = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_GET(self):
        state = self.server.state
        state["get_requests"] += 1
        if self.path != "/info":
            self._send(404, {"error": "not found"})
            return
        self._send(200, state["info"])

    def do_POST(self):
        state = self.server.state
        state["post_requests"] += 1
        if state["fail_first"] > 0:
            state["fail_first"] -= 1
            self._send(500, {"error": "transient"})
            return
        if self.path != "/predict":
            self._send(404, {"error": "not found"})
            return
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        if state["canned_response"] is not None:
            self._send(*state["canned_response"])
            return
        probs = []
        for encoded in body["images"]:
            raw = np.frombuffer(base64.b64decode(encoded), dtype=np.uint8)
            probs.append(state["predict"](raw))
        self._send(200, {"probs": probs})


class StubOracleServer:
    """Runs the stub on an ephemeral port; behaviour driven by ``state``."""

    def __init__(self, info, predict):
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), StubOracleHandler)
        self.httpd.state = {
            "info": info,
            "predict": predict,
            "get_requests": 0,
            "post_requests": 0,
            "fail_first": 0,
            "canned_response": None,
        }
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def state(self):
        return self.httpd.state

    @property
    def url(self):
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server():
    servers = []

    def start(info, predict):
        server = StubOracleServer(info, predict)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()
