import base64
import signal
import socket
import subprocess
import sys
import time

import numpy as np
import pytest
import requests
import torch
from torch import nn

from conftest import brightness_dataset, write_batch
from pixelstorm_server import OracleServer, load_model
from pixelstorm_server.cli import main
from pixelstorm_server.data import CIFAR10_LABELS
from pixelstorm_server.train import evaluate_accuracy, train_model


class _FixedLogits:
    """Pretend classifier: every image gets the same logit vector."""

    def __init__(self, logits):
        self.logits = torch.as_tensor(logits, dtype=torch.float32)

    def eval(self):
        return self

    def __call__(self, batch):
        return self.logits.expand(batch.shape[0], -1)


class TestEvaluateAccuracy:
    def test_constant_classifier_scores_label_frequency(self):
        module = _FixedLogits([0.0, 0.0, 5.0, 0.0])
        images = np.zeros((8, 3, 32, 32), dtype=np.uint8)
        labels = [2, 2, 1, 0, 2, 3, 2, 1]
        assert evaluate_accuracy(module, images, labels) == pytest.approx(4 / 8)

    def test_batched_evaluation_covers_every_image(self):
        module = _FixedLogits([1.0, 0.0])
        images = np.zeros((7, 3, 32, 32), dtype=np.uint8)
        labels = [0] * 7
        assert evaluate_accuracy(module, images, labels, batch_size=3) == 1.0


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    """One real training run shared across tests: brightness rule, 6 epochs."""
    root = tmp_path_factory.mktemp("smoke")
    (train_images, train_labels), (test_images, test_labels) = brightness_dataset()
    data_dir = root / "data"
    data_dir.mkdir()
    half = len(train_labels) // 2
    write_batch(data_dir / "data_batch_1.bin", train_images[:half], train_labels[:half])
    write_batch(data_dir / "data_batch_2.bin", train_images[half:], train_labels[half:])
    write_batch(data_dir / "test_batch.bin", test_images, test_labels)
    model_path = root / "allconv.pt"
    log_lines = []
    model = train_model(
        "allconv",
        data_dir,
        model_path,
        epochs=6,
        batch_size=16,
        lr=0.02,
        seed=1,
        log=log_lines.append,
    )
    return {
        "model": model,
        "path": model_path,
        "data_dir": data_dir,
        "test_images": test_images,
        "test_labels": test_labels,
        "log": log_lines,
    }


class TestTrainModel:
    def test_learns_the_brightness_rule(self, smoke_run):
        acc = evaluate_accuracy(
            smoke_run["model"].module,
            smoke_run["test_images"],
            smoke_run["test_labels"],
        )
        assert acc >= 0.9

    def test_logs_one_line_per_epoch(self, smoke_run):
        epoch_lines = [l for l in smoke_run["log"] if l.startswith("epoch ")]
        assert len(epoch_lines) == 6
        assert "test accuracy" in epoch_lines[-1]

    def test_saved_model_metadata(self, smoke_run):
        loaded = load_model(smoke_run["path"])
        assert loaded.architecture == "allconv"
        assert loaded.labels == CIFAR10_LABELS
        assert (loaded.width, loaded.height, loaded.channels) == (32, 32, 3)

    def test_saved_model_agrees_with_live_module(self, smoke_run):
        loaded = load_model(smoke_run["path"])
        planar = smoke_run["test_images"][:4]
        wire = planar.transpose(0, 2, 3, 1).reshape(4, -1)
        live = smoke_run["model"]
        np.testing.assert_allclose(
            loaded.predict(wire), live.predict(wire), rtol=0, atol=1e-6
        )

    def test_served_accuracy_equals_offline_eval(self, smoke_run):
        loaded = load_model(smoke_run["path"])
        planar = smoke_run["test_images"]
        labels = np.asarray(smoke_run["test_labels"])
        wire = planar.transpose(0, 2, 3, 1).reshape(len(labels), -1)
        with OracleServer(loaded) as server:
            payload = {
                "images": [
                    base64.b64encode(row.tobytes()).decode() for row in wire
                ]
            }
            resp = requests.post(server.url + "/predict", json=payload)
        served = np.asarray(resp.json()["probs"]).argmax(axis=1)
        served_acc = float((served == labels).mean())
        offline_acc = evaluate_accuracy(loaded.module, planar, labels)
        assert served_acc == offline_acc

    def test_limit_caps_the_training_split(self, smoke_run, tmp_path):
        lines = []
        train_model(
            "allconv",
            smoke_run["data_dir"],
            tmp_path / "m.pt",
            epochs=1,
            batch_size=8,
            limit=10,
            log=lines.append,
        )
        assert any("10 images" in l for l in lines)

    def test_variant_flag_shapes_the_module(self, smoke_run, tmp_path):
        model = train_model(
            "allconv",
            smoke_run["data_dir"],
            tmp_path / "v.pt",
            epochs=1,
            batch_size=8,
            limit=8,
            first_batchnorm=False,
            log=lambda _: None,
        )
        assert isinstance(model.module[1], nn.ReLU)

    def test_missing_dataset(self, tmp_path):
        from pixelstorm_server.data import DataError

        with pytest.raises(DataError):
            train_model("allconv", tmp_path / "nowhere", tmp_path / "m.pt", epochs=1)


def _free_port():
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


class TestCli:
    def test_train_writes_a_loadable_model(self, smoke_run, tmp_path, capsys):
        out = tmp_path / "cli.pt"
        rc = main(
            [
                "train",
                "--arch",
                "allconv",
                "--data",
                str(smoke_run["data_dir"]),
                "--out",
                str(out),
                "--epochs",
                "1",
                "--batch-size",
                "8",
                "--limit",
                "8",
            ]
        )
        assert rc == 0
        assert "saved allconv model" in capsys.readouterr().out
        assert load_model(out).architecture == "allconv"

    def test_train_missing_data_dir(self, tmp_path, capsys):
        rc = main(
            ["train", "--arch", "nin", "--data", str(tmp_path / "gone"),
             "--out", str(tmp_path / "m.pt")]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_variant_flag_on_wrong_arch(self, smoke_run, tmp_path, capsys):
        rc = main(
            ["train", "--arch", "allconv", "--data", str(smoke_run["data_dir"]),
             "--out", str(tmp_path / "m.pt"), "--no-second-avgpool"]
        )
        assert rc == 1
        assert "do not apply" in capsys.readouterr().err

    def test_serve_missing_model(self, tmp_path, capsys):
        rc = main(["serve", "--model", str(tmp_path / "gone.pt"), "--port", "1"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err

    def test_serve_subprocess_end_to_end(self, smoke_run):
        port = _free_port()
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "pixelstorm_server.cli",
                "serve",
                "--model",
                str(smoke_run["path"]),
                "--port",
                str(port),
                "--quiet",
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
        url = f"http://127.0.0.1:{port}"
        try:
            deadline = time.time() + 10
            info = None
            while time.time() < deadline:
                try:
                    info = requests.get(url + "/info", timeout=1).json()
                    break
                except requests.RequestException:
                    if proc.poll() is not None:
                        raise AssertionError(
                            f"server exited early: {proc.stderr.read()}"
                        )
                    time.sleep(0.1)
            assert info is not None, "server never came up"
            assert info["num_classes"] == 10
            row = smoke_run["test_images"][0].transpose(1, 2, 0).tobytes()
            resp = requests.post(
                url + "/predict",
                json={"images": [base64.b64encode(row).decode()]},
                timeout=5,
            )
            assert resp.status_code == 200
            probs = resp.json()["probs"][0]
            assert len(probs) == 10
            assert sum(probs) == pytest.approx(1.0, abs=1e-3)
        finally:
            proc.send_signal(signal.SIGINT)
            try:
                proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                proc.kill()
