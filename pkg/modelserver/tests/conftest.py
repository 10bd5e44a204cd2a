"""Shared fixtures: a frozen toy model with explicit weights, synthetic
CIFAR-style batch files, and a numpy reference forward pass."""

import os
import sys

import numpy as np
import pytest
import torch
from torch import nn

sys.path.insert(0, os.path.dirname(__file__))

from pixelstorm_server import ServedModel

TOY_LABELS = ("cat", "dog", "frog")
TOY_WIDTH = TOY_HEIGHT = 4
TOY_CHANNELS = 3


def toy_weights():
    """Explicit sixteenths, independent of any framework RNG."""
    conv_w = np.array(
        [[(o * 27 + c * 9 + i * 3 + j) % 13 - 6 for j in range(3)]
         for o in range(2) for c in range(3) for i in range(3)],
        dtype=np.float64,
    ).reshape(2, 3, 3, 3) / 16.0
    conv_b = np.array([1.0, -2.0]) / 16.0
    lin_w = np.array([[3.0, -5.0], [-2.0, 4.0], [1.0, 1.0]]) / 8.0
    lin_b = np.array([0.0, 1.0, -1.0]) / 8.0
    return conv_w, conv_b, lin_w, lin_b


def build_toy_module():
    conv_w, conv_b, lin_w, lin_b = toy_weights()
    module = nn.Sequential(
        nn.Conv2d(3, 2, 3, padding=1),
        nn.ReLU(),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
        nn.Linear(2, 3),
    )
    with torch.no_grad():
        module[0].weight.copy_(torch.from_numpy(conv_w))
        module[0].bias.copy_(torch.from_numpy(conv_b))
        module[4].weight.copy_(torch.from_numpy(lin_w))
        module[4].bias.copy_(torch.from_numpy(lin_b))
    return module.eval()


def ref_toy_probs(batch):
    """Float64 numpy forward pass for the toy module (independent of torch)."""
    conv_w, conv_b, lin_w, lin_b = toy_weights()
    batch = np.asarray(batch, dtype=np.float64) / 255.0
    planes = batch.reshape(-1, TOY_HEIGHT, TOY_WIDTH, TOY_CHANNELS)
    planes = planes.transpose(0, 3, 1, 2)  # NCHW
    padded = np.pad(planes, ((0, 0), (0, 0), (1, 1), (1, 1)))
    n = planes.shape[0]
    feat = np.zeros((n, 2, TOY_HEIGHT, TOY_WIDTH))
    for o in range(2):
        for y in range(TOY_HEIGHT):
            for x in range(TOY_WIDTH):
                window = padded[:, :, y : y + 3, x : x + 3]
                feat[:, o, y, x] = np.einsum("ncij,cij->n", window, conv_w[o])
        feat[:, o] += conv_b[o]
    feat = np.maximum(feat, 0.0).mean(axis=(2, 3))
    logits = feat @ lin_w.T + lin_b
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


@pytest.fixture
def toy_model():
    return ServedModel(
        architecture="toy",
        width=TOY_WIDTH,
        height=TOY_HEIGHT,
        channels=TOY_CHANNELS,
        labels=TOY_LABELS,
        module=build_toy_module(),
    )


@pytest.fixture
def toy_model_file(toy_model, tmp_path):
    from pixelstorm_server import save_model

    path = tmp_path / "toy.pt"
    save_model(path, toy_model)
    return path


def toy_batch(count=3, seed=0):
    rng = np.random.default_rng(seed)
    size = TOY_WIDTH * TOY_HEIGHT * TOY_CHANNELS
    return rng.integers(0, 256, size=(count, size), dtype=np.uint8)


# ---------------------------------------------------------------------------
# Synthetic CIFAR-style batches


def write_batch(path, images, labels):
    """Write planar uint8 (N, 3, 32, 32) images + labels in batch format."""
    images = np.asarray(images, dtype=np.uint8).reshape(len(labels), -1)
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    np.concatenate([labels, images], axis=1).tofile(str(path))


def brightness_dataset(num_train=96, num_test=32, seed=5):
    """Images separable by brightness: label 0 dark, label 1 bright."""
    rng = np.random.default_rng(seed)

    def split(count):
        labels = rng.integers(0, 2, size=count)
        dark = rng.integers(0, 81, size=(count, 3, 32, 32))
        bright = rng.integers(175, 256, size=(count, 3, 32, 32))
        images = np.where(labels[:, None, None, None] == 0, dark, bright)
        return images.astype(np.uint8), labels

    return split(num_train), split(num_test)


@pytest.fixture
def cifar_dir(tmp_path):
    (train_images, train_labels), (test_images, test_labels) = brightness_dataset()
    data_dir = tmp_path / "cifar"
    data_dir.mkdir()
    half = len(train_labels) // 2
    write_batch(data_dir / "data_batch_1.bin", train_images[:half], train_labels[:half])
    write_batch(data_dir / "data_batch_2.bin", train_images[half:], train_labels[half:])
    write_batch(data_dir / "test_batch.bin", test_images, test_labels)
    return data_dir
