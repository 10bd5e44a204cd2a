"""CIFAR-10 binary-batch loading.

Each record in a ``.bin`` batch is one label byte followed by 3072 pixel
bytes stored channel-planar (1024 red, 1024 green, 1024 blue, each a
row-major 32x32 plane).
"""

import os
from glob import glob

import numpy as np

CIFAR10_LABELS = (
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
)

_RECORD = 1 + 3 * 32 * 32


class DataError(Exception):
    """A dataset directory or batch file is missing or malformed."""


def load_batch_file(path):
    """Read one binary batch into ``(images, labels)``.

    Images come back as uint8 ``(N, 3, 32, 32)`` channel-planar arrays,
    labels as int64.
    """
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read batch file {path}: {exc}") from exc
    if raw.size == 0 or raw.size % _RECORD != 0:
        raise DataError(
            f"{path}: size {raw.size} is not a whole number of "
            f"{_RECORD}-byte records"
        )
    records = raw.reshape(-1, _RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= len(CIFAR10_LABELS):
        raise DataError(f"{path}: label {labels.max()} out of range")
    images = records[:, 1:].reshape(-1, 3, 32, 32)
    return images, labels


def load_cifar10(data_dir):
    """Load a CIFAR-10 directory: ``data_batch_*.bin`` plus optional test batch.

    Returns ``(train_images, train_labels, test_images, test_labels)`` where
    the test pair is ``(None, None)`` if no ``test_batch.bin`` exists.
    """
    if not os.path.isdir(data_dir):
        raise DataError(f"dataset directory {data_dir} does not exist")
    train_files = sorted(glob(os.path.join(data_dir, "data_batch_*.bin")))
    if not train_files:
        raise DataError(f"no data_batch_*.bin files under {data_dir}")
    parts = [load_batch_file(path) for path in train_files]
    train_images = np.concatenate([p[0] for p in parts])
    train_labels = np.concatenate([p[1] for p in parts])
    test_path = os.path.join(data_dir, "test_batch.bin")
    if os.path.exists(test_path):
        test_images, test_labels = load_batch_file(test_path)
    else:
        test_images = test_labels = None
    return train_images, train_labels, test_images, test_labels
