import numpy as np
import pytest

from conftest import write_batch
from pixelstorm_server.data import (
    CIFAR10_LABELS,
    DataError,
    load_batch_file,
    load_cifar10,
)


def test_labels_are_the_ten_cifar_classes():
    assert len(CIFAR10_LABELS) == 10
    assert CIFAR10_LABELS[0] == "airplane"
    assert CIFAR10_LABELS[-1] == "truck"


class TestLoadBatchFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(4)
        images = rng.integers(0, 256, size=(5, 3, 32, 32), dtype=np.uint8)
        labels = np.array([0, 3, 9, 1, 1])
        path = tmp_path / "data_batch_1.bin"
        write_batch(path, images, labels)
        got_images, got_labels = load_batch_file(path)
        assert np.array_equal(got_images, images)
        assert np.array_equal(got_labels, labels)
        assert got_labels.dtype == np.int64

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "data_batch_1.bin"
        path.write_bytes(b"\x00" * 3000)
        with pytest.raises(DataError, match="whole number"):
            load_batch_file(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "data_batch_1.bin"
        path.write_bytes(b"")
        with pytest.raises(DataError):
            load_batch_file(path)

    def test_label_out_of_range(self, tmp_path):
        record = bytes([12]) + b"\x00" * 3072
        path = tmp_path / "data_batch_1.bin"
        path.write_bytes(record)
        with pytest.raises(DataError, match="label 12"):
            load_batch_file(path)


class TestLoadCifar10:
    def test_concatenates_sorted_batches(self, cifar_dir):
        train_images, train_labels, test_images, test_labels = load_cifar10(cifar_dir)
        assert train_images.shape == (96, 3, 32, 32)
        assert len(train_labels) == 96
        assert test_images.shape == (32, 3, 32, 32)
        # batch files were written as two halves; order must be preserved
        first_half, _ = load_batch_file(cifar_dir / "data_batch_1.bin")
        assert np.array_equal(train_images[: len(first_half)], first_half)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(DataError, match="does not exist"):
            load_cifar10(tmp_path / "nope")

    def test_no_train_batches(self, tmp_path):
        with pytest.raises(DataError, match="no data_batch"):
            load_cifar10(tmp_path)

    def test_test_batch_optional(self, tmp_path):
        images = np.zeros((2, 3, 32, 32), dtype=np.uint8)
        write_batch(tmp_path / "data_batch_1.bin", images, [0, 1])
        _, _, test_images, test_labels = load_cifar10(tmp_path)
        assert test_images is None and test_labels is None
