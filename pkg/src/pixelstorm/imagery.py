"""Image tensors, dataset codecs and pixel-space helpers.

An image is a flat uint8 buffer in row-major, channel-last order: the value of
channel ``c`` of the pixel at ``(x, y)`` lives at ``(y*width + x)*channels + c``.
Intensities are raw bytes in [0, 255]; nothing in this module normalizes.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import FormatError

CIFAR10_DIM = 32
CIFAR10_PLANE = CIFAR10_DIM * CIFAR10_DIM
CIFAR10_RECORD_BYTES = 1 + 3 * CIFAR10_PLANE  # label byte + R, G, B planes
CIFAR10_CLASSES = 10


@dataclasses.dataclass(frozen=True, eq=False)
class ImageTensor:
    """A W x H x C uint8 image stored as a flat row-major buffer."""

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or self.channels < 1:
            raise ValueError("image dimensions must be positive")
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if data.ndim != 1 or data.size != self.width * self.height * self.channels:
            raise ValueError(
                f"data length {data.size} does not match "
                f"{self.width}x{self.height}x{self.channels}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    def __eq__(self, other):
        return (
            isinstance(other, ImageTensor)
            and self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and np.array_equal(self.data, other.data)
        )

    def pixel(self, x, y):
        """Channel values of the pixel at (x, y) as a tuple of ints."""
        base = (y * self.width + x) * self.channels
        return tuple(int(v) for v in self.data[base : base + self.channels])

    def as_hwc(self):
        """The image as an (H, W, C) uint8 array view."""
        return self.data.reshape(self.height, self.width, self.channels)

    @classmethod
    def from_hwc(cls, arr):
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr.reshape(-1).copy())


@dataclasses.dataclass(frozen=True)
class LabeledImage:
    """An image together with its ground-truth class and an opaque id."""

    image: ImageTensor
    true_class: int
    id: str


def load_cifar10_batch(path) -> list[LabeledImage]:
    """Decode a CIFAR-10 binary batch file into labeled images.

    Records are 3073 bytes: one label byte (0-9) followed by three 1024-byte
    row-major colour planes (R, G, B); planes are interleaved here into the
    channel-last layout used everywhere else.
    """
    path = Path(path)
    raw = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR10_RECORD_BYTES != 0:
        raise FormatError(
            f"{path}: size {raw.size} is not a positive multiple of {CIFAR10_RECORD_BYTES}"
        )
    records = raw.reshape(-1, CIFAR10_RECORD_BYTES)
    labels = records[:, 0]
    bad = np.nonzero(labels >= CIFAR10_CLASSES)[0]
    if bad.size:
        raise FormatError(f"{path}: record {bad[0]} has label byte {labels[bad[0]]}")
    planes = records[:, 1:].reshape(-1, 3, CIFAR10_DIM, CIFAR10_DIM)
    hwc = planes.transpose(0, 2, 3, 1)  # (N, H, W, C)
    flat = np.ascontiguousarray(hwc).reshape(len(records), -1)
    stem = path.stem
    return [
        LabeledImage(
            image=ImageTensor(CIFAR10_DIM, CIFAR10_DIM, 3, flat[i]),
            true_class=int(labels[i]),
            id=f"{stem}-{i:05d}",
        )
        for i in range(len(records))
    ]


def save_cifar10_batch(path, images: Sequence[LabeledImage]):
    """Encode labeled 32x32x3 images back into the binary batch format."""
    out = np.empty((len(images), CIFAR10_RECORD_BYTES), dtype=np.uint8)
    for i, lab in enumerate(images):
        img = lab.image
        if (img.width, img.height, img.channels) != (CIFAR10_DIM, CIFAR10_DIM, 3):
            raise ValueError(f"image {lab.id} is not 32x32x3")
        if not 0 <= lab.true_class < CIFAR10_CLASSES:
            raise ValueError(f"image {lab.id} has label {lab.true_class}")
        out[i, 0] = lab.true_class
        hwc = img.as_hwc()
        out[i, 1:] = hwc.transpose(2, 0, 1).reshape(-1)
    Path(path).write_bytes(out.tobytes())


def load_png(path) -> ImageTensor:
    """Load an 8-bit grayscale or RGB PNG; anything else is a format error."""
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: not a PNG file (format={im.format})")
            if im.mode not in ("L", "RGB"):
                raise FormatError(
                    f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit L or RGB)"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"{path}: unreadable image: {exc}") from exc
    return ImageTensor.from_hwc(arr)


def save_png(path, image: ImageTensor):
    if image.channels == 1:
        pil = Image.fromarray(image.as_hwc()[:, :, 0], mode="L")
    elif image.channels == 3:
        pil = Image.fromarray(image.as_hwc(), mode="RGB")
    else:
        raise ValueError(f"cannot write {image.channels}-channel image as PNG")
    pil.save(path, format="PNG")


def resize_nearest(image: ImageTensor, out_width, out_height) -> ImageTensor:
    """Nearest-neighbour resize: out(x, y) = src(floor(x*W/out_w), floor(y*H/out_h))."""
    if out_width < 1 or out_height < 1:
        raise ValueError("target size must be positive")
    xs = (np.arange(out_width) * image.width) // out_width
    ys = (np.arange(out_height) * image.height) // out_height
    hwc = image.as_hwc()
    return ImageTensor.from_hwc(hwc[np.ix_(ys, xs)])


def load_manifest(path) -> list[LabeledImage]:
    """Read a ``<path>,<true_class>`` manifest; image paths resolve relative to it.

    Referenced files must be PNGs loadable by :func:`load_png`.
    """
    path = Path(path)
    base = path.parent
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rel, cls = line.rsplit(",", 1)
            true_class = int(cls)
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected '<path>,<true_class>'") from None
        img_path = base / rel.strip()
        out.append(
            LabeledImage(image=load_png(img_path), true_class=true_class, id=img_path.stem)
        )
    return out
