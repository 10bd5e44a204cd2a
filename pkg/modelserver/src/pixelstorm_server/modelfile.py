"""Saved-model records: a traced module plus the metadata needed to serve it.

A model file is a TorchScript archive with a JSON sidecar embedded via
``_extra_files``, so one file carries the weights, the architecture tag,
the input dimensions and the class labels.  Loading re-validates that the
module really maps the declared input shape to one logit per label.
"""

import dataclasses
import json

import numpy as np
import torch

_META_KEY = "served_model.json"


class ModelFileError(Exception):
    """A model file is unreadable or inconsistent with its metadata."""


@dataclasses.dataclass
class ServedModel:
    """A classifier ready to serve: metadata plus a logit-producing module."""

    architecture: str
    width: int
    height: int
    channels: int
    labels: tuple
    module: object  # callable: (N, C, H, W) float tensor -> (N, K) logits

    @property
    def num_classes(self):
        return len(self.labels)

    @property
    def pixel_values(self):
        return self.width * self.height * self.channels

    def info_dict(self):
        return {
            "width": self.width,
            "height": self.height,
            "channels": self.channels,
            "num_classes": self.num_classes,
            "labels": list(self.labels),
        }

    def to_tensor(self, batch):
        """Raw uint8 rows (n, W*H*C, interleaved) -> (n, C, H, W) floats in [0, 1]."""
        batch = np.asarray(batch, dtype=np.uint8)
        if batch.ndim != 2 or batch.shape[1] != self.pixel_values:
            raise ValueError(
                f"batch shape {batch.shape} does not match model input "
                f"({self.width}x{self.height}x{self.channels})"
            )
        planes = batch.reshape(-1, self.height, self.width, self.channels)
        tensor = torch.from_numpy(planes.astype(np.float32) / 255.0)
        return tensor.permute(0, 3, 1, 2).contiguous()

    def predict(self, batch):
        """Probabilities for a raw uint8 batch, via a single forward pass."""
        tensor = self.to_tensor(batch)
        with torch.no_grad():
            logits = self.module(tensor)
        probs = torch.softmax(logits, dim=1)
        return probs.double().numpy()


def _validate(model: ServedModel):
    if model.num_classes < 2:
        raise ModelFileError("a served model needs at least two labels")
    probe = torch.zeros(1, model.channels, model.height, model.width)
    try:
        with torch.no_grad():
            out = model.module(probe)
    except RuntimeError as exc:
        raise ModelFileError(
            f"module rejects the declared input shape "
            f"{model.width}x{model.height}x{model.channels}: {exc}"
        ) from exc
    if tuple(out.shape) != (1, model.num_classes):
        raise ModelFileError(
            f"module produced shape {tuple(out.shape)} for one image, "
            f"expected (1, {model.num_classes})"
        )
    return model


def save_model(path, model: ServedModel):
    """Trace the module in eval mode and write a single-file archive."""
    _validate(model)
    module = model.module
    if not isinstance(module, torch.jit.ScriptModule):
        module = module.eval()
        example = torch.zeros(1, model.channels, model.height, model.width)
        module = torch.jit.trace(module, example)
    meta = {
        "architecture": model.architecture,
        "width": model.width,
        "height": model.height,
        "channels": model.channels,
        "labels": list(model.labels),
    }
    torch.jit.save(module, str(path), _extra_files={_META_KEY: json.dumps(meta)})


def load_model(path) -> ServedModel:
    extra = {_META_KEY: ""}
    try:
        module = torch.jit.load(str(path), map_location="cpu", _extra_files=extra)
    except (RuntimeError, ValueError, OSError) as exc:
        raise ModelFileError(f"cannot load model file {path}: {exc}") from exc
    try:
        meta = json.loads(extra[_META_KEY])
        model = ServedModel(
            architecture=str(meta["architecture"]),
            width=int(meta["width"]),
            height=int(meta["height"]),
            channels=int(meta["channels"]),
            labels=tuple(str(label) for label in meta["labels"]),
            module=module.eval(),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"model file {path} has invalid metadata: {exc}") from exc
    return _validate(model)
