"""Training loop for the served classifier architectures.

Deliberately plain: SGD with momentum and cosine decay, pad-and-crop plus
horizontal-flip augmentation, per-epoch accuracy on the held-out batch.
All randomness flows from one seed so a rerun reproduces the same model.
"""

import numpy as np
import torch
import torch.nn.functional as F

from .architectures import build_model
from .data import CIFAR10_LABELS, load_cifar10
from .modelfile import ServedModel, save_model


def _augment(batch, gen):
    """Random 32x32 crops from 4-pixel-padded images, with random flips."""
    n = batch.shape[0]
    padded = F.pad(batch, (4, 4, 4, 4))
    dx = torch.randint(0, 9, (n,), generator=gen)
    dy = torch.randint(0, 9, (n,), generator=gen)
    flip = torch.rand(n, generator=gen) < 0.5
    crops = []
    for i in range(n):
        crop = padded[i, :, dy[i] : dy[i] + 32, dx[i] : dx[i] + 32]
        crops.append(torch.flip(crop, dims=(2,)) if flip[i] else crop)
    return torch.stack(crops)


def _batches(count, batch_size, gen=None):
    order = (
        torch.randperm(count, generator=gen)
        if gen is not None
        else torch.arange(count)
    )
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def evaluate_accuracy(module, images, labels, batch_size=256, device="cpu"):
    """Fraction of planar uint8 images whose argmax matches the label."""
    module.eval()
    hits = 0
    labels = torch.as_tensor(np.asarray(labels, dtype=np.int64))
    with torch.no_grad():
        for idx in _batches(len(labels), batch_size):
            batch = torch.from_numpy(
                images[idx.numpy()].astype(np.float32) / 255.0
            ).to(device)
            pred = module(batch).argmax(dim=1).cpu()
            hits += int((pred == labels[idx]).sum())
    return hits / len(labels)


def train_model(
    arch,
    data_dir,
    out_path,
    *,
    epochs=50,
    batch_size=128,
    lr=0.01,
    seed=0,
    limit=None,
    device="cpu",
    log=print,
    **variant_flags,
):
    """Train ``arch`` on a CIFAR-10 directory and save the result.

    ``limit`` caps both splits, which keeps smoke runs fast.  Returns the
    saved :class:`ServedModel` (with the live, untraced module).
    """
    train_images, train_labels, test_images, test_labels = load_cifar10(data_dir)
    if limit is not None:
        train_images, train_labels = train_images[:limit], train_labels[:limit]
        if test_images is not None:
            test_images, test_labels = test_images[:limit], test_labels[:limit]

    torch.manual_seed(seed)
    module = build_model(arch, num_classes=len(CIFAR10_LABELS), **variant_flags)
    module = module.to(device)
    gen = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.SGD(
        module.parameters(), lr=lr, momentum=0.9, weight_decay=5e-4, nesterov=True
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=epochs)
    labels_t = torch.as_tensor(train_labels)

    log(f"training {arch} on {len(train_labels)} images, {epochs} epochs")
    for epoch in range(epochs):
        module.train()
        total_loss = 0.0
        seen = 0
        for idx in _batches(len(labels_t), batch_size, gen):
            batch = torch.from_numpy(
                train_images[idx.numpy()].astype(np.float32) / 255.0
            ).to(device)
            batch = _augment(batch, gen)
            optimizer.zero_grad()
            loss = F.cross_entropy(module(batch), labels_t[idx].to(device))
            loss.backward()
            optimizer.step()
            total_loss += float(loss.detach()) * len(idx)
            seen += len(idx)
        scheduler.step()
        line = f"epoch {epoch + 1}/{epochs}: loss {total_loss / seen:.4f}"
        if test_images is not None:
            acc = evaluate_accuracy(module, test_images, test_labels, device=device)
            line += f", test accuracy {acc:.4f}"
        log(line)

    module = module.cpu().eval()
    model = ServedModel(
        architecture=arch,
        width=32,
        height=32,
        channels=3,
        labels=CIFAR10_LABELS,
        module=module,
    )
    save_model(out_path, model)
    log(f"saved {arch} model to {out_path}")
    return model
