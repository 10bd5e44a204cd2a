"""CIFAR-scale classifier definitions.

Every builder returns a :class:`torch.nn.Module` mapping ``(N, C, H, W)``
float tensors in ``[0, 1]`` to ``(N, num_classes)`` logits.  Softmax is
applied at serving time, not inside the module.

Convolutions use same-padding so only the stride-2 stages shrink the map.
Each convolution is followed by batch normalization and ReLU except the
final 1x1 classifier convolution, whose channel-wise global average *is*
the logit vector.  Two documented variants exist: ``allconv`` can drop the
batch normalization on its first layer, and ``nin`` can drop its second
pooling stage (the mid-network average pool).
"""

from torch import nn


def _conv(in_ch, out_ch, kernel, stride=1, batchnorm=True):
    layers = [
        nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2)
    ]
    if batchnorm:
        layers.append(nn.BatchNorm2d(out_ch))
    layers.append(nn.ReLU(inplace=True))
    return layers


def _head(in_ch, num_classes):
    """1x1 conv to class channels, averaged over the remaining map."""
    return [
        nn.Conv2d(in_ch, num_classes, 1),
        nn.AdaptiveAvgPool2d(1),
        nn.Flatten(),
    ]


def build_allconv(num_classes=10, first_batchnorm=True):
    """All-convolutional net: three stride-2 stages take 32 -> 16 -> 8 -> 4."""
    return nn.Sequential(
        *_conv(3, 96, 3, batchnorm=first_batchnorm),
        *_conv(96, 96, 3),
        *_conv(96, 96, 3, stride=2),
        *_conv(96, 192, 3),
        *_conv(192, 192, 3),
        nn.Dropout(0.3),
        *_conv(192, 192, 3, stride=2),
        *_conv(192, 192, 3, stride=2),
        *_conv(192, 192, 1),
        *_head(192, num_classes),
    )


def build_nin(num_classes=10, second_avgpool=True):
    """Network-in-network: 5x5 stages interleaved with 1x1 mixing layers.

    With both pooling stages the map shrinks 32 -> 16 -> 8 and the head
    averages an 8x8 map.  Dropping the second pooling stage leaves the
    later stages at 16x16; the head average absorbs the difference.
    """
    mid_pool = [nn.AvgPool2d(3, stride=2, padding=1)] if second_avgpool else []
    return nn.Sequential(
        *_conv(3, 192, 5),
        *_conv(192, 160, 1),
        *_conv(160, 96, 1),
        nn.MaxPool2d(3, stride=2, padding=1),
        nn.Dropout(0.5),
        *_conv(96, 192, 5),
        *_conv(192, 192, 5),
        *_conv(192, 192, 5),
        *mid_pool,
        nn.Dropout(0.5),
        *_conv(192, 192, 3),
        *_conv(192, 192, 1),
        *_head(192, num_classes),
    )


def build_vgg16(num_classes=10):
    """VGG16: five 2x2-pooled blocks leave a 1x1x512 map for the dense head."""
    cfg = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    layers = []
    in_ch = 3
    for depth, count in cfg:
        for _ in range(count):
            layers.extend(_conv(in_ch, depth, 3))
            in_ch = depth
        layers.append(nn.MaxPool2d(2, stride=2))
    layers.extend(
        [
            nn.Flatten(),
            nn.Linear(512, 2048),
            nn.ReLU(inplace=True),
            nn.Linear(2048, 2048),
            nn.ReLU(inplace=True),
            nn.Linear(2048, num_classes),
        ]
    )
    return nn.Sequential(*layers)


ARCHITECTURES = {
    "allconv": build_allconv,
    "nin": build_nin,
    "vgg16": build_vgg16,
}


def build_model(arch, num_classes=10, **variant_flags):
    """Instantiate an architecture by tag; unknown tags or flags raise ValueError."""
    try:
        builder = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(
            f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}"
        ) from None
    try:
        return builder(num_classes=num_classes, **variant_flags)
    except TypeError:
        raise ValueError(
            f"variant flags {sorted(variant_flags)} do not apply to {arch!r}"
        ) from None
