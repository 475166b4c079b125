from __future__ import annotations

import torch
from torch import nn

STANDARD = "standard"
ASYMMETRIC = "asymmetric"
VARIANTS = (STANDARD, ASYMMETRIC)


class ConvBNReLU(nn.Sequential):
    def __init__(self, in_channels, out_channels, kernel_size=3, dilation=1):
        padding = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv2d(in_channels, out_channels, kernel_size,
                      padding=padding, dilation=dilation, bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


class AsymConvBNReLU(nn.Sequential):
    """An n x n convolution factorized as 1 x n followed by n x 1."""

    def __init__(self, in_channels, out_channels, kernel_size=3, dilation=1):
        pad = dilation * (kernel_size - 1) // 2
        super().__init__(
            nn.Conv2d(in_channels, out_channels, (1, kernel_size),
                      padding=(0, pad), dilation=(1, dilation), bias=False),
            nn.Conv2d(out_channels, out_channels, (kernel_size, 1),
                      padding=(pad, 0), dilation=(dilation, 1), bias=False),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )


def spatial_conv(in_channels, out_channels, variant, dilation=1):
    if variant == ASYMMETRIC:
        return AsymConvBNReLU(in_channels, out_channels, 3, dilation)
    return ConvBNReLU(in_channels, out_channels, 3, dilation)


class ExtendedInception(nn.Module):
    """Inception block with two extra dilated 3x3 branches and no pooling branch.

    Branches: 1x1 | 1x1 -> 3x3 | 1x1 -> 3x3 (d0) | 1x1 -> 3x3 (d1). Outputs are
    concatenated and projected to ``out_channels`` by a 1x1 convolution.
    Spatial size is preserved.
    """

    def __init__(self, in_channels, out_channels, variant=STANDARD, dilation_rates=(2, 4)):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ValueError(
                f"channels must be positive, got in={in_channels} out={out_channels}"
            )
        if variant not in VARIANTS:
            raise ValueError(f"unknown block variant {variant!r}")
        width = max(1, out_channels // 4)
        d0, d1 = dilation_rates
        self.branch_1x1 = ConvBNReLU(in_channels, width, 1)
        self.branch_3x3 = nn.Sequential(
            ConvBNReLU(in_channels, width, 1),
            spatial_conv(width, width, variant),
        )
        self.branch_dil_a = nn.Sequential(
            ConvBNReLU(in_channels, width, 1),
            spatial_conv(width, width, variant, dilation=d0),
        )
        self.branch_dil_b = nn.Sequential(
            ConvBNReLU(in_channels, width, 1),
            spatial_conv(width, width, variant, dilation=d1),
        )
        self.project = ConvBNReLU(4 * width, out_channels, 1)

    def forward(self, x):
        branches = [
            self.branch_1x1(x),
            self.branch_3x3(x),
            self.branch_dil_a(x),
            self.branch_dil_b(x),
        ]
        return self.project(torch.cat(branches, dim=1))


def extended_inception_block(in_channels, out_channels, variant=STANDARD, dilation_rates=(2, 4)):
    return ExtendedInception(in_channels, out_channels, variant, tuple(dilation_rates))
