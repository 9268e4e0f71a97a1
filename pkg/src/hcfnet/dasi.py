"""Dimension-aware selective integration block (DASI).

Aligns the shallower (fine) and deeper (context) streams to the current
feature's channels and resolution, then gates between them channel-partition
by channel-partition: alpha = sigmoid(current) picks the fine stream where it
is high and the context stream where it is low.  A 3x3 convolution, batch
norm and ReLU finish the block.  When a neighboring stream does not exist at
a boundary stage, the current feature stands in for it.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContractError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module
from .ops import bilinear_resize
from .tensor import Tensor, add, concat, mul, narrow, relu, sigmoid, sub

__all__ = ["DASI", "gated_fuse"]


def gated_fuse(current: Tensor, fine: Tensor, context: Tensor) -> Tensor:
    """Convex per-element blend of fine and context streams, gated by the
    current feature, computed over four channel partitions."""
    if not current.shape == fine.shape == context.shape:
        raise ShapeError(
            f"gated_fuse needs matching shapes, got {current.shape}, "
            f"{fine.shape}, {context.shape}"
        )
    channels = current.shape[1]
    if channels % 4:
        raise ConfigError(f"gated_fuse needs channels divisible by 4, got {channels}")
    quarter = channels // 4
    parts = []
    for i in range(4):
        u = narrow(current, 1, i * quarter, quarter)
        f = narrow(fine, 1, i * quarter, quarter)
        c = narrow(context, 1, i * quarter, quarter)
        alpha = sigmoid(u)
        parts.append(add(mul(alpha, f), mul(sub(1.0, alpha), c)))
    return concat(parts, 1)


class DASI(Module):
    def __init__(
        self,
        channels: int,
        *,
        fine_channels: int | None = None,
        context_channels: int | None = None,
        rng: np.random.Generator,
    ):
        super().__init__()
        if channels % 4:
            raise ConfigError(f"DASI channels must be divisible by 4, got {channels}")
        self.align_fine = (
            Conv2d(fine_channels, channels, 1, rng=rng) if fine_channels else None
        )
        self.align_context = (
            Conv2d(context_channels, channels, 1, rng=rng) if context_channels else None
        )
        self.fuse = Conv2d(channels, channels, 3, padding=1, rng=rng)
        self.bn = BatchNorm2d(channels)

    def forward(
        self,
        current: Tensor,
        fine: Tensor | None = None,
        context: Tensor | None = None,
        train: bool = False,
    ) -> Tensor:
        h, w = current.shape[2], current.shape[3]
        if (fine is None) != (self.align_fine is None):
            raise ContractError("fine stream does not match this block's configuration")
        if (context is None) != (self.align_context is None):
            raise ContractError("context stream does not match this block's configuration")
        fine_aligned = (
            bilinear_resize(self.align_fine(fine), h, w) if fine is not None else current
        )
        context_aligned = (
            bilinear_resize(self.align_context(context), h, w)
            if context is not None
            else current
        )
        fused = gated_fuse(current, fine_aligned, context_aligned)
        return relu(self.bn(self.fuse(fused), train))

    __call__ = forward

    def macs(self, h: int, w: int) -> int:
        total = self.fuse.macs(h, w) + self.bn.macs(h, w)
        if self.align_fine is not None:
            total += self.align_fine.macs(2 * h, 2 * w)  # fine stream enters at 2x res
        if self.align_context is not None:
            total += self.align_context.macs(h // 2, w // 2)
        return total
