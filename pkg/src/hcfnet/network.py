"""Five-scale encoder/decoder segmentation network with deep supervision.

Encoder stages (PPA blocks, or plain double convolutions when ablated) are
separated by 2x2 max pooling; an MDCR block refines the deepest feature;
decoder stages combine a learned 2x upsample with a DASI-fused skip (or the
raw skip when ablated) through channel concatenation.  Every decoder scale
owns a pointwise prediction head whose logits are bilinearly upsampled to the
input resolution, finest scale first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .dasi import DASI
from .errors import ConfigError, ShapeError
from .mdcr import MDCR
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module, ModuleList
from .ops import bilinear_resize, max_pool2d
from .ppa import PPA
from .tensor import Tensor, concat, relu

__all__ = ["NetworkConfig", "Network", "DoubleConv", "build_network", "count_params_macs"]


@dataclass(frozen=True)
class NetworkConfig:
    stages: int = 5
    widths: tuple[int, ...] = (16, 32, 64, 128, 256)
    in_channels: int = 1
    patch_sizes: tuple[int, int] = (2, 4)
    dilations: tuple[int, int, int, int] = (1, 3, 5, 7)
    dropout: float = 0.1
    use_ppa: bool = True
    use_dasi: bool = True
    use_mdcr: bool = True
    loss_weights: tuple[float, ...] = (1.0, 0.5, 0.25, 0.125, 0.0625)

    def validate(self) -> None:
        if self.stages < 2:
            raise ConfigError(f"stages must be >= 2, got {self.stages}")
        if len(self.widths) != self.stages:
            raise ConfigError(
                f"widths {self.widths} must list one entry per stage ({self.stages})"
            )
        if any(w < 4 or w % 4 for w in self.widths):
            raise ConfigError(f"stage widths must be positive multiples of 4, got {self.widths}")
        if self.in_channels < 1:
            raise ConfigError(f"in_channels must be >= 1, got {self.in_channels}")
        if len(self.patch_sizes) != 2 or any(p < 1 for p in self.patch_sizes):
            raise ConfigError(f"patch_sizes must be two positive ints, got {self.patch_sizes}")
        if len(self.dilations) != 4 or any(d < 1 for d in self.dilations):
            raise ConfigError(f"dilations must be four positive ints, got {self.dilations}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if len(self.loss_weights) != self.stages:
            raise ConfigError(
                f"loss_weights needs one weight per scale ({self.stages}), "
                f"got {len(self.loss_weights)}"
            )
        if any(w <= 0 for w in self.loss_weights):
            raise ConfigError("loss_weights must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "NetworkConfig":
        known = {f: raw[f] for f in cls.__dataclass_fields__ if f in raw}
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown network config keys: {sorted(unknown)}")
        for key in ("widths", "patch_sizes", "dilations", "loss_weights"):
            if key in known:
                known[key] = tuple(known[key])
        cfg = cls(**known)
        cfg.validate()
        return cfg


class DoubleConv(Module):
    """Two 3x3 convolution + batch norm + ReLU pairs (ablation stand-in)."""

    def __init__(self, in_channels: int, out_channels: int, *, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, padding=1, rng=rng)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm2d(out_channels)

    def forward(
        self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None
    ) -> Tensor:
        x = relu(self.bn1(self.conv1(x), train))
        return relu(self.bn2(self.conv2(x), train))

    __call__ = forward

    def macs(self, h: int, w: int) -> int:
        return (
            self.conv1.macs(h, w)
            + self.bn1.macs(h, w)
            + self.conv2.macs(h, w)
            + self.bn2.macs(h, w)
        )


class Network(Module):
    def __init__(self, config: NetworkConfig, seed: int):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        stages = config.stages
        widths = config.widths

        def stage_block(in_c: int, out_c: int) -> Module:
            if config.use_ppa:
                return PPA(
                    in_c,
                    out_c,
                    patch_sizes=config.patch_sizes,
                    dropout_rate=config.dropout,
                    rng=rng,
                )
            return DoubleConv(in_c, out_c, rng=rng)

        self.encoders = ModuleList(
            stage_block(config.in_channels if s == 0 else widths[s - 1], widths[s])
            for s in range(stages)
        )
        self.bottleneck = (
            MDCR(widths[-1], config.dilations, rng=rng) if config.use_mdcr else None
        )
        self.ups = ModuleList(
            ConvTranspose2d(widths[s + 1], widths[s], rng=rng) for s in range(stages - 1)
        )
        self.fusers = (
            ModuleList(
                DASI(
                    widths[s],
                    fine_channels=widths[s - 1] if s > 0 else None,
                    context_channels=widths[s + 1],
                    rng=rng,
                )
                for s in range(stages - 1)
            )
            if config.use_dasi
            else None
        )
        self.decoders = ModuleList(
            stage_block(2 * widths[s], widths[s]) for s in range(stages - 1)
        )
        self.heads = ModuleList(Conv2d(widths[s], 1, 1, rng=rng) for s in range(stages))

    def _check_input(self, x: Tensor) -> None:
        if x.data.ndim != 4:
            raise ShapeError(f"network input must be rank 4, got {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"network expects {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        factor = 1 << (self.config.stages - 1)
        if x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeError(
                f"spatial extents {x.shape[2]}x{x.shape[3]} must be divisible by {factor}"
            )

    def forward(
        self, x: Tensor, train: bool = False, rng: np.random.Generator | None = None
    ) -> list[Tensor]:
        """Return one logit map per scale at full input resolution, finest
        (stage 0) first; outputs are pre-sigmoid."""
        self._check_input(x)
        stages = self.config.stages
        height, width = x.shape[2], x.shape[3]
        feats: list[Tensor] = []
        cur = x
        for s in range(stages):
            feat = self.encoders[s](cur, train=train, rng=rng)
            feats.append(feat)
            if s < stages - 1:
                cur = max_pool2d(feat)
        top = feats[-1]
        if self.bottleneck is not None:
            top = self.bottleneck(top, train=train)
        decoded: list[Tensor] = [None] * stages  # type: ignore[list-item]
        decoded[-1] = top
        for s in range(stages - 2, -1, -1):
            up = self.ups[s](decoded[s + 1])
            if self.fusers is not None:
                fine = feats[s - 1] if s > 0 else None
                skip = self.fusers[s](feats[s], fine, feats[s + 1], train=train)
            else:
                skip = feats[s]
            decoded[s] = self.decoders[s](concat([up, skip], 1), train=train, rng=rng)
        return [
            bilinear_resize(self.heads[s](decoded[s]), height, width) for s in range(stages)
        ]

    __call__ = forward

    def layer_report(self, height: int, width: int) -> list[tuple[str, int, int]]:
        """Per-component (name, parameter count, multiply-accumulate count)
        rows for one sample at the given input resolution.

        Convolutions, linear maps and batch norms are counted; pooling,
        resampling, activations and elementwise gates are not.
        """
        factor = 1 << (self.config.stages - 1)
        if height % factor or width % factor:
            raise ShapeError(f"{height}x{width} must be divisible by {factor}")
        stages = self.config.stages
        res = [(height >> s, width >> s) for s in range(stages)]
        rows: list[tuple[str, int, int]] = []
        for s in range(stages):
            block = self.encoders[s]
            rows.append((f"encoder{s}", block.param_count(), block.macs(*res[s])))
        if self.bottleneck is not None:
            rows.append(
                ("bottleneck", self.bottleneck.param_count(), self.bottleneck.macs(*res[-1]))
            )
        for s in range(stages - 1):
            up = self.ups[s]
            rows.append((f"up{s}", up.param_count(), up.macs(*res[s])))
            if self.fusers is not None:
                fuser = self.fusers[s]
                rows.append((f"skip_fuse{s}", fuser.param_count(), fuser.macs(*res[s])))
            block = self.decoders[s]
            rows.append((f"decoder{s}", block.param_count(), block.macs(*res[s])))
        for s in range(stages):
            head = self.heads[s]
            rows.append((f"head{s}", head.param_count(), head.macs(*res[s])))
        return rows


def build_network(config: NetworkConfig, seed: int) -> Network:
    """Construct a network with weights drawn deterministically from ``seed``."""
    return Network(config, seed)


def count_params_macs(
    network: Network, height: int, width: int
) -> tuple[int, int, list[tuple[str, int, int]]]:
    """Total trainable parameters and per-sample MACs at one resolution."""
    rows = network.layer_report(height, width)
    params = network.param_count()
    macs = sum(row[2] for row in rows)
    return params, macs, rows
