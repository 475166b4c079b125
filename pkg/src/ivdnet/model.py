"""Multi-stream UNet with hyper-dense encoder and the early/late fusion baselines."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .blocks import VARIANTS, ConvBNReLU, ExtendedInception
from .plan import HYPER_DENSE, PLAIN, ConnectivityPlan, build_plan, input_channels

EARLY = "early"
LATE = "late"
FUSIONS = (EARLY, LATE, HYPER_DENSE)


@dataclass
class ModelConfig:
    num_streams: int = 4
    input_size: int = 256
    growth: tuple[int, ...] = (32, 64, 128, 256)
    bridge_channels: int = 512
    fusion: str = HYPER_DENSE
    block_variant: str = "standard"
    dilation_rates: tuple[int, int] = (2, 4)
    num_classes: int = 2
    permute_streams: bool = True
    seed: int = 0

    def __post_init__(self):
        self.growth = tuple(int(c) for c in self.growth)
        self.dilation_rates = tuple(int(d) for d in self.dilation_rates)
        self.validate()

    def validate(self):
        if self.num_streams < 1:
            raise ValueError(f"num_streams must be >= 1, got {self.num_streams}")
        if not self.growth or any(c < 1 for c in self.growth):
            raise ValueError(f"growth must be non-empty and positive, got {self.growth}")
        if self.bridge_channels < 1:
            raise ValueError(f"bridge_channels must be >= 1, got {self.bridge_channels}")
        factor = 2 ** len(self.growth)
        if self.input_size < factor or self.input_size % factor:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by {factor} "
                f"for {len(self.growth)} pooling levels"
            )
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}; expected one of {FUSIONS}")
        if self.block_variant not in VARIANTS:
            raise ValueError(f"unknown block_variant {self.block_variant!r}")
        if len(self.dilation_rates) != 2:
            raise ValueError("dilation_rates must be a pair")
        d0, d1 = self.dilation_rates
        if d0 == d1 or min(d0, d1) < 2:
            raise ValueError(f"dilation rates must be distinct and >= 2, got {self.dilation_rates}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["growth"] = list(self.growth)
        d["dilation_rates"] = list(self.dilation_rates)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def encoder_plan(config: ModelConfig) -> ConnectivityPlan:
    if config.fusion == EARLY:
        return build_plan(1, config.growth, PLAIN, raw_channels=config.num_streams)
    if config.fusion == LATE:
        return build_plan(config.num_streams, config.growth, PLAIN)
    return build_plan(config.num_streams, config.growth, HYPER_DENSE,
                      permute_streams=config.permute_streams)


class IVDNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.plan = plan = encoder_plan(config)
        block_kw = dict(variant=config.block_variant, dilation_rates=config.dilation_rates)
        L = plan.num_layers

        self.encoder = nn.ModuleList()
        for stream in range(1, plan.num_streams + 1):
            layers = nn.ModuleList()
            for layer in range(1, L + 1):
                c_in = input_channels(plan, layer, stream)
                c_out = config.growth[layer - 1]
                if layer == 1:
                    layers.append(ConvBNReLU(c_in, c_out, 3))
                else:
                    layers.append(ExtendedInception(c_in, c_out, **block_kw))
            self.encoder.append(layers)

        self.bridge = ExtendedInception(input_channels(plan, L + 1, 1),
                                        config.bridge_channels, **block_kw)

        self.up = nn.ModuleList()
        self.decoder = nn.ModuleList()
        prev = config.bridge_channels
        for level in range(L, 0, -1):
            c = config.growth[level - 1]
            self.up.append(nn.ConvTranspose2d(prev, c, kernel_size=2, stride=2, bias=False))
            self.decoder.append(ExtendedInception(c, c, **block_kw))
            prev = c
        self.head = nn.Conv2d(prev, config.num_classes, kernel_size=1)

        self._needed_after = self._liveness()
        self.reset_parameters(config.seed)

    def _liveness(self) -> list[set]:
        # refs still consumed by some later layer (or the bridge) after layer l
        plan = self.plan
        L = plan.num_layers
        needed = []
        for layer in range(1, L + 1):
            refs = set(plan.bridge_inputs)
            for later in range(layer + 1, L + 1):
                for s in range(1, plan.num_streams + 1):
                    refs.update(plan.inputs(later, s))
            needed.append(refs)
        return needed

    def reset_parameters(self, seed: int = 0):
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                    nn.init.kaiming_normal_(m.weight, mode="fan_in",
                                            nonlinearity="relu", generator=gen)
                    if m.bias is not None:
                        m.bias.zero_()
                elif isinstance(m, nn.BatchNorm2d):
                    m.reset_parameters()

    def _split_inputs(self, inputs) -> list[torch.Tensor]:
        M = self.config.num_streams
        if isinstance(inputs, torch.Tensor):
            if inputs.ndim != 4 or inputs.shape[1] != M:
                raise ValueError(
                    f"expected a (batch, {M}, H, W) tensor, got {tuple(inputs.shape)}"
                )
            inputs = list(inputs.split(1, dim=1))
        inputs = list(inputs)
        if len(inputs) != M:
            raise ValueError(f"expected {M} modality inputs, got {len(inputs)}")
        shape = inputs[0].shape
        for i, x in enumerate(inputs):
            if x.ndim != 4 or x.shape[1] != 1:
                raise ValueError(f"modality {i} must be (batch, 1, H, W), got {tuple(x.shape)}")
            if x.shape != shape:
                raise ValueError(
                    f"modality {i} shape {tuple(x.shape)} differs from {tuple(shape)}"
                )
        factor = 2 ** self.plan.num_layers
        if shape[-1] % factor or shape[-2] % factor:
            raise ValueError(f"spatial size {tuple(shape[-2:])} not divisible by {factor}")
        return inputs

    def logits(self, inputs, trace: list | None = None) -> torch.Tensor:
        plan = self.plan
        L = plan.num_layers
        xs = self._split_inputs(inputs)
        if self.config.fusion == EARLY:
            xs = [torch.cat(xs, dim=1)]

        def record(name, stream, x_in, x_out):
            if trace is not None:
                trace.append((name, stream, tuple(x_in.shape), tuple(x_out.shape)))

        feats = {(s + 1, 0): x for s, x in enumerate(xs)}
        skips = []
        for layer in range(1, L + 1):
            skip = None
            new = {}
            for s in range(1, plan.num_streams + 1):
                x_in = torch.cat([feats[r] for r in plan.inputs(layer, s)], dim=1)
                out = self.encoder[s - 1][layer - 1](x_in)
                record("Conv Layer 1" if layer == 1 else f"Layer {layer}", s, x_in, out)
                new[(s, layer)] = out
                skip = out if skip is None else skip + out
            skips.append(skip)
            feats.update(new)
            live = self._needed_after[layer - 1]
            pooled = {}
            for ref, x in feats.items():
                if ref in live:
                    pooled[ref] = F.max_pool2d(x, 2)
                    if ref in new:
                        record(f"Max-pooling {layer}", ref[0], x, pooled[ref])
            feats = pooled

        x_in = torch.cat([feats[r] for r in plan.bridge_inputs], dim=1)
        x = self.bridge(x_in)
        record("Bridge", 0, x_in, x)

        for i, (up, block) in enumerate(zip(self.up, self.decoder)):
            y = up(x)
            record(f"Up-sample {i + 1}", 0, x, y)
            y = y + skips[L - 1 - i]
            x = block(y)
            record(f"Layer {L + 1 + i}", 0, y, x)

        out = self.head(x)
        record("Softmax layer", 0, x, out)
        return out

    def forward(self, inputs, trace: list | None = None) -> torch.Tensor:
        return torch.softmax(self.logits(inputs, trace), dim=1)


def build_model(config: ModelConfig) -> IVDNet:
    config.validate()
    return IVDNet(config)


def forward(model: IVDNet, inputs: Sequence[torch.Tensor] | torch.Tensor) -> torch.Tensor:
    return model(inputs)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def first_layer_weights(model: IVDNet) -> list[torch.Tensor]:
    """Weight tensor of the first convolution of every encoder stream."""
    return [stream[0][0].weight for stream in model.encoder]
