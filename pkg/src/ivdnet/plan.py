"""Symbolic wiring of the multi-stream encoder.

A plan lists, for every encoder layer and every stream, which earlier
feature maps are concatenated to form that layer's input. Nothing here
allocates weights; the model builder consumes the plan.

References are ``(stream, layer)`` pairs, both 1-based. Layer 0 denotes the
raw modality image of a stream. The bridge is addressed as layer ``L + 1``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

PLAIN = "plain"
DENSE_WITHIN_STREAM = "dense_within_stream"
HYPER_DENSE = "hyper_dense"
MODES = (PLAIN, DENSE_WITHIN_STREAM, HYPER_DENSE)

Ref = tuple[int, int]


def permutation_for(stream: int, layer: int, sources: Sequence, num_streams: int) -> list:
    """Reorder interleaved per-layer blocks for one stream.

    ``sources`` is laid out as consecutive blocks of ``num_streams`` items,
    one block per source layer. Inside every block the stream order is
    rotated so that ``stream`` comes first, i.e. stream 2 of 2 sees
    ``[x2, x1, ...]``. ``layer`` is accepted for symmetry with the per-layer
    notation; the rotation does not depend on it.
    """
    del layer
    if num_streams < 1:
        raise ValueError(f"num_streams must be >= 1, got {num_streams}")
    if len(sources) % num_streams:
        raise ValueError(
            f"{len(sources)} sources do not split into blocks of {num_streams}"
        )
    shift = (stream - 1) % num_streams
    out = []
    for start in range(0, len(sources), num_streams):
        block = list(sources[start:start + num_streams])
        out.extend(block[shift:] + block[:shift])
    return out


@dataclass(frozen=True)
class ConnectivityPlan:
    num_streams: int
    growth: tuple[int, ...]
    mode: str
    # per_layer_inputs[l - 1][s - 1] feeds layer l of stream s, l = 1..L
    per_layer_inputs: tuple[tuple[tuple[Ref, ...], ...], ...]
    bridge_inputs: tuple[Ref, ...]
    raw_channels: int = 1
    permute_streams: bool = True

    @property
    def num_layers(self) -> int:
        return len(self.growth)

    def channels_of(self, ref: Ref) -> int:
        _, layer = ref
        return self.raw_channels if layer == 0 else self.growth[layer - 1]

    def inputs(self, layer: int, stream: int) -> tuple[Ref, ...]:
        self._check(layer, stream)
        if layer == self.num_layers + 1:
            return self.bridge_inputs
        return self.per_layer_inputs[layer - 1][stream - 1]

    def _check(self, layer: int, stream: int) -> None:
        if not 1 <= layer <= self.num_layers + 1:
            raise IndexError(f"layer {layer} outside 1..{self.num_layers + 1}")
        if not 1 <= stream <= self.num_streams:
            raise IndexError(f"stream {stream} outside 1..{self.num_streams}")

    def rows(self) -> list[dict]:
        rows = []
        for layer in range(1, self.num_layers + 2):
            is_bridge = layer == self.num_layers + 1
            streams = [1] if is_bridge else range(1, self.num_streams + 1)
            for stream in streams:
                refs = self.inputs(layer, stream)
                rows.append({
                    "layer": "bridge" if is_bridge else layer,
                    "stream": "all" if is_bridge else stream,
                    "inputs": [list(r) for r in refs],
                    "in_channels": input_channels(self, layer, stream),
                    "out_channels": None if is_bridge else self.growth[layer - 1],
                })
        return rows

    def to_json(self) -> str:
        return json.dumps({
            "num_streams": self.num_streams,
            "growth": list(self.growth),
            "mode": self.mode,
            "raw_channels": self.raw_channels,
            "permute_streams": self.permute_streams,
            "layers": self.rows(),
        }, indent=2)

    def format_table(self) -> str:
        lines = [f"{'layer':>6} {'stream':>6} {'in_ch':>6} {'out_ch':>6}  inputs"]
        for row in self.rows():
            refs = " ".join(f"x{l}^{s}" for s, l in row["inputs"])
            out = "-" if row["out_channels"] is None else row["out_channels"]
            lines.append(
                f"{row['layer']!s:>6} {row['stream']!s:>6} "
                f"{row['in_channels']:>6} {out!s:>6}  {refs}"
            )
        return "\n".join(lines)


def _sources_before(layer: int, stream: int, num_streams: int, mode: str) -> list[Ref]:
    # most recent layer first, streams interleaved inside each layer block
    if mode == PLAIN:
        return [(stream, layer - 1)]
    if mode == DENSE_WITHIN_STREAM:
        return [(stream, k) for k in range(layer - 1, 0, -1)]
    return [(s, k) for k in range(layer - 1, 0, -1) for s in range(1, num_streams + 1)]


def build_plan(
    num_streams: int,
    growth: Sequence[int],
    mode: str = HYPER_DENSE,
    raw_channels: int = 1,
    permute_streams: bool = True,
) -> ConnectivityPlan:
    if num_streams < 1:
        raise ValueError(f"num_streams must be >= 1, got {num_streams}")
    growth = tuple(int(c) for c in growth)
    if not growth:
        raise ValueError("growth must list at least one layer")
    if any(c < 1 for c in growth):
        raise ValueError(f"growth entries must be >= 1, got {growth}")
    if mode not in MODES:
        raise ValueError(f"unknown connectivity mode {mode!r}; expected one of {MODES}")
    if raw_channels < 1:
        raise ValueError(f"raw_channels must be >= 1, got {raw_channels}")

    layers = []
    for layer in range(1, len(growth) + 1):
        per_stream = []
        for stream in range(1, num_streams + 1):
            if layer == 1:
                refs = [(stream, 0)]
            else:
                refs = _sources_before(layer, stream, num_streams, mode)
                if mode == HYPER_DENSE and permute_streams:
                    refs = permutation_for(stream, layer, refs, num_streams)
            per_stream.append(tuple(refs))
        layers.append(tuple(per_stream))

    bridge_layer = len(growth) + 1
    bridge = []
    if mode == HYPER_DENSE:
        bridge = _sources_before(bridge_layer, 1, num_streams, mode)
    else:
        for stream in range(1, num_streams + 1):
            bridge.extend(_sources_before(bridge_layer, stream, num_streams, mode))

    return ConnectivityPlan(
        num_streams=num_streams,
        growth=growth,
        mode=mode,
        per_layer_inputs=tuple(layers),
        bridge_inputs=tuple(bridge),
        raw_channels=raw_channels,
        permute_streams=permute_streams,
    )


def input_channels(plan: ConnectivityPlan, layer: int, stream: int) -> int:
    """Channel count of the concatenated input of ``layer`` in ``stream``.

    ``layer == L + 1`` gives the bridge input, which is shared by all streams.
    """
    return sum(plan.channels_of(ref) for ref in plan.inputs(layer, stream))
