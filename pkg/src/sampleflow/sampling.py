"""Packet index sampling: fixed step, random, incremental; plus augmentation."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Union

import numpy as np

from .flows import Flow

DEFAULT_WINDOW = 45
DEFAULT_MAX_COPIES = 100


class InvalidStartError(ValueError):
    pass


@dataclass(frozen=True)
class Fixed:
    step: int

    def __post_init__(self):
        if self.step < 1:
            raise ValueError("fixed step must be >= 1")


@dataclass(frozen=True)
class Random:
    probability: float

    def __post_init__(self):
        if not 0.0 < self.probability <= 1.0:
            raise ValueError("probability must be in (0, 1]")


@dataclass(frozen=True)
class Incremental:
    initial_step: int
    growth: float        # step multiplier applied after each stage
    stage_len: int       # samples emitted per stage

    def __post_init__(self):
        if self.initial_step < 1:
            raise ValueError("initial step must be >= 1")
        if self.growth < 1.0:
            raise ValueError("growth factor must be >= 1")
        if self.stage_len < 1:
            raise ValueError("stage length must be >= 1")


SamplingSpec = Union[Fixed, Random, Incremental]


def spec_to_dict(spec: SamplingSpec) -> dict:
    if isinstance(spec, Fixed):
        return {"method": "fixed", "l": spec.step}
    if isinstance(spec, Random):
        return {"method": "random", "p": spec.probability}
    return {"method": "incremental", "l0": spec.initial_step,
            "alpha": spec.growth, "beta": spec.stage_len}


def spec_from_dict(d: dict) -> SamplingSpec:
    method = d["method"]
    if method == "fixed":
        return Fixed(int(d["l"]))
    if method == "random":
        return Random(float(d["p"]))
    if method == "incremental":
        return Incremental(int(d["l0"]), float(d["alpha"]), int(d["beta"]))
    raise ValueError(f"unknown sampling method {method!r}")


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def sample_indices(spec: SamplingSpec, start: int, flow_len: int, window: int,
                   rng: np.random.Generator | None = None) -> list[int]:
    """Packet indices selected by the sampling strategy, at most window many."""
    if start < 0 or start >= flow_len:
        raise InvalidStartError(f"start {start} out of range for flow of "
                                f"{flow_len} packets")
    if window < 1:
        raise ValueError("window must be >= 1")
    if isinstance(spec, Fixed):
        return list(range(start, flow_len, spec.step))[:window]
    if isinstance(spec, Random):
        if rng is None:
            raise ValueError("random sampling requires an rng")
        out = []
        for i in range(start, flow_len):
            if rng.random() < spec.probability:
                out.append(i)
                if len(out) == window:
                    break
        return out
    # incremental: real-valued step and position, round-half-up on emission
    out = []
    step = float(spec.initial_step)
    pos = float(start)
    emitted_in_stage = 0
    while len(out) < window:
        idx = _round_half_up(pos)
        if idx >= flow_len:
            break
        out.append(idx)
        emitted_in_stage += 1
        if emitted_in_stage == spec.stage_len:
            step *= spec.growth
            emitted_in_stage = 0
        pos += step
    return out


def window_span(spec: SamplingSpec, window: int) -> int:
    """Packets a full window consumes from its start (fixed/incremental only)."""
    if isinstance(spec, Fixed):
        return (window - 1) * spec.step + 1
    if isinstance(spec, Incremental):
        idx = sample_indices(spec, 0, flow_len=1 << 62, window=window)
        return idx[-1] + 1
    raise TypeError("window_span is undefined for random sampling")


@dataclass(frozen=True)
class SampledFlow:
    flow_id: str
    indices: tuple[int, ...]
    window: int
    label: str | None = None

    def __post_init__(self):
        if len(self.indices) > self.window:
            raise ValueError("more indices than window slots")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ValueError("indices must be strictly increasing")


def augment(flow: Flow, spec: SamplingSpec, window: int = DEFAULT_WINDOW,
            max_copies: int = DEFAULT_MAX_COPIES,
            rng: np.random.Generator | None = None) -> list[SampledFlow]:
    """Sample one flow up to max_copies times.

    Random restarts at index 0 with fresh randomness each copy; fixed and
    incremental shift the start offset over an even schedule instead, since
    re-sampling from the start would repeat the same indices.
    """
    if max_copies < 1:
        raise ValueError("max_copies must be >= 1")
    flow_len = len(flow.packets)

    def make(indices: list[int]) -> SampledFlow:
        return SampledFlow(flow_id=flow.id, indices=tuple(indices),
                           window=window, label=flow.label)

    if isinstance(spec, Random):
        if rng is None:
            raise ValueError("random sampling requires an rng")
        return [make(sample_indices(spec, 0, flow_len, window, rng))
                for _ in range(max_copies)]

    span = window_span(spec, window)
    if span > flow_len:
        return [make(sample_indices(spec, 0, flow_len, window))]
    delta = max(1, (flow_len - span) // max_copies)
    copies = []
    start = 0
    while start + span <= flow_len and len(copies) < max_copies:
        copies.append(make(sample_indices(spec, start, flow_len, window)))
        start += delta
    return copies


def derive_rng(master_seed: int, flow_id: str) -> np.random.Generator:
    """Stable per-flow generator so parallel runs stay reproducible."""
    digest = hashlib.sha256(f"{master_seed}:{flow_id}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def write_sampled(samples: Iterable[tuple[SampledFlow, Flow]],
                  sink: Union[str, Path, IO[str]]) -> None:
    """Sampled-flow file: one JSON record per copy with realized packets."""
    from .flows import _open_for

    fh, owned = _open_for(sink, "w")
    try:
        fh.write(json.dumps({"v": 1, "format": "sampled"}) + "\n")
        for sf, flow in samples:
            pkts = [[flow.packets[i].rel_time, flow.packets[i].signed_length]
                    for i in sf.indices]
            fh.write(json.dumps({
                "flow_id": sf.flow_id,
                "label": sf.label,
                "indices": list(sf.indices),
                "window": sf.window,
                "pkts": pkts,
            }) + "\n")
    finally:
        if owned:
            fh.close()
