"""Flow-level statistical features and normalized network input matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flows import Flow
from .sampling import SampledFlow

MAX_LENGTH_BYTES = 1434.0
MAX_IAT_SECONDS = 1.0

DIRECTIONS = ("fwd", "bwd", "both")
QUANTITIES = ("len", "iat")
STATISTICS = ("min", "max", "mean", "std")

# canonical order: index = dir*8 + qty*4 + stat
FEATURE_NAMES = tuple(f"f_{d}_{q}_{s}"
                      for d in DIRECTIONS for q in QUANTITIES
                      for s in STATISTICS)
NUM_FEATURES = len(FEATURE_NAMES)
FEATURE_ORDER_VERSION = 1


class EmptyFlowError(ValueError):
    pass


class InconsistentSampleError(ValueError):
    pass


def _block(values: np.ndarray) -> np.ndarray:
    if values.size == 0:
        return np.zeros(4)
    return np.array([values.min(), values.max(), values.mean(),
                     values.std()])  # population std


def stat_features(flow: Flow) -> np.ndarray:
    """24 statistics: {fwd, bwd, both} x {length, IAT} x {min, max, mean, std}.

    IATs are differenced within each direction subset; subsets with fewer than
    two packets get all-zero IAT statistics. Units are bytes and seconds.
    """
    if not flow.packets:
        raise EmptyFlowError(f"flow {flow.id} has no packets")
    times = np.array([p.rel_time for p in flow.packets])
    signed = np.array([p.signed_length for p in flow.packets], dtype=float)
    lengths = np.abs(signed)
    out = np.empty(NUM_FEATURES)
    for d, mask in enumerate((signed > 0, signed < 0,
                              np.ones_like(signed, dtype=bool))):
        sub_len = lengths[mask]
        sub_iat = np.diff(times[mask])
        out[d * 8:d * 8 + 4] = _block(sub_len)
        out[d * 8 + 4:d * 8 + 8] = _block(sub_iat) if sub_iat.size else np.zeros(4)
    return out


def normalize_targets(stats: np.ndarray) -> np.ndarray:
    """Scale length statistics by the 1434 B cap; IATs stay in seconds."""
    out = np.array(stats, dtype=float)
    for d in range(3):
        out[d * 8:d * 8 + 4] /= MAX_LENGTH_BYTES
    return out


@dataclass(frozen=True)
class InputMatrix:
    data: np.ndarray     # shape (2, window): row 0 IATs, row 1 signed lengths
    valid_count: int

    @property
    def window(self) -> int:
        return self.data.shape[1]


def input_matrix(sf: SampledFlow, source: Flow,
                 window: int | None = None) -> InputMatrix:
    """Render a sampled flow as the normalized 2-channel network input.

    Channel 0: inter-arrival times of the sampled packets, clamped at 1 s,
    first slot 0. Channel 1: signed length / 1434, clamped to [-1, 1].
    Slots past the last sampled packet stay zero (padding).
    """
    if window is None:
        window = sf.window
    data = np.zeros((2, window))
    n = len(sf.indices)
    if n > window:
        raise InconsistentSampleError("more samples than window slots")
    flow_len = len(source.packets)
    prev_t = None
    for k, j in enumerate(sf.indices):
        if j >= flow_len:
            raise InconsistentSampleError(
                f"sample index {j} out of range for flow of {flow_len} packets")
        pkt = source.packets[j]
        data[1, k] = np.clip(pkt.signed_length / MAX_LENGTH_BYTES, -1.0, 1.0)
        if k > 0:
            data[0, k] = min(pkt.rel_time - prev_t, MAX_IAT_SECONDS)
        prev_t = pkt.rel_time
    return InputMatrix(data=data, valid_count=n)
