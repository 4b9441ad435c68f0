import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sampleflow.flows import FiveTuple, Flow, PacketEvent
from sampleflow.sampling import (Fixed, Incremental, InvalidStartError, Random,
                                 SampledFlow, augment, derive_rng,
                                 sample_indices, spec_from_dict, spec_to_dict,
                                 window_span)


def rng(seed=0):
    return np.random.default_rng(seed)


def make_flow(n, fid="f", label=None):
    pkts = [PacketEvent(0.01 * i, 100 if i % 3 else -200) for i in range(n)]
    pkts[0] = PacketEvent(0.0, 100)
    return Flow(id=fid, five_tuple=FiveTuple("1.1.1.1", "2.2.2.2", 1, 2,
                                             "udp"),
                packets=pkts, label=label)


def simulate(spec, start, flow_len, window, seed=None):
    """Independent re-implementation of each sampling definition."""
    if isinstance(spec, Fixed):
        out = []
        i = start
        while i < flow_len and len(out) < window:
            out.append(i)
            i += spec.step
        return out
    if isinstance(spec, Random):
        gen = np.random.default_rng(seed)
        out = []
        i = start
        while i < flow_len and len(out) < window:
            if gen.random() < spec.probability:
                out.append(i)
            i += 1
        return out
    out = []
    step = float(spec.initial_step)
    pos = float(start)
    since_growth = 0
    while len(out) < window:
        idx = math.floor(pos + 0.5)
        if idx >= flow_len:
            break
        out.append(idx)
        since_growth += 1
        if since_growth == spec.stage_len:
            step *= spec.growth
            since_growth = 0
        pos += step
    return out


class TestSampleIndices:
    def test_fixed_step_22(self):
        idx = sample_indices(Fixed(22), 0, 2000, 45)
        assert idx == list(range(0, 45 * 22, 22))
        assert len(idx) == 45 and idx[-1] == 968
        assert all(b - a == 22 for a, b in zip(idx, idx[1:]))

    def test_incremental_hand_simulated(self):
        # 3 samples at step 2, then step 4 for three, then step 8
        idx = sample_indices(Incremental(2, 2.0, 3), 0, 100, 7)
        assert idx == [0, 2, 4, 8, 12, 16, 24]

    def test_random_p1_degenerates_to_prefix(self):
        idx = sample_indices(Random(1.0), 0, 100, 45, rng())
        assert idx == list(range(45))

    def test_invalid_start(self):
        with pytest.raises(InvalidStartError):
            sample_indices(Fixed(1), 100, 100, 45)

    def test_short_flow_partial_window(self):
        assert sample_indices(Fixed(10), 0, 25, 45) == [0, 10, 20]

    @pytest.mark.parametrize("case", range(200))
    def test_matches_independent_simulation(self, case):
        gen = rng(1000 + case)
        flow_len = int(gen.integers(1, 3000))
        start = int(gen.integers(0, flow_len))
        window = int(gen.integers(1, 80))
        kind = case % 3
        if kind == 0:
            spec = Fixed(int(gen.integers(1, 40)))
            assert sample_indices(spec, start, flow_len, window) == \
                simulate(spec, start, flow_len, window)
        elif kind == 1:
            spec = Incremental(int(gen.integers(1, 30)),
                               float(gen.uniform(1.0, 2.5)),
                               int(gen.integers(1, 15)))
            assert sample_indices(spec, start, flow_len, window) == \
                simulate(spec, start, flow_len, window)
        else:
            spec = Random(float(gen.uniform(0.01, 1.0)))
            seed = case
            got = sample_indices(spec, start, flow_len, window,
                                 np.random.default_rng(seed))
            assert got == simulate(spec, start, flow_len, window, seed)

    @given(st.integers(1, 30), st.integers(1, 12), st.integers(0, 50),
           st.integers(1, 60), st.integers(51, 2000))
    @settings(max_examples=200, deadline=None)
    def test_incremental_alpha1_equals_fixed(self, l0, beta, start, window,
                                             flow_len):
        fixed = sample_indices(Fixed(l0), start, flow_len, window)
        inc = sample_indices(Incremental(l0, 1.0, beta), start, flow_len,
                             window)
        assert fixed == inc

    @given(st.integers(0, 40), st.integers(41, 500), st.integers(1, 60),
           st.integers(0, 1000))
    @settings(max_examples=100, deadline=None)
    def test_random_p1_equals_fixed_l1(self, start, flow_len, window, seed):
        assert sample_indices(Random(1.0), start, flow_len, window,
                              np.random.default_rng(seed)) == \
            sample_indices(Fixed(1), start, flow_len, window)

    @given(st.integers(0, 100), st.integers(101, 2000), st.integers(1, 60),
           st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_strictly_increasing_and_bounded(self, start, flow_len, window,
                                             seed):
        gen = np.random.default_rng(seed)
        spec_choice = seed % 3
        spec = [Fixed(1 + seed % 25),
                Random(0.05 + (seed % 19) / 20),
                Incremental(1 + seed % 10, 1.0 + (seed % 7) / 4,
                            1 + seed % 8)][spec_choice]
        idx = sample_indices(spec, start, flow_len, window, gen)
        assert all(b > a for a, b in zip(idx, idx[1:]))
        assert all(0 <= i < flow_len for i in idx)
        assert len(idx) <= window

    def test_deterministic_for_same_seed(self):
        spec = Random(0.3)
        a = sample_indices(spec, 0, 500, 45, np.random.default_rng(7))
        b = sample_indices(spec, 0, 500, 45, np.random.default_rng(7))
        assert a == b

    def test_random_sample_rate_statistics(self):
        # fraction of scanned prefix sampled ~ p within 3 sigma binomial
        p = 0.1
        window = 45
        fractions = []
        gen = rng(5)
        for _ in range(200):
            idx = sample_indices(Random(p), 0, 100_000, window, gen)
            scanned = idx[-1] + 1
            fractions.append(len(idx) / scanned)
        n_scanned = window / p  # expected scan length per draw
        sigma = math.sqrt(p * (1 - p) / n_scanned) / math.sqrt(len(fractions))
        assert abs(np.mean(fractions) - p) < 3 * sigma + 0.01


class TestAugment:
    def test_fixed_offsets_cover_short_tail(self):
        copies = augment(make_flow(46), Fixed(1), window=45, max_copies=100)
        assert len(copies) == 2
        assert copies[0].indices[0] == 0
        assert copies[1].indices[0] == 1

    def test_random_always_max_copies(self):
        copies = augment(make_flow(120), Random(0.5), window=45,
                         max_copies=100, rng=rng())
        assert len(copies) == 100
        assert all(c.indices[0] < 20 for c in copies if c.indices)

    def test_single_copy(self):
        copies = augment(make_flow(2000), Fixed(22), window=45, max_copies=1)
        assert len(copies) == 1
        assert copies[0].indices[0] == 0

    def test_partial_window_when_flow_too_short(self):
        copies = augment(make_flow(100), Fixed(22), window=45, max_copies=100)
        assert len(copies) == 1
        assert len(copies[0].indices) == 5  # 0, 22, 44, 66, 88

    def test_copy_count_bounded(self):
        for n in (46, 100, 500, 5000):
            copies = augment(make_flow(n), Fixed(2), window=10, max_copies=30)
            assert 1 <= len(copies) <= 30

    def test_label_inherited(self):
        copies = augment(make_flow(200, label="web"), Fixed(4), window=45,
                         max_copies=3)
        assert all(c.label == "web" for c in copies)

    def test_incremental_offsets_distinct(self):
        flow = make_flow(1500)
        spec = Incremental(8, 1.2, 10)
        copies = augment(flow, spec, window=45, max_copies=100)
        starts = [c.indices[0] for c in copies]
        assert starts == sorted(set(starts))
        span = window_span(spec, 45)
        assert all(s + span <= 1500 for s in starts)


class TestSampledFlowInvariants:
    def test_rejects_decreasing_indices(self):
        with pytest.raises(ValueError):
            SampledFlow("f", (3, 2), 45)

    def test_rejects_overfull(self):
        with pytest.raises(ValueError):
            SampledFlow("f", (0, 1, 2), 2)


class TestSpecSerialization:
    @pytest.mark.parametrize("spec", [Fixed(22), Random(1 / 22),
                                      Incremental(22, 1.6, 10)])
    def test_roundtrip(self, spec):
        assert spec_from_dict(spec_to_dict(spec)) == spec

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            Fixed(0)
        with pytest.raises(ValueError):
            Random(0.0)
        with pytest.raises(ValueError):
            Incremental(1, 0.9, 1)


def test_derive_rng_stable_and_distinct():
    a = derive_rng(1, "flow-a").random(3)
    b = derive_rng(1, "flow-a").random(3)
    c = derive_rng(1, "flow-b").random(3)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
