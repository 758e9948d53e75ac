import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fedsparsify as fs


DEFAULT = fs.SparsitySchedule(0.0, 0.95, total_rounds=40, start_round=1, frequency=1, exponent=3.0)


class TestScheduleValues:
    def test_start_round_gives_initial_sparsity_exactly(self):
        assert fs.sparsity_at_round(DEFAULT, 1) == 0.0

    def test_final_round_gives_final_sparsity_exactly(self):
        assert fs.sparsity_at_round(DEFAULT, 40) == 0.95

    def test_midpoint_matches_direct_arithmetic(self):
        # oracle: direct evaluation of the polynomial at t=20
        expected = 0.95 + (0.0 - 0.95) * (1.0 - (20 - 1) / (40 - 1)) ** 3
        assert expected == pytest.approx(0.8218791618199902, abs=1e-15)
        assert fs.sparsity_at_round(DEFAULT, 20) == pytest.approx(expected, abs=1e-12)

    def test_beyond_final_round_stays_final(self):
        assert fs.sparsity_at_round(DEFAULT, 41) == 0.95
        assert fs.sparsity_at_round(DEFAULT, 1000) == 0.95

    def test_round_zero_rejected(self):
        with pytest.raises(ValueError, match="round index"):
            fs.sparsity_at_round(DEFAULT, 0)

    def test_frequency_holds_value_between_multiples(self):
        sched = fs.SparsitySchedule(0.0, 0.9, total_rounds=20, frequency=5)
        for t in range(5, 10):
            assert fs.sparsity_at_round(sched, t) == fs.sparsity_at_round(sched, 5)
        assert fs.sparsity_at_round(sched, 10) > fs.sparsity_at_round(sched, 9)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            fs.SparsitySchedule(0.5, 0.3, 40)
        with pytest.raises(ValueError):
            fs.SparsitySchedule(0.0, 0.9, 40, start_round=40)
        with pytest.raises(ValueError):
            fs.SparsitySchedule(0.0, 0.9, 40, frequency=0)


@settings(max_examples=60, deadline=None)
@given(
    s0=st.floats(0, 0.5),
    delta=st.floats(0, 0.5),
    total=st.integers(2, 200),
    freq=st.integers(1, 7),
    exponent=st.floats(0.5, 5),
    data=st.data(),
)
def test_schedule_monotone_and_pinned(s0, delta, total, freq, exponent, data):
    start = data.draw(st.integers(1, total - 1))
    sched = fs.SparsitySchedule(s0, s0 + delta, total, start, freq, exponent)
    values = [fs.sparsity_at_round(sched, t) for t in range(1, total + 1)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert all(s0 <= v <= s0 + delta for v in values)
    assert values[start - 1] == s0
    assert values[-1] == s0 + delta


class TestMagnitudeMask:
    def test_two_smallest_pruned(self):
        w = np.array([0.5, -0.1, 0.3, -0.8], dtype=np.float32)
        mask = fs.magnitude_mask(w, 0.5, fs.PruneMask.all_ones(4))
        assert mask.bits.tolist() == [True, False, False, True]
        assert mask.nonzero_count == 2

    def test_zero_sparsity_is_identity(self):
        prev = fs.PruneMask.all_ones(4)
        assert fs.magnitude_mask(np.ones(4, dtype=np.float32), 0.0, prev) == prev

    def test_tie_break_prefers_lower_index(self):
        w = np.ones(4, dtype=np.float32)
        mask = fs.magnitude_mask(w, 0.5, fs.PruneMask.all_ones(4))
        assert mask.bits.tolist() == [False, False, True, True]

    def test_resurrection_rejected(self):
        w = np.arange(1, 11, dtype=np.float32)
        dense = fs.PruneMask.all_ones(10)
        half = fs.magnitude_mask(w, 0.5, dense)
        with pytest.raises(ValueError, match="resurrect"):
            fs.magnitude_mask(w, 0.3, half)

    def test_previous_cleared_set_is_respected(self):
        # index 3 already pruned despite having the largest magnitude
        w = np.array([0.1, 0.2, 0.3, 9.9], dtype=np.float32)
        prev = fs.PruneMask(np.array([True, True, True, False]))
        mask = fs.magnitude_mask(w, 0.5, prev)
        assert mask.bits.tolist() == [False, True, True, False]

    def test_mask_bits_are_read_only(self):
        mask = fs.PruneMask.all_ones(3)
        with pytest.raises(ValueError):
            mask.bits[0] = False

    def test_protected_indices_never_pruned(self):
        w = np.array([0.1, 0.2, 0.3, 0.4], dtype=np.float32)
        protected = np.array([True, False, False, False])
        mask = fs.magnitude_mask(w, 0.5, fs.PruneMask.all_ones(4), protected=protected)
        assert mask.bits.tolist() == [True, False, False, True]

    def test_protection_can_make_target_unreachable(self):
        w = np.ones(4, dtype=np.float32)
        protected = np.array([True, True, True, False])
        with pytest.raises(ValueError, match="prunable"):
            fs.magnitude_mask(w, 0.75, fs.PruneMask.all_ones(4), protected=protected)

    def test_protected_from_spec_entries(self):
        spec = fs.ModelSpec((3,), (fs.Dense(3, 2), fs.Relu(), fs.Dense(2, 1)))
        from fedsparsify.nn import protected_indices

        prot = protected_indices(spec, names=("bias",))
        # layout: w0 (6), b0 (2), w2 (2), b2 (1)
        assert prot.tolist() == [False] * 6 + [True] * 2 + [False] * 2 + [True]


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(1, 300),
    sparsity=st.floats(0, 1),
    seed=st.integers(0, 2**16),
)
def test_mask_count_exactness_and_optimality(n, sparsity, seed):
    w = np.random.default_rng(seed).standard_normal(n).astype(np.float32)
    mask = fs.magnitude_mask(w, sparsity, fs.PruneMask.all_ones(n))
    assert mask.nonzero_count == n - math.floor(n * sparsity)
    cleared = np.abs(w[~mask.bits])
    kept = np.abs(w[mask.bits])
    if len(cleared) and len(kept):
        assert kept.min() >= cleared.max() or np.isclose(kept.min(), cleared.max())


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(4, 200),
    seed=st.integers(0, 2**16),
    levels=st.lists(st.floats(0, 1), min_size=2, max_size=6),
)
def test_mask_monotone_nesting(n, seed, levels):
    w = np.random.default_rng(seed).standard_normal(n).astype(np.float32)
    mask = fs.PruneMask.all_ones(n)
    for s in sorted(levels):
        new = fs.magnitude_mask(w, s, mask)
        assert np.all(new.bits <= mask.bits)  # cleared sets are nested
        mask = new


class TestApplyMask:
    def test_example(self):
        out = fs.apply_mask(
            np.array([1.5, -2.0], dtype=np.float32), fs.PruneMask(np.array([True, False]))
        )
        assert out.tolist() == [1.5, 0.0]

    def test_all_ones_identity(self):
        w = np.array([1.5, -2.0], dtype=np.float32)
        assert np.array_equal(fs.apply_mask(w, fs.PruneMask.all_ones(2)), w)

    def test_idempotent(self):
        w = np.random.default_rng(0).standard_normal(50).astype(np.float32)
        mask = fs.magnitude_mask(w, 0.4, fs.PruneMask.all_ones(50))
        once = fs.apply_mask(w, mask)
        assert np.array_equal(fs.apply_mask(once, mask), once)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            fs.apply_mask(np.ones(3, dtype=np.float32), fs.PruneMask.all_ones(2))
