import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from revcd.rng import RngState, dropout_mask


class TestDeterminism:
    def test_same_seed_counter_identical_draws(self):
        a = RngState(seed=42).normal((5, 3))
        b = RngState(seed=42).normal((5, 3))
        np.testing.assert_array_equal(a, b)

    def test_counter_advances_per_draw(self):
        rng = RngState(seed=1)
        assert rng.counter == 0
        rng.normal((2,))
        assert rng.counter == 1
        rng.uniform((2,))
        assert rng.counter == 2

    def test_different_counters_differ(self):
        rng = RngState(seed=3)
        a = rng.normal((100,))
        b = rng.normal((100,))
        assert not np.array_equal(a, b)

    def test_replay_from_state(self):
        rng = RngState(seed=9)
        rng.normal((4,))
        snapshot = rng.state()
        a = rng.normal((8,))
        b = RngState.from_state(snapshot).normal((8,))
        np.testing.assert_array_equal(a, b)

    def test_state_roundtrip_json_safe(self):
        state = RngState(seed=7, counter=11).state()
        assert state == {"seed": 7, "counter": 11}
        assert all(isinstance(v, int) for v in state.values())


class TestDistributions:
    def test_normal_moments(self):
        draws = RngState(seed=0).normal((1_000_000,))
        assert abs(draws.mean()) <= 0.01
        assert abs(draws.var() - 1.0) <= 0.01

    def test_uniform_range_and_mean(self):
        draws = RngState(seed=0).uniform((100_000,))
        assert draws.min() >= 0.0 and draws.max() < 1.0
        assert abs(draws.mean() - 0.5) < 0.01

    def test_integers_inclusive_endpoints(self):
        draws = RngState(seed=0).integers(1, 5, (10_000,))
        assert set(np.unique(draws)) == {1, 2, 3, 4, 5}

    def test_permutation_is_permutation(self):
        perm = RngState(seed=0).permutation(50)
        assert sorted(perm.tolist()) == list(range(50))


class TestSpawn:
    def test_spawn_deterministic(self):
        assert RngState(5).spawn(1).seed == RngState(5).spawn(1).seed

    def test_spawn_streams_independent(self):
        base = RngState(5)
        a = base.spawn(1)
        b = base.spawn(2)
        assert a.seed != b.seed
        assert not np.array_equal(a.normal((50,)), b.normal((50,)))

    def test_spawn_does_not_touch_parent_counter(self):
        base = RngState(5)
        base.spawn(1)
        assert base.counter == 0


class TestDropoutMask:
    def test_p_zero_all_ones(self):
        mask = dropout_mask((4, 4), 0.0, RngState(0))
        np.testing.assert_array_equal(mask, np.ones((4, 4)))

    def test_values_are_zero_or_inverse_keep(self):
        mask = dropout_mask((1000,), 0.25, RngState(0))
        assert set(np.unique(mask)) <= {0.0, 1.0 / 0.75}

    def test_expectation_close_to_one(self):
        mask = dropout_mask((1_000_000,), 0.5, RngState(0))
        assert 0.99 <= mask.mean() <= 1.01

    def test_same_seed_counter_same_mask(self):
        a = dropout_mask((64,), 0.3, RngState(8))
        b = dropout_mask((64,), 0.3, RngState(8))
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("p", [1.0, 1.5, -0.1])
    def test_invalid_rate_rejected(self, p):
        with pytest.raises(ValueError):
            dropout_mask((4,), p, RngState(0))

    @given(p=st.floats(min_value=0.0, max_value=0.9),
           seed=st.integers(min_value=0, max_value=2**32))
    @settings(max_examples=30, deadline=None)
    def test_mask_mean_unbiased_property(self, p, seed):
        mask = dropout_mask((4096,), p, RngState(seed))
        assert abs(mask.mean() - 1.0) < 0.2 or p == 0.0
