"""Tests for the ADAM update, the learning-rate schedule and the random streams."""

import numpy as np
import pytest
from pydantic import ValidationError

from sympde.errors import NumericError, StructuralError
from sympde.optim import AdamState, LinearSchedule, adam_step
from sympde.rng import Stream, derive_seed, stream


class TestLinearSchedule:
    """Linear decay between two rates."""

    def test_endpoints_and_midpoint(self):
        """Rate starts at initial, ends at final and is linear in between."""
        s = LinearSchedule(initial=1e-3, final=1e-5, budget=100)
        assert s.rate(0) == pytest.approx(1e-3)
        assert s.rate(50) == pytest.approx(0.5 * (1e-3 + 1e-5))
        assert s.rate(100) == pytest.approx(1e-5)
        assert s.rate(1000) == pytest.approx(1e-5)

    def test_constant(self):
        """A constant schedule never moves."""
        s = LinearSchedule.constant(0.01)
        assert s.rate(0) == s.rate(10_000) == 0.01

    def test_rejects_non_positive_rates(self):
        """Rates must be positive."""
        with pytest.raises(ValidationError):
            LinearSchedule(initial=0.0, final=1e-5, budget=10)


class TestAdam:
    """Bias-corrected ADAM."""

    def test_first_step_moves_by_learning_rate(self):
        """After bias correction the first update has magnitude lr per coordinate."""
        state = AdamState.fresh(3, LinearSchedule.constant(0.1))
        params = np.array([1.0, -2.0, 0.5])
        grads = np.array([4.0, -0.3, 1e-3])
        new, state = adam_step(params, grads, state)
        np.testing.assert_allclose(new, params - 0.1 * np.sign(grads), rtol=1e-4)
        assert state.step == 1

    def test_inputs_are_not_mutated(self):
        """adam_step returns new arrays and a new state."""
        state = AdamState.fresh(2, LinearSchedule.constant(0.1))
        params = np.ones(2)
        adam_step(params, np.ones(2), state)
        np.testing.assert_array_equal(params, np.ones(2))
        assert state.step == 0
        np.testing.assert_array_equal(state.m, np.zeros(2))

    def test_minimizes_a_quadratic(self):
        """Repeated steps reach the minimum of a convex quadratic."""
        state = AdamState.fresh(2, LinearSchedule(initial=0.1, final=0.001, budget=2000))
        target = np.array([3.0, -1.0])
        x = np.zeros(2)
        for _ in range(2000):
            x, state = adam_step(x, 2.0 * (x - target), state)
        np.testing.assert_allclose(x, target, atol=1e-2)

    def test_non_finite_gradient_refused(self):
        """A NaN gradient raises and names the parameter."""
        state = AdamState.fresh(3, LinearSchedule.constant(0.1))
        with pytest.raises(NumericError) as info:
            adam_step(np.zeros(3), np.array([0.0, np.nan, 1.0]), state)
        assert info.value.location == "parameter 1"

    def test_shape_mismatch(self):
        """Parameter and gradient shapes must agree."""
        state = AdamState.fresh(3, LinearSchedule.constant(0.1))
        with pytest.raises(StructuralError):
            adam_step(np.zeros(3), np.zeros(2), state)


class TestStreams:
    """Counter-based random streams."""

    def test_same_key_same_draws(self):
        """A key always yields the same numbers."""
        a = stream(7, 2, Stream.TRAIN, 5).standard_normal(4)
        b = stream(7, 2, Stream.TRAIN, 5).standard_normal(4)
        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        """Changing any part of the key changes the draws."""
        base = stream(7, 2, Stream.TRAIN, 5).standard_normal(4)
        for other in (
            stream(8, 2, Stream.TRAIN, 5),
            stream(7, 3, Stream.TRAIN, 5),
            stream(7, 2, Stream.VALIDATION, 5),
            stream(7, 2, Stream.TRAIN, 6),
        ):
            assert not np.allclose(base, other.standard_normal(4))

    def test_derived_seed_is_stable(self):
        """derive_seed is a pure function of its key."""
        assert derive_seed(1, 0, Stream.INIT, 3) == derive_seed(1, 0, Stream.INIT, 3)
        assert derive_seed(1, 0, Stream.INIT, 3) != derive_seed(1, 0, Stream.INIT, 4)
