from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_generator
from rsvol.errors import ColumnSumNonzero, NegativeOffDiagonal, Overflow, ValidationError
from rsvol.markov import (expm_pade6, is_irreducible, positivity_cross_check, transition_matrix,
                          validate_generator)


def reachable_all(b: np.ndarray) -> bool:
    """Plain BFS oracle: edge j -> i when b[i, j] > 0."""
    n = b.shape[0]
    for start in range(n):
        seen, todo = {start}, [start]
        while todo:
            j = todo.pop()
            for i in range(n):
                if i != j and b[i, j] > 0 and i not in seen:
                    seen.add(i)
                    todo.append(i)
        if len(seen) < n:
            return False
    return True


class TestValidate:
    def test_symmetric_two_state(self):
        g = validate_generator([[-1, 1], [1, -1]])
        assert g.n == 2

    def test_zero_generator(self):
        assert validate_generator(np.zeros((2, 2))).n == 2

    def test_negative_off_diagonal(self):
        with pytest.raises(NegativeOffDiagonal):
            validate_generator([[-1, -0.5], [1, 0.5]])

    def test_column_sum(self):
        with pytest.raises(ColumnSumNonzero):
            validate_generator([[-1, 1], [0.9, -1]])

    def test_small_column_error_is_reprojected(self):
        g = validate_generator([[-1 + 5e-13, 1], [1, -1]])
        assert np.allclose(g.b.sum(axis=0), 0.0, atol=1e-15)

    @pytest.mark.parametrize("bad", [[[1, 2, 3]], [[np.nan, 0], [0, 0]], []])
    def test_shape_and_finiteness(self, bad):
        with pytest.raises(ValidationError):
            validate_generator(bad)


class TestTransition:
    def test_zero_generator_is_identity(self):
        g = validate_generator(np.zeros((3, 3)))
        for t in (0.0, 0.7, 12.0):
            assert np.array_equal(transition_matrix(g, t), np.eye(3))

    def test_two_state_closed_form(self):
        g = validate_generator([[-1, 1], [1, -1]])
        p = transition_matrix(g, math.log(2) / 2)
        assert np.allclose(p, [[0.75, 0.25], [0.25, 0.75]], atol=1e-14)

    def test_stationary_limit(self):
        g = validate_generator([[-1, 1], [1, -1]])
        assert np.allclose(transition_matrix(g, 50.0), 0.5, atol=1e-12)

    def test_overflow_guard(self):
        g = validate_generator([[-1e9, 1e9], [1e9, -1e9]])
        with pytest.raises(Overflow):
            transition_matrix(g, 1e3)

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            transition_matrix(validate_generator(np.zeros((1, 1))), -1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_pade_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(4, 4)) * 3
        assert np.allclose(expm_pade6(a), scipy.linalg.expm(a), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("t", [0.01, 0.1, 1.0, 10.0])
    def test_column_sums(self, t):
        rng = np.random.default_rng(1)
        for _ in range(20):
            g = validate_generator(random_generator(rng, int(rng.integers(2, 6))))
            p = transition_matrix(g, t)
            assert np.all(p >= -1e-15)
            assert np.allclose(p.sum(axis=0), 1.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 5),
       t1=st.floats(0.0, 3.0), t2=st.floats(0.0, 3.0))
def test_semigroup(seed, n, t1, t2):
    g = validate_generator(random_generator(np.random.default_rng(seed), n))
    lhs = transition_matrix(g, t1) @ transition_matrix(g, t2)
    assert np.allclose(lhs, transition_matrix(g, t1 + t2), atol=1e-10, rtol=0)


class TestIrreducible:
    def test_symmetric(self):
        assert is_irreducible(validate_generator([[-1, 1], [1, -1]]))

    def test_zero(self):
        assert not is_irreducible(validate_generator(np.zeros((2, 2))))

    def test_one_way(self):
        assert not is_irreducible(validate_generator([[0, 1], [0, -1]]))

    def test_single_state(self):
        assert is_irreducible(validate_generator([[0.0]]))

    def test_agrees_with_bfs_and_positivity(self):
        rng = np.random.default_rng(2024)
        for _ in range(100):
            n = int(rng.integers(2, 6))
            g = validate_generator(random_generator(rng, n, sparsity=rng.uniform(0.2, 0.8)))
            expected = reachable_all(g.b)
            assert is_irreducible(g) == expected
            assert positivity_cross_check(g) == expected
