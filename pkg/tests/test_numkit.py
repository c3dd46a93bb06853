import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from peerlearn.errors import DimMismatch, EmptyInput, NotPositiveDefinite
from peerlearn.numkit import RngStream, cholesky_solve, logsumexp


class TestCholeskySolve:
    def test_identity(self):
        x = cholesky_solve(np.eye(2), [3.0, 4.0])
        np.testing.assert_allclose(x, [3.0, 4.0], rtol=1e-12)

    def test_diagonal(self):
        x = cholesky_solve(np.diag([4.0, 9.0]), [8.0, 27.0])
        np.testing.assert_allclose(x, [2.0, 3.0], rtol=1e-12)

    def test_2x2_against_direct_inverse(self):
        # oracle: closed-form 2x2 inverse, adj / det
        a = np.array([[4.0, 2.0], [2.0, 3.0]])
        det = 4.0 * 3.0 - 2.0 * 2.0
        inv = np.array([[3.0, -2.0], [-2.0, 4.0]]) / det
        b = np.array([10.0, 8.0])
        expected = inv @ b
        np.testing.assert_allclose(expected, [1.75, 1.5], rtol=1e-12)
        np.testing.assert_allclose(cholesky_solve(a, b), expected, rtol=1e-10)

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_solve(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 1.0])

    def test_non_square(self):
        with pytest.raises(DimMismatch):
            cholesky_solve(np.ones((2, 3)), [1.0, 1.0])

    @pytest.mark.parametrize("n", [1, 2, 7, 16, 33, 64])
    def test_recovers_x_random_spd(self, n):
        rng = np.random.default_rng(n)
        for _ in range(5):
            m = rng.normal(size=(n, n))
            a = m @ m.T + n * np.eye(n)
            x = rng.normal(size=n)
            got = cholesky_solve(a, a @ x)
            assert np.linalg.norm(got - x) <= 1e-8 * max(np.linalg.norm(x), 1.0)


class TestLogSumExp:
    def test_pair_of_zeros(self):
        assert logsumexp([0.0, 0.0]) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_singleton(self):
        for v in (-3.5, 0.0, 42.0):
            assert logsumexp([v]) == pytest.approx(v, abs=1e-15)

    def test_huge_values_against_mpmath(self):
        import mpmath

        mpmath.mp.dps = 50
        expected = float(mpmath.log(mpmath.exp(1000) + mpmath.exp(1000)))
        got = logsumexp([1000.0, 1000.0])
        assert got == pytest.approx(expected, rel=1e-14)
        assert got == pytest.approx(1000.0 + np.log(2.0), rel=1e-14)

    def test_minus_inf_entries(self):
        assert logsumexp([-np.inf, 0.0]) == pytest.approx(0.0, abs=1e-12)
        assert logsumexp([-np.inf, -np.inf]) == -np.inf

    def test_empty(self):
        with pytest.raises(EmptyInput):
            logsumexp([])

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-50, 50), min_size=1, max_size=20),
        st.floats(-100, 100),
    )
    def test_shift_invariance(self, values, c):
        v = np.array(values)
        assert logsumexp(v + c) == pytest.approx(logsumexp(v) + c, abs=1e-9)


class TestRngStream:
    def test_equal_seeds_byte_identical(self):
        a = RngStream(1234)
        b = RngStream(1234)
        assert [a.next_u64() for _ in range(64)] == [b.next_u64() for _ in range(64)]
        a2, b2 = RngStream(99), RngStream(99)
        assert a2.normals(33).tobytes() == b2.normals(33).tobytes()

    def test_different_seeds_differ(self):
        assert RngStream(1).next_u64() != RngStream(2).next_u64()

    def test_derive_is_deterministic_and_separate(self):
        root = RngStream(7)
        c1 = root.derive(1, 2)
        c2 = RngStream(7).derive(1, 2)
        assert c1.next_u64() == c2.next_u64()
        assert RngStream(7).derive(1).next_u64() != RngStream(7).derive(2).next_u64()

    def test_below_in_range(self):
        rng = RngStream(5)
        draws = [rng.below(10) for _ in range(1000)]
        assert min(draws) >= 0 and max(draws) <= 9
        assert len(set(draws)) == 10

    def test_permutation_is_a_permutation(self):
        rng = RngStream(11)
        perm = rng.permutation(50)
        assert sorted(perm.tolist()) == list(range(50))

    def test_sample_without_replacement(self):
        rng = RngStream(3)
        picked = rng.sample_without_replacement(20, 5)
        assert len(picked) == len(set(picked)) == 5
        assert all(0 <= p < 20 for p in picked)
        assert rng.sample_without_replacement(4, 9) == [0, 1, 2, 3]

    def test_normal_moments(self):
        rng = RngStream(17)
        z = rng.normals(20000)
        assert abs(float(z.mean())) < 0.03
        assert abs(float(z.std()) - 1.0) < 0.03

    def test_unit_vector(self):
        v = RngStream(2).unit_vector(16)
        assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-12)
