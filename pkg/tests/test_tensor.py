import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from alphanet.rng import PrngStream
from alphanet.tensor import ShapeError, check_finite, matmul


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        npt.assert_array_equal(matmul(np.eye(2), a), a)

    def test_hand_computed(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        b = np.array([[5.0, 6.0], [7.0, 8.0]])
        # brute-force triple loop oracle
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    expected[i, j] += a[i, k] * b[k, j]
        npt.assert_array_equal(matmul(a, b), expected)
        npt.assert_array_equal(expected, [[19.0, 22.0], [43.0, 50.0]])

    def test_zeros_annihilate(self):
        b = np.arange(12.0).reshape(3, 4)
        npt.assert_array_equal(matmul(np.zeros((2, 3)), b), np.zeros((2, 4)))

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4),
           st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_associativity(self, m, k, p, q, seed):
        s = PrngStream(seed, "assoc")
        a = s.fork("a").normal((m, k))
        b = s.fork("b").normal((k, p))
        c = s.fork("c").normal((p, q))
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        npt.assert_allclose(left, right, rtol=1e-10, atol=1e-10)

    def test_associativity_float32(self):
        s = PrngStream(0, "assoc32")
        a = s.fork("a").normal((3, 5), dtype=np.float32)
        b = s.fork("b").normal((5, 4), dtype=np.float32)
        c = s.fork("c").normal((4, 2), dtype=np.float32)
        npt.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=1e-5)


class TestFinite:
    def test_passes_through(self):
        x = np.ones(3)
        assert check_finite(x) is x

    def test_rejects_nan_and_inf(self):
        with pytest.raises(FloatingPointError, match="grad"):
            check_finite(np.array([1.0, np.nan]), name="grad")
        with pytest.raises(FloatingPointError):
            check_finite(np.array([np.inf]))


class TestPrngStream:
    def test_same_identity_same_sequence(self):
        a = PrngStream(1, "x").uniform((4,))
        b = PrngStream(1, "x").uniform((4,))
        npt.assert_array_equal(a, b)

    def test_fork_twice_identical(self):
        s = PrngStream(5)
        npt.assert_array_equal(s.fork("a").uniform((100,)), s.fork("a").uniform((100,)))

    def test_fork_labels_independent(self):
        s = PrngStream(5)
        a = s.fork("a").uniform((1000,))
        b = s.fork("b").uniform((1000,))
        assert np.mean(np.abs(a - b) > 1e-12) > 0.9

    def test_fork_insensitive_to_parent_draws(self):
        s1 = PrngStream(5)
        before = s1.fork("child").uniform((10,))
        s2 = PrngStream(5)
        s2.uniform((17,))
        after = s2.fork("child").uniform((10,))
        npt.assert_array_equal(before, after)

    def test_uniform_range_and_scalar_shape(self):
        v = PrngStream(2, "scalar").uniform(())
        assert v.shape == ()
        assert 0.0 <= float(v) < 1.0

    def test_uniform_mean(self):
        # 1e5 draws: sample mean within 0.5 +/- 0.01 (beyond a 3-sigma bound)
        draws = PrngStream(11, "stats").uniform((100_000,))
        assert abs(draws.mean() - 0.5) < 0.01
        assert draws.min() >= 0.0 and draws.max() < 1.0

    def test_clone_reproduces_bit_identical(self):
        s = PrngStream(9, "clone")
        s.uniform((7,))
        c = s.clone()
        npt.assert_array_equal(s.uniform((20,)), c.uniform((20,)))
        assert c.counter == s.counter

    def test_counter_advances(self):
        s = PrngStream(0)
        s.uniform((3, 2))
        assert s.counter == 6

    def test_empty_label_rejected(self):
        with pytest.raises(ValueError):
            PrngStream(0, "")
        with pytest.raises(ValueError):
            PrngStream(0).fork("")
