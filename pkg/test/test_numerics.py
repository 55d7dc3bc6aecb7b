import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igprune.numerics import (
    DimensionError,
    NonFiniteError,
    as_tensor,
    batched_matmul,
    hadamard_square,
    matmul,
    scaled_add,
    sign_mask,
    total_sum,
    transpose,
    zeros_like,
)


def ref_matmul(a: list[list[float]], b: list[list[float]]) -> list[list[float]]:
    """Triple-loop reference, summing in ascending k."""
    out = []
    for i in range(len(a)):
        row = []
        for j in range(len(b[0])):
            acc = 0.0
            for k in range(len(b)):
                acc += a[i][k] * b[k][j]
            row.append(acc)
        out.append(row)
    return out


class TestMatmul:
    def setup_method(self):
        self.rng = np.random.default_rng(42)

    def test_matches_reference(self):
        a = self.rng.normal(size=(5, 7))
        b = self.rng.normal(size=(7, 3))
        np.testing.assert_allclose(matmul(a, b), ref_matmul(a.tolist(), b.tolist()), rtol=1e-12, atol=1e-12)

    def test_shape_mismatch_carries_both_shapes(self):
        with pytest.raises(DimensionError) as info:
            matmul(np.zeros((2, 3)), np.zeros((4, 2)))
        assert info.value.shapes == ((2, 3), (4, 2))

    def test_repeatable_bitwise(self):
        a = self.rng.normal(size=(32, 64))
        b = self.rng.normal(size=(64, 16))
        assert matmul(a, b).tobytes() == matmul(a.copy(), b.copy()).tobytes()

    def test_batched_agrees_with_loop(self):
        a = self.rng.normal(size=(3, 4, 5))
        b = self.rng.normal(size=(3, 5, 2))
        out = batched_matmul(a, b)
        for i in range(3):
            np.testing.assert_array_equal(out[i], matmul(a[i], b[i]))

    def test_batched_rejects_mismatched_batch(self):
        with pytest.raises(DimensionError):
            batched_matmul(np.zeros((2, 3, 4)), np.zeros((3, 4, 5)))


class TestElementwise:
    def test_hadamard_square(self):
        np.testing.assert_array_equal(hadamard_square(np.array([[1.0, -2.0], [3.0, 0.5]])), [[1.0, 4.0], [9.0, 0.25]])

    def test_scaled_add(self):
        np.testing.assert_array_equal(scaled_add(np.ones(3), np.arange(3.0), 2.0), [1.0, 3.0, 5.0])

    def test_scaled_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            scaled_add(np.ones(3), np.ones(4), 1.0)

    def test_total_sum(self):
        assert total_sum(np.array([[1.5, 2.0], [3.0, 1.0]])) == 7.5
        assert total_sum(np.zeros((0,))) == 0.0

    def test_sign_mask_values(self):
        np.testing.assert_array_equal(sign_mask(np.array([-2.0, 0.0, 3.0, -0.0])), [-1.0, 0.0, 1.0, 0.0])

    def test_transpose_and_zeros(self):
        a = np.arange(6.0).reshape(2, 3)
        assert transpose(a).shape == (3, 2)
        assert transpose(a).flags["C_CONTIGUOUS"]
        z = zeros_like(a)
        assert z.dtype == np.float64 and not z.any()


class TestAsTensor:
    def test_reshape(self):
        t = as_tensor([1, 2, 3, 4, 5, 6], (2, 3))
        assert t.dtype == np.float64 and t.shape == (2, 3)

    @pytest.mark.parametrize("shape", [(4, 2), (0, 6), (-1, 6)])
    def test_bad_shape(self, shape):
        with pytest.raises(DimensionError):
            as_tensor(list(range(6)), shape)

    def test_non_finite(self):
        with pytest.raises(NonFiniteError):
            as_tensor([1.0, float("nan")])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=64))
def test_sign_mask_in_range(values):
    mask = sign_mask(np.array(values))
    assert set(np.unique(mask)) <= {-1.0, 0.0, 1.0}
    assert np.all((mask == 0) == (np.array(values) == 0))
