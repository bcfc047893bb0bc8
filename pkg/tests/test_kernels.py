import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sokid.kernels import (FeatureMapSpec, GaussianKernel, eval_explicit, eval_gaussian,
                           eval_squared, features, kernel_from_dict)

finite = st.floats(-50, 50, allow_nan=False)


def test_gaussian_examples():
    assert eval_gaussian(GaussianKernel(1.0), 0.0, 0.0) == 1.0
    assert eval_gaussian(GaussianKernel(1.0), 0.0, 1.0) == pytest.approx(math.exp(-0.5), abs=1e-15)
    assert eval_gaussian(GaussianKernel(2.0), 0.0, 2.0) == eval_gaussian(GaussianKernel(1.0), 0.0, 1.0)


def test_bad_bandwidth():
    for h in (0.0, -1.0, float("inf"), float("nan")):
        with pytest.raises(ValueError):
            GaussianKernel(h)


@settings(max_examples=100, deadline=None)
@given(x=finite, y=finite, a=finite, h=st.floats(0.1, 10))
def test_gaussian_symmetry_and_shift(x, y, a, h):
    k = GaussianKernel(h)
    assert eval_gaussian(k, x, x) == 1.0
    assert eval_gaussian(k, x, y) == eval_gaussian(k, y, x)
    assert eval_gaussian(k, x + a, y + a) == pytest.approx(eval_gaussian(k, x, y), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(finite, min_size=1, max_size=40), h=st.floats(0.05, 5))
def test_gaussian_gram_psd(pts, h):
    x = np.array(pts)
    K = eval_gaussian(GaussianKernel(h), x[:, None], x[None, :])
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-10 * x.size


def test_feature_examples():
    assert features(FeatureMapSpec(2), 3.0).tolist() == [1.0, 3.0]
    assert features(FeatureMapSpec(1), 7.0).tolist() == [1.0]
    assert features(FeatureMapSpec(4), 2.0).tolist() == [1.0, 2.0, 4.0, 8.0]
    assert features(FeatureMapSpec(3), np.zeros((2, 5))).shape == (2, 5, 3)


@pytest.mark.parametrize("x", range(-30, 31))
def test_features_exact_on_integers(x):
    assert features(FeatureMapSpec(5), float(x)).tolist() == [float(x**m) for m in range(5)]


def test_explicit_and_squared_examples():
    s2 = FeatureMapSpec(2)
    assert eval_explicit(s2, 2.0, 3.0) == 7.0
    assert eval_explicit(s2, 0.0, 123.4) == 1.0
    assert eval_explicit(FeatureMapSpec(3), 1.0, 1.0) == 3.0
    assert eval_squared(s2, 2.0, 3.0) == 49.0
    assert eval_squared(s2, 0.0, 5.0) == 1.0


@settings(max_examples=100, deadline=None)
@given(x=finite, y=finite, p=st.integers(1, 4))
def test_squared_is_explicit_squared(x, y, p):
    spec = FeatureMapSpec(p)
    v = eval_explicit(spec, x, y)
    assert eval_squared(spec, x, y) == v * v


def test_kernel_dict_round_trip():
    for obj in (GaussianKernel(0.7), FeatureMapSpec(3)):
        assert kernel_from_dict(obj.to_dict()) == obj
    with pytest.raises(ValueError):
        kernel_from_dict({"type": "laplace"})
