import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dqlab.errors import ConfigError, DomainError
from dqlab.quantize import (DiscreteBatch, nats_to_bits, nats_to_bpd,
                            quantize, reduce_bit_depth)


def test_quantize_examples():
    assert np.array_equal(quantize([0.3, 1.7]), [0, 1])
    assert np.array_equal(quantize([1.0, 0.0]), [1, 0])
    assert np.array_equal(quantize(np.array([2, 5]) + [0.999, 0.001]), [2, 5])


def test_quantize_rejects_non_finite():
    with pytest.raises(DomainError):
        quantize([np.nan, 0.0])
    with pytest.raises(DomainError):
        quantize([np.inf, 0.0])


def test_quantize_round_trip_bulk():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 256, size=(100_000, 2))
    u = rng.random(size=(100_000, 2))
    assert np.array_equal(quantize(x + u), x)


# u capped at the dequantizer clamp: bare float addition x + u can round
# up to x+1 when u sits within half an ulp of 1.0
@given(st.lists(st.integers(0, 2**16 - 1), min_size=1, max_size=8),
       st.lists(st.floats(0.0, 1.0 - 1e-6), min_size=8, max_size=8))
@settings(max_examples=200, deadline=None)
def test_quantize_round_trip_property(xs, us):
    x = np.array(xs, dtype=np.int64)
    u = np.array(us[:len(xs)])
    assert np.array_equal(quantize(x + u), x)


def test_bpd_examples():
    assert nats_to_bpd(math.log(2.0), 1) == pytest.approx(1.0, abs=0)
    assert nats_to_bpd(2 * math.log(2.0), 2) == pytest.approx(1.0, abs=0)
    # checkerboard optimum: ln 2 nats total over D=2
    assert nats_to_bits(math.log(2.0)) == pytest.approx(1.0, abs=1e-15)
    assert nats_to_bpd(math.log(2.0), 2) == pytest.approx(0.5, abs=1e-15)


@given(st.integers(1, 64))
@settings(max_examples=50, deadline=None)
def test_bpd_exact_on_ln2_multiples(k):
    assert nats_to_bpd(k * math.log(2.0), 1) == pytest.approx(k, rel=1e-14)
    assert nats_to_bits(k * math.log(2.0)) == pytest.approx(k, rel=1e-14)


def test_reduce_bit_depth():
    b = DiscreteBatch(np.array([[255], [0], [128]]), 8)
    r = reduce_bit_depth(b, 5)
    assert r.bit_depth == 5
    assert np.array_equal(r.values.ravel(), [31, 0, 16])


def test_reduce_bit_depth_errors():
    b = DiscreteBatch(np.array([[3]]), 2)
    with pytest.raises(ConfigError):
        reduce_bit_depth(b, 0)
    with pytest.raises(ConfigError):
        reduce_bit_depth(b, 3)


def test_discrete_batch_validation():
    with pytest.raises(ConfigError):
        DiscreteBatch(np.array([[2]]), 1)  # out of range for 1 bit
    with pytest.raises(ConfigError):
        DiscreteBatch(np.array([1, 2, 3]), 8)  # not 2-D
    b = DiscreteBatch(np.array([[0, 1], [1, 0]]), 1)
    assert b.n == 2 and b.dim == 2
