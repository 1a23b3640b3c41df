import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c3conv.tensor import (
    Shape,
    add,
    as_shape,
    concat_channels,
    random_init,
    slice_channels,
    split_channels,
    zeros,
)


@pytest.mark.parametrize(
    "shape, count",
    [((1, 1, 2, 2), 4), ((2, 3, 4, 4), 96), ((1, 128, 128, 128), 2_097_152)],
)
def test_zeros(shape, count):
    z = zeros(shape)
    assert z.size == count
    assert not z.any()
    assert z.dtype == np.float32


def test_zeros_double():
    assert zeros((1, 1, 1, 1), "double").dtype == np.float64


@pytest.mark.parametrize("bad", [(0, 1, 1, 1), (1, 1, 1), (1, -2, 3, 3)])
def test_invalid_shapes(bad):
    with pytest.raises(ValueError):
        as_shape(bad)


def test_overflowing_shape():
    big = np.iinfo(np.intp).max
    with pytest.raises(OverflowError):
        zeros((big, 2, 1, 1))


def test_random_init_deterministic():
    a = random_init((2, 3, 5, 5), seed=7, fan_in=9)
    b = random_init((2, 3, 5, 5), seed=7, fan_in=9)
    assert a.tobytes() == b.tobytes()
    assert random_init((2, 3, 5, 5), seed=8, fan_in=9).tobytes() != a.tobytes()


def test_random_init_bounds():
    x = random_init((1, 4, 16, 16), seed=0, fan_in=1, precision="double")
    assert x.min() >= -1.0 and x.max() <= 1.0
    y = random_init((1, 4, 16, 16), seed=0, fan_in=25, precision="double")
    assert np.abs(y).max() <= 0.2


def test_random_init_mean():
    fan_in = 4
    bound = np.sqrt(1 / fan_in)
    x = random_init((1, 1, 1000, 1000), seed=3, fan_in=fan_in, precision="double")
    assert abs(x.mean()) < 3 * bound / np.sqrt(1e6)


def test_random_init_zero_fan_in():
    with pytest.raises(ValueError):
        random_init((1, 1, 1, 1), 0, 0)


def test_add_identities():
    a = random_init((1, 2, 3, 3), 0, 1)
    assert np.array_equal(add(a, zeros(a.shape)), a)
    assert not add(a, -a).any()


def test_add_matches_scalar_loop():
    a = random_init((1, 2, 3, 3), 1, 1, "double")
    b = random_init((1, 2, 3, 3), 2, 1, "double")
    out = add(a, b)
    for idx in np.ndindex(a.shape):
        assert out[idx] == a[idx] + b[idx]


def test_add_shape_mismatch():
    with pytest.raises(ValueError):
        add(zeros((1, 2, 3, 3)), zeros((1, 2, 3, 4)))
    with pytest.raises(ValueError):
        add(zeros((1, 2, 3, 3)), zeros((1, 2, 3, 3), "double"))


def test_concat_single_part():
    a = random_init((1, 3, 4, 4), 0, 1)
    assert np.array_equal(concat_channels([a]), a)


def test_concat_four_parts_round_trip():
    parts = [random_init((1, 32, 4, 4), i, 1) for i in range(4)]
    cat = concat_channels(parts)
    assert cat.shape[1] == 128
    for i, p in enumerate(parts):
        assert np.array_equal(slice_channels(cat, 32 * i, 32 * (i + 1)), p)


def test_concat_esp_widths():
    parts = [zeros((1, c, 2, 2)) for c in (25, 25, 25, 25, 28)]
    assert concat_channels(parts).shape == (1, 128, 2, 2)


def test_concat_errors():
    with pytest.raises(ValueError):
        concat_channels([])
    with pytest.raises(ValueError):
        concat_channels([zeros((1, 1, 2, 2)), zeros((1, 1, 2, 3))])
    with pytest.raises(ValueError):
        concat_channels([zeros((1, 1, 2, 2)), zeros((2, 1, 2, 2))])


def test_shape_size():
    assert Shape(2, 3, 4, 5).size == 120


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=1, max_size=5), st.integers(0, 2**16))
def test_concat_split_round_trip(widths, seed):
    parts = [random_init((2, w, 3, 2), seed + i, 1) for i, w in enumerate(widths)]
    back = split_channels(concat_channels(parts), widths)
    for p, q in zip(parts, back):
        assert p.tobytes() == q.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_add_commutative(seed):
    a = random_init((1, 2, 3, 3), seed, 1)
    b = random_init((1, 2, 3, 3), seed + 1, 1)
    assert add(a, b).tobytes() == add(b, a).tobytes()
