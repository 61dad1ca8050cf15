import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sibcross.rng import generator, label_key, row_normals, seed_sequence, substream


def test_same_keys_same_draws():
    a = generator(5, 1, 2).standard_normal(10)
    b = generator(5, 1, 2).standard_normal(10)
    np.testing.assert_array_equal(a, b)


def test_different_keys_differ():
    a = generator(5, 1, 2).standard_normal(10)
    b = generator(5, 2, 1).standard_normal(10)
    c = generator(6, 1, 2).standard_normal(10)
    assert not np.allclose(a, b) and not np.allclose(a, c)


def test_substream_extends_spawn_key():
    ss = substream(9, 3)
    assert ss.spawn_key == (3,)
    assert substream(ss, 4).spawn_key == (3, 4)
    assert seed_sequence(ss) is ss


@pytest.mark.parametrize("bad", [-1, 1.5, True])
def test_bad_seeds_rejected(bad):
    with pytest.raises(ValueError):
        seed_sequence(bad)


def test_label_key_is_stable():
    # crc32 values are fixed by the zlib format
    assert label_key("scenario1") == label_key("scenario1")
    assert label_key("") == 0
    assert label_key("a") == 0xE8B7BE43


@given(st.integers(1, 60), st.integers(1, 60), st.integers(0, 2**32))
def test_row_normals_prefix_stable(n, m, seed):
    small, big = sorted((n, m))
    np.testing.assert_array_equal(row_normals(seed, small, 3, 0), row_normals(seed, big, 3, 0)[:small])
