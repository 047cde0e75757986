import threading

import numpy as np
import pytest

from regencouple.parallel import ordered_map
from regencouple.rng import MAX_SEED, check_seed, stream


def test_stream_is_addressed_by_key():
    a = stream(7, "x", 3).random(4)
    np.testing.assert_array_equal(a, stream(7, "x", 3).random(4))
    assert not np.array_equal(a, stream(7, "x", 4).random(4))
    assert not np.array_equal(a, stream(8, "x", 3).random(4))
    assert not np.array_equal(stream(7, "x").random(4), stream(7, "y").random(4))


def test_seed_range():
    assert check_seed(MAX_SEED) == MAX_SEED
    stream(MAX_SEED)
    with pytest.raises(ValueError):
        check_seed(-1)
    with pytest.raises(ValueError):
        stream(MAX_SEED + 1)
    with pytest.raises(ValueError):
        stream(1, -2)


def test_ordered_map_preserves_order():
    seen = set()

    def job(i):
        seen.add(threading.get_ident())
        return float(stream(1, i).random())

    serial = ordered_map(job, range(40), 1)
    assert ordered_map(job, range(40), 4) == serial
    assert ordered_map(job, [], 4) == []
