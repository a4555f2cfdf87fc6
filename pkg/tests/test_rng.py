import numpy as np
import pytest

from nestedrank.rng import FixedStream, MASK64, RandomStream, mix64, trial_key


def test_mix64_known_value():
    # first output of SplitMix64 seeded with 0
    assert mix64(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


def test_uniforms_in_unit_interval():
    s = RandomStream.for_trial(1, 2, 3)
    u = np.array(s.uniforms(10_000))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.02


def test_stream_is_counter_based():
    a = RandomStream(12345)
    first = a.uniforms(5)
    b = RandomStream(12345, counter=3)
    assert b.uniforms(2) == first[3:]


def test_trial_keys_distinct_prefixes():
    seen = set()
    for d in range(3):
        for i in range(2000):
            prefix = tuple(RandomStream.for_trial(7, d, i).uniforms(4))
            assert prefix not in seen
            seen.add(prefix)


def test_trial_key_masks_to_64_bits():
    k = trial_key(2**64 + 5, 1, 2)
    assert 0 <= k <= MASK64
    assert k == trial_key(5, 1, 2)


def test_fixed_stream_replays_and_exhausts():
    s = FixedStream([0.1, 0.9])
    assert s.uniform() == 0.1 and s.uniform() == 0.9
    with pytest.raises(IndexError):
        s.uniform()
