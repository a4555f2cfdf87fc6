"""Counter-based random streams with deterministic per-trial keys.

Every stream is a SplitMix64 sequence: draw ``n`` of a stream with key ``k`` is
``mix64(k + (n + 1) * GOLDEN_GAMMA)`` mapped to ``[0, 1)`` through its top 53
bits.  Per-trial keys are derived from ``(base_seed, delta_index, trial)`` by

    key = mix64(base_seed ^ (delta_index * GOLDEN_GAMMA) ^ (trial * TRIAL_GAMMA))

with all arithmetic modulo 2**64.  The numba kernels in ``_kernels`` implement
the same functions, so a trial replayed through the Python state machines sees
exactly the same uniforms.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
TRIAL_GAMMA = 0xD1B54A32D192ED03
_INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    """SplitMix64 finalizer (Stafford variant 13)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def trial_key(base_seed: int, delta_index: int = 0, trial: int = 0) -> int:
    base = base_seed & MASK64
    a = (delta_index * GOLDEN_GAMMA) & MASK64
    b = (trial * TRIAL_GAMMA) & MASK64
    return mix64(base ^ a ^ b)


class RandomStream:
    """A reproducible stream of uniforms on ``[0, 1)``.

    Parameters
    ----------
    key : int
        64-bit stream key, usually from :func:`trial_key`.
    counter : int, default=0
        Number of draws already consumed.
    """

    __slots__ = ("key", "counter")

    def __init__(self, key: int, counter: int = 0):
        self.key = key & MASK64
        self.counter = counter

    @classmethod
    def for_trial(cls, base_seed: int, delta_index: int = 0, trial: int = 0):
        return cls(trial_key(base_seed, delta_index, trial))

    def uniform(self) -> float:
        self.counter += 1
        z = mix64(self.key + self.counter * GOLDEN_GAMMA)
        return (z >> 11) * _INV_2_53

    def uniforms(self, n: int) -> list:
        return [self.uniform() for _ in range(n)]

    def __repr__(self):
        return f"RandomStream(key={self.key:#018x}, counter={self.counter})"


class FixedStream:
    """Replays a fixed list of uniforms; used to pin sampling edge cases."""

    def __init__(self, values):
        self._values = list(values)
        self.counter = 0

    def uniform(self) -> float:
        if self.counter >= len(self._values):
            raise IndexError("fixed stream exhausted")
        u = self._values[self.counter]
        self.counter += 1
        return u
