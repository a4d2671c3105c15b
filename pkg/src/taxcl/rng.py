"""Seeded pseudo-random numbers with a fully pinned-down algorithm.

Every stochastic piece of the workbench (data generation, augmentation,
batch sampling, weight init) draws from :class:`SeededRng` so that runs
are reproducible bit-for-bit from ``(seed, stream_id, call sequence)``.

The integer generator is SplitMix64: a 64-bit Weyl sequence with
increment 0x9E3779B97F4A7C15 whose state is passed through an
avalanching finalizer on output.  Gaussians come from the Box-Muller
transform on top of it, with the second deviate of each pair cached.
Both halves are simple enough to restate in a few lines, which is the
point: the compiled backend re-implements them in C and must produce
the identical stream (see tests/test_backend.py).
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_TWO_PI = 6.283185307179586
_INV_2_53 = 2.0 ** -53


def _mix64(z: int) -> int:
    """SplitMix64 output finalizer (Stafford's mix13 constants)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_state(seed: int, stream_id: int = 0) -> int:
    """Initial 64-bit state for (seed, stream): two finalizer passes keep
    nearby seeds and streams statistically unrelated."""
    return _mix64(seed & _MASK64) ^ _mix64(((stream_id + 1) * _GAMMA) & _MASK64)


class SeededRng:
    """Deterministic RNG; independent streams via ``stream_id``.

    State is a single 64-bit word plus the Box-Muller spare slot.  The
    instance is single-owner: share across threads only by giving each
    thread its own stream_id.
    """

    __slots__ = ("state", "stream_id", "_spare", "_has_spare")

    def __init__(self, seed: int, stream_id: int = 0):
        self.state = derive_state(seed, stream_id)
        self.stream_id = stream_id
        self._spare = 0.0
        self._has_spare = False

    # -- state round-trip (checkpointing) --------------------------------

    def get_state(self) -> tuple[int, bool, float]:
        return (self.state, self._has_spare, self._spare)

    def set_state(self, state: tuple[int, bool, float]) -> None:
        self.state = int(state[0]) & _MASK64
        self._has_spare = bool(state[1])
        self._spare = float(state[2])

    # -- core draws -------------------------------------------------------

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        return _mix64(self.state)

    def next_uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_gaussian(self) -> float:
        """Standard normal deviate via Box-Muller."""
        if self._has_spare:
            self._has_spare = False
            return self._spare
        u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53  # (0, 1], log-safe
        u2 = (self.next_u64() >> 11) * _INV_2_53
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(_TWO_PI * u2)
        self._has_spare = True
        return r * math.cos(_TWO_PI * u2)

    # -- bulk fills (dispatch to the compiled backend when present) -------

    def gaussians(self, n: int):
        from . import backend

        out, self.state, self._has_spare, self._spare = backend.rng_fill_gaussian(
            n, self.state, self._has_spare, self._spare
        )
        return out

    def uniforms(self, n: int):
        from . import backend

        out, self.state = backend.rng_fill_uniform(n, self.state)
        return out

    # -- integers and sampling --------------------------------------------

    def randint_below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("randint_below requires n >= 1")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randint_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order randomized."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randint_below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
