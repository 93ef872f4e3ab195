"""Counter-based uniform streams.

Every uniform variate is a pure function of the tuple
``(seed, stream, replica, step, site, sub)``.  Nothing is carried from one
draw to the next, so results do not depend on the order in which sites or
replicas are processed, nor on how many workers process them.

The mixing function is the SplitMix64 finalizer applied along a chain of
Weyl increments; it is cheap enough to call once per site update inside
numba kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

__all__ = [
    "STREAM_INIT",
    "STREAM_DYNAMICS",
    "STREAM_DUAL",
    "STREAM_DEATH",
    "RandomStream",
    "block_key",
    "site_uniform",
    "counter_uniform",
]

# stream tags; a tag separates draws that would otherwise share a counter
STREAM_INIT = 0
STREAM_DYNAMICS = 1
STREAM_DUAL = 2
STREAM_DEATH = 3

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def _absorb(h, word):
    # word is int64; the cast wraps negatives (signed line coordinates)
    return _mix64(np.uint64(h) + np.uint64(word) * _GOLDEN + _GOLDEN)


@njit(cache=True)
def block_key(seed, stream, replica, step):
    """Hash of the leading counter words; shared by all sites of one step."""
    h = _mix64(np.uint64(seed) + _GOLDEN)
    h = _absorb(h, np.int64(stream))
    h = _absorb(h, np.int64(replica))
    h = _absorb(h, np.int64(step))
    return h


@njit(cache=True, inline="always")
def site_uniform(key, site):
    """Uniform on [0, 1) for ``site`` under a precomputed block key."""
    return np.float64(_absorb(np.uint64(key), np.int64(site)) >> _S11) * _INV53


@njit(cache=True)
def counter_uniform(seed, stream, replica, step, site):
    return site_uniform(block_key(seed, stream, replica, step), site)


@njit(cache=True)
def _sub_uniform(seed, stream, replica, step, sub, site):
    key = _absorb(block_key(seed, stream, replica, step), np.int64(sub))
    return site_uniform(key, site)


@njit(cache=True)
def _site_uniforms(key, n):
    out = np.empty(n, dtype=np.float64)
    for z in range(n):
        out[z] = site_uniform(key, z)
    return out


def _check_word(name: str, value: int) -> int:
    value = int(value)
    if not -(2**63) <= value < 2**63:
        raise ValueError(f"{name}={value} does not fit in a signed 64-bit word")
    return value


@dataclass(frozen=True)
class RandomStream:
    """Keyed uniform source for one replica of one stream.

    ``uniform(step, site)`` always returns the same number for the same
    arguments.  ``sub`` separates several draws that share a site, e.g.
    one per dual opinion; ``sub=None`` is the plain per-site stream used by
    the ring kernels.
    """

    seed: int
    stream: int = STREAM_DYNAMICS
    replica: int = 0

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**63:
            raise ValueError(f"seed must lie in [0, 2**63), got {self.seed}")

    def key(self, step: int) -> np.uint64:
        replica = _check_word("replica", self.replica)
        return np.uint64(block_key(self.seed, self.stream, replica, _check_word("step", step)))

    def uniform(self, step: int, site: int, sub: int | None = None) -> float:
        step = _check_word("step", step)
        site = _check_word("site", site)
        if sub is None:
            return float(counter_uniform(self.seed, self.stream, self.replica, step, site))
        sub = _check_word("sub", sub)
        return float(_sub_uniform(self.seed, self.stream, self.replica, step, sub, site))

    def uniforms(self, step: int, n: int) -> np.ndarray:
        """Uniforms for sites ``0..n-1``; equal to ``uniform(step, z)`` elementwise."""
        return _site_uniforms(self.key(step), int(n))

    def with_replica(self, replica: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream, replica)

    def with_stream(self, stream: int) -> "RandomStream":
        return RandomStream(self.seed, stream, self.replica)
