"""Forward simulation of a nearest-neighbour PCA on a periodic ring."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .kernel import Kernel
from .rng import STREAM_DYNAMICS, STREAM_INIT, RandomStream, block_key, site_uniform

__all__ = [
    "RingConfig",
    "ProductMeasure",
    "Cylinder",
    "SampleSet",
    "step_ring",
    "simulate",
    "empirical_cylinder_prob",
]


@dataclass(frozen=True, eq=False)
class RingConfig:
    """Configuration on ``Z_L``; ``cells[z]`` in ``1..M``."""

    cells: np.ndarray
    M: int

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.int64)
        if cells.ndim != 1 or cells.size < 3:
            raise ValueError("a ring needs at least 3 sites")
        if cells.min() < 1 or cells.max() > self.M:
            raise ValueError(f"cell states must lie in 1..{self.M}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def L(self) -> int:
        return self.cells.size

    def __getitem__(self, z: int) -> int:
        return int(self.cells[z % self.L])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RingConfig):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.cells, other.cells)

    def __hash__(self) -> int:
        return hash((self.M, self.cells.tobytes()))

    @classmethod
    def constant(cls, L: int, state: int, M: int) -> "RingConfig":
        return cls(np.full(L, state), M)


@dataclass(frozen=True)
class ProductMeasure:
    """Independent per-site law on ``1..M``; uniform when ``probs`` is None."""

    M: int
    probs: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.probs is not None:
            probs = tuple(float(v) for v in self.probs)
            if len(probs) != self.M or min(probs) < 0 or abs(sum(probs) - 1) > 1e-12:
                raise ValueError(f"product measure needs {self.M} probabilities summing to 1")
            object.__setattr__(self, "probs", probs)

    def cdf(self) -> np.ndarray:
        probs = np.full(self.M, 1.0 / self.M) if self.probs is None else np.array(self.probs)
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return cdf

    @classmethod
    def delta(cls, M: int, state: int) -> "ProductMeasure":
        probs = [0.0] * M
        probs[state - 1] = 1.0
        return cls(M, tuple(probs))


@dataclass(frozen=True)
class Cylinder:
    """Finite-coordinate event: ``x(site) in values`` for every constraint."""

    constraints: tuple[tuple[int, frozenset[int]], ...]

    def __post_init__(self) -> None:
        cons = tuple((int(z), frozenset(int(v) for v in vals)) for z, vals in self.constraints)
        sites = [z for z, _ in cons]
        if len(set(sites)) != len(sites):
            raise ValueError("cylinder sites must be distinct")
        if any(not vals for _, vals in cons):
            raise ValueError("cylinder value-sets must be nonempty")
        object.__setattr__(self, "constraints", cons)

    @classmethod
    def of(cls, mapping: dict[int, Iterable[int]] | Iterable[tuple[int, Iterable[int]]]) -> "Cylinder":
        items = mapping.items() if isinstance(mapping, dict) else mapping
        return cls(tuple((z, frozenset(v)) for z, v in items))

    def reduced(self, L: int) -> "Cylinder":
        """Sites taken mod ``L``; raises if two constraints land on one site."""
        return Cylinder(tuple((z % L, vals) for z, vals in self.constraints))

    def mask(self, M: int) -> tuple[np.ndarray, np.ndarray]:
        sites = np.array([z for z, _ in self.constraints], dtype=np.int64)
        allowed = np.zeros((len(self.constraints), M + 1), dtype=bool)
        for r, (_, vals) in enumerate(self.constraints):
            for v in vals:
                if 1 <= v <= M:
                    allowed[r, v] = True
        return sites, allowed


@dataclass
class SampleSet:
    """Final configurations ``final[replica, site]`` (states ``1..M``)."""

    final: np.ndarray
    M: int
    steps: int
    seed: int
    snapshots: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def replicas(self) -> int:
        return self.final.shape[0]

    @property
    def L(self) -> int:
        return self.final.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["replica", "site", "state"])
        for r in range(self.replicas):
            for z in range(self.L):
                writer.writerow([r, z, int(self.final[r, z])])
        return buf.getvalue()


@njit(cache=True)
def _update(cur, nxt, cum, key, order):
    L = cur.size
    M = cum.shape[3]
    for t in range(order.size):
        z = order[t]
        u = site_uniform(key, z)
        a = cur[z - 1 if z > 0 else L - 1]
        b = cur[z]
        c = cur[z + 1 if z < L - 1 else 0]
        m = 0
        while m < M - 1 and u >= cum[a, b, c, m]:
            m += 1
        nxt[z] = m


@njit(cache=True)
def _init_replica(out, cdf, seed, replica):
    key = block_key(seed, STREAM_INIT, replica, 0)
    M = cdf.size
    for z in range(out.size):
        u = site_uniform(key, z)
        m = 0
        while m < M - 1 and u >= cdf[m]:
            m += 1
        out[z] = m


@njit(cache=True)
def _sweep(cur, nxt, cum2, key):
    # hot path of _update with the identity order and a flattened table
    L = cur.size
    M = cum2.shape[1]
    left = cur[L - 1]
    for z in range(L):
        right = cur[z + 1] if z < L - 1 else cur[0]
        idx = (left * M + cur[z]) * M + right
        left = cur[z]
        u = site_uniform(key, z)
        m = 0
        while m < M - 1 and u >= cum2[idx, m]:
            m += 1
        nxt[z] = m


@njit(cache=True, parallel=True)
def _run(states, cum2, seed, steps, snap_every, snaps):
    R = states.shape[0]
    for r in prange(R):
        cur = states[r].copy()
        nxt = np.empty_like(cur)
        si = 0
        for s in range(steps):
            _sweep(cur, nxt, cum2, block_key(seed, STREAM_DYNAMICS, r, s))
            cur, nxt = nxt, cur
            if snap_every > 0 and (s + 1) % snap_every == 0:
                snaps[si, r, :] = cur
                si += 1
        states[r, :] = cur


def _check_alphabet(c: RingConfig, k: Kernel) -> None:
    if c.M != k.M:
        raise ValueError(f"configuration alphabet M={c.M} does not match kernel M={k.M}")


def step_ring(
    c: RingConfig,
    k: Kernel,
    rng: RandomStream,
    step: int = 0,
    order: Sequence[int] | None = None,
) -> RingConfig:
    """One synchronous update; site ``z`` uses draw ``rng.uniform(step, z)``.

    ``order`` only permutes the loop over sites; since every site reads the
    pre-update configuration and its own keyed draw, the result never
    depends on it.
    """
    _check_alphabet(c, k)
    cur = c.cells - 1
    nxt = np.empty_like(cur)
    order_arr = np.arange(c.L) if order is None else np.asarray(order, dtype=np.int64)
    if sorted(order_arr.tolist()) != list(range(c.L)):
        raise ValueError("order must be a permutation of the sites")
    _update(cur, nxt, k.cumulative(), rng.key(step), order_arr)
    return RingConfig(nxt + 1, c.M)


def _initial_states(init: RingConfig | ProductMeasure, L: int | None, replicas: int, seed: int) -> np.ndarray:
    if isinstance(init, RingConfig):
        return np.tile(init.cells - 1, (replicas, 1))
    if L is None or L < 3:
        raise ValueError("a product-measure start needs a ring length L >= 3")
    states = np.empty((replicas, L), dtype=np.int64)
    cdf = init.cdf()
    for r in range(replicas):
        _init_replica(states[r], cdf, seed, r)
    return states


def simulate(
    init: RingConfig | ProductMeasure,
    k: Kernel,
    steps: int,
    replicas: int,
    seed: int,
    L: int | None = None,
    snapshot_every: int = 0,
) -> SampleSet:
    """Run ``replicas`` independent copies of the PCA for ``steps`` steps.

    Parameters
    ----------
    init : RingConfig or ProductMeasure
        Fixed starting configuration, or a product measure sampled per
        replica (then ``L`` is required).
    steps, replicas, seed : int
        Draws are keyed by ``(seed, replica, step, site)``, so results are
        bit-identical for a given seed whatever the worker count.
    snapshot_every : int
        If positive, keep the configuration every ``snapshot_every`` steps.
    """
    if steps < 0 or replicas < 1:
        raise ValueError("steps must be >= 0 and replicas >= 1")
    if isinstance(init, RingConfig):
        _check_alphabet(init, k)
    elif init.M != k.M:
        raise ValueError(f"initial measure alphabet M={init.M} does not match kernel M={k.M}")
    RandomStream(seed)  # range check
    states = _initial_states(init, L, replicas, seed)
    n_snaps = steps // snapshot_every if snapshot_every > 0 else 0
    snaps = np.zeros((max(n_snaps, 1), replicas, states.shape[1]), dtype=np.int64)
    _run(states, k.cumulative().reshape(-1, k.M), np.int64(seed), np.int64(steps), np.int64(snapshot_every), snaps)
    snapshots = {(i + 1) * snapshot_every: snaps[i] + 1 for i in range(n_snaps)}
    return SampleSet(states + 1, k.M, steps, seed, snapshots)


def empirical_cylinder_prob(s: SampleSet, cyl: Cylinder) -> tuple[float, float]:
    """Fraction of replicas whose final configuration lies in ``cyl``, with
    its binomial standard error."""
    if s.replicas == 0:
        raise ValueError("empty sample set")
    sites, allowed = cyl.reduced(s.L).mask(s.M)
    if sites.size == 0:
        return 1.0, 0.0
    vals = s.final[:, sites]
    hit = np.all(allowed[np.arange(sites.size)[None, :], vals], axis=1)
    est = float(hit.mean())
    return est, math.sqrt(est * (1.0 - est) / s.replicas)

