"""Exact (H, d)-duality checks on small rings by full enumeration.

Configurations of ``Z_L`` are indexed in base ``M`` (site 0 most
significant).  Dual states are per-site labels:

* voter class: a bitmask of the opinions holding the site (bit ``m-1`` for
  opinion ``m``); two or more bits make a conflict state.  Every tuple of
  subsets of ``Z_L`` is enumerated, conflicts included.
* monotone class: the level of the site, ``0`` for "in no set".
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .dual_monotone import MonotoneDualParams, MonotoneDualState, d_monotone, H_monotone, solve_monotone_dual, step_monotone_dual
from .dual_voter import OUTCOME_OFFSETS, OUTCOMES, VoterDualParams, VoterDualState, H_voter, d_voter, solve_voter_dual, step_voter_dual
from .kernel import Kernel
from .lattice import RingConfig, step_ring
from .rng import STREAM_DUAL, STREAM_DYNAMICS, RandomStream

__all__ = [
    "DEFAULT_MAX_STATES",
    "CapExceeded",
    "FiniteChain",
    "DualityInstance",
    "VerificationReport",
    "enumerate_configs",
    "build_pca_matrix",
    "build_dual_chain",
    "duality_matrix",
    "dual_weights",
    "build_instance",
    "verify_one_step",
    "multi_step_residual",
    "verify_multi_step",
    "build_tilde_chain",
    "verify_tilde",
    "verify",
    "mc_duality_check",
]

DEFAULT_MAX_STATES = 200_000
# dense float64 matrices; keeps a single matrix under ~2 GB
_MAX_DENSE_CELLS = 250_000_000

TILDE_STATE = "cemetery"


class CapExceeded(ValueError):
    """The enumerated instance is larger than the configured cap."""


@dataclass
class FiniteChain:
    """Row-stochastic matrix ``T`` over an enumerated list of ``states``."""

    states: list[Any]
    T: np.ndarray

    @property
    def n(self) -> int:
        return self.T.shape[0]

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(self.T.sum(axis=1) - 1.0)))


@dataclass
class DualityInstance:
    P: FiniteChain
    Q: FiniteChain
    H: np.ndarray
    d: np.ndarray
    cls: str
    L: int

    @property
    def DQ(self) -> np.ndarray:
        return self.d[:, None] * self.Q.T


@dataclass
class VerificationReport:
    cls: str
    M: int
    L: int
    n_configs: int
    n_dual_states: int
    max_residual_one_step: float
    max_residual_per_s: dict[int, float] = field(default_factory=dict)
    tilde_residual: float = float("nan")
    row_sum_error: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "class": self.cls,
            "M": self.M,
            "L": self.L,
            "census": {"configurations": self.n_configs, "dual_states": self.n_dual_states},
            "max_residual_one_step": self.max_residual_one_step,
            "max_residual_per_s": {str(s): r for s, r in self.max_residual_per_s.items()},
            "tilde_residual": self.tilde_residual,
            "row_sum_error": self.row_sum_error,
        }


def _check_cap(n: int, max_states: int, what: str) -> None:
    if n > max_states:
        raise CapExceeded(f"{what}: {n} states exceeds the cap of {max_states}")
    if n * n > _MAX_DENSE_CELLS:
        raise CapExceeded(f"{what}: a dense {n}x{n} matrix is too large")


def enumerate_configs(M: int, L: int) -> np.ndarray:
    """All ``M**L`` configurations as rows of states ``1..M``."""
    return np.array(list(itertools.product(range(1, M + 1), repeat=L)), dtype=np.int64).reshape(-1, L)


def build_pca_matrix(k: Kernel, L: int, max_states: int = DEFAULT_MAX_STATES) -> FiniteChain:
    """``P[x, x'] = prod_z p[x(z-1)][x(z)][x(z+1)][x'(z)]`` on ``Z_L``."""
    if L < 3:
        raise ValueError("ring length must be >= 3")
    n = k.M**L
    _check_cap(n, max_states, "configuration space")
    configs = enumerate_configs(k.M, L)
    c0 = configs - 1
    # site-wise rows: R[x, z, m]
    R = k.table[np.roll(c0, 1, axis=1), c0, np.roll(c0, -1, axis=1)]
    T = np.ones((n, 1))
    for z in range(L):
        T = (T[:, :, None] * R[:, z, None, :]).reshape(n, -1)
    return FiniteChain([tuple(c) for c in configs], T)


def _labels(params: VoterDualParams | MonotoneDualParams, L: int) -> list[tuple[int, ...]]:
    if isinstance(params, VoterDualParams):
        return list(itertools.product(range(2 ** (params.M - 1)), repeat=L))
    return list(itertools.product(range(params.M), repeat=L))


def _label_to_voter(label: tuple[int, ...], M: int, frozen) -> VoterDualState:
    sets = [[z for z, b in enumerate(label) if b >> (m - 1) & 1] for m in range(1, M)]
    return VoterDualState.make(sets, frozen)


def _label_to_monotone(label: tuple[int, ...], M: int) -> MonotoneDualState:
    return MonotoneDualState.from_levels({z: lv for z, lv in enumerate(label) if lv}, M)


def label_state(label: tuple[int, ...], params: VoterDualParams | MonotoneDualParams):
    """Dual-state object for an enumeration label."""
    if isinstance(params, VoterDualParams):
        return _label_to_voter(label, params.M, params.frozen)
    return _label_to_monotone(label, params.M)


def state_label(state: VoterDualState | MonotoneDualState, L: int) -> tuple[int, ...]:
    label = [0] * L
    if isinstance(state, VoterDualState):
        for m, s in enumerate(state.sets, start=1):
            for z in s:
                label[z % L] |= 1 << (m - 1)
    else:
        for z, lv in state.levels:
            label[z % L] = lv
    return tuple(label)


def _voter_row(label, params: VoterDualParams, L: int) -> dict[tuple[int, ...], float]:
    dist = {tuple([0] * L): 1.0}
    for z, bits in enumerate(label):
        for m in range(1, params.M):
            if not bits >> (m - 1) & 1:
                continue
            moves = params.block_distribution(m)
            nxt: dict[tuple[int, ...], float] = {}
            for lab, pr in dist.items():
                for q, offsets in moves:
                    new = list(lab)
                    for off in offsets:
                        new[(z + off) % L] |= 1 << (m - 1)
                    key = tuple(new)
                    nxt[key] = nxt.get(key, 0.0) + pr * q
            dist = nxt
    return dist


def _monotone_row(label, params: MonotoneDualParams, L: int) -> dict[tuple[int, ...], float]:
    M = params.M
    dist = {tuple([M] * L): 1.0}  # M = "no level yet" during the min-merge
    for z, lv in enumerate(label):
        if not lv:
            continue
        moves = params.block_distribution(lv)
        nxt: dict[tuple[int, ...], float] = {}
        for lab, pr in dist.items():
            for q, (left, right) in moves:
                new = list(lab)
                if left is not None:
                    new[(z - 1) % L] = min(new[(z - 1) % L], left)
                if right is not None:
                    new[(z + 1) % L] = min(new[(z + 1) % L], right)
                key = tuple(new)
                nxt[key] = nxt.get(key, 0.0) + pr * q
        dist = nxt
    return {tuple(0 if v == M else v for v in lab): pr for lab, pr in dist.items()}


def build_dual_chain(
    params: VoterDualParams | MonotoneDualParams, L: int, max_states: int = DEFAULT_MAX_STATES
) -> FiniteChain:
    """Exact one-step matrix of the dual on ``Z_L``.

    Rows are the convolution of the independent per-point block laws;
    all-empty, conflict and frozen states are absorbing.
    """
    if L < 3:
        raise ValueError("ring length must be >= 3")
    labels = _labels(params, L)
    n = len(labels)
    _check_cap(n, max_states, "dual state space")
    index = {lab: i for i, lab in enumerate(labels)}
    T = np.zeros((n, n))
    voter = isinstance(params, VoterDualParams)
    for i, lab in enumerate(labels):
        if label_state(lab, params).absorbed:
            T[i, i] = 1.0
            continue
        row = _voter_row(lab, params, L) if voter else _monotone_row(lab, params, L)
        for lab2, pr in row.items():
            T[i, index[lab2]] += pr
    return FiniteChain(labels, T)


def duality_matrix(configs: np.ndarray, labels: list[tuple[int, ...]], cls: str) -> np.ndarray:
    """``H[x, y]`` for all enumerated configurations and dual labels."""
    lab = np.array(labels, dtype=np.int64).reshape(len(labels), -1)
    if cls == "voter":
        popcount = np.zeros_like(lab)
        for b in range(int(lab.max()).bit_length() if lab.size else 0):
            popcount += (lab >> b) & 1
        conflict = np.any(popcount >= 2, axis=1)
        # required state: bit index + 1 for single-opinion sites, 0 for empty
        req = np.where(popcount == 1, np.log2(np.maximum(lab, 1)).astype(np.int64) + 1, 0)
        ok = (req[None, :, :] == 0) | (configs[:, None, :] == req[None, :, :])
        return (np.all(ok, axis=2) & ~conflict[None, :]).astype(np.float64)
    ok = (lab[None, :, :] == 0) | (configs[:, None, :] <= lab[None, :, :])
    return np.all(ok, axis=2).astype(np.float64)


def dual_weights(params: VoterDualParams | MonotoneDualParams, labels: list[tuple[int, ...]]) -> np.ndarray:
    if isinstance(params, VoterDualParams):
        return np.array([d_voter(label_state(lab, params), params) for lab in labels])
    return np.array([d_monotone(label_state(lab, params), params) for lab in labels])


def build_instance(
    k: Kernel,
    cls: str,
    L: int,
    params: VoterDualParams | MonotoneDualParams | None = None,
    max_states: int = DEFAULT_MAX_STATES,
) -> DualityInstance:
    """Assemble ``P``, ``Q``, ``H`` and ``d`` for ``k`` on ``Z_L``.

    ``params`` defaults to the closed-form dual of the requested class.
    """
    if cls not in ("voter", "monotone"):
        raise ValueError(f"unknown dual class {cls!r}")
    if params is None:
        params = solve_voter_dual(k) if cls == "voter" else solve_monotone_dual(k)
    P = build_pca_matrix(k, L, max_states)
    Q = build_dual_chain(params, L, max_states)
    H = duality_matrix(np.array(P.states), Q.states, cls)
    return DualityInstance(P, Q, H, dual_weights(params, Q.states), cls, L)


def verify_one_step(inst: DualityInstance) -> float:
    """``max |P H - H (D Q)^T|``."""
    return float(np.max(np.abs(inst.P.T @ inst.H - inst.H @ np.transpose(inst.DQ))))


def multi_step_residual(inst: DualityInstance, s: int) -> float:
    """``max |P^s H - H ((D Q)^s)^T|``; zero for ``s = 0``."""
    if s < 0:
        raise ValueError("s must be >= 0")
    Ps = np.linalg.matrix_power(inst.P.T, s)
    DQs = np.linalg.matrix_power(inst.DQ, s)
    return float(np.max(np.abs(Ps @ inst.H - inst.H @ np.transpose(DQs))))


def verify_multi_step(inst: DualityInstance, s_max: int) -> dict[int, float]:
    """Residual of the ``s``-step identity for ``s = 1..s_max``."""
    if s_max < 1:
        raise ValueError("s_max must be >= 1")
    out = {}
    Ps = np.eye(inst.P.n)
    DQs = np.eye(inst.Q.n)
    for s in range(1, s_max + 1):
        Ps = Ps @ inst.P.T
        DQs = DQs @ inst.DQ
        out[s] = float(np.max(np.abs(Ps @ inst.H - inst.H @ np.transpose(DQs))))
    return out


def build_tilde_chain(Q: FiniteChain, d: np.ndarray) -> FiniteChain:
    """Killed chain: from ``y`` move by ``d(y) Q[y, .]``, else jump to the
    absorbing cemetery state (appended last)."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (Q.n,) or np.any(d < 0) or np.any(d > 1):
        raise ValueError("d must be a vector of values in [0, 1], one per state")
    T = np.zeros((Q.n + 1, Q.n + 1))
    T[: Q.n, : Q.n] = d[:, None] * Q.T
    T[: Q.n, Q.n] = 1.0 - d
    T[Q.n, Q.n] = 1.0
    return FiniteChain(list(Q.states) + [TILDE_STATE], T)


def verify_tilde(inst: DualityInstance) -> float:
    """``max |P H~ - H~ Q~^T|`` with ``H~(., cemetery) = 0``."""
    Qt = build_tilde_chain(inst.Q, inst.d)
    Ht = np.hstack([inst.H, np.zeros((inst.H.shape[0], 1))])
    return float(np.max(np.abs(inst.P.T @ Ht - Ht @ np.transpose(Qt.T))))


def verify(k: Kernel, cls: str, L: int, s_max: int = 1, max_states: int = DEFAULT_MAX_STATES) -> VerificationReport:
    inst = build_instance(k, cls, L, max_states=max_states)
    per_s = verify_multi_step(inst, s_max)
    return VerificationReport(
        cls=cls,
        M=k.M,
        L=L,
        n_configs=inst.P.n,
        n_dual_states=inst.Q.n,
        max_residual_one_step=per_s[1],
        max_residual_per_s=per_s,
        tilde_residual=verify_tilde(inst),
        row_sum_error=max(inst.P.row_sum_error(), inst.Q.row_sum_error()),
    )


def mc_duality_check(
    k: Kernel,
    params: VoterDualParams | MonotoneDualParams,
    x: RingConfig,
    A: VoterDualState | MonotoneDualState,
    replicas: int,
    seed: int,
) -> tuple[float, float, float]:
    """Sampled one-step identity on ``Z_L``, ``L = x.L``.

    Returns ``(lhs, rhs, combined_stderr)`` where ``lhs`` estimates
    ``E_x[H(eta_1, A)]`` and ``rhs`` estimates ``d(A) E_A[H(x, xi_1)]``.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    voter = isinstance(params, VoterDualParams)
    H = H_voter if voter else H_monotone
    d = d_voter(A, params) if voter else d_monotone(A, params)
    if A.status in ("absorbed-empty", "absorbed-conflict"):
        # H(., A) is constant (1 or 0) and d(A) = 1 on the empty state
        v = float(H(x, A))
        return v, v, 0.0
    step = step_voter_dual if voter else step_monotone_dual
    lhs_hits = 0
    rhs_hits = 0
    for r in range(replicas):
        eta = step_ring(x, k, RandomStream(seed, STREAM_DYNAMICS, r), 0)
        lhs_hits += H(eta, A)
        xi = step(A, params, RandomStream(seed, STREAM_DUAL, r), 0, ring=x.L)
        rhs_hits += H(x, xi)
    lhs = lhs_hits / replicas
    q = rhs_hits / replicas
    se = math.sqrt(lhs * (1 - lhs) / replicas + d * d * q * (1 - q) / replicas)
    return lhs, d * q, se
