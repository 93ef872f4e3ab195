"""Nearest-neighbour PCA transition kernels.

A kernel on ``M`` states is the table ``p[i][j][k][m]``: the probability
that a site becomes ``m`` when its left neighbour, itself and its right
neighbour are ``i, j, k``.  States are labelled ``1..M`` in the public API;
the underlying array is 0-based, ``table[i-1, j-1, k-1, m-1]``.

Domany-Kinzel kernels use internal state 1 for the model's '1' and internal
state 2 for its '0' (see ``DK_STATE_NAMES``).
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

__all__ = [
    "PROB_TOL",
    "DK_STATE_NAMES",
    "KernelError",
    "Kernel",
    "ValidationReport",
    "StateRelabeling",
    "validate_kernel",
    "noisy_voter_kernel",
    "domany_kinzel_kernel",
    "competition_kernel",
    "convex_g_kernel",
    "relabel_states",
    "kernel_from_spec",
    "load_model_spec",
    "spec_hash",
]

PROB_TOL = 1e-12

# internal state -> Domany-Kinzel symbol
DK_STATE_NAMES = {1: "1", 2: "0"}


class KernelError(ValueError):
    """Raised for invalid kernels or constructor arguments."""


@dataclass(frozen=True)
class ValidationReport:
    M: int
    valid: bool
    clamped: bool = False
    row_violations: list[tuple[tuple[int, int, int], float]] = field(default_factory=list)
    entry_violations: list[tuple[tuple[int, int, int, int], float]] = field(default_factory=list)
    messages: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "M": self.M,
            "valid": self.valid,
            "clamped": self.clamped,
            "row_violations": [{"row": list(r), "sum": s} for r, s in self.row_violations],
            "entry_violations": [{"entry": list(e), "value": v} for e, v in self.entry_violations],
            "messages": list(self.messages),
        }


def _clamp_and_check(table: np.ndarray) -> tuple[np.ndarray, ValidationReport]:
    table = np.array(table, dtype=np.float64)
    if table.ndim != 4 or len(set(table.shape)) != 1:
        raise KernelError(f"kernel table must have shape (M, M, M, M), got {table.shape}")
    M = table.shape[0]
    if M < 2:
        raise KernelError("a kernel needs at least 2 states")
    messages = []
    entry_violations = []
    bad = (table < -PROB_TOL) | (table > 1 + PROB_TOL) | ~np.isfinite(table)
    for idx in zip(*np.nonzero(bad)):
        e = tuple(int(a) + 1 for a in idx)
        entry_violations.append((e, float(table[idx])))
        messages.append(f"entry p{list(e)} = {float(table[idx])!r} outside [0, 1]")
    clamped = bool(np.any((table < 0) & ~bad) or np.any((table > 1) & ~bad))
    if clamped:
        messages.append("entries within 1e-12 of [0, 1] were clamped")
    table = np.where(bad, table, np.clip(table, 0.0, 1.0))
    sums = table.sum(axis=3)
    row_violations = []
    for idx in zip(*np.nonzero(np.abs(sums - 1.0) > PROB_TOL)):
        r = tuple(int(a) + 1 for a in idx)
        row_violations.append((r, float(sums[idx])))
        messages.append(f"row p[{r[0]}][{r[1]}][{r[2]}][.] sums to {float(sums[idx])!r}")
    valid = not entry_violations and not row_violations
    return table, ValidationReport(M, valid, clamped, row_violations, entry_violations, messages)


@dataclass(frozen=True, eq=False)
class Kernel:
    """Immutable transition table of an ``M``-state nearest-neighbour PCA.

    Build through the family constructors or ``Kernel.from_table``; the
    constructor validates, clamps within ``PROB_TOL`` and freezes the array.
    """

    table: np.ndarray
    family: str = "raw"
    params: Mapping[str, Any] = field(default_factory=dict)
    clamped: bool = False

    def __post_init__(self) -> None:
        table, report = _clamp_and_check(self.table)
        if not report.valid:
            raise KernelError("invalid kernel: " + "; ".join(report.messages))
        if report.clamped:
            logger.warning("kernel entries clamped to [0, 1]")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "clamped", report.clamped)
        object.__setattr__(self, "params", dict(self.params))

    @classmethod
    def from_table(cls, table, family: str = "raw", params: Mapping[str, Any] | None = None) -> "Kernel":
        return cls(np.asarray(table, dtype=np.float64), family, params or {})

    @property
    def M(self) -> int:
        return self.table.shape[0]

    def prob(self, i: int, j: int, k: int, m: int) -> float:
        """``p[i][j][k][m]`` with 1-based states."""
        return float(self.table[i - 1, j - 1, k - 1, m - 1])

    def row(self, i: int, j: int, k: int) -> np.ndarray:
        return self.table[i - 1, j - 1, k - 1]

    def cumulative(self) -> np.ndarray:
        """Row CDFs, last column forced to exactly 1 for inverse sampling."""
        cum = np.cumsum(self.table, axis=3)
        cum[..., -1] = 1.0
        return cum

    def is_deterministic(self) -> bool:
        return bool(np.all((self.table == 0.0) | (self.table == 1.0)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Kernel):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.table, other.table)

    def __hash__(self) -> int:
        return hash(self.table.tobytes())

    def allclose(self, other: "Kernel", atol: float = 1e-12) -> bool:
        return self.M == other.M and np.allclose(self.table, other.table, rtol=0.0, atol=atol)

    def to_spec(self) -> dict[str, Any]:
        """Model-spec dict; family constructors round-trip through their parameters."""
        if self.family != "raw" and self.params:
            return {"family": self.family, **self.params}
        return {"family": "raw", "M": self.M, "p": self.table.ravel().tolist()}


def validate_kernel(k: Kernel | np.ndarray | Sequence) -> ValidationReport:
    """Check row sums and entry ranges of a kernel or a raw ``(M,M,M,M)`` table.

    Never raises for probability violations; the report lists them.
    """
    if isinstance(k, Kernel):
        _, report = _clamp_and_check(k.table)
        return report
    return _clamp_and_check(np.asarray(k, dtype=np.float64))[1]


def _check_prob(name: str, value: float) -> float:
    value = float(value)
    if not (-PROB_TOL <= value <= 1 + PROB_TOL) or not np.isfinite(value):
        raise KernelError(f"{name}={value!r} is not a probability")
    return min(max(value, 0.0), 1.0)


def noisy_voter_kernel(M: int, q: Sequence[float], alpha: float, beta: float, gamma: float) -> Kernel:
    """Multi-opinion noisy voter model.

    ``p[i][j][k][m] = alpha*1{i=m} + beta*1{j=m} + gamma*1{k=m} + q[m]``;
    ``q[m]`` is the spontaneous adoption probability of opinion ``m`` and
    alpha, beta, gamma are the weights of left neighbour, own opinion and
    right neighbour.
    """
    M = int(M)
    q = np.asarray(q, dtype=np.float64)
    if M < 2 or q.shape != (M,):
        raise KernelError(f"q must have length M={M}")
    if np.any(q < 0) or min(alpha, beta, gamma) < 0:
        raise KernelError("noisy voter weights must be nonnegative")
    total = alpha + beta + gamma + q.sum()
    if abs(total - 1.0) > PROB_TOL:
        raise KernelError(f"alpha+beta+gamma+sum(q) must equal 1, got {float(total)!r}")
    eye = np.eye(M)
    table = (
        alpha * eye[:, None, None, :]
        + beta * eye[None, :, None, :]
        + gamma * eye[None, None, :, :]
        + q[None, None, None, :]
    )
    params = {"M": M, "q": q.tolist(), "alpha": alpha, "beta": beta, "gamma": gamma}
    return Kernel(table, "noisy_voter", params)


def domany_kinzel_kernel(a0: float, a1: float, a2: float) -> Kernel:
    """Domany-Kinzel PCA: a site becomes '1' with probability ``a[n]``,
    ``n`` the number of '1's among its two neighbours."""
    a = [_check_prob(f"a{n}", v) for n, v in enumerate((a0, a1, a2))]
    table = np.empty((2, 2, 2, 2))
    for i in range(2):
        for k in range(2):
            ones = (i == 0) + (k == 0)
            table[i, :, k, 0] = a[ones]
            table[i, :, k, 1] = 1.0 - a[ones]
    return Kernel(table, "dk", {"a": a})


def competition_kernel(M: int, p: Sequence[float], alpha: Sequence[float], beta: Sequence[float]) -> Kernel:
    """Multi-species competition model (middle-coordinate independent).

    ``p`` has length ``M`` (spontaneous appearance of each species);
    ``alpha`` and ``beta`` are indexed by species ``2..M`` (length ``M-1``).
    When the two neighbours differ, the stronger species ``m`` wins with
    probability ``alpha[m]`` if it sits on the right and ``beta[m]`` if it
    sits on the left.
    """
    M = int(M)
    p = np.asarray(p, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if M < 2 or p.shape != (M,) or alpha.shape != (M - 1,) or beta.shape != (M - 1,):
        raise KernelError("competition kernel needs len(p)=M and len(alpha)=len(beta)=M-1")
    if np.any(p < 0):
        raise KernelError("spontaneous probabilities must be nonnegative")
    ptot = p.sum()
    if ptot > 1 + PROB_TOL:
        raise KernelError(f"sum(p)={float(ptot)!r} exceeds 1")
    for name, w in (("alpha", alpha), ("beta", beta)):
        if np.any(w > 1) or np.any(w < 0.5) or np.any(np.diff(w) < 0):
            raise KernelError(f"{name} must satisfy 1/2 <= {name}_2 <= ... <= {name}_M <= 1, got {w.tolist()}")
    rest = 1.0 - ptot
    table = np.empty((M, M, M, M))
    for i in range(M):
        for k in range(M):
            row = p.copy()
            if i == k:
                row[i] += rest
            elif i < k:
                # stronger species k on the right
                row[k] += rest * alpha[k - 1]
                row[i] += rest * (1 - alpha[k - 1])
            else:
                row[i] += rest * beta[i - 1]
                row[k] += rest * (1 - beta[i - 1])
            table[i, :, k, :] = row
    params = {"M": M, "p": p.tolist(), "alpha": alpha.tolist(), "beta": beta.tolist()}
    return Kernel(table, "competition", params)


def convex_g_kernel(M: int, g: Sequence[Sequence[float]], tol: float = PROB_TOL) -> Kernel:
    """Monotone kernel whose cumulants depend on the neighbour sum only.

    ``g[k-1][l-2]`` is ``g_k(l)`` for ``k = 1..M-1`` and ``l = 2..2M``; the
    cumulant ``S^k_{i,j} = g_k(i+j)`` fixes ``p[i][.][j][m] = S^m - S^{m-1}``.
    """
    M = int(M)
    g = np.asarray(g, dtype=np.float64)
    if M < 2 or g.shape != (M - 1, 2 * M - 1):
        raise KernelError(f"g must have shape (M-1, 2M-1) = {(M - 1, 2 * M - 1)}, got {g.shape}")
    for k in range(M - 1):
        for li in range(2 * M - 3):
            if 0.5 * (g[k, li] + g[k, li + 2]) < g[k, li + 1] - tol:
                raise KernelError(f"g_{k + 1} violates convexity at l={li + 2}")
    for k in range(M - 1):
        for li in range(2 * M - 1):
            if not (-tol <= g[k, li] <= 1 + tol):
                raise KernelError(f"g_{k + 1}({li + 2})={float(g[k, li])!r} outside [0, 1]")
            if k > 0 and g[k, li] < g[k - 1, li] - tol:
                raise KernelError(f"g not nondecreasing in k at (k={k + 1}, l={li + 2})")
            if li + 1 < 2 * M - 1 and g[k, li + 1] > g[k, li] + tol:
                raise KernelError(f"g_{k + 1} increases at l={li + 2}; recovered probabilities would be negative")
    g = np.clip(g, 0.0, 1.0)
    S = np.zeros((M, M, M + 1))
    for i in range(M):
        for j in range(M):
            S[i, j, 1:M] = g[:, i + j]
            S[i, j, M] = 1.0
    probs = np.diff(S, axis=2)
    for i, j, m in zip(*np.nonzero(probs < -tol)):
        raise KernelError(f"recovered p[{i + 1}][.][{j + 1}][{m + 1}] = {float(probs[i, j, m])!r} is negative")
    table = np.broadcast_to(probs[:, None, :, :], (M, M, M, M)).copy()
    return Kernel(table, "convex_g", {"M": M, "g": g.tolist()})


@dataclass(frozen=True)
class StateRelabeling:
    """Permutation ``sigma`` of ``{1..M}``; ``perm[i-1] = sigma(i)``."""

    perm: tuple[int, ...]

    def __post_init__(self) -> None:
        perm = tuple(int(s) for s in self.perm)
        if sorted(perm) != list(range(1, len(perm) + 1)):
            raise KernelError(f"{perm} is not a permutation of 1..{len(perm)}")
        object.__setattr__(self, "perm", perm)

    @classmethod
    def swap(cls, M: int, a: int, b: int) -> "StateRelabeling":
        perm = list(range(1, M + 1))
        perm[a - 1], perm[b - 1] = b, a
        return cls(tuple(perm))

    def __call__(self, state: int) -> int:
        return self.perm[state - 1]

    def inverse(self) -> "StateRelabeling":
        inv = [0] * len(self.perm)
        for i, s in enumerate(self.perm, start=1):
            inv[s - 1] = i
        return StateRelabeling(tuple(inv))

    def compose(self, other: "StateRelabeling") -> "StateRelabeling":
        """``self o other``."""
        return StateRelabeling(tuple(self(other(i)) for i in range(1, len(self.perm) + 1)))


def relabel_states(k: Kernel, sigma: StateRelabeling | Sequence[int]) -> Kernel:
    """Kernel ``p'`` with ``p'[s(i)][s(j)][s(k)][s(m)] = p[i][j][k][m]``."""
    if not isinstance(sigma, StateRelabeling):
        sigma = StateRelabeling(tuple(sigma))
    if len(sigma.perm) != k.M:
        raise KernelError(f"permutation of length {len(sigma.perm)} for a {k.M}-state kernel")
    # p'[a,b,c,d] = p[inv a, inv b, inv c, inv d]
    inv = np.array(sigma.inverse().perm) - 1
    table = k.table[np.ix_(inv, inv, inv, inv)]
    return Kernel(table, "raw", {})


def kernel_from_spec(spec: Mapping[str, Any]) -> Kernel:
    """Build a kernel from a model-spec mapping (see README for the format)."""
    if not isinstance(spec, Mapping) or "family" not in spec:
        raise KernelError("model spec must be an object with a 'family' field")
    family = spec["family"]
    try:
        if family == "dk":
            a = spec["a"]
            if len(a) != 3:
                raise KernelError("dk spec needs a = [a0, a1, a2]")
            return domany_kinzel_kernel(*a)
        if family == "noisy_voter":
            return noisy_voter_kernel(spec["M"], spec["q"], spec["alpha"], spec["beta"], spec["gamma"])
        if family == "competition":
            return competition_kernel(spec["M"], spec["p"], spec["alpha"], spec["beta"])
        if family == "convex_g":
            return convex_g_kernel(spec["M"], spec["g"])
        if family == "raw":
            M = int(spec["M"])
            flat = np.asarray(spec["p"], dtype=np.float64)
            if flat.size != M**4:
                raise KernelError(f"raw spec needs M**4 = {M**4} entries, got {flat.size}")
            return Kernel(flat.reshape(M, M, M, M), "raw", {})
    except KeyError as exc:
        raise KernelError(f"{family} spec is missing field {exc}") from None
    except TypeError as exc:
        raise KernelError(f"malformed {family} spec: {exc}") from None
    raise KernelError(f"unknown model family {family!r}")


def load_model_spec(path: str) -> dict[str, Any]:
    """Read a JSON model spec; ``KernelError`` carries the parse location."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise KernelError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def spec_hash(spec: Mapping[str, Any]) -> str:
    canonical = json.dumps(spec, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
