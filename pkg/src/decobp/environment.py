"""Environment specifications, samplers and regeneration structure.

An environment assigns a type-1 reproduction law to every generation.  Three
kinds are supported: a constant law, IID draws from a finite mixture, and a
stationary finite-state Markov chain.  State sequences are stored as small
integer arrays indexing ``spec.laws``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Sequence

import numpy as np

from .offspring import OffspringLaw1, law1_from_dict

MAX_STATES = 64


class InvalidSpecError(ValueError):
    pass


def _as_probs(p, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidSpecError(f"{name} must be a nonempty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise InvalidSpecError(f"{name} must be nonnegative and sum to 1 (sum={p.sum()!r})")
    return p


def is_irreducible(P: np.ndarray) -> bool:
    n = P.shape[0]
    adj = P > 0
    # reachability from state 0 forwards and backwards
    for mat in (adj, adj.T):
        seen = np.zeros(n, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(mat[i]):
                if not seen[j]:
                    seen[j] = True
                    frontier.append(j)
        if not seen.all():
            return False
    return True


def period(P: np.ndarray) -> int:
    """Period of an irreducible chain (gcd of cycle lengths through state 0)."""
    n = P.shape[0]
    if np.any(np.diag(P) > 0):
        return 1
    adj = P > 0
    # BFS levels; the period is gcd over edges (i->j) of level[i] + 1 - level[j]
    level = np.full(n, -1)
    level[0] = 0
    queue = [0]
    while queue:
        i = queue.pop(0)
        for j in np.flatnonzero(adj[i]):
            if level[j] < 0:
                level[j] = level[i] + 1
                queue.append(j)
    diffs = [int(level[i] + 1 - level[j]) for i in range(n) for j in np.flatnonzero(adj[i])]
    return reduce(math.gcd, (abs(d) for d in diffs), 0)


def stationary_distribution(P) -> np.ndarray:
    """Solve ``pi P = pi``, ``sum(pi) = 1`` by a dense linear solve."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidSpecError("transition matrix must be square")
    n = P.shape[0]
    if n > MAX_STATES:
        raise InvalidSpecError(f"at most {MAX_STATES} states are supported")
    if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        raise InvalidSpecError("transition matrix must be row-stochastic")
    if not is_irreducible(P):
        raise InvalidSpecError("transition matrix is reducible")
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    # one refinement step keeps the residual at rounding level
    r = b - A @ pi
    pi = pi + np.linalg.lstsq(A, r, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def two_state_transition(pi1: float, d: float) -> np.ndarray:
    pi2 = 1.0 - pi1
    _check_two_state(pi1, d)
    return np.array([[1.0 - d * pi2, d * pi2], [d * pi1, 1.0 - d * pi1]])


def _check_two_state(pi1: float, d: float) -> None:
    pi2 = 1.0 - pi1
    if not (0.0 < pi1 < 1.0):
        raise InvalidSpecError(f"pi1 must lie in (0, 1), got {pi1}")
    if not (0.0 < d < min(1.0 / pi1, 1.0 / pi2)):
        raise InvalidSpecError(f"d must lie in (0, min(1/pi1, 1/pi2)), got {d}")


@dataclass(frozen=True, eq=False)
class EnvironmentSpec:
    kind: str  # constant | iid | markov
    laws: tuple
    probs: np.ndarray
    transition: np.ndarray | None = None
    two_state: tuple | None = None  # (pi1, d) when built from the compact form

    def __eq__(self, other):
        return isinstance(other, EnvironmentSpec) and self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))

    @classmethod
    def constant(cls, law: OffspringLaw1) -> "EnvironmentSpec":
        return cls("constant", (law,), np.array([1.0]))

    @classmethod
    def iid(cls, laws: Sequence[OffspringLaw1], probs) -> "EnvironmentSpec":
        p = _as_probs(probs, "state probabilities")
        if len(laws) != p.size:
            raise InvalidSpecError("one probability per law is required")
        if p.size > MAX_STATES:
            raise InvalidSpecError(f"at most {MAX_STATES} states are supported")
        return cls("iid", tuple(laws), p)

    @classmethod
    def markov(cls, laws: Sequence[OffspringLaw1], transition) -> "EnvironmentSpec":
        P = np.asarray(transition, dtype=float)
        if P.shape != (len(laws), len(laws)):
            raise InvalidSpecError("transition matrix shape must match the number of laws")
        pi = stationary_distribution(P)
        if period(P) != 1:
            raise InvalidSpecError("transition matrix is periodic")
        resid = np.max(np.abs(pi @ P - pi))
        if resid > 1e-12:
            raise InvalidSpecError(f"stationary vector residual {resid:.3g} too large")
        return cls("markov", tuple(laws), pi, P)

    @classmethod
    def from_two_state(cls, pi1: float, d: float, laws: Sequence[OffspringLaw1]) -> "EnvironmentSpec":
        if len(laws) != 2:
            raise InvalidSpecError("two-state environment needs exactly two laws")
        base = cls.markov(laws, two_state_transition(pi1, d))
        # the closed-form stationary vector is exact
        return cls("markov", base.laws, np.array([pi1, 1.0 - pi1]), base.transition, (float(pi1), float(d)))

    @property
    def n_states(self) -> int:
        return len(self.laws)

    @property
    def stationary(self) -> np.ndarray:
        return self.probs

    def moments(self):
        return [law.moments() for law in self.laws]

    def zeta_values(self) -> np.ndarray:
        return np.array([zeta(law) for law in self.laws])

    def mean_zeta(self) -> float:
        """``E[log mu1]`` under the stationary law."""
        return float(self.probs @ self.zeta_values())

    def theta_values(self) -> tuple[np.ndarray, np.ndarray]:
        ms = self.moments()
        return np.array([m.theta1 for m in ms]), np.array([m.theta2 for m in ms])

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "constant":
            return {"kind": "constant", "law": self.laws[0].to_dict()}
        if self.kind == "iid":
            return {
                "kind": "iid",
                "states": [law.to_dict() for law in self.laws],
                "probs": [float(x) for x in self.probs],
            }
        if self.two_state is not None:
            pi1, d = self.two_state
            return {"kind": "two_state", "pi1": pi1, "d": d, "laws": [law.to_dict() for law in self.laws]}
        return {
            "kind": "markov",
            "states": [law.to_dict() for law in self.laws],
            "transition": [[float(x) for x in row] for row in self.transition],
        }


def env_from_dict(d: dict[str, Any]) -> EnvironmentSpec:
    kind = d.get("kind")
    if kind == "constant":
        return EnvironmentSpec.constant(law1_from_dict(d["law"]))
    if kind == "iid":
        return EnvironmentSpec.iid([law1_from_dict(x) for x in d["states"]], d["probs"])
    if kind == "markov":
        return EnvironmentSpec.markov([law1_from_dict(x) for x in d["states"]], d["transition"])
    if kind == "two_state":
        return EnvironmentSpec.from_two_state(float(d["pi1"]), float(d["d"]), [law1_from_dict(x) for x in d["laws"]])
    raise InvalidSpecError(f"unknown environment kind {kind!r}")


def zeta(law1: OffspringLaw1) -> float:
    """Step of the associated random walk, ``log mu1``."""
    mu1 = law1.moments().mu1
    if mu1 <= 0:
        raise ValueError("zeta needs mu1 > 0")
    return math.log(mu1)


# ---------------------------------------------------------------------------
# sampling


@dataclass(frozen=True)
class EnvSequence:
    states: np.ndarray
    spec: EnvironmentSpec

    def __len__(self) -> int:
        return len(self.states)


def _draw_categorical(rng: np.random.Generator, probs: np.ndarray, size) -> np.ndarray:
    if probs.size == 1:
        return np.zeros(size, dtype=np.int8)
    u = rng.random(size)
    if probs.size == 2:
        return (u >= probs[0]).astype(np.int8)
    cum = np.cumsum(probs)[:-1]
    return np.searchsorted(cum, u, side="right").astype(np.int8)


def sample_env_block(
    spec: EnvironmentSpec, R: int, n: int, rng: np.random.Generator, after: np.ndarray | None = None
) -> np.ndarray:
    """``(R, n)`` int8 array of independent environment sequences.

    The array is a transposed view of time-major storage, so ``block.T`` is
    contiguous.  With ``after`` given, row ``i`` continues a chain whose last
    state was ``after[i]`` instead of starting from the stationary law.
    """
    if spec.kind == "constant":
        return np.zeros((n, R), dtype=np.int8).T
    if spec.kind == "iid":
        return _draw_categorical(rng, spec.probs, (n, R)).T
    out = np.empty((n, R), dtype=np.int8)
    cum = np.cumsum(spec.transition, axis=1)[:, :-1]
    if after is None:
        out[0] = _draw_categorical(rng, spec.probs, R)
    for k in range(0 if after is not None else 1, n):
        u = rng.random(R)
        prev = np.asarray(after, dtype=np.int8) if k == 0 else out[k - 1]
        if spec.n_states == 2:
            out[k] = u >= cum[prev, 0]
        else:
            out[k] = (u[:, None] >= cum[prev]).sum(axis=1)
    return out.T


def sample_env(spec: EnvironmentSpec, n: int, rng: np.random.Generator) -> EnvSequence:
    if n < 1:
        raise ValueError("sequence length must be positive")
    return EnvSequence(sample_env_block(spec, 1, n, rng)[0], spec)


# ---------------------------------------------------------------------------
# regeneration


@dataclass(frozen=True)
class RegenerationDecomposition:
    taus: np.ndarray  # tau_0 = 0 < tau_1 < ... (all returns inside the sequence)
    length: int  # length of the underlying sequence

    @property
    def cycle_lengths(self) -> np.ndarray:
        """Lengths of the complete cycles."""
        return np.diff(self.taus)

    @property
    def incomplete_tail(self) -> int:
        """Length of the trailing incomplete cycle (0 if the sequence ends on a return)."""
        return self.length - int(self.taus[-1])

    def cycles(self, states: np.ndarray) -> list[np.ndarray]:
        return [states[a:b] for a, b in zip(self.taus[:-1], self.taus[1:])]


def regenerations(seq) -> RegenerationDecomposition:
    """Return times of the sequence to its initial state."""
    states = np.asarray(seq.states if isinstance(seq, EnvSequence) else seq)
    if states.size == 0:
        raise ValueError("empty sequence")
    hits = np.flatnonzero(states == states[0])
    return RegenerationDecomposition(hits.astype(np.int64), int(states.size))


@dataclass(frozen=True)
class CycleBatch:
    """Independent regeneration cycles, each started from the stationary law."""

    start: np.ndarray
    tau: np.ndarray
    zeta_hat: np.ndarray
    offsets: np.ndarray | None = None  # ragged state storage when requested
    flat_states: np.ndarray | None = None

    def states(self, i: int) -> np.ndarray:
        if self.flat_states is None:
            raise ValueError("cycle states were not kept")
        return self.flat_states[self.offsets[i] : self.offsets[i + 1]]

    def __len__(self) -> int:
        return len(self.tau)


def sample_cycles(
    spec: EnvironmentSpec,
    R: int,
    rng: np.random.Generator,
    keep_states: bool = False,
    start: np.ndarray | None = None,
) -> CycleBatch:
    """Simulate ``R`` first regeneration cycles.

    ``start`` fixes the initial states; by default they are drawn from the
    stationary law.  Constant and IID environments are handled too (for IID,
    the return time is geometric).
    """
    zeta_vals = spec.zeta_values()
    if start is None:
        start = _draw_categorical(rng, spec.probs, R)
    start = np.asarray(start, dtype=np.int8)
    tau = np.ones(R, dtype=np.int64)
    zhat = zeta_vals[start].astype(float)
    steps = [start.copy()] if keep_states else None
    cur = start.copy()
    active = np.ones(R, dtype=bool)
    if spec.kind == "constant":
        active[:] = False
    cum = None if spec.kind != "markov" else np.cumsum(spec.transition, axis=1)[:, :-1]
    while active.any():
        idx = np.flatnonzero(active)
        if spec.kind == "iid":
            nxt = _draw_categorical(rng, spec.probs, idx.size)
        else:
            u = rng.random(idx.size)
            nxt = (u[:, None] >= cum[cur[idx]]).sum(axis=1).astype(np.int8)
        back = nxt == start[idx]
        cur[idx] = nxt
        cont = idx[~back]
        tau[cont] += 1
        zhat[cont] += zeta_vals[nxt[~back]]
        if keep_states:
            row = np.full(R, -1, dtype=np.int8)
            row[cont] = nxt[~back]
            steps.append(row)
        active[idx[back]] = False
    if not keep_states:
        return CycleBatch(start, tau, zhat)
    mat = np.stack(steps, axis=1)
    offsets = np.concatenate([[0], np.cumsum(tau)])
    flat = mat[mat >= 0] if mat.ndim == 2 else mat
    # row-major masking keeps each cycle contiguous and in time order
    return CycleBatch(start, tau, zhat, offsets, flat.astype(np.int8))


# ---------------------------------------------------------------------------
# two-state closed forms


@dataclass(frozen=True)
class TwoStateTauLaw:
    pi1: float
    d: float

    def __post_init__(self):
        _check_two_state(self.pi1, self.d)

    @property
    def pi2(self) -> float:
        return 1.0 - self.pi1

    def pmf(self, k):
        k = np.asarray(k)
        p1, p2, d = self.pi1, self.pi2, self.d
        with np.errstate(invalid="ignore"):
            tail = d * p1 * p2 * (
                d * p1 * (1.0 - d * p1) ** np.maximum(k - 2, 0) + d * p2 * (1.0 - d * p2) ** np.maximum(k - 2, 0)
            )
        out = np.where(k == 1, 1.0 - 2.0 * p1 * p2 * d, tail)
        out = np.where(k < 1, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def conditional_pmf(self, start: int, k):
        """``P[tau = k | e_0 = start]``."""
        k = np.asarray(k)
        p = (self.pi1, self.pi2)
        leave = self.d * p[1 - start]
        back = self.d * p[start]
        out = np.where(k == 1, 1.0 - leave, leave * back * (1.0 - back) ** np.maximum(k - 2, 0))
        out = np.where(k < 1, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def _summed(self, weight) -> float:
        # Sum weight(k) * pmf(k) term by term until the geometric tails are exhausted.
        x_min = self.d * min(self.pi1, self.pi2)
        kmax = 2 + int(math.ceil(-40.0 * math.log(10.0) / math.log1p(-x_min))) if x_min < 1 else 2
        k = np.arange(1, kmax + 1)
        return math.fsum((weight(k) * self.pmf(k)).tolist())

    def total_mass(self) -> float:
        return self._summed(lambda k: np.ones_like(k, dtype=float))

    def mean_minus_one(self) -> float:
        """``E[tau - 1]`` by direct summation of the pmf."""
        return self._summed(lambda k: (k - 1).astype(float))

    def second_factorial(self) -> float:
        """``E[tau (tau - 1)]`` by direct summation of the pmf."""
        return self._summed(lambda k: (k * (k - 1)).astype(float))

    def reference_second_factorial(self) -> float:
        return 2.0 / (self.d * self.pi1 * self.pi2) - 4.0 / self.d

    def mean_cycle_sum(self, b1: float, b2: float) -> float:
        """``E[sum_{k<tau} b(e_k)]`` by conditioning on the start and the sojourn.

        From state ``i`` the cycle either stays one step or visits ``j`` for a
        geometric number of steps with mean ``1 / (d pi_i)``.
        """
        p, b, d = (self.pi1, self.pi2), (b1, b2), self.d
        total = 0.0
        for i in (0, 1):
            j = 1 - i
            leave = d * p[j]
            total += p[i] * ((1.0 - leave) * b[i] + leave * (b[i] + b[j] / (d * p[i])))
        return total

    def support_until(self, tail: float = 1e-12) -> np.ndarray:
        k = 1
        mass = self.pmf(1)
        while 1.0 - mass >= tail:
            k += 1
            mass += self.pmf(k)
            if k > 10_000_000:
                break
        return np.arange(1, k + 1)


def two_state_tau_law(pi1: float, d: float, k: int) -> float:
    if k < 1:
        raise ValueError("k must be at least 1")
    return TwoStateTauLaw(pi1, d).pmf(k)
