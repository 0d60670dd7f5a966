"""Reproduction laws, their generating functions, moments and samplers.

Two kinds of laws appear in the model:

* ``OffspringLaw1`` -- the joint law of ``(xi1, xi2)``, the numbers of type-1
  and type-2 daughters of a type-1 mother.  Available as a product of two
  univariate laws or as a finite joint table.
* ``OffspringLaw2`` -- the law of ``eta``, the number of (type-2) daughters of
  a type-2 mother.  Always critical: ``E[eta] == 1``.

Generating functions are exposed in two forms.  ``pgf(s)`` is the usual
``E[s**X]``; ``pgf_bar(u) = 1 - pgf(1 - u)`` is its complement, evaluated
without cancellation.  All survival-probability recursions in the package run
on the complement form, because the quantities of interest are small numbers
of the form ``1 - (something close to 1)``.

Summed samplers (``sample_sum``) draw the total offspring of ``N`` independent
mothers directly (negative binomial for geometric laws, Poisson for Poisson
laws, multinomial for tables) so that a generation costs O(1) per replicate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import stats

POISSON_TAIL = 1e-14


class DomainError(ValueError):
    pass


class LawError(ValueError):
    pass


def _one_minus_pow(u, j: int):
    # 1 - (1-u)**j for integer j >= 1, accurate when u is small.
    with np.errstate(divide="ignore"):
        return -np.expm1(j * np.log1p(-np.asarray(u, dtype=float)))


def _nonzero_sum(sampler, counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    out = np.zeros(counts.shape, dtype=np.int64)
    live = counts > 0
    if live.any():
        out[live] = sampler(counts[live])
    return out


def poisson_truncation(mean: float, tail: float = POISSON_TAIL) -> int:
    """Smallest ``k`` with ``P[X > k] < tail`` for ``X ~ Poisson(mean)``."""
    k = max(0, int(mean))
    while stats.poisson.sf(k, mean) >= tail:
        k += 1
    return k


# ---------------------------------------------------------------------------
# univariate laws


class UnivariateLaw:
    """Common interface of the univariate families."""

    kind: str = ""

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def fact2(self) -> float:
        """Second factorial moment ``E[X(X-1)]``."""
        raise NotImplementedError

    def pgf(self, s):
        raise NotImplementedError

    def pgf_bar(self, u):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def sample_sum(self, rng: np.random.Generator, counts) -> np.ndarray:
        raise NotImplementedError

    def pmf_table(self, tail: float = POISSON_TAIL) -> tuple[np.ndarray, np.ndarray]:
        """Support points and probabilities, enumerated to mass ``1 - tail``."""
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Geometric(UnivariateLaw):
    """``P[X=k] = p (1-p)**k`` on ``{0, 1, ...}`` with ``mean = (1-p)/p``."""

    mean_value: float
    kind: str = field(default="geometric", init=False)

    def __post_init__(self):
        if not (self.mean_value > 0 and math.isfinite(self.mean_value)):
            raise LawError(f"geometric mean must be positive and finite, got {self.mean_value}")

    @property
    def p(self) -> float:
        return 1.0 / (1.0 + self.mean_value)

    @property
    def mean(self) -> float:
        return self.mean_value

    @property
    def fact2(self) -> float:
        return 2.0 * self.mean_value**2

    def pgf(self, s):
        return 1.0 / (1.0 + self.mean_value * (1.0 - s))

    def pgf_bar(self, u):
        mu = self.mean_value * u
        return mu / (1.0 + mu)

    def sample(self, rng, size=None):
        return rng.geometric(self.p, size=size) - 1

    def sample_sum(self, rng, counts):
        p = self.p
        return _nonzero_sum(lambda n: rng.negative_binomial(n, p), counts)

    def pmf_table(self, tail=POISSON_TAIL):
        q = 1.0 - self.p
        kmax = max(1, int(math.ceil(math.log(tail) / math.log(q))))
        k = np.arange(kmax + 1)
        return k, self.p * q**k

    def to_dict(self):
        return {"kind": "geometric", "mean": self.mean_value}


@dataclass(frozen=True)
class Poisson(UnivariateLaw):
    """Poisson law; the pgf is analytic, truncation only governs enumeration."""

    mean_value: float
    kind: str = field(default="poisson", init=False)

    def __post_init__(self):
        if not (self.mean_value > 0 and math.isfinite(self.mean_value)):
            raise LawError(f"poisson mean must be positive and finite, got {self.mean_value}")

    @property
    def truncation(self) -> int:
        return poisson_truncation(self.mean_value)

    @property
    def mean(self):
        return self.mean_value

    @property
    def fact2(self):
        return self.mean_value**2

    def pgf(self, s):
        return np.exp(self.mean_value * (s - 1.0))

    def pgf_bar(self, u):
        return -np.expm1(-self.mean_value * u)

    def sample(self, rng, size=None):
        return rng.poisson(self.mean_value, size=size)

    def sample_sum(self, rng, counts):
        lam = self.mean_value
        return _nonzero_sum(lambda n: rng.poisson(lam * n), counts)

    def pmf_table(self, tail=POISSON_TAIL):
        k = np.arange(poisson_truncation(self.mean_value, tail) + 1)
        return k, stats.poisson.pmf(k, self.mean_value)

    def to_dict(self):
        return {"kind": "poisson", "mean": self.mean_value}


@dataclass(frozen=True)
class Bernoulli(UnivariateLaw):
    p: float
    kind: str = field(default="bernoulli", init=False)

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise LawError(f"bernoulli p must lie in [0, 1], got {self.p}")

    @property
    def mean(self):
        return self.p

    @property
    def fact2(self):
        return 0.0

    def pgf(self, s):
        return 1.0 - self.p + self.p * s

    def pgf_bar(self, u):
        return self.p * u

    def sample(self, rng, size=None):
        return rng.binomial(1, self.p, size=size)

    def sample_sum(self, rng, counts):
        return rng.binomial(np.asarray(counts, dtype=np.int64), self.p)

    def pmf_table(self, tail=POISSON_TAIL):
        return np.array([0, 1]), np.array([1.0 - self.p, self.p])

    def to_dict(self):
        return {"kind": "bernoulli", "p": self.p}


@dataclass(frozen=True)
class Deterministic(UnivariateLaw):
    value: int
    kind: str = field(default="deterministic", init=False)

    def __post_init__(self):
        if int(self.value) != self.value or self.value < 0:
            raise LawError(f"deterministic value must be a nonnegative integer, got {self.value}")

    @property
    def mean(self):
        return float(self.value)

    @property
    def fact2(self):
        return float(self.value * (self.value - 1))

    def pgf(self, s):
        return np.asarray(s, dtype=float) ** self.value if self.value else np.ones_like(np.asarray(s, dtype=float))

    def pgf_bar(self, u):
        if self.value == 0:
            return np.zeros_like(np.asarray(u, dtype=float))
        return _one_minus_pow(u, self.value)

    def sample(self, rng, size=None):
        if size is None:
            return int(self.value)
        return np.full(size, self.value, dtype=np.int64)

    def sample_sum(self, rng, counts):
        return np.asarray(counts, dtype=np.int64) * int(self.value)

    def pmf_table(self, tail=POISSON_TAIL):
        return np.array([self.value]), np.array([1.0])

    def to_dict(self):
        return {"kind": "deterministic", "value": int(self.value)}


@dataclass(frozen=True)
class FiniteTable(UnivariateLaw):
    values: tuple
    probs: tuple
    kind: str = field(default="finite_table", init=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        p = np.asarray(self.probs, dtype=float)
        if v.shape != p.shape or v.ndim != 1 or v.size == 0:
            raise LawError("finite table needs matching nonempty value and probability lists")
        if np.any(v < 0) or np.any(v != np.round(v)):
            raise LawError("finite table values must be nonnegative integers")
        if len(set(v.tolist())) != v.size:
            raise LawError("finite table values must be distinct")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise LawError(f"finite table probabilities must be nonnegative and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "values", tuple(int(x) for x in v))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def mean(self):
        return float(sum(j * p for j, p in zip(self.values, self.probs)))

    @property
    def fact2(self):
        return float(sum(j * (j - 1) * p for j, p in zip(self.values, self.probs)))

    def pgf(self, s):
        s = np.asarray(s)
        return sum(p * s**j for j, p in zip(self.values, self.probs))

    def pgf_bar(self, u):
        u = np.asarray(u, dtype=float)
        out = np.zeros_like(u)
        for j, p in zip(self.values, self.probs):
            if j > 0 and p > 0:
                out = out + p * _one_minus_pow(u, j)
        return out

    def sample(self, rng, size=None):
        return rng.choice(np.asarray(self.values), size=size, p=np.asarray(self.probs))

    def sample_sum(self, rng, counts):
        counts = np.asarray(counts, dtype=np.int64)
        draws = rng.multinomial(counts, np.asarray(self.probs))
        return draws @ np.asarray(self.values, dtype=np.int64)

    def pmf_table(self, tail=POISSON_TAIL):
        return np.asarray(self.values), np.asarray(self.probs)

    def to_dict(self):
        return {"kind": "finite_table", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class LinearFractional(UnivariateLaw):
    """``P[X=k] = b p**(k-1)`` for ``k >= 1`` and ``P[X=0] = 1 - b/(1-p)``."""

    b: float
    p: float
    kind: str = field(default="linear_fractional", init=False)

    def __post_init__(self):
        if not (0.0 <= self.p < 1.0):
            raise LawError(f"linear-fractional p must lie in [0, 1), got {self.p}")
        if not (0.0 < self.b <= 1.0 - self.p + 1e-15):
            raise LawError(f"linear-fractional b must lie in (0, 1-p], got {self.b}")

    @property
    def p_nonzero(self) -> float:
        return min(1.0, self.b / (1.0 - self.p))

    @property
    def mean(self):
        return self.b / (1.0 - self.p) ** 2

    @property
    def fact2(self):
        return 2.0 * self.b * self.p / (1.0 - self.p) ** 3

    def pgf(self, s):
        return 1.0 - self.p_nonzero + self.b * s / (1.0 - self.p * s)

    def pgf_bar(self, u):
        return self.b * u / ((1.0 - self.p) * (1.0 - self.p + self.p * u))

    def sample(self, rng, size=None):
        nz = rng.binomial(1, self.p_nonzero, size=size)
        return nz * rng.geometric(1.0 - self.p, size=size)

    def sample_sum(self, rng, counts):
        k = rng.binomial(np.asarray(counts, dtype=np.int64), self.p_nonzero)
        q = 1.0 - self.p
        return k + _nonzero_sum(lambda n: rng.negative_binomial(n, q), k)

    def pmf_table(self, tail=POISSON_TAIL):
        kmax = 1 if self.p == 0 else max(1, int(math.ceil(math.log(tail) / math.log(self.p))) + 1)
        k = np.arange(kmax + 1)
        pmf = np.where(k == 0, 1.0 - self.p_nonzero, self.b * float(self.p) ** np.maximum(k - 1, 0))
        return k, pmf

    def to_dict(self):
        return {"kind": "linear_fractional", "b": self.b, "p": self.p}


def univariate_from_dict(d: dict[str, Any]) -> UnivariateLaw:
    kind = d.get("kind")
    if kind == "geometric":
        return Geometric(float(d["mean"]))
    if kind == "poisson":
        return Poisson(float(d["mean"]))
    if kind == "bernoulli":
        return Bernoulli(float(d["p"]))
    if kind == "deterministic":
        return Deterministic(int(d["value"]))
    if kind == "finite_table":
        return FiniteTable(tuple(d["values"]), tuple(d["probs"]))
    if kind == "linear_fractional":
        return LinearFractional(float(d["b"]), float(d["p"]))
    raise LawError(f"unknown univariate law kind {kind!r}")


# ---------------------------------------------------------------------------
# type-1 laws


@dataclass(frozen=True)
class MomentSet:
    """First and second factorial moments of ``(xi1, xi2)``.

    ``cross`` is the mixed moment ``E[xi1 xi2]``; it equals ``mu1 * theta1``
    whenever the two counts are independent.
    """

    mu1: float
    mu2: float
    theta1: float
    theta2: float
    cross: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.mu1, self.mu2, self.theta1, self.theta2)


class OffspringLaw1:
    family: str = ""

    def pgf(self, s1, s2):
        raise NotImplementedError

    def pgf_bar(self, u1, u2):
        """``1 - f(1-u1, 1-u2)``."""
        raise NotImplementedError

    def moments(self) -> MomentSet:
        raise NotImplementedError

    def sample(self, rng, size=None):
        raise NotImplementedError

    def sample_sum(self, rng, counts) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    def is_regular(self) -> bool:
        """True when ``mu1 > 0`` and ``theta1 > 0`` (needed by the asymptotics)."""
        m = self.moments()
        return m.mu1 > 0 and m.theta1 > 0


@dataclass(frozen=True)
class ProductLaw(OffspringLaw1):
    """Independent ``xi1 ~ xi1_law`` and ``xi2 ~ xi2_law``."""

    xi1: UnivariateLaw
    xi2: UnivariateLaw
    family: str = field(default="product", init=False)

    def pgf(self, s1, s2):
        return self.xi1.pgf(s1) * self.xi2.pgf(s2)

    def pgf_bar(self, u1, u2):
        g1 = self.xi1.pgf_bar(u1)
        g2 = self.xi2.pgf_bar(u2)
        return g1 + g2 - g1 * g2

    def moments(self):
        return MomentSet(
            mu1=self.xi1.mean,
            mu2=self.xi1.fact2,
            theta1=self.xi2.mean,
            theta2=self.xi2.fact2,
            cross=self.xi1.mean * self.xi2.mean,
        )

    def sample(self, rng, size=None):
        return self.xi1.sample(rng, size), self.xi2.sample(rng, size)

    def sample_sum(self, rng, counts):
        return self.xi1.sample_sum(rng, counts), self.xi2.sample_sum(rng, counts)

    def to_dict(self):
        return {"family": "product", "xi1": self.xi1.to_dict(), "xi2": self.xi2.to_dict()}


def linear_fractional_law1(b: float, p: float, xi2: UnivariateLaw) -> ProductLaw:
    """Type-1 law whose ``f(s, 1)`` is linear-fractional, with independent ``xi2``."""
    return ProductLaw(LinearFractional(b, p), xi2)


@dataclass(frozen=True)
class JointTable(OffspringLaw1):
    points: tuple  # ((j, k), ...)
    probs: tuple
    family: str = field(default="finite_table", init=False)

    def __post_init__(self):
        pts = [tuple(int(x) for x in pt) for pt in self.points]
        p = np.asarray(self.probs, dtype=float)
        if len(pts) != p.size or p.size == 0:
            raise LawError("joint table needs matching nonempty point and probability lists")
        if any(len(pt) != 2 or min(pt) < 0 for pt in pts):
            raise LawError("joint table points must be pairs of nonnegative integers")
        if len(set(pts)) != len(pts):
            raise LawError("joint table points must be distinct")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise LawError(f"joint table probabilities must be nonnegative and sum to 1 (sum={p.sum()!r})")
        object.__setattr__(self, "points", tuple(pts))
        object.__setattr__(self, "probs", tuple(float(x) for x in p))

    @property
    def _j(self):
        return np.array([pt[0] for pt in self.points], dtype=np.int64)

    @property
    def _k(self):
        return np.array([pt[1] for pt in self.points], dtype=np.int64)

    def pgf(self, s1, s2):
        s1 = np.asarray(s1)
        s2 = np.asarray(s2)
        return sum(p * s1**j * s2**k for (j, k), p in zip(self.points, self.probs))

    def pgf_bar(self, u1, u2):
        u1 = np.asarray(u1, dtype=float)
        u2 = np.asarray(u2, dtype=float)
        shape = np.broadcast(u1, u2).shape
        out = np.zeros(shape)
        with np.errstate(divide="ignore"):
            l1 = np.log1p(-u1)
            l2 = np.log1p(-u2)
        for (j, k), p in zip(self.points, self.probs):
            if p == 0 or (j == 0 and k == 0):
                continue
            expo = np.zeros(shape)
            if j:
                expo = expo + j * l1
            if k:
                expo = expo + k * l2
            out = out + p * -np.expm1(expo)
        return out

    def moments(self):
        j = self._j.astype(float)
        k = self._k.astype(float)
        p = np.asarray(self.probs)
        return MomentSet(
            mu1=float(p @ j),
            mu2=float(p @ (j * (j - 1))),
            theta1=float(p @ k),
            theta2=float(p @ (k * (k - 1))),
            cross=float(p @ (j * k)),
        )

    def sample(self, rng, size=None):
        idx = rng.choice(len(self.points), size=size, p=np.asarray(self.probs))
        return self._j[idx], self._k[idx]

    def sample_sum(self, rng, counts):
        draws = rng.multinomial(np.asarray(counts, dtype=np.int64), np.asarray(self.probs))
        return draws @ self._j, draws @ self._k

    def to_dict(self):
        return {
            "family": "finite_table",
            "support": [[list(pt), p] for pt, p in zip(self.points, self.probs)],
        }


def law1_from_dict(d: dict[str, Any]) -> OffspringLaw1:
    fam = d.get("family")
    if fam == "product":
        return ProductLaw(univariate_from_dict(d["xi1"]), univariate_from_dict(d["xi2"]))
    if fam == "finite_table":
        pts = [tuple(item[0]) for item in d["support"]]
        probs = [float(item[1]) for item in d["support"]]
        return JointTable(tuple(pts), tuple(probs))
    if fam == "linear_fractional":
        return linear_fractional_law1(float(d["b"]), float(d["p"]), univariate_from_dict(d["xi2"]))
    raise LawError(f"unknown type-1 law family {fam!r}")


# ---------------------------------------------------------------------------
# type-2 law


@dataclass(frozen=True)
class OffspringLaw2:
    """Critical law of ``eta``; ``m1 = 1`` is enforced."""

    law: UnivariateLaw
    name: str = ""

    def __post_init__(self):
        if abs(self.law.mean - 1.0) > 1e-12:
            raise LawError(f"type-2 law must be critical (mean 1), got mean {self.law.mean!r}")

    @classmethod
    def geometric_mean_one(cls) -> "OffspringLaw2":
        return cls(Geometric(1.0), "geometric_mean_one")

    @classmethod
    def poisson_mean_one(cls) -> "OffspringLaw2":
        return cls(Poisson(1.0), "poisson_mean_one")

    @classmethod
    def finite_table(cls, values, probs) -> "OffspringLaw2":
        return cls(FiniteTable(tuple(values), tuple(probs)), "finite_table")

    @property
    def m1(self) -> float:
        return 1.0

    @property
    def m2(self) -> float:
        return self.law.fact2

    def pgf(self, s):
        return self.law.pgf(s)

    def pgf_bar(self, u):
        return self.law.pgf_bar(u)

    def sample(self, rng, size=None):
        return self.law.sample(rng, size)

    def sample_sum(self, rng, counts):
        return self.law.sample_sum(rng, counts)

    def to_dict(self):
        if self.name in ("geometric_mean_one", "poisson_mean_one"):
            return {"kind": self.name}
        return self.law.to_dict()


def law2_from_dict(d: dict[str, Any]) -> OffspringLaw2:
    kind = d.get("kind")
    if kind in ("geometric_mean_one", "linear_fractional_mean_one"):
        return OffspringLaw2.geometric_mean_one()
    if kind == "poisson_mean_one":
        return OffspringLaw2.poisson_mean_one()
    return OffspringLaw2(univariate_from_dict(d), kind or "")


# ---------------------------------------------------------------------------
# operations


def _check_unit(name: str, x) -> None:
    a = np.asarray(x, dtype=float)
    if a.size and (np.nanmin(a) < 0.0 or np.nanmax(a) > 1.0 or np.isnan(a).any()):
        raise DomainError(f"{name} must lie in [0, 1]")


def pgf_eval(law1: OffspringLaw1, s1, s2):
    """``E[s1**xi1 * s2**xi2]`` for ``s1, s2`` in ``[0, 1]``."""
    _check_unit("s1", s1)
    _check_unit("s2", s2)
    out = law1.pgf(np.asarray(s1, dtype=float), np.asarray(s2, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def moments1(law1: OffspringLaw1) -> MomentSet:
    return law1.moments()


def sample1(law1: OffspringLaw1, rng: np.random.Generator) -> tuple[int, int]:
    a, b = law1.sample(rng)
    return int(a), int(b)


def sample2(law2: OffspringLaw2, rng: np.random.Generator) -> int:
    return int(law2.sample(rng))


def h_iterate(law2: OffspringLaw2, k: int, s):
    """k-fold iterate ``h_k(s)`` with ``h_0(s) = s``."""
    if k < 0:
        raise ValueError("k must be nonnegative")
    _check_unit("s", s)
    if k == 0:
        out = np.asarray(s, dtype=float)
        return float(out) if out.ndim == 0 else out.copy()
    u = 1.0 - np.asarray(s, dtype=float)
    for _ in range(k):
        u = law2.pgf_bar(u)
    out = 1.0 - u
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ExtinctionTable:
    """``q[n] = Q_n = h_n(0)`` for ``n = 0..N``; ``survival[n] = 1 - Q_n``.

    ``survival`` is the primary array: it is iterated directly through the
    complement generating function and does not lose digits as ``Q_n -> 1``.
    """

    law: OffspringLaw2
    survival: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.survival) - 1

    @property
    def q(self) -> np.ndarray:
        return 1.0 - self.survival

    def check_statistic(self, n: int) -> float:
        """``n (1 - Q_n) m2 / 2``, which tends to 1."""
        return n * float(self.survival[n]) * self.law.m2 / 2.0


def extinction_table(law2: OffspringLaw2, N: int) -> ExtinctionTable:
    if N < 1:
        raise ValueError("horizon must be at least 1")
    surv = np.empty(N + 1)
    u = 1.0
    surv[0] = u
    bar = law2.pgf_bar
    for n in range(1, N + 1):
        u = float(bar(u))
        surv[n] = u
    surv.setflags(write=False)
    return ExtinctionTable(law2, surv)


def a_n(law1: OffspringLaw1, extab: ExtinctionTable, n: int) -> float:
    """``-log f(1, Q_n)``."""
    if n > extab.horizon:
        raise ValueError(f"n={n} exceeds extinction table horizon {extab.horizon}")
    g = float(law1.pgf_bar(0.0, float(extab.survival[n])))
    return -math.log1p(-g)


def a_n_check_statistic(law1: OffspringLaw1, extab: ExtinctionTable, n: int) -> float:
    """``a_n m2 n / (2 theta1)``, which tends to 1."""
    theta1 = law1.moments().theta1
    return a_n(law1, extab, n) * extab.law.m2 * n / (2.0 * theta1)
