"""Compiled backward recursion for product type-1 laws.

For ``f(s1, s2) = g(s1) k(s2)`` the type-2 factor at step ``k`` only depends
on ``(state, k)``, so it is tabulated once and the per-replicate loop touches
a single scalar.  Laws outside the supported families fall back to numpy.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .offspring import Bernoulli, Deterministic, Geometric, LinearFractional, Poisson, ProductLaw

GEOMETRIC, POISSON, BERNOULLI, DETERMINISTIC, LINEAR_FRACTIONAL = range(5)


def encode(law) -> tuple[int, float, float] | None:
    """``(code, a, b)`` for a univariate law, or None when unsupported."""
    if isinstance(law, Geometric):
        return GEOMETRIC, law.mean_value, 0.0
    if isinstance(law, Poisson):
        return POISSON, law.mean_value, 0.0
    if isinstance(law, Bernoulli):
        return BERNOULLI, law.p, 0.0
    if isinstance(law, Deterministic):
        return DETERMINISTIC, float(law.value), 0.0
    if isinstance(law, LinearFractional):
        return LINEAR_FRACTIONAL, law.b, law.p
    return None


def encode_spec(spec):
    """Arrays ``(codes, a, b)`` over states, or None if any state is unsupported."""
    rows = []
    for law in spec.laws:
        if not isinstance(law, ProductLaw):
            return None
        enc = encode(law.xi1)
        if enc is None:
            return None
        rows.append(enc)
    codes = np.array([r[0] for r in rows], dtype=np.int64)
    a = np.array([r[1] for r in rows])
    b = np.array([r[2] for r in rows])
    return codes, a, b


@njit(cache=True)
def _ubar(code, a, b, u):
    if code == 0:
        return a * u / (1.0 + a * u)
    if code == 1:
        return -math.expm1(-a * u)
    if code == 2:
        return a * u
    if code == 3:
        if a == 0.0:
            return 0.0
        if u >= 1.0:
            return 1.0
        return -math.expm1(a * math.log1p(-u))
    return a * u / ((1.0 - b) * (1.0 - b + b * u))


@njit(cache=True)
def product_backward(env_t, n, codes, a, b, c, init):
    """Complement survival ``w_0`` for every column of ``env_t`` and start value.

    ``env_t`` is the time-major ``(n, R)`` state array.  ``c[j, s, k]`` is the
    complement type-2 factor of state ``s`` at step ``k`` for start value
    ``init[j]``.  Replicates sit in the inner loop so that independent
    recursions overlap in the pipeline.
    """
    R = env_t.shape[1]
    K = init.shape[0]
    out = np.empty((K, R))
    for j in range(K):
        w = np.full(R, init[j])
        for k in range(n - 1, -1, -1):
            row = env_t[k]
            for r in range(R):
                s = row[r]
                g = _ubar(codes[s], a[s], b[s], w[r])
                cc = c[j, s, k]
                w[r] = g + cc - g * cc
        out[j] = w
    return out


def encode_xi2(spec):
    rows = []
    for law in spec.laws:
        if not isinstance(law, ProductLaw):
            return None
        enc = encode(law.xi2)
        if enc is None:
            return None
        rows.append(enc)
    return (
        np.array([r[0] for r in rows], dtype=np.int64),
        np.array([r[1] for r in rows]),
        np.array([r[2] for r in rows]),
    )


@njit(cache=True)
def product_backward_ragged(env_t, horizons, codes1, a1, b1, codes2, a2, b2, surv, init, pin):
    """As ``product_backward`` but with a horizon per replicate.

    Replicate ``r`` runs the recursion over steps ``horizons[r]-1 .. 0`` with
    type-2 argument ``pin * surv[horizons[r] - k - 1]``.
    """
    R = env_t.shape[1]
    nmax = 0
    for r in range(R):
        if horizons[r] > nmax:
            nmax = horizons[r]
    w = np.full(R, init)
    for k in range(nmax - 1, -1, -1):
        row = env_t[k]
        for r in range(R):
            n = horizons[r]
            if k < n:
                s = row[r]
                g = _ubar(codes1[s], a1[s], b1[s], w[r])
                cc = _ubar(codes2[s], a2[s], b2[s], pin * surv[n - k - 1])
                w[r] = g + cc - g * cc
    return w
