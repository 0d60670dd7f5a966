"""The process observed at regeneration times of a Markov environment.

Cutting the environment at successive returns to its initial state gives IID
cycles.  Over one cycle ``e_0, ..., e_{tau-1}`` a type-1 particle produces, at
the end of the cycle, type-1 and type-2 counts with generating function

    fhat(s1, s2) = F_0,   F_k = f_{e_k}(F_{k+1}, h_{tau-1-k}(s2)),   F_tau = s1,

while a type-2 particle produces ``h_tau``.  This module computes the
reproduction moments of ``fhat`` in closed form and by numerical
differentiation, summarises cycle statistics, and simulates the embedded
process itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .environment import (
    EnvironmentSpec,
    TwoStateTauLaw,
    _draw_categorical,
    sample_cycles,
    sample_env_block,
)
from .offspring import ExtinctionTable, OffspringLaw1, OffspringLaw2, extinction_table
from .parallel import map_chunks
from .process import (
    COMPLETE,
    CENSORED,
    FAILED,
    STOPPED,
    TailSample,
    TrajectoryRecord,
    _offspring_step,
    _overflow_guard,
    _finish,
    _merge,
    _moments,
    survival_given_env_ragged,
)
from .rng import stream


class IllConditionedError(ArithmeticError):
    """Numerical differentiation did not settle to the requested tolerance."""


@dataclass(frozen=True)
class EmbeddedCycle:
    tau: int
    zeta_hat: float
    mu1_hat: float
    mu2_hat: float
    theta1_hat: float
    theta2_hat: float
    states: tuple
    m1_hat: float = 1.0
    m2_hat: float = 0.0

    def as_row(self) -> dict:
        return {
            "tau": self.tau,
            "zeta_hat": self.zeta_hat,
            "mu1_hat": self.mu1_hat,
            "mu2_hat": self.mu2_hat,
            "theta1_hat": self.theta1_hat,
            "theta2_hat": self.theta2_hat,
        }


def _cycle_laws(states, laws) -> list[OffspringLaw1]:
    states = [int(s) for s in states]
    if not states:
        raise ValueError("a cycle has at least one step")
    return [laws[s] for s in states]


def cycle_moments_closed_form(states: Sequence[int], laws: Sequence[OffspringLaw1], law2: OffspringLaw2) -> EmbeddedCycle:
    """Moments of ``fhat`` from the per-step moments.

    With ``P_k = prod_{i<k} mu1_i`` and ``A_k = sum_{j>=k} theta1_j prod_{k<=i<j} mu1_i``
    (so ``A_tau = 0``):

        mu1_hat    = P_tau
        mu2_hat    = sum_k P_k mu2_k (P_tau / P_{k+1})**2
        theta1_hat = A_0
        theta2_hat = sum_k P_k [theta2_k + mu2_k A_{k+1}**2 + 2 cross_k A_{k+1}
                                + theta1_k (tau-1-k) m2]

    where ``cross_k = E[xi1 xi2]`` and ``m2`` is the second factorial moment of
    the type-2 law (its variance, since the mean is 1).
    """
    cyc = _cycle_laws(states, laws)
    tau = len(cyc)
    ms = [law.moments() for law in cyc]
    mu = np.array([m.mu1 for m in ms])
    if np.any(mu <= 0):
        raise ValueError("cycle moments need mu1 > 0 in every visited state")
    m2 = law2.m2
    # A[k] for k = 0..tau, built backwards
    A = np.zeros(tau + 1)
    for k in range(tau - 1, -1, -1):
        A[k] = ms[k].theta1 + mu[k] * A[k + 1]
    # suffix products prod_{i>k} mu_i
    suffix = np.ones(tau + 1)
    for k in range(tau - 1, -1, -1):
        suffix[k] = mu[k] * suffix[k + 1]
    prefix = 1.0
    mu2_hat = 0.0
    theta2_hat = 0.0
    for k, m in enumerate(ms):
        after = suffix[k + 1]
        mu2_hat += prefix * m.mu2 * after * after
        a = A[k + 1]
        theta2_hat += prefix * (m.theta2 + m.mu2 * a * a + 2.0 * m.cross * a + m.theta1 * (tau - 1 - k) * m2)
        prefix *= mu[k]
    zeta_hat = float(np.sum(np.log(mu)))
    return EmbeddedCycle(
        tau=tau,
        zeta_hat=zeta_hat,
        mu1_hat=float(suffix[0]),
        mu2_hat=float(mu2_hat),
        theta1_hat=float(A[0]),
        theta2_hat=float(theta2_hat),
        states=tuple(int(s) for s in states),
        m1_hat=1.0,
        m2_hat=tau * m2,
    )


# ---------------------------------------------------------------------------
# numerical oracle


def composed_pgf_bar(states, laws, law2: OffspringLaw2, u1, u2):
    """``1 - fhat(1 - u1, 1 - u2)`` by direct composition (works for small negative u)."""
    cyc = _cycle_laws(states, laws)
    tau = len(cyc)
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    # type-2 complements after j generations, j = 0..tau-1
    hs = [u2]
    for _ in range(tau - 1):
        hs.append(law2.pgf_bar(hs[-1]))
    w = u1
    for k in range(tau - 1, -1, -1):
        w = cyc[k].pgf_bar(w, hs[tau - 1 - k])
    return w


def _richardson(values: Sequence[float], ratio: float, order: int = 2) -> tuple[float, float]:
    """Two-level Richardson on estimates at steps h, h/ratio, h/ratio**2.

    Returns the extrapolated value and the discrepancy between the two
    first-level extrapolations, a measure of convergence.
    """
    d0, d1, d2 = values
    f1 = ratio**order
    r1 = (f1 * d1 - d0) / (f1 - 1.0)
    r2 = (f1 * d2 - d1) / (f1 - 1.0)
    f2 = ratio ** (2 * order)
    return (f2 * r2 - r1) / (f2 - 1.0), abs(r2 - r1)


def _derivatives(g, h0: float, ratio: float = 10.0):
    """First and second derivative at 0 of a scalar function with ``g(0) = 0``."""
    firsts, seconds = [], []
    g0 = float(g(0.0))
    for i in range(3):
        h = h0 / ratio**i
        gp, gm = float(g(h)), float(g(-h))
        firsts.append((gp - gm) / (2.0 * h))
        seconds.append((gp - 2.0 * g0 + gm) / (h * h))
    return _richardson(firsts, ratio), _richardson(seconds, ratio)


def _check(name, value, err, rtol):
    scale = max(abs(value), 1e-300)
    if not math.isfinite(value) or err > rtol * scale:
        raise IllConditionedError(f"{name}: extrapolation did not converge (value {value!r}, spread {err!r})")


def cycle_moments_oracle(
    states: Sequence[int],
    laws: Sequence[OffspringLaw1],
    law2: OffspringLaw2,
    step: float = 1e-2,
    rtol: float = 1e-6,
) -> EmbeddedCycle:
    """Moments of ``fhat`` by central differences of the composed pgf.

    Derivatives are taken in complement variables ``u = 1 - s`` around ``u = 0``
    over steps ``step``, ``step/10``, ``step/100`` with Richardson
    extrapolation.  Steps are scaled down by the growth of the composition so
    that ``u < 0`` stays inside the domain of every generating function.
    """
    cyc = _cycle_laws(states, laws)
    tau = len(cyc)
    ms = [law.moments() for law in cyc]
    growth1 = float(np.prod([max(1.0, m.mu1) for m in ms]))
    growth2 = 1.0 + sum(m.theta1 for m in ms) * growth1 + tau * max(1.0, law2.m2)
    h1 = step / growth1
    h2 = step / growth2

    (mu1, e1), (s1, e2) = _derivatives(lambda u: composed_pgf_bar(states, laws, law2, u, 0.0), h1)
    (th1, e3), (s2, e4) = _derivatives(lambda u: composed_pgf_bar(states, laws, law2, 0.0, u), h2)
    # complement derivatives: d/ds = d/du, d2/ds2 = -d2/du2
    mu2, th2 = -s1, -s2
    _check("mu1_hat", mu1, e1, rtol)
    _check("theta1_hat", th1, e3, rtol)
    _check("mu2_hat", mu2, e2, rtol)
    _check("theta2_hat", th2, e4, rtol)

    def hbar(u):
        for _ in range(tau):
            u = law2.pgf_bar(u)
        return u

    (m1, e5), (hs, e6) = _derivatives(hbar, step / (1.0 + tau * max(1.0, law2.m2)))
    _check("m1_hat", m1, e5, rtol)
    _check("m2_hat", -hs, e6, rtol)
    zeta_hat = float(sum(math.log(m.mu1) for m in ms)) if all(m.mu1 > 0 for m in ms) else -math.inf
    return EmbeddedCycle(
        tau=tau,
        zeta_hat=zeta_hat,
        mu1_hat=float(mu1),
        mu2_hat=float(mu2),
        theta1_hat=float(th1),
        theta2_hat=float(th2),
        states=tuple(int(s) for s in states),
        m1_hat=float(m1),
        m2_hat=float(-hs),
    )


# ---------------------------------------------------------------------------
# cycle statistics


@dataclass(frozen=True)
class EmbeddedSummary:
    a: float  # E[tau]
    se_a: float
    e_zeta_hat: float
    se_zeta_hat: float
    var_zeta_hat: float
    e_zeta: float  # stationary E[zeta]
    wald_gap: float  # E_hat[zeta_hat] - E_hat[tau] E[zeta]
    wald_se: float
    n_cycles: int
    e_tau_tau_minus_1: float
    se_tau_tau_minus_1: float

    @property
    def wald_ok(self) -> bool:
        return abs(self.wald_gap) <= 4.0 * self.wald_se


def _cycle_chunk(idx, size, *, spec, seed):
    rng = stream(seed, "cycles", idx)
    batch = sample_cycles(spec, size, rng)
    return batch.tau, batch.zeta_hat


def sample_cycle_stats(spec: EnvironmentSpec, R: int, seed: int = 0, workers: int = 1):
    """``(tau, zeta_hat)`` arrays for ``R`` independent stationary-start cycles."""
    parts = map_chunks(_cycle_chunk, R, workers, spec=spec, seed=seed)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def embed_summary(spec: EnvironmentSpec, R: int, seed: int = 0, workers: int = 1) -> EmbeddedSummary:
    """Cycle-length and cycle-drift statistics with a Wald identity check."""
    if R < 1000:
        raise ValueError("embed_summary needs at least 1000 cycles")
    tau, zh = sample_cycle_stats(spec, R, seed, workers)
    ez = spec.mean_zeta()
    tau_f = tau.astype(float)
    gap = zh - tau_f * ez  # per-cycle contributions, mean zero by the Wald identity
    tt = tau_f * (tau_f - 1.0)
    sq = math.sqrt(R)
    return EmbeddedSummary(
        a=float(tau_f.mean()),
        se_a=float(tau_f.std(ddof=1) / sq),
        e_zeta_hat=float(zh.mean()),
        se_zeta_hat=float(zh.std(ddof=1) / sq),
        var_zeta_hat=float(zh.var(ddof=1)),
        e_zeta=ez,
        wald_gap=float(gap.mean()),
        wald_se=float(gap.std(ddof=1) / sq),
        n_cycles=R,
        e_tau_tau_minus_1=float(tt.mean()),
        se_tau_tau_minus_1=float(tt.std(ddof=1) / sq),
    )


def sample_cycle_moments(spec: EnvironmentSpec, law2: OffspringLaw2, R: int, rng) -> list[EmbeddedCycle]:
    """Closed-form moments for ``R`` random stationary-start cycles."""
    batch = sample_cycles(spec, R, rng, keep_states=True)
    return [cycle_moments_closed_form(batch.states(i), spec.laws, law2) for i in range(R)]


# ---------------------------------------------------------------------------
# exact cycle laws for two-state chains


def two_state_cycle_law(spec: EnvironmentSpec, tail: float = 1e-12):
    """Enumerate stationary-start cycles of a two-state chain.

    A cycle from state ``i`` either stays (``tau = 1``) or jumps to ``j`` and
    spends ``L >= 1`` steps there before returning.  Returns a list of
    ``(probability, states)`` with total missing mass below ``tail``.
    """
    if spec.n_states != 2 or spec.kind != "markov":
        raise ValueError("two_state_cycle_law needs a two-state Markov environment")
    P = spec.transition
    pi = spec.stationary
    out = []
    for i in (0, 1):
        j = 1 - i
        out.append((pi[i] * P[i, i], (i,)))
        base = pi[i] * P[i, j]
        if base == 0.0:
            continue
        stay = P[j, j]
        L = 1
        mass = base
        # remaining mass after L terms is base * stay**L
        while True:
            p = base * stay ** (L - 1) * P[j, i]
            out.append((p, (i,) + (j,) * L))
            if base * stay**L < tail / 2.0 or stay == 0.0:
                break
            L += 1
            mass -= p
    return out


def exact_mu1_hat_law(spec: EnvironmentSpec, tail: float = 1e-12):
    """Finite law ``(values, probs)`` of ``mu1_hat`` over stationary-start cycles."""
    mu = np.array([law.moments().mu1 for law in spec.laws])
    vals, probs = [], []
    for p, states in two_state_cycle_law(spec, tail):
        vals.append(float(np.prod(mu[list(states)])))
        probs.append(p)
    return np.array(vals), np.array(probs)


def moment_generating_mu1_hat(spec: EnvironmentSpec, kappa: float) -> float:
    """``E[mu1_hat**kappa]`` for a two-state chain in closed form.

    Returns ``inf`` when the geometric series over sojourn lengths diverges.
    """
    P = spec.transition
    pi = spec.stationary
    mu = np.array([law.moments().mu1 for law in spec.laws])
    total = 0.0
    for i in (0, 1):
        j = 1 - i
        x = mu[j] ** kappa
        if P[j, j] * x >= 1.0:
            return math.inf
        series = P[j, i] * x / (1.0 - P[j, j] * x)
        total += pi[i] * mu[i] ** kappa * (P[i, i] + P[i, j] * series)
    return float(total)


def moment_generating_mu1_hat_linear(spec: EnvironmentSpec, kappa: float) -> float:
    """``E[mu1_hat**kappa]`` for any finite chain via first-return linear algebra.

    For start ``i``, ``g = (I - D Q)^{-1} D P[-i, i]`` collects the weighted
    first-return mass from each other state, with ``D = diag(mu**kappa)``
    and ``Q`` the transition matrix restricted to states other than ``i``.
    """
    P = spec.transition
    pi = spec.stationary
    mu = np.array([law.moments().mu1 for law in spec.laws])
    w = mu**kappa
    n = len(mu)
    total = 0.0
    for i in range(n):
        rest = [k for k in range(n) if k != i]
        Q = P[np.ix_(rest, rest)]
        D = np.diag(w[rest])
        M = np.eye(n - 1) - D @ Q
        if np.any(np.abs(np.linalg.eigvals(D @ Q)) >= 1.0):
            return math.inf
        g = np.linalg.solve(M, D @ P[rest, i])
        total += pi[i] * w[i] * (P[i, i] + P[i, rest] @ g)
    return float(total)


def x_hat_1_pmf(spec: EnvironmentSpec, size: int = 1 << 14, tail: float = 1e-12) -> np.ndarray:
    """Exact pmf of ``X_hat_1`` (type-1 count after one cycle) for a two-state chain.

    The composed generating function of each enumerated cycle is evaluated on
    the unit circle and inverted with an FFT; ``size`` must exceed the
    effective support.
    """
    z = np.exp(2j * np.pi * np.arange(size) / size)
    acc = np.zeros(size, dtype=complex)
    for p, states in two_state_cycle_law(spec, tail):
        s = z
        for k in range(len(states) - 1, -1, -1):
            s = spec.laws[states[k]].pgf(s, 1.0)
        acc += p * s
    pmf = np.fft.fft(acc).real / size
    return np.clip(pmf, 0.0, None)


# ---------------------------------------------------------------------------
# embedded process


def _markov_until_returns(spec: EnvironmentSpec, rng, start: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Chain path from ``start`` up to its ``r``-th return; returns (states, taus)."""
    cum = np.cumsum(spec.transition, axis=1)[:, :-1]
    states = [start]
    taus = [0]
    cur = start
    while len(taus) <= r:
        u = rng.random()
        nxt = int(np.searchsorted(cum[cur], u, side="right"))
        if nxt == start:
            taus.append(len(states))
        states.append(nxt)
        cur = nxt
    return np.array(states[: taus[-1]], dtype=np.int8), np.array(taus, dtype=np.int64)


def embedded_process_view(spec: EnvironmentSpec, law2: OffspringLaw2, r: int, rng) -> TrajectoryRecord:
    """Simulate ``r`` cycles and record ``(X_hat, Y_hat, Z_hat)`` at the regeneration times.

    ``Y_hat[k]`` counts the type-2 particles present at the end of cycle ``k``
    that descend from type-2 daughters born during that cycle, so that
    ``Z_hat[k+1] = (descendants of Z_hat[k]) + Y_hat[k]`` and ``Y_hat[0] = Z_hat[1]``.
    The statistics ``S1_T`` and ``S2_T`` use the cycle moments ``theta1_hat``,
    ``theta2_hat``, and ``T`` is the first cycle index with ``X_hat = 0``.
    """
    if r < 1:
        raise ValueError("need at least one cycle")
    if spec.kind == "constant":
        start = 0
        states = np.zeros(r, dtype=np.int8)
        taus = np.arange(r + 1)
    elif spec.kind == "iid":
        start = int(_draw_categorical(rng, spec.probs, 1)[0])
        states, taus = _iid_until_returns(spec, rng, start, r)
    else:
        start = int(_draw_categorical(rng, spec.probs, 1)[0])
        states, taus = _markov_until_returns(spec, rng, start, r)
    one = np.ones(1, dtype=np.int64)
    x, z_old = 1, 0
    X, Y, Z = [1], [], [0]
    S = W = 0
    S1 = S2 = 0.0
    T = None
    for c in range(r):
        seg = states[taus[c] : taus[c + 1]]
        if x > 0:
            mom = cycle_moments_closed_form(seg, spec.laws, law2)
            S += x
            S1 += x * mom.theta1_hat
            S2 += x * mom.theta2_hat
        z_new = 0
        for e in seg:
            a, b = spec.laws[int(e)].sample_sum(rng, one * x)
            z_new = int(law2.sample_sum(rng, one * z_new)[0]) + int(b[0])
            z_old = int(law2.sample_sum(rng, one * z_old)[0])
            x = int(a[0])
        if X[-1] > 0:
            W += z_new
        Y.append(z_new)
        z_old += z_new
        X.append(x)
        Z.append(z_old)
        if x == 0 and T is None:
            T = c + 1
    censored = T is None
    return TrajectoryRecord(X, Y, Z, r if censored else T, S, W, S1, S2, censored, [int(s) for s in states])


def _iid_until_returns(spec, rng, start, r):
    states = [start]
    taus = [0]
    while len(taus) <= r:
        nxt = int(_draw_categorical(rng, spec.probs, 1)[0])
        if nxt == start:
            taus.append(len(states))
        states.append(nxt)
    return np.array(states[: taus[-1]], dtype=np.int8), np.array(taus, dtype=np.int64)


# ---------------------------------------------------------------------------
# vectorized embedded quantities


def _cycles_block(spec: EnvironmentSpec, R: int, r: int, rng, slack: float = 8.0):
    """Environment rows holding at least ``r`` returns to their initial state.

    Returns ``(env, tau_r, tau_k)`` where ``tau_k[:, c]`` is the ``c``-th return.
    """
    if spec.kind == "constant":
        return np.zeros((R, r), dtype=np.int8), np.full(R, r), np.tile(np.arange(r + 1), (R, 1))
    # crude length: mean return time <= n_states; widen by the cycle spread
    n_states = spec.n_states
    length = int(r * n_states + slack * math.sqrt(r) * n_states * 4 + 64)
    env = np.ascontiguousarray(sample_env_block(spec, R, length, rng))
    hits = env == env[:, :1]
    counts = hits.sum(axis=1)
    # continue every row until all have r returns, so no row is ever redrawn
    while counts.min() < r + 1:
        more = sample_env_block(spec, R, length, rng, after=env[:, -1])
        env = np.ascontiguousarray(np.concatenate([env, more], axis=1))
        hits = env == env[:, :1]
        counts = hits.sum(axis=1)
    # nonzero() lists hits row by row in column order
    cols = np.nonzero(hits)[1]
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    tau_k = cols[first[:, None] + np.arange(r + 1)]
    return env, tau_k[:, r], tau_k


def _embedded_rb_chunk(idx, size, *, spec, law2, rs, seed, extab, which):
    rng = stream(seed, "embedded-rb", max(rs), idx)
    env, _, tau_k = _cycles_block(spec, size, max(rs), rng)
    res = []
    for r in rs:
        out = survival_given_env_ragged(spec, env, tau_k[:, r], law2, extab, which)
        res.append({c: _moments(v) for c, v in out.items()})
    return res, 0


def estimate_embedded_survival_curve(
    spec: EnvironmentSpec,
    law2: OffspringLaw2,
    rs: Sequence[int],
    replicates: int,
    seed: int = 0,
    workers: int = 1,
    which: str = "zxe",
):
    """Rao-Blackwell estimates of ``P[Z_hat_r > 0]`` etc. at cycle counts ``rs``.

    ``Z_hat_r = Z_{tau_r}``, so the exact conditional probability is the direct
    recursion evaluated at the random horizon ``tau_r``.
    """
    rs = sorted(int(r) for r in rs)
    # rows are rarely longer than this; survival_given_env_ragged extends the table if needed
    extab = extinction_table(law2, 4 * spec.n_states * max(rs) + 256)
    parts = map_chunks(
        _embedded_rb_chunk, replicates, workers, spec=spec, law2=law2, rs=rs, seed=seed, extab=extab, which=which
    )
    out = []
    for i, r in enumerate(rs):
        total = {}
        for res, _ in parts:
            for c, mom in res[i].items():
                total[c] = _merge(total[c], mom) if c in total else mom
        out.append(_finish(total, r, "rao_blackwell", 0))
    return out


def matched_horizons(spec: EnvironmentSpec, start: np.ndarray, r: int) -> np.ndarray:
    """Direct-process horizon matching ``r`` cycles for each initial state.

    Given ``e_0 = i`` the mean return time is ``1 / pi_i``, so ``tau_r / r``
    tends to ``1 / pi_{e_0}`` rather than to the unconditional mean ``E[tau]``.
    The horizons average to ``E[tau] r`` over the stationary start.
    """
    if spec.kind == "constant":
        return np.full(len(start), r, dtype=np.int64)
    per_state = np.maximum(1, np.rint(r / spec.stationary)).astype(np.int64)
    return per_state[np.asarray(start, dtype=np.int64)]


def _matched_chunk(idx, size, *, spec, law2, rs, seed, extab, which, conditional):
    a = spec.n_states if spec.kind != "constant" else 1
    nmax = max(int(np.max(matched_horizons(spec, np.arange(spec.n_states), max(rs)))), a * max(rs))
    rng = stream(seed, "matched-rb", max(rs), idx)
    env = np.ascontiguousarray(sample_env_block(spec, size, nmax, rng))
    res = []
    for r in rs:
        if conditional:
            h = matched_horizons(spec, env[:, 0], r)
        else:
            h = np.full(size, a * r, dtype=np.int64)
        out = survival_given_env_ragged(spec, env, h, law2, extab, which)
        res.append({c: _moments(v) for c, v in out.items()})
    return res, 0


def estimate_matched_survival_curve(
    spec: EnvironmentSpec,
    law2: OffspringLaw2,
    rs: Sequence[int],
    replicates: int,
    seed: int = 0,
    workers: int = 1,
    which: str = "zxe",
    conditional: bool = True,
):
    """Direct-process Rao-Blackwell curve at horizons matched to ``rs`` cycles.

    With ``conditional`` the horizon is ``r / pi_{e_0}``; otherwise it is the
    fixed ``E[tau] r``, which equals the number of states for a stationary start.
    """
    rs = sorted(int(r) for r in rs)
    a = spec.n_states if spec.kind != "constant" else 1
    nmax = max(int(np.max(matched_horizons(spec, np.arange(spec.n_states), max(rs)))), a * max(rs))
    extab = extinction_table(law2, nmax + 1)
    parts = map_chunks(
        _matched_chunk, replicates, workers, spec=spec, law2=law2, rs=rs, seed=seed,
        extab=extab, which=which, conditional=conditional,
    )
    out = []
    for i, r in enumerate(rs):
        total = {}
        for res, _ in parts:
            for c, mom in res[i].items():
                total[c] = _merge(total[c], mom) if c in total else mom
        out.append(_finish(total, r, "rao_blackwell", 0))
    return out


@dataclass(frozen=True)
class SandwichCheck:
    n: int
    lower: float  # mean P[X_hat + Z_hat > 0 at N_n + 1 | env]
    middle: float  # mean P[X_n + Z_n > 0 | env]
    upper: float  # mean P[X_hat + Z_hat > 0 at N_n | env]
    violations: int
    replicates: int


def _sandwich_chunk(idx, size, *, spec, law2, n, seed, extab):
    rng = stream(seed, "sandwich", n, idx)
    env, _, tau_k = _cycles_block(spec, size, n + 1, rng)
    # N_n = max{k : tau_k <= n}
    N = (tau_k <= n).sum(axis=1) - 1
    rows = np.arange(size)
    lo_h = tau_k[rows, N + 1]
    hi_h = tau_k[rows, N]
    mid = survival_given_env_ragged(spec, env, np.full(size, n), law2, extab, "e")["e"]
    lo = survival_given_env_ragged(spec, env, np.maximum(lo_h, 1), law2, extab, "e")["e"]
    hi_h1 = np.maximum(hi_h, 1)
    hi = survival_given_env_ragged(spec, env, hi_h1, law2, extab, "e")["e"]
    hi = np.where(hi_h == 0, 1.0, hi)  # N_n = 0: X_hat_0 = 1 survives surely
    tol = 1e-12
    bad = int(np.sum((lo > mid + tol) | (mid > hi + tol)))
    return lo.sum(), mid.sum(), hi.sum(), bad


def sandwich_check(spec, law2, n: int, replicates: int, seed: int = 0, workers: int = 1) -> SandwichCheck:
    """Conditional survival at ``tau_{N_n+1}``, ``n`` and ``tau_{N_n}`` per environment.

    Extinction is absorbing and ``tau_{N_n} <= n < tau_{N_n+1}``, so the three
    conditional probabilities must be ordered for every environment.
    """
    extab = extinction_table(law2, 8 * n + 64)
    parts = map_chunks(_sandwich_chunk, replicates, workers, spec=spec, law2=law2, n=n, seed=seed, extab=extab)
    lo = sum(p[0] for p in parts) / replicates
    mid = sum(p[1] for p in parts) / replicates
    hi = sum(p[2] for p in parts) / replicates
    return SandwichCheck(n, lo, mid, hi, sum(p[3] for p in parts), replicates)


# ---------------------------------------------------------------------------
# embedded total progeny


def _embedded_tail_chunk(idx, size, *, spec, law2, seed, cycle_cap, stop_at):
    """Run embedded processes until ``X_hat`` dies; accumulate ``W_hat_T`` and ``S_hat_T``."""
    rng = stream(seed, "embedded-tail", idx)
    guard = _overflow_guard(spec)
    cum = np.cumsum(spec.transition, axis=1)[:, :-1]
    start = _draw_categorical(rng, spec.probs, size)
    state = start.copy()
    X = np.ones(size, dtype=np.int64)
    Znew = np.zeros(size, dtype=np.int64)
    W = np.zeros(size, dtype=np.int64)
    S = np.zeros(size, dtype=np.int64)
    cycles = np.zeros(size, dtype=np.int64)
    status = np.zeros(size, dtype=np.int8)
    S += 1  # X_hat_0 = 1 is counted at the start of the first cycle
    active = np.arange(size)
    while active.size:
        e = state[active]
        x = X[active]
        over = (x > guard) | (Znew[active] > guard)
        if over.any():
            status[active[over]] = FAILED
            keep = ~over
            active, x, e = active[keep], x[keep], e[keep]
        live = x > 0
        a = np.zeros_like(x)
        b = np.zeros_like(x)
        if live.any():
            a[live], b[live] = _offspring_step(spec, rng, e[live], x[live])
        zn = Znew[active]
        zl = zn > 0
        if zl.any():
            zn[zl] = law2.sample_sum(rng, zn[zl])
        Znew[active] = zn + b
        X[active] = a
        # next environment state decides whether the cycle closes
        u = rng.random(active.size)
        nxt = (u[:, None] >= cum[e]).sum(axis=1).astype(np.int8)
        state[active] = nxt
        closed = nxt == start[active]
        if closed.any():
            ci = active[closed]
            W[ci] += Znew[ci]
            Znew[ci] = 0
            cycles[ci] += 1
            dead = X[ci] == 0
            status[ci[dead]] = COMPLETE
            alive = ci[~dead]
            S[alive] += X[alive]
            if stop_at is not None:
                hit = W[alive] > stop_at
                status[alive[hit]] = STOPPED
            capped = alive[(cycles[alive] >= cycle_cap) & (status[alive] == 0)]
            status[capped] = CENSORED
        active = active[status[active] == 0]
    return W.astype(float), S.astype(float), status


def embedded_tail_samples(
    spec: EnvironmentSpec,
    law2: OffspringLaw2,
    replicates: int,
    seed: int = 0,
    cycle_cap: int = 1_000_000,
    stop_at: float | None = None,
    workers: int = 1,
) -> dict[str, TailSample]:
    """Total progeny ``W_hat_T`` and ``S_hat_T`` of the embedded process.

    Type-2 daughters are counted at the end of the cycle in which they are
    born, after evolving with the type-2 law to the regeneration time.
    """
    if spec.kind != "markov":
        raise ValueError("embedded tails need a Markov environment")
    parts = map_chunks(
        _embedded_tail_chunk,
        replicates,
        workers,
        spec=spec,
        law2=law2,
        seed=seed,
        cycle_cap=cycle_cap,
        stop_at=stop_at,
    )
    status = np.concatenate([p[2] for p in parts])
    W = np.concatenate([p[0] for p in parts])
    S = np.concatenate([p[1] for p in parts])
    return {
        "W_T": TailSample("W_T", W, status, cycle_cap, stop_at),
        "S_T": TailSample("S_T", S, status, cycle_cap, stop_at),
    }
