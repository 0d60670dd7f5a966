"""Simulation of the two-type process and exact survival given an environment.

The process starts from one type-1 particle and no type-2 particles.  In
generation ``k`` every type-1 particle draws ``(xi1, xi2)`` from the law of
the current environment state; every type-2 particle draws ``eta`` from the
fixed critical law.  ``Y_k`` counts the type-2 daughters of the type-1
particles alive at time ``k`` (so ``Y_0 = Z_1``).

Conditional on the environment, survival probabilities follow from a backward
recursion over generating functions.  With ``w`` denoting complement values
``1 - v``,

    w_n = 1 - s1,     w_k = fbar_k(w_{k+1}, 1 - Q_{n-k-1}),

and a type-2 daughter born at time ``k + 1`` has ``n - k - 1`` generations
left in which to die out.  ``s1 = 1`` gives ``P[Z_n > 0]``, ``s1 = 0`` gives
``P[X_n + Z_n > 0]``, and ``s1 = 0`` with the type-2 slot pinned at 1 gives
``P[X_n > 0]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .environment import EnvironmentSpec, EnvSequence, _draw_categorical, sample_env, sample_env_block
from . import kernels
from .offspring import ExtinctionTable, OffspringLaw2, extinction_table
from .parallel import map_chunks
from .rng import stream

COUNT_CAP = 2**62
STATISTICS = ("S_T", "W_T", "S1_T", "S2_T")


class PopulationOverflow(OverflowError):
    pass


# ---------------------------------------------------------------------------
# records


@dataclass
class TrajectoryRecord:
    X: list
    Y: list
    Z: list
    T: int  # first n with X_n = 0, or the horizon when censored
    S_T: int
    W_T: int
    S1_T: float
    S2_T: float
    censored: bool
    env: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return len(self.X) - 1


@dataclass(frozen=True)
class SurvivalEstimate:
    n: int
    p_z: float
    p_x: float
    p_either: float
    se_z: float
    se_x: float
    se_either: float
    var_z: float
    replicates: int
    estimator: str
    failed: int = 0

    def as_row(self) -> dict:
        return {
            "n": self.n,
            "p_z": self.p_z,
            "se_z": self.se_z,
            "p_x": self.p_x,
            "se_x": self.se_x,
            "p_either": self.p_either,
            "se_either": self.se_either,
        }


# ---------------------------------------------------------------------------
# helpers


def _overflow_guard(spec: EnvironmentSpec) -> float:
    worst = 1.0
    for m in spec.moments():
        worst = max(worst, m.mu1, m.theta1)
    return COUNT_CAP / (8.0 * worst)


def _offspring_step(spec: EnvironmentSpec, rng, states: np.ndarray, x: np.ndarray):
    """Total ``(xi1, xi2)`` offspring of ``x[i]`` mothers in state ``states[i]``."""
    if spec.n_states == 1:
        return spec.laws[0].sample_sum(rng, x)
    x1 = np.zeros_like(x)
    x2 = np.zeros_like(x)
    for s, law in enumerate(spec.laws):
        m = states == s
        if m.any():
            a, b = law.sample_sum(rng, x[m])
            x1[m] = a
            x2[m] = b
    return x1, x2


def _env_step(spec: EnvironmentSpec, rng, prev: np.ndarray | None, size: int) -> np.ndarray:
    if spec.kind == "constant":
        return np.zeros(size, dtype=np.int8)
    if spec.kind == "iid" or prev is None:
        return _draw_categorical(rng, spec.probs, size)
    cum = np.cumsum(spec.transition, axis=1)[:, :-1]
    u = rng.random(size)
    return (u[:, None] >= cum[prev]).sum(axis=1).astype(np.int8)


def _ensure_table(law2: OffspringLaw2, n: int, extab: ExtinctionTable | None) -> ExtinctionTable:
    if extab is not None and extab.horizon >= n:
        return extab
    return extinction_table(law2, max(n, 1))


# ---------------------------------------------------------------------------
# single trajectory


def simulate(
    spec: EnvironmentSpec,
    law2: OffspringLaw2,
    n: int,
    rng: np.random.Generator,
    env: EnvSequence | np.ndarray | None = None,
) -> TrajectoryRecord:
    """Simulate one path up to horizon ``n``."""
    if n < 1:
        raise ValueError("horizon must be at least 1")
    if env is None:
        states = sample_env(spec, n, rng).states
    else:
        states = np.asarray(env.states if isinstance(env, EnvSequence) else env)
        if len(states) < n:
            raise ValueError("environment sequence shorter than the horizon")
    theta1, theta2 = spec.theta_values()
    x, z = 1, 0
    X, Y, Z = [1], [], [0]
    S = W = 0
    S1 = S2 = 0.0
    T = None
    one = np.ones(1, dtype=np.int64)
    for k in range(n):
        e = int(states[k])
        if x > 0:
            S += x
            S1 += x * theta1[e]
            S2 += x * theta2[e]
        a, b = spec.laws[e].sample_sum(rng, one * x)
        x_new, y = int(a[0]), int(b[0])
        z_new = int(law2.sample_sum(rng, one * z)[0]) + y
        if x > 0:
            W += y
        if max(x_new, y, z_new) > COUNT_CAP:
            raise PopulationOverflow(f"population exceeded 2**62 at generation {k + 1}")
        Y.append(y)
        X.append(x_new)
        Z.append(z_new)
        x, z = x_new, z_new
        if x == 0 and T is None:
            T = k + 1
    censored = T is None
    return TrajectoryRecord(
        X=X,
        Y=Y,
        Z=Z,
        T=n if censored else T,
        S_T=S,
        W_T=W,
        S1_T=S1,
        S2_T=S2,
        censored=censored,
        env=[int(s) for s in states[:n]],
    )


def simulate_to_horizon(
    spec: EnvironmentSpec,
    law2: OffspringLaw2,
    env: np.ndarray,
    rng: np.random.Generator,
    record_at: Sequence[int] | None = None,
):
    """Vectorized simulation of ``R`` paths along the rows of ``env``.

    Returns ``(X_at, Z_at, failed)``: population sizes at each horizon in
    ``record_at`` (default: the last column) and a per-replicate overflow
    flag.  Failed replicates stop evolving.
    """
    R, n = env.shape
    record_at = [n] if record_at is None else sorted(record_at)
    guard = _overflow_guard(spec)
    X = np.ones(R, dtype=np.int64)
    Z = np.zeros(R, dtype=np.int64)
    failed = np.zeros(R, dtype=bool)
    X_at = np.zeros((len(record_at), R), dtype=np.int64)
    Z_at = np.zeros((len(record_at), R), dtype=np.int64)
    want = {h: i for i, h in enumerate(record_at)}
    for k in range(n):
        live = np.flatnonzero((X > 0) & ~failed)
        znz = np.flatnonzero((Z > 0) & ~failed)
        y = np.zeros(R, dtype=np.int64)
        if live.size:
            over = X[live] > guard
            if over.any():
                failed[live[over]] = True
                live = live[~over]
            a, b = _offspring_step(spec, rng, env[live, k], X[live])
            X[live] = a
            y[live] = b
        if znz.size:
            over = Z[znz] > guard
            if over.any():
                failed[znz[over]] = True
                znz = znz[~over]
            Z[znz] = law2.sample_sum(rng, Z[znz])
        Z += y
        if (k + 1) in want:
            i = want[k + 1]
            X_at[i] = X
            Z_at[i] = Z
    return X_at, Z_at, failed


# ---------------------------------------------------------------------------
# exact survival given the environment


def _bar_by_state(spec: EnvironmentSpec, col: np.ndarray, W: np.ndarray, U2: np.ndarray) -> np.ndarray:
    laws = spec.laws
    if len(laws) == 1:
        return laws[0].pgf_bar(W, U2)
    if len(laws) == 2:
        return np.where(col == 0, laws[0].pgf_bar(W, U2), laws[1].pgf_bar(W, U2))
    out = np.empty_like(W)
    for s, law in enumerate(laws):
        m = col == s
        if m.any():
            out[..., m] = law.pgf_bar(W[..., m], U2)
    return out


def survival_given_env_batch(
    spec: EnvironmentSpec,
    env: np.ndarray,
    law2: OffspringLaw2,
    n: int | None = None,
    extab: ExtinctionTable | None = None,
    which: str = "zxe",
    fast: bool = True,
) -> dict[str, np.ndarray]:
    """Exact ``P[Z_n>0 | env]``, ``P[X_n>0 | env]``, ``P[X_n+Z_n>0 | env]``.

    ``env`` is an ``(R, >= n)`` array of state indices; only its first ``n``
    columns matter.  ``which`` selects any of ``z``, ``x``, ``e``.  ``fast``
    uses the compiled kernel when every state is a supported product law.
    """
    env = np.atleast_2d(env)
    R = env.shape[0]
    n = env.shape[1] if n is None else n
    if env.shape[1] < n:
        raise ValueError("environment shorter than the horizon")
    extab = _ensure_table(law2, n, extab)
    surv = extab.survival
    keys = [c for c in "zxe" if c in which]
    init = {"z": 0.0, "x": 1.0, "e": 1.0}
    enc = kernels.encode_spec(spec) if fast else None
    if enc is not None:
        u2 = surv[n - 1 - np.arange(n)]
        c = np.empty((len(keys), spec.n_states, n))
        for j, key in enumerate(keys):
            for s, law in enumerate(spec.laws):
                c[j, s] = 0.0 if key == "x" else law.xi2.pgf_bar(u2)
        start = np.array([init[key] for key in keys])
        W = kernels.product_backward(np.ascontiguousarray(env[:, :n].T), n, *enc, c, start)
        return {key: W[i] for i, key in enumerate(keys)}
    W = np.empty((len(keys), R))
    for i, c in enumerate(keys):
        W[i] = init[c]
    pin = np.array([[0.0 if c == "x" else 1.0] for c in keys])  # x slot ignores type 2
    for k in range(n - 1, -1, -1):
        U2 = pin * surv[n - k - 1]
        W = _bar_by_state(spec, env[:, k], W, U2)
    return {c: W[i] for i, c in enumerate(keys)}


def survival_given_env_ragged(
    spec: EnvironmentSpec,
    env: np.ndarray,
    horizons: np.ndarray,
    law2: OffspringLaw2,
    extab: ExtinctionTable | None = None,
    which: str = "zxe",
    fast: bool = True,
) -> dict[str, np.ndarray]:
    """Like ``survival_given_env_batch`` with a separate horizon for every row."""
    env = np.atleast_2d(env)
    horizons = np.asarray(horizons, dtype=np.int64)
    nmax = int(horizons.max())
    if env.shape[1] < nmax:
        raise ValueError("environment shorter than the largest horizon")
    extab = _ensure_table(law2, nmax, extab)
    surv = np.ascontiguousarray(extab.survival)
    keys = [c for c in "zxe" if c in which]
    init = {"z": 0.0, "x": 1.0, "e": 1.0}
    enc1 = kernels.encode_spec(spec) if fast else None
    enc2 = kernels.encode_xi2(spec) if fast else None
    out = {}
    if enc1 is not None and enc2 is not None:
        env_t = np.ascontiguousarray(env[:, :nmax].T)
        for key in keys:
            pin = 0.0 if key == "x" else 1.0
            out[key] = kernels.product_backward_ragged(env_t, horizons, *enc1, *enc2, surv, init[key], pin)
        return out
    for key in keys:
        w = np.full(env.shape[0], init[key])
        pin = 0.0 if key == "x" else 1.0
        for k in range(nmax - 1, -1, -1):
            m = horizons > k
            idx = np.flatnonzero(m)
            u2 = pin * surv[horizons[idx] - k - 1]
            col = env[idx, k]
            vals = np.empty(idx.size)
            for s_, law in enumerate(spec.laws):
                sel = col == s_
                if sel.any():
                    vals[sel] = law.pgf_bar(w[idx][sel], u2[sel])
            w[idx] = vals
        out[key] = w
    return out


def survival_given_env(env_seq, law2: OffspringLaw2, n: int, spec: EnvironmentSpec | None = None):
    """Exact ``(pz, px, peither)`` conditional on one environment sequence."""
    if isinstance(env_seq, EnvSequence):
        spec = env_seq.spec
        states = env_seq.states
    else:
        states = np.asarray(env_seq)
        if spec is None:
            raise ValueError("spec is required with a raw state array")
    out = survival_given_env_batch(spec, states[None, :], law2, n)
    return float(out["z"][0]), float(out["x"][0]), float(out["e"][0])


def exact_constant_survival(spec: EnvironmentSpec, law2: OffspringLaw2, n: int, extab=None):
    """``(pz, px, peither)`` for a constant environment (no randomness left)."""
    if spec.kind != "constant":
        raise ValueError("exact_constant_survival needs a constant environment")
    env = np.zeros((1, n), dtype=np.int8)
    out = survival_given_env_batch(spec, env, law2, n, extab)
    return float(out["z"][0]), float(out["x"][0]), float(out["e"][0])


# ---------------------------------------------------------------------------
# survival estimators


def _moments(vals: np.ndarray) -> tuple[int, float, float]:
    """``(count, mean, sum of squared deviations)`` of one chunk."""
    mean = float(vals.mean())
    return int(vals.size), mean, float(((vals - mean) ** 2).sum())


def _merge(a, b):
    # pairwise update of (count, mean, M2)
    na, ma, sa = a
    nb, mb, sb = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * nb / n, sa + sb + delta * delta * na * nb / n


def _rb_chunk(idx, size, *, spec, law2, horizons, seed, extab, which):
    rng = stream(seed, "rb-env", max(horizons), idx)
    env = sample_env_block(spec, size, max(horizons), rng)
    res = []
    for n in horizons:
        out = survival_given_env_batch(spec, env, law2, n, extab, which)
        res.append({c: _moments(v) for c, v in out.items()})
    return res, 0


def _naive_chunk(idx, size, *, spec, law2, horizons, seed, extab, which):
    rng = stream(seed, "naive", max(horizons), idx)
    env = sample_env_block(spec, size, max(horizons), rng)
    X_at, Z_at, failed = simulate_to_horizon(spec, law2, env, rng, record_at=horizons)
    ok = ~failed
    res = []
    for i, _ in enumerate(horizons):
        x = X_at[i][ok] > 0
        z = Z_at[i][ok] > 0
        ind = {"z": z, "x": x, "e": x | z}
        res.append({c: _moments(ind[c].astype(float)) for c in "zxe" if c in which})
    return res, int(failed.sum())


def _finish(total, n, estimator, failed) -> SurvivalEstimate:
    vals = {}
    for c in "zxe":
        if c not in total:
            vals[c] = (math.nan, math.nan, math.nan)
            continue
        m, mean, m2 = total[c]
        var = m2 / max(m - 1, 1)
        vals[c] = (mean, math.sqrt(var / m), var)
    reps = total[next(iter(total))][0]
    return SurvivalEstimate(
        n=n,
        p_z=vals["z"][0],
        p_x=vals["x"][0],
        p_either=vals["e"][0],
        se_z=vals["z"][1],
        se_x=vals["x"][1],
        se_either=vals["e"][1],
        var_z=vals["z"][2],
        replicates=reps,
        estimator=estimator,
        failed=failed,
    )


def estimate_survival_curve(
    spec: EnvironmentSpec,
    law2: OffspringLaw2,
    horizons: Sequence[int],
    replicates: int,
    estimator: str = "rao_blackwell",
    seed: int = 0,
    workers: int = 1,
    which: str = "zxe",
) -> list[SurvivalEstimate]:
    """Monte Carlo survival probabilities at several horizons.

    Each chunk of replicates shares one environment block across horizons.
    The Rao-Blackwell estimator averages the exact conditional probabilities
    over sampled environments; the naive one averages indicators from full
    particle simulations.  Both are unbiased.
    """
    horizons = sorted(int(h) for h in horizons)
    if horizons[0] < 1:
        raise ValueError("horizons must be positive")
    if replicates < 1:
        raise ValueError("need at least one replicate")
    if estimator == "rao_blackwell":
        fn = _rb_chunk
    elif estimator == "naive":
        fn = _naive_chunk
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    extab = extinction_table(law2, max(horizons))
    parts = map_chunks(
        fn, replicates, workers, spec=spec, law2=law2, horizons=horizons, seed=seed, extab=extab, which=which
    )
    failed = sum(p[1] for p in parts)
    out = []
    for i, n in enumerate(horizons):
        total = {}
        for res, _ in parts:
            for c, mom in res[i].items():
                total[c] = _merge(total[c], mom) if c in total else mom
        out.append(_finish(total, n, estimator, failed))
    return out


def estimate_survival(spec, law2, n, replicates, estimator="rao_blackwell", seed=0, workers=1, which="zxe"):
    return estimate_survival_curve(spec, law2, [n], replicates, estimator, seed, workers, which)[0]


# ---------------------------------------------------------------------------
# total progeny tails


RUNNING, COMPLETE, CENSORED, STOPPED, FAILED = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class TailSample:
    """Per-replicate statistic values with completion status.

    Complete replicates (type-1 extinct before the step cap) carry exact
    values.  The rest carry lower bounds: ``stopped`` ones crossed the stop
    threshold, ``censored`` ones hit the step cap, ``failed`` ones overflowed.
    """

    statistic: str
    values: np.ndarray
    status: np.ndarray
    t_cap: int
    stop_at: float | None

    @property
    def n_total(self) -> int:
        return int(self.values.size)

    @property
    def complete(self) -> np.ndarray:
        return np.sort(self.values[self.status == COMPLETE])

    @property
    def n_censored(self) -> int:
        return int((self.status == CENSORED).sum())

    @property
    def n_stopped(self) -> int:
        return int((self.status == STOPPED).sum())

    @property
    def n_failed(self) -> int:
        return int((self.status == FAILED).sum())

    @property
    def censoring_fraction(self) -> float:
        return (self.n_censored + self.n_failed) / self.n_total

    @property
    def unreliable(self) -> bool:
        return self.censoring_fraction > 1e-3

    @property
    def valid_up_to(self) -> float:
        """Tail estimates are exact (unbiased) for ``x`` below this value."""
        lb = self.values[self.status != COMPLETE]
        return float(lb.min()) if lb.size else math.inf

    def tail(self, x, strict: bool = True):
        """``P[stat > x]`` estimated over all replicates."""
        x = np.asarray(x, dtype=float)
        srt = np.sort(self.values)
        cnt = srt.size - np.searchsorted(srt, x, side="right")
        p = cnt / self.n_total
        if strict:
            p = np.where(x < self.valid_up_to, p, np.nan)
        return float(p) if p.ndim == 0 else p

    def n_exceed(self, x):
        srt = np.sort(self.values)
        return srt.size - np.searchsorted(srt, np.asarray(x, dtype=float), side="right")


def _extinction_chunk(idx, size, *, spec, seed, t_cap, stop_at, stop_stats, purpose):
    rng = stream(seed, purpose, idx)
    theta1, theta2 = spec.theta_values()
    guard = _overflow_guard(spec)
    X = np.ones(size, dtype=np.int64)
    acc = {
        "S_T": np.zeros(size, dtype=np.int64),
        "W_T": np.zeros(size, dtype=np.int64),
        "S1_T": np.zeros(size),
        "S2_T": np.zeros(size),
    }
    T = np.zeros(size, dtype=np.int64)
    status = np.zeros(size, dtype=np.int8)
    state = np.zeros(size, dtype=np.int8)
    active = np.arange(size)
    k = 0
    while active.size and k < t_cap:
        e = _env_step(spec, rng, state[active] if k > 0 else None, active.size)
        state[active] = e
        x = X[active]
        over = x > guard
        if over.any():
            status[active[over]] = FAILED
            keep = ~over
            active, x, e = active[keep], x[keep], e[keep]
        acc["S_T"][active] += x
        acc["S1_T"][active] += x * theta1[e]
        acc["S2_T"][active] += x * theta2[e]
        a, b = _offspring_step(spec, rng, e, x)
        acc["W_T"][active] += b
        X[active] = a
        k += 1
        done = a == 0
        status[active[done]] = COMPLETE
        T[active[done]] = k
        running = ~done
        if stop_at is not None:
            crossed = running.copy()
            for name in stop_stats:
                crossed &= acc[name][active] > stop_at
            status[active[crossed]] = STOPPED
            running &= ~crossed
        active = active[running]
    status[active] = CENSORED
    T[status != COMPLETE] = k
    return {name: v.astype(float) for name, v in acc.items()}, status, T


def tail_samples_multi(
    spec: EnvironmentSpec,
    statistics: Sequence[str],
    replicates: int,
    seed: int = 0,
    t_cap: int = 1_000_000,
    stop_at: float | None = None,
    workers: int = 1,
    purpose: str = "tail",
) -> dict[str, TailSample]:
    """Total-progeny statistics from ``replicates`` runs until type-1 extinction.

    With ``stop_at`` a run also ends once every requested statistic exceeds the
    threshold; the tail is then exact below ``stop_at`` and the run costs at most
    ``stop_at`` generations (each generation adds at least one particle to S).
    """
    for s in statistics:
        if s not in STATISTICS:
            raise ValueError(f"unknown statistic {s!r}")
    parts = map_chunks(
        _extinction_chunk,
        replicates,
        workers,
        spec=spec,
        seed=seed,
        t_cap=t_cap,
        stop_at=stop_at,
        stop_stats=tuple(statistics),
        purpose=purpose,
    )
    status = np.concatenate([p[1] for p in parts])
    out = {}
    for s in statistics:
        vals = np.concatenate([p[0][s] for p in parts])
        out[s] = TailSample(s, vals, status, t_cap, stop_at)
    return out


def tail_samples(spec, law2, statistic, replicates, seed=0, t_cap=1_000_000, stop_at=None, workers=1):
    """Empirical tail of one total-progeny statistic (``law2`` does not enter)."""
    return tail_samples_multi(spec, [statistic], replicates, seed, t_cap, stop_at, workers)[statistic]


# ---------------------------------------------------------------------------
# CSV dumps


def write_trajectories_csv(path, records: Sequence[TrajectoryRecord]) -> None:
    """Columns ``replicate, k, X, Y, Z``; ``Y`` is blank at the final time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replicate", "k", "X", "Y", "Z"])
        for i, rec in enumerate(records):
            for k in range(len(rec.X)):
                y = rec.Y[k] if k < len(rec.Y) else ""
                w.writerow([i, k, rec.X[k], y, rec.Z[k]])


def write_tail_csv(path, sample: TailSample, xs=None) -> None:
    """Columns ``x, tail_prob, n_exceed`` on a log grid (or the given points)."""
    if xs is None:
        top = sample.values.max() if sample.n_total else 1.0
        limit = min(top, sample.valid_up_to)
        xs = np.unique(np.floor(np.logspace(0, math.log10(max(limit, 1.0)), 60)))
        xs = xs[xs < sample.valid_up_to]
    xs = np.asarray(xs, dtype=float)
    cnt = sample.n_exceed(xs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "tail_prob", "n_exceed"])
        for x, c in zip(xs, cnt):
            w.writerow([repr(float(x)), repr(float(c) / sample.n_total), int(c)])


def write_survival_csv(path, estimates: Sequence[SurvivalEstimate]) -> None:
    """Columns ``n, p_z, se_z, p_x, se_x, p_either, se_either``; floats via repr."""
    cols = ["n", "p_z", "se_z", "p_x", "se_x", "p_either", "se_either"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for est in estimates:
            row = est.as_row()
            w.writerow([int(row["n"])] + [repr(float(row[c])) for c in cols[1:]])
