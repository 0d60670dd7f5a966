"""Theoretical rates and constants, and estimators for the empirical ones.

Predictions carry a short formula identifier so reports show which
asymptotic relation produced each number.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .offspring import OffspringLaw1, OffspringLaw2

KAPPA_ONE_TOL = 1e-9
KAPPA_MAX = 64.0


class NoRootError(ValueError):
    """``E[mu1**kappa] = 1`` has no root in ``(0, KAPPA_MAX]``."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message} ({', '.join(f'{k}={v}' for k, v in diagnostics.items())})")
        self.diagnostics = diagnostics


# ---------------------------------------------------------------------------
# kappa


def _as_law(mu1_law):
    if hasattr(mu1_law, "laws") and hasattr(mu1_law, "probs"):
        # an environment spec: stationary law of mu1 over states
        values = np.array([law.moments().mu1 for law in mu1_law.laws])
        probs = np.asarray(mu1_law.probs, dtype=float)
    else:
        values, probs = mu1_law
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
    keep = probs > 0
    return values[keep], probs[keep]


def power_moment(values, probs, kappa: float) -> float:
    """``E[mu1**kappa]`` computed through logs (stable for large kappa)."""
    logs = np.log(probs) + kappa * np.log(values)
    return float(np.exp(special.logsumexp(logs)))


def solve_kappa(mu1_law, kappa_max: float = KAPPA_MAX) -> float:
    """Positive root of ``E[mu1**kappa] = 1``.

    ``mu1_law`` is ``(values, probs)``, an environment spec (stationary law),
    or a callable ``kappa -> E[mu1**kappa]`` for laws with infinite support;
    the callable may return ``inf`` where the moment diverges.  The map is
    convex with value 1 at 0 and slope ``E[log mu1]`` there, so a positive
    root exists iff the slope is negative and ``P[mu1 > 1] > 0``.
    """
    if callable(mu1_law):
        moment = mu1_law
        slope = (moment(1e-6) - 1.0) / 1e-6
        diag = {"E_log_mu1_approx": slope}
        if not slope < 0:
            raise NoRootError("kappa needs E[log mu1] < 0", diag)
    else:
        values, probs = _as_law(mu1_law)
        if np.any(values <= 0):
            raise NoRootError("mu1 must be positive", {"min_mu1": float(values.min())})
        drift = float(probs @ np.log(values))
        p_up = float(probs[values > 1].sum())
        diag = {"E_log_mu1": drift, "P_mu1_gt_1": p_up}
        if not drift < 0:
            raise NoRootError("kappa needs E[log mu1] < 0", diag)
        if p_up == 0.0:
            raise NoRootError("kappa needs P[mu1 > 1] > 0", diag)

        def moment(k):
            return power_moment(values, probs, k)

    def g(k):
        v = moment(k) - 1.0
        # a divergent moment lies beyond the root: keep brentq's bracket finite
        return v if np.isfinite(v) else 1.0

    lo, hi = 1e-6, 1.0
    while g(hi) < 0:
        lo = hi
        hi *= 2.0
        if hi > kappa_max:
            diag["E_mu1_kappa_max_minus_1"] = g(kappa_max)
            raise NoRootError(f"no sign change below kappa_max={kappa_max}", diag)
    if g(lo) >= 0:
        # root below 1e-6 (drift barely negative); refine from the left
        lo = 1e-300
    if not np.isfinite(moment(hi)):
        # shrink the bracket onto the finite side so the root is a true zero
        a, b = lo, hi
        for _ in range(200):
            mid = 0.5 * (a + b)
            if np.isfinite(moment(mid)) and g(mid) < 0:
                a = mid
            elif np.isfinite(moment(mid)):
                b = mid
                break
            else:
                b = mid
        lo, hi = a, b
        if not np.isfinite(moment(hi)):
            diag["divergence_near"] = hi
            raise NoRootError("moment diverges before reaching 1", diag)
    root = optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return float(root)


def q_kappa(n, kappa: float):
    """Decay rate: ``n**-kappa``, ``log(n)/n`` or ``1/n`` below, at and above 1."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 2):
        raise ValueError("q_kappa needs n >= 2")
    if kappa <= 0:
        raise ValueError("q_kappa needs kappa > 0")
    if abs(kappa - 1.0) < KAPPA_ONE_TOL:
        out = np.log(n) / n
    elif kappa < 1:
        out = n**-kappa
    else:
        out = 1.0 / n
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# total progeny Laplace transform


def total_progeny_laplace(law1: OffspringLaw1, lam: float, tol: float = 1e-15, max_iter: int = 10_000_000):
    """``phi(lam) = E[exp(-lam S_T)]`` for a constant environment.

    Solves ``phi = exp(-lam) f(phi, 1)`` by fixed-point iteration from
    ``phi = 0`` in complement form ``u = 1 - phi``, which increases to the
    minimal root.  Returns ``(phi, residual)``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    m = law1.moments()
    if m.mu1 > 1:
        raise ValueError("total progeny is finite a.s. only for mu1 <= 1")
    if lam == 0:
        return 1.0, 0.0
    a = -math.expm1(-lam)
    b = math.exp(-lam)

    def g(u):
        return a + b * float(law1.pgf_bar(u, 0.0))

    u = 1.0
    for _ in range(max_iter):
        nu = g(u)
        if abs(nu - u) <= tol * max(nu, 1e-300):
            u = nu
            break
        u = nu
    resid = abs(u - g(u))
    return 1.0 - u, resid


# ---------------------------------------------------------------------------
# constant environment


def constant_env_predictions(law1: OffspringLaw1, law2: OffspringLaw2, n: int) -> dict:
    """Leading-order survival probabilities for a constant environment."""
    m = law1.moments()
    m2 = law2.m2
    if abs(m.mu1 - 1.0) < 1e-12:
        return {
            "regime": "constant_critical",
            "px": 2.0 / (m.mu2 * n),
            "pz": 2.0 * math.sqrt(m.theta1) / math.sqrt(m2 * m.mu2 * n),
            "formula_px": "2/(mu2 n)",
            "formula_pz": "2 sqrt(theta1)/sqrt(m2 mu2 n)",
        }
    if m.mu1 < 1.0:
        return {
            "regime": "constant_subcritical",
            "px": None,
            "pz": 2.0 * m.theta1 / (m2 * (1.0 - m.mu1) * n),
            "formula_px": "exponential decay",
            "formula_pz": "2 theta1/(m2 (1-mu1) n)",
        }
    raise ValueError("supercritical type-1 law: no decay prediction")


# ---------------------------------------------------------------------------
# tails


@dataclass(frozen=True)
class TailFit:
    kappa: float
    C: float
    hill_by_k: np.ndarray
    ks: np.ndarray
    spread: float  # (max - min)/median of Hill estimates over the fit range
    plateau_spread: float  # same for x**kappa * tail over the fit range
    n_exceed: int
    power_law: bool
    unreliable: bool = False

    def diagnostics(self) -> dict:
        return {
            "spread": self.spread,
            "plateau_spread": self.plateau_spread,
            "n_exceed": self.n_exceed,
            "power_law": self.power_law,
            "unreliable": self.unreliable,
        }


def hill(sorted_desc: np.ndarray, k: int) -> float:
    """Hill estimate of the tail index from the top ``k`` order statistics."""
    top = sorted_desc[: k + 1]
    return 1.0 / float(np.mean(np.log(top[:k])) - math.log(top[k]))


def fit_tail_index(
    sample,
    fit_range: tuple[float, float] = (1e-2, 1e-4),
    n_points: int = 25,
    min_exceed: int = 10_000,
    spread_limit: float = 0.25,
) -> TailFit:
    """Hill estimator over top-fraction range ``fit_range`` plus a plateau fit for C.

    ``sample`` is an array of exact values or a ``TailSample``; for the latter
    every value in the fit range and above must be exact.  The reported
    index is the median of Hill estimates at log-spaced ``k``.
    """
    unreliable = False
    if hasattr(sample, "values") and hasattr(sample, "status"):
        unreliable = sample.unreliable
        limit = sample.valid_up_to
        n_total = sample.n_total
        vals = np.sort(sample.values)[::-1]
    else:
        vals = np.sort(np.asarray(sample, dtype=float))[::-1]
        n_total = vals.size
        limit = math.inf
    hi_frac, lo_frac = fit_range
    k_hi = int(n_total * hi_frac)
    k_lo = max(int(n_total * lo_frac), 10)
    if k_hi < min_exceed:
        raise ValueError(f"only {k_hi} exceedances in the fit range; need {min_exceed}")
    if vals[0] >= limit:
        # Hill uses every value above the k-th order statistic, so all must be exact
        raise ValueError("the top order statistics include incomplete runs; raise the cap or drop the threshold")
    vals = np.maximum(vals, np.finfo(float).tiny)
    ks = np.unique(np.round(np.geomspace(k_lo, k_hi, n_points)).astype(int))
    hs = np.array([hill(vals, k) for k in ks])
    kappa = float(np.median(hs))
    spread = float((hs.max() - hs.min()) / kappa)
    xs = vals[ks]
    tails = ks / n_total
    plateau = xs**kappa * tails
    C = float(np.median(plateau))
    plateau_spread = float((plateau.max() - plateau.min()) / C)
    return TailFit(
        kappa=kappa,
        C=C,
        hill_by_k=hs,
        ks=ks,
        spread=spread,
        plateau_spread=plateau_spread,
        n_exceed=int(k_hi),
        power_law=bool(spread < spread_limit),
        unreliable=unreliable,
    )


def tail_plateau(sample, xs, kappa: float) -> np.ndarray:
    """``x**kappa * P[stat > x]`` on the grid ``xs``."""
    xs = np.asarray(xs, dtype=float)
    return xs**kappa * sample.tail(xs)


# ---------------------------------------------------------------------------
# log laws


@dataclass(frozen=True)
class LogLawFit:
    K: float
    B: float  # coefficient of 1/log(n)**2 (0 for the pure model)
    goodness: float  # relative rms residual
    model: str
    K_tail: float | None = None
    ratio: float | None = None


def fit_log_law(ns, ps, se=None, model: str = "pure", tail_sample=None, tail_xs=None) -> LogLawFit:
    """Least squares fit of ``p_n = K/log n`` (``model='pure'``) or
    ``K/log n + B/log(n)**2`` (``model='shifted'``).

    With ``tail_sample`` (a ``TailSample`` of ``S1_T``) the tail estimate
    ``K_tail = median over tail_xs of log(x) P[S1_T > x]`` is reported with the
    ratio ``K / K_tail``.
    """
    ns = np.asarray(ns, dtype=float)
    ps = np.asarray(ps, dtype=float)
    if ns.size < 2 or ns.max() / ns.min() < 8:
        raise ValueError("a log-law fit needs a curve spanning at least three octaves")
    w = np.ones_like(ps) if se is None else 1.0 / np.maximum(np.asarray(se, dtype=float), 1e-300)
    L = np.log(ns)
    if model == "pure":
        X = (1.0 / L)[:, None]
    elif model == "shifted":
        X = np.column_stack([1.0 / L, 1.0 / L**2])
    else:
        raise ValueError(f"unknown model {model!r}")
    coef, *_ = np.linalg.lstsq(X * w[:, None], ps * w, rcond=None)
    fit = X @ coef
    goodness = float(np.sqrt(np.mean(((ps - fit) / ps) ** 2)))
    K = float(coef[0])
    B = float(coef[1]) if model == "shifted" else 0.0
    K_tail = ratio = None
    if tail_sample is not None:
        xs = np.asarray(tail_xs, dtype=float)
        K_tail = float(np.median(np.log(xs) * tail_sample.tail(xs)))
        ratio = K / K_tail
    return LogLawFit(K, B, goodness, model, K_tail, ratio)


def fit_log_tail(sample, xs, model: str = "pure") -> LogLawFit:
    """Fit ``P[stat > x] = K/log x (+ B/log(x)**2)`` to an empirical tail."""
    xs = np.asarray(xs, dtype=float)
    ps = sample.tail(xs)
    n = sample.n_total
    se = np.sqrt(ps * (1 - ps) / n)
    return fit_log_law(xs, ps, se, model)


# ---------------------------------------------------------------------------
# subcritical constants


def subcritical_constants(C_hat: float | None, kappa: float, m2: float, a: float = 1.0, mean_w: float | None = None):
    """``(K, a**min(1, kappa) * K)`` for the subcritical survival asymptotics.

    ``K = Gamma(1-kappa) C (2/(m2 a))**kappa`` for ``kappa < 1``,
    ``(2/(m2 a)) C`` at ``kappa = 1`` and ``(2/(m2 a)) E[W_T]`` above 1.  With
    ``a = 1`` (IID environments) both entries coincide.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    scale = 2.0 / (m2 * a)
    if abs(kappa - 1.0) < KAPPA_ONE_TOL:
        if C_hat is None:
            raise ValueError("kappa = 1 needs the tail constant")
        K = scale * C_hat
    elif kappa < 1.0:
        if C_hat is None:
            raise ValueError("kappa < 1 needs the tail constant")
        K = math.gamma(1.0 - kappa) * C_hat * scale**kappa
    else:
        if mean_w is None:
            raise ValueError("kappa > 1 needs E[W_T]")
        K = scale * mean_w
    return K, a ** min(1.0, kappa) * K


# ---------------------------------------------------------------------------
# reports


REGIMES = (
    "constant_critical",
    "constant_subcritical",
    "iid_critical",
    "iid_subcritical",
    "markov_critical",
    "markov_subcritical",
)


@dataclass
class AsymptoticReport:
    regime: str
    predicted: dict = field(default_factory=dict)  # name -> {"value", "formula"}
    measured: dict = field(default_factory=dict)  # name -> {"value", "se"}
    ratios: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")

    def predict(self, name: str, value: float, formula: str) -> None:
        self.predicted[name] = {"value": value, "formula": formula}

    def measure(self, name: str, value: float, se: float | None = None) -> None:
        self.measured[name] = {"value": value, "se": se}
        if name in self.predicted and self.predicted[name]["value"]:
            self.ratios[name] = value / self.predicted[name]["value"]

    def to_dict(self) -> dict:
        return asdict(self)


def classify(spec) -> str:
    """Regime label from the environment kind and the walk drift ``E[log mu1]``."""
    drift = spec.mean_zeta()
    crit = abs(drift) < 1e-12
    if drift > 1e-12:
        raise ValueError("supercritical environments are out of scope")
    base = {"constant": "constant", "iid": "iid", "markov": "markov"}[spec.kind]
    return f"{base}_{'critical' if crit else 'subcritical'}"
