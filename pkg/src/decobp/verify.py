"""Registry of verification checks run by ``decobp verify`` and the test suite.

Each check measures one property against a stated tolerance and returns one
or more ``CheckResult`` lines.  Suites group checks by the part of the
library they exercise; a check may belong to several suites.
"""

from __future__ import annotations

import filecmp
import functools
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import asymptotics as asy
from . import embedded as emb
from .config import SHIPPED, ExperimentConfig, TailConfig, shipped_config
from .environment import TwoStateTauLaw, sample_cycles
from .offspring import OffspringLaw2, extinction_table
from .process import (
    estimate_survival_curve,
    exact_constant_survival,
    tail_samples_multi,
)
from .rng import stream

SUITES = ("constant", "iid", "markov", "embedded", "asymptotics", "determinism")


@dataclass(frozen=True)
class CheckResult:
    name: str
    measured: float
    expected: str
    tolerance: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        extra = f"  [{self.detail}]" if self.detail else ""
        return f"{flag}  {self.name}: measured {self.measured:.6g}, expected {self.expected}, tolerance {self.tolerance}{extra}"


@dataclass(frozen=True)
class Check:
    name: str
    criterion: int
    suites: tuple[str, ...]
    description: str
    fn: Callable[..., list[CheckResult]]


@dataclass
class CheckRun:
    check: Check
    results: list[CheckResult] = field(default_factory=list)
    elapsed: float = 0.0
    error: str = ""

    @property
    def passed(self) -> bool:
        return not self.error and bool(self.results) and all(r.passed for r in self.results)


REGISTRY: dict[str, Check] = {}


def check(name: str, criterion: int, suites: tuple[str, ...], description: str):
    def deco(fn):
        REGISTRY[name] = Check(name, criterion, suites, description, fn)
        return fn

    return deco


def _in(x: float, lo: float, hi: float) -> bool:
    return bool(lo <= x <= hi)


def _within(name, value, lo, hi, expected, detail="") -> CheckResult:
    return CheckResult(name, float(value), expected, f"[{lo:g}, {hi:g}]", _in(value, lo, hi), detail)


def _atmost(name, value, limit, expected, detail="") -> CheckResult:
    return CheckResult(name, float(value), expected, f"<= {limit:g}", bool(value <= limit), detail)


def _runtime(name, elapsed, limit) -> CheckResult:
    return CheckResult(f"{name} runtime (s)", elapsed, f"< {limit:g} s", f"< {limit:g}", elapsed < limit)


def _z(a, sa, b, sb) -> float:
    s = math.hypot(sa, sb)
    if s == 0.0:
        return 0.0 if a == b else math.inf
    return (a - b) / s


# ---------------------------------------------------------------------------
# cached samples shared between checks


@functools.lru_cache(maxsize=None)
def _config(name: str) -> ExperimentConfig:
    return shipped_config(name)


@functools.lru_cache(maxsize=None)
def _v3_tails(name: str, workers: int):
    cfg = _config(name)
    t = cfg.tail
    return tail_samples_multi(cfg.spec, ("S_T", "S1_T"), t.replicates, cfg.master_seed, t.t_cap, t.stop_at, workers)


# ---------------------------------------------------------------------------
# constant environment


@check("extinction_law", 1, ("constant",), "type-2 extinction asymptotics and the exact linear-fractional case")
def _c1(workers: int = 1) -> list[CheckResult]:
    t0 = time.perf_counter()
    cfg = _config("V1")
    n = 100_000
    tab = extinction_table(cfg.type2, n)
    stat = tab.check_statistic(n)
    # mean-one geometric is linear fractional: n (1 - Q_n) m2 / 2 = n / (n+1) exactly
    lf = extinction_table(OffspringLaw2.geometric_mean_one(), n)
    ns = np.arange(1, n + 1, dtype=float)
    got = ns * lf.survival[1:] * lf.law.m2 / 2.0
    dev = float(np.max(np.abs(got / (ns / (ns + 1.0)) - 1.0)))
    elapsed = time.perf_counter() - t0
    return [
        _within("n(1-Q_n)m2/2 at n=1e5, Poisson type-2", stat, 0.99, 1.01, "1"),
        _atmost("max relative deviation of n(1-Q_n)m2/2 from n/(n+1) over n <= 1e5, geometric type-2", dev, 1e-12, "0"),
        _runtime("extinction_law", elapsed, 1.0),
    ]


@check("constant_critical", 2, ("constant",), "exact survival in a critical constant environment")
def _c2(workers: int = 1) -> list[CheckResult]:
    t0 = time.perf_counter()
    cfg = _config("V1")
    law = cfg.spec.laws[0]
    m = law.moments()
    m2 = cfg.type2.m2
    n = 10_000
    pz, px, _ = exact_constant_survival(cfg.spec, cfg.type2, n)
    elapsed = time.perf_counter() - t0
    rx = px * m.mu2 * n / 2.0
    rz = pz * math.sqrt(m2 * m.mu2 * n) / (2.0 * math.sqrt(m.theta1))
    return [
        _within("p_x mu2 n / 2 at n=1e4", rx, 0.95, 1.05, "1"),
        _within("p_z sqrt(m2 mu2 n) / (2 sqrt(theta1)) at n=1e4", rz, 0.90, 1.10, "1"),
        _runtime("constant_critical", elapsed, 10.0),
    ]


@check("constant_subcritical", 3, ("constant",), "exact survival in a subcritical constant environment")
def _c3(workers: int = 1) -> list[CheckResult]:
    t0 = time.perf_counter()
    cfg = _config("V2")
    m = cfg.spec.laws[0].moments()
    n = 10_000
    pz, _, _ = exact_constant_survival(cfg.spec, cfg.type2, n)
    elapsed = time.perf_counter() - t0
    r = pz * cfg.type2.m2 * (1.0 - m.mu1) * n / (2.0 * m.theta1)
    return [
        _within("p_z m2 (1-mu1) n / (2 theta1) at n=1e4", r, 0.90, 1.10, "1"),
        _runtime("constant_subcritical", elapsed, 10.0),
    ]


@check("progeny_laplace", 4, ("constant", "asymptotics"), "fixed point for the total-progeny Laplace transform")
def _c4(workers: int = 1) -> list[CheckResult]:
    lam = 1e-6
    crit = _config("V1").spec.laws[0]
    sub = _config("V2").spec.laws[0]
    out = []
    phi_c, res_c = asy.total_progeny_laplace(crit, lam)
    phi_s, res_s = asy.total_progeny_laplace(sub, lam)
    out.append(_atmost("fixed-point residual, critical", res_c, 1e-13, "0"))
    out.append(_atmost("fixed-point residual, subcritical", res_s, 1e-13, "0"))
    mc, ms = crit.moments(), sub.moments()
    out.append(_within("(1-phi)/sqrt(2 lam/mu2), critical, lam=1e-6", (1 - phi_c) / math.sqrt(2 * lam / mc.mu2), 0.98, 1.02, "1"))
    out.append(_within("(1-phi)(1-mu1)/lam, subcritical, lam=1e-6", (1 - phi_s) * (1 - ms.mu1) / lam, 0.99, 1.01, "1"))
    return out


# ---------------------------------------------------------------------------
# IID environment


@check("iid_critical_shape", 5, ("iid",), "sqrt(n) P[X_n > 0] is slowly varying in a critical IID environment")
def _c5(workers: int = 1) -> list[CheckResult]:
    t0 = time.perf_counter()
    cfg = _config("V3")
    ests = estimate_survival_curve(
        cfg.spec, cfg.type2, list(cfg.horizons), cfg.replicates, "rao_blackwell", cfg.master_seed, workers, which="x"
    )
    elapsed = time.perf_counter() - t0
    vals = np.array([math.sqrt(e.n) * e.p_x for e in ests])
    spread = float(vals.max() / vals.min() - 1.0)
    detail = ", ".join(f"n={e.n}: {v:.4f}" for e, v in zip(ests, vals))
    return [
        CheckResult("relative spread of sqrt(n) P[X_n>0], n=256..4096", spread, "< 0.25", "< 0.25", spread < 0.25, detail),
        _runtime("iid_critical_shape", elapsed, 600.0),
    ]


@check("rb_vs_naive", 6, ("iid",), "Rao-Blackwell and naive survival estimators agree")
def _c6a(workers: int = 1) -> list[CheckResult]:
    cfg = _config("V3")
    n, R = 64, 100_000
    rb = estimate_survival_curve(cfg.spec, cfg.type2, [n], R, "rao_blackwell", cfg.master_seed, workers)[0]
    nv = estimate_survival_curve(cfg.spec, cfg.type2, [n], R, "naive", cfg.master_seed + 1, workers)[0]
    out = []
    for c, attr in (("z", "z"), ("x", "x"), ("x+z", "either")):
        a, sa = getattr(rb, "p_" + attr), getattr(rb, "se_" + attr)
        b, sb = getattr(nv, "p_" + attr), getattr(nv, "se_" + attr)
        z = _z(a, sa, b, sb)
        out.append(
            CheckResult(
                f"|RB - naive| / joint SE for P[{c} > 0] at n=64", abs(z), "0", "<= 3", abs(z) <= 3.0, f"RB {a:.5f}, naive {b:.5f}"
            )
        )
    return out


def _top_decade(sample) -> np.ndarray:
    hi = min(sample.stop_at or math.inf, sample.valid_up_to)
    if not math.isfinite(hi):
        hi = float(np.max(sample.values))
    return np.geomspace(hi / 10.0, hi, 11)[:-1]


@check("tail_ratio", 6, ("iid",), "P[S1_T > x] / P[S_T > x] over the top decade, equal and mixed theta1")
def _c6b(workers: int = 1) -> list[CheckResult]:
    out = []
    for name in ("V3", "V3_mixed"):
        tails = _v3_tails(name, workers)
        s, s1 = tails["S_T"], tails["S1_T"]
        xs = _top_decade(s)
        ratio = s1.tail(xs) / s.tail(xs)
        lo, hi = float(np.min(ratio)), float(np.max(ratio))
        worst = lo if abs(lo - 1) > abs(hi - 1) else hi
        detail = f"x in [{xs[0]:.3g}, {xs[-1]:.3g}], range [{lo:.4f}, {hi:.4f}], {s.n_exceed(xs[-1])} exceedances at top"
        out.append(_within(f"{name}: worst tail ratio over top decade", worst, 0.8, 1.2, "1", detail))
    return out


@check("log_law_constants", 6, ("iid",), "survival-based and tail-based K agree in a critical IID environment")
def _c6c(workers: int = 1) -> list[CheckResult]:
    cfg = _config("V3")
    ns = [2**k for k in range(4, 14)]
    # the log law is for type-2 survival; type-1 survival decays like n^(-1/2)
    curve = estimate_survival_curve(cfg.spec, cfg.type2, ns, 100_000, "rao_blackwell", cfg.master_seed + 2, workers, which="z")
    ps = np.array([e.p_z for e in curve])
    se = np.array([e.se_z for e in curve])
    fit_s = asy.fit_log_law(ns, ps, se, model="shifted")
    tail = _v3_tails("V3", workers)["S1_T"]
    xs = np.logspace(1, 6.9, 24)
    fit_t = asy.fit_log_tail(tail, xs, model="shifted")
    ratio = fit_s.K / fit_t.K
    detail = (
        f"K from survival {fit_s.K:.4f}, K from tail {fit_t.K:.4f}, model K/log n + B/log^2 n; "
        f"raw log n P[Z_n>0] at n={ns[-1]}: {math.log(ns[-1]) * ps[-1]:.4f}"
    )
    return [_within("K_survival / K_tail", ratio, 0.7, 1.3, "1", detail)]


@check("kappa_solver", 7, ("iid", "asymptotics"), "root of E[mu1^kappa] = 1 and the no-root error")
def _c7(workers: int = 1) -> list[CheckResult]:
    out = []
    for name, target in (("V4_kappa1", 1.0), ("V4_kappa2", 2.0)):
        k = asy.solve_kappa(_config(name).spec)
        out.append(_atmost(f"|kappa - {target:g}| on {name}", abs(k - target), 1e-10, "0", f"kappa = {k!r}"))
    for label, law in (
        ("mu1 = 1 surely", ([1.0], [1.0])),
        ("mu1 <= 1 surely", ([0.5, 1.0], [0.5, 0.5])),
        ("E[log mu1] > 0", ([0.5, 4.0], [0.5, 0.5])),
    ):
        try:
            asy.solve_kappa(law)
            raised = False
        except asy.NoRootError:
            raised = True
        out.append(CheckResult(f"no-root error for {label}", float(raised), "1 (raised)", "exact", raised))
    return out


@check("hill_tail_index", 8, ("iid", "asymptotics"), "Hill estimate of the W_T tail index in subcritical IID environments")
def _c8(workers: int = 1) -> list[CheckResult]:
    t0 = time.perf_counter()
    out = []
    for name, lo, hi in (("V4_kappa2", 1.7, 2.3), ("V4_kappa1", 0.85, 1.15)):
        cfg = _config(name)
        t = cfg.tail
        w = tail_samples_multi(cfg.spec, ("W_T",), t.replicates, cfg.master_seed, t.t_cap, t.stop_at, workers)["W_T"]
        fit = asy.fit_tail_index(w)
        detail = f"C = {fit.C:.4g}, Hill spread {fit.spread:.3f}, censored {w.n_censored}"
        out.append(_within(f"Hill index of W_T on {name}", fit.kappa, lo, hi, f"{(lo + hi) / 2:g}", detail))
    out.append(_runtime("hill_tail_index", time.perf_counter() - t0, 900.0))
    return out


# ---------------------------------------------------------------------------
# Markov environment


TWO_STATE_GRID = [(p, d) for p in (0.1, 1 / 3, 0.5, 0.7) for d in (0.2, 0.5, 0.8, 1.0, 1.3)]


def _grid():
    for p, d in TWO_STATE_GRID:
        if d < min(1 / p, 1 / (1 - p)):
            yield p, d


@check("two_state_tau", 9, ("markov",), "closed-form law of the regeneration time of a two-state chain")
def _c9(workers: int = 1) -> list[CheckResult]:
    mass = mean = fact = 0.0
    for p, d in _grid():
        law = TwoStateTauLaw(p, d)
        mass = max(mass, abs(law.total_mass() - 1.0))
        mean = max(mean, abs(law.mean_minus_one() - 1.0))
        ref = law.reference_second_factorial()
        fact = max(fact, abs(law.second_factorial() - ref) / ref)
    out = [
        _atmost("max |sum_k P[tau=k] - 1| over grid", mass, 1e-12, "0"),
        _atmost("max |E[tau-1] - 1| over grid", mean, 1e-12, "0"),
        _atmost("max relative error of E[tau(tau-1)] over grid", fact, 1e-12, "0"),
    ]
    for name in ("V5", "V6"):
        cfg = _config(name)
        pi1, d = cfg.spec.two_state
        law = TwoStateTauLaw(pi1, d)
        tau, _ = emb.sample_cycle_stats(cfg.spec, cfg.embedded.cycles, cfg.master_seed, workers)
        tau = tau.astype(float)
        R = tau.size
        # pmf over the first few k, plus the two factorial moments
        zs = []
        for k in range(1, 6):
            hit = (tau == k).astype(float)
            p = law.pmf(k)
            zs.append((f"P[tau={k}]", (hit.mean() - p) / math.sqrt(p * (1 - p) / R)))
        tm = tau - 1.0
        zs.append(("E[tau-1]", (tm.mean() - 1.0) / (tm.std(ddof=1) / math.sqrt(R))))
        tt = tau * (tau - 1.0)
        zs.append(("E[tau(tau-1)]", (tt.mean() - law.reference_second_factorial()) / (tt.std(ddof=1) / math.sqrt(R))))
        worst = max(zs, key=lambda t: abs(t[1]))
        detail = ", ".join(f"{k}: {v:+.2f}" for k, v in zs)
        out.append(_atmost(f"{name}: max |z| of cycle statistics at {R} cycles", abs(worst[1]), 4.0, "0", detail))
    return out


@check("wald_identity", 10, ("markov",), "E[zeta_hat] = E[tau] E[zeta] over regeneration cycles")
def _c10(workers: int = 1) -> list[CheckResult]:
    out = []
    for name in ("V5", "V6"):
        cfg = _config(name)
        s = emb.embed_summary(cfg.spec, cfg.embedded.cycles, cfg.master_seed + 1, workers)
        z = abs(s.wald_gap) / s.wald_se
        detail = f"E[zeta_hat] {s.e_zeta_hat:.5f}, E[tau] {s.a:.5f}, E[zeta] {s.e_zeta:.5f}"
        out.append(_atmost(f"{name}: |E[zeta_hat] - E[tau] E[zeta]| / SE", z, 4.0, "0", detail))
    worst = 0.0
    rng = np.random.default_rng(0)
    cases = list(_grid())
    for p, d in cases:
        b1, b2 = rng.normal(size=2)
        law = TwoStateTauLaw(p, d)
        lhs = law.mean_cycle_sum(b1, b2)
        rhs = 2.0 * (p * b1 + (1 - p) * b2)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    for name in ("V5", "V6"):
        spec = _config(name).spec
        b = spec.zeta_values()
        law = TwoStateTauLaw(*spec.two_state)
        worst = max(worst, abs(law.mean_cycle_sum(*b) - 2.0 * spec.mean_zeta()))
    out.append(_atmost("max |E[zeta_hat] - 2 E[zeta]| from closed forms", worst, 1e-12, "0", f"{len(cases) + 2} cases"))
    return out


# ---------------------------------------------------------------------------
# embedded process


@check("embedded_moments", 11, ("embedded", "markov"), "closed-form cycle reproduction moments against numerical differentiation")
def _c11(workers: int = 1) -> list[CheckResult]:
    cfg = _config("V5")
    rng = stream(cfg.master_seed, "moment-check")
    batch = sample_cycles(cfg.spec, 120, rng, keep_states=True)
    m2 = cfg.type2.m2
    worst = 0.0
    m1_exact = True
    m2_err = 0.0
    for i in range(len(batch)):
        states = batch.states(i)
        cf = emb.cycle_moments_closed_form(states, cfg.spec.laws, cfg.type2)
        orc = emb.cycle_moments_oracle(states, cfg.spec.laws, cfg.type2)
        for f in ("mu1_hat", "mu2_hat", "theta1_hat", "theta2_hat"):
            a, b = getattr(cf, f), getattr(orc, f)
            worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
        m1_exact &= cf.m1_hat == 1.0
        m2_err = max(m2_err, abs(cf.m2_hat - cf.tau * m2) / (cf.tau * m2))
    return [
        _atmost(f"max relative error closed form vs oracle over {len(batch)} cycles", worst, 1e-6, "0"),
        CheckResult("m1_hat == 1 exactly", float(m1_exact), "1", "exact", bool(m1_exact)),
        _atmost("max relative error of m2_hat against tau m2", m2_err, 1e-6, "0"),
    ]


@functools.lru_cache(maxsize=None)
def _v6_prediction_inputs(workers: int):
    cfg = _config("V6")
    spec = cfg.spec
    kappa = asy.solve_kappa(lambda k: emb.moment_generating_mu1_hat(spec, k))
    a = emb.embed_summary(spec, cfg.embedded.cycles, cfg.master_seed + 3, workers).a
    tails = emb.embedded_tail_samples(spec, cfg.type2, 300_000, cfg.master_seed + 4, stop_at=1e6, workers=workers)
    xs = np.geomspace(1e2, 1e5, 13)
    C = float(np.median(asy.tail_plateau(tails["W_T"], xs, kappa)))
    return kappa, a, C


@check("embedded_consistency", 12, ("embedded", "markov"), "embedded and direct survival agree; subcritical prediction")
def _c12(workers: int = 1) -> list[CheckResult]:
    out = []
    for name in ("V5", "V6"):
        cfg = _config(name)
        rs = list(cfg.embedded.cycle_counts)
        R = cfg.embedded.replicates
        e_curve = emb.estimate_embedded_survival_curve(cfg.spec, cfg.type2, rs, R, cfg.master_seed + 5, workers)
        d_curve = emb.estimate_matched_survival_curve(cfg.spec, cfg.type2, rs, R, cfg.master_seed + 6, workers)
        fixed = emb.estimate_matched_survival_curve(
            cfg.spec, cfg.type2, rs, R, cfg.master_seed + 6, workers, which="z", conditional=False
        )
        for e, d, f in zip(e_curve, d_curve, fixed):
            worst, label = 0.0, ""
            for c in ("z", "x", "either"):
                z = _z(getattr(e, "p_" + c), getattr(e, "se_" + c), getattr(d, "p_" + c), getattr(d, "se_" + c))
                if abs(z) >= abs(worst):
                    worst, label = z, c
            zf = _z(e.p_z, e.se_z, f.p_z, f.se_z)
            detail = (
                f"P[Z>0] embedded {e.p_z:.5f} vs direct {d.p_z:.5f}; worst component {label}; "
                f"fixed horizon E[tau] r gives {f.p_z:.5f} (z {zf:+.2f})"
            )
            out.append(_atmost(f"{name} r={e.n}: |embedded - direct| / joint SE", abs(worst), 3.0, "0", detail))
        sw = emb.sandwich_check(cfg.spec, cfg.type2, 4 * max(rs), 20_000, cfg.master_seed + 7, workers)
        out.append(
            CheckResult(
                f"{name}: sandwich order violations at n={sw.n}",
                float(sw.violations),
                "0",
                "exact",
                sw.violations == 0,
                f"means {sw.lower:.5f} <= {sw.middle:.5f} <= {sw.upper:.5f}",
            )
        )
    cfg = _config("V6")
    kappa, a, C = _v6_prediction_inputs(workers)
    _, aK = asy.subcritical_constants(C, kappa, cfg.type2.m2, a=a)
    top = [n for n in cfg.horizons if n >= max(cfg.horizons) / 2]
    meas = estimate_survival_curve(cfg.spec, cfg.type2, top, cfg.replicates, "rao_blackwell", cfg.master_seed + 8, workers, which="z")
    for est in meas:
        pred = aK * asy.q_kappa(est.n, kappa)
        ratio = pred / est.p_z
        detail = f"kappa_hat {kappa:.4f}, a {a:.4f}, C_hat {C:.4f}, predicted {pred:.5f}, measured {est.p_z:.5f}"
        out.append(_within(f"V6 prediction / measured P[Z_n>0] at n={est.n}", ratio, 0.5, 2.0, "1", detail))
    return out


# ---------------------------------------------------------------------------
# determinism


def _shrink(cfg: ExperimentConfig) -> ExperimentConfig:
    """Small but multi-chunk version of a config for repeated runs."""
    horizons = tuple(n for n in cfg.horizons if n <= 1024) or cfg.horizons[:1]
    tail = None
    if cfg.tail is not None:
        tail = TailConfig(cfg.tail.statistics, 9000, cfg.tail.t_cap, 1e5)
    return cfg.replace(replicates=9000, horizons=horizons, tail=tail)


@check("determinism", 13, ("determinism",), "bit-identical CSV output across reruns and worker counts")
def _c13(workers: int = 1) -> list[CheckResult]:
    from .cli import run_survival_curve, run_tail

    out = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for name in SHIPPED:
            cfg = _shrink(_config(name))
            files = []
            for tag, w in (("a", 1), ("b", 1), ("c", 8)):
                d = tmp / f"{name}-{tag}"
                d.mkdir()
                paths = [run_survival_curve(cfg.replace(workers=w), d / "curve.csv")]
                if cfg.tail is not None:
                    paths.append(run_tail(cfg.replace(workers=w), d / "tail.csv"))
                files.append(paths)
            same = all(filecmp.cmp(p, q, shallow=False) for other in files[1:] for p, q in zip(files[0], other))
            out.append(
                CheckResult(
                    f"{name}: CSV identical for (workers 1, rerun, workers 8)",
                    float(same),
                    "1",
                    "bit-identical",
                    same,
                    f"{len(files[0])} file(s)",
                )
            )
    return out


# ---------------------------------------------------------------------------
# runner


def select(suite: str | None = None, names=None) -> list[Check]:
    if suite not in (None, "all") and suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    checks = list(REGISTRY.values())
    if suite not in (None, "all"):
        checks = [c for c in checks if suite in c.suites]
    if names:
        unknown = set(names) - set(REGISTRY)
        if unknown:
            raise ValueError(f"unknown check(s): {', '.join(sorted(unknown))}")
        checks = [c for c in checks if c.name in names]
    return checks


def run_check(chk: Check, workers: int = 1) -> CheckRun:
    run = CheckRun(chk)
    t0 = time.perf_counter()
    try:
        run.results = chk.fn(workers=workers)
    except Exception as exc:  # a crashing check is reported, the suite continues
        run.error = f"{type(exc).__name__}: {exc}"
    run.elapsed = time.perf_counter() - t0
    return run


def run_suite(suite: str | None = None, names=None, workers: int = 1, echo=print) -> list[CheckRun]:
    runs = []
    for chk in select(suite, names):
        run = run_check(chk, workers)
        if echo:
            echo(f"== {chk.name} (criterion {chk.criterion}; {run.elapsed:.1f} s)")
            for r in run.results:
                echo("  " + r.line())
            if run.error:
                echo(f"  FAIL  {chk.name}: {run.error}")
        runs.append(run)
    return runs
