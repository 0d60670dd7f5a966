"""Command-line experiment runner.

Every subcommand reads one config (a JSON file or the name of a shipped
verification config) and writes CSV, JSON or SVG under ``--out``.  Exit codes:
0 success, 1 failed check, 2 invalid config or arguments.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import asymptotics as asy
from . import embedded as emb
from .config import SHIPPED, ConfigError, ExperimentConfig, RunManifest, load, shipped_config, tool_version
from .process import (
    estimate_survival_curve,
    exact_constant_survival,
    simulate,
    survival_given_env,
    tail_samples_multi,
    write_survival_csv,
    write_tail_csv,
    write_trajectories_csv,
)
from .rng import stream

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# operations usable from Python


def run_survival_curve(cfg: ExperimentConfig, path) -> Path:
    """Estimate the survival curve of ``cfg`` and write it as CSV."""
    ests = estimate_survival_curve(
        cfg.spec, cfg.type2, list(cfg.horizons), cfg.replicates, cfg.estimator, cfg.master_seed, cfg.workers
    )
    path = Path(path)
    write_survival_csv(path, ests)
    return path


def run_tail(cfg: ExperimentConfig, path) -> Path:
    """Sample the total-progeny statistics of ``cfg.tail`` and write one CSV.

    Columns are ``statistic, x, tail_prob, n_exceed`` on a shared grid below
    the validity limit of every statistic.
    """
    path = Path(path)
    _write_tail_table(path, _tail_samples(cfg))
    return path


def _write_tail_table(path: Path, samples) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["statistic", "x", "tail_prob", "n_exceed"])
        for stat, s in samples.items():
            for x, p, c in _tail_rows(s):
                w.writerow([stat, repr(x), repr(p), c])


def _tail_samples(cfg: ExperimentConfig):
    if cfg.tail is None:
        raise ConfigError("this command needs a 'tail' section", "tail")
    t = cfg.tail
    return tail_samples_multi(cfg.spec, t.statistics, t.replicates, cfg.master_seed, t.t_cap, t.stop_at, cfg.workers)


def _tail_rows(sample):
    limit = min(float(np.max(sample.values)), sample.valid_up_to)
    xs = np.unique(np.floor(np.logspace(0, math.log10(max(limit, 1.0)), 60)))
    xs = xs[xs < sample.valid_up_to]
    counts = sample.n_exceed(xs)
    return [(float(x), float(c) / sample.n_total, int(c)) for x, c in zip(xs, counts)]


def _manifest(cfg: ExperimentConfig, command: str, results, censoring, t0) -> RunManifest:
    return RunManifest(
        config_hash=cfg.content_hash(),
        tool_version=tool_version(),
        master_seed=cfg.master_seed,
        command=command,
        results=results,
        censoring=censoring,
        wall_time=time.perf_counter() - t0,
    )


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg, out: Path, args) -> int:
    n = args.horizon or max(cfg.horizons)
    records = [simulate(cfg.spec, cfg.type2, n, stream(cfg.master_seed, "simulate", i)) for i in range(args.trajectories)]
    write_trajectories_csv(out / "trajectories.csv", records)
    print(f"wrote {args.trajectories} trajectories to {out / 'trajectories.csv'}")
    return EXIT_OK


def cmd_exact(cfg, out: Path, args) -> int:
    """Exact survival: unconditional for a constant environment, else given one sampled environment."""
    rows = []
    if cfg.spec.kind == "constant":
        for n in cfg.horizons:
            pz, px, pe = exact_constant_survival(cfg.spec, cfg.type2, n)
            rows.append((n, pz, px, pe))
    else:
        from .environment import sample_env

        env = sample_env(cfg.spec, max(cfg.horizons), stream(cfg.master_seed, "exact-env"))
        for n in cfg.horizons:
            pz, px, pe = survival_given_env(env.states[:n], cfg.type2, n, spec=cfg.spec)
            rows.append((n, pz, px, pe))
    path = out / "exact.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "p_z", "p_x", "p_either"])
        for n, pz, px, pe in rows:
            w.writerow([n, repr(float(pz)), repr(float(px)), repr(float(pe))])
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_survival_curve(cfg, out: Path, args) -> int:
    t0 = time.perf_counter()
    if args.estimator:
        cfg = cfg.replace(estimator=args.estimator)
    path = run_survival_curve(cfg, out / cfg.outputs.get("survival_csv", "survival_curve.csv"))
    with open(path, newline="") as fh:
        rows = [dict(r) for r in csv.DictReader(fh)]
    man = _manifest(cfg, "survival-curve", rows, {"failed_replicates": 0}, t0)
    man.write(out / cfg.outputs.get("manifest", "manifest.json"))
    print(path.read_text(), end="")
    return EXIT_OK


def cmd_tail(cfg, out: Path, args) -> int:
    t0 = time.perf_counter()
    samples = _tail_samples(cfg)
    path = out / cfg.outputs.get("tail_csv", "tail.csv")
    _write_tail_table(path, samples)
    for stat, s in samples.items():
        write_tail_csv(out / f"tail_{stat}.csv", s)
    censoring = {
        stat: {
            "censored": s.n_censored,
            "stopped": s.n_stopped,
            "failed": s.n_failed,
            "fraction_censored": s.censoring_fraction,
            "unreliable": s.unreliable,
            "valid_up_to": s.valid_up_to if math.isfinite(s.valid_up_to) else None,
        }
        for stat, s in samples.items()
    }
    man = _manifest(cfg, "tail", [], censoring, t0)
    man.write(out / cfg.outputs.get("manifest", "manifest.json"))
    print(f"wrote {path}")
    return EXIT_OK


def _kappa_record(cfg) -> dict:
    spec = cfg.spec
    if spec.kind == "markov" and spec.n_states == 2:
        k = asy.solve_kappa(lambda x: emb.moment_generating_mu1_hat(spec, x))
        return {"kappa_hat": k, "law": "mu1_hat over regeneration cycles", "a": float(spec.n_states)}
    if spec.kind == "markov":
        k = asy.solve_kappa(lambda x: emb.moment_generating_mu1_hat_linear(spec, x))
        return {"kappa_hat": k, "law": "mu1_hat over regeneration cycles", "a": float(spec.n_states)}
    return {"kappa": asy.solve_kappa(spec), "law": "mu1 under the stationary law"}


def cmd_kappa(cfg, out: Path, args) -> int:
    try:
        rec = _kappa_record(cfg)
    except asy.NoRootError as exc:
        rec = {"error": str(exc), "diagnostics": exc.diagnostics}
        _write_json(out / "kappa.json", rec)
        print(json.dumps(_jsonable(rec), indent=2))
        return EXIT_CHECK_FAILED
    _write_json(out / "kappa.json", rec)
    print(json.dumps(_jsonable(rec), indent=2))
    return EXIT_OK


def cmd_embed(cfg, out: Path, args) -> int:
    if cfg.spec.kind != "markov":
        raise ConfigError("embed needs a Markov environment", "spec.kind")
    cycles = cfg.embedded.cycles if cfg.embedded else 100_000
    s = emb.embed_summary(cfg.spec, cycles, cfg.master_seed, cfg.workers)
    rec = dict(s.__dict__)
    rec["wald_ok"] = s.wald_ok
    _write_json(out / "embed_summary.json", rec)
    if cfg.embedded is not None:
        curve = emb.estimate_embedded_survival_curve(
            cfg.spec, cfg.type2, list(cfg.embedded.cycle_counts), cfg.embedded.replicates, cfg.master_seed, cfg.workers
        )
        write_survival_csv(out / "embedded_curve.csv", curve)
    print(json.dumps(_jsonable(rec), indent=2))
    return EXIT_OK


def cmd_fit(cfg, out: Path, args) -> int:
    if args.curve:
        from .plotting import read_curve_csv

        kind, x, cols = read_curve_csv(args.curve)
        if kind != "survival":
            raise UsageError("--curve must be a survival-curve CSV")
        col = args.column
        fit = asy.fit_log_law(x, cols[col], cols.get("se_" + col[2:]), model=args.model)
        rec = {"K": fit.K, "B": fit.B, "goodness": fit.goodness, "model": fit.model, "column": col}
    else:
        samples = _tail_samples(cfg)
        stat = args.statistic or next(iter(samples))
        if stat not in samples:
            raise UsageError(f"statistic {stat!r} is not in the config's tail section")
        tf = asy.fit_tail_index(samples[stat])
        rec = {"statistic": stat, "kappa_hat": tf.kappa, "C_hat": tf.C, **tf.diagnostics()}
    _write_json(out / "fit.json", rec)
    print(json.dumps(_jsonable(rec), indent=2))
    return EXIT_OK


def cmd_predict(cfg, out: Path, args) -> int:
    regime = asy.classify(cfg.spec)
    rep = asy.AsymptoticReport(regime)
    ns = list(cfg.horizons)
    if regime.startswith("constant"):
        for n in ns:
            p = asy.constant_env_predictions(cfg.spec.laws[0], cfg.type2, n)
            rep.predict(f"p_z(n={n})", p["pz"], p["formula_pz"])
            if p["px"] is not None:
                rep.predict(f"p_x(n={n})", p["px"], p["formula_px"])
    elif regime.endswith("subcritical"):
        krec = _kappa_record(cfg)
        kappa = krec.get("kappa", krec.get("kappa_hat"))
        a = krec.get("a", 1.0)
        rep.metadata.update(krec)
        if args.tail_constant is not None or args.mean_w is not None:
            _, aK = asy.subcritical_constants(args.tail_constant, kappa, cfg.type2.m2, a=a, mean_w=args.mean_w)
            for n in ns:
                rep.predict(f"p_z(n={n})", aK * asy.q_kappa(n, kappa), "a^min(1,kappa) K q_kappa(n)")
        else:
            rep.metadata["note"] = "pass --tail-constant (kappa <= 1) or --mean-w (kappa > 1) for absolute values"
            for n in ns:
                rep.predict(f"q_kappa(n={n})", asy.q_kappa(n, kappa), "q_kappa(n)")
    else:
        rep.metadata["note"] = "critical random environment: survival decays like K/log n; fit K with 'fit'"
    if args.measure:
        ests = estimate_survival_curve(
            cfg.spec, cfg.type2, ns, cfg.replicates, cfg.estimator, cfg.master_seed, cfg.workers
        )
        for e in ests:
            rep.measure(f"p_z(n={e.n})", e.p_z, e.se_z)
            if f"p_x(n={e.n})" in rep.predicted:
                rep.measure(f"p_x(n={e.n})", e.p_x, e.se_x)
    rec = rep.to_dict()
    _write_json(out / "predict.json", rec)
    print(json.dumps(_jsonable(rec), indent=2))
    return EXIT_OK


def cmd_plot(cfg, out: Path, args) -> int:
    from .plotting import emit_plot

    if not args.curve:
        raise UsageError("plot needs --curve CSV")
    default = cfg.outputs.get("plot", "plot.svg") if cfg is not None else "plot.svg"
    svg = out / (args.svg or default)
    c = emit_plot(args.curve, svg, args.overlay, args.column, args.constant, args.kappa, args.title or "")
    print(f"wrote {svg}" + (f" (overlay constant {c:.6g})" if c is not None else ""))
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    if args.list:
        for chk in verify.select(args.suite):
            print(f"{chk.name:22s} criterion {chk.criterion:2d}  [{', '.join(chk.suites)}]  {chk.description}")
        return EXIT_OK
    runs = verify.run_suite(args.suite, args.check or None, workers=args.workers or 1)
    failed = [r.check.name for r in runs if not r.passed]
    print(f"{len(runs) - len(failed)}/{len(runs)} checks passed" + (f"; failed: {', '.join(failed)}" if failed else ""))
    return EXIT_CHECK_FAILED if failed else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"config JSON path, or a shipped name ({', '.join(SHIPPED)})")
    common.add_argument("--seed", type=_u64, help="override the master seed")
    common.add_argument("--workers", type=_positive, help="worker processes (results do not depend on it)")
    common.add_argument("--out", default=None, help="output directory (default: the config's outputs.dir or .)")

    p = argparse.ArgumentParser(prog="decobp", description="Two-type branching processes in random environments.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate individual trajectories")
    s.add_argument("--trajectories", type=_positive, default=10)
    s.add_argument("--horizon", type=_positive, default=None)
    sub.add_parser("exact", parents=[common], help="exact survival by backward recursion")
    s = sub.add_parser("survival-curve", parents=[common], help="Monte Carlo survival curve at the config horizons")
    s.add_argument("--estimator", choices=["naive", "rao_blackwell"], default=None)
    sub.add_parser("tail", parents=[common], help="empirical tails of total-progeny statistics")
    sub.add_parser("kappa", parents=[common], help="tail exponent kappa of the environment")
    sub.add_parser("embed", parents=[common], help="regeneration-cycle summary and embedded survival curve")
    s = sub.add_parser("fit", parents=[common], help="fit K/log n to a curve, or a tail index to sampled tails")
    s.add_argument("--curve", help="survival-curve CSV for a log-law fit")
    s.add_argument("--model", choices=["pure", "shifted"], default="pure")
    s.add_argument("--column", choices=["p_z", "p_x", "p_either"], default="p_x")
    s.add_argument("--statistic", choices=["S_T", "W_T", "S1_T", "S2_T"], default=None)
    s = sub.add_parser("predict", parents=[common], help="asymptotic predictions at the config horizons")
    s.add_argument("--tail-constant", type=float, default=None, help="tail constant C of W_T")
    s.add_argument("--mean-w", type=float, default=None, help="E[W_T] for kappa > 1")
    s.add_argument("--measure", action="store_true", help="also estimate the curve and report ratios")
    s = sub.add_parser("plot", parents=[common], help="SVG of a curve or tail CSV with an overlay")
    s.add_argument("--curve", required=False)
    s.add_argument("--overlay", choices=["none", "sqrt", "inverse", "log", "power"], default="none")
    s.add_argument("--column", default="p_x")
    s.add_argument("--constant", type=float, default=None)
    s.add_argument("--kappa", type=float, default=None)
    s.add_argument("--title", default=None)
    s.add_argument("--svg", default=None, help="file name inside --out")
    s = sub.add_parser("verify", help="run verification checks")
    s.add_argument("--suite", default="all", help="all, constant, iid, markov, embedded, asymptotics, determinism")
    s.add_argument("--check", action="append", help="run only this check (repeatable)")
    s.add_argument("--list", action="store_true", help="list checks without running them")
    s.add_argument("--workers", type=_positive, default=1)
    return p


COMMANDS = {
    "simulate": cmd_simulate,
    "exact": cmd_exact,
    "survival-curve": cmd_survival_curve,
    "tail": cmd_tail,
    "kappa": cmd_kappa,
    "embed": cmd_embed,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "plot": cmd_plot,
}


def _resolve_config(args) -> ExperimentConfig | None:
    if args.config is None:
        return None
    if args.config in SHIPPED and not Path(args.config).exists():
        cfg = shipped_config(args.config)
    else:
        cfg = load(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.workers is not None:
        changes["workers"] = args.workers
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = _resolve_config(args)
        if cfg is None and args.command != "plot":
            raise UsageError(f"{args.command} needs --config")
        out = Path(args.out or (cfg.outputs.get("dir", ".") if cfg else "."))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
