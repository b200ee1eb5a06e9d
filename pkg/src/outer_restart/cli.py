"""Command-line entry point: ``outer-restart {simulate,sweep,period,regime,validate}``."""

from __future__ import annotations

import argparse
import csv
import math
import sys
import warnings
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, ExperimentConfig, load_sweep_config
from .mode_dynamics import (
    Kind,
    OuterHyperparams,
    RegimeError,
    complex_regime_interval,
    spectral_params,
    transition,
    transition_hb,
)
from .restart_analysis import (
    LowMomentumWarning,
    blockwise_oracle_period,
    crossover,
    envelope_rate,
    heuristic_period,
    oracle_period,
    rate_r_inf,
    rate_r_k,
)
from .sweep_harness import default_sweep_config, robustness_metric, run_sweep
from .trajectory_sim import Spectrum, simulate_blocks, simulate_full_quadratic, simulate_modes, write_trajectory_csv
from .validation import run_validation

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_REGIME = 4


def _num(v) -> str:
    """Full-precision rendering for machine-readable output."""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _human(v: float) -> str:
    if math.isinf(v) or math.isnan(v):
        return str(v)
    if abs(v) >= 10:
        return f"{v:.0f}"
    return f"{v:.2g}"


def _err(msg: str):
    print(f"error: {msg}", file=sys.stderr)


def _write_output(path: Optional[str], writer) -> None:
    if path is None:
        writer(sys.stdout)
        return
    with open(path, "w", newline="") as fh:
        writer(fh)


def cmd_simulate(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    sched = cfg.build_schedule()
    try:
        if cfg.model_type == "spectrum":
            traj = simulate_modes(cfg.spectrum(), cfg.hyper, cfg.kind, sched, cfg.horizon, x0=cfg.model["x0"])
        elif cfg.model_type == "blocks":
            traj = simulate_blocks(cfg.blocks(), cfg.kind, sched, cfg.horizon, hyper=cfg.hyper)
        else:
            problem, inner = cfg.quadratic()
            traj = simulate_full_quadratic(problem, inner, cfg.hyper, cfg.kind, sched, cfg.horizon)
    except ValueError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    out = args.output or cfg.output
    _write_output(out, lambda fh: write_trajectory_csv(traj, fh))
    summary = sys.stdout if out else sys.stderr
    if not args.quiet:
        if args.csv:
            print("final_loss,diverged_at,restart_rounds", file=summary)
            div = "" if traj.diverged_at is None else traj.diverged_at
            print(f"{_num(traj.final_loss)},{div},{' '.join(map(str, traj.restarted_at))}", file=summary)
        else:
            print(f"final loss: {traj.final_loss:.6g}", file=summary)
            print(f"restart rounds: {traj.restarted_at}", file=summary)
    if traj.diverged:
        _err(f"trajectory diverged at round {traj.diverged_at}; output truncated")
        return EXIT_DIVERGED
    return EXIT_OK


def _read_spectrum_file(path) -> Spectrum:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(str(path), exc.strerror) from None
    if not rows or "sigma" not in rows[0]:
        raise ConfigError(str(path), "spectrum CSV needs a header with a 'sigma' column (and optional 'weight')")
    try:
        sigmas = [float(r["sigma"]) for r in rows]
        weights = [float(r.get("weight") or 1.0) for r in rows]
        return Spectrum.direct(sigmas, weights)
    except ValueError as exc:
        raise ConfigError(str(path), str(exc)) from None


def _emit(report: dict, as_csv: bool):
    if as_csv:
        print(",".join(report))
        print(",".join(_num(v) if not isinstance(v, (tuple, list)) else " ".join(map(str, v)) for v in report.values()))
    else:
        for k, v in report.items():
            if isinstance(v, float):
                v = f"{v:.6g}"
            print(f"{k}: {v}")


def cmd_period(args) -> int:
    try:
        h = OuterHyperparams(args.nu, args.beta)
        kind = Kind.parse(args.kind)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if args.spectrum_file:
        try:
            spec = _read_spectrum_file(args.spectrum_file)
            rec = blockwise_oracle_period(spec, h, kind, args.kmin, args.kmax, args.criterion)
        except ValueError as exc:
            _err(str(exc))
            return EXIT_CONFIG
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LowMomentumWarning)
            heur = heuristic_period(spec.mean_sigma, h)
        report = {
            "modes": len(spec),
            "k_star": rec.k_star,
            "objective": rec.objective,
            "sigma_bar": spec.mean_sigma,
            "heuristic_k": heur,
            "k_phase": rec.k_phase,
        }
        _emit(report, args.csv)
        return EXIT_OK

    if args.sigma is None:
        _err("give --sigma or --spectrum-file")
        return EXIT_CONFIG
    if args.sigma == 0.0:
        _err("sigma = 0: the mode makes no progress, no cancellation exists")
        return EXIT_REGIME
    try:
        t = transition(args.sigma, h, kind)
        rec = oracle_period(t, args.kmin, args.kmax, args.criterion)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        sp = spectral_params(t)
        regime = sp.regime.value
        complex_ = sp.is_complex
        r_inf = rate_r_inf(h) if kind is Kind.HB else envelope_rate(t)
    except RegimeError:
        regime, complex_, r_inf = "Overshoot", False, math.nan
    report = {
        "regime": regime,
        "k_star": rec.k_star,
        "abs_chi_k_star": rec.objective,
        "r_k_star": rate_r_k(t, rec.k_star),
        "r_inf": r_inf,
        "crossover": crossover(t, rec.k_star) if complex_ else "n/a",
        "k_phase": rec.k_phase,
    }
    _emit(report, args.csv)
    if not complex_ and not args.no_phase:
        _err(f"{regime} regime: phase estimates are undefined (k_star above is from the brute-force scan)")
        return EXIT_REGIME
    return EXIT_OK


def cmd_regime(args) -> int:
    try:
        h = OuterHyperparams(args.nu, args.beta)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    if h.beta == 0.0:
        _err("beta = 0: no momentum, the complex regime is empty")
        return EXIT_CONFIG
    iv = complex_regime_interval(h)
    ends = [spectral_params(transition_hb(s, h, synthetic=True)).regime.value for s in (iv.lo, iv.hi)]
    covers = iv.hi > 1.0
    if args.csv:
        print("sigma_lo,sigma_hi,covers_lo_to_1,endpoint_lo,endpoint_hi")
        print(f"{_num(iv.lo)},{_num(iv.hi)},{int(covers)},{ends[0]},{ends[1]}")
    else:
        print(f"complex regime: sigma in ({_human(iv.lo)}, {_human(iv.hi)})")
        print(f"every sigma in ({_human(iv.lo)}, 1] oscillates: {'yes' if covers else 'no'}")
        print(f"endpoint classification: {ends[0]}, {ends[1]}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        if args.config:
            cfg, out_cfg = load_sweep_config(args.config)
        else:
            cfg, out_cfg = default_sweep_config(), None
    except ConfigError as exc:
        _err(f"invalid config: {exc}")
        return EXIT_CONFIG
    res = run_sweep(cfg)
    out = args.output or out_cfg
    _write_output(out, res.write_csv)
    if not args.quiet and out:
        lo, hi = cfg.loss_clip
        thr = 0.5 * (lo + hi)
        metric = robustness_metric(res, thr)
        print(f"{len(res.cells)} cells written to {out}")
        for kind in cfg.kinds:
            print(
                f"{kind}: fraction <= {thr:g}: no restart {metric[(kind, 'none')]:.3f}, "
                f"best restart {metric[(kind, 'best')]:.3f}"
            )
    return EXIT_OK


def cmd_validate(args) -> int:
    results = run_validation(inject_fault=args.inject_fault)
    if not args.quiet:
        for r in results:
            print(r.line())
    ok = all(r.passed for r in results)
    if not args.quiet:
        print("all checks passed" if ok else "validation FAILED")
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="output path (CSV); defaults to the config's 'output' or stdout")
    common.add_argument("--csv", action="store_true", help="machine-readable output with full precision")
    common.add_argument("--quiet", "-q", action="store_true", help="suppress the human-readable summary")

    p = argparse.ArgumentParser(prog="outer-restart", description="Outer-momentum restart laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one experiment config")
    s.add_argument("config")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", parents=[common], help="run a hyperparameter sweep")
    s.add_argument("config", nargs="?", help="sweep config JSON; omit for the default toy robustness sweep")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("period", parents=[common], help="recommend a restart period")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--sigma", type=float)
    src.add_argument("--spectrum-file", help="CSV with columns sigma[,weight]")
    s.add_argument("--nu", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=0.9)
    s.add_argument("--kind", default="HB", choices=["HB", "NAG", "hb", "nag"])
    s.add_argument("--kmin", type=int, default=1)
    s.add_argument("--kmax", type=int, default=64)
    s.add_argument("--criterion", choices=["factor", "rate"], default="factor",
                   help="minimise |chi_K| (factor) or maximise the per-round rate")
    s.add_argument("--no-phase", action="store_true", help="do not request phase estimates")
    s.set_defaults(func=cmd_period)

    s = sub.add_parser("regime", parents=[common], help="complex-regime sigma interval for HB")
    s.add_argument("--nu", type=float, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.set_defaults(func=cmd_regime)

    s = sub.add_parser("validate", parents=[common], help="run the embedded oracle checks")
    s.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
