"""Command-line interface for roughest"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from .config import ExperimentConfig, KappaSettings, get_settings, load_experiment
from .errors import RoughestError
from .estimators import EstimatorConfig, estimate
from .experiment import emit, experiment_table, fit_rates, load_results, run
from .kappa_table import hurst_grid, load_or_build
from .market import ModelParams, read_price_csv, simulate_general, simulate_piecewise, write_price_csv

logger = logging.getLogger(__name__)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML experiment manifest")
    parser.add_argument("--seed", type=int, help="base seed")
    parser.add_argument("--out", type=Path, help="output file or directory")
    parser.add_argument("--threads", type=int, help="worker processes")
    parser.add_argument("--kappa-cache", type=Path, help="kappa table cache file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roughest", description="Hurst and vol-of-vol estimation for rough volatility")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate one price path and write it as CSV")
    _common(sim)
    sim.add_argument("--model", choices=["piecewise", "general"], default="piecewise")
    sim.add_argument("--H", type=float, default=0.3)
    sim.add_argument("--eta", type=float, default=1.0)
    sim.add_argument("--N", type=int, default=12)
    sim.add_argument("--N-vol", type=int, default=6)
    sim.add_argument("--oversample", type=int, default=8)

    est = sub.add_parser("estimate", help="estimate (H, eta) from a price CSV")
    _common(est)
    est.add_argument("prices", type=Path)
    est.add_argument("--model", choices=["piecewise", "general"], default="piecewise")
    est.add_argument("--N-vol", type=int)

    exp = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    _common(exp)
    exp.add_argument("--no-plot", action="store_true", help="skip the SVG plot")

    kap = sub.add_parser("kappa-build", help="build or refresh the kappa table cache")
    _common(kap)
    kap.add_argument("--force", action="store_true", help="rebuild even when the cache matches")

    rate = sub.add_parser("rate-check", help="fit convergence rates to a finished experiment")
    _common(rate)
    rate.add_argument("results", type=Path, nargs="?", help="directory holding results.csv")
    rate.add_argument("--quantity", choices=["H", "eta"], default="H")
    rate.add_argument("--log-correction", action="store_true", help="fit a log log n covariate alongside N")
    return parser


def _manifest(args) -> Optional[ExperimentConfig]:
    if args.config is None:
        return None
    config = load_experiment(args.config)
    return config.with_overrides(
        base_seed=args.seed,
        output_dir=str(args.out) if args.out else None,
        threads=args.threads,
        kappa_cache=str(args.kappa_cache) if args.kappa_cache else None,
    )


def _estimator(config: Optional[ExperimentConfig], model: str) -> EstimatorConfig:
    return config.estimator if config else EstimatorConfig.for_model(model)


def cmd_simulate(args) -> int:
    est = _estimator(_manifest(args), args.model)
    params = ModelParams(H=args.H, eta=args.eta, h_minus=est.h_minus, h_plus=est.h_plus,
                         eta_minus=est.eta_minus, eta_plus=est.eta_plus)
    seed = args.seed if args.seed is not None else 0
    if args.model == "piecewise":
        prices = simulate_piecewise(params, args.N, args.N_vol, seed)
    else:
        prices = simulate_general(params, args.N, args.oversample, seed)
    out = args.out or Path(f"prices_{args.model}_N{args.N}_seed{seed}.csv")
    write_price_csv(prices, out)
    print(f"✓ Wrote {prices.n + 1} prices to {out}")
    return 0


def cmd_estimate(args) -> int:
    config = _manifest(args)
    est = _estimator(config, args.model)
    prices = read_price_csv(args.prices, model_kind=args.model, N_vol=args.N_vol)
    table = None
    if args.model == "general":
        settings = get_settings()
        cache = args.kappa_cache or settings.kappa_cache_path
        kap = config.kappa if config else KappaSettings()
        table = load_or_build(cache, hurst_grid(est.h_minus, est.h_plus, kap.h_step), range(0, prices.N),
                              est.order, quad_nodes=kap.quad_nodes, p_exact=kap.p_exact, tol=kap.tol,
                              workers=args.threads or settings.threads)
    result = estimate(prices, est, table)
    text = result.to_json(indent=2)
    if args.out:
        args.out.write_text(text + "\n")
        print(f"✓ Wrote estimate to {args.out}")
    else:
        print(text)
    for flag in result.flags:
        print(f"  ! {flag}", file=sys.stderr)
    return 0


def cmd_experiment(args) -> int:
    config = _manifest(args)
    if config is None:
        print("✗ experiment needs --config", file=sys.stderr)
        return 2
    results = run(config, progress=True)
    written = emit(results, Path(config.output_dir), formats={"csv"} if args.no_plot else {"csv", "svg"})
    print(f"✓ {len(results)} rows, {len(results.aggregates)} cells")
    for path in written:
        print(f"  → {path}")
    _print_fits(results.rate_fits)
    return 0


def cmd_kappa_build(args) -> int:
    config = _manifest(args)
    if config is None:
        print("✗ kappa-build needs --config", file=sys.stderr)
        return 2
    if config.model != "general":
        print("✓ piecewise experiments need no kappa table")
        return 0
    table = experiment_table(config, progress=True, force=args.force)
    print(f"✓ kappa table: {len(table.h_grid)} H nodes, p <= {table.p_values[-1]}, S = {table.S}")
    return 0


def _print_fits(fits) -> None:
    for row in fits.itertuples(index=False):
        print(f"  {row.model} H={row.H:g} eta={row.eta:g}: slope {row.slope:+.4f} ± {row.stderr:.4f}"
              f" (theory {row.theoretical:+.4f})")


def cmd_rate_check(args) -> int:
    directory = args.results or args.out
    if directory is None:
        config = _manifest(args)
        directory = Path(config.output_dir) if config else Path("results")
    results = load_results(directory)
    fits = fit_rates(results.aggregates, args.quantity, args.log_correction)
    if fits.empty:
        print("✗ no cell has enough N values for a rate fit")
        return 1
    print(f"✓ rate fits for {args.quantity} from {directory}")
    _print_fits(fits)
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "experiment": cmd_experiment,
    "kappa-build": cmd_kappa_build,
    "rate-check": cmd_rate_check,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Entry point"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    settings = get_settings()
    level = logging.DEBUG if args.verbose else getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return COMMANDS[args.command](args)
    except RoughestError as e:
        print(f"✗ {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
