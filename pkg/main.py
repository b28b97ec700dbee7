#!/usr/bin/env python3
"""
roughest - Hurst and vol-of-vol estimation for rough volatility

Simulates high-frequency prices under rough stochastic volatility and
estimates (H, eta) with adaptive energy-ratio estimators.

Usage:
    python main.py simulate --H 0.3 --N 12      # Write a simulated price path
    python main.py estimate prices.csv          # Estimate (H, eta) from prices
    python main.py experiment --config FILE     # Run a Monte Carlo experiment
    python main.py kappa-build --config FILE    # Build the kappa table cache
    python main.py rate-check results/          # Fit convergence rates
    python main.py --help                       # Show help
"""
import sys
from dotenv import load_dotenv

load_dotenv()

def main():
    """Main entry point for roughest"""
    if len(sys.argv) > 1:
        arg = sys.argv[1]

        if arg in ["--help", "-h"]:
            print(__doc__)
            print("Every subcommand accepts:")
            print("  --config PATH       TOML experiment manifest")
            print("  --seed U64          base seed")
            print("  --out DIR           output file or directory")
            print("  --threads K         worker processes")
            print("  --kappa-cache PATH  kappa table cache")
            return 0

        if arg == "--version":
            from roughest import __version__
            print(f"roughest v{__version__}")
            return 0

    from roughest.cli import main as cli_main
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
