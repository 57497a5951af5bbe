"""Command line entry point: ``adaptive-robust {compare,regions,quantizer,solve}``."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .experiment import METHODS, run_compare, run_regions, run_solve
from .quantization import QuantizerConvergenceError, build_normal_quantizer
from .solver import THREADS_ENV


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="adaptive-robust",
        description="Adaptive robust, robust, adaptive and true-model portfolio control experiments.",
        epilog=f"Set {THREADS_ENV} to the number of worker threads (default 1).",
    )
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compare", help="solve all methods, simulate, write comparison CSVs")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--paths", action="store_true", help="also write long-form wealth paths")

    r = sub.add_parser("regions", help="confidence regions along one estimator path")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--seed", type=int)

    q = sub.add_parser("quantizer", help="print an optimal quantizer of N(0,1) as CSV")
    q.add_argument("--n", type=int, default=10)

    s = sub.add_parser("solve", help="solve one method and write its value/policy tables")
    s.add_argument("--config", required=True)
    s.add_argument("--method", required=True, choices=METHODS)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "quantizer":
            if args.n < 1:
                raise ConfigError("--n must be >= 1")
            qz = build_normal_quantizer(args.n)
            sys.stdout.write("point,weight\n")
            for z, w in zip(qz.points, qz.weights):
                sys.stdout.write(f"{float(z)!r},{float(w)!r}\n")
            return 0
        cfg = load_config(args.config, seed=args.seed)
        if args.command == "compare":
            run_compare(cfg, args.out, write_paths=args.paths)
        elif args.command == "regions":
            run_regions(cfg, args.out)
        elif args.command == "solve":
            run_solve(cfg, args.method, args.out)
    except (ConfigError, QuantizerConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
