"""``nhmc validate|diagnose|clt|mdp|oracle --config FILE``.

Exit codes: 0 success, 1 verdict FAIL, 2 config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _apply_thread_cap() -> None:
    # numba reads NUMBA_NUM_THREADS once at import, so set it before anything imports numba.
    threads = os.environ.get("NHMC_THREADS")
    if threads and "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(max(1, int(threads)))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nhmc", description=__doc__.splitlines()[0])
    ap.add_argument("analysis", choices=["validate", "diagnose", "clt", "mdp", "oracle"])
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--format", default="json", choices=["json", "csv"])
    ap.add_argument("--out", help="write the report here instead of stdout")
    ap.add_argument("--seed", type=int, help="override params.seed")
    ap.add_argument("--spill", help="clt only: write standardized samples to this binary file")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    _apply_thread_cap()
    warnings.filterwarnings("ignore", module=r"numba\..*")

    from .cli_reports import dataclasses, emit_report, parse_config, run_experiment
    from .errors import ConfigError, NumericError
    from .monte_carlo import configure_threads

    configure_threads()
    try:
        with open(args.config, "rb") as fh:
            cfg = parse_config(fh.read())
        cfg = cfg.replace(analysis=args.analysis)
        if args.seed is not None:
            cfg = cfg.replace(params=dataclasses.replace(cfg.params, seed=args.seed & ((1 << 64) - 1)))
        env = run_experiment(cfg, spill=args.spill)
        data = emit_report(env, args.format)
    except (ConfigError, OSError) as exc:
        print(f"nhmc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"nhmc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    return EXIT_FAIL if env.verdict == "FAIL" else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
