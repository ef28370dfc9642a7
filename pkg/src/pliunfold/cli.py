"""Command line entry point ``pli``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import config as config_mod
from .pipeline import STAGES, MissingPrerequisite, run_stage

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PREREQ = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pli", description="PLI texture features, unfolding and clustering on a phantom")
    p.add_argument("stage", choices=STAGES)
    p.add_argument("--config", required=True, help="key=value configuration file")
    p.add_argument("--out", default="pli_out", help="output directory (default: pli_out)")
    p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed, overrides run.seed")
    p.add_argument("--threads", type=int, default=1, help="torch intra-op threads (default: 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise config_mod.ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        if args.threads < 1:
            raise config_mod.ConfigError("--threads must be >= 1")
        run_stage(args.stage, cfg, args.out, args.threads)
    except config_mod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingPrerequisite as e:
        print(str(e), file=sys.stderr)
        return EXIT_PREREQ
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
