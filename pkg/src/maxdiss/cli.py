"""Command-line interface.

Subcommands map to pipeline stages over a shared scenario config:

    maxdiss simulate --config cfg.json --out run/
    maxdiss certify  --config cfg.json --out run/
    maxdiss select   --config cfg.json --out run/
    maxdiss mv       --fine <traj dir> --coarse <traj dir> --out <dir>
    maxdiss report   --out run/

Exit codes: 0 success, 2 certificate failure, 3 solver blow-up,
4 configuration error.  --threads (or MAXDISS_THREADS) caps the BLAS/FFT
thread pools; --seed overrides the config seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_CERT_FAIL = 2
EXIT_BLOWUP = 3
EXIT_CONFIG = 4


def _apply_threads(threads: int | None) -> None:
    value = threads if threads is not None else os.environ.get("MAXDISS_THREADS")
    if value is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(value)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maxdiss",
        description="Dissipative-solution toolkit for 2D incompressible "
                    "flows: simulate, certify, select, defect measures.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config JSON")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, default=None,
                        help="thread-pool cap (env: MAXDISS_THREADS)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common],
                   help="run the scenario's flow simulations")
    sub.add_parser("certify", parents=[common],
                   help="certify simulated members against the test family")
    sub.add_parser("select", parents=[common],
                   help="select the maximal dissipative mixture")
    mv = sub.add_parser("mv", parents=[common],
                        help="build a defect field from a trajectory pair")
    mv.add_argument("--fine", required=True, help="fine trajectory directory")
    mv.add_argument("--coarse", required=True,
                    help="coarse trajectory directory")
    mv.add_argument("--kmax", type=int, default=None,
                    help="mollifier low-pass scale")
    sub.add_parser("report", parents=[common],
                   help="emit CSV/JSON summaries from a run directory")
    run = sub.add_parser("run", parents=[common],
                         help="full pipeline: simulate, certify, select")
    del run
    return parser


def _load_config(args):
    from .scenarios import ConfigError, ScenarioConfig
    if not args.config:
        raise ConfigError("/: --config is required for this command")
    return ScenarioConfig.from_file(args.config, out_dir=args.out,
                                    seed=args.seed)


def _load_members(config) -> dict:
    sim = Path(config.out_dir) / "sim"
    members = {p.name: str(p) for p in sorted(sim.iterdir()) if p.is_dir()} \
        if sim.is_dir() else {}
    if not members:
        from .scenarios import ConfigError
        raise ConfigError(f"{sim}: no simulated members (run simulate first)")
    return members


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _apply_threads(getattr(args, "threads", None))
    from .scenarios import (ConfigError, report, run_scenario, stage_certify,
                            stage_select, stage_simulate)
    from .solver import BlowUpError

    try:
        if args.command == "simulate":
            config = _load_config(args)
            members = stage_simulate(config)
            print(f"simulated {len(members)} member(s) -> "
                  f"{Path(config.out_dir) / 'sim'}")
            return EXIT_OK
        if args.command == "certify":
            config = _load_config(args)
            ok = stage_certify(config, _load_members(config))
            print(f"certificate {'PASS' if ok else 'FAIL'}")
            return EXIT_OK if ok else EXIT_CERT_FAIL
        if args.command == "select":
            config = _load_config(args)
            summary = stage_select(config, _load_members(config))
            print(json.dumps(summary))
            return EXIT_OK
        if args.command == "run":
            config = _load_config(args)
            code = run_scenario(config)
            print(f"scenario {config.scenario}: "
                  f"{'PASS' if code == 0 else 'certificate FAIL'}")
            return code
        if args.command == "mv":
            from .mv_euler import MVError, defect_from_pair
            from .solver import Trajectory
            if not args.out:
                raise ConfigError("/: --out is required for mv")
            try:
                fine = Trajectory.load(args.fine)
                coarse = Trajectory.load(args.coarse)
                defect = defect_from_pair(fine, coarse,
                                          mollifier_kmax=args.kmax)
            except MVError as exc:
                raise ConfigError(f"/mv: {exc}") from exc
            defect.save(args.out)
            print(f"defect field -> {args.out} "
                  f"(kmax={defect.mollifier_kmax}, "
                  f"clip={defect.clip_magnitude:g})")
            return EXIT_OK
        if args.command == "report":
            if not args.out:
                raise ConfigError("/: --out is required for report")
            summary = report(args.out)
            print(json.dumps(summary))
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
