"""Command line entry point.

    hscan sweep [--plan PLAN] [--out DIR] [--seed N] [--channel K ...] [--snr DB ...] [--jobs N] [--plots]
    hscan rates [--L 64 128 ...] [--out DIR]
    hscan plot DIR
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

from .metrics import config_digest
from .overlay import OverlayConfig
from .sweep import SweepError, load_plan, rate_table, run_sweep, write_outputs, write_rate_csv

log = logging.getLogger("hscan")


def _sweep(args) -> int:
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan = replace(plan, base_seed=args.seed)
    if args.frames is not None:
        plan = replace(plan, frames_per_point=args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(k, n):
        if k % max(1, n // 20) == 0 or k == n:
            log.info("frame %d/%d", k, n)

    t0 = time.perf_counter()
    try:
        results = run_sweep(
            plan, jobs=args.jobs, constellation_dir=out if args.constellation else None,
            progress=progress, channels=args.channel, snrs=args.snr,
        )
    except (SweepError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    paths = write_outputs(out, plan, results)
    log.info("sweep done in %.1f s, digest %s", time.perf_counter() - t0, plan.digest)
    for r in results:
        print(f"{r.channel_kind:>4} {r.input_snr_db:6.1f} dB in  {r.output_snr_db:6.2f} dB out  BER {r.ber:.3e}")
    if args.plots:
        from .plotting import render

        render(out)
    for p in paths.values():
        log.info("wrote %s", p)
    return 0


def _rates(args) -> int:
    cfg = OverlayConfig()
    rows = rate_table(args.L, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rate_csv(out / "fig9.csv", rows, config_digest(cfg, list(args.L)))
    for L, ratio, bps in rows:
        print(f"{L:6d}  {ratio:.4f}  {bps / 1e6:7.2f} Mb/s")
    return 0


def _plot(args) -> int:
    from .plotting import render

    made = render(args.dir)
    if not made:
        log.error("no fig8.csv or fig9.csv in %s", args.dir)
        return 1
    for p in made:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hscan", description="CAN overlay link simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run an output-SNR sweep and write fig8/fig9 CSVs")
    p.add_argument("--plan", help="YAML plan (default: packaged plan)")
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int, help="override base_seed")
    p.add_argument("--frames", type=int, help="override frames_per_point")
    p.add_argument("--channel", action="append", help="restrict to channel kind (repeatable)")
    p.add_argument("--snr", type=float, action="append", help="restrict to input SNR in dB (repeatable)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--constellation", action="store_true", help="dump first-frame constellation per point")
    p.add_argument("--plots", action="store_true", help="also render PNGs from the CSVs")
    p.set_defaults(func=_sweep)

    p = sub.add_parser("rates", help="net data rate table only")
    p.add_argument("--L", type=int, nargs="+", default=[0, 64, 128, 256, 512, 1024, 2048, 4096])
    p.add_argument("--out", default="results")
    p.set_defaults(func=_rates)

    p = sub.add_parser("plot", help="render PNGs from CSVs in a results directory")
    p.add_argument("dir")
    p.set_defaults(func=_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
