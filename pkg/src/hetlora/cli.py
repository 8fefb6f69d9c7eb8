"""Command-line entry point: ``hetlora run|sweep|compare|comm-table``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import ledger, plotting
from .config import ConfigError, emit_config, parse_config
from .datagen import dump_csv
from .federation import Federation, FederationConfig, RankPolicy, run_experiment
from .lora import save_adapters
from .metrics import emit_metrics, emit_summary

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("hetlora")


def _header(cfg: FederationConfig) -> str:
    return "hetlora effective config\n" + emit_config(cfg)


class _Outputs:
    """Tracks files written by a command so a failure can remove them."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path: Path) -> Path:
        self.paths.append(Path(path))
        return Path(path)

    def discard(self) -> None:
        for p in self.paths:
            p.unlink(missing_ok=True)


def cmd_run(args, out: _Outputs) -> int:
    cfg = parse_config(args.config)
    args.out.mkdir(parents=True, exist_ok=True)
    fed = Federation(cfg)
    fed.initial_record()
    for _ in range(cfg.rounds):
        fed.run_round()
    stem = args.out / (args.name or Path(args.config).stem)
    path = emit_metrics(fed.records, out.add(stem.with_suffix(".csv")), _header(cfg))
    print(f"wrote {path}")
    if args.dump_adapters:
        save_adapters(fed.server.adapters, out.add(stem.with_suffix(".adapters.bin")))
    if args.dump_data:
        dump_csv(fed.env.task, fed.env.shards, out.add(Path(f"{stem}.data.csv")))
    if args.plot:
        plotting.plot_curves({cfg.strategy.value: fed.records}, out.add(stem.with_suffix(".png")))
        hq = [s.client_id for s in fed.states if s.high_quality]
        if hq:
            plotting.plot_before_after(fed.records, hq[0], out.add(Path(f"{stem}.client{hq[0]}.png")))
    print(f"final global accuracy {fed.records[-1].global_acc:.4f}, "
          f"uplink {fed.records[-1].cumulative_bytes} bytes")
    return EXIT_OK


def cmd_sweep(args, out: _Outputs) -> int:
    base = parse_config(args.config)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.name or Path(args.config).stem
    runs = []
    for k in range(args.seeds):
        cfg = dataclasses.replace(base, seed=base.seed + k)
        recs = run_experiment(cfg)
        runs.append(recs)
        emit_metrics(recs, out.add(args.out / f"{stem}.seed{cfg.seed}.csv"), _header(cfg))
    path = emit_summary(runs, out.add(args.out / f"{stem}.summary.csv"),
                        _header(base) + f"seeds = {base.seed}..{base.seed + args.seeds - 1}\n")
    if args.plot:
        plotting.plot_band(runs, out.add(args.out / f"{stem}.summary.png"), label=base.strategy.value)
    print(f"wrote {args.seeds} metric files and {path}")
    return EXIT_OK


def compare_variants(base: FederationConfig, homogeneous_ranks: list[int]) -> dict[str, FederationConfig]:
    """The baseline suite: homogeneous ranks plus every heterogeneous strategy."""
    variants = {}
    for r in homogeneous_ranks:
        variants[f"homogeneous r={r}"] = dataclasses.replace(
            base, strategy="homogeneous", rank_policy=RankPolicy.ALL_LOW, r_low=r, r_high=r)
    for strategy in ("zero_pad", "frobenius_zero_pad", "replication"):
        variants[strategy.replace("_", " ")] = dataclasses.replace(base, strategy=strategy)
    return variants


def cmd_compare(args, out: _Outputs) -> int:
    base = parse_config(args.config)
    ranks = [int(r) for r in args.homogeneous_ranks.split(",") if r.strip()]
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.name or Path(args.config).stem
    curves = {}
    for label, cfg in compare_variants(base, ranks).items():
        recs = run_experiment(cfg)
        curves[label] = recs
        emit_metrics(recs, out.add(args.out / f"{stem}.{label.replace(' ', '_').replace('=', '')}.csv"),
                     _header(cfg))
        print(f"{label:24s} final {recs[-1].global_acc:.4f}  uplink {recs[-1].cumulative_bytes}")
    if args.plot:
        plotting.plot_curves(curves, out.add(args.out / f"{stem}.compare.png"))
    return EXIT_OK


def cmd_comm_table(args, out: _Outputs) -> int:
    if args.preset in ledger.PRESETS:
        entries = ledger.preset_table(args.preset)
    else:
        raise ConfigError(f"unknown comm-table preset {args.preset!r}; known: {', '.join(ledger.PRESETS)}")
    print(ledger.format_table(entries, sep="," if args.csv else "\t"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hetlora", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="INI experiment config")
        sp.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        sp.add_argument("--name", help="output file stem (default: config file stem)")
        sp.add_argument("--plot", action="store_true", help="also render PNG figures")

    run = sub.add_parser("run", help="run one experiment and write its metrics CSV")
    common(run)
    run.add_argument("--dump-adapters", action="store_true", help="write the final global adapters")
    run.add_argument("--dump-data", action="store_true", help="write the synthetic dataset and shards as CSV")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="repeat an experiment over consecutive seeds")
    common(sweep)
    sweep.add_argument("--seeds", type=int, default=5)
    sweep.set_defaults(func=cmd_sweep)

    cmp_ = sub.add_parser("compare", help="run the homogeneous and heterogeneous baseline suite")
    common(cmp_)
    cmp_.add_argument("--homogeneous-ranks", default="5,7,20")
    cmp_.set_defaults(func=cmd_compare)

    ct = sub.add_parser("comm-table", help="print the per-rank uplink cost table")
    ct.add_argument("preset", nargs="?", default="distilbert")
    ct.add_argument("--csv", action="store_true", help="comma-delimited instead of tab-delimited")
    ct.set_defaults(func=cmd_comm_table)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = _Outputs()
    try:
        return args.func(args, out)
    except ConfigError as exc:
        out.discard()
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        out.discard()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
