"""Command line entry point: ``mvstop {table,rates,pertlab,oracle}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiment as ex


def _load(args) -> ex.ExperimentConfig:
    cfg = ex.ExperimentConfig.from_file(args.config) if args.config else ex.ExperimentConfig.from_dict()
    overrides = {}
    for item in args.set or []:
        key, _, val = item.partition("=")
        if not _:
            raise ex.ConfigError(f"--set expects key=value, got {item!r}")
        try:
            overrides[key] = json.loads(val)
        except json.JSONDecodeError:
            overrides[key] = val
    if getattr(args, "seed", None) is not None:
        overrides["simulation.seeds"] = [args.seed]
    if getattr(args, "out", None):
        overrides["outputs.dir"] = args.out
    return cfg.with_overrides(overrides) if overrides else cfg


def _outdir(cfg) -> Path:
    return Path(cfg.raw["outputs"]["dir"])


def cmd_table(args) -> int:
    cfg = _load(args)
    rows = ex.run_table(cfg, workers=args.workers)
    out = _outdir(cfg)
    formats = cfg.raw["outputs"]["formats"]
    if "csv" in formats:
        ex.write_text(out / "table.csv", ex.rows_to_csv(rows, ex.TABLE_FIELDS))
    md = ex.table_markdown(rows, cfg.raw["modes"])
    if "md" in formats:
        ex.write_text(out / "table.md", md)
    sys.stdout.write(md)
    return 0


def cmd_rates(args) -> int:
    cfg = _load(args)
    reports = ex.run_rates(cfg, workers=args.workers)
    out = _outdir(cfg)
    for kind, rep in reports.items():
        ex.write_text(out / f"rates_{kind}.csv", ex.rate_csv(rep, kind, cfg.hash))
        print(f"{kind}: slope={rep.slope:.4f} r2={rep.r_squared:.4f}")
    return 0


def cmd_pertlab(args) -> int:
    cfg = _load(args)
    res = ex.run_pertlab(cfg)
    out = _outdir(cfg)
    ex.write_text(out / "pertlab.csv", ex.pertlab_csv(res))
    print(f"pinv bound: {res['violations']} violations in {len(res['rows'])} trials "
          f"({res['conditioned']} satisfy the condition)")
    conc = res["concentration"]
    if conc is not None:
        print(f"concentration: exceedance={conc.exceedance_rate:.4f} eps={conc.epsilon:.5f} "
              f"abs_const={conc.abs_const}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _load(args)
    sol = ex.run_oracle(cfg, args.grid_size, args.quad_order)
    if args.csv:
        sol.to_csv(args.csv)
    print(f"v0={sol.v0:.10f} self_convergence_gap={sol.convergence_gap:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvstop", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config field, e.g. simulation.n_test=2000")
        sp.add_argument("--out", help="output directory")

    t = sub.add_parser("table", help="lower/upper bound table")
    common(t)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--workers", type=int, default=None)
    t.set_defaults(func=cmd_table)

    r = sub.add_parser("rates", help="propagation-of-chaos and Euler rate studies")
    common(r)
    r.add_argument("--workers", type=int, default=None)
    r.set_defaults(func=cmd_rates)

    q = sub.add_parser("pertlab", help="pseudoinverse perturbation and concentration checks")
    common(q)
    q.set_defaults(func=cmd_pertlab)

    o = sub.add_parser("oracle", help="grid reference value of the benchmark")
    common(o)
    o.add_argument("--grid-size", type=int, default=2001)
    o.add_argument("--quad-order", type=int, default=64)
    o.add_argument("--csv", help="write (date, x, V, C) to this file")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
