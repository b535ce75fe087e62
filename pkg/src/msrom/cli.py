"""Command line interface: ``msrom run|preset|field gen|compare``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys

from .field import generate_channelized, save_field
from .grid import ConfigurationError, build_fine_mesh
from .harness.config import PRESETS, ExperimentConfig, preset
from .harness.experiment import ExperimentError, compare_runs, run_experiment

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _run(args):
    cfg = ExperimentConfig.load(args.config)
    res = run_experiment(cfg, directory=args.out)
    for e in res.report.requested():
        print(f"t={e.t:g}  e_a={e.e_a:.4e}  e_2={e.e_2:.4e}  dof={e.dof}")
    print(f"wrote {res.directory}")


def _preset(args):
    kw = {}
    if args.eps is not None:
        kw["eps"] = args.eps
    if args.source is not None:
        kw["source"] = args.source
    cfg = preset(args.name, **kw)
    if args.out:
        cfg.save(args.out)
    else:
        sys.stdout.write(cfg.to_ini())


def _field_gen(args):
    try:
        fine = build_fine_mesh(args.nx, args.ny)
        kappa = generate_channelized(fine, args.contrast, args.seed)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    save_field(kappa, args.out)
    print(f"wrote {args.out} ({args.nx}x{args.ny}, contrast {kappa.contrast:g})")


def _compare(args):
    try:
        rows = compare_runs(args.a, args.b, out=args.out)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None
    if args.out is None:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msrom", description="Multiscale reduced models for Allen-Cahn type problems")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--out", default=None, help="output directory (default: the config's directory)")
    r.set_defaults(func=_run)

    pr = sub.add_parser("preset", help="write a preset configuration")
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--out", default=None)
    pr.add_argument("--eps", type=float, default=None, help="epsilon for ex21/ex22")
    pr.add_argument("--source", default=None, help="snapshot source for ex33")
    pr.set_defaults(func=_preset)

    f = sub.add_parser("field", help="permeability field tools")
    fsub = f.add_subparsers(dest="field_command", required=True)
    g = fsub.add_parser("gen", help="generate a channelized field")
    g.add_argument("--nx", type=int, required=True)
    g.add_argument("--ny", type=int, required=True)
    g.add_argument("--contrast", type=float, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_field_gen)

    c = sub.add_parser("compare", help="pair two errors.csv files on their time stamps")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", default=None)
    c.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigurationError as exc:
        print(f"msrom: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"msrom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return 0


if __name__ == "__main__":
    sys.exit(main())
