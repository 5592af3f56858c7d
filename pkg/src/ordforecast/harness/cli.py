"""Command-line entry point.

Every subcommand reads a JSON experiment config; ``--set key=value``
overrides individual entries (dotted keys reach into nested sections,
values are parsed as JSON when possible). Exit codes: 0 success,
1 config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..errors import ConfigError, DataError, NumericalError
from .data import DatasetManifest, SeriesEntry, save_series
from .experiments import (
    ExperimentConfig,
    run_embed,
    run_few_shot,
    run_report,
    run_train_gum,
    run_zero_shot,
)

log = logging.getLogger("ordforecast")


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load(args, protocol=None):
    overrides = _parse_overrides(args.set)
    if protocol:
        overrides["protocol"] = protocol
    if args.output:
        overrides["output_dir"] = args.output
    cfg = ExperimentConfig.from_file(args.config, overrides) if args.config else ExperimentConfig.from_dict(overrides)
    return DatasetManifest.from_file(args.manifest), cfg


def cmd_train_gum(args):
    manifest, cfg = _load(args)
    written = run_train_gum(manifest, cfg)
    for key, path in written.items():
        print(f"{key}\t{path}")


def cmd_zero_shot(args):
    manifest, cfg = _load(args, "zero_shot")
    _, rt, skipped = run_zero_shot(manifest, cfg, args.checkpoint)
    if rt is not None:
        print(rt.render("GUM"), end="")
    for name, why in skipped:
        print(f"skipped {name}: {why}")


def cmd_few_shot(args):
    manifest, cfg = _load(args, "few_shot")
    _, rt, skipped = run_few_shot(manifest, cfg)
    if rt is not None:
        print(rt.render("GUM"), end="")
    for name, why in skipped:
        print(f"skipped {name}: {why}")


def cmd_embed(args):
    manifest, cfg = _load(args)
    k, cm, H = run_embed(manifest, cfg, args.checkpoint)
    print(f"{H.shape[0]} excerpts, n_h={H.shape[1]}, selected k={k}")


def cmd_report(args):
    families = json.loads(Path(args.families).read_text()) if args.families else None
    _, text = run_report(args.metrics, families, args.out)
    print(text, end="")


def cmd_synth(args):
    from ..synthetic import corpus

    out = Path(args.out)
    entries = []
    for role, count, length, seed in (("auxiliary", args.n_aux, args.aux_length, args.seed),
                                      ("evaluation", args.n_eval, args.eval_length, args.seed + 1)):
        prefix = "aux" if role == "auxiliary" else "eval"
        for s in corpus(count, length, seed, prefix=prefix):
            path = out / "series" / f"{s.name}.csv"
            save_series(s, path)
            entries.append(SeriesEntry(s.name, path, role, "synthetic"))
    DatasetManifest(entries, args.m, args.seed).to_file(out / "manifest.json")
    print(out / "manifest.json")


def build_parser():
    p = argparse.ArgumentParser(prog="ordforecast", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, func, checkpoint=False):
        sp = sub.add_parser(name)
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--config")
        sp.add_argument("--output")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE")
        if checkpoint:
            sp.add_argument("--checkpoint")
        sp.set_defaults(func=func)
        return sp

    experiment("train-gum", cmd_train_gum)
    experiment("zero-shot", cmd_zero_shot, checkpoint=True)
    experiment("few-shot", cmd_few_shot)
    experiment("embed", cmd_embed, checkpoint=True)

    rp = sub.add_parser("report")
    rp.add_argument("--metrics", required=True)
    rp.add_argument("--families")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    sp = sub.add_parser("synth", help="write a synthetic corpus and manifest")
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-aux", type=int, default=8)
    sp.add_argument("--n-eval", type=int, default=20)
    sp.add_argument("--aux-length", type=int, default=1000)
    sp.add_argument("--eval-length", type=int, default=36)
    sp.add_argument("--m", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NumericalError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
