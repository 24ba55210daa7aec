"""Command-line entry point: ``rdm simulate|verify|filters|align``."""

from __future__ import annotations

import argparse
import json
import sys

from ._version import __version__
from .errors import ConfigError
from .harness import ExperimentConfig, apply_overrides, run_experiment


def _config_from_file(args, kind=None):
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = apply_overrides(doc, args.set)
    if kind is not None:
        doc["kind"] = kind
    if args.out:
        doc["out_dir"] = args.out
    return ExperimentConfig.from_dict(doc)


def _report(result, out=None):
    out = out or sys.stdout
    if result.status == 2:
        print(f"config error: {result.message}", file=sys.stderr)
        return 2
    if result.message:
        print(result.message, file=sys.stderr)
    s = result.summary
    if "properties" in s:
        for p in s["properties"]:
            flag = "ok  " if p["failures"] == 0 else "FAIL"
            print(
                f"{flag} {p['name']:<34} {p['instances']:>6} instances "
                f"{p['failures']:>4} failures  worst margin {p['worst_margin']:.3g}",
                file=out,
            )
    else:
        for key in ("final_erank_online", "final_erank_target", "final_alignment", "verdict"):
            if key in s:
                print(f"{key}: {s[key]}", file=out)
    for f in result.files:
        print(f"wrote {f}", file=out)
    return result.status


def main(argv=None):
    ap = argparse.ArgumentParser(prog="rdm", description="Rank-differential experiments.")
    ap.add_argument("--version", action="version", version=f"rdm {__version__}")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--out", help="output directory")

    with_config(sub.add_parser("simulate", help="run the experiment a config describes"))
    with_config(sub.add_parser("align", help="linear-predictor alignment run"))

    v = sub.add_parser("verify", help="run the randomized property suite")
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--instances", type=int, default=1000)
    v.add_argument("--out", help="output directory")

    f = sub.add_parser("filters", help="classify the transformation a filter induces")
    f.add_argument("--filter", required=True, help="filter spec, e.g. sinkhorn:3:0.05")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--n", type=int, default=256, help="batch size")
    f.add_argument("--k", type=int, default=32, help="feature dimension")
    f.add_argument("--out", help="output directory")

    args = ap.parse_args(argv)
    try:
        if args.cmd == "simulate":
            cfg = _config_from_file(args)
        elif args.cmd == "align":
            cfg = _config_from_file(args, kind="align")
        elif args.cmd == "verify":
            doc = {"kind": "verify", "seed": args.seed, "instances": args.instances}
            if args.out:
                doc["out_dir"] = args.out
            cfg = ExperimentConfig.from_dict(doc)
        else:
            doc = {"kind": "filters", "filter": args.filter, "seed": args.seed,
                   "n_samples": args.n, "k": args.k}
            if args.out:
                doc["out_dir"] = args.out
            cfg = ExperimentConfig.from_dict(doc)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return _report(run_experiment(cfg))


if __name__ == "__main__":
    sys.exit(main())
