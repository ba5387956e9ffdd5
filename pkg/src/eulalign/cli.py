"""Command-line entry point: ``eulalign simulate|classify|sweep <config>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import yaml

from .config import ConfigError, load, parse_config, set_path
from .runner import EXIT_BLOWUP, EXIT_ERROR, EXIT_OK, classify_config, run

log = logging.getLogger("eulalign")


def _prepare(args, doc=None):
    doc = load(args.config) if doc is None else doc
    if getattr(args, "sample_every", None) is not None:
        doc["sample_every"] = args.sample_every
    if getattr(args, "output_dir", None) is not None:
        doc["output_dir"] = str(args.output_dir)
    return parse_config(doc, strict=args.strict)


def cmd_simulate(args) -> int:
    cfg = _prepare(args)
    res = run(cfg, threads=args.threads)
    out = Path(cfg.output_dir)
    if res.status == EXIT_BLOWUP:
        print(f"blow-up detected at t={res.verdict['detected_blow_up_time']:.6g}; artifacts in {out}")
    else:
        print(f"run finished at t={res.verdict['final_time']:.6g}; artifacts in {out}")
    return res.status


def cmd_classify(args) -> int:
    cfg = _prepare(args)
    print(json.dumps(classify_config(cfg), indent=2))
    return EXIT_OK


def _parse_value(text: str):
    return yaml.safe_load(text)


def _sweep_one(job):
    doc, strict, threads = job
    cfg = parse_config(doc, strict=strict)
    res = run(cfg, threads=threads)
    return res.status, res.verdict


def cmd_sweep(args) -> int:
    base = load(args.config)
    values = [_parse_value(v) for v in args.values.split(",")] if args.values else []
    if not values:
        raise ConfigError(["--values: need at least one value"])
    root = Path(args.output_dir or base.get("output_dir") or "runs/sweep")
    jobs, labels = [], []
    for val in values:
        doc = set_path(base, args.param, val)
        if args.sample_every is not None:
            doc["sample_every"] = args.sample_every
        tag = f"{args.param}={val}"
        doc["output_dir"] = str(root / tag.replace("/", "_"))
        parse_config(doc, strict=args.strict)  # fail fast on any bad value
        jobs.append((doc, args.strict, args.threads))
        labels.append(val)
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    summary = [{"value": v, "exit_status": s, "output_dir": j[0]["output_dir"], "fits": r.get("fits"),
                "detected_blow_up_time": r.get("detected_blow_up_time")}
               for v, (s, r), j in zip(labels, results, jobs)]
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "sweep.json", "w", encoding="utf-8") as fh:
        json.dump({"param": args.param, "runs": summary}, fh, indent=2)
    for row in summary:
        print(f"{args.param}={row['value']}: exit {row['exit_status']}")
    return max(s for s, _ in results)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eulalign",
                                 description="Lagrangian particle simulations of Euler alignment flows")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, outputs=True):
        p.add_argument("config", help="YAML or JSON scenario file")
        p.add_argument("--strict", action="store_true", help="treat unknown keys as errors")
        if outputs:
            p.add_argument("--output-dir", type=Path, default=None, help="artifact directory")
            p.add_argument("--sample-every", type=float, default=None, help="diagnostics interval")
            p.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")

    p = sub.add_parser("simulate", help="run a scenario and write its artifacts")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("classify", help="print the t=0 threshold verdict")
    common(p, outputs=False)
    p.set_defaults(func=cmd_classify)
    p = sub.add_parser("sweep", help="repeat a scenario over values of one config key")
    common(p)
    p.add_argument("--param", required=True, help="dotted key path, e.g. perturbed.eps")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1, help="runs executed in parallel")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "threads", 1) < 1:
            raise ConfigError(["--threads: must be at least 1"])
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except (OSError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
