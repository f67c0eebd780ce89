"""Command-line entry point: run, summarize, compare, selftest."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .runner import (EXIT_CONFIG_ERROR, ConfigError, compare_to_reference, load_config, load_reference,
                     load_summary, replica_config, replica_ids, run_pass, summarize)


def _resolve(spec: str, seed: int | None):
    if Path(spec).is_file():
        return load_config(spec, seed)
    if spec in replica_ids():
        return replica_config(spec, seed)
    raise ConfigError(f"{spec}: not a config file or bundled replica ({', '.join(replica_ids())})")


def _run_one(args):
    config, out = args
    res = run_pass(config, out)
    return str(res.out_dir), res.exit_code, res.summary.status


def cmd_run(ns) -> int:
    try:
        configs = [_resolve(c, ns.seed) for c in ns.configs]
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    jobs = []
    for i, cfg in enumerate(configs):
        if ns.out is None:
            out = Path(cfg.output_dir)
        elif len(configs) == 1:
            out = Path(ns.out)
        else:
            out = Path(ns.out) / (cfg.pass_id or Path(ns.configs[i]).stem)
        jobs.append((cfg, out))
    if ns.threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=ns.threads) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for out, code, status in results:
        print(f"{out}: {status} (exit {code})")
    return max(code for _, code, _ in results)


def cmd_summarize(ns) -> int:
    try:
        table = summarize(ns.dirs)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(table.to_text(), end="")
    if ns.csv:
        Path(ns.csv).write_text(table.to_csv())
    return 0


def cmd_compare(ns) -> int:
    reference = load_reference() if ns.reference == "table1" else json.loads(Path(ns.reference).read_text())
    try:
        report = compare_to_reference(load_summary(ns.dir), reference, ns.pass_id)
    except KeyError as exc:
        print(f"error: {exc.args[0]}", file=sys.stderr)
        return 1
    print(report.to_text(), end="")
    if ns.json:
        Path(ns.json).write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    return 0 if report.passed else 1


def cmd_selftest(ns) -> int:
    from .selftest import run_selftest

    checks = run_selftest(ns.seed or 0)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail} [{c.seconds:.1f} s]")
    return 0 if all(c.passed for c in checks) else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uplinkqkd", description="Simulate and post-process uplink QKD passes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one or more pass configurations")
    r.add_argument("configs", nargs="+", help="config JSON files or bundled replica ids")
    r.add_argument("--seed", type=int, help="derive every subsystem seed from this master seed")
    r.add_argument("--out", help="run directory (parent directory when several configs are given)")
    r.add_argument("--threads", type=int, default=1, help="passes to run in parallel processes")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="tabulate completed runs, one column per pass")
    s.add_argument("dirs", nargs="*", help="run directories")
    s.add_argument("--csv", help="also write the table as CSV")
    s.set_defaults(func=cmd_summarize)

    c = sub.add_parser("compare", help="compare a run with its reference pass")
    c.add_argument("dir", help="run directory")
    c.add_argument("--reference", default="table1", help="'table1' (bundled) or a reference JSON file")
    c.add_argument("--pass-id", help="reference pass id (default: the run's pass_id)")
    c.add_argument("--json", help="also write the report as JSON")
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("selftest", help="run the built-in oracle checks")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    return ns.func(ns)


if __name__ == "__main__":
    sys.exit(main())
