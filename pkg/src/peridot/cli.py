"""``peridot`` command line.

Exit codes: 0 success, 2 bad input (validation or parameter error), 3 a
check ran and failed (improper set, failed reproduction).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import experiments
from .backend import Backend, DeviceDB, EngineConfig, engine_metrics
from .construction import construct, plan_parameters
from .errors import PeridotError
from .proper import ProperSet, certificate, classify, exhaustive_max_search, upper_bound
from .scenarios import BUNDLED, bundled
from .sim import ScenarioConfig, TruthRecord, nonce_violations, read_trace, run_scenario, write_jsonl

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CHECK = 3

log = logging.getLogger("peridot")


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def emit(obj: Any, out: str | None) -> None:
    text = dumps(obj) + "\n"
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def write_csv(path: str, rows: list[dict[str, Any]]) -> None:
    fields = sorted({k for row in rows for k in row})
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def read_json(path: str) -> Any:
    with open(path) as fh:
        return json.load(fh)


def cmd_construct(args: argparse.Namespace) -> int:
    ps = construct(args.p, args.l)
    emit(ps.to_json(member_limit=args.member_limit), args.out)
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    ps = ProperSet.from_json(read_json(args.set), l=args.l).verify()
    report = ps.to_json(member_limit=0)
    report.pop("members", None)
    emit(report, args.out)
    return EXIT_OK if ps.classification == "proper" else EXIT_CHECK


def cmd_search(args: argparse.Namespace) -> int:
    m, ps = exhaustive_max_search(args.q, args.l, force=args.force)
    report = ps.to_json()
    report["max_m"] = m
    report["upper_bound"] = upper_bound(args.q, args.l)
    report["certificate"] = certificate(ps)
    emit(report, args.out)
    return EXIT_OK


def cmd_bound(args: argparse.Namespace) -> int:
    report: dict[str, Any] = {"q": args.q, "l": args.l, "upper_bound": upper_bound(args.q, args.l)}
    if args.set:
        ps = ProperSet.from_json(read_json(args.set), l=args.l).verify()
        if ps.q != args.q:
            raise PeridotError(f"set is over Z_{ps.q}, not Z_{args.q}")
        report["m"] = ps.m
        report["classification"] = ps.classification
        if ps.classification == "proper":
            report["grade"] = classify(ps)
    emit(report, args.out)
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    rep = plan_parameters(args.cn_bits, args.l, args.sn_bits, args.id_bits, frame_bits=args.frame_bits)
    if args.json:
        emit(rep.to_json(), args.out)
    else:
        sys.stdout.write(rep.table() + "\n")
    return EXIT_OK


def _scenario(args: argparse.Namespace) -> tuple[ScenarioConfig, EngineConfig | None]:
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "events", None) is not None:
        overrides["events"] = args.events
    if args.bundled:
        return bundled(args.bundled, **overrides)
    cfg = ScenarioConfig.load(args.scenario)
    if overrides:
        cfg = ScenarioConfig.from_json({**cfg.to_json(), **overrides})
    return cfg, None


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg, _ = _scenario(args)
    res = run_scenario(cfg)
    write_jsonl(args.trace, res.trace)
    write_jsonl(args.truth, res.truth)
    Path(args.devices).write_text(dumps(res.provisioning) + "\n")
    log.info("%d transmissions, %d received", len(res.truth), len(res.trace))
    return EXIT_OK


def _engine_config(args: argparse.Namespace) -> EngineConfig:
    if args.config:
        return EngineConfig.load(args.config)
    if args.bundled:
        return bundled(args.bundled)[1]
    return EngineConfig()


def cmd_identify(args: argparse.Namespace) -> int:
    if args.trace == "-":
        trace = read_trace(sys.stdin)
    else:
        with open(args.trace) as fh:
            trace = read_trace(fh)
    db = DeviceDB.from_provisioning(read_json(args.devices))
    config = _engine_config(args)
    attributions = Backend(db, config).run(trace)
    if args.out in (None, "-"):
        for a in attributions:
            sys.stdout.write(json.dumps(a.to_json(), sort_keys=True) + "\n")
    else:
        write_jsonl(args.out, attributions)
    if args.truth:
        with open(args.truth) as fh:
            truth = [TruthRecord.from_json(json.loads(line)) for line in fh if line.strip()]
        metrics = engine_metrics(truth, attributions, config.l or db.l)
        metrics["nonce_violations"] = len(nonce_violations(truth, db.q))
        if args.metrics:
            Path(args.metrics).write_text(dumps(metrics) + "\n")
        if args.csv:
            write_csv(args.csv, [experiments.flat_row(metrics)])
        if not (args.metrics or args.csv):
            sys.stderr.write(dumps(metrics) + "\n")
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    if args.target == "sweep":
        start = 0 if args.seed is None else args.seed
        overrides = {} if args.events is None else {"events": args.events}
        rows = experiments.sweep(args.scenario, range(start, start + args.seeds), **overrides)
        flat = [experiments.flat_row(r) for r in rows]
        if args.csv:
            write_csv(args.csv, flat)
        emit(flat, args.out)
        return EXIT_OK
    names = list(experiments.TARGETS) if args.target == "all" else [args.target]
    reports = {}
    all_ok = True
    for name in names:
        if name == "residual-error":
            ok, report = experiments.target_residual(
                seeds=args.seeds, events=100_000 if args.events is None else args.events
            )
            if args.csv:
                write_csv(args.csv, report["runs"])
        else:
            ok, report = experiments.TARGETS[name]()
        sys.stderr.write(f"{name}: {'PASS' if ok else 'FAIL'}\n")
        reports[name] = {"ok": ok, **report}
        all_ok &= ok
    emit(reports if len(names) > 1 else reports[names[0]], args.out)
    return EXIT_OK if all_ok else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="overrides the scenario's own seed")
    common.add_argument("--out", "-o", default=None, help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="peridot", description="Permutation code numbers for LPWAN device identification.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("construct", parents=[common], help="build the quasiperfect increment set for (p, l)")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--member-limit", type=int, default=100_000, help="omit member list above this size")
    p.set_defaults(func=cmd_construct)

    p = sub.add_parser("verify", parents=[common], help="check a set file for properness")
    p.add_argument("set")
    p.add_argument("--l", type=int, default=None, help="check for this l instead of the file's")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("search", parents=[common], help="exhaustive maximum proper set for small q")
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--force", action="store_true", help="allow q above the size guard")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("bound", parents=[common], help="size bound, optionally grading a set file")
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--set", default=None)
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("plan", parents=[common], help="size the CN field")
    p.add_argument("--cn-bits", type=int, required=True)
    p.add_argument("--l", type=int, required=True)
    p.add_argument("--sn-bits", type=int, default=12)
    p.add_argument("--id-bits", type=int, default=32)
    p.add_argument("--frame-bits", type=int, default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="run a scenario, write trace, truth and devices")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", help="scenario file (JSON or TOML)")
    src.add_argument("--bundled", choices=sorted(BUNDLED))
    p.add_argument("--events", type=int, default=None)
    p.add_argument("--trace", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--devices", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("identify", parents=[common], help="attribute a trace to devices")
    p.add_argument("--trace", required=True, help="trace JSONL, or - for stdin")
    p.add_argument("--devices", required=True)
    cfg = p.add_mutually_exclusive_group()
    cfg.add_argument("--config", help="engine config (JSON or TOML)")
    cfg.add_argument("--bundled", choices=sorted(BUNDLED), help="use a bundled scenario's engine config")
    p.add_argument("--truth", default=None, help="ground truth JSONL for metrics")
    p.add_argument("--metrics", default=None, help="metrics JSON output")
    p.add_argument("--csv", default=None, help="metrics CSV output")
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("reproduce", parents=[common], help="run a named reproduction check")
    p.add_argument("target", choices=[*experiments.TARGETS, "sweep", "all"])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--events", type=int, default=None)
    p.add_argument("--scenario", default="residual", choices=sorted(BUNDLED), help="scenario for sweep")
    p.add_argument("--csv", default=None, help="per-seed metrics CSV")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PeridotError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        sys.stderr.write(f"peridot: error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
