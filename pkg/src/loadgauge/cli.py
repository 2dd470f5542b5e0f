"""Command-line frontend: plan, run, search, comply, check, replay.

Exit codes: 0 valid/pass, 1 invalid/fail, 2 usage or fatal error. Every
subcommand takes --json for machine-readable output. Configuration files use
the same canonical JSON the logs do; unknown keys are rejected.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import compliance as compliance_mod
from . import engine, logio, metrics
from .core import ModeKind, ScenarioKind, TestSettings, ValidationError
from .digest import canonical_json
from .planner import plan_for_scenario
from .simsut import Instant, parse_profile
from .tcp import TcpSut

MS = 1_000_000

_CONFIG_EXTRA_KEYS = {"sut", "out", "virtual_time", "alternate_seeds", "compliance"}


def _load_config(path: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError([f"cannot read config {path}: {e}"])
    if not isinstance(cfg, dict):
        raise ValidationError(["config root must be a JSON object"])
    known = set(TestSettings.__dataclass_fields__) | _CONFIG_EXTRA_KEYS
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise ValidationError([f"unknown config key {k!r}" for k in unknown])
    return cfg


def _settings_from_args(args) -> TestSettings:
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    fields = {k: v for k, v in cfg.items() if k in TestSettings.__dataclass_fields__}
    if "scenario" in fields:
        fields["scenario"] = ScenarioKind.parse(fields["scenario"])
    if "mode" in fields:
        fields["mode"] = ModeKind.parse(fields["mode"])
    if getattr(args, "scenario", None):
        fields["scenario"] = ScenarioKind.parse(args.scenario)
    if "scenario" not in fields:
        raise ValidationError(["--scenario (or a config file naming one) is required"])
    if getattr(args, "mode", None):
        fields["mode"] = ModeKind.parse(args.mode)
    if getattr(args, "tail", None) is not None:
        fields["tail_percentile"] = args.tail
    if getattr(args, "confidence", None) is not None:
        fields["confidence"] = args.confidence
    if getattr(args, "seed", None) is not None:
        fields["rng_seed"] = args.seed
    if getattr(args, "target_qps", None) is not None:
        fields["target_qps"] = args.target_qps
    if getattr(args, "interval_ms", None) is not None:
        fields["interval_ns"] = int(args.interval_ms * MS)
    if getattr(args, "latency_bound_ms", None) is not None:
        fields["latency_bound_ns"] = int(args.latency_bound_ms * MS)
    if getattr(args, "samples_per_query", None) is not None:
        fields["samples_per_query"] = args.samples_per_query
    if getattr(args, "duration_s", None) is not None:
        fields["min_duration_ns"] = int(args.duration_s * 1_000_000_000)
    if getattr(args, "pool", None) is not None:
        fields["loaded_sample_count"] = args.pool
    if getattr(args, "runs", None) is not None:
        fields["server_run_count"] = args.runs
    if getattr(args, "unsafe_override", False):
        fields["unsafe_override"] = True
    return TestSettings(**fields)


def _resolve_sut(spec: str, virtual: bool):
    if spec.startswith("tcp:"):
        _, host, port = spec.split(":")
        return TcpSut(host, int(port))
    if spec.startswith("null"):
        if virtual:
            return Instant()
        workers = int(spec.split(":")[1]) if ":" in spec else 0
        return engine.NullSut(workers=workers)
    return parse_profile(spec)


def _emit(args, human: str, payload: dict) -> None:
    if getattr(args, "json", False):
        print(canonical_json(payload))
    else:
        print(human)


def _add_settings_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", help="single_stream | multi_stream | server | offline")
    p.add_argument("--mode", help="performance | accuracy")
    p.add_argument("--config", help="JSON config file (canonical settings schema)")
    p.add_argument("--tail", type=float, help="tail percentile in (0,1)")
    p.add_argument("--confidence", type=float, help="confidence in (0,1)")
    p.add_argument("--seed", type=int, help="64-bit RNG seed")
    p.add_argument("--target-qps", type=float, dest="target_qps")
    p.add_argument("--interval-ms", type=float, dest="interval_ms")
    p.add_argument("--latency-bound-ms", type=float, dest="latency_bound_ms")
    p.add_argument("--samples-per-query", type=int, dest="samples_per_query")
    p.add_argument("--duration-s", type=float, dest="duration_s", help="duration floor")
    p.add_argument("--pool", type=int, help="loaded sample count")
    p.add_argument("--runs", type=int, help="server protocol run count")
    p.add_argument("--unsafe-override", action="store_true", dest="unsafe_override",
                   help="lift the default constraint ranges")
    p.add_argument("--json", action="store_true", help="machine-readable output")


def _cmd_plan(args) -> int:
    settings = _settings_from_args(args)
    plan = plan_for_scenario(settings)
    payload = {
        "scenario": settings.scenario.value,
        "tail_percentile": plan.tail_percentile,
        "confidence": plan.confidence,
        "margin": plan.margin,
        "raw_query_count": plan.raw_query_count,
        "rounded_query_count": plan.rounded_query_count,
        "scenario_min": plan.scenario_min,
        "effective_min_queries": plan.effective_min_queries,
        "offline_sample_budget": plan.offline_sample_budget,
        "min_duration_ns": settings.min_duration_ns,
    }
    if settings.scenario is ScenarioKind.OFFLINE:
        human = (f"offline: 1 query, >= {plan.offline_sample_budget} samples, "
                 f"plus the {settings.min_duration_ns / 1e9:.0f} s duration floor")
    else:
        human = (f"{settings.scenario.value}: {plan.effective_min_queries} queries "
                 f"(raw {plan.raw_query_count}, rounded {plan.rounded_query_count}), "
                 f"plus the {settings.min_duration_ns / 1e9:.0f} s duration floor")
    _emit(args, human, payload)
    return 0


def _result_line(result) -> str:
    status = "VALID" if result.valid else "INVALID"
    metric = "n/a" if result.metric_value is None else f"{result.metric_value:,.3f}"
    line = (f"{result.scenario.value} [{status}] {result.metric_name} = {metric}  "
            f"(queries {result.issued_query_count:,}, duration "
            f"{result.duration_ns / 1e9:.3f} s, violations "
            f"{100 * result.violation_fraction:.3f}%)")
    if result.diagnostics:
        line += "\n  - " + "\n  - ".join(result.diagnostics)
    return line


def _cmd_run(args) -> int:
    settings = _settings_from_args(args)
    cfg = _load_config(args.config) if args.config else {}
    sut_spec = args.sut or cfg.get("sut")
    if not sut_spec:
        raise ValidationError(["--sut is required (sim:<profile>, null[:N], tcp:host:port)"])
    virtual = args.virtual_time or bool(cfg.get("virtual_time", False))
    out = args.out or cfg.get("out") or os.environ.get("LOADGAUGE_OUT")
    sut = _resolve_sut(sut_spec, virtual)
    sut_name = getattr(sut, "name", None) or sut_spec.replace(":", "_")

    if settings.scenario is ScenarioKind.SERVER and settings.mode is ModeKind.PERFORMANCE:
        aggregate, runs = metrics.run_server_protocol(settings, sut, virtual=virtual)
        headline, perf_results = aggregate, runs
    else:
        result = engine.run(settings, sut, virtual=virtual)
        headline, perf_results = result, [result]
        aggregate = None

    payload = {"result": headline.summary_dict(),
               "runs": [r.summary_dict() for r in perf_results]}
    if out:
        alt_seeds = cfg.get("alternate_seeds") or [0xA17E41, 0xA17E42]
        comp_cfg = compliance_mod.ComplianceConfig(**cfg.get("compliance", {}))
        acc_log, acc_result = compliance_mod.run_accuracy_reference(settings, sut, virtual=virtual)
        verdicts = compliance_mod.run_all(settings, sut, alt_seeds, comp_cfg,
                                          virtual=virtual, accuracy_log=acc_log)
        bdir = logio.write_bundle(
            out, sut_name.replace(":", "_"), settings, perf_results,
            accuracy_result=acc_result, verdicts=verdicts, aggregate=aggregate,
        )
        payload["bundle"] = str(bdir)
        _emit(args, _result_line(headline) + f"\nbundle: {bdir}", payload)
    else:
        _emit(args, _result_line(headline), payload)
    return 0 if headline.valid else 1


def _cmd_search(args) -> int:
    settings = _settings_from_args(args)
    sut = _resolve_sut(args.sut, True)
    if args.kind == "qps":
        outcome = metrics.search_max_qps(sut, settings, args.lo, args.hi, args.resolution)
    else:
        outcome = metrics.search_max_streams(sut, settings, args.hi_n)
    payload = {
        "metric_name": outcome.metric_name,
        "value": outcome.value,
        "saturated": outcome.saturated,
        "anomaly": outcome.anomaly,
        "probes": [{"point": p, "valid": ok} for p, ok in outcome.probes],
    }
    found = outcome.value is not None
    human = (f"{outcome.metric_name} = {outcome.value}"
             + (" (saturated at the search bound)" if outcome.saturated else "")
             + (" [non-monotone probes observed]" if outcome.anomaly else "")
             if found else f"{outcome.metric_name}: none (lowest probe already fails)")
    _emit(args, human, payload)
    return 0 if found else 1


def _cmd_comply(args) -> int:
    settings = _settings_from_args(args)
    sut = _resolve_sut(args.sut, args.virtual_time)
    alt_seeds = [int(s, 0) for s in args.alt_seeds.split(",")] if args.alt_seeds else [0xA17E41, 0xA17E42]
    verdicts = compliance_mod.run_all(settings, sut, alt_seeds, virtual=args.virtual_time)
    if args.out:
        bdir = logio.bundle_dir(args.out, getattr(sut, "name", "sut").replace(":", "_"),
                                settings.scenario)
        comp = bdir / "compliance"
        comp.mkdir(parents=True, exist_ok=True)
        for v in verdicts:
            (comp / f"{v.test_name}.json").write_text(
                canonical_json(v.to_dict()) + "\n", encoding="ascii")
        logio.write_manifest(bdir)
    payload = {"verdicts": [v.to_dict() for v in verdicts]}
    human = "\n".join(
        f"{v.test_name}: {'PASS' if v.passed else 'FAIL'}" for v in verdicts
    )
    _emit(args, human, payload)
    return 0 if all(v.passed for v in verdicts) else 1


def _cmd_check(args) -> int:
    report = logio.check_submission(args.bundle)
    _emit(args, report.to_text(), report.to_dict())
    return report.exit_code


def _cmd_replay(args) -> int:
    result = logio.replay_run_log(args.log)
    _emit(args, _result_line(result), {"result": result.summary_dict()})
    return 0 if result.valid else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loadgauge",
        description="Scenario-driven load generator and measurement harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="print the query plan for settings")
    _add_settings_flags(p)
    p.set_defaults(fn=_cmd_plan)

    p = sub.add_parser("run", help="execute one scenario run (server: full protocol)")
    _add_settings_flags(p)
    p.add_argument("--sut", help="sim:<profile> | null[:workers] | tcp:host:port")
    p.add_argument("--out", help="output root for the submission bundle")
    p.add_argument("--virtual-time", action="store_true", dest="virtual_time")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("search", help="bisect the maximum sustainable load")
    _add_settings_flags(p)
    p.add_argument("kind", choices=("qps", "streams"))
    p.add_argument("--sut", required=True)
    p.add_argument("--lo", type=float, default=100.0)
    p.add_argument("--hi", type=float, default=20000.0)
    p.add_argument("--resolution", type=float, default=50.0)
    p.add_argument("--hi-n", type=int, dest="hi_n", default=256)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("comply", help="run the three audit tests")
    _add_settings_flags(p)
    p.add_argument("--sut", required=True)
    p.add_argument("--alt-seeds", dest="alt_seeds", help="comma-separated alternate seeds")
    p.add_argument("--out", help="bundle root to write verdicts into")
    p.add_argument("--virtual-time", action="store_true", dest="virtual_time")
    p.set_defaults(fn=_cmd_comply)

    p = sub.add_parser("check", help="validate a submission bundle")
    p.add_argument("bundle")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_check)

    p = sub.add_parser("replay", help="re-evaluate metrics from a run log")
    p.add_argument("log")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=_cmd_replay)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.fn(args)
    except ValidationError as e:
        for msg in e.violations:
            print(f"error: {msg}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError) as e:
        print(f"fatal: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())
