"""Structured run logs, submission bundles, and the submission checker.

Log files are canonical JSON lines (sorted keys, integer nanosecond times):
one header first, one summary last, gap-free sequence numbers in between.
A submission bundle is a directory of run logs, the accuracy log, compliance
verdicts and a summary, sealed by a manifest of per-file digests. The checker
re-derives everything it can from the raw records and demands exact agreement.
"""
from __future__ import annotations

import datetime as _dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional
import numpy as np
from .core import ModeKind, RunResult, ScenarioKind, TestSettings, ValidationError
from .digest import canonical_json, digest_file, fnv1a64
from .planner import plan_for_scenario
FORMAT_VERSION = 1
LAYOUT_VERSION = 1
HARNESS_NAME = "loadgauge 0.1.0"
RECORD_TYPES = (
    "header", "settings", "trace_ref", "issued", "completed",
    "accuracy", "compliance", "summary",
)
REQUIRED_COMPLIANCE = ("accuracy_spot_check", "caching_probe", "seed_variants")
def _hex(v: int) -> str:
    return f"0x{v & 0xFFFFFFFFFFFFFFFF:016x}"
def _unhex(s: str) -> int:
    return int(s, 16)
class LogIOError(RuntimeError):
    pass
@dataclass(frozen=True)
class LogRecord:
    record_type: str
    sequence_no: int
    monotonic_ns: int
    payload: dict
    def serialize(self) -> str:
        if self.record_type not in RECORD_TYPES:
            raise LogIOError(f"unknown record type {self.record_type!r}")
        return canonical_json(
            {
                "payload": self.payload,
                "seq": self.sequence_no,
                "t": self.monotonic_ns,
                "type": self.record_type,
            }
        )
    @classmethod
    def parse(cls, line: str) -> "LogRecord":
        try:
            obj = json.loads(line)
            return cls(
                record_type=obj["type"],
                sequence_no=obj["seq"],
                monotonic_ns=obj["t"],
                payload=obj["payload"],
            )
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise LogIOError(f"malformed log line: {e}") from e
class LogWriter:
    """Append-only writer enforcing the log-structure invariants.
    Producers hand records to an in-memory buffer; file I/O happens on
    flush/close, never on the engine's hot path. On an I/O failure a
    partial-log marker is attempted so truncation is self-describing.
    """
    def __init__(self, path):
        self.path = Path(path)
        self._lines: list[str] = []
        self._next_seq = 0
        self._have_header = False
        self._have_summary = False
    def append(self, record_type: str, monotonic_ns: int, payload: dict) -> LogRecord:
        rec = LogRecord(record_type, self._next_seq, monotonic_ns, payload)
        self.write_record(rec)
        return rec
    def write_record(self, record: LogRecord) -> None:
        if self._have_summary:
            raise LogIOError("no records may follow the summary")
        if record.record_type == "header":
            if self._have_header:
                raise LogIOError("duplicate header")
        elif not self._have_header:
            raise LogIOError("header must be the first record")
        if record.sequence_no != self._next_seq:
            raise LogIOError(
                f"sequence gap: expected {self._next_seq}, got {record.sequence_no}"
            )
        self._lines.append(record.serialize())
        self._next_seq += 1
        if record.record_type == "header":
            self._have_header = True
        if record.record_type == "summary":
            self._have_summary = True
    def close(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with open(self.path, "w", encoding="ascii") as f:
                f.write("\n".join(self._lines))
                if self._lines:
                    f.write("\n")
        except OSError as e:
            try:
                with open(self.path, "a", encoding="ascii") as f:
                    f.write('{"partial_log":true}\n')
            except OSError:
                pass
            raise LogIOError(f"log write failed: {e}") from e
def utc_now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")
def finalize_summary(result: RunResult) -> dict:
    """Summary payload embedded as the last record of a run log."""
    raw = result.raw
    payload = result.summary_dict()
    payload["settings_digest"] = _hex(result.settings_digest)
    payload["run_seed"] = _hex(result.run_seed)
    if raw is not None:
        payload["trace_digest"] = _hex(raw.trace_digest)
        payload["effective_min_queries"] = raw.plan.effective_min_queries
        payload["min_duration_ns"] = raw.settings.min_duration_ns
        payload["samples_per_query"] = raw.samples_per_query
        payload["virtual_time"] = raw.virtual
    return payload
def write_run_log(path, result: RunResult, wall_clock_iso: Optional[str] = None) -> Path:
    """Serialize one run (header, settings, trace, events, summary) to a file."""
    raw = result.raw
    if raw is None:
        raise LogIOError("result has no raw run data attached")
    w = LogWriter(path)
    w.append(
        "header",
        0,
        {
            "format_version": FORMAT_VERSION,
            "layout_version": LAYOUT_VERSION,
            "harness": HARNESS_NAME,
            "wall_clock_utc": wall_clock_iso or utc_now_iso(),
            "sut": raw.sut_name,
            "scenario": raw.settings.scenario.value,
            "mode": raw.settings.mode.value,
            "virtual_time": raw.virtual,
        },
    )
    plan = raw.plan
    w.append(
        "settings",
        0,
        {
            "settings": raw.settings.to_dict(),
            "settings_digest": _hex(raw.settings_digest),
            "plan": {
                "raw_query_count": plan.raw_query_count,
                "rounded_query_count": plan.rounded_query_count,
                "scenario_min": plan.scenario_min,
                "effective_min_queries": plan.effective_min_queries,
                "offline_sample_budget": plan.offline_sample_budget,
                "margin": plan.margin,
            },
        },
    )
    w.append(
        "trace_ref",
        0,
        {
            "trace_digest": _hex(raw.trace_digest),
            "run_seed": _hex(raw.run_seed),
            "n_queries": int(raw.issued),
            "samples_per_query": int(raw.samples_per_query),
        },
    )
    n = raw.issued
    issue = raw.issue_ns
    sched = raw.sched_ns
    comp = raw.complete_ns
    skip = raw.skipped
    events: list[tuple[int, int, int]] = []  # (t, kind, qid)
    for i in range(n):
        events.append((int(issue[i]), 0, i))
        c = int(comp[i])
        if c >= 0:
            events.append((c, 1, i))
    events.sort()
    for t, kind, qid in events:
        if kind == 0:
            w.append("issued", t, {
                "query_id": qid,
                "scheduled_ns": int(sched[qid]),
                "issue_ns": t,
            })
        else:
            w.append("completed", t, {
                "query_id": qid,
                "complete_ns": t,
                "latency_ns": t - int(issue[qid]),
                "skipped_intervals": int(skip[qid]),
            })
    for qid, sidx, rid, dg in sorted(raw.accuracy_records):
        w.append("accuracy", int(comp[qid]) if qid < n and comp[qid] >= 0 else 0, {
            "query_id": int(qid),
            "sample_index": int(sidx),
            "response_id": int(rid),
            "payload_digest": _hex(dg),
        })
    w.append("summary", raw.duration_ns, finalize_summary(result))
    w.close()
    return Path(path)
# ---------------------------------------------------------------------------
# parsing and replay
@dataclass
class ParsedLog:
    path: Path
    records: list[LogRecord]
    structure_errors: list[str] = field(default_factory=list)
    @property
    def header(self) -> Optional[dict]:
        return self.records[0].payload if self.records and self.records[0].record_type == "header" else None
    def first(self, record_type: str) -> Optional[LogRecord]:
        for r in self.records:
            if r.record_type == record_type:
                return r
        return None
    @property
    def summary(self) -> Optional[dict]:
        return self.records[-1].payload if self.records and self.records[-1].record_type == "summary" else None
def parse_run_log(path) -> ParsedLog:
    records: list[LogRecord] = []
    errors: list[str] = []
    with open(path, "r", encoding="ascii") as f:
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(LogRecord.parse(line))
            except LogIOError as e:
                errors.append(f"line {lineno + 1}: {e}")
    if not records:
        errors.append("empty log")
        return ParsedLog(Path(path), records, errors)
    if records[0].record_type != "header":
        errors.append("first record is not a header")
    if sum(1 for r in records if r.record_type == "header") != 1:
        errors.append("log must contain exactly one header")
    if records[-1].record_type != "summary":
        errors.append("log is truncated: missing trailing summary")
    if sum(1 for r in records if r.record_type == "summary") > 1:
        errors.append("log must contain exactly one summary")
    for i, r in enumerate(records):
        if r.sequence_no != i:
            errors.append(f"sequence gap at record {i} (found {r.sequence_no})")
            break
    return ParsedLog(Path(path), records, errors)
def rebuild_raw(parsed: ParsedLog):
    """Reconstruct a RawRun from a parsed log for independent re-evaluation."""
    from .engine import RawRun
    srec = parsed.first("settings")
    tref = parsed.first("trace_ref")
    summary = parsed.summary
    if srec is None or tref is None or summary is None:
        raise LogIOError("log lacks settings/trace_ref/summary records")
    settings = TestSettings.from_dict(srec.payload["settings"])
    plan = plan_for_scenario(settings)
    issued: dict[int, tuple[int, int]] = {}
    completed: dict[int, tuple[int, int]] = {}
    acc = []
    for r in parsed.records:
        if r.record_type == "issued":
            issued[r.payload["query_id"]] = (r.payload["scheduled_ns"], r.payload["issue_ns"])
        elif r.record_type == "completed":
            completed[r.payload["query_id"]] = (
                r.payload["complete_ns"], r.payload["skipped_intervals"]
            )
        elif r.record_type == "accuracy":
            acc.append((
                r.payload["query_id"], r.payload["sample_index"],
                r.payload["response_id"], _unhex(r.payload["payload_digest"]),
            ))
    n = len(issued)
    raw = RawRun(
        settings=settings,
        plan=plan,
        run_seed=_unhex(tref.payload["run_seed"]),
        settings_digest=_unhex(srec.payload["settings_digest"]),
        trace_digest=_unhex(tref.payload["trace_digest"]),
        sut_name=parsed.header.get("sut", "?") if parsed.header else "?",
        virtual=bool(parsed.header.get("virtual_time", True)) if parsed.header else True,
        samples_per_query=int(tref.payload["samples_per_query"]),
    )
    raw.issued = n
    raw.sched_ns = np.full(n, -1, np.int64)
    raw.issue_ns = np.full(n, -1, np.int64)
    raw.complete_ns = np.full(n, -1, np.int64)
    raw.skipped = np.zeros(n, np.int64)
    for qid, (sched, iss) in issued.items():
        if 0 <= qid < n:
            raw.sched_ns[qid] = sched
            raw.issue_ns[qid] = iss
    for qid, (c, sk) in completed.items():
        if 0 <= qid < n:
            raw.complete_ns[qid] = c
            raw.skipped[qid] = sk
    raw.completed = len(completed)
    raw.incomplete = n - raw.completed
    raw.accuracy_records = acc
    raw.duration_ns = int(summary["duration_ns"])
    return raw
def replay_run_log(path) -> RunResult:
    """Re-evaluate a run purely from its log records."""
    from .metrics import evaluate_run
    parsed = parse_run_log(path)
    if parsed.structure_errors:
        raise LogIOError("; ".join(parsed.structure_errors))
    return evaluate_run(rebuild_raw(parsed))
# ---------------------------------------------------------------------------
# submission bundles
def bundle_dir(out_root, sut_name: str, scenario: ScenarioKind) -> Path:
    return Path(out_root) / sut_name / scenario.value
def write_bundle(
    out_root,
    sut_name: str,
    settings: TestSettings,
    perf_results: list[RunResult],
    accuracy_result: Optional[RunResult] = None,
    verdicts: Iterable = (),
    aggregate: Optional[RunResult] = None,
    wall_clock_iso: Optional[str] = None,
) -> Path:
    """Write the full per-scenario bundle and seal it with a manifest."""
    bdir = bundle_dir(out_root, sut_name, settings.scenario)
    bdir.mkdir(parents=True, exist_ok=True)
    wall = wall_clock_iso or utc_now_iso()
    run_files = []
    for i, res in enumerate(perf_results, start=1):
        p = bdir / f"run_{i}.log"
        write_run_log(p, res, wall_clock_iso=wall)
        run_files.append(p.name)
    if accuracy_result is not None:
        write_run_log(bdir / "accuracy.log", accuracy_result, wall_clock_iso=wall)
    comp_dir = bdir / "compliance"
    verdicts = list(verdicts)
    if verdicts:
        comp_dir.mkdir(exist_ok=True)
        for v in verdicts:
            (comp_dir / f"{v.test_name}.json").write_text(
                canonical_json(v.to_dict()) + "\n", encoding="ascii"
            )
    summary = {
        "layout_version": LAYOUT_VERSION,
        "harness": HARNESS_NAME,
        "sut": sut_name,
        "scenario": settings.scenario.value,
        "settings": settings.to_dict(),
        "runs": [
            {"file": fn, **finalize_summary(res)}
            for fn, res in zip(run_files, perf_results)
        ],
        "aggregate": finalize_summary(aggregate) if aggregate is not None else None,
        "compliance": {v.test_name: v.passed for v in verdicts},
    }
    (bdir / "summary.json").write_text(canonical_json(summary) + "\n", encoding="ascii")
    write_manifest(bdir)
    return bdir
def write_manifest(bdir) -> Path:
    bdir = Path(bdir)
    files = {}
    for p in sorted(bdir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            dg, length = digest_file(p)
            files[p.relative_to(bdir).as_posix()] = {"fnv1a64": _hex(dg), "length": length}
    manifest = {"layout_version": LAYOUT_VERSION, "files": files}
    (bdir / "manifest.json").write_text(canonical_json(manifest) + "\n", encoding="ascii")
    return bdir / "manifest.json"
# ---------------------------------------------------------------------------
# submission checker
@dataclass(frozen=True)
class Violation:
    rule: str
    file: str
    detail: str
    def __str__(self) -> str:
        return f"[{self.rule}] {self.file}: {self.detail}"
@dataclass
class CheckReport:
    bundle: Path
    violations: list[Violation] = field(default_factory=list)
    fatal: Optional[str] = None
    checked_files: int = 0
    @property
    def exit_code(self) -> int:
        if self.fatal:
            return 2
        return 1 if self.violations else 0
    def to_text(self) -> str:
        lines = [f"checked bundle: {self.bundle}"]
        if self.fatal:
            lines.append(f"FATAL: {self.fatal}")
        for v in self.violations:
            lines.append(str(v))
        lines.append(
            "result: " + ("PASS" if self.exit_code == 0 else f"FAIL ({len(self.violations)} violations)")
        )
        return "\n".join(lines)
    def to_dict(self) -> dict:
        return {
            "bundle": str(self.bundle),
            "fatal": self.fatal,
            "violations": [
                {"rule": v.rule, "file": v.file, "detail": v.detail} for v in self.violations
            ],
            "pass": self.exit_code == 0,
        }
def _check_run_log(report: CheckReport, path: Path, expect_mode: ModeKind) -> Optional[dict]:
    """Structural + recomputation checks for one run log; returns its summary."""
    from .metrics import evaluate_run
    rel = path.name
    parsed = parse_run_log(path)
    for err in parsed.structure_errors:
        report.violations.append(Violation("log_structure", rel, err))
    if parsed.structure_errors:
        return parsed.summary
    srec = parsed.first("settings")
    try:
        settings = TestSettings.from_dict(srec.payload["settings"])
    except ValidationError as e:
        for msg in e.violations:
            report.violations.append(Violation("settings_out_of_range", rel, msg))
        return parsed.summary
    from .core import settings_digest as compute_sdig
    if _hex(compute_sdig(settings)) != srec.payload["settings_digest"]:
        report.violations.append(
            Violation("settings_digest_mismatch", rel,
                      "stored settings digest does not match recomputation")
        )
    if settings.mode is not expect_mode:
        report.violations.append(
            Violation("wrong_mode", rel,
                      f"expected a {expect_mode.value}-mode log, found {settings.mode.value}")
        )
    summary = parsed.summary
    try:
        raw = rebuild_raw(parsed)
    except (LogIOError, ValidationError) as e:
        report.violations.append(Violation("log_structure", rel, str(e)))
        return summary
    recomputed = evaluate_run(raw)
    last_event = max(
        (r.monotonic_ns for r in parsed.records if r.record_type in ("issued", "completed")),
        default=0,
    )
    if raw.duration_ns < last_event:
        report.violations.append(
            Violation("duration_claim", rel,
                      f"summary duration {raw.duration_ns} predates last event {last_event}")
        )
    if expect_mode is ModeKind.PERFORMANCE:
        stored_metric = summary.get("metric_value")
        if stored_metric != recomputed.metric_value:
            report.violations.append(
                Violation("metric_mismatch", rel,
                          f"summary metric {stored_metric!r} != recomputed "
                          f"{recomputed.metric_value!r}")
            )
        if summary.get("violation_fraction") != recomputed.violation_fraction:
            report.violations.append(
                Violation("violation_fraction_mismatch", rel,
                          f"summary fraction {summary.get('violation_fraction')!r} != "
                          f"recomputed {recomputed.violation_fraction!r}")
            )
        if bool(summary.get("valid")) != recomputed.valid:
            report.violations.append(
                Violation("validity_mismatch", rel,
                          f"summary valid={summary.get('valid')} but recomputation "
                          f"says {recomputed.valid}: " + "; ".join(recomputed.diagnostics))
            )
        for diag in recomputed.diagnostics:
            if "below the required minimum" in diag:
                report.violations.append(Violation("floor_queries", rel, diag))
            elif "duration floor" in diag:
                report.violations.append(Violation("floor_duration", rel, diag))
            elif "latency bound" in diag or "skipped intervals" in diag:
                report.violations.append(Violation("qos_budget", rel, diag))
    report.checked_files += 1
    return summary
def check_submission(bundle_path) -> CheckReport:
    """Validate a results bundle; every violated rule is reported by name."""
    bdir = Path(bundle_path)
    report = CheckReport(bundle=bdir)
    if not bdir.is_dir():
        report.fatal = f"bundle directory {bdir} does not exist"
        return report
    # manifest first: everything else is judged against it
    manifest_path = bdir / "manifest.json"
    manifest = None
    if not manifest_path.is_file():
        report.violations.append(
            Violation("missing_file", "manifest.json", "required file is absent")
        )
    else:
        try:
            manifest = json.loads(manifest_path.read_text(encoding="ascii"))
        except (OSError, json.JSONDecodeError) as e:
            report.violations.append(Violation("malformed_file", "manifest.json", str(e)))
    listed = set()
    if manifest is not None:
        for rel, meta in sorted(manifest.get("files", {}).items()):
            listed.add(rel)
            p = bdir / rel
            if not p.is_file():
                report.violations.append(
                    Violation("missing_file", rel, "listed in manifest but absent")
                )
                continue
            dg, length = digest_file(p)
            if _hex(dg) != meta.get("fnv1a64") or length != meta.get("length"):
                report.violations.append(
                    Violation("manifest_mismatch", rel,
                              "file content does not match manifest digest/length")
                )
    on_disk = {
        p.relative_to(bdir).as_posix()
        for p in bdir.rglob("*")
        if p.is_file() and p.name != "manifest.json"
    }
    for rel in sorted(on_disk - listed):
        if manifest is not None:
            report.violations.append(
                Violation("file_not_in_manifest", rel, "present on disk but unlisted")
            )
    # bundle summary
    summary = None
    if not (bdir / "summary.json").is_file():
        report.violations.append(
            Violation("missing_file", "summary.json", "required file is absent")
        )
    else:
        try:
            summary = json.loads((bdir / "summary.json").read_text(encoding="ascii"))
        except (OSError, json.JSONDecodeError) as e:
            report.violations.append(Violation("malformed_file", "summary.json", str(e)))
    scenario = None
    expected_runs = 1
    if summary is not None:
        try:
            settings = TestSettings.from_dict(summary["settings"])
            scenario = settings.scenario
            if scenario is ScenarioKind.SERVER:
                expected_runs = settings.server_run_count
        except (ValidationError, KeyError) as e:
            report.violations.append(Violation("malformed_file", "summary.json", str(e)))
    run_summaries = []
    for i in range(1, expected_runs + 1):
        rel = f"run_{i}.log"
        p = bdir / rel
        if not p.is_file():
            report.violations.append(
                Violation("missing_file", rel, "required run log is absent")
            )
            continue
        run_summaries.append(_check_run_log(report, p, ModeKind.PERFORMANCE))
    if not (bdir / "accuracy.log").is_file():
        report.violations.append(
            Violation("missing_file", "accuracy.log", "required accuracy log is absent")
        )
    else:
        _check_run_log(report, bdir / "accuracy.log", ModeKind.ACCURACY)
    for test in REQUIRED_COMPLIANCE:
        rel = f"compliance/{test}.json"
        p = bdir / rel
        if not p.is_file():
            report.violations.append(
                Violation("missing_file", rel, "required compliance verdict is absent")
            )
            continue
        try:
            verdict = json.loads(p.read_text(encoding="ascii"))
        except (OSError, json.JSONDecodeError) as e:
            report.violations.append(Violation("malformed_file", rel, str(e)))
            continue
        if not verdict.get("pass", False):
            report.violations.append(
                Violation("compliance_failed", rel, f"{test} verdict is a failure")
            )
    # cross-check bundle summary against the run logs
    if summary is not None:
        stored_runs = summary.get("runs", [])
        if len(stored_runs) != len(run_summaries):
            report.violations.append(
                Violation("summary_mismatch", "summary.json",
                          f"summary lists {len(stored_runs)} runs, bundle has "
                          f"{len(run_summaries)} run logs")
            )
        for stored, live in zip(stored_runs, run_summaries):
            if live is None:
                continue
            if stored.get("metric_value") != live.get("metric_value"):
                report.violations.append(
                    Violation("summary_mismatch", "summary.json",
                              f"{stored.get('file')}: bundle summary metric "
                              f"{stored.get('metric_value')!r} != run log "
                              f"{live.get('metric_value')!r}")
                )
        agg = summary.get("aggregate")
        if scenario is ScenarioKind.SERVER and agg is None:
            report.violations.append(
                Violation("summary_mismatch", "summary.json",
                          "server bundle lacks the multi-run aggregate")
            )
        if agg is not None and run_summaries and all(s is not None for s in run_summaries):
            metrics = [s.get("metric_value") for s in run_summaries]
            all_valid = all(bool(s.get("valid")) for s in run_summaries)
            want = min(m for m in metrics if m is not None) if all_valid and metrics else None
            if agg.get("metric_value") != want:
                report.violations.append(
                    Violation("aggregate_mismatch", "summary.json",
                              f"aggregate metric {agg.get('metric_value')!r} != "
                              f"recomputed min {want!r}")
                )
            if bool(agg.get("valid")) != all_valid:
                report.violations.append(
                    Violation("aggregate_mismatch", "summary.json",
                              "aggregate validity does not match the member runs")
                )
    return report
