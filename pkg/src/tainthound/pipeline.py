"""Stage orchestration: Finder -> Judge -> Constraints -> Exploiter.

The Finder enumerates candidates for one vulnerability class; every
deduplicated candidate then flows independently through the remaining
stages, each with a fresh model session (isolated context).  Exploit
attempts (at most three) each get a fresh scratch clone and fresh oracle
preparation, and an attempt counts as successful only when the execution
oracle confirms a concrete side effect, never on the model's say-so.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .agent import AgentOutcome, SubmissionSpec, ToolSchema, run_agent
from .lint import LintFinding, is_validated, lint_poc
from .model import ChatSession, ScriptedBackend, UsageStats
from .prompts import (
    constraints_prompts,
    exploiter_prompts,
    finder_prompts,
    judge_prompts,
)
from .sandbox import (
    DEFAULT_EXEC_TIMEOUT,
    DEFAULT_PROBE_KEYS,
    ExecutionRecord,
    PersistentProcessManager,
    RunContext,
    execute_exploit,
    prepare_oracle,
    run_shell,
    sentinel_state,
)
from .vulns import (
    ConstraintSet,
    ExploitResult,
    Finding,
    NoncePolicy,
    StageId,
    SubmissionError,
    Verdict,
    VulnClass,
    to_record,
    validate_submission,
)
from .workspace import (
    TargetSpec,
    Workspace,
    clone_workspace,
    file_tree,
    read_source,
    resolve_target,
    search_pattern,
)

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
JUDGE_NO_VERDICT_REASON = "judge produced no verdict"


class CandidateStatus(str, Enum):
    REJECTED_BY_JUDGE = "rejected_by_judge"
    NOT_EXPLOITED = "not_exploited"
    EXPLOITED_ORACLE_CONFIRMED = "exploited_oracle_confirmed"


@dataclass(frozen=True)
class StageKey:
    stage: StageId
    vuln_class: VulnClass
    candidate_id: str | None = None
    attempt: int = 0


SessionFactory = Callable[[StageKey], ChatSession]


class ScriptedSessionFactory:
    """Resolves per-stage script files under a directory.

    Lookup order per key: ``<stage>/<candidate_id>-attempt<k>.ndjson``,
    ``<stage>/<candidate_id>.ndjson``, ``<stage>/<class>-attempt<k>.ndjson``,
    ``<stage>/<class>.ndjson``, ``<stage>/default.ndjson``.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def __call__(self, key: StageKey) -> ChatSession:
        names: list[str] = []
        stage = key.stage.value
        if key.candidate_id and key.attempt:
            names.append(f"{stage}/{key.candidate_id}-attempt{key.attempt}.ndjson")
        if key.candidate_id:
            names.append(f"{stage}/{key.candidate_id}.ndjson")
        if key.attempt:
            names.append(f"{stage}/{key.vuln_class.value}-attempt{key.attempt}.ndjson")
        names.append(f"{stage}/{key.vuln_class.value}.ndjson")
        names.append(f"{stage}/default.ndjson")
        for name in names:
            path = self.directory / name
            if path.is_file():
                return ChatSession(ScriptedBackend.from_file(path))
        raise FileNotFoundError(
            f"no script for stage={stage} class={key.vuln_class.value} "
            f"candidate={key.candidate_id} under {self.directory}"
        )


@dataclass
class PipelineConfig:
    session_factory: SessionFactory
    iteration_limit: int = 54
    max_attempts: int = 3
    exec_timeout: float = DEFAULT_EXEC_TIMEOUT
    parallelism: int = 1
    sentinel_root: Path | None = None
    nonce_policy: NoncePolicy | None = None  # None: per-class registered policy
    probe_keys: tuple[str, ...] = DEFAULT_PROBE_KEYS
    node_binary: str = "node"
    template_dir: Path | None = None
    persistent_limit: int = 2
    work_dir: Path = Path("work")
    report_dir: Path = Path("reports")
    model_info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.iteration_limit < 1 or self.max_attempts < 1:
            raise ValueError("iteration and attempt limits must be positive")
        if self.exec_timeout <= 0:
            raise ValueError("execution timeout must be positive")
        if self.parallelism < 1:
            raise ValueError("parallelism must be positive")


def candidate_id(finding: Finding) -> str:
    file_hash = hashlib.sha1(finding.file.encode("utf-8")).hexdigest()[:8]
    return f"{finding.vuln_type.value}-{file_hash}-{finding.line}"


# ---------------------------------------------------------------------------
# Agent tools
# ---------------------------------------------------------------------------


def exploration_tools(ws: Workspace) -> list[ToolSchema]:
    def get_file_tree(max_depth: int | None = None) -> str:
        entries = file_tree(ws, max_depth)
        if not entries:
            return "(empty workspace)"
        return "\n".join(
            e.path + "/" if e.kind == "dir" else f"{e.path} ({e.size} bytes)"
            for e in entries
        )

    def read_file(path: str, start_line: int | None = None, end_line: int | None = None) -> str:
        if (start_line is None) != (end_line is None):
            return "error: provide both start_line and end_line, or neither"
        line_range = (start_line, end_line) if start_line is not None else None
        text = read_source(ws, path, line_range)
        first = start_line or 1
        return "\n".join(
            f"{first + i}: {line}" for i, line in enumerate(text.splitlines())
        )

    def search_files(pattern: str, glob: str | None = None) -> str:
        matches = search_pattern(ws, pattern, glob)
        if not matches:
            return "(no matches)"
        return "\n".join(f"{m.file}:{m.line}: {m.excerpt}" for m in matches)

    return [
        ToolSchema(
            name="get_file_tree",
            description="List files and directories of the package (sorted; dependency directories excluded).",
            parameters={
                "type": "object",
                "properties": {"max_depth": {"type": "integer", "description": "limit listing depth"}},
                "required": [],
            },
            handler=get_file_tree,
        ),
        ToolSchema(
            name="read_file",
            description="Read a source file (line-numbered). Optionally slice an inclusive 1-indexed line range.",
            parameters={
                "type": "object",
                "properties": {
                    "path": {"type": "string"},
                    "start_line": {"type": "integer"},
                    "end_line": {"type": "integer"},
                },
                "required": ["path"],
            },
            handler=read_file,
        ),
        ToolSchema(
            name="search_files",
            description="Regex search across package files; returns file:line: excerpt per match.",
            parameters={
                "type": "object",
                "properties": {
                    "pattern": {"type": "string"},
                    "glob": {"type": "string", "description": "optional filename filter, e.g. *.js"},
                },
                "required": ["pattern"],
            },
            handler=search_files,
        ),
    ]


def _finish_tool() -> ToolSchema:
    return ToolSchema(
        name="finish",
        description="End the run when all findings have been submitted.",
        parameters={
            "type": "object",
            "properties": {"summary": {"type": "string"}},
            "required": [],
        },
    )


def _format_execution(record: ExecutionRecord) -> str:
    exit_part = "timeout" if record.timed_out else str(record.exit_code)
    parts = [
        f"exit: {exit_part} (after {record.duration:.2f}s)",
        f"oracle: {record.oracle_verdict or 'n/a'}"
        + (f" ({record.oracle_evidence})" if record.oracle_evidence else ""),
        "--- stdout ---",
        record.stdout if record.stdout else "(empty)",
        "--- stderr ---",
        record.stderr if record.stderr else "(empty)",
    ]
    return "\n".join(parts)


# ---------------------------------------------------------------------------
# Stage runners
# ---------------------------------------------------------------------------


@dataclass
class FinderResult:
    findings: list[Finding]
    outcome: AgentOutcome


@dataclass
class JudgeResult:
    verdict: Verdict
    synthetic: bool
    outcome: AgentOutcome | None


@dataclass
class ConstraintsResult:
    constraints: ConstraintSet | None
    outcome: AgentOutcome | None


@dataclass
class AttemptOutcome:
    result: ExploitResult
    record: ExecutionRecord | None
    outcome: AgentOutcome
    last_output: str


def run_finder(
    ws: Workspace,
    vuln_class: VulnClass,
    session: ChatSession,
    *,
    limit: int = 54,
    transcript_path: Path | None = None,
) -> FinderResult:
    """Enumerate candidate findings; over-approximation is expected here."""

    def validate(arguments: dict[str, Any]) -> list[Finding]:
        raw_findings = arguments.get("findings")
        if not isinstance(raw_findings, list):
            raise SubmissionError(["findings: expected a list of finding records"])
        violations: list[str] = []
        accepted: list[Finding] = []
        for i, raw in enumerate(raw_findings):
            if not isinstance(raw, dict):
                violations.append(f"findings[{i}]: expected a key/value record")
                continue
            try:
                accepted.append(validate_submission(StageId.FINDER, raw))
            except SubmissionError as exc:
                violations.extend(f"findings[{i}].{v}" for v in exc.violations)
        if violations:
            raise SubmissionError(violations)
        return accepted

    tools = exploration_tools(ws) + [
        ToolSchema(
            name="submit_findings",
            description="Submit structured vulnerability findings (may be called multiple times).",
            parameters={
                "type": "object",
                "properties": {"findings": {"type": "array"}},
                "required": ["findings"],
            },
        ),
        _finish_tool(),
    ]
    system_prompt, user_prompt = finder_prompts(vuln_class, str(ws.root))
    outcome = run_agent(
        session,
        system_prompt,
        user_prompt,
        tools,
        SubmissionSpec(tool_name="submit_findings", validate=validate, terminal=False),
        finish_tool_name="finish",
        limit=limit,
        transcript_path=transcript_path,
    )
    return FinderResult(findings=list(outcome.submissions), outcome=outcome)


def run_judge(
    ws: Workspace,
    finding: Finding,
    session: ChatSession,
    *,
    limit: int = 54,
    transcript_path: Path | None = None,
) -> JudgeResult:
    """Exploitability filtering; one verdict per candidate.

    A run that hits the limit without submitting yields a synthetic invalid
    verdict, recorded and flagged rather than retried.
    """

    def validate(arguments: dict[str, Any]) -> list[Verdict]:
        return [validate_submission(StageId.JUDGE, arguments, finding=finding)]

    tools = exploration_tools(ws) + [
        ToolSchema(
            name="submit_verdict",
            description="Submit the exploitability verdict for the finding under review.",
            parameters={
                "type": "object",
                "properties": {
                    "is_valid": {"type": "boolean"},
                    "reason": {"type": "string"},
                    "confidence": {"type": "number"},
                },
                "required": ["is_valid", "reason", "confidence"],
            },
        ),
    ]
    system_prompt, user_prompt = judge_prompts(finding, str(ws.root))
    outcome = run_agent(
        session,
        system_prompt,
        user_prompt,
        tools,
        SubmissionSpec(tool_name="submit_verdict", validate=validate, terminal=True),
        limit=limit,
        transcript_path=transcript_path,
    )
    if outcome.submissions:
        return JudgeResult(verdict=outcome.submissions[-1], synthetic=False, outcome=outcome)
    return JudgeResult(
        verdict=Verdict(finding=finding, is_valid=False, reason=JUDGE_NO_VERDICT_REASON, confidence=0.0),
        synthetic=True,
        outcome=outcome,
    )


def run_constraints(
    ws: Workspace,
    finding: Finding,
    session: ChatSession,
    *,
    limit: int = 54,
    transcript_path: Path | None = None,
) -> ConstraintsResult:
    """Derive actionable exploitation conditions; the sole Exploiter carry-over."""

    def validate(arguments: dict[str, Any]) -> list[ConstraintSet]:
        return [validate_submission(StageId.CONSTRAINTS, arguments, finding=finding)]

    tools = exploration_tools(ws) + [
        ToolSchema(
            name="submit_constraints",
            description="Submit the exploitation constraints for the validated finding.",
            parameters={
                "type": "object",
                "properties": {
                    "constraints": {"type": "string"},
                    "entry_point": {"type": "string"},
                    "parameters": {"type": "array"},
                    "payload_format": {"type": "string"},
                },
                "required": ["constraints"],
            },
        ),
    ]
    system_prompt, user_prompt = constraints_prompts(finding, str(ws.root))
    outcome = run_agent(
        session,
        system_prompt,
        user_prompt,
        tools,
        SubmissionSpec(tool_name="submit_constraints", validate=validate, terminal=True),
        limit=limit,
        transcript_path=transcript_path,
    )
    constraints = outcome.submissions[-1] if outcome.submissions else None
    return ConstraintsResult(constraints=constraints, outcome=outcome)


@dataclass
class _AttemptState:
    executions: list[tuple[str, ExecutionRecord]] = field(default_factory=list)


def _exploiter_tools(
    clone_ws: Workspace,
    vuln_class: VulnClass,
    ctx: RunContext,
    state: _AttemptState,
    manager: PersistentProcessManager,
    config: PipelineConfig,
) -> list[ToolSchema]:
    def execute_javascript(code: str) -> str:
        record = execute_exploit(
            ctx.clone_root,
            vuln_class,
            code,
            ctx,
            timeout=config.exec_timeout,
            node_binary=config.node_binary,
            probe_keys=config.probe_keys,
            template_dir=config.template_dir,
        )
        state.executions.append((code, record))
        return _format_execution(record)

    def run_shell_command(command: str) -> str:
        record = run_shell(ctx.clone_root, command, config.exec_timeout)
        return _format_execution(record)

    def start_persistent_process(command: str) -> str:
        handle = manager.start(command)
        return f"started persistent process {handle}"

    def check_persistent_process(handle: str) -> str:
        running, output = manager.check(handle)
        status = "running" if running else "exited"
        return f"{handle}: {status}\n--- output ---\n{output or '(none)'}"

    def kill_persistent_process(handle: str) -> str:
        record = manager.kill(handle)
        return f"{handle} killed (exit {record.exit_code})\n--- output ---\n{record.stdout}{record.stderr}"

    def check_side_effect() -> str:
        return sentinel_state(vuln_class, ctx)

    return exploration_tools(clone_ws) + [
        ToolSchema(
            name="execute_javascript",
            description="Run JavaScript exploit code under node inside the package clone; the class probe harness wraps it and the oracle verdict is reported.",
            parameters={
                "type": "object",
                "properties": {"code": {"type": "string"}},
                "required": ["code"],
            },
            handler=execute_javascript,
        ),
        ToolSchema(
            name="run_shell_command",
            description="Run a shell command in the package clone (e.g. npm install).",
            parameters={
                "type": "object",
                "properties": {"command": {"type": "string"}},
                "required": ["command"],
            },
            handler=run_shell_command,
        ),
        ToolSchema(
            name="start_persistent_process",
            description="Start a background process (e.g. a server) in the clone; returns a handle.",
            parameters={
                "type": "object",
                "properties": {"command": {"type": "string"}},
                "required": ["command"],
            },
            handler=start_persistent_process,
        ),
        ToolSchema(
            name="check_persistent_process",
            description="Check a background process handle: running state and buffered output.",
            parameters={
                "type": "object",
                "properties": {"handle": {"type": "string"}},
                "required": ["handle"],
            },
            handler=check_persistent_process,
        ),
        ToolSchema(
            name="kill_persistent_process",
            description="Kill a background process (idempotent) and collect its final output.",
            parameters={
                "type": "object",
                "properties": {"handle": {"type": "string"}},
                "required": ["handle"],
            },
            handler=kill_persistent_process,
        ),
        ToolSchema(
            name="check_side_effect",
            description="Report the current sentinel/oracle state for this vulnerability class.",
            parameters={"type": "object", "properties": {}, "required": []},
            handler=check_side_effect,
        ),
        ToolSchema(
            name="submit_exploit_result",
            description="Submit the structured exploit result (success, exploit_code, execution_output, explanation).",
            parameters={
                "type": "object",
                "properties": {
                    "success": {"type": "boolean"},
                    "exploit_code": {"type": "string"},
                    "execution_output": {"type": "string"},
                    "explanation": {"type": "string"},
                },
                "required": ["success", "exploit_code"],
            },
        ),
    ]


def run_exploiter(
    ws: Workspace,
    constraints: ConstraintSet,
    session_factory: SessionFactory,
    config: PipelineConfig,
    *,
    cand_id: str | None = None,
    transcript_dir: Path | None = None,
) -> list[AttemptOutcome]:
    """Up to ``config.max_attempts`` exploit attempts, stopping on success.

    Every attempt runs on a fresh scratch clone with fresh oracle
    preparation; the attempt is successful only if the oracle confirmed a
    side effect during the attempt, regardless of the model's claim.
    """
    finding = constraints.finding
    vuln_class = finding.vuln_type
    cand_id = cand_id or candidate_id(finding)
    namespaced = config.parallelism > 1
    sentinel_root = config.sentinel_root
    if namespaced and sentinel_root is None:
        sentinel_root = Path("/tmp")

    attempts: list[AttemptOutcome] = []
    previous: tuple[str, str] | None = None
    for attempt in range(1, config.max_attempts + 1):
        clone = clone_workspace(ws, Path(config.work_dir) / cand_id / f"attempt{attempt}")
        clone_ws = replace(ws, root=clone)
        ctx = RunContext.create(
            clone_root=clone,
            run_id=f"{cand_id}-a{attempt}",
            sentinel_root=sentinel_root,
            namespaced=namespaced,
            nonce_policy=config.nonce_policy,
        )
        prepare_oracle(vuln_class, ctx)
        manager = PersistentProcessManager(clone, limit=config.persistent_limit)
        state = _AttemptState()

        def validate(arguments: dict[str, Any]) -> list[ExploitResult]:
            return [
                validate_submission(
                    StageId.EXPLOITER, arguments, finding=finding, attempt_index=attempt
                )
            ]

        tools = _exploiter_tools(clone_ws, vuln_class, ctx, state, manager, config)
        system_prompt, user_prompt = exploiter_prompts(
            constraints,
            sentinel_path_overrides=ctx.sentinel_overrides(vuln_class),
            previous_attempt=previous,
        )
        session = session_factory(
            StageKey(StageId.EXPLOITER, vuln_class, candidate_id=cand_id, attempt=attempt)
        )
        transcript_path = (
            Path(transcript_dir) / f"attempt{attempt}" / "transcript.ndjson"
            if transcript_dir is not None
            else None
        )
        try:
            outcome = run_agent(
                session,
                system_prompt,
                user_prompt,
                tools,
                SubmissionSpec(tool_name="submit_exploit_result", validate=validate, terminal=True),
                limit=config.iteration_limit,
                transcript_path=transcript_path,
            )
        finally:
            manager.teardown()

        confirming = next(
            (
                (code, record)
                for code, record in state.executions
                if record.oracle_verdict == "success"
            ),
            None,
        )
        submitted: ExploitResult | None = outcome.submissions[-1] if outcome.submissions else None
        success = confirming is not None
        if confirming is not None:
            exploit_code = submitted.exploit_code if submitted and submitted.exploit_code else confirming[0]
            execution_output = confirming[1].stdout
            record: ExecutionRecord | None = confirming[1]
        elif state.executions:
            last_code, last_record = state.executions[-1]
            exploit_code = submitted.exploit_code if submitted and submitted.exploit_code else last_code
            execution_output = last_record.stdout + last_record.stderr
            record = last_record
        else:
            exploit_code = submitted.exploit_code if submitted else ""
            execution_output = submitted.execution_output if submitted else ""
            record = None
        explanation = (
            submitted.explanation
            if submitted
            else ("oracle confirmed a side effect" if success else "no exploit result submitted")
        )
        result = ExploitResult(
            finding=finding,
            success=success,
            exploit_code=exploit_code,
            execution_output=execution_output,
            explanation=explanation,
            attempt_index=attempt,
        )
        attempts.append(
            AttemptOutcome(result=result, record=record, outcome=outcome, last_output=execution_output)
        )
        if success:
            break
        previous = (exploit_code, execution_output)
    return attempts


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass
class CandidateRun:
    candidate_id: str
    finding: Finding
    verdict: Verdict | None = None
    judge_synthetic: bool = False
    constraints: ConstraintSet | None = None
    attempts: list[AttemptOutcome] = field(default_factory=list)
    final_status: CandidateStatus = CandidateStatus.NOT_EXPLOITED
    lint_findings: list[LintFinding] = field(default_factory=list)
    validated: bool = False
    usage: UsageStats = field(default_factory=UsageStats)

    def to_dict(self) -> dict[str, Any]:
        return {
            "candidate_id": self.candidate_id,
            "vuln_class": self.finding.vuln_type.value,
            "finding": to_record(self.finding),
            "verdict": to_record(self.verdict) if self.verdict else None,
            "judge_synthetic": self.judge_synthetic,
            "constraints": to_record(self.constraints) if self.constraints else None,
            "attempts": [
                {
                    **to_record(a.result),
                    "attempt_index": a.result.attempt_index,
                    "execution": a.record.to_dict() if a.record else None,
                    "iterations_used": a.outcome.iterations_used,
                    "finished": a.outcome.finished,
                    "transcript": a.outcome.transcript_ref,
                }
                for a in self.attempts
            ],
            "final_status": self.final_status.value,
            "lint_findings": [f.to_dict() for f in self.lint_findings],
            "validated": self.validated,
            "usage": self.usage.to_dict(),
        }


@dataclass
class FinderStageSummary:
    vuln_class: VulnClass
    findings_submitted: int
    finished: bool
    iterations_used: int
    transcript: str
    usage: UsageStats

    def to_dict(self) -> dict[str, Any]:
        return {
            "vuln_class": self.vuln_class.value,
            "findings_submitted": self.findings_submitted,
            "finished": self.finished,
            "iterations_used": self.iterations_used,
            "transcript": self.transcript,
            "usage": self.usage.to_dict(),
        }


@dataclass
class PipelineReport:
    target: str
    snapshot_id: str
    classes: list[VulnClass]
    finder_runs: list[FinderStageSummary]
    candidates: list[CandidateRun]
    usage_totals: UsageStats
    duration_seconds: float
    config_echo: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "target": self.target,
            "snapshot_id": self.snapshot_id,
            "classes": [c.value for c in self.classes],
            "finder_runs": [f.to_dict() for f in self.finder_runs],
            "candidates": [c.to_dict() for c in self.candidates],
            "usage_totals": self.usage_totals.to_dict(),
            "duration_seconds": round(self.duration_seconds, 3),
            "config": self.config_echo,
        }

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        return path


def dedup_findings(findings: list[Finding]) -> list[Finding]:
    """Drop duplicate candidates on (vuln_type, file, line), keeping order."""
    seen: set[tuple[str, str, int]] = set()
    unique: list[Finding] = []
    for finding in findings:
        key = (finding.vuln_type.value, finding.file, finding.line)
        if key in seen:
            continue
        seen.add(key)
        unique.append(finding)
    return unique


def _process_candidate(
    ws: Workspace,
    finding: Finding,
    config: PipelineConfig,
    report_dir: Path,
) -> CandidateRun:
    cand_id = candidate_id(finding)
    run = CandidateRun(candidate_id=cand_id, finding=finding)
    factory = config.session_factory

    judge_session = factory(StageKey(StageId.JUDGE, finding.vuln_type, candidate_id=cand_id))
    judge = run_judge(
        ws,
        finding,
        judge_session,
        limit=config.iteration_limit,
        transcript_path=report_dir / "judge" / cand_id / "transcript.ndjson",
    )
    run.verdict = judge.verdict
    run.judge_synthetic = judge.synthetic
    if judge.outcome is not None:
        run.usage.add(judge.outcome.usage)
    if not judge.verdict.is_valid:
        run.final_status = CandidateStatus.REJECTED_BY_JUDGE
        return run

    constraints_session = factory(StageKey(StageId.CONSTRAINTS, finding.vuln_type, candidate_id=cand_id))
    constraints = run_constraints(
        ws,
        finding,
        constraints_session,
        limit=config.iteration_limit,
        transcript_path=report_dir / "constraints" / cand_id / "transcript.ndjson",
    )
    if constraints.outcome is not None:
        run.usage.add(constraints.outcome.usage)
    if constraints.constraints is None:
        run.final_status = CandidateStatus.NOT_EXPLOITED
        return run
    run.constraints = constraints.constraints

    attempts = run_exploiter(
        ws,
        constraints.constraints,
        factory,
        config,
        cand_id=cand_id,
        transcript_dir=report_dir / "exploiter" / cand_id,
    )
    run.attempts = attempts
    for attempt in attempts:
        run.usage.add(attempt.outcome.usage)
    if attempts and attempts[-1].result.success:
        run.final_status = CandidateStatus.EXPLOITED_ORACLE_CONFIRMED
        final = attempts[-1]
        run.lint_findings = lint_poc(final.result.exploit_code, ws, final.record)
        run.validated = is_validated(final.record, run.lint_findings)
    else:
        run.final_status = CandidateStatus.NOT_EXPLOITED
    return run


def run_pipeline(
    target: TargetSpec,
    classes: list[VulnClass],
    config: PipelineConfig,
    *,
    cache_dir: Path | None = None,
    registry_url: str | None = None,
) -> PipelineReport:
    """Full per-target run; stage order is strictly Finder -> Judge ->
    Constraints -> Exploiter per candidate."""
    started = time.monotonic()
    report_dir = Path(config.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    resolve_kwargs: dict[str, Any] = {}
    if registry_url:
        resolve_kwargs["registry_url"] = registry_url
    ws = resolve_target(target, cache_dir or Path(config.work_dir) / "cache", **resolve_kwargs)

    finder_runs: list[FinderStageSummary] = []
    all_findings: list[Finding] = []
    for vuln_class in classes:
        session = config.session_factory(StageKey(StageId.FINDER, vuln_class))
        result = run_finder(
            ws,
            vuln_class,
            session,
            limit=config.iteration_limit,
            transcript_path=report_dir / "finder" / vuln_class.value / "transcript.ndjson",
        )
        finder_runs.append(
            FinderStageSummary(
                vuln_class=vuln_class,
                findings_submitted=len(result.findings),
                finished=result.outcome.finished,
                iterations_used=result.outcome.iterations_used,
                transcript=result.outcome.transcript_ref,
                usage=result.outcome.usage,
            )
        )
        all_findings.extend(result.findings)

    candidates = dedup_findings(all_findings)
    runs: list[CandidateRun] = []
    if candidates:
        if config.parallelism > 1:
            with concurrent.futures.ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                runs = list(
                    pool.map(lambda f: _process_candidate(ws, f, config, report_dir), candidates)
                )
        else:
            runs = [_process_candidate(ws, finding, config, report_dir) for finding in candidates]

    usage_totals = UsageStats()
    for summary in finder_runs:
        usage_totals.add(summary.usage)
    for run in runs:
        usage_totals.add(run.usage)

    return PipelineReport(
        target=str(target),
        snapshot_id=ws.snapshot_id,
        classes=list(classes),
        finder_runs=finder_runs,
        candidates=runs,
        usage_totals=usage_totals,
        duration_seconds=time.monotonic() - started,
        config_echo={
            "iteration_limit": config.iteration_limit,
            "max_attempts": config.max_attempts,
            "exec_timeout": config.exec_timeout,
            "parallelism": config.parallelism,
            "nonce_policy": config.nonce_policy.value if config.nonce_policy else "per-class default",
            "probe_keys": list(config.probe_keys),
            "model": config.model_info,
        },
    )
