"""Vulnerability classes, their registered specifications, and the typed
records that flow between pipeline stages.

Every record submitted by an agent passes through :func:`validate_submission`,
which either returns the typed record or raises :class:`SubmissionError`
listing every violated field constraint.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass
from enum import Enum
from typing import Any


class VulnClass(str, Enum):
    OS_COMMAND_INJECTION = "os_command_injection"
    CODE_INJECTION = "code_injection"
    PATH_TRAVERSAL = "path_traversal"
    PROTOTYPE_POLLUTION = "prototype_pollution"

    @classmethod
    def parse(cls, value: str) -> "VulnClass":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown vuln_type: {value!r}") from None


CWE_IDS: dict[VulnClass, tuple[str, ...]] = {
    VulnClass.OS_COMMAND_INJECTION: ("077", "078"),
    VulnClass.CODE_INJECTION: ("094",),
    VulnClass.PATH_TRAVERSAL: ("022", "035"),
    VulnClass.PROTOTYPE_POLLUTION: ("1321",),
}


class StageId(str, Enum):
    FINDER = "finder"
    JUDGE = "judge"
    CONSTRAINTS = "constraints"
    EXPLOITER = "exploiter"


class OracleKind(str, Enum):
    SENTINEL_FILE_CREATED = "sentinel_file_created"
    STDOUT_MARKER = "stdout_marker"
    SENTINEL_FILE_READ = "sentinel_file_read"
    POLLUTION_PROBE = "pollution_probe"


class NoncePolicy(str, Enum):
    FIXED = "fixed"
    PER_RUN_NONCE = "per_run_nonce"


@dataclass(frozen=True)
class OracleSpec:
    """How exploit success is decided for one vulnerability class.

    Sentinel paths default to fixed ``/tmp`` locations but a run context may
    relocate them (see :mod:`tainthound.sandbox`).  With ``per_run_nonce``
    the success token is ``<marker>::<nonce>`` where the nonce is generated
    per run and never shown to the model, so a hardcoded print of the bare
    marker can never pass.
    """

    kind: OracleKind
    sentinel_path: str | None = None
    marker: str | None = None
    nonce_policy: NoncePolicy = NoncePolicy.FIXED

    def __post_init__(self) -> None:
        if self.kind is OracleKind.SENTINEL_FILE_CREATED and not self.sentinel_path:
            raise ValueError("sentinel_file_created oracle requires sentinel_path")
        if self.kind in (OracleKind.STDOUT_MARKER, OracleKind.POLLUTION_PROBE) and not self.marker:
            raise ValueError(f"{self.kind.value} oracle requires marker")
        if self.kind is OracleKind.SENTINEL_FILE_READ and not (self.sentinel_path and self.marker):
            raise ValueError("sentinel_file_read oracle requires sentinel_path and marker")


@dataclass(frozen=True)
class VulnClassSpec:
    vuln_class: VulnClass
    cwe_ids: tuple[str, ...]
    description: str
    exploitation_goal: str
    oracle: OracleSpec


_CLASS_DESCRIPTIONS: dict[VulnClass, str] = {
    VulnClass.OS_COMMAND_INJECTION: (
        "OS Command Injection (CWE-78): The product constructs and executes OS commands\n"
        "using unsanitized input, allowing attackers to execute arbitrary system commands.\n"
        "\n"
        "Common sink APIs: exec, execSync, execFile, execFileSync, spawn, spawnSync,\n"
        "child_process module functions"
    ),
    VulnClass.CODE_INJECTION: (
        "Code Injection (CWE-94): The product dynamically generates or evaluates code\n"
        "using untrusted input, allowing attackers to inject and execute arbitrary JavaScript code."
    ),
    VulnClass.PATH_TRAVERSAL: (
        "Path Traversal (CWE-22): The product uses external input to construct a file or directory\n"
        "path but fails to properly sanitize special characters (e.g., ../), allowing access to\n"
        "unintended locations outside the intended directory."
    ),
    VulnClass.PROTOTYPE_POLLUTION: (
        "Prototype Pollution (CWE-1321): attacker-controlled keys or paths are used in object writes or\n"
        "merge/copy operations, causing a shared prototype (often Object.prototype) to be modified and\n"
        "affecting subsequently created objects.\n"
        "\n"
        "Indicators include dynamic property access (obj[key]), merge/copy utilities, recursive assignment\n"
        "patterns, and path-based setters. The vulnerable code may not explicitly reference '__proto__' or\n"
        "'constructor.prototype'."
    ),
}

_EXPLOITATION_GOALS: dict[VulnClass, str] = {
    VulnClass.OS_COMMAND_INJECTION: (
        "Craft a payload that injects OS commands (e.g., using ; || && or backticks).\n"
        "The exploit should create the file /tmp/os_cmd_success to prove arbitrary command execution.\n"
        "Example: `; touch /tmp/os_cmd_success` or `$(touch /tmp/os_cmd_success)`"
    ),
    VulnClass.CODE_INJECTION: (
        "Craft a payload that injects JavaScript code into eval(), Function(), vm.runInNewContext(),\n"
        "or similar APIs. The exploit harness defines global.CTF = () => console.log('GLOBAL.CTF HIT').\n"
        "Your malicious payload must call global.CTF() so that the marker appears in STDOUT, proving\n"
        "arbitrary code execution without relying on filesystem writes."
    ),
    VulnClass.PATH_TRAVERSAL: (
        "Craft a payload using ../ sequences to escape the intended directory and read /tmp/path_traversal.\n"
        "The harness writes the sentinel string 'PATH_TRAVERSAL' into that file ahead of time.\n"
        "Use the vulnerability to read it and console.log the file contents so STDOUT contains the marker."
    ),
    VulnClass.PROTOTYPE_POLLUTION: (
        "Goal: trigger prototype pollution so that a newly created object inherits attacker-controlled data.\n"
        "\n"
        "Use the package's public API as intended (e.g., merge, copy, set, or path-based helpers).\n"
        "The attacker controls input values such as objects, keys, or paths.\n"
        "\n"
        "You may use payloads such as:\n"
        "- objects containing prototype-related keys\n"
        "- dotted paths (e.g., '__proto__.polluted', 'constructor.prototype.polluted')\n"
        "- arrays of path segments if supported by the API\n"
        "\n"
        "Do NOT use unrealistic techniques such as Object.defineProperty, Object.setPrototypeOf, or\n"
        "direct writes to Object.prototype.\n"
        "\n"
        "IMPORTANT:\n"
        "- Do NOT try to manually check for success.\n"
        "- The JavaScript run tool automatically probes, and if pollution occurred it will emit\n"
        "'PROTO_POLLUTION SUCCESS' on its own.\n"
        "- Do NOT print or hardcode the success token."
    ),
}

_REGISTRY: dict[VulnClass, VulnClassSpec] = {
    VulnClass.OS_COMMAND_INJECTION: VulnClassSpec(
        vuln_class=VulnClass.OS_COMMAND_INJECTION,
        cwe_ids=CWE_IDS[VulnClass.OS_COMMAND_INJECTION],
        description=_CLASS_DESCRIPTIONS[VulnClass.OS_COMMAND_INJECTION],
        exploitation_goal=_EXPLOITATION_GOALS[VulnClass.OS_COMMAND_INJECTION],
        oracle=OracleSpec(
            kind=OracleKind.SENTINEL_FILE_CREATED,
            sentinel_path="/tmp/os_cmd_success",
            nonce_policy=NoncePolicy.FIXED,
        ),
    ),
    VulnClass.CODE_INJECTION: VulnClassSpec(
        vuln_class=VulnClass.CODE_INJECTION,
        cwe_ids=CWE_IDS[VulnClass.CODE_INJECTION],
        description=_CLASS_DESCRIPTIONS[VulnClass.CODE_INJECTION],
        exploitation_goal=_EXPLOITATION_GOALS[VulnClass.CODE_INJECTION],
        oracle=OracleSpec(
            kind=OracleKind.STDOUT_MARKER,
            marker="GLOBAL.CTF HIT",
            nonce_policy=NoncePolicy.PER_RUN_NONCE,
        ),
    ),
    VulnClass.PATH_TRAVERSAL: VulnClassSpec(
        vuln_class=VulnClass.PATH_TRAVERSAL,
        cwe_ids=CWE_IDS[VulnClass.PATH_TRAVERSAL],
        description=_CLASS_DESCRIPTIONS[VulnClass.PATH_TRAVERSAL],
        exploitation_goal=_EXPLOITATION_GOALS[VulnClass.PATH_TRAVERSAL],
        oracle=OracleSpec(
            kind=OracleKind.SENTINEL_FILE_READ,
            sentinel_path="/tmp/path_traversal",
            marker="PATH_TRAVERSAL",
            nonce_policy=NoncePolicy.FIXED,
        ),
    ),
    VulnClass.PROTOTYPE_POLLUTION: VulnClassSpec(
        vuln_class=VulnClass.PROTOTYPE_POLLUTION,
        cwe_ids=CWE_IDS[VulnClass.PROTOTYPE_POLLUTION],
        description=_CLASS_DESCRIPTIONS[VulnClass.PROTOTYPE_POLLUTION],
        exploitation_goal=_EXPLOITATION_GOALS[VulnClass.PROTOTYPE_POLLUTION],
        oracle=OracleSpec(
            kind=OracleKind.POLLUTION_PROBE,
            marker="PROTO_POLLUTION SUCCESS",
            nonce_policy=NoncePolicy.PER_RUN_NONCE,
        ),
    ),
}


def class_spec(vuln_class: VulnClass) -> VulnClassSpec:
    """Return the immutable registered spec for one of the four classes."""
    return _REGISTRY[VulnClass(vuln_class)]


def all_classes() -> tuple[VulnClass, ...]:
    return tuple(VulnClass)


# ---------------------------------------------------------------------------
# Typed inter-stage records
# ---------------------------------------------------------------------------


class SubmissionError(ValueError):
    """A submitted record violated one or more field constraints.

    ``violations`` lists every violated constraint, each naming its field.
    """

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _is_relative_path(path: str) -> bool:
    if not path or path.startswith(("/", "\\")):
        return False
    if len(path) >= 2 and path[1] == ":" and path[0].isalpha():
        return False
    parts = posixpath.normpath(path.replace("\\", "/")).split("/")
    return ".." not in parts


@dataclass(frozen=True)
class Finding:
    vuln_type: VulnClass
    file: str
    line: int
    description: str
    evidence: str = ""
    reachable_apis: tuple[str, ...] = ()
    confidence: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence out of range [0, 1]")
        if not _is_relative_path(self.file):
            raise ValueError("file must be a workspace-relative path")
        if self.line < 1:
            raise ValueError("line must be >= 1")


@dataclass(frozen=True)
class Verdict:
    finding: Finding
    is_valid: bool
    reason: str
    confidence: float = 0.0

    def __post_init__(self) -> None:
        if not self.reason:
            raise ValueError("reason required")


@dataclass(frozen=True)
class ConstraintSet:
    finding: Finding
    constraints: str
    entry_point: str | None = None
    parameters: tuple[str, ...] = ()
    payload_format: str | None = None

    def __post_init__(self) -> None:
        if not self.constraints:
            raise ValueError("constraints required")


@dataclass(frozen=True)
class ExploitResult:
    finding: Finding
    success: bool
    exploit_code: str
    execution_output: str = ""
    explanation: str = ""
    attempt_index: int = 1

    def __post_init__(self) -> None:
        if self.attempt_index < 1:
            raise ValueError("attempt_index must be >= 1")


TypedRecord = Finding | Verdict | ConstraintSet | ExploitResult


def _check_str(raw: dict[str, Any], key: str, errors: list[str], *, required: bool,
               nonempty: bool = False) -> str | None:
    if key not in raw or raw[key] is None:
        if required:
            errors.append(f"{key}: required field missing")
        return None
    value = raw[key]
    if not isinstance(value, str):
        errors.append(f"{key}: expected string, got {type(value).__name__}")
        return None
    if nonempty and not value.strip():
        errors.append(f"{key}: required")
        return None
    return value


def _check_confidence(raw: dict[str, Any], errors: list[str], *, required: bool) -> float:
    if "confidence" not in raw or raw["confidence"] is None:
        if required:
            errors.append("confidence: required field missing")
        return 0.0
    value = raw["confidence"]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append("confidence: expected number")
        return 0.0
    value = float(value)
    if not 0.0 <= value <= 1.0:
        errors.append("confidence: out of range [0, 1]")
        return 0.0
    return value


def _check_bool(raw: dict[str, Any], key: str, errors: list[str]) -> bool:
    if key not in raw or raw[key] is None:
        errors.append(f"{key}: required field missing")
        return False
    value = raw[key]
    if not isinstance(value, bool):
        errors.append(f"{key}: expected boolean, got {type(value).__name__}")
        return False
    return value


def _check_str_list(raw: dict[str, Any], key: str, errors: list[str]) -> tuple[str, ...]:
    value = raw.get(key)
    if value is None:
        return ()
    if isinstance(value, str):
        return (value,)
    if not isinstance(value, (list, tuple)):
        errors.append(f"{key}: expected list of strings")
        return ()
    out: list[str] = []
    for item in value:
        if not isinstance(item, str):
            errors.append(f"{key}: expected list of strings")
            return ()
        out.append(item)
    return tuple(out)


def _validate_finding(raw: dict[str, Any]) -> Finding:
    errors: list[str] = []
    vuln_type: VulnClass | None = None
    raw_type = _check_str(raw, "vuln_type", errors, required=True)
    if raw_type is not None:
        try:
            vuln_type = VulnClass.parse(raw_type)
        except ValueError:
            errors.append(f"vuln_type: unknown vulnerability class {raw_type!r}")
    file = _check_str(raw, "file", errors, required=True)
    if file is not None and not _is_relative_path(file):
        errors.append("file: must be a workspace-relative path (no absolute paths or '..')")
        file = None
    line = raw.get("line")
    if line is None:
        errors.append("line: required field missing")
    elif isinstance(line, bool) or not isinstance(line, int):
        errors.append("line: expected integer")
        line = None
    elif line < 1:
        errors.append("line: must be >= 1")
        line = None
    description = _check_str(raw, "description", errors, required=True)
    evidence = _check_str(raw, "evidence", errors, required=False) or ""
    reachable = _check_str_list(raw, "reachable_apis", errors)
    confidence = _check_confidence(raw, errors, required=True)
    if errors:
        raise SubmissionError(errors)
    assert vuln_type is not None and file is not None and line is not None
    return Finding(
        vuln_type=vuln_type,
        file=file,
        line=line,
        description=description or "",
        evidence=evidence,
        reachable_apis=reachable,
        confidence=confidence,
    )


def _validate_verdict(raw: dict[str, Any], finding: Finding) -> Verdict:
    errors: list[str] = []
    is_valid = _check_bool(raw, "is_valid", errors)
    reason = _check_str(raw, "reason", errors, required=True, nonempty=True)
    confidence = _check_confidence(raw, errors, required=True)
    if errors:
        raise SubmissionError(errors)
    return Verdict(finding=finding, is_valid=is_valid, reason=reason or "", confidence=confidence)


def _validate_constraints(raw: dict[str, Any], finding: Finding) -> ConstraintSet:
    errors: list[str] = []
    constraints = _check_str(raw, "constraints", errors, required=True, nonempty=True)
    entry_point = _check_str(raw, "entry_point", errors, required=False)
    parameters = _check_str_list(raw, "parameters", errors)
    payload_format = _check_str(raw, "payload_format", errors, required=False)
    if errors:
        raise SubmissionError(errors)
    return ConstraintSet(
        finding=finding,
        constraints=constraints or "",
        entry_point=entry_point,
        parameters=parameters,
        payload_format=payload_format,
    )


def _validate_exploit_result(raw: dict[str, Any], finding: Finding, attempt_index: int) -> ExploitResult:
    errors: list[str] = []
    success = _check_bool(raw, "success", errors)
    exploit_code = _check_str(raw, "exploit_code", errors, required=True)
    execution_output = _check_str(raw, "execution_output", errors, required=False) or ""
    explanation = _check_str(raw, "explanation", errors, required=False) or ""
    if errors:
        raise SubmissionError(errors)
    return ExploitResult(
        finding=finding,
        success=success,
        exploit_code=exploit_code or "",
        execution_output=execution_output,
        explanation=explanation,
        attempt_index=attempt_index,
    )


def validate_submission(
    stage: StageId,
    raw: dict[str, Any],
    *,
    finding: Finding | None = None,
    attempt_index: int = 1,
) -> TypedRecord:
    """Validate one raw tool-call record for ``stage``.

    Returns the typed record, or raises :class:`SubmissionError` listing every
    violated field constraint.  The Judge/Constraints/Exploiter record kinds
    carry the candidate finding as context (the wire format stays flat), so
    ``finding`` is required for those stages.
    """
    if not isinstance(raw, dict):
        raise SubmissionError(["record: expected a key/value object"])
    stage = StageId(stage)
    if stage is StageId.FINDER:
        return _validate_finding(raw)
    if finding is None:
        raise SubmissionError(["finding: stage context finding missing"])
    if stage is StageId.JUDGE:
        return _validate_verdict(raw, finding)
    if stage is StageId.CONSTRAINTS:
        return _validate_constraints(raw, finding)
    return _validate_exploit_result(raw, finding, attempt_index)


def to_record(record: TypedRecord) -> dict[str, Any]:
    """Canonical flat serialization used in reports and transcripts."""
    if isinstance(record, Finding):
        return {
            "vuln_type": record.vuln_type.value,
            "file": record.file,
            "line": record.line,
            "description": record.description,
            "evidence": record.evidence,
            "reachable_apis": list(record.reachable_apis),
            "confidence": record.confidence,
        }
    if isinstance(record, Verdict):
        return {
            "is_valid": record.is_valid,
            "reason": record.reason,
            "confidence": record.confidence,
        }
    if isinstance(record, ConstraintSet):
        return {
            "constraints": record.constraints,
            "entry_point": record.entry_point,
            "parameters": list(record.parameters),
            "payload_format": record.payload_format,
        }
    if isinstance(record, ExploitResult):
        return {
            "success": record.success,
            "exploit_code": record.exploit_code,
            "execution_output": record.execution_output,
            "explanation": record.explanation,
        }
    raise TypeError(f"not a typed record: {type(record).__name__}")


STAGE_FOR_RECORD: dict[type, StageId] = {
    Finding: StageId.FINDER,
    Verdict: StageId.JUDGE,
    ConstraintSet: StageId.CONSTRAINTS,
    ExploitResult: StageId.EXPLOITER,
}
