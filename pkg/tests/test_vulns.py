from __future__ import annotations

import random

import pytest

from tainthound.vulns import (
    ConstraintSet,
    ExploitResult,
    Finding,
    NoncePolicy,
    OracleKind,
    OracleSpec,
    StageId,
    SubmissionError,
    Verdict,
    VulnClass,
    all_classes,
    class_spec,
    to_record,
    validate_submission,
)


def test_registry_is_total_over_the_four_classes():
    assert len(all_classes()) == 4
    for vuln_class in all_classes():
        spec = class_spec(vuln_class)
        assert spec.vuln_class is vuln_class
        assert spec.description
        assert spec.exploitation_goal


def test_cwe_ids_per_class():
    assert class_spec(VulnClass.OS_COMMAND_INJECTION).cwe_ids == ("077", "078")
    assert class_spec(VulnClass.CODE_INJECTION).cwe_ids == ("094",)
    assert class_spec(VulnClass.PATH_TRAVERSAL).cwe_ids == ("022", "035")
    assert class_spec(VulnClass.PROTOTYPE_POLLUTION).cwe_ids == ("1321",)


def test_registered_oracles_match_the_published_values():
    cmd = class_spec(VulnClass.OS_COMMAND_INJECTION).oracle
    assert cmd.kind is OracleKind.SENTINEL_FILE_CREATED
    assert cmd.sentinel_path == "/tmp/os_cmd_success"

    code = class_spec(VulnClass.CODE_INJECTION).oracle
    assert code.kind is OracleKind.STDOUT_MARKER
    assert code.marker == "GLOBAL.CTF HIT"
    assert code.nonce_policy is NoncePolicy.PER_RUN_NONCE

    traversal = class_spec(VulnClass.PATH_TRAVERSAL).oracle
    assert traversal.kind is OracleKind.SENTINEL_FILE_READ
    assert traversal.sentinel_path == "/tmp/path_traversal"
    assert traversal.marker == "PATH_TRAVERSAL"

    pollution = class_spec(VulnClass.PROTOTYPE_POLLUTION).oracle
    assert pollution.kind is OracleKind.POLLUTION_PROBE
    assert pollution.marker == "PROTO_POLLUTION SUCCESS"
    assert pollution.nonce_policy is NoncePolicy.PER_RUN_NONCE


def test_exploitation_goals_contain_their_success_mechanisms_verbatim():
    assert "create the file /tmp/os_cmd_success" in class_spec(
        VulnClass.OS_COMMAND_INJECTION
    ).exploitation_goal
    assert "must call global.CTF()" in class_spec(VulnClass.CODE_INJECTION).exploitation_goal
    assert "'PATH_TRAVERSAL'" in class_spec(VulnClass.PATH_TRAVERSAL).exploitation_goal
    assert "'PROTO_POLLUTION SUCCESS'" in class_spec(
        VulnClass.PROTOTYPE_POLLUTION
    ).exploitation_goal


def test_oracle_spec_field_invariants():
    with pytest.raises(ValueError):
        OracleSpec(kind=OracleKind.SENTINEL_FILE_CREATED)
    with pytest.raises(ValueError):
        OracleSpec(kind=OracleKind.STDOUT_MARKER)
    with pytest.raises(ValueError):
        OracleSpec(kind=OracleKind.SENTINEL_FILE_READ, sentinel_path="/tmp/x")


VALID_FINDING = {
    "vuln_type": "os_command_injection",
    "file": "lib/runner.js",
    "line": 42,
    "description": "Command string built from caller input",
    "evidence": "exec(`run ${input}`)",
    "reachable_apis": ["run"],
    "confidence": 0.85,
}


def test_finder_record_with_published_format_accepted():
    finding = validate_submission(StageId.FINDER, dict(VALID_FINDING))
    assert isinstance(finding, Finding)
    assert finding.confidence == 0.85
    assert finding.reachable_apis == ("run",)


def test_confidence_out_of_range_rejected():
    raw = dict(VALID_FINDING, confidence=1.5)
    with pytest.raises(SubmissionError) as err:
        validate_submission(StageId.FINDER, raw)
    assert any("confidence" in v and "range" in v for v in err.value.violations)


def test_empty_verdict_reason_rejected():
    finding = validate_submission(StageId.FINDER, dict(VALID_FINDING))
    with pytest.raises(SubmissionError) as err:
        validate_submission(
            StageId.JUDGE,
            {"is_valid": True, "reason": "", "confidence": 0.5},
            finding=finding,
        )
    assert any(v.startswith("reason") for v in err.value.violations)


@pytest.mark.parametrize(
    "path", ["/etc/passwd", "../outside.js", "lib/../../escape.js", "C:\\temp\\x.js", ""]
)
def test_absolute_or_escaping_paths_rejected(path):
    raw = dict(VALID_FINDING, file=path)
    with pytest.raises(SubmissionError) as err:
        validate_submission(StageId.FINDER, raw)
    assert any(v.startswith("file") for v in err.value.violations)


def test_unknown_vuln_type_rejected():
    raw = dict(VALID_FINDING, vuln_type="sql_injection")
    with pytest.raises(SubmissionError) as err:
        validate_submission(StageId.FINDER, raw)
    assert any("vuln_type" in v for v in err.value.violations)


def test_all_violations_reported_together():
    raw = dict(VALID_FINDING, confidence=7.0, line=0, vuln_type="nope")
    with pytest.raises(SubmissionError) as err:
        validate_submission(StageId.FINDER, raw)
    fields = {v.split(":", 1)[0] for v in err.value.violations}
    assert {"confidence", "line", "vuln_type"} <= fields


def test_missing_required_field_named():
    raw = dict(VALID_FINDING)
    del raw["line"]
    with pytest.raises(SubmissionError) as err:
        validate_submission(StageId.FINDER, raw)
    assert any(v.startswith("line") and "missing" in v for v in err.value.violations)


def test_direct_construction_enforces_invariants():
    with pytest.raises(ValueError):
        Finding(vuln_type=VulnClass.CODE_INJECTION, file="a.js", line=1, description="d", confidence=2.0)
    with pytest.raises(ValueError):
        Finding(vuln_type=VulnClass.CODE_INJECTION, file="/abs.js", line=1, description="d", confidence=0.5)
    with pytest.raises(ValueError):
        Verdict(
            finding=Finding(vuln_type=VulnClass.CODE_INJECTION, file="a.js", line=1,
                            description="d", confidence=0.5),
            is_valid=True,
            reason="",
        )
    with pytest.raises(ValueError):
        ConstraintSet(
            finding=Finding(vuln_type=VulnClass.CODE_INJECTION, file="a.js", line=1,
                            description="d", confidence=0.5),
            constraints="",
        )


# ---------------------------------------------------------------------------
# Round-trip and rejection properties over generated records
# ---------------------------------------------------------------------------

WORDS = ["merge", "exec", "eval", "payload", "options", "handler", "config", "input"]


def random_finding(rng: random.Random) -> Finding:
    return Finding(
        vuln_type=rng.choice(list(VulnClass)),
        file="/".join(rng.choices(WORDS, k=rng.randint(1, 3))) + ".js",
        line=rng.randint(1, 9999),
        description=" ".join(rng.choices(WORDS, k=rng.randint(1, 6))),
        evidence=" ".join(rng.choices(WORDS, k=rng.randint(0, 6))),
        reachable_apis=tuple(rng.choices(WORDS, k=rng.randint(0, 3))),
        confidence=round(rng.random(), 4),
    )


def random_record(rng: random.Random):
    finding = random_finding(rng)
    kind = rng.randrange(4)
    if kind == 0:
        return finding
    if kind == 1:
        return Verdict(
            finding=finding,
            is_valid=rng.random() < 0.5,
            reason=" ".join(rng.choices(WORDS, k=rng.randint(1, 5))),
            confidence=round(rng.random(), 4),
        )
    if kind == 2:
        return ConstraintSet(
            finding=finding,
            constraints=" ".join(rng.choices(WORDS, k=rng.randint(1, 8))),
            entry_point=rng.choice([None, "run(input)"]),
            parameters=tuple(rng.choices(WORDS, k=rng.randint(0, 3))),
            payload_format=rng.choice([None, "a; b"]),
        )
    return ExploitResult(
        finding=finding,
        success=rng.random() < 0.5,
        exploit_code="require('./index')." + rng.choice(WORDS) + "()",
        execution_output=" ".join(rng.choices(WORDS, k=rng.randint(0, 4))),
        explanation=" ".join(rng.choices(WORDS, k=rng.randint(0, 4))),
        attempt_index=rng.randint(1, 3),
    )


STAGE_OF = {
    Finding: StageId.FINDER,
    Verdict: StageId.JUDGE,
    ConstraintSet: StageId.CONSTRAINTS,
    ExploitResult: StageId.EXPLOITER,
}


def test_round_trip_property_over_1000_records():
    rng = random.Random(20240811)
    for _ in range(1000):
        record = random_record(rng)
        stage = STAGE_OF[type(record)]
        kwargs = {}
        if stage is not StageId.FINDER:
            kwargs["finding"] = record.finding
        if stage is StageId.EXPLOITER:
            kwargs["attempt_index"] = record.attempt_index
        assert validate_submission(stage, to_record(record), **kwargs) == record


CORRUPTIONS = [
    ("confidence", 1.5, "confidence"),
    ("confidence", -0.1, "confidence"),
    ("confidence", None, "confidence"),
    ("file", "/abs/path.js", "file"),
    ("file", "../up.js", "file"),
    ("line", 0, "line"),
    ("line", "one", "line"),
    ("vuln_type", "xss", "vuln_type"),
    ("vuln_type", None, "vuln_type"),
    ("description", None, "description"),
]


def test_rejection_property_over_1000_corrupted_findings():
    rng = random.Random(987654)
    for _ in range(1000):
        record = to_record(random_finding(rng))
        key, bad_value, field = rng.choice(CORRUPTIONS)
        record[key] = bad_value
        with pytest.raises(SubmissionError) as err:
            validate_submission(StageId.FINDER, record)
        assert any(field in violation for violation in err.value.violations)
