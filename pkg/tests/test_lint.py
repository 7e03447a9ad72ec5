from __future__ import annotations

from pathlib import Path

import pytest

import tainthound.lint as lint_mod
from fixtures_data import CASES
from tainthound.lint import LintRule, Severity, is_validated, lint_poc
from tainthound.sandbox import ExecutionRecord
from tainthound.vulns import VulnClass
from tainthound.workspace import TargetSpec, resolve_target

from conftest import FIXTURES_DIR

SNIPPET_DIR = Path(__file__).parent / "data" / "lint"

SEEDED = [
    ("fp1_a.js", LintRule.FP1),
    ("fp1_b.js", LintRule.FP1),
    ("fp2_a.js", LintRule.FP2),
    ("fp2_b.js", LintRule.FP2),
    ("fp3_a.js", LintRule.FP3),
    ("fp3_b.js", LintRule.FP3),
    ("fp4_a.js", LintRule.FP4),
    ("fp4_b.js", LintRule.FP4),
    ("fp5_a.js", LintRule.FP5),
    ("fp5_b.js", LintRule.FP5),
]


def success_record() -> ExecutionRecord:
    return ExecutionRecord(stdout="", stderr="", exit_code=0, timed_out=False,
                           duration=0.1, oracle_verdict="success")


@pytest.mark.parametrize("snippet,rule", SEEDED, ids=[s for s, _ in SEEDED])
def test_seeded_violation_triggers_its_rule(snippet, rule, simple_ws):
    code = (SNIPPET_DIR / snippet).read_text(encoding="utf-8")
    findings = lint_poc(code, simple_ws, success_record())
    assert rule in {f.rule for f in findings}, [f.to_dict() for f in findings]


@pytest.mark.parametrize("vuln_class", list(VulnClass))
def test_canonical_exploits_are_clean(vuln_class, tmp_path):
    case = CASES[vuln_class]
    ws = resolve_target(TargetSpec(local_path=FIXTURES_DIR / case.fixture),
                        cache_dir=tmp_path / "cache")
    findings = lint_poc(case.exploit_code, ws, success_record())
    assert findings == [], [f.to_dict() for f in findings]


def test_findings_cite_triggering_spans(simple_ws):
    code = (SNIPPET_DIR / "fp4_a.js").read_text(encoding="utf-8")
    findings = lint_poc(code, simple_ws, success_record())
    fp4 = [f for f in findings if f.rule is LintRule.FP4]
    assert fp4
    line = fp4[0].location[0]
    assert "Object.prototype" in code.splitlines()[line - 1]
    assert fp4[0].snippet


def test_determinism(simple_ws):
    code = (SNIPPET_DIR / "fp1_a.js").read_text(encoding="utf-8")
    first = lint_poc(code, simple_ws, success_record())
    second = lint_poc(code, simple_ws, success_record())
    assert first == second


def test_default_severity_matrix(simple_ws):
    reject_rules = set()
    warn_rules = set()
    for snippet, rule in SEEDED:
        code = (SNIPPET_DIR / snippet).read_text(encoding="utf-8")
        for finding in lint_poc(code, simple_ws, success_record()):
            if finding.severity is Severity.AUTO_REJECT:
                reject_rules.add(finding.rule)
            else:
                warn_rules.add(finding.rule)
    assert {LintRule.FP3, LintRule.FP4} <= reject_rules
    assert {LintRule.FP1, LintRule.FP2, LintRule.FP5} <= warn_rules


def test_severity_matrix_configurable(simple_ws):
    code = (SNIPPET_DIR / "fp1_a.js").read_text(encoding="utf-8")
    findings = lint_poc(code, simple_ws, success_record(),
                        severity={LintRule.FP1: Severity.AUTO_REJECT})
    assert any(f.rule is LintRule.FP1 and f.severity is Severity.AUTO_REJECT for f in findings)


def test_marker_text_inside_strings_is_ignored(simple_ws):
    code = (
        "const mod = require('./a.js');\n"
        "mod.run('global.CTF = bogus; Object.prototype');\n"
    )
    findings = lint_poc(code, simple_ws, success_record())
    assert findings == [], [f.to_dict() for f in findings]


def test_string_payload_with_proto_key_is_clean(simple_ws):
    code = (
        "const mod = require('./a.js');\n"
        "mod.run(JSON.parse('{\"constructor\": {\"prototype\": {\"x\": 1}}}'));\n"
    )
    assert lint_poc(code, simple_ws, success_record()) == []


def test_object_prototype_read_in_callee_position_not_flagged(simple_ws):
    # calling a method *on* Object.prototype is not passing it as an argument
    code = (
        "const mod = require('./a.js');\n"
        "mod.run('x');\n"
        "const own = Object.prototype.hasOwnProperty.call({}, 'k');\n"
    )
    findings = lint_poc(code, simple_ws, success_record())
    assert LintRule.FP4 not in {f.rule for f in findings}


def test_import_statement_form_detected(simple_ws):
    code = "import helper from './lib/secret-internal.js';\nhelper();\n"
    findings = lint_poc(code, simple_ws, success_record())
    assert LintRule.FP3 in {f.rule for f in findings}


def test_unanalyzable_input_yields_single_warn_finding(simple_ws, monkeypatch):
    def explode(code):
        raise RuntimeError("lexer exploded")

    monkeypatch.setattr(lint_mod, "_lex_views", explode)
    findings = lint_poc("const x = 1;", simple_ws, success_record())
    assert len(findings) == 1
    assert findings[0].rule is LintRule.UNANALYZABLE
    assert findings[0].severity is Severity.WARN


def test_is_validated_combines_oracle_and_lint(simple_ws):
    clean: list = []
    assert is_validated(success_record(), clean) is True
    failed = ExecutionRecord(stdout="", stderr="", exit_code=1, timed_out=False,
                             duration=0.1, oracle_verdict="failure")
    assert is_validated(failed, clean) is False
    rejecting = lint_poc((SNIPPET_DIR / "fp4_a.js").read_text(encoding="utf-8"),
                         simple_ws, success_record())
    assert is_validated(success_record(), rejecting) is False
