"""Stage prompt templates and rendering.

Placeholders use the ``<NAME>`` convention and are substituted in a single
pass; rendering fails loudly when a template placeholder has no binding.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .vulns import ConstraintSet, Finding, StageId, VulnClass, class_spec


class PromptRenderError(KeyError):
    pass


_PLACEHOLDER_RE = re.compile(r"<([A-Z][A-Z0-9_]*)>")


@dataclass(frozen=True)
class PromptTemplate:
    stage: StageId
    role: str  # "system" | "user"
    body: str

    def placeholders(self) -> tuple[str, ...]:
        seen: list[str] = []
        for name in _PLACEHOLDER_RE.findall(self.body):
            if name not in seen:
                seen.append(name)
        return tuple(seen)


def render_prompt(template: PromptTemplate | str, bindings: dict[str, str]) -> str:
    body = template.body if isinstance(template, PromptTemplate) else template

    missing: list[str] = []

    def substitute(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in bindings:
            missing.append(name)
            return match.group(0)
        return str(bindings[name])

    rendered = _PLACEHOLDER_RE.sub(substitute, body)
    if missing:
        raise PromptRenderError(f"unbound placeholder(s): {', '.join(sorted(set(missing)))}")
    return rendered


FINDER_SYSTEM = PromptTemplate(StageId.FINDER, "system", """\
You are an expert security researcher specializing in Node.js vulnerabilities.

Your task is to find instances of <VULN_TYPE> vulnerabilities in the project at: <PROJECT_PATH>

<VULN_DESCRIPTION>

WORKFLOW:
1. Start by getting the file tree or listing files to understand the structure
2. Search for patterns related to <VULN_TYPE>
3. Read suspicious files to analyze the code
4. Identify exact locations (file + line number) of vulnerabilities
5. Determine which public APIs can reach these vulnerabilities
6. Call submit_findings(findings=[...]) with structured arguments (NO JSON STRINGS). You can call this multiple times as you discover items.
7. When you are completely done adding findings, call finish(summary="...optional...") to end the run.

FINDINGS FORMAT (submit_findings arguments):
- findings: [
        {
            "vuln_type": "<VULN_TYPE>",
            "file": "relative/path/to/file.js",
            "line": 42,
            "description": "Brief description",
            "evidence": "Code snippet showing the issue",
            "reachable_apis": ["api1", "api2"],
            "confidence": 0.85
        }
    ]

Be thorough and precise. Focus on actionable evidence but err on the side of inclusion: if a spot looks plausibly exploitable yet you lack full confirmation, include it with a lower confidence score and clearly state any assumptions. When you have submitted all findings, call finish to end the run.
""")

FINDER_USER = PromptTemplate(StageId.FINDER, "user", """\
Find all <VULN_TYPE> vulnerabilities in the project. Use tools to analyze the code, then submit your findings.
""")

JUDGE_SYSTEM = PromptTemplate(StageId.JUDGE, "system", """\
You are an expert security code reviewer specializing in Node.js vulnerabilities.

Your task is to validate whether a reported <VULN_TYPE> vulnerability is actually exploitable.

CURRENT DIRECTORY: <PROJECT_PATH>
All file paths are relative to this directory. Call get_file_tree() first to see the structure if needed.

ANALYSIS CHECKLIST:
1. Read the code at the reported location
2. Trace data flow to see if user input can reach the vulnerable sink
3. Check for any input validation or sanitization
4. Determine if the vulnerability is actually exploitable
5. Submit your verdict with detailed reasoning

IMPORTANT - LIBRARY/PACKAGE ATTACK SURFACE:
- When analyzing npm packages/libraries, EXPORTED functions (exports.*, module.exports) are the attack surface
- If a vulnerable function is exported (even with no callers in the codebase), it IS reachable by external code
- Focus on: Can user-controlled input reach the sink IF the exported function is called?
- Do NOT search for external callers - the export itself makes it callable

VERDICT FORMAT (submit_verdict arguments):
- is_valid: true/false
- reason: "Detailed explanation with evidence"
- confidence: 0.0-1.0

Call submit_verdict(is_valid=true/false, reason="...", confidence=0.0-1.0). Do NOT wrap the arguments in JSON strings.

Be conservative - only mark as valid if truly exploitable.
""")

JUDGE_USER = PromptTemplate(StageId.JUDGE, "user", """\
Validate this vulnerability finding:

Type: <VULN_TYPE>
File: <FILE>
Line: <LINE>
Description: <DESCRIPTION>
Evidence: <EVIDENCE>
Reachable APIs: <REACHABLE_APIS>
Confidence: <CONFIDENCE>

Use tools to analyze the code and submit your verdict.
""")

CONSTRAINTS_SYSTEM = PromptTemplate(StageId.CONSTRAINTS, "system", """\
You are an expert security researcher analyzing how to exploit vulnerabilities.

Your task is to analyze a <VULN_TYPE> vulnerability and determine the constraints for exploitation.

ANALYSIS OBJECTIVES:
1. Identify the entry point (URL, function, API)
2. Determine parameter names and how to provide them
3. Understand required format/structure of the payload
4. Identify any validation to bypass
5. Define success criteria for the exploit

CONSTRAINTS FORMAT (submit_constraints arguments):
- constraints: "Detailed natural language description of exploitation requirements" (REQUIRED)
- entry_point: "How to reach the vulnerability"
- parameters: ["param1", "param2"]
- payload_format: "Required format for the payload"

Be specific and actionable - the exploit agent will use this.
""")

CONSTRAINTS_USER = PromptTemplate(StageId.CONSTRAINTS, "user", """\
Generate exploitation constraints for:

Type: <VULN_TYPE>
File: <FILE>
Line: <LINE>
Description: <DESCRIPTION>
Evidence: <EVIDENCE>

Analyze the code and submit detailed constraints.
""")

EXPLOITER_SYSTEM = PromptTemplate(StageId.EXPLOITER, "system", """\
You are an expert security researcher crafting exploits for <VULN_TYPE>.

Your task is to create a working exploit based on the provided constraints.

EXPLOIT GOAL:
<EXPLOIT_INSTRUCTIONS_FROM_VULN_DEFINITION>

Dependency setup: Install any missing dependencies in the package directory before running your exploit (use run_shell_command if you need npm/yarn).

EXPLOIT WORKFLOW:
1. Read the vulnerable code to understand it
2. Craft exploit code that imports the module: const mod = require('./index');
3. Execute the exploit using execute_javascript
   - Only if you truly need a background service (e.g., start a server), use start_persistent_process, inspect with check_persistent_process, and always call kill_persistent_process when finished.
4. Verify success (check file creation, output, etc.)
5. If import fails, check the exact filename and try again
6. Submit your result with submit_exploit_result(success=..., exploit_code="...", execution_output="...", explanation="...")

Be creative and persistent. Learn from failures.
""")

EXPLOITER_USER = PromptTemplate(StageId.EXPLOITER, "user", """\
Create and execute an exploit for:

Type: <VULN_TYPE>
File: <FILE>
Line: <LINE>

Constraints:
<CONSTRAINTS_TEXT>
""")

# Appended to EXPLOITER_USER on attempts 2-3 so the agent can learn from the
# previous failure without sharing conversational context across attempts.
EXPLOITER_RETRY_ADDENDUM = PromptTemplate(StageId.EXPLOITER, "user", """\

PREVIOUS ATTEMPT (failed - learn from it):
Exploit code:
<PREVIOUS_EXPLOIT_CODE>
Execution output:
<PREVIOUS_EXECUTION_OUTPUT>
""")

EXPLOITER_USER_FOOTER = "\nCreate a working exploit and submit the result.\n"


def exploitation_goal(vuln_class: VulnClass, sentinel_path_overrides: dict[str, str] | None = None) -> str:
    """The class goal text, rewritten to point at relocated sentinel paths."""
    goal = class_spec(vuln_class).exploitation_goal
    for default_path, actual_path in (sentinel_path_overrides or {}).items():
        goal = goal.replace(default_path, actual_path)
    return goal


def finder_prompts(vuln_class: VulnClass, project_path: str) -> tuple[str, str]:
    bindings = {
        "VULN_TYPE": vuln_class.value,
        "PROJECT_PATH": project_path,
        "VULN_DESCRIPTION": class_spec(vuln_class).description,
    }
    return render_prompt(FINDER_SYSTEM, bindings), render_prompt(FINDER_USER, bindings)


def _finding_bindings(finding: Finding) -> dict[str, str]:
    return {
        "VULN_TYPE": finding.vuln_type.value,
        "FILE": finding.file,
        "LINE": str(finding.line),
        "DESCRIPTION": finding.description,
        "EVIDENCE": finding.evidence,
        "REACHABLE_APIS": ", ".join(finding.reachable_apis),
        "CONFIDENCE": f"{finding.confidence:g}",
    }


def judge_prompts(finding: Finding, project_path: str) -> tuple[str, str]:
    bindings = _finding_bindings(finding)
    bindings["PROJECT_PATH"] = project_path
    return render_prompt(JUDGE_SYSTEM, bindings), render_prompt(JUDGE_USER, bindings)


def constraints_prompts(finding: Finding, project_path: str) -> tuple[str, str]:
    bindings = _finding_bindings(finding)
    bindings["PROJECT_PATH"] = project_path
    return render_prompt(CONSTRAINTS_SYSTEM, bindings), render_prompt(CONSTRAINTS_USER, bindings)


def exploiter_prompts(
    constraints: ConstraintSet,
    *,
    sentinel_path_overrides: dict[str, str] | None = None,
    previous_attempt: tuple[str, str] | None = None,
) -> tuple[str, str]:
    finding = constraints.finding
    goal = exploitation_goal(finding.vuln_type, sentinel_path_overrides)
    system = render_prompt(
        EXPLOITER_SYSTEM,
        {
            "VULN_TYPE": finding.vuln_type.value,
            "EXPLOIT_INSTRUCTIONS_FROM_VULN_DEFINITION": goal,
        },
    )
    constraints_text = constraints.constraints
    extras = []
    if constraints.entry_point:
        extras.append(f"Entry point: {constraints.entry_point}")
    if constraints.parameters:
        extras.append(f"Parameters: {', '.join(constraints.parameters)}")
    if constraints.payload_format:
        extras.append(f"Payload format: {constraints.payload_format}")
    if extras:
        constraints_text = constraints_text + "\n" + "\n".join(extras)
    user = render_prompt(
        EXPLOITER_USER,
        {
            "VULN_TYPE": finding.vuln_type.value,
            "FILE": finding.file,
            "LINE": str(finding.line),
            "CONSTRAINTS_TEXT": constraints_text,
        },
    )
    if previous_attempt is not None:
        prev_code, prev_output = previous_attempt
        user += render_prompt(
            EXPLOITER_RETRY_ADDENDUM,
            {
                "PREVIOUS_EXPLOIT_CODE": prev_code,
                "PREVIOUS_EXECUTION_OUTPUT": prev_output,
            },
        )
    return system, user + EXPLOITER_USER_FOOTER
