"""Heuristic screen for invalid proof-of-concept exploits.

Flags the five recurring false-positive patterns on oracle-confirmed
exploits: FP1 redefines built-ins to emulate an environment, FP2 pre-creates
payload-named files or mutates the environment table, FP3 bypasses the
package's public entry points, FP4 passes Object/Object.prototype as an
argument, FP5 drives request-handler internals with synthetic requests.

Detection is lexical (token and import-specifier analysis over code with
strings and comments blanked), not data-flow: cheap, deterministic, and
documented as an approximation.  Findings annotate the report; they never
overturn the oracle verdict.  A separate ``validated`` flag is oracle
success AND the absence of auto-reject findings.
"""

from __future__ import annotations

import posixpath
import re
from dataclasses import dataclass
from enum import Enum

from .sandbox import ExecutionRecord
from .workspace import Workspace

CORE_MODULES = frozenset({
    "child_process", "fs", "os", "path", "vm", "crypto", "http", "https",
    "net", "util", "module", "url", "zlib", "dns", "tls",
})

FS_WRITE_CALLS = ("writeFile", "writeFileSync", "appendFile", "appendFileSync",
                  "mkdir", "mkdirSync", "openSync")


class LintRule(str, Enum):
    FP1 = "FP1"
    FP2 = "FP2"
    FP3 = "FP3"
    FP4 = "FP4"
    FP5 = "FP5"
    UNANALYZABLE = "unanalyzable"


class Severity(str, Enum):
    AUTO_REJECT = "auto_reject"
    WARN = "warn"


# FP3/FP4 are mechanically decidable and default to auto-reject; the other
# three needed human judgment in practice, so they default to warnings.
DEFAULT_SEVERITY: dict[LintRule, Severity] = {
    LintRule.FP1: Severity.WARN,
    LintRule.FP2: Severity.WARN,
    LintRule.FP3: Severity.AUTO_REJECT,
    LintRule.FP4: Severity.AUTO_REJECT,
    LintRule.FP5: Severity.WARN,
    LintRule.UNANALYZABLE: Severity.WARN,
}


@dataclass(frozen=True)
class LintFinding:
    rule: LintRule
    severity: Severity
    location: tuple[int, int]  # inclusive 1-indexed line span
    rationale: str
    snippet: str = ""

    def to_dict(self) -> dict:
        return {
            "rule": self.rule.value,
            "severity": self.severity.value,
            "location": list(self.location),
            "rationale": self.rationale,
            "snippet": self.snippet,
        }


def _blank_span(chars: list[str], start: int, end: int) -> None:
    for i in range(start, end):
        if chars[i] != "\n":
            chars[i] = " "


def _lex_views(code: str) -> tuple[str, str]:
    """Return (strings-and-comments blanked, comments-only blanked).

    Newlines are preserved so char offsets map to the original lines.
    JS regex literals are not modeled; precision limits are documented.
    """
    no_strings = list(code)
    no_comments = list(code)
    i = 0
    n = len(code)
    while i < n:
        ch = code[i]
        if ch in ("'", '"', "`"):
            quote = ch
            j = i + 1
            while j < n:
                if code[j] == "\\":
                    j += 2
                    continue
                if code[j] == quote:
                    break
                j += 1
            _blank_span(no_strings, i + 1, min(j, n))
            i = j + 1
        elif ch == "/" and i + 1 < n and code[i + 1] == "/":
            j = code.find("\n", i)
            j = n if j == -1 else j
            _blank_span(no_strings, i, j)
            _blank_span(no_comments, i, j)
            i = j
        elif ch == "/" and i + 1 < n and code[i + 1] == "*":
            j = code.find("*/", i + 2)
            j = n if j == -1 else j + 2
            _blank_span(no_strings, i, j)
            _blank_span(no_comments, i, j)
            i = j
        else:
            i += 1
    return "".join(no_strings), "".join(no_comments)


_SPEC_OPENER_RE = re.compile(r"(?:require\s*\(\s*|\bfrom\s+)(['\"])")


def _restore_import_specifiers(code: str, no_strings: str) -> str:
    """Blank-string view with require()/import specifier contents restored.

    The lexer preserves offsets, so specifier text can be copied back from
    the original code; every other string stays blanked, which keeps module
    names visible without letting payload strings trigger rules.
    """
    chars = list(no_strings)
    for match in _SPEC_OPENER_RE.finditer(no_strings):
        quote = match.group(1)
        start = match.end()
        end = no_strings.find(quote, start)
        if end == -1:
            continue
        chars[start:end] = code[start:end]
    return "".join(chars)


def _line_of(code: str, index: int) -> int:
    return code.count("\n", 0, index) + 1


def _snippet_at(code: str, index: int, width: int = 80) -> str:
    line_start = code.rfind("\n", 0, index) + 1
    line_end = code.find("\n", index)
    line_end = len(code) if line_end == -1 else line_end
    return code[line_start:line_end].strip()[:width]


_REQUIRE_RE = re.compile(r"require\s*\(\s*['\"]([^'\"]+)['\"]\s*\)")
_IMPORT_RE = re.compile(r"(?:^|\n)\s*import\b[^;\n]*?from\s*['\"]([^'\"]+)['\"]", re.MULTILINE)
_ALIAS_RE = re.compile(
    r"(?:const|let|var)\s+(\w+)\s*=\s*require\s*\(\s*['\"](" + "|".join(sorted(CORE_MODULES)) + r")['\"]\s*\)"
)
_DESTRUCTURE_RE = re.compile(
    r"(?:const|let|var)\s*\{([^}]*)\}\s*=\s*require\s*\(\s*['\"](" + "|".join(sorted(CORE_MODULES)) + r")['\"]\s*\)"
)


def _normalize_rel(path: str) -> str:
    path = path.replace("\\", "/")
    while path.startswith("./"):
        path = path[2:]
    return posixpath.normpath(path) if path else path


def _exports_paths(exports) -> list[str]:
    if exports is None:
        return []
    if isinstance(exports, str):
        return [_normalize_rel(exports)]
    if isinstance(exports, dict):
        out: list[str] = []
        for value in exports.values():
            out.extend(_exports_paths(value))
        return out
    return []


def _public_entries(ws: Workspace) -> set[str]:
    entries = {_normalize_rel(ws.manifest.main or "index.js"), "package.json"}
    entries.update(_exports_paths(ws.manifest.exports))
    return entries


def _resolves_public(specifier: str, public: set[str]) -> bool:
    rel = _normalize_rel(specifier)
    if rel in (".", ""):
        return True
    candidates = {rel, rel + ".js", rel + ".json", rel + "/index.js",
                  rel + ".cjs", rel + ".mjs"}
    return bool(candidates & public)


class _Collector:
    def __init__(self, code: str, severity: dict[LintRule, Severity]):
        self.code = code
        self.severity = severity
        self.findings: list[LintFinding] = []

    def add(self, rule: LintRule, index: int, rationale: str) -> None:
        line = _line_of(self.code, index)
        self.findings.append(
            LintFinding(
                rule=rule,
                severity=self.severity[rule],
                location=(line, line),
                rationale=rationale,
                snippet=_snippet_at(self.code, index),
            )
        )


def _check_fp1(col: _Collector, spec_view: str) -> None:
    aliases: set[str] = set()
    for match in _ALIAS_RE.finditer(spec_view):
        aliases.add(match.group(1))
    destructured: set[str] = set()
    for match in _DESTRUCTURE_RE.finditer(spec_view):
        for name in match.group(1).split(","):
            name = name.strip().split(":")[-1].strip()
            if name:
                destructured.add(name)

    assign = r"\s*=\s*(?![=>])"  # plain assignment, not ==/=>/>=
    for alias in sorted(aliases):
        for match in re.finditer(rf"\b{re.escape(alias)}\s*\.\s*\w+{assign}", spec_view):
            col.add(LintRule.FP1, match.start(),
                    f"assignment to a property of core module alias {alias!r} redefines a built-in")
    for name in sorted(destructured):
        for match in re.finditer(rf"(?<![.\w]){re.escape(name)}{assign}", spec_view):
            col.add(LintRule.FP1, match.start(),
                    f"reassignment of {name!r} destructured from a core module stubs a built-in")
    for module in sorted(CORE_MODULES):
        pattern = rf"require\s*\(\s*['\"]{module}['\"]\s*\)\s*\.\s*\w+{assign}"
        for match in re.finditer(pattern, spec_view):
            col.add(LintRule.FP1, match.start(),
                    f"assignment to a property of core module {module!r} redefines a built-in")
    for match in re.finditer(rf"\b(?:global|globalThis)\s*\.\s*\w+{assign}", spec_view):
        col.add(LintRule.FP1, match.start(),
                "assignment to a global property injects environment the package never provided")
    for match in re.finditer(rf"(?<![.\w])(?:eval|Function){assign}", spec_view):
        col.add(LintRule.FP1, match.start(), "reassignment of an evaluation primitive")
    for match in re.finditer(rf"\bprocess\s*\.\s*(?!env\b)\w+{assign}", spec_view):
        col.add(LintRule.FP1, match.start(), "assignment to a process property emulates a platform")


def _target_reference_index(spec_view: str, package_name: str) -> int | None:
    """Offset of the first import/require that references the target package."""
    best: int | None = None
    for regex in (_REQUIRE_RE, _IMPORT_RE):
        for match in regex.finditer(spec_view):
            specifier = match.group(1)
            is_target = specifier.startswith((".", "/")) or specifier == package_name \
                or specifier.startswith(package_name + "/")
            if is_target and (best is None or match.start() < best):
                best = match.start()
    return best


def _check_fp2(col: _Collector, no_strings: str, spec_view: str, package_name: str) -> None:
    for match in re.finditer(r"\bdelete\s+process\s*\.\s*env\s*(?:\.\s*\w+|\[[^\]]*\])", no_strings):
        col.add(LintRule.FP2, match.start(), "mutation of the environment table")
    for match in re.finditer(r"process\s*\.\s*env\s*(?:\.\s*\w+|\[[^\]]*\])\s*=(?![=>])", no_strings):
        col.add(LintRule.FP2, match.start(), "mutation of the environment table")

    target_at = _target_reference_index(spec_view, package_name)
    write_call = re.compile(r"\.\s*(" + "|".join(FS_WRITE_CALLS) + r")\s*\(")
    for match in write_call.finditer(no_strings):
        if target_at is None or match.start() < target_at:
            col.add(
                LintRule.FP2, match.start(),
                f"file-creating call {match.group(1)!r} before the target package is imported "
                "assumes payload-named files exist",
            )


def _check_fp3(col: _Collector, spec_view: str, ws: Workspace) -> None:
    public = _public_entries(ws)
    package_name = ws.manifest.name
    any_import = False
    any_public = False
    for regex in (_REQUIRE_RE, _IMPORT_RE):
        for match in regex.finditer(spec_view):
            specifier = match.group(1)
            bare = specifier.removeprefix("node:")
            if bare in CORE_MODULES:
                continue
            any_import = True
            if specifier.startswith((".", "/")):
                if _resolves_public(specifier, public):
                    any_public = True
                else:
                    col.add(LintRule.FP3, match.start(),
                            f"import of {specifier!r} resolves outside the package's public entry points")
            elif package_name and specifier == package_name:
                any_public = True
            elif package_name and specifier.startswith(package_name + "/"):
                subpath = specifier[len(package_name) + 1:]
                if _resolves_public(subpath, public):
                    any_public = True
                else:
                    col.add(LintRule.FP3, match.start(),
                            f"import of internal subpath {specifier!r} bypasses the public entry points")
            # bare specifiers naming other packages are dependencies; they
            # only matter when no public entry is imported at all
    if any_import and not any_public:
        col.add(LintRule.FP3, 0, "the exploit never imports a public entry point of the package")


def _is_identifier_char(ch: str) -> bool:
    return ch.isalnum() or ch in "_$"


def _prev_nonspace(code: str, index: int) -> tuple[str, int]:
    i = index - 1
    while i >= 0 and code[i] in " \t\n\r":
        i -= 1
    return (code[i] if i >= 0 else "", i)


def _next_nonspace(code: str, index: int) -> tuple[str, int]:
    i = index
    while i < len(code) and code[i] in " \t\n\r":
        i += 1
    return (code[i] if i < len(code) else "", i)


def _check_fp4(col: _Collector, no_strings: str) -> None:
    # the token must be a whole argument: preceded by ( or , and followed by
    # , or ) - a member chain like Object.prototype.hasOwnProperty is a read,
    # not the prototype being handed to the package
    for match in re.finditer(r"\bObject\s*\.\s*prototype\b", no_strings):
        prev_ch, _ = _prev_nonspace(no_strings, match.start())
        next_ch, _ = _next_nonspace(no_strings, match.end())
        if prev_ch in "(," and next_ch in ",)":
            col.add(LintRule.FP4, match.start(),
                    "Object.prototype passed as an argument value; an attacker cannot supply it")
    for match in re.finditer(r"\bObject\b", no_strings):
        if no_strings[match.end():match.end() + 10].lstrip()[:1] in (".", "("):
            continue  # member access or construction, not a bare argument
        prev_ch, _ = _prev_nonspace(no_strings, match.start())
        next_ch, _ = _next_nonspace(no_strings, match.end())
        if prev_ch and (_is_identifier_char(prev_ch) or prev_ch == "."):
            continue
        if prev_ch in "(," and next_ch in ",)":
            col.add(LintRule.FP4, match.start(),
                    "the Object constructor passed as an argument value; an attacker cannot supply it")


def _check_fp5(col: _Collector, no_strings: str, no_comments: str) -> None:
    for match in re.finditer(r"\.\s*emit\s*\(\s*['\"]request['\"]", no_comments):
        col.add(LintRule.FP5, match.start(),
                "synthetic 'request' event emission stands in for an external client")
    handler_call = re.search(r"\.\s*(handle|handleRequest)\s*\(", no_strings)
    if handler_call:
        fake_request_keys = re.search(r"['\"]?\b(url|method)\b['\"]?\s*:", no_comments)
        if fake_request_keys:
            col.add(LintRule.FP5, handler_call.start(),
                    "request-handler internals invoked with a synthetic request object")


def lint_poc(
    exploit_code: str,
    ws: Workspace,
    record: ExecutionRecord | None = None,
    *,
    severity: dict[LintRule, Severity] | None = None,
) -> list[LintFinding]:
    """Deterministic lint findings for an oracle-confirmed exploit.

    Never raises on unanalyzable input: that yields a single warn finding.
    """
    severity_map = dict(DEFAULT_SEVERITY)
    if severity:
        severity_map.update(severity)
    col = _Collector(exploit_code, severity_map)
    try:
        no_strings, no_comments = _lex_views(exploit_code)
        spec_view = _restore_import_specifiers(exploit_code, no_strings)
        _check_fp1(col, spec_view)
        _check_fp2(col, no_strings, spec_view, ws.manifest.name)
        _check_fp3(col, spec_view, ws)
        _check_fp4(col, no_strings)
        _check_fp5(col, no_strings, no_comments)
    except Exception as exc:  # lint must never crash the pipeline
        return [
            LintFinding(
                rule=LintRule.UNANALYZABLE,
                severity=severity_map[LintRule.UNANALYZABLE],
                location=(1, 1),
                rationale=f"exploit code could not be analyzed: {exc}",
            )
        ]
    unique = sorted(set(col.findings), key=lambda f: (f.location, f.rule.value, f.rationale))
    return unique


def is_validated(record: ExecutionRecord | None, findings: list[LintFinding]) -> bool:
    """Oracle success with no auto-reject lint findings."""
    oracle_ok = record is not None and record.oracle_verdict == "success"
    return oracle_ok and not any(f.severity is Severity.AUTO_REJECT for f in findings)
