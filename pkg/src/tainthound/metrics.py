"""File-level matching of findings against ground truth, the four unmatched
rates, and token-cost accounting.

A finding matches a ground-truth entry exactly when package name, version,
vulnerability type, and (normalized) file path all agree.  Rates with a zero
denominator are reported as undefined, which is distinct from 0%.
"""

from __future__ import annotations

import posixpath
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .model import UsageStats
from .vulns import VulnClass


def normalize_path(path: str) -> str:
    path = path.replace("\\", "/")
    while path.startswith("./"):
        path = path[2:]
    normalized = posixpath.normpath(path) if path else path
    return normalized


@dataclass(frozen=True)
class GroundTruthEntry:
    package: str
    version: str
    vuln_type: VulnClass
    file: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "file", normalize_path(self.file))

    @classmethod
    def from_dict(cls, raw: dict) -> "GroundTruthEntry":
        return cls(
            package=str(raw["package"]),
            version=str(raw.get("version", "")),
            vuln_type=VulnClass(raw["vuln_type"]),
            file=str(raw["file"]),
        )


@dataclass(frozen=True)
class ReportedFinding:
    package: str
    version: str
    vuln_type: VulnClass
    file: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "file", normalize_path(self.file))

    @classmethod
    def from_dict(cls, raw: dict) -> "ReportedFinding":
        return cls(
            package=str(raw["package"]),
            version=str(raw.get("version", "")),
            vuln_type=VulnClass(raw["vuln_type"]),
            file=str(raw["file"]),
        )

    def key(self) -> tuple[str, str, str, str]:
        return (self.package, self.version, self.vuln_type.value, self.file)


@dataclass
class MatchResult:
    matched: list[tuple[ReportedFinding, GroundTruthEntry]]
    unmatched_findings: list[ReportedFinding]
    uncovered_gt: list[GroundTruthEntry]


def match_findings(
    findings: Sequence[ReportedFinding],
    gt: Sequence[GroundTruthEntry],
) -> MatchResult:
    """File-level matching; many findings may cover one ground-truth entry."""
    by_key: dict[tuple[str, str, str, str], GroundTruthEntry] = {}
    for entry in gt:
        by_key.setdefault((entry.package, entry.version, entry.vuln_type.value, entry.file), entry)
    matched: list[tuple[ReportedFinding, GroundTruthEntry]] = []
    unmatched: list[ReportedFinding] = []
    covered: set[tuple[str, str, str, str]] = set()
    for finding in findings:
        entry = by_key.get(finding.key())
        if entry is None:
            unmatched.append(finding)
        else:
            matched.append((finding, entry))
            covered.add(finding.key())
    uncovered = [
        entry for entry in gt
        if (entry.package, entry.version, entry.vuln_type.value, entry.file) not in covered
    ]
    return MatchResult(matched=matched, unmatched_findings=unmatched, uncovered_gt=uncovered)


@dataclass(frozen=True)
class Rate:
    numerator: int
    denominator: int

    @property
    def defined(self) -> bool:
        return self.denominator > 0

    @property
    def percent(self) -> float | None:
        if not self.defined:
            return None
        return 100.0 * self.numerator / self.denominator

    def render(self) -> str:
        if not self.defined:
            return f"{self.numerator}/0 (undefined)"
        return f"{self.numerator}/{self.denominator} ({self.percent:.2f}%)"


@dataclass(frozen=True)
class UnmatchedRates:
    finder_findings_unmatched: Rate
    judge_findings_unmatched: Rate
    finder_gt_unmatched: Rate
    judge_gt_unmatched: Rate

    def rows(self) -> list[tuple[str, Rate]]:
        return [
            ("Finder Findings Unmatched", self.finder_findings_unmatched),
            ("Judge Findings Unmatched", self.judge_findings_unmatched),
            ("Finder GT Unmatched", self.finder_gt_unmatched),
            ("Judge GT Unmatched", self.judge_gt_unmatched),
        ]


def unmatched_rates(
    finder_findings: Sequence[ReportedFinding],
    judge_findings: Sequence[ReportedFinding],
    gt: Sequence[GroundTruthEntry],
) -> UnmatchedRates:
    """The four file-level unmatched rates over a dataset.

    ``judge_findings`` must be the subset of ``finder_findings`` deemed valid.
    """
    finder_multiset: dict[ReportedFinding, int] = {}
    for finding in finder_findings:
        finder_multiset[finding] = finder_multiset.get(finding, 0) + 1
    for finding in judge_findings:
        remaining = finder_multiset.get(finding, 0)
        if remaining <= 0:
            raise ValueError("judge findings must be a subset of finder findings")
        finder_multiset[finding] = remaining - 1

    finder_match = match_findings(finder_findings, gt)
    judge_match = match_findings(judge_findings, gt)
    return UnmatchedRates(
        finder_findings_unmatched=Rate(len(finder_match.unmatched_findings), len(finder_findings)),
        judge_findings_unmatched=Rate(len(judge_match.unmatched_findings), len(judge_findings)),
        finder_gt_unmatched=Rate(len(finder_match.uncovered_gt), len(gt)),
        judge_gt_unmatched=Rate(len(judge_match.uncovered_gt), len(gt)),
    )


def render_rates_table(rows: Iterable[tuple[str, str, UnmatchedRates]]) -> str:
    """Plain-text table: dataset, vulnerability, then the four rates."""
    header = (
        "Dataset", "Vulnerability",
        "Finder Findings Unmatched", "Judge Findings Unmatched",
        "Finder GT Unmatched", "Judge GT Unmatched",
    )
    body = [
        (
            dataset,
            vulnerability,
            rates.finder_findings_unmatched.render(),
            rates.judge_findings_unmatched.render(),
            rates.finder_gt_unmatched.render(),
            rates.judge_gt_unmatched.render(),
        )
        for dataset, vulnerability, rates in rows
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)) for row in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


CWE_TO_CLASS = {
    "22": VulnClass.PATH_TRAVERSAL,
    "35": VulnClass.PATH_TRAVERSAL,
    "77": VulnClass.OS_COMMAND_INJECTION,
    "78": VulnClass.OS_COMMAND_INJECTION,
    "94": VulnClass.CODE_INJECTION,
    "471": VulnClass.PROTOTYPE_POLLUTION,
    "1321": VulnClass.PROTOTYPE_POLLUTION,
}


def from_benchmark_row(raw: dict) -> GroundTruthEntry:
    """Converter stub for public-benchmark layouts.

    Accepts common field aliases (``name``/``package``, ``cwe`` like
    ``CWE-78`` instead of ``vuln_type``); the benchmarks themselves are not
    vendored.
    """
    package = raw.get("package") or raw.get("name")
    if not package:
        raise ValueError("benchmark row lacks a package name")
    vuln_raw = raw.get("vuln_type")
    if vuln_raw:
        vuln_type = VulnClass(vuln_raw)
    else:
        cwe = str(raw.get("cwe", "")).upper().removeprefix("CWE-").lstrip("0")
        if cwe not in CWE_TO_CLASS:
            raise ValueError(f"unmapped CWE identifier: {raw.get('cwe')!r}")
        vuln_type = CWE_TO_CLASS[cwe]
    file = raw.get("file") or raw.get("path")
    if not file:
        raise ValueError("benchmark row lacks a file path")
    return GroundTruthEntry(
        package=str(package),
        version=str(raw.get("version", "")),
        vuln_type=vuln_type,
        file=str(file),
    )


@dataclass(frozen=True)
class PriceTable:
    input_price: float  # currency per input token
    output_price: float  # currency per output token

    def __post_init__(self) -> None:
        if self.input_price < 0 or self.output_price < 0:
            raise ValueError("prices must be >= 0")


@dataclass(frozen=True)
class PackageUsage:
    package: str
    usage: UsageStats
    valid_exploits: int = 0


@dataclass(frozen=True)
class CostSummary:
    per_package: dict[str, float] = field(default_factory=dict)
    total: float = 0.0
    mean_per_package: float = 0.0
    mean_per_valid_exploit: float | None = None
    amortized_per_valid_exploit: float | None = None


def cost_summary(records: Sequence[PackageUsage], prices: PriceTable) -> CostSummary:
    """Per-package and aggregate model API costs.

    ``mean_per_valid_exploit`` averages over packages with at least one valid
    exploit; ``amortized_per_valid_exploit`` divides the total cost by the
    total number of valid exploits.
    """
    per_package = {
        record.package: record.usage.input_tokens * prices.input_price
        + record.usage.output_tokens * prices.output_price
        for record in records
    }
    total = sum(per_package.values())
    exploited = [record for record in records if record.valid_exploits > 0]
    exploited_cost = sum(per_package[record.package] for record in exploited)
    total_exploits = sum(record.valid_exploits for record in records)
    return CostSummary(
        per_package=per_package,
        total=total,
        mean_per_package=total / len(records) if records else 0.0,
        mean_per_valid_exploit=exploited_cost / len(exploited) if exploited else None,
        amortized_per_valid_exploit=total / total_exploits if total_exploits else None,
    )
