from __future__ import annotations

import random

import pytest

from tainthound.metrics import (
    GroundTruthEntry,
    PackageUsage,
    PriceTable,
    ReportedFinding,
    cost_summary,
    match_findings,
    normalize_path,
    render_rates_table,
    unmatched_rates,
)
from tainthound.model import UsageStats
from tainthound.vulns import VulnClass

CMD = VulnClass.OS_COMMAND_INJECTION
PP = VulnClass.PROTOTYPE_POLLUTION


def finding(package="p", version="1", vuln=CMD, file="lib/a.js") -> ReportedFinding:
    return ReportedFinding(package=package, version=version, vuln_type=vuln, file=file)


def gt_entry(package="p", version="1", vuln=CMD, file="lib/a.js") -> GroundTruthEntry:
    return GroundTruthEntry(package=package, version=version, vuln_type=vuln, file=file)


# ---------------------------------------------------------------------------
# Matching rule
# ---------------------------------------------------------------------------


def test_exact_agreement_matches():
    result = match_findings([finding()], [gt_entry()])
    assert len(result.matched) == 1
    assert result.unmatched_findings == []
    assert result.uncovered_gt == []


def test_file_disagreement_unmatched_both_ways():
    result = match_findings([finding(file="lib/b.js")], [gt_entry(file="lib/a.js")])
    assert result.matched == []
    assert len(result.unmatched_findings) == 1
    assert len(result.uncovered_gt) == 1


def test_dot_slash_normalization_matches():
    result = match_findings([finding(file="./lib/a.js")], [gt_entry(file="lib/a.js")])
    assert len(result.matched) == 1


def test_normalize_path_rules():
    assert normalize_path("./lib/a.js") == "lib/a.js"
    assert normalize_path("lib\\a.js") == "lib/a.js"
    assert normalize_path("lib//a.js") == "lib/a.js"


@pytest.mark.parametrize("field,value", [
    ("version", "2"),
    ("vuln", PP),
    ("package", "other"),
])
def test_any_key_disagreement_prevents_match(field, value):
    kwargs = {field: value}
    result = match_findings([finding(**kwargs)], [gt_entry()])
    assert result.matched == []


def test_many_findings_can_cover_one_gt():
    result = match_findings([finding(), finding()], [gt_entry()])
    assert len(result.matched) == 2
    assert result.uncovered_gt == []


# ---------------------------------------------------------------------------
# The four unmatched rates
# ---------------------------------------------------------------------------


def build_rate_inputs(n_finder, n_finder_unmatched, n_gt, n_gt_uncovered, vuln=CMD):
    """Synthesize inputs hitting exact numerator/denominator targets."""
    gt = [gt_entry(package=f"g{i}", vuln=vuln, file=f"f{i}.js") for i in range(n_gt)]
    findings: list[ReportedFinding] = []
    covered_gt = gt[: n_gt - n_gt_uncovered]
    matched_needed = n_finder - n_finder_unmatched
    for i in range(matched_needed):
        target = covered_gt[i % len(covered_gt)] if covered_gt else None
        assert target is not None, "cannot build matched findings without covered gt"
        findings.append(
            finding(package=target.package, version=target.version, vuln=target.vuln_type,
                    file=target.file)
        )
    for i in range(n_finder_unmatched):
        findings.append(finding(package=f"nomatch{i}", vuln=vuln, file=f"x{i}.js"))
    return findings, gt


@pytest.mark.parametrize("num,den,expected", [
    (27, 221, "12.22%"),
    (108, 375, "28.80%"),
])
def test_findings_unmatched_reproduces_published_percentages(num, den, expected):
    findings, gt = build_rate_inputs(n_finder=den, n_finder_unmatched=num, n_gt=400,
                                     n_gt_uncovered=0)
    rates = unmatched_rates(findings, findings, gt)
    assert rates.finder_findings_unmatched.render().endswith(f"({expected})")
    assert (rates.finder_findings_unmatched.numerator,
            rates.finder_findings_unmatched.denominator) == (num, den)


@pytest.mark.parametrize("num,den,expected", [
    (16, 373, "4.29%"),
    (40, 524, "7.63%"),
])
def test_gt_unmatched_reproduces_published_percentages(num, den, expected):
    findings, gt = build_rate_inputs(n_finder=600, n_finder_unmatched=0, n_gt=den,
                                     n_gt_uncovered=num)
    rates = unmatched_rates(findings, findings, gt)
    assert rates.finder_gt_unmatched.render().endswith(f"({expected})")


def test_empty_findings_rates():
    gt = [gt_entry()]
    rates = unmatched_rates([], [], gt)
    assert rates.finder_findings_unmatched.defined is False
    assert "undefined" in rates.finder_findings_unmatched.render()
    assert rates.finder_gt_unmatched.render().endswith("(100.00%)")


def test_judge_must_be_subset_of_finder():
    lone = finding(package="solo")
    with pytest.raises(ValueError):
        unmatched_rates([finding()], [lone], [gt_entry()])
    # duplicates in judge beyond finder multiplicity also violate the subset
    with pytest.raises(ValueError):
        unmatched_rates([finding()], [finding(), finding()], [gt_entry()])


def test_rate_table_rendering():
    findings, gt = build_rate_inputs(8, 2, 5, 1)
    rates = unmatched_rates(findings, findings[:4], gt)
    table = render_rates_table([("bench", "all", rates)])
    assert "Finder Findings Unmatched" in table
    assert "bench" in table


# ---------------------------------------------------------------------------
# Randomized brute-force recount property
# ---------------------------------------------------------------------------


def brute_force_rates(finder, judge, gt):
    """Independent recount: naive nested-loop matching."""

    def is_matched(f):
        return any(
            f.package == g.package and f.version == g.version
            and f.vuln_type == g.vuln_type and f.file == g.file
            for g in gt
        )

    def gt_uncovered(findings):
        return sum(
            0 if any(
                f.package == g.package and f.version == g.version
                and f.vuln_type == g.vuln_type and f.file == g.file
                for f in findings
            ) else 1
            for g in gt
        )

    return (
        (sum(0 if is_matched(f) else 1 for f in finder), len(finder)),
        (sum(0 if is_matched(f) else 1 for f in judge), len(judge)),
        (gt_uncovered(finder), len(gt)),
        (gt_uncovered(judge), len(gt)),
    )


def test_randomized_recount_equivalence_1000_instances():
    rng = random.Random(777)
    classes = list(VulnClass)
    for _ in range(1000):
        gt = [
            gt_entry(package=f"p{rng.randrange(4)}", version=str(rng.randrange(2)),
                     vuln=rng.choice(classes), file=f"f{rng.randrange(6)}.js")
            for _ in range(rng.randrange(0, 8))
        ]
        finder = [
            finding(package=f"p{rng.randrange(4)}", version=str(rng.randrange(2)),
                    vuln=rng.choice(classes), file=f"f{rng.randrange(6)}.js")
            for _ in range(rng.randrange(0, 10))
        ]
        judge = [f for f in finder if rng.random() < 0.6]
        rates = unmatched_rates(finder, judge, gt)
        expected = brute_force_rates(finder, judge, gt)
        actual = tuple(
            (rate.numerator, rate.denominator)
            for _, rate in rates.rows()
        )
        assert actual == expected


def test_removing_a_finding_is_monotone():
    rng = random.Random(31)
    classes = list(VulnClass)
    for _ in range(200):
        gt = [
            gt_entry(package=f"p{rng.randrange(3)}", vuln=rng.choice(classes),
                     file=f"f{rng.randrange(4)}.js")
            for _ in range(rng.randrange(1, 6))
        ]
        finder = [
            finding(package=f"p{rng.randrange(3)}", vuln=rng.choice(classes),
                    file=f"f{rng.randrange(4)}.js")
            for _ in range(rng.randrange(1, 8))
        ]
        full = match_findings(finder, gt)
        reduced = match_findings(finder[:-1], gt)
        assert len(reduced.uncovered_gt) >= len(full.uncovered_gt)
        assert len(reduced.matched) <= len(full.matched)


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def test_cost_simple_arithmetic():
    summary = cost_summary(
        [PackageUsage("p", UsageStats(input_tokens=1000, output_tokens=1000, request_count=2))],
        PriceTable(input_price=1e-6, output_price=1e-6),
    )
    assert summary.per_package["p"] == pytest.approx(0.002)


def test_cost_zero_usage():
    summary = cost_summary(
        [PackageUsage("p", UsageStats())], PriceTable(input_price=1e-6, output_price=2e-6)
    )
    assert summary.total == 0.0


def test_cost_aggregates_hand_computed():
    # package costs 0.05 / 0.07 / 0.12 with 2 valid exploits overall
    records = [
        PackageUsage("a", UsageStats(input_tokens=50_000, output_tokens=0), valid_exploits=1),
        PackageUsage("b", UsageStats(input_tokens=70_000, output_tokens=0), valid_exploits=1),
        PackageUsage("c", UsageStats(input_tokens=120_000, output_tokens=0), valid_exploits=0),
    ]
    summary = cost_summary(records, PriceTable(input_price=1e-6, output_price=0.0))
    assert summary.mean_per_package == pytest.approx(0.08)
    assert summary.amortized_per_valid_exploit == pytest.approx(0.12)
    assert summary.mean_per_valid_exploit == pytest.approx(0.06)  # (0.05 + 0.07) / 2


def test_cost_no_exploits_undefined_aggregates():
    summary = cost_summary(
        [PackageUsage("a", UsageStats(input_tokens=10, output_tokens=10))],
        PriceTable(1e-6, 1e-6),
    )
    assert summary.mean_per_valid_exploit is None
    assert summary.amortized_per_valid_exploit is None


def test_negative_prices_rejected():
    with pytest.raises(ValueError):
        PriceTable(-1e-6, 0.0)


# ---------------------------------------------------------------------------
# Benchmark-layout converter stub
# ---------------------------------------------------------------------------


def test_benchmark_converter_accepts_cwe_labels():
    from tainthound.metrics import from_benchmark_row

    entry = from_benchmark_row({"name": "arpping", "version": "2.0.0",
                                "cwe": "CWE-78", "path": "./index.js"})
    assert entry.package == "arpping"
    assert entry.vuln_type is CMD
    assert entry.file == "index.js"
    legacy_pp = from_benchmark_row({"package": "lodash", "cwe": "CWE-471", "file": "a.js"})
    assert legacy_pp.vuln_type is PP


def test_benchmark_converter_rejects_unmapped_rows():
    from tainthound.metrics import from_benchmark_row

    with pytest.raises(ValueError):
        from_benchmark_row({"name": "x", "cwe": "CWE-89", "file": "a.js"})
    with pytest.raises(ValueError):
        from_benchmark_row({"cwe": "CWE-78", "file": "a.js"})
