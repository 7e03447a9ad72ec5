"""Corpus pre-filtering and stratified sampling.

The prefilter flags packages whose source matches per-class sink patterns;
the sampler draws a per-class quota spread approximately uniformly over
three structural metrics (code size, dependency count, file count) while
keeping the minified/plain mix proportional to the population, with a floor
of one minified package whenever any exist.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .vulns import VulnClass
from .workspace import SOURCE_EXTENSIONS, CodeStats, Workspace, _iter_files

REGEX_SET_VERSION = 1


@dataclass(frozen=True)
class SinkPattern:
    name: str
    pattern: str
    note: str

    def compiled(self) -> re.Pattern[str]:
        return re.compile(self.pattern)


PREFILTER_PATTERNS: dict[VulnClass, tuple[SinkPattern, ...]] = {
    VulnClass.CODE_INJECTION: (
        SinkPattern(
            "eval_function_call",
            r"\b(?:eval|Function)\s*\(",
            "eval/Function usage",
        ),
    ),
    VulnClass.OS_COMMAND_INJECTION: (
        SinkPattern(
            "child_process_exec_spawn",
            r"child_process\s*\.\s*(?:exec|spawn)",
            "child_process exec/spawn usage",
        ),
        SinkPattern(
            "require_child_process",
            r"require\(\s*['\"]child_process['\"]\s*\)",
            "require('child_process')",
        ),
        SinkPattern(
            "exec_spawn_sync",
            r"\b(?:execSync|spawnSync)\s*\(",
            "execSync/spawnSync usage",
        ),
    ),
    VulnClass.PATH_TRAVERSAL: (
        SinkPattern(
            "path_join_resolve_tainted",
            r"\bpath\s*\.\s*(?:join|resolve)\s*\([^)]*\b(?:req\s*\.\s*(?:params|query|body|headers|url|originalUrl)|process\s*\.\s*env)\b[^)]*\)",
            "path.join/resolve fed by req.* or env",
        ),
        SinkPattern(
            "fs_sink_tainted",
            r"\b(?:fs|node:fs)\s*\.\s*(?:readFile|readFileSync|writeFile|writeFileSync|createReadStream|createWriteStream|readdir|readdirSync|rm|rmSync|unlink|unlinkSync|open|openSync)\s*\([^)]*\breq\s*\.\s*(?:params|query|body|headers|url|originalUrl)\b",
            "fs.* sink references req.*",
        ),
    ),
    VulnClass.PROTOTYPE_POLLUTION: (
        SinkPattern(
            "object_assign_tainted",
            r"\bObject\s*\.\s*assign\s*\([^)]*\b(?:req\s*\.\s*(?:body|query|params)|JSON\s*\.\s*parse\s*\(|qs\s*\.\s*parse\s*\()\b[^)]*\)",
            "Object.assign fed by req.* or JSON.parse",
        ),
        SinkPattern(
            "spread_merge_tainted",
            r"=\s*\{[^}]*\.\.\.(?:req\s*\.\s*(?:body|query|params)|JSON\s*\.\s*parse\s*\(|qs\s*\.\s*parse\s*\()[^}]*\}",
            "spread merge with attacker-controlled object",
        ),
        SinkPattern(
            "deep_merge_helpers_tainted",
            r"\b(?:set|assign|merge|extend|defaultsDeep|deepMerge|deepExtend)\b\s*\([^)]*\b(?:req\s*\.\s*(?:body|query|params)|JSON\s*\.\s*parse\s*\(|qs\s*\.\s*parse\s*\()\b",
            "generic deep merge helpers with tainted input",
        ),
        SinkPattern(
            "lodash_style_helpers",
            r"\b_\s*\.\s*(?:merge|mergeWith|defaultsDeep|set|setWith|update|updateWith)\s*\(",
            "lodash-style risky helpers",
        ),
    ),
}


@dataclass(frozen=True)
class PatternEvidence:
    pattern: str  # SinkPattern.name
    file: str
    line: int
    excerpt: str

    def to_dict(self) -> dict:
        return {"pattern": self.pattern, "file": self.file, "line": self.line, "excerpt": self.excerpt}


def prefilter(ws: Workspace) -> dict[VulnClass, list[PatternEvidence]]:
    """Flag each class whose registered patterns match at least one source file."""
    flagged: dict[VulnClass, list[PatternEvidence]] = {}
    files = sorted(
        (p for p in _iter_files(ws.root) if p.suffix in SOURCE_EXTENSIONS),
        key=lambda p: p.relative_to(ws.root).as_posix(),
    )
    texts = [(p.relative_to(ws.root).as_posix(), p.read_bytes().decode("utf-8", errors="replace"))
             for p in files]
    for vuln_class, patterns in PREFILTER_PATTERNS.items():
        evidence: list[PatternEvidence] = []
        for sink in patterns:
            compiled = sink.compiled()
            for rel, text in texts:
                for match in compiled.finditer(text):
                    line = text.count("\n", 0, match.start()) + 1
                    excerpt = match.group(0).splitlines()[0][:200]
                    evidence.append(PatternEvidence(sink.name, rel, line, excerpt))
        if evidence:
            evidence.sort(key=lambda e: (e.file, e.line, e.pattern))
            flagged[vuln_class] = evidence
    return flagged


@dataclass(frozen=True)
class PackageRecord:
    name: str
    version: str
    stats: CodeStats
    flagged_classes: frozenset[VulnClass] = frozenset()
    evidence: dict = field(compare=False, hash=False, default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "version": self.version,
            "stats": {
                "js_ts_loc": self.stats.js_ts_loc,
                "dependency_count": self.stats.dependency_count,
                "js_ts_files": self.stats.js_ts_files,
                "minified": self.stats.minified,
            },
            "flagged_classes": sorted(c.value for c in self.flagged_classes),
            "evidence": self.evidence,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PackageRecord":
        stats = raw.get("stats") or {}
        return cls(
            name=str(raw["name"]),
            version=str(raw.get("version", "")),
            stats=CodeStats(
                js_ts_loc=int(stats.get("js_ts_loc", 0)),
                dependency_count=int(stats.get("dependency_count", 0)),
                js_ts_files=int(stats.get("js_ts_files", 0)),
                minified=bool(stats.get("minified", False)),
            ),
            flagged_classes=frozenset(VulnClass(c) for c in raw.get("flagged_classes", [])),
            evidence=dict(raw.get("evidence") or {}),
        )


def load_population(path: Path) -> list[PackageRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            records.append(PackageRecord.from_dict(json.loads(line)))
    return records


def save_population(records: Iterable[PackageRecord], path: Path) -> None:
    Path(path).write_text(
        "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records),
        encoding="utf-8",
    )


@dataclass(frozen=True)
class SamplePlan:
    per_class_quota: int = 65
    bucket_count: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.per_class_quota < 0 or self.bucket_count < 1:
            raise ValueError("quotas must be >= 0 and bucket count >= 1")


def quantile_cutoffs(values: Sequence[float], b: int) -> list[float]:
    """Nearest-rank empirical quantiles at k/b for k = 1..b-1."""
    ordered = sorted(values)
    n = len(ordered)
    return [ordered[max(0, math.ceil(k / b * n) - 1)] for k in range(1, b)]


def bucketize(
    population: Sequence[PackageRecord],
    metric: Callable[[PackageRecord], float],
    b: int = 5,
) -> list[int]:
    """Assign each record the quantile bucket of its metric; ties go low."""
    if not population:
        return []
    values = [metric(record) for record in population]
    cutoffs = quantile_cutoffs(values, b)
    return [sum(1 for cut in cutoffs if cut < value) for value in values]


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def minified_budgets(quota: int, minified_count: int, plain_count: int) -> tuple[int, int]:
    """Proportional minified/plain budgets with the >=1 minified floor."""
    total = minified_count + plain_count
    if total == 0 or quota == 0:
        return 0, 0
    quota = min(quota, total)
    n_min = _round_half_up(quota * minified_count / total)
    if minified_count > 0:
        n_min = max(1, n_min)
    n_min = min(n_min, minified_count, quota)
    n_plain = quota - n_min
    if n_plain > plain_count:
        n_plain = plain_count
        n_min = quota - n_plain
    return n_min, n_plain


STRUCTURAL_METRICS: tuple[Callable[[PackageRecord], float], ...] = (
    lambda r: r.stats.js_ts_loc,
    lambda r: r.stats.dependency_count,
    lambda r: r.stats.js_ts_files,
)


def stratified_sample(
    population: Sequence[PackageRecord],
    plan: SamplePlan,
) -> list[PackageRecord]:
    """Seeded stratified sample; deterministic for a given (population, plan).

    Structural bucket tuples are visited in randomized round-robin order,
    draws respect the minified/plain budgets with category fallback, and a
    post check swaps plain for unused minified packages until no
    (metric, bucket) cell has plain coverage without minified coverage that
    the population could supply.
    """
    n = len(population)
    if n == 0 or plan.per_class_quota == 0:
        return []
    quota = min(plan.per_class_quota, n)
    rng = random.Random(plan.seed)

    buckets = [bucketize(population, metric, plan.bucket_count) for metric in STRUCTURAL_METRICS]
    tuple_of = [tuple(buckets[m][i] for m in range(3)) for i in range(n)]

    pools: dict[tuple[int, int, int], dict[bool, list[int]]] = {}
    for i, key in enumerate(tuple_of):
        pools.setdefault(key, {True: [], False: []})[population[i].stats.minified].append(i)
    order = sorted(pools)
    rng.shuffle(order)
    for key in order:
        rng.shuffle(pools[key][True])
        rng.shuffle(pools[key][False])

    minified_count = sum(1 for r in population if r.stats.minified)
    budgets = dict(zip((True, False), minified_budgets(quota, minified_count, n - minified_count)))

    selected: list[int] = []
    while len(selected) < quota:
        # clamp budgets to what is still globally available, shifting the rest
        avail = {
            cat: sum(len(pool[cat]) for pool in pools.values())
            for cat in (True, False)
        }
        for cat in (True, False):
            if budgets[cat] > avail[cat]:
                budgets[not cat] += budgets[cat] - avail[cat]
                budgets[cat] = avail[cat]
        drew = False
        for key in order:
            if len(selected) >= quota:
                break
            pool = pools[key]
            cats = [cat for cat in (True, False) if budgets[cat] > 0 and pool[cat]]
            if not cats:
                continue
            if len(cats) == 2:
                cat = rng.choices(cats, weights=[budgets[c] for c in cats])[0]
            else:
                cat = cats[0]
            index = pool[cat].pop()
            budgets[cat] -= 1
            selected.append(index)
            drew = True
        if not drew:
            break

    selected_set = set(selected)
    _post_check_swaps(population, buckets, selected, selected_set, rng)
    return [population[i] for i in selected]


def _post_check_swaps(
    population: Sequence[PackageRecord],
    buckets: list[list[int]],
    selected: list[int],
    selected_set: set[int],
    rng: random.Random,
) -> None:
    """Swap sampled plain packages for unused minified ones per metric/bucket.

    Iterated to a fixpoint so the swap precondition is unsatisfiable
    afterwards (each swap strictly grows the minified count, so this
    terminates).
    """
    changed = True
    while changed:
        changed = False
        for m in range(3):
            cells = sorted({buckets[m][i] for i in selected})
            for cell in cells:
                in_cell = [i for i in selected if buckets[m][i] == cell]
                plains = [i for i in in_cell if not population[i].stats.minified]
                mins = [i for i in in_cell if population[i].stats.minified]
                if not plains or mins:
                    continue
                unused_min = sorted(
                    i for i in range(len(population))
                    if i not in selected_set
                    and population[i].stats.minified
                    and buckets[m][i] == cell
                )
                if not unused_min:
                    continue
                out_idx = rng.choice(sorted(plains))
                in_idx = rng.choice(unused_min)
                selected[selected.index(out_idx)] = in_idx
                selected_set.discard(out_idx)
                selected_set.add(in_idx)
                changed = True


def post_check_violations(
    population: Sequence[PackageRecord],
    sample: Sequence[PackageRecord],
    bucket_count: int = 5,
) -> list[tuple[int, int]]:
    """(metric, bucket) cells that still satisfy the swap precondition."""
    buckets = [bucketize(population, metric, bucket_count) for metric in STRUCTURAL_METRICS]
    index_of = { (r.name, r.version): i for i, r in enumerate(population) }
    sampled = [index_of[(r.name, r.version)] for r in sample]
    sampled_set = set(sampled)
    violations: list[tuple[int, int]] = []
    for m in range(3):
        for cell in sorted({buckets[m][i] for i in sampled}):
            in_cell = [i for i in sampled if buckets[m][i] == cell]
            has_plain = any(not population[i].stats.minified for i in in_cell)
            has_min = any(population[i].stats.minified for i in in_cell)
            unused_min_exists = any(
                population[i].stats.minified and buckets[m][i] == cell and i not in sampled_set
                for i in range(len(population))
            )
            if has_plain and not has_min and unused_min_exists:
                violations.append((m, cell))
    return violations
