from __future__ import annotations

import random

import pytest

import tainthound.corpus as corpus_mod
from tainthound.corpus import (
    PREFILTER_PATTERNS,
    PackageRecord,
    SamplePlan,
    bucketize,
    load_population,
    minified_budgets,
    post_check_violations,
    prefilter,
    quantile_cutoffs,
    save_population,
    stratified_sample,
)
from tainthound.vulns import VulnClass
from tainthound.workspace import CodeStats, TargetSpec, resolve_target

# Canonical positive/negative snippets per registered pattern.
REGEX_CASES: dict[str, tuple[list[str], list[str]]] = {
    "eval_function_call": (
        ["eval(userInput)", "new Function('return ' + code)"],
        ["evaluate(x)", "myFunction(1)"],
    ),
    "child_process_exec_spawn": (
        ["child_process.exec(cmd)", "child_process , .spawn(bin)".replace(" , ", "")],
        ["child_process.fork(script)", "cp.exec(cmd)"],
    ),
    "require_child_process": (
        ["require('child_process')", 'require("child_process")'],
        ["require('child-process')", "require('fs')"],
    ),
    "exec_spawn_sync": (
        ["execSync('ls -la')", "spawnSync(bin, args)"],
        ["exec('ls')", "myexecSync('x')"],
    ),
    "path_join_resolve_tainted": (
        ["path.join(base, req.params.name)", "path.resolve(process.env.HOME, file)"],
        ["path.join(base, name)", "path.join(req, x)"],
    ),
    "fs_sink_tainted": (
        ["fs.readFileSync(req.query.file)", "fs.createReadStream(req.params.path)"],
        ["fs.readFileSync(filePath)", "fs.readFileSync(request.query.file)"],
    ),
    "object_assign_tainted": (
        ["Object.assign({}, req.body)", "Object.assign(target, JSON.parse(raw))"],
        ["Object.assign({}, defaults)", "Object.assign(a, b)"],
    ),
    "spread_merge_tainted": (
        ["const merged = {...req.body};", "options = { ...JSON.parse(raw) };"],
        ["const copy = {...defaults};", "const arr = [...items];"],
    ),
    "deep_merge_helpers_tainted": (
        ["merge(target, req.body)", "defaultsDeep(config, JSON.parse(raw))"],
        ["merge(a, b)", "extend(defaults, overrides)"],
    ),
    "lodash_style_helpers": (
        ["_.merge(obj, payload)", "_.setWith(obj, path, value)"],
        ["_.map(xs, f)", "lodash.clone(x)"],
    ),
}


def all_patterns():
    return [(vc, p) for vc, patterns in PREFILTER_PATTERNS.items() for p in patterns]


def test_every_registered_pattern_has_cases():
    assert {p.name for _, p in all_patterns()} == set(REGEX_CASES)


@pytest.mark.parametrize("vuln_class,pattern", all_patterns(), ids=[p.name for _, p in all_patterns()])
def test_regex_fidelity(vuln_class, pattern):
    compiled = pattern.compiled()
    positives, negatives = REGEX_CASES[pattern.name]
    for snippet in positives:
        assert compiled.search(snippet), f"{pattern.name} must match {snippet!r}"
    for snippet in negatives:
        assert not compiled.search(snippet), f"{pattern.name} must reject {snippet!r}"


def test_lodash_helper_exact_match_pair():
    compiled = next(p for _, p in all_patterns() if p.name == "lodash_style_helpers").compiled()
    assert compiled.search("_.merge(")
    assert not compiled.search("_.map(")


# ---------------------------------------------------------------------------
# Prefilter
# ---------------------------------------------------------------------------


def make_pkg(tmp_path, files: dict[str, str]):
    root = tmp_path / "pkg"
    root.mkdir(exist_ok=True)
    (root / "package.json").write_text('{"name": "pkg", "version": "1.0.0"}', encoding="utf-8")
    for name, content in files.items():
        target = root / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(content, encoding="utf-8")
    return resolve_target(TargetSpec(local_path=root), cache_dir=tmp_path / "cache")


def test_prefilter_flags_code_injection(tmp_path):
    ws = make_pkg(tmp_path, {"lib/run.js": "module.exports = (x) => eval(x);\n"})
    flagged = prefilter(ws)
    assert VulnClass.CODE_INJECTION in flagged
    evidence = flagged[VulnClass.CODE_INJECTION][0]
    assert (evidence.file, evidence.line) == ("lib/run.js", 1)


def test_prefilter_flags_command_injection_via_require(tmp_path):
    ws = make_pkg(tmp_path, {"x.js": "const cp = require('child_process');\n"})
    assert VulnClass.OS_COMMAND_INJECTION in prefilter(ws)


def test_prefilter_static_strings_only_no_flags(tmp_path):
    ws = make_pkg(tmp_path, {"x.js": "const banner = 'hello world';\nconsole.log(banner);\n"})
    assert prefilter(ws) == {}


def test_prefilter_ignores_non_source_files(tmp_path):
    ws = make_pkg(tmp_path, {"README.md": "call eval(x) at your peril\n"})
    assert prefilter(ws) == {}


# ---------------------------------------------------------------------------
# Bucketing
# ---------------------------------------------------------------------------


def record(name: str, loc=0, deps=0, files=0, minified=False) -> PackageRecord:
    return PackageRecord(
        name=name,
        version="1.0.0",
        stats=CodeStats(js_ts_loc=loc, dependency_count=deps, js_ts_files=files, minified=minified),
    )


def brute_force_nearest_rank(values, q):
    ordered = sorted(values)
    import math

    return ordered[max(0, math.ceil(q * len(ordered)) - 1)]


def test_quantile_cutoffs_match_brute_force():
    values = list(range(1, 101))
    cutoffs = quantile_cutoffs(values, 5)
    assert cutoffs == [brute_force_nearest_rank(values, k / 5) for k in range(1, 5)]
    assert cutoffs == [20, 40, 60, 80]


def test_bucketize_extremes_and_ties():
    population = [record(f"p{v}", loc=v) for v in range(1, 101)]
    buckets = bucketize(population, lambda r: r.stats.js_ts_loc, 5)
    by_value = dict(zip(range(1, 101), buckets))
    assert by_value[1] == 0
    assert by_value[100] == 4
    assert by_value[20] == 0  # tie with the first cutoff goes low
    assert by_value[21] == 1


def test_bucketize_all_equal_values_single_bucket():
    population = [record(f"p{i}", loc=7) for i in range(10)]
    assert set(bucketize(population, lambda r: r.stats.js_ts_loc, 5)) == {0}


def test_bucketize_single_record():
    assert bucketize([record("only", loc=3)], lambda r: r.stats.js_ts_loc, 5) == [0]


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def synthetic_population(n, minified_count, seed=11):
    rng = random.Random(seed)
    population = []
    for i in range(n):
        population.append(
            record(
                f"pkg{i}",
                loc=rng.randrange(0, 1000),
                deps=rng.randrange(0, 30),
                files=rng.randrange(1, 50),
                minified=i < minified_count,
            )
        )
    rng.shuffle(population)
    return population


def test_minified_budget_hand_computed():
    # 200 packages, 10 minified, quota 65 -> round(65 * 10/200) = 3
    n_min, n_plain = minified_budgets(65, 10, 190)
    assert (n_min, n_plain) == (3, 62)


def test_minified_budget_floor():
    n_min, _ = minified_budgets(65, 1, 5000)
    assert n_min == 1


def test_sample_deterministic_under_seed():
    population = synthetic_population(200, 10)
    plan = SamplePlan(per_class_quota=65, seed=42)
    first = stratified_sample(population, plan)
    second = stratified_sample(population, plan)
    assert first == second
    other = stratified_sample(population, SamplePlan(per_class_quota=65, seed=43))
    assert [r.name for r in other] != [r.name for r in first]


def test_sample_quota_and_uniqueness():
    population = synthetic_population(200, 10)
    sample = stratified_sample(population, SamplePlan(per_class_quota=65, seed=1))
    assert len(sample) == 65
    assert len({(r.name, r.version) for r in sample}) == 65


def test_sample_exhaustion_returns_whole_population():
    population = synthetic_population(40, 4)
    sample = stratified_sample(population, SamplePlan(per_class_quota=65, seed=5))
    assert len(sample) == 40
    assert {r.name for r in sample} == {r.name for r in population}


def proportional_population(n=200, minified_count=10, seed=11):
    """Minified packages share one structural profile, so the post check has
    no swap pressure and the proportional budget is observable directly."""
    rng = random.Random(seed)
    population = []
    for i in range(n):
        if i < minified_count:
            population.append(record(f"min{i}", loc=500, deps=10, files=20, minified=True))
        else:
            population.append(
                record(f"pkg{i}", loc=rng.randrange(0, 1000), deps=rng.randrange(0, 30),
                       files=rng.randrange(1, 50))
            )
    rng.shuffle(population)
    return population


def test_sample_proportional_minified_within_one():
    # hand computation: round(65 * 10 / 200) = round(3.25) = 3
    population = proportional_population()
    for seed in range(20):
        sample = stratified_sample(population, SamplePlan(per_class_quota=65, seed=seed))
        minified = sum(1 for r in sample if r.stats.minified)
        assert abs(minified - 3) <= 1, f"seed {seed}: {minified} minified"


def test_sample_minified_floor():
    population = synthetic_population(500, 1)
    for seed in range(10):
        sample = stratified_sample(population, SamplePlan(per_class_quota=65, seed=seed))
        assert any(r.stats.minified for r in sample)


def test_post_check_precondition_unsatisfiable_after_sampling():
    for pop_seed, minified_count in ((3, 10), (7, 40), (9, 3)):
        population = synthetic_population(300, minified_count, seed=pop_seed)
        for seed in range(15):
            sample = stratified_sample(population, SamplePlan(per_class_quota=65, seed=seed))
            assert post_check_violations(population, sample) == []


def test_post_check_swap_actually_fires(monkeypatch):
    """Some seed must need the swap; with the swap disabled a violation shows."""
    population = synthetic_population(300, 10, seed=3)
    monkeypatch.setattr(corpus_mod, "_post_check_swaps", lambda *args, **kwargs: None)
    violating_seeds = [
        seed for seed in range(60)
        if post_check_violations(
            population, stratified_sample(population, SamplePlan(per_class_quota=65, seed=seed))
        )
    ]
    assert violating_seeds, "expected at least one pre-swap violation across 60 seeds"


def test_structural_spread_smoke_bound():
    population = synthetic_population(1000, 50, seed=2)
    counts: dict[tuple[int, int, int], int] = {}
    buckets = [
        bucketize(population, metric, 5) for metric in corpus_mod.STRUCTURAL_METRICS
    ]
    tuple_of = {
        (population[i].name, population[i].version): (buckets[0][i], buckets[1][i], buckets[2][i])
        for i in range(len(population))
    }
    for seed in range(100):
        sample = stratified_sample(population, SamplePlan(per_class_quota=65, seed=seed))
        for item in sample:
            key = tuple_of[(item.name, item.version)]
            counts[key] = counts.get(key, 0) + 1
    occupied = [c for c in counts.values() if c > 0]
    assert max(occupied) / min(occupied) <= 3.0


def test_empty_population():
    assert stratified_sample([], SamplePlan(per_class_quota=65, seed=0)) == []


def test_population_round_trip(tmp_path):
    population = synthetic_population(10, 2)
    population[0] = PackageRecord(
        name=population[0].name,
        version=population[0].version,
        stats=population[0].stats,
        flagged_classes=frozenset({VulnClass.CODE_INJECTION}),
        evidence={"code_injection": [{"file": "a.js", "line": 1}]},
    )
    path = tmp_path / "population.ndjson"
    save_population(population, path)
    loaded = load_population(path)
    assert loaded == population
    assert loaded[0].flagged_classes == frozenset({VulnClass.CODE_INJECTION})
