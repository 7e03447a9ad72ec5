"""Operator command line.

Subcommands cover the full pipeline, corpus tooling, linting, and
evaluation.  Configuration precedence is flags > config file > environment
> defaults; the API credential is only ever read from an environment
variable (its *name* is configurable, its value never passes through flags
or files).

Exit codes: 0 = ran to completion, 2 = target resolution failure,
3 = configuration error, 1 = unexpected failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import requests

from . import __version__
from .corpus import SamplePlan, load_population, prefilter, save_population, stratified_sample
from .lint import lint_poc
from .metrics import (
    GroundTruthEntry,
    PriceTable,
    ReportedFinding,
    render_rates_table,
    unmatched_rates,
)
from .model import ChatSession, LiveBackend
from .pipeline import (
    PipelineConfig,
    ScriptedSessionFactory,
    StageKey,
    run_pipeline,
)
from .sandbox import ExecutionRecord
from .vulns import NoncePolicy, VulnClass
from .workspace import (
    IntegrityError,
    InvalidTargetError,
    TargetNotFoundError,
    TargetSpec,
    code_stats,
    resolve_target,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_TARGET = 2
EXIT_CONFIG = 3

# Paper-parameter defaults are marked as such in --help; everything else is
# a convention of this implementation.
DEFAULTS: dict[str, Any] = {
    "backend": "live",
    "model_url": "https://api.openai.com/v1",
    "model_name": "gpt-5-mini",
    "credential_env": "TAINTHOUND_API_KEY",
    "iterations": 54,
    "attempts": 3,
    "exec_timeout": 30.0,
    "parallelism": 1,
    "sentinel_root": None,
    "nonce_policy": None,
    "report_dir": "reports",
    "work_dir": "work",
    "cache_dir": None,
    "registry_url": "https://registry.npmjs.org",
    "node_binary": "node",
    "model_params": {},
    "input_price": 0.0,
    "output_price": 0.0,
}

ENV_PREFIX = "TAINTHOUND_"
ENV_KEYS = {
    "backend": "BACKEND",
    "model_url": "MODEL_URL",
    "model_name": "MODEL_NAME",
    "credential_env": "CREDENTIAL_ENV",
    "report_dir": "REPORT_DIR",
    "work_dir": "WORK_DIR",
    "cache_dir": "CACHE_DIR",
    "registry_url": "REGISTRY_URL",
    "sentinel_root": "SENTINEL_ROOT",
    "node_binary": "NODE_BINARY",
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    backend: str
    model_url: str
    model_name: str
    credential_env: str
    iterations: int
    attempts: int
    exec_timeout: float
    parallelism: int
    sentinel_root: Path | None
    nonce_policy: NoncePolicy | None
    report_dir: Path
    work_dir: Path
    cache_dir: Path | None
    registry_url: str
    node_binary: str
    model_params: dict
    classes: list[VulnClass]
    price_table: PriceTable

    def __post_init__(self) -> None:
        if self.iterations < 1 or self.attempts < 1:
            raise ConfigError("iteration and attempt limits must be positive")
        if self.exec_timeout <= 0 or self.parallelism < 1:
            raise ConfigError("exec timeout and parallelism must be positive")
        if self.backend.startswith("scripted"):
            _, _, directory = self.backend.partition(":")
            if not directory:
                raise ConfigError("scripted backend requires a transcript directory: scripted:<dir>")
            if not Path(directory).is_dir():
                raise ConfigError(f"scripted transcript directory not found: {directory}")
        elif self.backend != "live":
            raise ConfigError(f"unknown backend: {self.backend!r}")

    def session_factory(self):
        if self.backend.startswith("scripted"):
            directory = self.backend.partition(":")[2]
            return ScriptedSessionFactory(Path(directory))
        backend_conf = self

        def live_factory(key: StageKey) -> ChatSession:
            return ChatSession(
                LiveBackend(
                    backend_conf.model_url,
                    backend_conf.model_name,
                    credential_env=backend_conf.credential_env,
                    extra_params=backend_conf.model_params,
                )
            )

        return live_factory


def _merge_config(args: argparse.Namespace) -> dict[str, Any]:
    merged = dict(DEFAULTS)
    for key, env_suffix in ENV_KEYS.items():
        value = os.environ.get(ENV_PREFIX + env_suffix)
        if value is not None:
            merged[key] = value
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            file_conf = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"unreadable config file {config_path}: {exc}") from exc
        if not isinstance(file_conf, dict):
            raise ConfigError("config file must hold a JSON object")
        for secret_key in ("api_key", "credential", "token"):
            if secret_key in file_conf:
                raise ConfigError("credentials are environment-only; remove them from the config file")
        merged.update(file_conf)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def build_run_config(args: argparse.Namespace) -> RunConfig:
    merged = _merge_config(args)
    class_names = getattr(args, "classes", None) or [c.value for c in VulnClass]
    try:
        classes = [VulnClass(c) for c in class_names]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    nonce_policy = merged.get("nonce_policy")
    return RunConfig(
        backend=str(merged["backend"]),
        model_url=str(merged["model_url"]),
        model_name=str(merged["model_name"]),
        credential_env=str(merged["credential_env"]),
        iterations=int(merged["iterations"]),
        attempts=int(merged["attempts"]),
        exec_timeout=float(merged["exec_timeout"]),
        parallelism=int(merged["parallelism"]),
        sentinel_root=Path(merged["sentinel_root"]) if merged.get("sentinel_root") else None,
        nonce_policy=NoncePolicy(nonce_policy) if nonce_policy else None,
        report_dir=Path(merged["report_dir"]),
        work_dir=Path(merged["work_dir"]),
        cache_dir=Path(merged["cache_dir"]) if merged.get("cache_dir") else None,
        registry_url=str(merged["registry_url"]),
        node_binary=str(merged["node_binary"]),
        model_params=dict(merged.get("model_params") or {}),
        classes=classes,
        price_table=PriceTable(float(merged["input_price"]), float(merged["output_price"])),
    )


def cmd_pipeline(args: argparse.Namespace) -> int:
    try:
        config = build_run_config(args)
    except (ConfigError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        target = TargetSpec.parse(args.target)
    except InvalidTargetError as exc:
        print(f"target error: {exc}", file=sys.stderr)
        return EXIT_TARGET

    pipeline_config = PipelineConfig(
        session_factory=config.session_factory(),
        iteration_limit=config.iterations,
        max_attempts=config.attempts,
        exec_timeout=config.exec_timeout,
        parallelism=config.parallelism,
        sentinel_root=config.sentinel_root,
        nonce_policy=config.nonce_policy,
        node_binary=config.node_binary,
        work_dir=config.work_dir,
        report_dir=config.report_dir,
        model_info={"backend": config.backend, "url": config.model_url,
                    "name": config.model_name, "params": config.model_params},
    )
    try:
        report = run_pipeline(
            target,
            config.classes,
            pipeline_config,
            cache_dir=config.cache_dir,
            registry_url=config.registry_url,
        )
    except (InvalidTargetError, TargetNotFoundError, IntegrityError, requests.RequestException) as exc:
        print(f"target resolution failed: {exc}", file=sys.stderr)
        return EXIT_TARGET
    report_path = report.write(config.report_dir / "report.json")
    confirmed = [c for c in report.candidates if c.final_status.value == "exploited_oracle_confirmed"]
    print(f"report: {report_path}")
    print(
        f"candidates: {len(report.candidates)}, oracle-confirmed: {len(confirmed)}, "
        f"validated: {sum(1 for c in confirmed if c.validated)}"
    )
    for candidate in report.candidates:
        print(f"  {candidate.candidate_id}: {candidate.final_status.value}"
              + (" [validated]" if candidate.validated else ""))
    prices = config.price_table
    if prices.input_price > 0 or prices.output_price > 0:
        usage = report.usage_totals
        cost = usage.input_tokens * prices.input_price + usage.output_tokens * prices.output_price
        print(f"model cost: ${cost:.4f} ({usage.input_tokens} in / {usage.output_tokens} out tokens)")
    return EXIT_OK


def _local_workspace(path: str):
    return resolve_target(TargetSpec(local_path=Path(path)), cache_dir=Path("."))


def cmd_prefilter(args: argparse.Namespace) -> int:
    try:
        ws = _local_workspace(args.directory)
    except InvalidTargetError as exc:
        print(f"target error: {exc}", file=sys.stderr)
        return EXIT_TARGET
    flagged = prefilter(ws)
    if args.json:
        print(json.dumps(
            {c.value: [e.to_dict() for e in ev] for c, ev in flagged.items()},
            indent=2,
        ))
    elif not flagged:
        print("no vulnerability class flagged")
    else:
        for vuln_class, evidence in flagged.items():
            print(f"{vuln_class.value}: {len(evidence)} match(es)")
            for item in evidence:
                print(f"  {item.file}:{item.line} [{item.pattern}] {item.excerpt}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    try:
        plan = SamplePlan(per_class_quota=args.quota, bucket_count=args.buckets, seed=args.seed)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    population = load_population(Path(args.population))
    sample = stratified_sample(population, plan)
    if args.output:
        save_population(sample, Path(args.output))
        print(f"wrote {len(sample)} record(s) to {args.output}")
    else:
        for record in sample:
            print(json.dumps(record.to_dict(), ensure_ascii=False))
    return EXIT_OK


def _load_ndjson(path: str) -> list[dict]:
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            rows.append(json.loads(line))
    return rows


def cmd_evaluate(args: argparse.Namespace) -> int:
    finding_rows = _load_ndjson(args.findings)
    gt_rows = _load_ndjson(args.ground_truth)
    finder = [ReportedFinding.from_dict(r) for r in finding_rows]
    judge = [ReportedFinding.from_dict(r) for r in finding_rows if r.get("judged_valid")]
    gt = [GroundTruthEntry.from_dict(r) for r in gt_rows]
    rates = unmatched_rates(finder, judge, gt)
    print(render_rates_table([(args.dataset, args.vulnerability, rates)]))
    return EXIT_OK


def cmd_lint(args: argparse.Namespace) -> int:
    try:
        ws = _local_workspace(args.workspace)
    except InvalidTargetError as exc:
        print(f"target error: {exc}", file=sys.stderr)
        return EXIT_TARGET
    exploit_code = Path(args.exploit).read_text(encoding="utf-8")
    record = ExecutionRecord(stdout="", stderr="", exit_code=0, timed_out=False,
                             duration=0.0, oracle_verdict="success")
    findings = lint_poc(exploit_code, ws, record)
    if not findings:
        print("no lint findings")
    for finding in findings:
        start, end = finding.location
        span = f"L{start}" if start == end else f"L{start}-L{end}"
        print(f"{finding.rule.value} [{finding.severity.value}] {span}: {finding.rationale}")
        if finding.snippet:
            print(f"    {finding.snippet}")
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    try:
        ws = _local_workspace(args.directory)
    except InvalidTargetError as exc:
        print(f"target error: {exc}", file=sys.stderr)
        return EXIT_TARGET
    stats = code_stats(ws)
    print(json.dumps({
        "js_ts_loc": stats.js_ts_loc,
        "dependency_count": stats.dependency_count,
        "js_ts_files": stats.js_ts_files,
        "minified": stats.minified,
    }, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tainthound",
        description="Detect and confirm taint-style vulnerabilities in Node.js packages.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    pipe = sub.add_parser("pipeline", help="run the full detection/confirmation pipeline on one target")
    pipe.add_argument("target", help="local project path or name@version")
    pipe.add_argument("--class", dest="classes", action="append",
                      choices=[c.value for c in VulnClass],
                      help="vulnerability class to scan (repeatable; default: all four)")
    pipe.add_argument("--backend", help="live or scripted:<transcript dir>")
    pipe.add_argument("--model-url", dest="model_url", help="chat-completions base URL")
    pipe.add_argument("--model-name", dest="model_name", help="model identifier")
    pipe.add_argument("--credential-env", dest="credential_env",
                      help="name of the environment variable holding the API key")
    pipe.add_argument("--iterations", type=int, help="agent iteration limit (paper parameter: 54)")
    pipe.add_argument("--attempts", type=int, help="max exploit attempts (paper parameter: 3)")
    pipe.add_argument("--exec-timeout", dest="exec_timeout", type=float,
                      help="exploit execution timeout seconds (convention: 30)")
    pipe.add_argument("--parallelism", type=int, help="concurrent candidates (convention: 1)")
    pipe.add_argument("--sentinel-root", dest="sentinel_root",
                      help="directory for sentinel files (default: registered fixed paths)")
    pipe.add_argument("--nonce-policy", dest="nonce_policy", choices=[p.value for p in NoncePolicy],
                      help="force one nonce policy for every class (default: per-class registered)")
    pipe.add_argument("--report-dir", dest="report_dir", help="report output directory")
    pipe.add_argument("--work-dir", dest="work_dir", help="scratch clone directory")
    pipe.add_argument("--cache-dir", dest="cache_dir", help="registry tarball cache directory")
    pipe.add_argument("--registry-url", dest="registry_url", help="package registry base URL")
    pipe.add_argument("--config", help="JSON config file (flags override it)")
    pipe.set_defaults(func=cmd_pipeline)

    pre = sub.add_parser("prefilter", help="flag vulnerability classes by sink patterns")
    pre.add_argument("directory", help="package directory")
    pre.add_argument("--json", action="store_true", help="machine-readable output")
    pre.set_defaults(func=cmd_prefilter)

    samp = sub.add_parser("sample", help="stratified sample from a population file")
    samp.add_argument("population", help="newline-delimited JSON population records")
    samp.add_argument("--quota", type=int, default=65, help="per-class quota (paper parameter: 65)")
    samp.add_argument("--buckets", type=int, default=5, help="quantile buckets (paper parameter: 5)")
    samp.add_argument("--seed", type=int, default=0, help="sampling seed")
    samp.add_argument("-o", "--output", help="write sample as newline-delimited JSON")
    samp.set_defaults(func=cmd_sample)

    ev = sub.add_parser("evaluate", help="file-level unmatched rates against ground truth")
    ev.add_argument("findings", help="newline-delimited findings (judged_valid marks the Judge subset)")
    ev.add_argument("ground_truth", help="newline-delimited ground-truth entries")
    ev.add_argument("--dataset", default="all", help="dataset label for the output table")
    ev.add_argument("--vulnerability", default="all", help="vulnerability label for the output table")
    ev.set_defaults(func=cmd_evaluate)

    li = sub.add_parser("lint", help="screen an exploit file for false-positive patterns")
    li.add_argument("exploit", help="exploit JavaScript file")
    li.add_argument("workspace", help="package directory the exploit targets")
    li.set_defaults(func=cmd_lint)

    st = sub.add_parser("stats", help="structural code metrics for a package directory")
    st.add_argument("directory", help="package directory")
    st.set_defaults(func=cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvalidTargetError, TargetNotFoundError, IntegrityError) as exc:
        print(f"target resolution failed: {exc}", file=sys.stderr)
        return EXIT_TARGET
    except Exception as exc:  # pragma: no cover - defensive top-level guard
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
