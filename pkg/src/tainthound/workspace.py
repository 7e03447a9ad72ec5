"""Target resolution and read-only workspace snapshots.

A target is either a local project path or a registry identifier in
``name@version`` form.  Resolution materializes an immutable snapshot on
disk; exploration primitives (file tree, source reading, pattern search)
operate on that snapshot and double as agent tools.  Exploit runs never
touch the snapshot: they execute in scratch clones created per attempt.
"""

from __future__ import annotations

import fnmatch
import hashlib
import io
import json
import logging
import re
import shutil
import subprocess
import tarfile
from dataclasses import dataclass, field
from pathlib import Path
from urllib.parse import quote, urljoin

import requests

log = logging.getLogger(__name__)

DEFAULT_REGISTRY_URL = "https://registry.npmjs.org"
SOURCE_EXTENSIONS = (".js", ".jsx", ".mjs", ".cjs", ".ts", ".tsx")
EXCLUDED_DIRS = ("node_modules", ".git")

_EXACT_VERSION_RE = re.compile(
    r"^\d+\.\d+\.\d+(?:-[0-9A-Za-z.-]+)?(?:\+[0-9A-Za-z.-]+)?$"
)


class InvalidTargetError(ValueError):
    pass


class TargetNotFoundError(LookupError):
    pass


class IntegrityError(RuntimeError):
    pass


class PathEscapeError(PermissionError):
    pass


class InvalidRangeError(ValueError):
    pass


@dataclass(frozen=True)
class TargetSpec:
    """Either a local project path or an exact ``name@version`` registry ref."""

    local_path: Path | None = None
    name: str | None = None
    version: str | None = None

    def __post_init__(self) -> None:
        if self.local_path is None:
            if not (self.name and self.version):
                raise InvalidTargetError("registry target needs both name and version")
            if not _EXACT_VERSION_RE.match(self.version):
                raise InvalidTargetError(
                    f"version must be exact (no ranges): {self.version!r}"
                )
        elif self.name or self.version:
            raise InvalidTargetError("target is either a local path or a registry ref")

    @property
    def is_local(self) -> bool:
        return self.local_path is not None

    @classmethod
    def parse(cls, text: str) -> "TargetSpec":
        """Parse a CLI target: an existing path wins, else ``name@version``."""
        path = Path(text)
        if path.exists():
            return cls(local_path=path)
        # "@scope/name@1.2.3" splits at the last "@" past position 0
        at = text.rfind("@")
        if at > 0:
            return cls(name=text[:at], version=text[at + 1:])
        raise InvalidTargetError(f"not a local path or name@version: {text!r}")

    def __str__(self) -> str:
        if self.local_path is not None:
            return str(self.local_path)
        return f"{self.name}@{self.version}"


@dataclass(frozen=True)
class Manifest:
    name: str
    version: str
    main: str
    exports: dict | str | None
    dependencies: tuple[str, ...]
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def load(cls, manifest_path: Path) -> "Manifest":
        try:
            raw = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidTargetError(f"unreadable package manifest: {exc}") from exc
        if not isinstance(raw, dict):
            raise InvalidTargetError("package manifest must be an object")
        deps = raw.get("dependencies") or {}
        return cls(
            name=str(raw.get("name", "")),
            version=str(raw.get("version", "")),
            main=str(raw.get("main") or "index.js"),
            exports=raw.get("exports"),
            dependencies=tuple(sorted(deps)) if isinstance(deps, dict) else (),
            raw=raw,
        )


@dataclass(frozen=True)
class Workspace:
    root: Path
    manifest: Manifest
    snapshot_id: str


@dataclass(frozen=True)
class CodeStats:
    js_ts_loc: int
    dependency_count: int
    js_ts_files: int
    minified: bool


@dataclass(frozen=True)
class TreeEntry:
    path: str
    kind: str  # "file" | "dir"
    size: int


@dataclass(frozen=True)
class SearchMatch:
    file: str
    line: int
    excerpt: str


@dataclass(frozen=True)
class InstallReport:
    ok: bool
    installed: tuple[str, ...]
    failed: tuple[str, ...]
    output: str


def _snapshot_id(root: Path) -> str:
    digest = hashlib.sha256()
    for rel, size in sorted(
        (p.relative_to(root).as_posix(), p.stat().st_size)
        for p in _iter_files(root)
    ):
        digest.update(f"{rel}:{size}\n".encode())
    manifest = root / "package.json"
    if manifest.is_file():
        digest.update(manifest.read_bytes())
    return digest.hexdigest()[:16]


def _iter_files(root: Path, excluded: tuple[str, ...] = EXCLUDED_DIRS):
    stack = [root]
    while stack:
        current = stack.pop()
        for entry in current.iterdir():
            if entry.is_symlink():
                continue
            if entry.is_dir():
                if entry.name in excluded:
                    continue
                stack.append(entry)
            elif entry.is_file():
                yield entry


def resolve_target(
    spec: TargetSpec,
    cache_dir: Path,
    *,
    registry_url: str = DEFAULT_REGISTRY_URL,
    session: requests.Session | None = None,
) -> Workspace:
    """Materialize an immutable snapshot of the target.

    Registry resolution is idempotent per (name, version): a populated cache
    entry under ``<cache_dir>/<name>/<version>/`` is reused without network.
    """
    if spec.is_local:
        root = spec.local_path.resolve()  # type: ignore[union-attr]
        manifest_path = root / "package.json"
        if not manifest_path.is_file():
            raise InvalidTargetError(f"no package manifest at {root}")
        return Workspace(root=root, manifest=Manifest.load(manifest_path), snapshot_id=_snapshot_id(root))

    assert spec.name and spec.version
    dest = Path(cache_dir) / spec.name / spec.version
    manifest_path = dest / "package.json"
    if not manifest_path.is_file():
        _fetch_and_unpack(spec.name, spec.version, dest, registry_url, session)
    if not manifest_path.is_file():
        raise InvalidTargetError(f"{spec}: fetched tree has no package manifest")
    root = dest.resolve()
    return Workspace(root=root, manifest=Manifest.load(manifest_path), snapshot_id=_snapshot_id(root))


def _fetch_and_unpack(
    name: str,
    version: str,
    dest: Path,
    registry_url: str,
    session: requests.Session | None,
) -> None:
    http = session or requests.Session()
    meta_url = urljoin(registry_url.rstrip("/") + "/", quote(name, safe="@"))
    try:
        resp = http.get(meta_url, timeout=30)
    except requests.RequestException as exc:
        raise TargetNotFoundError(f"{name}@{version}: registry unreachable: {exc}") from exc
    if resp.status_code == 404:
        raise TargetNotFoundError(f"{name}: not in registry")
    resp.raise_for_status()
    meta = resp.json()
    version_meta = (meta.get("versions") or {}).get(version)
    if version_meta is None:
        raise TargetNotFoundError(f"{name}@{version}: version not in registry")
    dist = version_meta.get("dist") or {}
    tarball_url = dist.get("tarball")
    if not tarball_url:
        raise TargetNotFoundError(f"{name}@{version}: no tarball advertised")
    try:
        tar_resp = http.get(tarball_url, timeout=60)
    except requests.RequestException as exc:
        raise TargetNotFoundError(f"{name}@{version}: tarball fetch failed: {exc}") from exc
    tar_resp.raise_for_status()
    blob = tar_resp.content
    shasum = dist.get("shasum")
    if shasum and hashlib.sha1(blob).hexdigest() != shasum:
        raise IntegrityError(f"{name}@{version}: tarball checksum mismatch")
    _unpack_tarball(blob, dest)
    log.info("resolved %s@%s into %s", name, version, dest)


def _unpack_tarball(blob: bytes, dest: Path) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    with tarfile.open(fileobj=io.BytesIO(blob), mode="r:gz") as tar:
        for member in tar.getmembers():
            if not member.isfile():
                continue
            parts = Path(member.name).parts
            # npm tarballs root everything under "package/"
            rel = Path(*parts[1:]) if len(parts) > 1 else Path(parts[0])
            rel_s = rel.as_posix()
            if rel_s.startswith("/") or ".." in rel.parts or not rel_s:
                continue
            out = dest / rel
            out.parent.mkdir(parents=True, exist_ok=True)
            extracted = tar.extractfile(member)
            if extracted is None:
                continue
            out.write_bytes(extracted.read())


def install_dependencies(root: Path, timeout: float = 300.0) -> InstallReport:
    """Run the package installer in ``root`` (normally a scratch clone).

    A nonzero installer exit yields a failed report carrying captured output;
    it never raises for installer failures.
    """
    manifest = Manifest.load(root / "package.json")
    if not manifest.dependencies:
        return InstallReport(ok=True, installed=(), failed=(), output="")
    try:
        proc = subprocess.run(
            ["npm", "install", "--no-audit", "--no-fund", "--loglevel=error"],
            cwd=root,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        return InstallReport(ok=False, installed=(), failed=manifest.dependencies, output=str(exc))
    modules = root / "node_modules"
    present: set[str] = set()
    if modules.is_dir():
        for entry in modules.iterdir():
            if entry.name.startswith("@") and entry.is_dir():
                present.update(f"{entry.name}/{sub.name}" for sub in entry.iterdir())
            elif not entry.name.startswith("."):
                present.add(entry.name)
    failed = tuple(d for d in manifest.dependencies if d not in present)
    ok = proc.returncode == 0 and not failed
    return InstallReport(
        ok=ok,
        installed=tuple(d for d in manifest.dependencies if d in present),
        failed=failed if not ok else (),
        output=(proc.stdout + proc.stderr).strip(),
    )


def file_tree(
    ws: Workspace,
    max_depth: int | None = None,
    *,
    excluded: tuple[str, ...] = EXCLUDED_DIRS,
) -> list[TreeEntry]:
    """Deterministic, lexicographically sorted listing of the snapshot."""
    entries: list[TreeEntry] = []

    def walk(current: Path, depth: int) -> None:
        for entry in sorted(current.iterdir(), key=lambda p: p.name):
            if entry.is_symlink():
                continue
            rel = entry.relative_to(ws.root).as_posix()
            if entry.is_dir():
                if entry.name in excluded:
                    continue
                entries.append(TreeEntry(path=rel, kind="dir", size=0))
                if max_depth is None or depth < max_depth:
                    walk(entry, depth + 1)
            elif entry.is_file():
                entries.append(TreeEntry(path=rel, kind="file", size=entry.stat().st_size))

    walk(ws.root, 1)
    entries.sort(key=lambda e: e.path)
    return entries


def _resolve_inside(root: Path, rel: str) -> Path:
    if rel.startswith(("/", "\\")) or (len(rel) >= 2 and rel[1] == ":"):
        raise PathEscapeError(f"absolute path rejected: {rel}")
    resolved = (root / rel).resolve()
    if not resolved.is_relative_to(root.resolve()):
        raise PathEscapeError(f"path escapes the workspace: {rel}")
    return resolved


def read_source(
    ws: Workspace,
    rel: str,
    line_range: tuple[int, int] | None = None,
) -> str:
    """Read a workspace file as UTF-8 (lossy); 1-indexed inclusive slicing."""
    target = _resolve_inside(ws.root, rel)
    if not target.is_file():
        raise FileNotFoundError(f"no such file in workspace: {rel}")
    text = target.read_bytes().decode("utf-8", errors="replace")
    if line_range is None:
        return text
    start, end = line_range
    if start < 1 or end < start:
        raise InvalidRangeError(f"invalid line range [{start}, {end}]")
    lines = text.splitlines(keepends=True)
    return "".join(lines[start - 1:end])


def search_pattern(
    ws: Workspace,
    pattern: str,
    glob: str | None = None,
    *,
    excluded: tuple[str, ...] = EXCLUDED_DIRS,
    max_excerpt: int = 400,
) -> list[SearchMatch]:
    """Regex search over workspace files; deterministic (file, then line) order."""
    compiled = re.compile(pattern)
    matches: list[SearchMatch] = []
    files = sorted(_iter_files(ws.root, excluded), key=lambda p: p.relative_to(ws.root).as_posix())
    for path in files:
        rel = path.relative_to(ws.root).as_posix()
        if glob and not fnmatch.fnmatch(rel, glob):
            continue
        text = path.read_bytes().decode("utf-8", errors="replace")
        for lineno, line in enumerate(text.splitlines(), start=1):
            if compiled.search(line):
                matches.append(SearchMatch(file=rel, line=lineno, excerpt=line.rstrip()[:max_excerpt]))
    return matches


def code_stats(ws: Workspace, *, excluded: tuple[str, ...] = EXCLUDED_DIRS) -> CodeStats:
    """Structural metrics over JavaScript/TypeScript sources only."""
    loc = 0
    files = 0
    minified = False
    for path in _iter_files(ws.root, excluded):
        if path.suffix not in SOURCE_EXTENSIONS:
            continue
        files += 1
        loc += len(path.read_bytes().decode("utf-8", errors="replace").splitlines())
        if ".min." in path.name or "bundle" in path.name:
            minified = True
    return CodeStats(
        js_ts_loc=loc,
        dependency_count=len(ws.manifest.dependencies),
        js_ts_files=files,
        minified=minified,
    )


def clone_workspace(ws: Workspace, dest: Path) -> Path:
    """Copy the snapshot into a scratch directory for one exploit attempt."""
    dest = Path(dest)
    if dest.exists():
        shutil.rmtree(dest)
    shutil.copytree(ws.root, dest, symlinks=False)
    return dest
