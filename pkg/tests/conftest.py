from __future__ import annotations

import os
import shutil
from pathlib import Path

import pytest

from tainthound.workspace import TargetSpec, Workspace, resolve_target

REPO_ROOT = Path(__file__).resolve().parents[1]
HARNESS_DIR = REPO_ROOT / "harness"
FIXTURES_DIR = HARNESS_DIR / "fixtures"
NODE = shutil.which("node")


def pytest_collection_modifyitems(config, items):
    skip_harness = pytest.mark.skip(reason="needs node and the harness fixture packages")
    skip_network = pytest.mark.skip(reason="networked registry tests are opt-in (TAINTHOUND_NETWORK_TESTS=1)")
    harness_ready = NODE is not None and FIXTURES_DIR.is_dir()
    network_ready = os.environ.get("TAINTHOUND_NETWORK_TESTS") == "1"
    for item in items:
        if "harness" in item.keywords and not harness_ready:
            item.add_marker(skip_harness)
        if "network" in item.keywords and not network_ready:
            item.add_marker(skip_network)


@pytest.fixture
def make_fixture_ws(tmp_path):
    """Copy a harness fixture package into tmp and resolve it as a workspace."""

    def _make(name: str) -> Workspace:
        dest = tmp_path / f"ws-{name}"
        shutil.copytree(FIXTURES_DIR / name, dest)
        return resolve_target(TargetSpec(local_path=dest), cache_dir=tmp_path / "cache")

    return _make


@pytest.fixture
def simple_ws(tmp_path):
    """A tiny generic package workspace for exploration-primitive tests."""
    root = tmp_path / "simple-pkg"
    (root / "lib").mkdir(parents=True)
    (root / "package.json").write_text(
        '{"name": "simple-pkg", "version": "1.0.0", "main": "a.js",\n'
        ' "dependencies": {"leftpad": "1.0.0"}}\n',
        encoding="utf-8",
    )
    (root / "a.js").write_text(
        "const helper = require('./lib/b');\n"
        "function run(input) {\n"
        "  return helper.twice(input);\n"
        "}\n"
        "module.exports = { run };\n",
        encoding="utf-8",
    )
    (root / "lib" / "b.js").write_text(
        "function twice(x) {\n"
        "  return x + x;\n"
        "}\n"
        "module.exports = { twice };\n",
        encoding="utf-8",
    )
    return resolve_target(TargetSpec(local_path=root), cache_dir=tmp_path / "cache")
