"""Fixture corpus: specifications, manifests and expected results.

Each fixture lives in its own directory with ``expected.json`` and either a
``manifest.ipam`` (whose ``spec`` line names the root specification, possibly
shared with another fixture) or, for analysis-only fixtures, a ``spec.ipa``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ..parser import load_manifest, load_spec

CORPUS_DIR = Path(__file__).resolve().parent


class UnknownFixture(KeyError):
    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class Fixture:
    id: str
    directory: Path
    spec_path: Path
    manifest_path: Optional[Path]
    params: dict = field(default_factory=dict)
    expected: dict = field(default_factory=dict)

    def spec(self):
        return load_spec(str(self.spec_path))

    def manifest(self):
        if self.manifest_path is None:
            raise ValueError(f"fixture {self.id} has no manifest")
        return load_manifest(str(self.manifest_path))

    def files(self) -> list:
        """Every specification and manifest file owned by the fixture."""
        return sorted(p for p in self.directory.iterdir() if p.suffix in (".ipa", ".ipam"))


def fixture_ids() -> list:
    return sorted(p.name for p in CORPUS_DIR.iterdir() if (p / "expected.json").is_file())


def expected_results(id: str) -> dict:
    path = _dir(id) / "expected.json"
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_fixture(id: str) -> Fixture:
    d = _dir(id)
    manifest = d / "manifest.ipam"
    exp = expected_results(id)
    if manifest.is_file():
        root = load_manifest(str(manifest)).root_path
        return Fixture(id, d, (d / root).resolve(), manifest, exp.get("params", {}), exp)
    return Fixture(id, d, d / "spec.ipa", None, exp.get("params", {}), exp)


def all_fixtures() -> list:
    return [load_fixture(i) for i in fixture_ids()]


def _dir(id: str) -> Path:
    d = CORPUS_DIR / id
    if not (d / "expected.json").is_file():
        raise UnknownFixture(f"unknown fixture {id!r}; available: {', '.join(fixture_ids())}")
    return d
