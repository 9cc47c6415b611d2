# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Fixtures for dg-forge protocol tests."""

# pylint: disable=redefined-outer-name
import json
from pathlib import Path
from typing import Callable, List

import pytest

import cli


@pytest.fixture(scope="module")
def jobs(pytestconfig: pytest.Config) -> int:
    """Folds run concurrently."""
    return int(pytestconfig.getoption("--jobs"))


@pytest.fixture(scope="module")
def alignment_seeds(pytestconfig: pytest.Config) -> List[int]:
    """Seeds of the alignment comparison."""
    return list(range(int(pytestconfig.getoption("--alignment-seeds"))))


@pytest.fixture
def run_benchmark_cli(tmp_path: Path) -> Callable[..., dict]:
    """Run the benchmark command on a configuration document.

    Returns:
        A callable taking the document, an output name and extra arguments, returning the
        decoded results.json.
    """

    def run(document: dict, name: str, *extra: str) -> dict:
        config = tmp_path / f"{name}.json"
        config.write_text(json.dumps(document), encoding="utf-8")
        out = tmp_path / name
        code = cli.main(["benchmark", "--config", str(config), "--out", str(out), *extra])
        assert code == 0
        return json.loads((out / "results.json").read_text(encoding="utf-8"))

    return run
