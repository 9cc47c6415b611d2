#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Tests for the command-line entry point."""

import contextlib
import io
import json
import tempfile
import unittest
from pathlib import Path

from cli import main
from models import load_checkpoint

SMALL_RUN = {
    "seed": 3,
    "train": {"epochs": 2, "batch_size": 4, "learning_rate": 0.05},
    "method": ["erm", "coral"],
    "baseline": {"name": "mlp2", "hidden_dims": [6]},
    "synthetic": {"domains": 4, "samples_per_class": 2, "dims": [4, 1, 2]},
}


class TestCli(unittest.TestCase):
    """Exit code and pipeline tests for the dg-forge commands."""

    def setUp(self):
        """Create a scratch directory."""
        # pylint: disable=consider-using-with
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)

    def _config(self, document: dict, name: str = "run.json") -> str:
        """Write a configuration document and return its path."""
        path = self.dir / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return str(path)

    def _run(self, *argv: str):
        """Run the CLI capturing stdout.

        Returns:
            (exit code, stdout text).
        """
        stdout = io.StringIO()
        with contextlib.redirect_stdout(stdout):
            code = main(list(argv))
        return code, stdout.getvalue()

    def test_configuration_errors_exit_one(self):
        """
        arrange: invalid configurations and arguments.
        act: run the commands.
        assert: exit code 1 with the JSON path logged.
        """
        bad = self._config({"train": {"learningrate": 0.1}}, "bad.json")
        cases = {
            "unknown_key": ("benchmark", "--config", bad, "--out", str(self.dir / "o")),
            "missing_config": (
                "benchmark",
                "--config",
                str(self.dir / "absent.json"),
                "--out",
                str(self.dir / "o"),
            ),
            "zero_jobs": (
                "benchmark",
                "--config",
                self._config(SMALL_RUN),
                "--out",
                str(self.dir / "o"),
                "--jobs",
                "0",
            ),
            "unknown_subject": (
                "train",
                "--config",
                self._config(SMALL_RUN),
                "--out",
                str(self.dir / "o"),
                "--target-subject",
                "99",
            ),
        }
        for scenario, argv in cases.items():
            with self.subTest(scenario=scenario):
                with self.assertLogs(level="ERROR"):
                    code, _ = self._run(*argv)

                self.assertEqual(code, 1)
        with self.assertLogs(level="ERROR") as logs:
            self._run(*cases["unknown_key"])
        self.assertIn("$.train.learningrate", "\n".join(logs.output))

    def test_broken_manifest_exits_one(self):
        """
        arrange: a configuration whose manifest references a missing feature file.
        act: run the benchmark.
        assert: exit code 1.
        """
        (self.dir / "manifest.csv").write_text(
            "subject,session,trial,label,path\n1,1,1,0,features/missing.dgf\n",
            encoding="utf-8",
        )
        config = self._config({"data": {"manifest": "manifest.csv", "target_shape": [4, 1, 2]}})

        with self.assertLogs(level="ERROR"):
            code, _ = self._run("benchmark", "--config", config, "--out", str(self.dir / "o"))

        self.assertEqual(code, 1)

    def test_report_without_results_exits_two(self):
        """
        arrange: an empty directory.
        act: render a report from it.
        assert: exit code 2.
        """
        with self.assertLogs(level="ERROR"):
            code, _ = self._run("report", "--in", str(self.dir))

        self.assertEqual(code, 2)

    def test_pipeline(self):
        """
        arrange: a small synthetic configuration.
        act: generate feature files, benchmark them, re-render the report, train one fold
            and sweep a grid.
        assert: every command exits 0 and writes its outputs.
        """
        code, _ = self._run(
            "gen-synthetic", "--config", self._config(SMALL_RUN), "--out", str(self.dir / "data")
        )
        self.assertEqual(code, 0)
        self.assertTrue((self.dir / "data" / "manifest.csv").is_file())

        files_run = {k: v for k, v in SMALL_RUN.items() if k != "synthetic"}
        files_run["data"] = {"manifest": "data/manifest.csv", "target_shape": [4, 2, 2]}
        config = self._config(files_run, "files.json")
        code, markdown = self._run("benchmark", "--config", config, "--out", str(self.dir / "b"))
        self.assertEqual(code, 0)
        self.assertIn("| MLP-2 |", markdown)
        for name in ("results.json", "report.md", "report.csv"):
            self.assertTrue((self.dir / "b" / name).is_file(), name)
        self.assertFalse((self.dir / "b" / "failed-folds.json").exists())
        results = json.loads((self.dir / "b" / "results.json").read_text(encoding="utf-8"))
        self.assertEqual(len(results["folds"]), 8)
        self.assertEqual(results["config"]["seed"], 3)

        code, rendered = self._run("report", "--in", str(self.dir / "b"))
        self.assertEqual(code, 0)
        self.assertEqual(rendered, markdown)
        code, rendered = self._run("report", "--in", str(self.dir / "b"), "--format", "csv")
        self.assertEqual(code, 0)
        self.assertTrue(rendered.startswith("baseline,method,fold,"))

        code, summary = self._run(
            "train", "--config", config, "--out", str(self.dir / "t"), "--target-subject", "2"
        )
        self.assertEqual(code, 0)
        self.assertIn("subject 2", summary)
        fold = json.loads((self.dir / "t" / "fold-2.json").read_text(encoding="utf-8"))
        self.assertEqual(fold["target_subject"], 2)
        model = load_checkpoint(self.dir / "t" / "model-2.dgfm")
        self.assertEqual(model.class_count, 3)

        grid = self.dir / "grid.yaml"
        grid.write_text("epochs: [1]\nbatch_sizes: [4, 6]\n", encoding="utf-8")
        code, _ = self._run(
            "sweep", "--config", config, "--grid", str(grid), "--out", str(self.dir / "s")
        )
        self.assertEqual(code, 0)
        sweep = json.loads((self.dir / "s" / "sweep.json").read_text(encoding="utf-8"))
        self.assertEqual(len(sweep["records"]), 4)
        self.assertTrue((self.dir / "s" / "sweep.csv").is_file())

    def test_seed_override(self):
        """
        arrange: a small synthetic configuration.
        act: benchmark it with --seed.
        assert: the stored configuration carries the overriding seed.
        """
        config = self._config(SMALL_RUN)

        code, _ = self._run(
            "benchmark", "--config", config, "--out", str(self.dir / "b"), "--seed", "9"
        )

        self.assertEqual(code, 0)
        results = json.loads((self.dir / "b" / "results.json").read_text(encoding="utf-8"))
        self.assertEqual(results["config"]["seed"], 9)
        self.assertTrue(all(f["seed"] == 9 for f in results["folds"]))
