"""Tests for experiment configs, pipelines, manifests and reports."""

import asyncio
import csv
import json
import os
import tempfile
import unittest

from fuplab import experiment, gridset
from fuplab.const import MANIFEST_NAME, STATUS_FAILED, STATUS_PASSED, STATUS_SKIPPED, SUMMARY_NAME
from fuplab.exceptions import FupLabConfigError, FupLabFormatError


def run(cfg):
    return asyncio.run(experiment.run_experiment(cfg))


def stage(kind, name, **params):
    return dict(kind=kind, name=name, **params)


class TestConfig(unittest.TestCase):
    def test_toml_file(self):
        text = """
name = "pair"
seed = 11
output_dir = "results"

[tolerances]
psh = 1e-5

[[stage]]
kind = "generator"
name = "cantor"
depth = 2
frequency = true

[[stage]]
kind = "fup-norm"
name = "norm"
input = "cantor"
N = 9
"""
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "pair.toml")
            with open(path, "w") as fp:
                fp.write(text)
            cfg = experiment.load_config(path)

            self.assertEqual(os.path.join(tmp, "results"), cfg.output_dir)
        self.assertEqual("pair", cfg.name)
        self.assertEqual(11, cfg.seed)
        self.assertEqual({"psh": 1e-5}, cfg.tolerances)
        self.assertEqual(["generator", "fup-norm"], [s.kind for s in cfg.pipeline])
        self.assertEqual(("cantor",), cfg.pipeline[1].inputs)
        self.assertEqual({"N": 9}, cfg.pipeline[1].params)

    def test_bad_toml(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "broken.toml")
            with open(path, "w") as fp:
                fp.write("name = [unterminated\n")
            with self.assertRaises(FupLabConfigError):
                experiment.load_config(path)

    def test_missing_file(self):
        with self.assertRaises(FupLabConfigError):
            experiment.load_config("/nonexistent/fuplab.toml")

    def test_rejections(self):
        bad = [
            [stage("plot", "a")],
            [stage("fup-norm", "norm", input="later"), stage("generator", "later", depth=2)],
            [stage("generator", "a", depth=2), stage("generator", "a", depth=3)],
            [stage("generator", "a", depth=2), stage("modify", "m", input="a")],
            [stage("generator", "a", family="julia", depth=2)],
            [stage("fup-scan", "scan", depths=[1, 2])],
            [stage("generator", "a", depth=2), stage("porosity", "p")],
            [{"name": "nameless-kind"}],
        ]
        for pipeline in bad:
            with self.assertRaises(FupLabConfigError, msg=str(pipeline)):
                experiment.parse_config({"stage": pipeline})
        with self.assertRaises(FupLabConfigError):
            experiment.parse_config({"seed": -1})
        with self.assertRaises(FupLabConfigError):
            experiment.parse_config({"tolerances": {"psh": "tight"}})

    def test_cantor_spec(self):
        spec = experiment.cantor_spec({"dim": 2, "base": 5, "digits": [[0, 4], [2]], "depth": 3})

        self.assertEqual(((0, 4), (2,)), spec.kept_digits)
        self.assertEqual(125, spec.side)
        self.assertEqual(((0, 2), (0, 2)), experiment.cantor_spec({}).kept_digits)

    def test_stage_seeds(self):
        seeds = [experiment.stage_seed(7, i) for i in range(4)]

        self.assertEqual(seeds, [experiment.stage_seed(7, i) for i in range(4)])
        self.assertEqual(4, len(set(seeds)))


class TestPipelines(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def config(self, stages, out="out", seed=5):
        return experiment.parse_config({"name": "test", "seed": seed, "output_dir": out, "stage": stages}, self.tmp)

    def test_empty_pipeline(self):
        cfg = self.config([])
        manifest = run(cfg)

        self.assertEqual([], manifest.artifacts)
        self.assertTrue(os.path.exists(os.path.join(cfg.output_dir, MANIFEST_NAME)))
        self.assertEqual([SUMMARY_NAME], experiment.emit_report(manifest, cfg.output_dir))
        with open(os.path.join(cfg.output_dir, SUMMARY_NAME)) as fp:
            self.assertEqual("", fp.read())

    def test_generator_and_norm(self):
        cfg = self.config([
            stage("generator", "cantor", depth=2, frequency=True),
            stage("fup-norm", "norm", input="cantor", N=9),
        ])
        manifest = run(cfg)

        self.assertTrue(manifest.all_passed)
        self.assertEqual(["gset", "scan"], [a.kind for a in manifest.artifacts])
        self.assertEqual("cantor.gset", manifest.artifacts[0].path)
        entries = experiment.scan_entries(manifest, cfg.output_dir)["norm"]
        self.assertEqual(1, len(entries))
        self.assertEqual(9, entries[0].N)
        self.assertGreater(entries[0].norm, 0)
        self.assertLessEqual(entries[0].norm, 1 + 1e-8)
        s = gridset.load_gridset(os.path.join(cfg.output_dir, "cantor.gset"))
        self.assertEqual(16, s.count)

    def test_manifest_digests(self):
        cfg = self.config([stage("generator", "carpet", family="sierpinski", depth=2)])
        run(cfg)
        path = os.path.join(cfg.output_dir, MANIFEST_NAME)
        loaded = experiment.load_manifest(path)

        self.assertEqual(1, len(loaded.artifacts))
        self.assertFalse(os.path.isabs(loaded.artifacts[0].path))
        digest = experiment.file_digest(os.path.join(cfg.output_dir, "carpet.gset"))
        self.assertEqual(digest, loaded.artifacts[0].sha256)

        with open(os.path.join(cfg.output_dir, "carpet.gset"), "ab") as fp:
            fp.write(b"\0")
        with self.assertRaises(FupLabFormatError):
            experiment.load_manifest(path)

    def test_malformed_manifest(self):
        path = os.path.join(self.tmp, MANIFEST_NAME)
        with open(path, "w") as fp:
            json.dump({"name": "x"}, fp)
        with self.assertRaises(FupLabFormatError):
            experiment.load_manifest(path)

    def test_determinism(self):
        stages = [
            stage("generator", "dust", family="box-porous", dim=2, base=3, depth=3),
            stage("fup-norm", "norm", input="dust"),
        ]
        first = run(self.config(stages, out="first"))
        second = run(self.config(stages, out="second"))

        self.assertEqual([a.sha256 for a in first.artifacts], [a.sha256 for a in second.artifacts])
        self.assertEqual(first.stages[1].values, second.stages[1].values)

    def test_failure_halts(self):
        cfg = self.config([
            stage("generator", "cantor", depth=2, frequency=True),
            stage("weight-build", "weight", input="cantor"),
            stage("modify", "modified", input="weight"),
        ])
        manifest = run(cfg)

        self.assertFalse(manifest.all_passed)
        self.assertEqual([STATUS_PASSED, STATUS_FAILED, STATUS_SKIPPED], [s.status for s in manifest.stages])
        self.assertIn("alpha", manifest.stages[1].error)
        self.assertEqual(["cantor.gset"], [a.path for a in manifest.artifacts])

        experiment.emit_report(manifest, cfg.output_dir)
        with open(os.path.join(cfg.output_dir, SUMMARY_NAME)) as fp:
            summary = fp.read()
        self.assertIn(STATUS_FAILED, summary)
        self.assertIn(STATUS_SKIPPED, summary)
        self.assertIn("FAILED", summary)

    def test_failed_check_halts(self):
        cfg = self.config([
            stage("fup-scan", "scan", depths=[1, 2, 3], min_beta=10.0),
            stage("generator", "cantor", depth=2, frequency=True),
        ])
        manifest = run(cfg)

        self.assertFalse(manifest.all_passed)
        self.assertEqual([STATUS_FAILED, STATUS_SKIPPED], [s.status for s in manifest.stages])
        self.assertIs(False, manifest.stages[0].passed)
        self.assertIsNone(manifest.stages[0].error)
        self.assertNotIn("cantor.gset", [a.path for a in manifest.artifacts])
        self.assertFalse(os.path.exists(os.path.join(cfg.output_dir, "cantor.gset")))

    def test_scan_report(self):
        cfg = self.config([stage("fup-scan", "scan", depths=[1, 2, 3], min_beta=-10.0)])
        manifest = run(cfg)
        written = experiment.emit_report(manifest, cfg.output_dir)

        self.assertTrue(manifest.all_passed)
        self.assertEqual(["scan", "fit"], [a.kind for a in manifest.artifacts])
        self.assertIn("scan.loglog.csv", written)
        with open(os.path.join(cfg.output_dir, "scan.loglog.csv"), newline="") as fp:
            rows = list(csv.DictReader(fp))
        self.assertEqual(3, len(rows))
        self.assertTrue(manifest.stages[0].values["within_trivial_bound"])

    def test_rehearsal(self):
        cfg = self.config([
            stage("generator", "dust", depth=4),
            stage("porosity", "porous", input="dust", shape="line", a0=0.025, a1=1.0),
            stage("generator", "frequencies", depth=5, frequency=True),
            stage("weight-build", "weight", input="frequencies", nu=0.1, mu=14.142135623730951, alpha=0.8),
            stage("modify", "modified", input="weight"),
            stage("psh-check", "psh", input="modified", count=20, hilbert_lines=4),
            stage("fup-scan", "scan", depths=[1, 2, 3], min_beta=-10.0),
        ])
        manifest = run(cfg)

        for record in manifest.stages:
            self.assertEqual(STATUS_PASSED, record.status, msg=f"{record.name}: {record.error}")
            self.assertIsNot(record.passed, False, msg=record.name)
        self.assertTrue(manifest.all_passed)

        written = experiment.emit_report(manifest, cfg.output_dir)
        self.assertIn("psh.eigenvalues.csv", written)
        with open(os.path.join(cfg.output_dir, "psh.cert.json")) as fp:
            cert = json.load(fp)
        self.assertTrue(cert["passed"])
        self.assertIsNotNone(cert["scan"])
        loaded = experiment.load_manifest(os.path.join(cfg.output_dir, MANIFEST_NAME))
        self.assertEqual(len(manifest.artifacts), len(loaded.artifacts))


if __name__ == '__main__':
    unittest.main()
