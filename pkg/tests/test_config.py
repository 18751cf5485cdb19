"""
Tests for run configuration loading and checkpoints.
"""

import os
import sys
import tempfile
from pathlib import Path
import unittest
from unittest import mock

import numpy as np

# Add the src directory to the path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from ibq_lab.checkpoint import Checkpoint, save_checkpoint
from ibq_lab.config import (RESOLVED_NAME, config_from_yaml, config_to_yaml, load_config, override,
                            save_resolved)
from ibq_lab.core import Adam, ArchiveError, ConfigError, Rng, Tensor
from ibq_lab.core.nn import Linear
from ibq_lab.data import DataSource, archive_save
from ibq_lab.losses import ReconKind
from ibq_lab.quantizers import QuantizerKind

CONFIGS = Path(__file__).parent.parent / "configs"


class TestLoadConfig(unittest.TestCase):
    """Schema merging and semantic validation."""

    def setUp(self):
        """Set up a temporary folder for config files."""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.root / "run.yaml"
        path.write_text(text, encoding="utf-8")
        return path

    def test_defaults(self):
        cfg = load_config()
        self.assertIs(cfg.tokenizer.quantizer, QuantizerKind.IBQ)
        self.assertIs(cfg.data.source, DataSource.SYNTHETIC)
        self.assertEqual(cfg.tokenizer.codebook_size, 256)
        self.assertEqual(cfg.optim.milestones, [0.8])

    def test_bundled_configs(self):
        cfg = load_config(CONFIGS / "ibq_small.yaml")
        self.assertEqual(cfg.data.size // cfg.tokenizer.downsample, 8)
        self.assertIs(cfg.tokenizer.recon, ReconKind.MSE)
        ar = load_config(CONFIGS / "ar_small.yaml")
        self.assertEqual(ar.ar.depth, 2)
        self.assertEqual(ar.ar.top_k, 0)

    def test_enum_by_member_name_and_overrides(self):
        path = self.write("tokenizer:\n  quantizer: VQGAN\n  recon: L1\n")
        cfg = load_config(path, ["optim.epochs=3", "tokenizer.beta=0.5"])
        self.assertIs(cfg.tokenizer.quantizer, QuantizerKind.VQGAN)
        self.assertIs(cfg.tokenizer.recon, ReconKind.L1)
        self.assertEqual(cfg.optim.epochs, 3)
        self.assertEqual(cfg.tokenizer.beta, 0.5)

    def test_unknown_key_is_named(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(self.write("tokenizer:\n  bogus_key: 1\n"))
        self.assertIn("bogus_key", str(ctx.exception))

    def test_wrong_type(self):
        with self.assertRaises(ConfigError):
            load_config(self.write("optim:\n  epochs: many\n"))
        with self.assertRaises(ConfigError):
            load_config(self.write("tokenizer:\n  quantizer: PQ\n"))

    def test_semantic_checks(self):
        cases = {
            "tokenizer.downsample": "tokenizer:\n  downsample: 3\n",
            "data.size": "data:\n  size: 30\ntokenizer:\n  downsample: 4\n",
            "2**code_dim": "tokenizer:\n  quantizer: LFQ\n  code_dim: 8\n  codebook_size: 100\n",
            "optim.milestones": "optim:\n  milestones: [0.9, 0.5]\n",
            "data.path": "data:\n  source: FOLDER\n  path: /no/such/folder\n",
            "ar.width": "ar:\n  depth: 3\n  width: 100\n",
            "tokenizer.codebook_size": "tokenizer:\n  codebook_size: 1\n",
        }
        for key, text in cases.items():
            with self.subTest(key=key):
                with self.assertRaises(ConfigError) as ctx:
                    load_config(self.write(text))
                self.assertIn(key.split(".")[-1], str(ctx.exception))

    def test_lfq_accepts_matching_size(self):
        cfg = load_config(self.write("tokenizer:\n  quantizer: LFQ\n  code_dim: 8\n  codebook_size: 256\n"))
        self.assertIs(cfg.tokenizer.quantizer, QuantizerKind.LFQ)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config(self.root / "absent.yaml")

    def test_output_dir_from_environment(self):
        with mock.patch.dict(os.environ, {"IBQ_LAB_OUTPUT": str(self.root / "out")}):
            cfg = load_config()
        self.assertEqual(cfg.output_dir, self.root / "out")

    def test_command_line_overrides(self):
        cfg = override(load_config(), seed=5, deterministic=False)
        self.assertEqual((cfg.seed, cfg.data.seed, cfg.deterministic), (5, 5, False))

    def test_resolved_config_round_trip(self):
        """The echoed YAML rebuilds an identical config."""
        cfg = load_config(self.write("tokenizer:\n  quantizer: SOFTVQ\n"), [f"output.dir={self.root}"])
        path = save_resolved(cfg)
        self.assertEqual(path, self.root / RESOLVED_NAME)
        self.assertEqual(config_from_yaml(path.read_text(encoding="utf-8")), cfg)
        self.assertIn("quantizer: SOFTVQ", config_to_yaml(cfg))


class TestCheckpoint(unittest.TestCase):
    """Parameters, optimizer moments, counters and the embedded config."""

    def setUp(self):
        """Set up a small layer with one optimizer step taken."""
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "last.ibqa"
        self.cfg = load_config(overrides=["seed=11"])
        self.layer = Linear(Rng(0), 3, 2)
        self.optim = Adam(self.layer.parameters(), lr=0.01)
        for p in self.layer.parameters().values():
            p.grad = np.ones_like(p.data)
        self.optim.step()

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        save_checkpoint(self.path, self.cfg, self.layer, self.optim, {"step": 7, "epoch": 2})
        ckpt = Checkpoint(self.path)
        self.assertEqual(ckpt.config.seed, 11)
        self.assertEqual((ckpt.counter("step"), ckpt.counter("epoch"), ckpt.counter("missing", 4)), (7, 2, 4))
        restored = ckpt.load_model(Linear(Rng(1), 3, 2))
        np.testing.assert_array_equal(restored.weight.data, self.layer.weight.data)
        optim = ckpt.load_optimizer(Adam(restored.parameters(), lr=0.01))
        self.assertEqual(optim.state.step, 1)
        np.testing.assert_array_equal(optim.state.m["weight"], self.optim.state.m["weight"])

    def test_not_a_checkpoint(self):
        archive_save(self.path, {"x": np.zeros(1)})
        with self.assertRaises(ArchiveError):
            Checkpoint(self.path)

    def test_missing_optimizer_state(self):
        save_checkpoint(self.path, self.cfg, self.layer)
        with self.assertRaises(ArchiveError):
            Checkpoint(self.path).load_optimizer(Adam(self.layer.parameters()))

    def test_parameter_values_are_inputs(self):
        x = Tensor(np.ones((1, 3), dtype=np.float32))
        save_checkpoint(self.path, self.cfg, self.layer)
        restored = Checkpoint(self.path).load_model(Linear(Rng(5), 3, 2))
        np.testing.assert_array_equal(restored(x).data, self.layer(x).data)


if __name__ == "__main__":
    unittest.main()
