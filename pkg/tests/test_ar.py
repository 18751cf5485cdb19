"""
Tests for the class-conditional transformer: building blocks, causality, scaling presets,
training and sampling.
"""

import math
import sys
import tempfile
from pathlib import Path
import unittest

import numpy as np

# Add the src directory to the path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from ibq_lab.ar import (PRESET_DEPTHS, ARConfig, ARModel, ARTrainState, adaln_modulate, ar_config_from_section,
                        ar_forward, ar_param_count, ar_sample, ar_scale_config, ar_step, causal_softmax,
                        check_pipeline, evaluate_ar, ffn_hidden, load_ar, preset, rmsnorm, rope_apply,
                        sample_images, train_ar)
from ibq_lab.config import load_config
from ibq_lab.core import (ConfigError, ContractError, DataError, DimensionError, DType, Rng, Stream, Tensor,
                          grad_check, no_grad)
from ibq_lab.core import tensor as T
from ibq_lab.data import TokenDataset, encode_ppm
from ibq_lab.tokenizer import TokenizerModel


def f64(rng, shape):
    return Tensor(rng.normal_array(shape), dtype=DType.F64)


def tiny(dropout=0.0, seq_len=8):
    return ARConfig(depth=2, width=32, heads=2, vocab_size=16, seq_len=seq_len, num_classes=4, dropout=dropout)


class TestBuildingBlocks(unittest.TestCase):
    """RMSNorm, rotary embeddings and the causal softmax."""

    def setUp(self):
        """Set up a fixed random stream."""
        self.rng = Rng(11, Stream.CHECK)

    def test_rmsnorm_grad_check(self):
        x, gain, direction = f64(self.rng, (2, 3, 6)), f64(self.rng, (6,)), f64(self.rng, (2, 3, 6))
        report = grad_check(lambda x, g: T.sum(rmsnorm(x, g) * direction), [x, gain])
        self.assertTrue(report.passed, str(report))

    def test_rmsnorm_unit_rms(self):
        x = Tensor(np.array([[3.0, -4.0]]), dtype=DType.F64)
        out = rmsnorm(x, Tensor(np.ones(2), dtype=DType.F64), eps=0.0)
        np.testing.assert_allclose(out.data, [[3.0 / math.sqrt(12.5), -4.0 / math.sqrt(12.5)]])

    def test_rope_grad_check(self):
        x, direction = f64(self.rng, (2, 5, 4)), f64(self.rng, (2, 5, 4))
        report = grad_check(lambda x: T.sum(rope_apply(x, np.arange(5)) * direction), x)
        self.assertTrue(report.passed, str(report))

    def test_rope_keeps_norms_and_position_zero(self):
        x = f64(self.rng, (3, 4))
        out = rope_apply(x, np.arange(3)).data
        np.testing.assert_array_equal(out[0], x.data[0])
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.linalg.norm(x.data, axis=1))

    def test_rope_needs_even_head_size(self):
        with self.assertRaises(ConfigError):
            rope_apply(f64(self.rng, (2, 3)), np.arange(2))
        with self.assertRaises(DimensionError):
            rope_apply(f64(self.rng, (2, 4)), np.arange(3))

    def test_adaln_modulate(self):
        x = f64(self.rng, (2, 3, 4))
        zero = Tensor(np.zeros((2, 1, 4)), dtype=DType.F64)
        np.testing.assert_array_equal(adaln_modulate(x, zero, zero).data, x.data)
        shift, scale_ = f64(self.rng, (2, 1, 4)), f64(self.rng, (2, 1, 4))
        np.testing.assert_allclose(adaln_modulate(x, shift, scale_).data, x.data * (1.0 + scale_.data) + shift.data)

    def test_causal_softmax(self):
        scores = f64(self.rng, (2, 4, 4))
        p = causal_softmax(scores).data
        self.assertTrue(np.all(p[..., np.triu_indices(4, k=1)[0], np.triu_indices(4, k=1)[1]] == 0.0))
        np.testing.assert_allclose(p.sum(axis=-1), np.ones((2, 4)))
        self.assertEqual(p[0, 0, 0], 1.0)
        direction = f64(self.rng, (2, 4, 4))
        report = grad_check(lambda s: T.sum(causal_softmax(s) * direction), scores)
        self.assertTrue(report.passed, str(report))


class TestARModel(unittest.TestCase):
    """Shapes, conditioning and the causal mask of the full model."""

    def setUp(self):
        """Set up a small model in evaluation mode and two sequences."""
        self.model = ARModel(tiny(), seed=0)
        self.model.eval()
        self.rng = Rng(3, Stream.CHECK)
        self.tokens = np.array([[1, 5, 7, 2, 0, 15, 9, 3], [4, 4, 4, 4, 8, 8, 8, 8]])
        self.labels = np.array([0, 3])

    def activate(self):
        """Give every AdaLN projection random weights so the blocks stop being identities."""
        for layer in [block.ada for block in self.model.blocks] + [self.model.final_ada]:
            layer.weight.data[...] = 0.1 * self.rng.normal_array(layer.weight.shape)
            layer.bias.data[...] = 0.1 * self.rng.normal_array(layer.bias.shape)

    def test_logit_shapes(self):
        with no_grad():
            logits, nll = ar_forward(self.model, self.tokens, self.labels)
            start = self.model(np.zeros((2, 0), dtype=np.int64), self.labels)
        self.assertEqual(logits.shape, (2, 8, 16))
        self.assertEqual(start.shape, (2, 1, 16))
        self.assertEqual(nll.ndim, 0)

    def test_untrained_nll_is_near_uniform(self):
        with no_grad():
            _, nll = ar_forward(self.model, self.tokens, self.labels)
        self.assertLess(abs(nll.item() - math.log(16)) / math.log(16), 0.15)

    def test_zero_initialised_modulation_ignores_condition(self):
        """At initialisation the AdaLN projections are zero, so conditioning changes nothing."""
        prefix = self.tokens[:, :5]
        with no_grad():
            a = self.model(prefix, self.labels).data
            b = self.model(prefix, self.labels, conditioned=False).data
        np.testing.assert_array_equal(a, b)

    def test_future_tokens_do_not_leak(self):
        """Logits at position i depend only on the class and tokens before i."""
        self.activate()
        changed = self.tokens.copy()
        changed[:, 5:] = (changed[:, 5:] + 1) % 16
        with no_grad():
            a = self.model(self.tokens[:, :-1], self.labels).data
            b = self.model(changed[:, :-1], self.labels).data
        np.testing.assert_allclose(a[:, :6], b[:, :6], rtol=0, atol=1e-6)
        self.assertFalse(np.allclose(a[:, 6:], b[:, 6:]))

    def test_class_changes_predictions(self):
        self.activate()
        with no_grad():
            a = self.model(self.tokens[:, :3], np.array([0, 0])).data
            b = self.model(self.tokens[:, :3], np.array([1, 1])).data
        self.assertFalse(np.allclose(a, b))

    def test_input_checks(self):
        with self.assertRaises(DimensionError):
            ar_forward(self.model, self.tokens[:, :7], self.labels)
        with self.assertRaises(DataError):
            ar_forward(self.model, self.tokens + 16, self.labels)
        with self.assertRaises(DataError):
            ar_forward(self.model, self.tokens, np.array([0, 4]))
        with self.assertRaises(DimensionError):
            self.model(np.zeros((2, 9), dtype=np.int64), self.labels)

    def test_dropout_needs_rng_in_training(self):
        model = ARModel(tiny(dropout=0.1), seed=0)
        with self.assertRaises(ContractError):
            ar_forward(model, self.tokens, self.labels)
        with no_grad():
            a = ar_forward(model, self.tokens, self.labels, Rng(0, Stream.DROPOUT))[1].item()
            b = ar_forward(model, self.tokens, self.labels, Rng(0, Stream.DROPOUT))[1].item()
        self.assertEqual(a, b)


class TestScaling(unittest.TestCase):
    """Depth scaling rule, presets and the closed-form parameter count."""

    def test_param_count_matches_instance(self):
        for depth, heads in ((1, 1), (2, 2), (3, 4)):
            with self.subTest(depth=depth):
                cfg = ARConfig(depth=depth, width=32, heads=heads, vocab_size=16, seq_len=8, num_classes=3)
                self.assertEqual(ar_param_count(cfg), ARModel(cfg).num_parameters())

    def test_ffn_hidden(self):
        self.assertEqual(ffn_hidden(1024), 2816)
        self.assertEqual(ffn_hidden(1280), 3584)
        self.assertEqual(ffn_hidden(32), 256)

    def test_preset_sizes(self):
        self.assertEqual(ar_param_count(preset("IBQ-B")), 342_993_920)
        self.assertEqual(ar_param_count(preset("IBQ-L")), 649_639_680)
        self.assertTrue(1.0e9 < ar_param_count(preset("IBQ-XL")) < 1.2e9)
        self.assertTrue(2.0e9 < ar_param_count(preset("IBQ-XXL")) < 2.2e9)
        counts = [ar_param_count(preset(name)) for name in PRESET_DEPTHS]
        self.assertEqual(counts, sorted(counts))

    def test_scaling_rule(self):
        cfg = ar_scale_config(24)
        self.assertEqual((cfg.width, cfg.heads, cfg.head_dim), (1536, 24, 64))
        with self.assertRaises(ConfigError):
            preset("IBQ-XS")
        with self.assertRaises(ConfigError):
            ar_scale_config(0)

    def test_section_overrides_and_vocab_check(self):
        section = load_config(overrides=["ar.width=48", "ar.heads=3"]).ar
        cfg = ar_config_from_section(section, vocab_size=16, seq_len=8, num_classes=2)
        self.assertEqual((cfg.depth, cfg.width, cfg.heads), (2, 48, 3))
        section = load_config(overrides=["ar.vocab_size=32"]).ar
        with self.assertRaises(ConfigError):
            ar_config_from_section(section, vocab_size=16, seq_len=8, num_classes=2)

    def test_odd_head_size_rejected(self):
        with self.assertRaises(ConfigError):
            ARConfig(depth=1, width=30, heads=2, vocab_size=4, seq_len=4, num_classes=1)


class TestARTraining(unittest.TestCase):
    """Optimisation steps and the epoch loop."""

    def setUp(self):
        """Set up four fixed sequences, one per class."""
        rng = Rng(5, Stream.DATA)
        self.tokens = TokenDataset(rng.integers(16, 32).reshape(4, 8), np.arange(4), vocab_size=16, num_classes=4)

    def test_memorises_a_few_sequences(self):
        cfg = load_config(overrides=["ar.lr=0.003", "ar.dropout=0.0", "ar.weight_decay=0.0"])
        state = ARTrainState.create(cfg, tiny(), total_steps=200)
        for _ in range(200):
            ar_step(state, self.tokens.tokens, self.tokens.labels)
        self.assertLess(evaluate_ar(state.model, self.tokens), 0.5 * math.log(16))
        self.assertEqual(state.step, 200)

    def run_config(self, root):
        return load_config(overrides=["ar.epochs=2", "ar.batch=2", "ar.width=32", "ar.heads=2",
                                      "ar.held_out=0.25", f"output.dir={root}"])

    def repeated(self):
        return TokenDataset(np.tile(self.tokens.tokens, (2, 1)), np.tile(self.tokens.labels, 2),
                            vocab_size=16, num_classes=4)

    def assertSameRun(self, a, b):
        (ma, _), (mb, _) = load_ar(a.checkpoint), load_ar(b.checkpoint)
        for (name, p), (_, q) in zip(ma.named_parameters(), mb.named_parameters()):
            np.testing.assert_array_equal(p.data, q.data, err_msg=name)
        self.assertEqual(a.metrics.read_text(encoding="utf-8"), b.metrics.read_text(encoding="utf-8"))

    def test_same_seed_is_deterministic(self):
        with tempfile.TemporaryDirectory() as tmp:
            a = train_ar(self.run_config(Path(tmp) / "a"), tokens=self.repeated())
            b = train_ar(self.run_config(Path(tmp) / "b"), tokens=self.repeated())
            self.assertSameRun(a, b)

    def test_resume_is_exact(self):
        """Stopping after one epoch and resuming matches an uninterrupted run, dropout included."""
        with tempfile.TemporaryDirectory() as tmp:
            full = train_ar(self.run_config(Path(tmp) / "full"), tokens=self.repeated())
            train_ar(self.run_config(Path(tmp) / "split"), tokens=self.repeated(), stop_after=1)
            split = train_ar(self.run_config(Path(tmp) / "split"), tokens=self.repeated(), resume=True)
            self.assertEqual(len(split.rows), 1)
            self.assertSameRun(full, split)

    def test_train_ar_writes_checkpoint_and_log(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = load_config(overrides=["ar.epochs=2", "ar.batch=2", "ar.width=32", "ar.heads=2",
                                         "ar.held_out=0.25", f"output.dir={tmp}"])
            data = TokenDataset(np.tile(self.tokens.tokens, (2, 1)), np.tile(self.tokens.labels, 2),
                                vocab_size=16, num_classes=4)
            result = train_ar(cfg, tokens=data)
            self.assertEqual(len(result.rows), 2)
            self.assertTrue(result.checkpoint.exists())
            header = result.metrics.read_text(encoding="utf-8").split("\n")[0]
            self.assertEqual(header, "step,epoch,lr,nll_train,nll_eval")
            model, ckpt = load_ar(result.checkpoint)
            self.assertEqual((model.config.vocab_size, model.config.seq_len), (16, 8))
            self.assertEqual(ckpt.counter("epoch"), 2)
            self.assertFalse(model.training)

    def test_vocabulary_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = load_config(overrides=["ar.vocab_size=32", f"output.dir={tmp}"])
            with self.assertRaises(ConfigError):
                train_ar(cfg, tokens=self.tokens)


class TestSampling(unittest.TestCase):
    """Token sampling and the tokenizer handshake."""

    def setUp(self):
        """Set up a small untrained model."""
        self.model = ARModel(tiny(), seed=1)

    def test_top_one_is_greedy(self):
        a = ar_sample(self.model, [0, 1, 2], top_k=1, seed=0)
        b = ar_sample(self.model, [0, 1, 2], top_k=1, seed=99)
        self.assertEqual(a.shape, (3, 8))
        np.testing.assert_array_equal(a, b)

    def test_seeded_sampling_is_reproducible(self):
        a = ar_sample(self.model, 2, temperature=1.5, seed=4)
        b = ar_sample(self.model, 2, temperature=1.5, seed=4)
        np.testing.assert_array_equal(a, b)
        self.assertTrue(a.min() >= 0 and a.max() < 16)
        self.assertTrue(self.model.training)

    def test_argument_checks(self):
        with self.assertRaises(ContractError):
            ar_sample(self.model, 0, temperature=0.0)
        with self.assertRaises(ContractError):
            ar_sample(self.model, 0, top_k=17)

    def test_sampled_images_are_byte_identical(self):
        tcfg = load_config(overrides=["data.size=8", "tokenizer.downsample=2", "tokenizer.channels=8",
                                      "tokenizer.code_dim=4", "tokenizer.codebook_size=16"]).tokenizer
        tokenizer = TokenizerModel(tcfg, 8, seed=0)
        model = ARModel(tiny(seq_len=16), seed=1)
        first, second = (sample_images(tokenizer, model, [1, 2, 3], temperature=1.0, top_k=4, seed=7)
                         for _ in range(2))
        self.assertEqual([encode_ppm(image) for image in first], [encode_ppm(image) for image in second])

    def test_pipeline_mismatch(self):
        tcfg = load_config(overrides=["data.size=8", "tokenizer.downsample=2", "tokenizer.channels=8",
                                      "tokenizer.code_dim=4", "tokenizer.codebook_size=16"]).tokenizer
        tokenizer = TokenizerModel(tcfg, 8, seed=0)
        with self.assertRaises(ConfigError):
            check_pipeline(tokenizer, self.model)
        check_pipeline(tokenizer, ARModel(tiny(seq_len=16)))


if __name__ == "__main__":
    unittest.main()
