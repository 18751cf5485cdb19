"""
Tests for the codebooks and the five quantizers.
"""

import sys
from pathlib import Path
import unittest

import numpy as np

# Add the src directory to the path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from ibq_lab.core import ConfigError, ContractError, DimensionError, DType, NumericError, Rng, Stream, Tape, Tensor
from ibq_lab.core.nn import parameter
from ibq_lab.core.tensor import mul, sum as tsum
from ibq_lab.quantizers import (Codebook, LfqCodebook, QuantizerKind, QuantizerSettings, build_codebook,
                                ibq_quantize, lfq_quantize, naive_vq_quantize, nearest_codes, quantize,
                                softvq_quantize, softvq_temperature, straight_through_index, vqgan_quantize)


def features(rng, batch, dim):
    return Tensor(rng.normal_array((batch, dim)), dtype=DType.F32, requires_grad=True)


def brute_nearest(z, embeddings):
    """Lowest-index argmin of |z - c|^2 over every code, evaluated in float64."""
    diff = np.asarray(z, dtype=np.float64)[:, None, :] - np.asarray(embeddings, dtype=np.float64)[None, :, :]
    return np.argmin((diff ** 2).sum(axis=2), axis=1)


def backward_through(call, w, with_quant_loss=False):
    """Quantize on a fresh tape and backpropagate <w, z_q> (plus the quantization loss)."""
    with Tape() as tape:
        out = call()
        loss = tsum(mul(out.z_q, w))
        if with_quant_loss:
            loss = loss + out.quant_loss
        tape.backward(loss)
    return out


class TestIbq(unittest.TestCase):
    """Index backpropagation quantization."""

    def setUp(self):
        """Set up a codebook, features and a projection direction."""
        rng = Rng(0, Stream.CHECK)
        self.codebook = Codebook(rng, 32, 4)
        self.z = features(rng, 16, 4)
        self.w = Tensor(rng.normal_array((16, 4)), dtype=DType.F32)

    def test_forward_is_selected_code(self):
        out = ibq_quantize(self.z, self.codebook)
        emb = self.codebook.embeddings.data
        np.testing.assert_array_equal(out.indices, np.argmax(self.z.data @ emb.T, axis=1))
        np.testing.assert_array_equal(out.z_q.data, emb[out.indices])

    def test_every_code_receives_gradient(self):
        """The z_q path alone reaches every codebook row."""
        backward_through(lambda: ibq_quantize(self.z, self.codebook), self.w)
        grad = self.codebook.embeddings.grad
        self.assertTrue(np.all(np.any(grad != 0, axis=1)))
        self.assertTrue(np.any(self.z.grad != 0))

    def test_soft_distribution_and_losses(self):
        out = ibq_quantize(self.z, self.codebook)
        np.testing.assert_allclose(out.soft.data.sum(axis=1), np.ones(16), rtol=1e-5)
        self.assertEqual(out.quant_loss.ndim, 0)
        self.assertIsNotNone(out.entropy_parts)

    def test_equal_norm_codebook_selects_nearest(self):
        """With codes of equal norm the largest dot product is the nearest code."""
        eye = np.eye(4)
        self.codebook.embeddings = parameter(np.concatenate([eye, -eye]))
        out = ibq_quantize(self.z, self.codebook)
        np.testing.assert_array_equal(out.indices, brute_nearest(self.z.data, self.codebook.embeddings.data))

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            ibq_quantize(Tensor(np.ones((2, 3)), dtype=DType.F32), self.codebook)

    def test_straight_through_index_requires_one_hot(self):
        soft = Tensor(np.full((2, 2), 0.5))
        with self.assertRaises(ContractError):
            straight_through_index(Tensor(np.array([[1.0, 1.0], [0.0, 1.0]])), soft)


class TestNearestNeighbourQuantizers(unittest.TestCase):
    """Naive VQ and VQGAN."""

    def setUp(self):
        """Set up a codebook, features and a projection direction."""
        rng = Rng(1, Stream.CHECK)
        self.codebook = Codebook(rng, 32, 4)
        self.codebook.embeddings = parameter(rng.normal_array((32, 4)))
        self.z = features(rng, 16, 4)
        self.w = Tensor(rng.normal_array((16, 4)), dtype=DType.F32)

    def selected_rows(self, out):
        return np.unique(out.indices)

    def test_nearest_code_selection(self):
        out = vqgan_quantize(self.z, self.codebook)
        np.testing.assert_array_equal(out.indices, brute_nearest(self.z.data, self.codebook.embeddings.data))
        np.testing.assert_array_equal(out.z_q.data, self.codebook.embeddings.data[out.indices])

    def test_selection_matches_brute_force_at_large_norms(self):
        """Features far from the origin, some of them exact copies of code rows."""
        for seed in range(4):
            with self.subTest(seed=seed):
                rng = Rng(seed, Stream.CHECK)
                codebook = Codebook(rng, 64, 8)
                codebook.embeddings = parameter(100.0 + rng.normal_array((64, 8)))
                emb = codebook.embeddings.data
                z = (100.0 + rng.normal_array((24, 8))).astype(np.float32)
                z[:8] = emb[[3, 9, 17, 20, 33, 41, 50, 63]]
                z = Tensor(z, dtype=DType.F32)
                for fn in (naive_vq_quantize, vqgan_quantize):
                    out = fn(z, codebook)
                    np.testing.assert_array_equal(out.indices, brute_nearest(z.data, emb))
                    np.testing.assert_array_equal(out.indices[:8], [3, 9, 17, 20, 33, 41, 50, 63])

    def test_exact_row_beats_close_lower_row(self):
        row = np.full(8, 100.0, dtype=np.float32)
        near = row.copy()
        near[0] += np.float32(1e-3)
        self.codebook.embeddings = parameter(np.stack([near, row, -row]))
        z = Tensor(row[None, :], dtype=DType.F32)
        for fn in (naive_vq_quantize, vqgan_quantize):
            with self.subTest(fn=fn.__name__):
                self.assertEqual(fn(z, self.codebook).indices.tolist(), [1])
        self.assertEqual(nearest_codes(row[None, :], np.stack([near, row])).tolist(), [1])

    def test_ties_pick_lowest_index(self):
        codes = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        self.assertEqual(nearest_codes(np.array([[0.0, 0.0], [2.0, 0.0]]), codes).tolist(), [0, 0])

    def test_naive_truncates_encoder(self):
        """Naive VQ: z_q carries no gradient and the loss reaches only the selected rows."""
        with Tape() as tape:
            out = naive_vq_quantize(self.z, self.codebook)
            self.assertFalse(out.z_q.requires_grad)
            tape.backward(out.quant_loss)
        touched = np.flatnonzero(np.any(self.codebook.embeddings.grad != 0, axis=1))
        np.testing.assert_array_equal(touched, self.selected_rows(out))
        self.assertTrue(self.z.grad is None or not self.z.grad.any())

    def test_vqgan_straight_through(self):
        """VQGAN: the encoder gets the decoder gradient unchanged, the codebook gets none from z_q."""
        backward_through(lambda: vqgan_quantize(self.z, self.codebook), self.w)
        np.testing.assert_array_equal(self.z.grad, self.w.data)
        grad = self.codebook.embeddings.grad
        self.assertTrue(grad is None or not grad.any())

    def test_vqgan_quant_loss_reaches_selected_rows(self):
        out = backward_through(lambda: vqgan_quantize(self.z, self.codebook), self.w, with_quant_loss=True)
        touched = np.flatnonzero(np.any(self.codebook.embeddings.grad != 0, axis=1))
        np.testing.assert_array_equal(touched, self.selected_rows(out))


class TestLfq(unittest.TestCase):
    """Lookup-free quantization."""

    def test_sign_code_and_index(self):
        """Zero maps to -1; bit i of the index is set when dimension i is positive."""
        z = Tensor(np.array([[0.5, -0.2, 0.0], [-1.0, 2.0, 3.0]]), dtype=DType.F32, requires_grad=True)
        out = lfq_quantize(z, LfqCodebook(3))
        np.testing.assert_array_equal(out.z_q.data, [[1, -1, -1], [-1, 1, 1]])
        np.testing.assert_array_equal(out.indices, [1, 6])
        codes = LfqCodebook(3).codes()
        np.testing.assert_array_equal(codes[out.indices], out.z_q.data)

    def test_straight_through(self):
        rng = Rng(2, Stream.CHECK)
        z = features(rng, 8, 5)
        w = Tensor(rng.normal_array((8, 5)), dtype=DType.F32)
        backward_through(lambda: lfq_quantize(z, LfqCodebook(5)), w)
        np.testing.assert_array_equal(z.grad, w.data)

    def test_size_must_match_dimension(self):
        with self.assertRaises(ConfigError):
            build_codebook(QuantizerKind.LFQ, Rng(0), 100, 6)
        with self.assertRaises(ConfigError):
            LfqCodebook(21)
        self.assertEqual(build_codebook(QuantizerKind.LFQ, Rng(0), 64, 6).size, 64)


class TestSoftVq(unittest.TestCase):
    """Soft vector quantization and its temperature schedule."""

    def setUp(self):
        """Set up a codebook and features."""
        rng = Rng(3, Stream.CHECK)
        self.codebook = Codebook(rng, 16, 4)
        self.codebook.embeddings = parameter(rng.normal_array((16, 4)))
        self.z = features(rng, 8, 4)

    def test_training_is_weighted_average(self):
        tau = 0.5
        out = softvq_quantize(self.z, self.codebook, tau)
        emb = self.codebook.embeddings.data.astype(np.float64)
        logits = self.z.data.astype(np.float64) @ emb.T / tau
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(out.z_q.data, p @ emb, rtol=1e-4, atol=1e-5)
        self.assertFalse(out.hard_inference)

    def test_inference_is_hard(self):
        out = quantize(QuantizerKind.SOFTVQ, self.z, self.codebook, QuantizerSettings(tau=0.5, training=False))
        self.assertTrue(out.hard_inference)
        np.testing.assert_array_equal(out.z_q.data, self.codebook.embeddings.data[out.indices])

    def test_low_temperature_approaches_hard_code(self):
        out = softvq_quantize(self.z, self.codebook, 1e-6)
        hard = self.codebook.embeddings.data[out.indices]
        self.assertLess(float(np.abs(out.z_q.data - hard).max()), 1e-4)

    def test_train_inference_mismatch(self):
        """At a moderate temperature the weighted average differs from the selected code."""
        soft = softvq_quantize(self.z, self.codebook, 0.5)
        hard = softvq_quantize(self.z, self.codebook, 0.5, training=False)
        np.testing.assert_array_equal(soft.indices, hard.indices)
        self.assertGreater(float(np.abs(soft.z_q.data - hard.z_q.data).max()), 0.0)

    def test_every_code_receives_gradient(self):
        backward_through(lambda: softvq_quantize(self.z, self.codebook, 1.0), Tensor(np.ones((8, 4)), dtype=DType.F32))
        self.assertTrue(np.all(np.any(self.codebook.embeddings.grad != 0, axis=1)))

    def test_non_positive_temperature(self):
        with self.assertRaises(NumericError):
            softvq_quantize(self.z, self.codebook, 0.0)

    def test_temperature_schedule(self):
        self.assertAlmostEqual(softvq_temperature(0, 10, 0.9, 1e-6), 0.9)
        self.assertAlmostEqual(softvq_temperature(10, 10, 0.9, 1e-6), 1e-6)
        self.assertAlmostEqual(softvq_temperature(5, 10, 0.9, 0.1), 0.5)
        with self.assertRaises(ContractError):
            softvq_temperature(11, 10)


class TestQuantizerKind(unittest.TestCase):
    """Kind flags and dispatch."""

    def test_flags(self):
        self.assertTrue(QuantizerKind.IBQ.has_soft)
        self.assertFalse(QuantizerKind.VQGAN.has_soft)
        self.assertFalse(QuantizerKind.LFQ.learnable_codebook)

    def test_dispatch_matches_direct_call(self):
        rng = Rng(4, Stream.CHECK)
        codebook = Codebook(rng, 8, 3)
        z = features(rng, 5, 3)
        for kind, fn in ((QuantizerKind.IBQ, ibq_quantize), (QuantizerKind.VQGAN, vqgan_quantize),
                         (QuantizerKind.NAIVE, naive_vq_quantize)):
            with self.subTest(kind=kind):
                out = quantize(kind, z, codebook)
                self.assertIs(out.kind, kind)
                np.testing.assert_array_equal(out.indices, fn(z, codebook).indices)


if __name__ == "__main__":
    unittest.main()
