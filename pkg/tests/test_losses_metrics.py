"""
Tests for the stage-1 loss terms and the codebook / reconstruction metrics.
"""

import csv
import math
import sys
import tempfile
from pathlib import Path
import unittest

import numpy as np

# Add the src directory to the path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from ibq_lab.core import ContractError, DimensionError, DType, NumericError, Rng, Stream, Tape, Tensor
from ibq_lab.core.nn import parameter
from ibq_lab.losses import (LossWeights, ReconKind, assemble_loss, double_quant_loss, entropy_penalty,
                            reconstruction_loss, vq_commit_loss)
from ibq_lab.metrics import (UsageAccumulator, codebook_usage, distribution_gap, export_embeddings_csv, psnr)
from ibq_lab.quantizers import Codebook, ibq_quantize, vqgan_quantize


class TestLosses(unittest.TestCase):
    """Reconstruction, entropy and the weighted sum."""

    def setUp(self):
        """Set up a pair of images that differ by 0.5 in every pixel."""
        self.x = Tensor(np.zeros((2, 3, 4, 4)))
        self.x_hat = Tensor(np.full((2, 3, 4, 4), 0.5))

    def test_reconstruction_kinds(self):
        self.assertAlmostEqual(reconstruction_loss(self.x_hat, self.x).item(), 0.25)
        self.assertAlmostEqual(reconstruction_loss(self.x_hat, self.x, ReconKind.L1).item(), 0.5)

    def test_reconstruction_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            reconstruction_loss(self.x_hat, Tensor(np.zeros((2, 3, 4, 5))))

    def test_entropy_of_uniform_rows_is_zero(self):
        """Uniform rows: per-sample and batch entropy are both ln K."""
        loss, parts = entropy_penalty(Tensor(np.full((4, 8), 1.0 / 8)))
        self.assertAlmostEqual(parts.per_sample, math.log(8), places=6)
        self.assertAlmostEqual(parts.batch, math.log(8), places=6)
        self.assertAlmostEqual(loss.item(), 0.0, places=6)

    def test_entropy_of_spread_one_hot_rows(self):
        """Confident rows spread over every code reach the minimum -ln K."""
        loss, parts = entropy_penalty(Tensor(np.eye(8)))
        self.assertAlmostEqual(parts.per_sample, 0.0, places=6)
        self.assertAlmostEqual(loss.item(), -math.log(8), places=6)

    def test_entropy_needs_normalized_rows(self):
        with self.assertRaises(ContractError):
            entropy_penalty(Tensor(np.full((2, 4), 0.5)))

    def test_assemble_loss(self):
        recon = Tensor(np.array(2.0))
        quant = Tensor(np.array(3.0))
        entropy = Tensor(np.array(-1.0))
        bundle = assemble_loss(recon, quant, entropy, LossWeights(recon=1.0, quant=0.5, entropy=0.1))
        self.assertAlmostEqual(bundle.total.item(), 2.0 + 1.5 - 0.1)
        self.assertEqual(set(bundle.values()), {"loss_total", "loss_recon", "loss_quant", "loss_entropy"})
        self.assertEqual(assemble_loss(recon, quant).entropy.item(), 0.0)

    def test_negative_weight_rejected(self):
        with self.assertRaises(ContractError):
            assemble_loss(Tensor(np.array(1.0)), Tensor(np.array(1.0)), weights=LossWeights(entropy=-1.0))


class TestQuantizationLosses(unittest.TestCase):
    """Double quantization loss and the VQ codebook/commitment loss."""

    def setUp(self):
        """Set up an f64 codebook."""
        self.rng = Rng(21, Stream.CHECK)
        self.codebook = Codebook(self.rng, 32, 6)
        self.codebook.embeddings = parameter(self.rng.normal_array((32, 6)), dtype=DType.F64)

    def features(self, batch=8):
        return Tensor(self.rng.normal_array((batch, 6)), dtype=DType.F64, requires_grad=True)

    def test_double_quant_loss_matches_direct_evaluation(self):
        """On the forward value z_q equals the selected code, so the loss is (2 + beta) * mse."""
        emb = self.codebook.embeddings.data
        for beta in (0.0, 0.25, 1.0):
            for _ in range(10):
                z = self.features()
                out = ibq_quantize(z, self.codebook, beta=beta)
                selected = emb[np.argmax(z.data @ emb.T, axis=1)]
                direct = (2.0 + beta) * np.mean((z.data - selected) ** 2)
                self.assertAlmostEqual(double_quant_loss(z, out, beta).item() / direct, 1.0, places=9)

    def test_double_quant_loss_is_zero_on_a_code(self):
        eye = np.eye(6)
        self.codebook.embeddings = parameter(np.concatenate([eye, -eye]), dtype=DType.F64)
        z = Tensor(eye[[0, 3]] * np.array([[1.0], [-1.0]]), dtype=DType.F64, requires_grad=True)
        out = ibq_quantize(z, self.codebook)
        self.assertEqual(double_quant_loss(z, out).item(), 0.0)

    def test_commit_loss_gradients(self):
        """Codebook term moves only the selected codes; the encoder only feels beta times the error."""
        z = self.features()
        beta = 0.25
        with Tape() as tape:
            out = vqgan_quantize(z, self.codebook, beta=beta)
            loss = vq_commit_loss(z, out, beta)
            tape.backward(loss)
        q = self.codebook.embeddings.data[out.indices]
        n = z.data.size
        self.assertAlmostEqual(loss.item(), (1.0 + beta) * np.mean((z.data - q) ** 2))
        np.testing.assert_allclose(z.grad, beta * 2.0 * (z.data - q) / n, rtol=1e-12)
        untouched = np.setdiff1d(np.arange(32), out.indices)
        self.assertFalse(self.codebook.embeddings.grad[untouched].any())

    def test_losses_need_hard_codes(self):
        out = ibq_quantize(self.features(), self.codebook)
        out.z_hard = None
        with self.assertRaises(ContractError):
            vq_commit_loss(self.features(), out)


class TestUsage(unittest.TestCase):
    """Codebook usage and perplexity."""

    def test_usage_and_perplexity(self):
        stats = codebook_usage(np.array([0, 0, 1, 3]), 4)
        self.assertEqual(stats.used, 3)
        self.assertAlmostEqual(stats.usage, 0.75)
        self.assertAlmostEqual(stats.perplexity, 2 ** 1.5, places=6)

    def test_uniform_usage_perplexity_is_k(self):
        stats = codebook_usage([np.arange(16), np.arange(16)], 16)
        self.assertAlmostEqual(stats.usage, 1.0)
        self.assertAlmostEqual(stats.perplexity, 16.0, places=6)

    def test_merge_is_order_free(self):
        parts = [np.array([0, 1]), np.array([1, 2, 2]), np.array([5])]
        accs = []
        for indices in parts:
            acc = UsageAccumulator(6)
            acc.update(indices)
            accs.append(acc)
        left = accs[0].merge(accs[1]).merge(accs[2])
        right = accs[2].merge(accs[1].merge(accs[0]))
        np.testing.assert_array_equal(left.counts, right.counts)
        self.assertEqual(left.total, 6)

    def test_errors(self):
        with self.assertRaises(ContractError):
            codebook_usage(np.array([], dtype=np.int64), 4)
        with self.assertRaises(ContractError):
            codebook_usage(np.array([4]), 4)
        with self.assertRaises(DimensionError):
            UsageAccumulator(3).merge(UsageAccumulator(4))


class TestQuality(unittest.TestCase):
    """PSNR, distribution gap and the embedding export."""

    def test_psnr(self):
        x = np.zeros((1, 3, 4, 4))
        self.assertEqual(psnr(x, x), math.inf)
        self.assertAlmostEqual(psnr(x + 0.2, x), 20.0, places=6)
        with self.assertRaises(DimensionError):
            psnr(x, np.zeros((1, 3, 4, 5)))

    def test_distribution_gap(self):
        feats = np.array([[1.0, 0.0], [0.0, 2.0]])
        self.assertAlmostEqual(distribution_gap(feats, feats), 0.0)
        codes = np.array([[1.0, 1.0]])
        self.assertAlmostEqual(distribution_gap(codes, feats), 1.0 / 1.5)
        with self.assertRaises(NumericError):
            distribution_gap(codes, np.zeros((2, 2)))

    def test_export_embeddings_csv(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = export_embeddings_csv(np.eye(2), np.ones((3, 2)), Path(tmp) / "embeddings.csv")
            with path.open(newline="") as handle:
                rows = list(csv.reader(handle))
        self.assertEqual(rows[0], ["source", "d0", "d1"])
        self.assertEqual([r[0] for r in rows[1:]], ["code", "code", "feature", "feature", "feature"])
        self.assertEqual(rows[1][1:], ["1", "0"])


if __name__ == "__main__":
    unittest.main()
