"""
Tests for the gradient-flow diagnostics, including deliberately broken quantizers.
"""

import sys
from pathlib import Path
import unittest

# Add the src directory to the path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from ibq_lab.core import DType, Tensor, detach, straight_through
from ibq_lab.diagnostics import default_quantizers, run_quantcheck
from ibq_lab.quantizers import QuantizerKind, ibq_quantize, vqgan_quantize


def ibq_without_index_gradient(z, codebook):
    """IBQ forward, but the encoder output is passed straight through to the selected code."""
    out = ibq_quantize(z, codebook)
    selected = Tensor(codebook.embeddings.data[out.indices], dtype=DType.F64)
    out.z_q = straight_through(detach(selected), z)
    return out


def vqgan_without_straight_through(z, codebook):
    out = vqgan_quantize(z, codebook)
    out.z_q = detach(out.z_q)
    return out


class TestQuantcheck(unittest.TestCase):
    """The full suite on the library quantizers."""

    def setUp(self):
        """Set up one report for all quantizers."""
        self.report = run_quantcheck(seed=0)

    def test_all_checks_pass(self):
        self.assertTrue(self.report.passed, [f"{r.quantizer.value}: {r.name} {r.detail}"
                                             for r in self.report.failures()])
        self.assertEqual({r.quantizer for r in self.report.results}, set(QuantizerKind))

    def test_row_fractions(self):
        fractions = self.report.row_fraction
        self.assertEqual(fractions[QuantizerKind.IBQ], 1.0)
        self.assertEqual(fractions[QuantizerKind.SOFTVQ], 1.0)
        self.assertIsNone(fractions[QuantizerKind.LFQ])
        self.assertLess(fractions[QuantizerKind.VQGAN], 1.0)
        self.assertLess(fractions[QuantizerKind.NAIVE], 1.0)

    def test_default_quantizers_cover_every_kind(self):
        self.assertEqual(set(default_quantizers()), set(QuantizerKind))


class TestBrokenQuantizers(unittest.TestCase):
    """Injected implementations that drop a gradient path must be caught."""

    def failed_checks(self, kind, fn):
        report = run_quantcheck(seed=1, quantizers={kind: fn})
        self.assertFalse(report.passed)
        return {r.name for r in report.failures()}

    def test_ibq_without_index_gradient(self):
        failed = self.failed_checks(QuantizerKind.IBQ, ibq_without_index_gradient)
        self.assertIn("all codes receive gradient", failed)
        self.assertIn("finite differences", failed)

    def test_vqgan_without_straight_through(self):
        failed = self.failed_checks(QuantizerKind.VQGAN, vqgan_without_straight_through)
        self.assertEqual(failed, {"straight-through identity"})

    def test_single_quantizer_run(self):
        report = run_quantcheck(quantizers={QuantizerKind.VQGAN: vqgan_quantize})
        self.assertTrue(report.passed)
        self.assertEqual(list(report.row_fraction), [QuantizerKind.VQGAN])


if __name__ == "__main__":
    unittest.main()
