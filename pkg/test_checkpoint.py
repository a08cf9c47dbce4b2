#!/usr/bin/env python3
"""
Checkpoint persistence tests
"""

import sys
import tempfile
import unittest
from pathlib import Path

# Add src to path
sys.path.insert(0, str(Path(__file__).parent / "src"))

import numpy as np

from hopgate.babi import Vocab
from hopgate.checkpoint import Bundle, load_checkpoint, save_checkpoint
from hopgate.engine import forward
from hopgate.errors import ConfigurationError
from hopgate.pruning import FcOrigin, build_pruned_heads
from hopgate.state import HyperParams, Variant
from hopgate.trainer import init_icn, init_weights

from conftest import _random_samples


class TestCheckpoint(unittest.TestCase):
    """Round trips through the JSON checkpoint format"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "model.ckpt.json"

    def tearDown(self):
        self.tmp.cleanup()

    def _bundle(self, hyper: HyperParams) -> Bundle:
        weights = init_weights(hyper, seed=3)
        weights.W_E = weights.W * 0.5
        weights.icn = init_icn(hyper.d, hyper.l1, seed=4)
        return Bundle(
            hyper=hyper,
            vocab=Vocab.synthetic(hyper.V),
            weights=weights,
            train_labels=[3, 1, 3],
            tasks=[20, 1, 6],
            pruned=build_pruned_heads(weights.W, weights.W_E, [1, 3]),
        )

    def test_round_trip_conventional(self):
        """Test that every tensor and pruned head survives save/load"""
        hyper = HyperParams(d=4, V=6, n_s=3, n_w=2, m=2, l1=5)
        bundle = self._bundle(hyper)
        save_checkpoint(self.path, bundle)
        loaded = load_checkpoint(self.path)

        self.assertEqual(loaded.hyper, hyper)
        self.assertEqual(loaded.vocab.words, bundle.vocab.words)
        self.assertEqual(loaded.train_labels, [1, 3])
        self.assertEqual(loaded.tasks, [1, 6, 20])
        for name, param in bundle.weights.as_params().items():
            np.testing.assert_array_equal(loaded.weights.as_params()[name], param)
        np.testing.assert_array_equal(loaded.weights.W_E, bundle.weights.W_E)
        np.testing.assert_array_equal(loaded.weights.pe, bundle.weights.pe)
        np.testing.assert_array_equal(loaded.weights.icn.b2, bundle.weights.icn.b2)
        self.assertEqual(set(loaded.pruned), {FcOrigin.W, FcOrigin.W_E})
        self.assertEqual(loaded.pruned[FcOrigin.W].important_indices.tolist(), [1, 3])

        for sample in _random_samples(hyper, 5):
            self.assertEqual(
                forward(loaded.weights, hyper, sample).ledger.total(),
                forward(bundle.weights, hyper, sample).ledger.total(),
            )
            self.assertEqual(
                forward(loaded.weights, hyper, sample).answer_id,
                forward(bundle.weights, hyper, sample).answer_id,
            )

    def test_round_trip_key_value(self):
        hyper = HyperParams(d=4, V=6, n_s=3, n_w=2, variant=Variant.KEY_VALUE, l1=5)
        bundle = self._bundle(hyper)
        save_checkpoint(self.path, bundle)
        loaded = load_checkpoint(self.path)
        self.assertIsNone(loaded.weights.pe)
        self.assertEqual(len(loaded.weights.R), 2)
        np.testing.assert_array_equal(loaded.weights.R_bias[1], bundle.weights.R_bias[1])

    def test_missing_file(self):
        with self.assertRaises(ConfigurationError):
            load_checkpoint(self.path)

    def test_corrupt_file(self):
        self.path.write_text("{not json", encoding="utf-8")
        with self.assertRaises(ConfigurationError):
            load_checkpoint(self.path)

    def test_missing_tensor(self):
        hyper = HyperParams(d=4, V=6, n_s=3, n_w=2, m=2, l1=5)
        save_checkpoint(self.path, self._bundle(hyper))
        text = self.path.read_text(encoding="utf-8").replace('"E2"', '"E9"')
        self.path.write_text(text, encoding="utf-8")
        with self.assertRaises(ConfigurationError):
            load_checkpoint(self.path)


if __name__ == "__main__":
    unittest.main()
