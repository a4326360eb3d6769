import os
import math
import shutil
import tempfile
import unittest
from unittest.mock import patch

import numpy as np

from dec_sgg.composer import compose_corpus, empty_corpus
from dec_sgg.dictionary import ComponentDictionary, build_neighbor_index, populate
from dec_sgg.error_handler import ConfigError, DimensionMismatchError, DivergenceError, ParseError
from dec_sgg.evaluation import mean_recall_at_k
from dec_sgg.sampler import BalancedSampler, UniformImageSampler
from dec_sgg.schema import Dataset, FeatureBank
from dec_sgg.trainer import (
    BatchItem,
    TrainConfig,
    ce_loss,
    forward,
    grad,
    init_params,
    kl_loss,
    load_checkpoint,
    loss,
    loss_and_grad,
    predict,
    read_loss_trace,
    save_checkpoint,
    sgd_step,
    softmax,
    train,
    write_loss_trace,
)
from sgg_fixtures import SMALL_DIMS, make_embeddings, make_image, make_vocab, man_sitting_on_car


def random_params(num_predicates, feature_dim, hidden_dim, seed):
    params = init_params(num_predicates, feature_dim, hidden_dim, seed)
    rng = np.random.default_rng(seed)
    return params.from_vector(rng.normal(0.0, 0.5, params.to_vector().size))


def separable_dataset(images_per_predicate=10):
    """The subject category alone decides the predicate"""
    vocab = make_vocab(('alpha', 'beta', 'gamma', 'delta'), ('p1', 'p2', 'p3'))
    embeddings = make_embeddings(vocab, np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float))
    images = []
    next_id = 1
    for p, subject in enumerate(('alpha', 'beta', 'gamma'), start=1):
        for i in range(images_per_predicate):
            image_id = len(images) + 1
            images.append(make_image(
                vocab, image_id,
                [(next_id, subject, (10 + i, 20, 200 + i, 300)), (next_id + 1, 'delta', (400, 100 + i, 700, 400))],
                [(next_id, f"p{p}", next_id + 1)],
            ))
            next_id += 2
    return Dataset(images, vocab), embeddings


class TestOutputs(unittest.TestCase):
    def test_zero_parameters_give_uniform_distribution(self):
        params = init_params(5, 3)
        probs = forward(params, np.arange(6, dtype=float))
        np.testing.assert_allclose(probs, np.full(5, 0.2), atol=1e-15)

    def test_softmax_shift_invariance(self):
        logits = np.array([0.3, -2.0, 5.5, 1.0])
        np.testing.assert_allclose(softmax(logits + 123.0), softmax(logits), atol=1e-15)

    def test_distribution_sums_to_one(self):
        rng = np.random.default_rng(0)
        for hidden in (0, 4):
            params = random_params(7, 5, hidden, seed=hidden + 1)
            probs = forward(params, rng.normal(size=(20, 10)))
            np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_pair_dimension_checked(self):
        with self.assertRaises(DimensionMismatchError):
            forward(init_params(3, 4), np.zeros(7))

    def test_cross_entropy_values(self):
        self.assertEqual(ce_loss(np.array([0.0, 1.0]), 1), 0.0)
        self.assertAlmostEqual(ce_loss(np.full(50, 1 / 50), 3), math.log(50), places=12)
        self.assertAlmostEqual(ce_loss(np.array([0.5, 0.25, 0.25]), 0), math.log(2), places=12)
        self.assertTrue(math.isfinite(ce_loss(np.array([1.0, 0.0]), 1)))

    def test_kl_values(self):
        p = np.array([0.2, 0.3, 0.5])
        self.assertEqual(kl_loss(p, p), 0.0)
        self.assertAlmostEqual(kl_loss(np.array([1.0, 0.0]), np.array([0.5, 0.5])), math.log(2), places=12)
        rng = np.random.default_rng(1)
        for _ in range(1000):
            size = int(rng.integers(2, 9))
            a, b = rng.dirichlet(np.ones(size)), rng.dirichlet(np.ones(size))
            self.assertGreaterEqual(kl_loss(a, b), 0.0)
            self.assertEqual(kl_loss(a, a), 0.0)


class TestGradient(unittest.TestCase):
    def batch(self, rng, pair_dim, num_predicates):
        items = [BatchItem(rng.normal(size=pair_dim), int(rng.integers(num_predicates))) for _ in range(3)]
        items += [BatchItem(rng.normal(size=pair_dim), int(rng.integers(1, num_predicates)),
                            rng.dirichlet(np.ones(num_predicates))) for _ in range(2)]
        return items

    def random_instance(self, rng):
        num_predicates = int(rng.integers(2, 9))
        feature_dim = int(rng.integers(1, 9))
        hidden_dim = int(rng.choice([0, int(rng.integers(1, 17))]))
        params = random_params(num_predicates, feature_dim, hidden_dim, seed=int(rng.integers(1 << 30)))
        return params, self.batch(rng, 2 * feature_dim, num_predicates), float(rng.uniform(0.0, 2.0))

    def finite_difference_error(self, params, batch, kl_weight):
        analytic = grad(params, batch, kl_weight).to_vector()
        base = params.to_vector()
        h = 1e-5
        numeric = np.zeros_like(base)
        for j in range(base.size):
            step = np.zeros_like(base)
            step[j] = h
            numeric[j] = (loss(params.from_vector(base + step), batch, kl_weight)
                          - loss(params.from_vector(base - step), batch, kl_weight)) / (2 * h)
        scale = max(float(np.abs(analytic).max()), float(np.abs(numeric).max()), 1e-8)
        return float(np.abs(analytic - numeric).max()) / scale

    def test_linear_head_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        params = random_params(4, 6, 0, seed=7)
        self.assertLessEqual(self.finite_difference_error(params, self.batch(rng, 12, 4), 0.7), 1e-4)

    def test_refined_head_matches_finite_differences(self):
        rng = np.random.default_rng(45)
        params = random_params(4, 6, 3, seed=7)
        self.assertLessEqual(self.finite_difference_error(params, self.batch(rng, 12, 4), 0.7), 1e-4)

    def test_random_instances_match_finite_differences(self):
        """Up to 8 predicates and 16-dimensional pair features, with and without refinement"""
        rng = np.random.default_rng(2024)
        errors = [self.finite_difference_error(*self.random_instance(rng)) for _ in range(100)]
        self.assertLessEqual(max(errors), 1e-4)

    def test_saturated_prediction_has_no_gradient(self):
        params = init_params(3, 2)
        params.out_w[2] = 50.0
        g = grad(params, [BatchItem(np.ones(4), 2)], 0.0)
        self.assertLess(float(np.linalg.norm(g.to_vector())), 1e-12)

    def test_duplicated_item_gives_same_gradient(self):
        rng = np.random.default_rng(3)
        params = random_params(4, 6, 2, seed=3)
        for item in self.batch(rng, 12, 4):
            single = grad(params, [item], 1.0).to_vector()
            double = grad(params, [item, item], 1.0).to_vector()
            np.testing.assert_allclose(double, single, rtol=1e-12, atol=1e-15)

    def test_matching_target_adds_no_consistency_loss(self):
        rng = np.random.default_rng(5)
        params = random_params(4, 6, 0, seed=5)
        pair = rng.normal(size=12)
        composed = BatchItem(pair, 2, forward(params, pair))
        with_kl, _ = loss_and_grad(params, [composed], 1.0)
        without_kl, _ = loss_and_grad(params, [composed], 0.0)
        self.assertAlmostEqual(with_kl, without_kl, places=12)

    def test_gradient_step_descends(self):
        rng = np.random.default_rng(8)
        for seed in range(20):
            params = random_params(4, 6, seed % 4, seed=seed)
            batch = self.batch(rng, 12, 4)
            value, gradient = loss_and_grad(params, batch, 1.0)
            self.assertLess(loss(sgd_step(params, gradient, 1e-4), batch, 1.0), value)


class TestTraining(unittest.TestCase):
    def setUp(self):
        self.dataset, self.embeddings = separable_dataset()

    def config(self, **kwargs):
        defaults = dict(learning_rate=0.1, iterations=40, kl_weight=0.0, seed=0)
        defaults.update(kwargs)
        return TrainConfig(**defaults)

    def run_uniform(self, corpus=None, **kwargs):
        sampler = UniformImageSampler.from_dataset(self.dataset, 3, seed=1)
        return train(self.dataset, corpus, sampler, self.config(**kwargs), self.embeddings, SMALL_DIMS)

    def test_separable_set_is_learned(self):
        result = self.run_uniform(iterations=2000)
        records = predict(result.params, self.dataset, self.embeddings)
        value, _ = mean_recall_at_k(records, 100, self.dataset.vocab.num_predicates)
        self.assertEqual(value, 1.0)
        self.assertLess(result.trace[-1][1], result.trace[0][1])

    def test_empty_corpus_reduces_to_baseline(self):
        baseline = self.run_uniform()
        degenerate = self.run_uniform(corpus=empty_corpus(), kl_weight=1.0)
        self.assertEqual(baseline.trace, degenerate.trace)

    def test_seeded_runs_are_identical(self):
        first, second = self.run_uniform(), self.run_uniform()
        self.assertEqual(first.trace, second.trace)
        for a, b in zip(first.params.arrays(), second.params.arrays()):
            np.testing.assert_array_equal(a, b)

    def test_trace_has_one_entry_per_iteration(self):
        result = self.run_uniform(iterations=25)
        self.assertEqual([i for i, _ in result.trace], list(range(1, 26)))
        self.assertTrue(all(math.isfinite(v) for _, v in result.trace))

    def test_divergence_raises(self):
        def diverge(params, batch, kl_weight):
            return float('nan'), params
        with patch('dec_sgg.trainer.loss_and_grad', side_effect=diverge):
            with self.assertRaises(DivergenceError) as ctx:
                self.run_uniform()
        self.assertEqual(ctx.exception.details['iteration'], 1)

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with self.assertRaises(ConfigError):
            TrainConfig(kl_weight=-1.0)

    def test_training_with_composed_corpus(self):
        dataset = man_sitting_on_car()
        embeddings = make_embeddings(dataset.vocab)
        bank = FeatureBank(dataset, embeddings, SMALL_DIMS)
        dictionary = ComponentDictionary(100, 0)
        populate(dictionary, dataset, bank, 0)
        corpus = compose_corpus(dataset, dictionary, build_neighbor_index(embeddings, 1), bank, embeddings,
                                budget=100, seed=0)
        sampler = BalancedSampler.from_dataset(dataset, corpus, n_predicates=3, k_images=1, seed=0)
        result = train(dataset, corpus, sampler, self.config(kl_weight=1.0, iterations=30), embeddings, SMALL_DIMS)
        self.assertEqual(len(result.trace), 30)
        self.assertTrue(result.params.is_finite())

    def test_predictions_are_ranked(self):
        result = self.run_uniform()
        records = predict(result.params, self.dataset, self.embeddings)
        self.assertEqual(len(records), len(self.dataset))
        for record in records:
            self.assertEqual(len(record.predictions), 2)
            scores = [score for *_, score in record.predictions]
            self.assertEqual(scores, sorted(scores, reverse=True))
            self.assertTrue(all(1 <= p < self.dataset.vocab.num_predicates for _, _, p, _ in record.predictions))


class TestCheckpointFiles(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, 'model.ckpt')

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_round_trip(self):
        params = random_params(5, SMALL_DIMS.total, 3, seed=2)
        params.dims = SMALL_DIMS
        save_checkpoint(params, self.path, {'dec': True})
        loaded, config = load_checkpoint(self.path)
        self.assertEqual(config, {'dec': True})
        self.assertEqual(loaded.dims, SMALL_DIMS)
        self.assertEqual(loaded.hidden_dim, 3)
        for a, b in zip(params.arrays(), loaded.arrays()):
            np.testing.assert_array_equal(b, a.astype(np.float32).astype(np.float64))

    def test_truncated_file(self):
        save_checkpoint(init_params(3, 4), self.path)
        with open(self.path, 'rb') as f:
            raw = f.read()
        with open(self.path, 'wb') as f:
            f.write(raw[:-4])
        with self.assertRaises(ParseError):
            load_checkpoint(self.path)

    def test_bad_magic(self):
        with open(self.path, 'wb') as f:
            f.write(b'XXXX\x00\x00\x00\x00')
        with self.assertRaises(ParseError):
            load_checkpoint(self.path)

    def test_loss_trace_round_trip(self):
        trace = [(1, 1.0986122886681098), (2, 0.5), (3, 1e-7)]
        path = os.path.join(self.test_dir, 'loss.txt')
        write_loss_trace(trace, path)
        self.assertEqual(read_loss_trace(path), trace)


if __name__ == '__main__':
    unittest.main()
