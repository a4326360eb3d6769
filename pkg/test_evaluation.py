import os
import csv
import json
import math
import shutil
import tempfile
import unittest

import numpy as np

from dec_sgg.error_handler import ConfigError, DataError, ParseError
from dec_sgg.evaluation import (
    EvalRecord,
    SplitSpec,
    compare_reports,
    evaluate,
    few_shot_split,
    load_split,
    mean_recall_at_k,
    overall_recall_at_k,
    recall_at_k,
    restrict_records,
    save_split,
    tail_predicates,
    verify_zero_shot,
    write_per_predicate_csv,
    zero_shot_split,
)
from dec_sgg.schema import Dataset
from dec_sgg.synth import SynthConfig, generate
from sgg_fixtures import make_image, make_vocab


def record(image_id, predictions, ground_truth):
    """Predictions given as (s, o, p) in rank order get descending scores"""
    ranked = [(s, o, p, 1.0 - i / 100) for i, (s, o, p) in enumerate(predictions)]
    return EvalRecord(image_id, tuple(ranked), tuple(ground_truth))


def random_records(rng, num_predicates, n_images=4):
    records = []
    for image_id in range(n_images):
        ids = list(range(1, int(rng.integers(2, 6)) + 1))
        pairs = [(s, o) for s in ids for o in ids if s != o]
        order = rng.permutation(len(pairs))
        predictions = [(*pairs[i], int(rng.integers(1, num_predicates))) for i in order]
        n_gt = int(rng.integers(0, min(4, len(pairs)) + 1))
        gt_pairs = rng.choice(len(pairs), size=n_gt, replace=False)
        ground_truth = [(*pairs[i], int(rng.integers(1, num_predicates))) for i in gt_pairs]
        records.append(record(image_id, predictions, ground_truth))
    return records


def brute_mean_recall(records, k, num_predicates):
    recalls = []
    for p in range(1, num_predicates):
        found = total = 0
        for rec in records:
            top = [(s, o, q) for s, o, q, _ in rec.predictions[:k]]
            for gt in rec.ground_truth:
                if gt[2] == p:
                    total += 1
                    found += gt in top
        if total:
            recalls.append(found / total)
    return sum(recalls) / len(recalls) if recalls else 0.0


class TestRecall(unittest.TestCase):
    def test_single_hit(self):
        rec = record(1, [(1, 2, 3), (2, 1, 1)], [(1, 2, 3)])
        self.assertEqual(recall_at_k(rec, 1), 1.0)
        self.assertEqual(recall_at_k(rec, 0), 0.0)

    def test_partial_recall(self):
        rec = record(1, [(1, 2, 1), (2, 3, 2), (3, 1, 1), (1, 3, 2)], [(1, 2, 1), (3, 1, 1), (1, 3, 1)])
        self.assertAlmostEqual(recall_at_k(rec, 4), 2 / 3, places=12)
        self.assertAlmostEqual(recall_at_k(rec, 1), 1 / 3, places=12)

    def test_wrong_predicate_is_a_miss(self):
        rec = record(1, [(1, 2, 2)], [(1, 2, 1)])
        self.assertEqual(recall_at_k(rec, 50), 0.0)

    def test_images_without_ground_truth_are_skipped(self):
        records = [record(1, [(1, 2, 1)], [(1, 2, 1)]), record(2, [(1, 2, 1)], [])]
        self.assertEqual(overall_recall_at_k(records, 10), 1.0)


class TestMeanRecall(unittest.TestCase):
    def test_single_predicate_equals_recall(self):
        rec = record(1, [(1, 2, 1), (2, 3, 1), (3, 1, 1)], [(1, 2, 1), (1, 3, 1)])
        value, _ = mean_recall_at_k([rec], 3, 2)
        self.assertAlmostEqual(value, recall_at_k(rec, 3), places=12)

    def test_unweighted_over_predicates(self):
        # predicate 1 is always found, predicate 2 never
        rec = record(1, [(1, 2, 1), (2, 3, 1), (3, 4, 1)], [(1, 2, 1), (2, 3, 2)])
        value, per_predicate = mean_recall_at_k([rec], 100, 3)
        self.assertEqual(value, 0.5)
        self.assertTrue(math.isnan(per_predicate[0]))
        self.assertEqual(per_predicate[1:].tolist(), [1.0, 0.0])

    def test_absent_predicates(self):
        rec = record(1, [(1, 2, 1)], [(1, 2, 1)])
        value, per_predicate = mean_recall_at_k([rec], 10, 4)
        self.assertEqual(value, 1.0)
        self.assertTrue(math.isnan(per_predicate[2]))
        value, per_predicate = mean_recall_at_k([rec], 10, 4, exclude_absent=False)
        self.assertAlmostEqual(value, 1 / 3, places=12)
        self.assertEqual(per_predicate[2], 0.0)

    def test_no_ground_truth(self):
        value, _ = mean_recall_at_k([record(1, [(1, 2, 1)], [])], 10, 3)
        self.assertEqual(value, 0.0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            num_predicates = int(rng.integers(2, 6))
            records = random_records(rng, num_predicates)
            k = int(rng.integers(0, 12))
            value, _ = mean_recall_at_k(records, k, num_predicates)
            self.assertAlmostEqual(value, brute_mean_recall(records, k, num_predicates), places=12)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            records = random_records(rng, 5)
            values = [mean_recall_at_k(records, k, 5)[0] for k in (20, 50, 100)]
            self.assertEqual(values, sorted(values))


class TestEvalRecord(unittest.TestCase):
    def test_unsorted_scores(self):
        with self.assertRaises(DataError):
            EvalRecord(1, ((1, 2, 1, 0.1), (2, 1, 1, 0.9)), ())

    def test_pair_predicted_twice(self):
        with self.assertRaises(DataError):
            EvalRecord(1, ((1, 2, 1, 0.9), (1, 2, 2, 0.5)), ())

    def test_non_finite_score(self):
        with self.assertRaises(DataError):
            EvalRecord(1, ((1, 2, 1, float('nan')),), ())


class TestReports(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_tail_predicates(self):
        counts = np.array([0, 50, 3, 10])
        per_predicate = np.array([np.nan, 0.5, 0.2, np.nan])
        self.assertEqual(tail_predicates(counts, per_predicate, 2), [2, 1])
        self.assertEqual(tail_predicates(counts, per_predicate, 1), [2])

    def test_evaluate(self):
        records = [record(1, [(1, 2, 1), (2, 1, 2)], [(1, 2, 1), (2, 1, 3)])]
        report = evaluate(records, 4, np.array([0, 9, 4, 1]), ks=(1, 2), tail_size=2)
        self.assertEqual(report['images'], 1)
        self.assertEqual(report['triples'], 2)
        self.assertEqual(report['recall'], {'1': 0.5, '2': 0.5})
        self.assertEqual(report['mean_recall']['2'], 0.5)
        self.assertEqual(report['per_predicate'], [None, 1.0, None, 0.0])
        self.assertEqual(report['tail']['predicates'], [3, 1])
        self.assertEqual(report['tail']['mean_recall'], 0.5)

    def test_per_predicate_uses_largest_k_in_any_order(self):
        """The ground truth sits third, so only the largest K finds it"""
        records = [record(1, [(1, 2, 2), (2, 1, 2), (1, 3, 1)], [(1, 3, 1)])]
        counts = np.array([0, 5, 3])
        for ks in ((2, 100), (100, 2)):
            report = evaluate(records, 3, counts, ks=ks, tail_size=1)
            self.assertEqual(report['top_k'], 100)
            self.assertEqual(report['per_predicate'], [None, 1.0, None])
            self.assertEqual(report['recall'], {'2': 0.0, '100': 1.0})

    def test_compare_reports(self):
        baseline = {'tail': {'predicates': [3, 2]}, 'per_predicate': [None, 0.9, 0.1, 0.0],
                    'mean_recall': {'100': 0.3}}
        dec = {'tail': {'predicates': [3, 2]}, 'per_predicate': [None, 0.8, 0.3, 0.2],
               'mean_recall': {'100': 0.4}}
        comparison = compare_reports(baseline, dec)
        self.assertAlmostEqual(comparison['margin'], 0.2, places=12)
        self.assertTrue(comparison['rarest_nonzero_under_dec'])
        self.assertEqual(comparison['mean_recall'], {'100': {'baseline': 0.3, 'dec': 0.4}})

    def test_per_predicate_csv_order(self):
        path = os.path.join(self.test_dir, 'per_predicate.csv')
        write_per_predicate_csv(path, ('none', 'a', 'b', 'c'), np.array([0, 5, 9, 5]), [None, 0.5, None, 0.25])
        with open(path, newline='') as f:
            rows = list(csv.reader(f))
        self.assertEqual(rows[0], ['predicate', 'train_frequency', 'recall_at_100'])
        self.assertEqual(rows[1:], [['b', '9', ''], ['a', '5', '0.5'], ['c', '5', '0.25']])


class TestFewShotSplit(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        config = SynthConfig(n_train_images=60, n_test_images=10, n_object_categories=8, group_size=4,
                             n_predicates=6, visual_dim=4, word_dim=5, n_unseen=0, seed=5)
        cls.dataset = generate(config).train

    def available(self):
        images_of = {}
        for image, triple in self.dataset.iter_triples():
            images_of.setdefault(triple.predicate, set()).add(image.image_id)
        return images_of

    def test_shots_per_predicate(self):
        spec = few_shot_split(self.dataset, 5, seed=0)
        for predicate, ids in self.available().items():
            picked = spec.per_predicate[predicate]
            self.assertEqual(len(picked), min(5, len(ids)))
            self.assertTrue(set(picked) <= ids)
        self.assertEqual(set(spec.train_image_ids), {i for ids in spec.per_predicate.values() for i in ids})

    def test_large_shot_count_keeps_everything(self):
        spec = few_shot_split(self.dataset, 10 ** 6, seed=0)
        annotated = {image.image_id for image in self.dataset.images if image.triples}
        self.assertEqual(set(spec.train_image_ids), annotated)

    def test_seeded(self):
        self.assertEqual(few_shot_split(self.dataset, 3, 7), few_shot_split(self.dataset, 3, 7))

    def test_invalid_shots(self):
        with self.assertRaises(ConfigError):
            few_shot_split(self.dataset, 0, 0)


class TestZeroShotSplit(unittest.TestCase):
    def setUp(self):
        self.vocab = make_vocab()
        self.train = Dataset([
            make_image(self.vocab, 1, [(1, 'man', (0, 0, 100, 200)), (2, 'car', (300, 300, 340, 330))],
                       [(1, 'sitting on', 2)]),
        ], self.vocab)
        self.test = Dataset([
            make_image(self.vocab, 10, [(11, 'man', (0, 0, 100, 200)), (12, 'train', (300, 300, 380, 330)),
                                        (13, 'car', (500, 50, 560, 90))],
                       [(11, 'sitting on', 12), (11, 'sitting on', 13)]),
        ], self.vocab)

    def test_unseen_combination_selected(self):
        spec = zero_shot_split(self.train, self.test)
        self.assertEqual(spec.test_triples, ((10, 11, 12, self.vocab.predicate_index('sitting on')),))

    def test_same_data_gives_empty_split(self):
        self.assertEqual(zero_shot_split(self.train, self.train).test_triples, ())

    def test_collision_detected(self):
        spec = SplitSpec('zero-shot', test_triples=((10, 11, 13, self.vocab.predicate_index('sitting on')),))
        with self.assertRaises(DataError):
            verify_zero_shot(spec, self.train, self.test)

    def test_restrict_records(self):
        spec = zero_shot_split(self.train, self.test)
        sitting_on = self.vocab.predicate_index('sitting on')
        rec = record(10, [(11, 13, sitting_on), (11, 12, sitting_on)], [(11, 12, sitting_on), (11, 13, sitting_on)])
        restricted = restrict_records([rec], spec)
        self.assertEqual(restricted[0].ground_truth, ((11, 12, sitting_on),))
        self.assertEqual(recall_at_k(restricted[0], 1), 0.0)
        self.assertEqual(recall_at_k(restricted[0], 2), 1.0)
        self.assertEqual(restrict_records([rec], SplitSpec('full')), [rec])


class TestSplitFiles(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.path = os.path.join(self.test_dir, 'split.json')

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def test_round_trip(self):
        spec = SplitSpec('few-shot', seed=3, shots=2, train_image_ids=(1, 4), per_predicate={1: [1], 2: [1, 4]})
        save_split(spec, self.path)
        self.assertEqual(load_split(self.path), spec)

    def test_missing_file(self):
        with self.assertRaises(DataError):
            load_split(self.path)

    def test_malformed_file(self):
        with open(self.path, 'w') as f:
            f.write('{"kind": ')
        with self.assertRaises(ParseError):
            load_split(self.path)
        with open(self.path, 'w') as f:
            json.dump({'seed': 1}, f)
        with self.assertRaises(ParseError):
            load_split(self.path)


if __name__ == '__main__':
    unittest.main()
