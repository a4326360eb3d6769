import os
import shutil
import tempfile
import unittest

import numpy as np
from scipy import stats

from dec_sgg.error_handler import ConfigError
from dec_sgg.formats import load_dataset, load_embeddings, load_vocab
from dec_sgg.synth import SYNTH_FILES, SynthConfig, generate, write_synth, zipf_probabilities


def small_config(**kwargs):
    defaults = dict(n_train_images=60, n_test_images=20, n_object_categories=8, group_size=4,
                    n_predicates=6, visual_dim=8, word_dim=10, n_unseen=2, unseen_copies=1, seed=3)
    defaults.update(kwargs)
    return SynthConfig(**defaults)


class TestZipf(unittest.TestCase):
    def test_probabilities(self):
        np.testing.assert_allclose(zipf_probabilities(4, 0.0), np.full(4, 0.25))
        probs = zipf_probabilities(3, 1.0)
        np.testing.assert_allclose(probs, np.array([1, 1 / 2, 1 / 3]) / (11 / 6))
        self.assertTrue(np.all(np.diff(zipf_probabilities(50, 1.2)) < 0))

    def test_flat_exponent_gives_uniform_predicates(self):
        data = generate(small_config(n_train_images=1000, n_predicates=10, zipf_exponent=0.0, n_unseen=0))
        counts = data.train.predicate_counts()[1:]
        self.assertGreater(stats.chisquare(counts).pvalue, 1e-3)

    def test_long_tail(self):
        data = generate(small_config(n_train_images=600, zipf_exponent=1.5))
        counts = data.train.predicate_counts()
        self.assertGreater(counts[1], 5 * counts[6])


class TestGenerate(unittest.TestCase):
    def test_held_out_combinations(self):
        data = generate(small_config())
        self.assertEqual(len(data.held_out), 2)
        train_combos = data.train.combinations()
        test_combos = data.test.combinations()
        for combo in data.held_out:
            self.assertNotIn(combo, train_combos)
            self.assertIn(combo, test_combos)

    def test_every_predicate_remains_trainable(self):
        data = generate(small_config(n_train_images=400, n_unseen=6))
        held = set(data.held_out)
        for s, p, _ in held:
            self.assertTrue(any((s, p, o) not in held for o in range(data.vocab.num_categories)))

    def test_impossible_hold_out(self):
        # groups of one category leave no alternative object
        with self.assertRaises(ConfigError):
            generate(small_config(n_object_categories=3, group_size=1, n_unseen=1))
        # a single family of two categories can hold out two combinations at most
        with self.assertRaises(ConfigError):
            generate(small_config(n_object_categories=2, group_size=2, n_predicates=1, n_unseen=3))

    def test_invalid_config(self):
        with self.assertRaises(ConfigError):
            small_config(n_train_images=0)
        with self.assertRaises(ConfigError):
            small_config(zipf_exponent=-1.0)
        with self.assertRaises(ConfigError):
            small_config(n_object_categories=80, group_size=4)

    def test_features_cover_every_instance(self):
        data = generate(small_config())
        for dataset in (data.train, data.test):
            for inst in dataset.iter_instances():
                self.assertEqual(data.features[inst.instance_id].shape, (8,))
                self.assertLessEqual(inst.box.x_b, dataset.image(inst.image_id).width)

    def test_category_names_share_nouns(self):
        data = generate(small_config())
        names = data.vocab.object_categories
        self.assertEqual(len(names), 8)
        self.assertEqual({name.split()[1] for name in names[:4]}, {'vehicle'})
        self.assertEqual(set(data.token_vectors), {'vehicle', 'animal', 'red', 'blue', 'green', 'small'})

    def test_from_params_ignores_unset_overrides(self):
        params = {'VISUAL_DIM': 16, 'WORD_DIM': 12, 'SEED': 4}
        config = SynthConfig.from_params(params, n_train_images=None, n_predicates=7)
        self.assertEqual((config.visual_dim, config.word_dim, config.seed), (16, 12, 4))
        self.assertEqual(config.n_train_images, SynthConfig().n_train_images)
        self.assertEqual(config.n_predicates, 7)


class TestWriteSynth(unittest.TestCase):
    def setUp(self):
        self.test_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.test_dir)

    def write(self, name, **kwargs):
        return write_synth(generate(small_config(**kwargs)), os.path.join(self.test_dir, name))

    def read(self, path):
        with open(path, 'rb') as f:
            return f.read()

    def test_same_seed_same_bytes(self):
        first, second = self.write('a'), self.write('b')
        self.assertEqual(set(first), set(SYNTH_FILES))
        for key in SYNTH_FILES:
            self.assertEqual(self.read(first[key]), self.read(second[key]), key)

    def test_different_seed_differs(self):
        first, second = self.write('a', seed=1), self.write('b', seed=2)
        self.assertNotEqual(self.read(first['train']), self.read(second['train']))

    def test_files_load_back(self):
        paths = self.write('data')
        data = generate(small_config())
        train = load_dataset(paths['train'], paths['features'], load_vocab(paths['vocab']))
        self.assertEqual(train.semantic_key(), data.train.semantic_key())
        embeddings = load_embeddings(paths['embeddings'], train.vocab)
        self.assertEqual(embeddings.dim, 10)


if __name__ == '__main__':
    unittest.main()
