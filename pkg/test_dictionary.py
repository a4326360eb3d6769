import unittest

import numpy as np

from dec_sgg.dictionary import ComponentDictionary, build_neighbor_index, populate
from dec_sgg.error_handler import ConfigError, VocabularyError
from dec_sgg.geometry import shape_similarity
from dec_sgg.schema import EmbeddingTable, FeatureBank
from sgg_fixtures import SMALL_DIMS, component, instance_ids, make_embeddings, man_sitting_on_car, random_box


def table(rows):
    rows = np.asarray(rows, dtype=np.float64)
    return EmbeddingTable(tuple(f"c{i}" for i in range(len(rows))), rows)


def linear_scan(dictionary, query, categories):
    best, best_score = None, -1.0
    for entry in dictionary.entries():
        candidate = entry.component
        if candidate.category not in categories or candidate.instance_id == query.instance_id:
            continue
        score = shape_similarity(query.box, candidate.box)
        if score > best_score:
            best, best_score = candidate.instance_id, score
    return best


class TestCapacity(unittest.TestCase):
    def test_eviction_keeps_capacity(self):
        dictionary = ComponentDictionary(capacity=3, seed=0)
        evicted = [dictionary.insert(component(i, 0, (0, 0, 5, 5))) for i in range(1, 5)]
        self.assertEqual(len(dictionary), 3)
        self.assertEqual(dictionary.evictions, 1)
        self.assertEqual(evicted[:3], [None, None, None])
        self.assertIsNotNone(evicted[3])
        self.assertNotIn(evicted[3].instance_id, dictionary)
        self.assertIn(4, dictionary)

    def test_capacity_holds_over_long_stream(self):
        rng = np.random.default_rng(11)
        dictionary = ComponentDictionary(capacity=64, seed=11)
        categories = rng.integers(0, 6, size=100000)
        for i in range(100000):
            dictionary.insert(component(i + 1, int(categories[i]), (0, 0, 5, 5)))
            self.assertLessEqual(len(dictionary), 64)
        self.assertEqual(len(dictionary), 64)
        self.assertEqual(dictionary.evictions, 100000 - 64)

    def test_no_eviction_below_capacity(self):
        dictionary = ComponentDictionary(capacity=10, seed=0)
        for i in range(1, 6):
            self.assertIsNone(dictionary.insert(component(i, i % 2, (0, 0, 5, 5))))
        self.assertEqual(dictionary.evictions, 0)
        self.assertEqual([e.seq for e in dictionary.entries()], [0, 1, 2, 3, 4])

    def test_eviction_sequence_is_seeded(self):
        def run(seed):
            dictionary = ComponentDictionary(capacity=5, seed=seed)
            return [getattr(dictionary.insert(component(i, i % 3, (0, 0, 5, 5))), 'instance_id', None)
                    for i in range(1, 40)]
        self.assertEqual(run(7), run(7))
        self.assertNotEqual(run(7), run(8))

    def test_reinsert_refreshes_in_place(self):
        dictionary = ComponentDictionary(capacity=2, seed=0)
        dictionary.insert(component(1, 0, (0, 0, 5, 5)))
        dictionary.insert(component(2, 0, (0, 0, 5, 5)))
        self.assertIsNone(dictionary.insert(component(1, 1, (0, 0, 9, 9))))
        self.assertEqual(dictionary.evictions, 0)
        self.assertEqual(instance_ids(e.component for e in dictionary.category_entries(1)), [1])
        self.assertEqual(instance_ids(e.component for e in dictionary.category_entries(0)), [2])

    def test_capacity_must_be_positive(self):
        with self.assertRaises(ConfigError):
            ComponentDictionary(capacity=0)


class TestIntraQuery(unittest.TestCase):
    def test_single_same_category_entry(self):
        dictionary = ComponentDictionary(capacity=10)
        dictionary.insert(component(1, 0, (0, 0, 30, 10)))
        dictionary.insert(component(2, 1, (0, 0, 5, 5)))
        query = component(9, 0, (0, 0, 5, 5))
        self.assertEqual(dictionary.query_intra(query).instance_id, 1)

    def test_best_shape_wins(self):
        dictionary = ComponentDictionary(capacity=10)
        dictionary.insert(component(1, 0, (10, 10, 14, 14)))
        dictionary.insert(component(2, 0, (50, 50, 52, 52)))
        query = component(9, 0, (0, 0, 2, 2))
        self.assertEqual(dictionary.query_intra(query).instance_id, 2)

    def test_no_candidate(self):
        dictionary = ComponentDictionary(capacity=10)
        dictionary.insert(component(1, 1, (0, 0, 5, 5)))
        self.assertIsNone(dictionary.query_intra(component(9, 0, (0, 0, 5, 5))))

    def test_query_excludes_itself(self):
        dictionary = ComponentDictionary(capacity=10)
        query = component(1, 0, (0, 0, 5, 5))
        dictionary.insert(query)
        dictionary.insert(component(2, 0, (0, 0, 50, 5)))
        self.assertEqual(dictionary.query_intra(query).instance_id, 2)
        self.assertIsNone(dictionary.query_intra(query, exclude=[2]))

    def test_ties_go_to_earliest_insertion(self):
        dictionary = ComponentDictionary(capacity=10)
        for i in (5, 3, 8):
            dictionary.insert(component(i, 0, (i, i, i + 4, i + 4)))
        self.assertEqual(dictionary.query_intra(component(1, 0, (0, 0, 4, 4))).instance_id, 5)


class TestQueriesAgainstLinearScan(unittest.TestCase):
    def test_random_dictionaries(self):
        rng = np.random.default_rng(21)
        for trial in range(1000):
            n_categories = int(rng.integers(2, 7))
            embeddings = table(rng.normal(size=(n_categories, 5)))
            index = build_neighbor_index(embeddings, k=int(rng.integers(1, n_categories)))
            dictionary = ComponentDictionary(capacity=int(rng.integers(1, 25)), seed=trial)
            for i in range(1, int(rng.integers(1, 40)) + 1):
                dictionary.insert(component(i, int(rng.integers(n_categories)), random_box(rng)))
            stored = [e.component for e in dictionary.entries()]
            queries = [component(1000, int(rng.integers(n_categories)), random_box(rng)),
                       stored[int(rng.integers(len(stored)))]]
            for query in queries:
                got = dictionary.query_intra(query)
                self.assertEqual(getattr(got, 'instance_id', None), linear_scan(dictionary, query, {query.category}))
                neighbors = set(index.categories_of(query.category))
                got = dictionary.query_inter(query, index)
                self.assertEqual(getattr(got, 'instance_id', None), linear_scan(dictionary, query, neighbors))
                for result in (dictionary.query_intra(query), dictionary.query_inter(query, index)):
                    if result is not None:
                        self.assertNotEqual(result.instance_id, query.instance_id)


class TestNeighborIndex(unittest.TestCase):
    def test_identical_embeddings_are_top_neighbors(self):
        index = build_neighbor_index(table([[1, 2, 3], [0, 1, 0], [1, 2, 3]]), k=1)
        other, similarity = index.of(0)[0]
        self.assertEqual(other, 2)
        self.assertAlmostEqual(similarity, 1.0, places=12)

    def test_orthogonal_ties_break_by_index(self):
        index = build_neighbor_index(table(np.eye(4)), k=3)
        self.assertEqual(index.categories_of(2), [0, 1, 3])
        self.assertTrue(all(abs(s) < 1e-12 for _, s in index.of(2)))

    def test_each_list_has_k_entries(self):
        rng = np.random.default_rng(0)
        index = build_neighbor_index(table(rng.normal(size=(5, 8))), k=3)
        for c in range(5):
            self.assertEqual(len(index.of(c)), 3)
            self.assertNotIn(c, index.categories_of(c))

    def test_zero_norm_rejected(self):
        with self.assertRaises(VocabularyError):
            build_neighbor_index(table([[0, 0], [1, 0]]), k=1)

    def test_similarity_floor(self):
        index = build_neighbor_index(table([[1, 0], [1, 0.1], [0, 1]]), k=2, min_similarity=0.5)
        self.assertEqual(index.categories_of(0), [1])


class TestInterQuery(unittest.TestCase):
    def setUp(self):
        dataset = man_sitting_on_car()
        self.embeddings = make_embeddings(dataset.vocab)
        self.index = build_neighbor_index(self.embeddings, k=1)
        self.car = dataset.vocab.category_index('car')
        self.train = dataset.vocab.category_index('train')

    def test_neighbor_category_entry(self):
        self.assertEqual(self.index.categories_of(self.car), [self.train])
        dictionary = ComponentDictionary(capacity=10)
        dictionary.insert(component(3, self.train, (0, 0, 80, 40)))
        dictionary.insert(component(4, self.car, (0, 0, 80, 40)))
        self.assertEqual(dictionary.query_inter(component(2, self.car, (0, 0, 20, 10)), self.index).instance_id, 3)

    def test_aspect_decides(self):
        dictionary = ComponentDictionary(capacity=10)
        dictionary.insert(component(3, self.train, (0, 0, 1, 4)))
        dictionary.insert(component(4, self.train, (7, 7, 11, 8)))
        query = component(2, self.car, (0, 0, 4, 1))
        self.assertEqual(dictionary.query_inter(query, self.index).instance_id, 4)

    def test_no_neighbor_entries(self):
        dictionary = ComponentDictionary(capacity=10)
        dictionary.insert(component(4, self.car, (0, 0, 4, 1)))
        self.assertIsNone(dictionary.query_inter(component(2, self.car, (0, 0, 4, 1)), self.index))

    def test_random_draw_stays_in_pool(self):
        dictionary = ComponentDictionary(capacity=10)
        for i in range(3, 8):
            dictionary.insert(component(i, self.train, (0, 0, i, 3)))
        dictionary.insert(component(20, self.car, (0, 0, 4, 1)))
        query = component(2, self.car, (0, 0, 4, 1))
        draws = [dictionary.query_random(query, np.random.default_rng(s), self.index).instance_id for s in range(30)]
        self.assertTrue(set(draws) <= {3, 4, 5, 6, 7})
        again = [dictionary.query_random(query, np.random.default_rng(s), self.index).instance_id for s in range(30)]
        self.assertEqual(draws, again)
        self.assertEqual(dictionary.query_random(query, np.random.default_rng(0)).instance_id, 20)


class TestPopulate(unittest.TestCase):
    def test_streams_every_instance(self):
        dataset = man_sitting_on_car()
        bank = FeatureBank(dataset, make_embeddings(dataset.vocab), SMALL_DIMS)
        dictionary = ComponentDictionary(capacity=4, seed=1)
        self.assertEqual(populate(dictionary, dataset, bank, seed=1), 6)
        self.assertEqual(len(dictionary), 4)
        self.assertEqual(dictionary.evictions, 2)
        dumped = list(dictionary.dump())
        self.assertEqual(len(dumped), 4)
        self.assertEqual(set(dumped[0]), {'seq', 'instance_id', 'category', 'box'})


if __name__ == '__main__':
    unittest.main()
