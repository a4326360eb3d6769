"""Visual components dictionary and candidate retrieval.

The dictionary is a single global pool of at most ``capacity`` components.
When full, inserting evicts one uniformly random entry (seeded). Retrieval
ranks candidates by box shape similarity only; ties go to the entry that was
inserted first.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import numpy as np
from sklearn.metrics.pairwise import cosine_similarity

from .error_handler import ConfigError, VocabularyError
from .geometry import shape_similarity_many
from .schema import Dataset, EmbeddingTable, FeatureBank, VisualComponent

logger = logging.getLogger('DecSGG.dictionary')


@dataclass(frozen=True)
class CategoryNeighborIndex:
    """For each category, other categories ranked by word-embedding cosine similarity"""
    neighbors: Tuple[Tuple[Tuple[int, float], ...], ...]

    def of(self, category: int) -> Tuple[Tuple[int, float], ...]:
        return self.neighbors[category]

    def categories_of(self, category: int) -> List[int]:
        return [other for other, _ in self.neighbors[category]]

    def is_neighbor(self, category: int, other: int) -> bool:
        return other in self.categories_of(category)


def build_neighbor_index(embeddings: EmbeddingTable, k: int,
                         min_similarity: Optional[float] = None) -> CategoryNeighborIndex:
    """k most similar categories per category, self excluded, ties by category index"""
    if k < 1:
        raise ConfigError(f"Neighbor count must be at least 1, got {k}", {'k': k})
    norms = np.linalg.norm(embeddings.matrix, axis=1)
    zero = [embeddings.categories[i] for i in np.flatnonzero(norms == 0)]
    if zero:
        raise VocabularyError(f"Zero-norm embeddings for: {', '.join(zero)}", {'categories': zero})

    sims = cosine_similarity(embeddings.matrix)
    n = sims.shape[0]
    index = np.arange(n)
    neighbors = []
    for c in range(n):
        others = index[index != c]
        # descending similarity, ascending category index on ties
        order = np.lexsort((others, -sims[c, others]))
        ranked = [(int(others[i]), float(sims[c, others[i]])) for i in order]
        if min_similarity is not None:
            ranked = [(o, s) for o, s in ranked if s >= min_similarity]
        neighbors.append(tuple(ranked[:k]))
    return CategoryNeighborIndex(tuple(neighbors))


@dataclass(frozen=True)
class DictionaryEntry:
    seq: int
    component: VisualComponent


class ComponentDictionary:
    """Capacity-bounded pool of visual components grouped by category"""

    def __init__(self, capacity: int = 3000, seed: int = 0):
        if capacity < 1:
            raise ConfigError(f"Dictionary capacity must be positive, got {capacity}", {'capacity': capacity})
        self.logger = logger
        self.capacity = capacity
        self.rng_seed = seed
        self._rng = np.random.default_rng(seed)
        self._slots: List[DictionaryEntry] = []
        self._by_category: Dict[int, Dict[int, DictionaryEntry]] = {}
        self._by_instance: Dict[int, int] = {}  # instance id -> slot
        self._next_seq = 0
        self.evictions = 0

    def __len__(self) -> int:
        return len(self._slots)

    def __contains__(self, instance_id: int) -> bool:
        return instance_id in self._by_instance

    def insert(self, component: VisualComponent) -> Optional[VisualComponent]:
        """Add a component; returns the evicted one when the pool was full"""
        if component.instance_id in self._by_instance:
            # refresh in place, keeping the original insertion rank
            slot = self._by_instance[component.instance_id]
            old = self._slots[slot]
            entry = DictionaryEntry(old.seq, component)
            self._slots[slot] = entry
            self._by_category[old.component.category].pop(old.seq)
            self._by_category.setdefault(component.category, {})[old.seq] = entry
            return None

        entry = DictionaryEntry(self._next_seq, component)
        self._next_seq += 1
        evicted = None
        if len(self._slots) >= self.capacity:
            slot = int(self._rng.integers(len(self._slots)))
            victim = self._slots[slot]
            self._by_category[victim.component.category].pop(victim.seq)
            del self._by_instance[victim.component.instance_id]
            self._slots[slot] = entry
            evicted = victim.component
            self.evictions += 1
        else:
            slot = len(self._slots)
            self._slots.append(entry)
        self._by_instance[component.instance_id] = slot
        self._by_category.setdefault(component.category, {})[entry.seq] = entry
        return evicted

    def entries(self) -> List[DictionaryEntry]:
        """Entries in insertion order"""
        return sorted(self._slots, key=lambda e: e.seq)

    def category_entries(self, category: int) -> List[DictionaryEntry]:
        # dict order is insertion order and seq grows monotonically
        return list(self._by_category.get(category, {}).values())

    def _candidates(self, categories: List[int], exclude_id: int,
                    exclude: Iterable[int] = ()) -> List[DictionaryEntry]:
        banned = {exclude_id, *exclude}
        pool = []
        for category in categories:
            pool.extend(self.category_entries(category))
        pool = [e for e in pool if e.component.instance_id not in banned]
        pool.sort(key=lambda e: e.seq)
        return pool

    @staticmethod
    def _best_by_shape(u: VisualComponent, pool: List[DictionaryEntry]) -> Optional[VisualComponent]:
        if not pool:
            return None
        widths = np.array([e.component.box.x_b - e.component.box.x_t for e in pool])
        heights = np.array([e.component.box.y_b - e.component.box.y_t for e in pool])
        scores = shape_similarity_many(u.box, widths, heights)
        # argmax returns the first maximum, i.e. the earliest insertion
        return pool[int(np.argmax(scores))].component

    def query_intra(self, u: VisualComponent, exclude: Iterable[int] = ()) -> Optional[VisualComponent]:
        """Best same-category replacement for u"""
        return self._best_by_shape(u, self._candidates([u.category], u.instance_id, exclude))

    def query_inter(self, u: VisualComponent, index: CategoryNeighborIndex,
                    exclude: Iterable[int] = ()) -> Optional[VisualComponent]:
        """Best replacement among the semantically closest other categories"""
        candidates = self._candidates(index.categories_of(u.category), u.instance_id, exclude)
        return self._best_by_shape(u, candidates)

    def query_random(self, u: VisualComponent, rng: np.random.Generator,
                     index: Optional[CategoryNeighborIndex] = None,
                     exclude: Iterable[int] = ()) -> Optional[VisualComponent]:
        """Uniform draw from the intra pool, or from the inter pool when an index is given"""
        categories = [u.category] if index is None else index.categories_of(u.category)
        pool = self._candidates(categories, u.instance_id, exclude)
        if not pool:
            return None
        return pool[int(rng.integers(len(pool)))].component

    def dump(self) -> Iterator[dict]:
        for entry in self.entries():
            component = entry.component
            yield {
                'seq': entry.seq,
                'instance_id': component.instance_id,
                'category': component.category,
                'box': list(component.box.as_tuple()),
            }


def populate(dictionary: ComponentDictionary, dataset: Dataset, bank: FeatureBank, seed: int) -> int:
    """Stream every instance of the dataset, in a seeded order, into the dictionary"""
    ids = [inst.instance_id for inst in dataset.iter_instances()]
    order = np.random.default_rng(seed).permutation(len(ids))
    for i in order:
        dictionary.insert(bank.component(ids[i]))
    logger.info(
        "Dictionary populated",
        extra={'streamed': len(ids), 'size': len(dictionary), 'evictions': dictionary.evictions},
    )
    return len(ids)
