"""Batch samplers for classifier training.

``BalancedSampler`` picks N distinct predicates per batch and K images per
predicate, so rare predicates are drawn as often as frequent ones.
``UniformImageSampler`` draws N*K images uniformly and is the baseline.
"""
import logging
from typing import Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from .error_handler import ConfigError

logger = logging.getLogger('DecSGG.sampler')

Batch = List[Tuple[int, List[int]]]


class BalancedSampler:
    def __init__(self, pools: Mapping[int, Sequence[int]], n_predicates: int = 5,
                 k_images: int = 1, seed: int = 0):
        if n_predicates < 1 or k_images < 1:
            raise ConfigError("N and K must both be at least 1",
                              {'n_predicates': n_predicates, 'k_images': k_images})
        self.pools: Dict[int, np.ndarray] = {
            int(p): np.array(sorted(set(ids)), dtype=np.int64) for p, ids in pools.items() if len(ids)
        }
        self.eligible = np.array(sorted(self.pools), dtype=np.int64)
        if len(self.eligible) < n_predicates:
            raise ConfigError(
                f"Only {len(self.eligible)} predicates have images, cannot sample {n_predicates} per batch",
                {'eligible': len(self.eligible), 'n_predicates': n_predicates},
            )
        self.n_predicates = n_predicates
        self.k_images = k_images
        self.rng_seed = seed
        self._rng = np.random.default_rng(seed)
        logger.debug("Balanced sampler ready",
                     extra={'eligible': len(self.eligible), 'n': n_predicates, 'k': k_images})

    @classmethod
    def from_dataset(cls, dataset, corpus=None, n_predicates: int = 5, k_images: int = 1,
                     seed: int = 0) -> 'BalancedSampler':
        """An image joins a predicate's pool when it holds a real or composed triple of it"""
        pools: Dict[int, set] = {}
        for image, triple in dataset.iter_triples():
            pools.setdefault(triple.predicate, set()).add(image.image_id)
        if corpus is not None:
            for rel in corpus.relations:
                pools.setdefault(rel.predicate_label, set()).add(rel.image_id)
        return cls({p: sorted(ids) for p, ids in pools.items()}, n_predicates, k_images, seed)

    @property
    def batch_size(self) -> int:
        return self.n_predicates * self.k_images

    def next_batch(self) -> Batch:
        chosen = self._rng.choice(len(self.eligible), size=self.n_predicates, replace=False)
        batch = []
        for i in chosen:
            predicate = int(self.eligible[i])
            pool = self.pools[predicate]
            # small pools are drawn with replacement
            picks = self._rng.choice(pool, size=self.k_images, replace=len(pool) < self.k_images)
            batch.append((predicate, [int(x) for x in picks]))
        return batch

    def next_images(self) -> List[int]:
        return [image_id for _, ids in self.next_batch() for image_id in ids]

    def __iter__(self) -> Iterator[Batch]:
        while True:
            yield self.next_batch()


class UniformImageSampler:
    """Uniform image batches; frequent predicates dominate as they do in the data"""

    def __init__(self, image_ids: Sequence[int], batch_size: int = 5, seed: int = 0):
        if batch_size < 1:
            raise ConfigError("Batch size must be at least 1", {'batch_size': batch_size})
        if not len(image_ids):
            raise ConfigError("No training images to sample from")
        self.image_ids = np.array(sorted(image_ids), dtype=np.int64)
        self.batch_size = batch_size
        self.rng_seed = seed
        self._rng = np.random.default_rng(seed)

    @classmethod
    def from_dataset(cls, dataset, batch_size: int = 5, seed: int = 0,
                     only_annotated: bool = True) -> 'UniformImageSampler':
        ids = [image.image_id for image in dataset.images if image.triples or not only_annotated]
        return cls(ids, batch_size, seed)

    def next_images(self) -> List[int]:
        replace = len(self.image_ids) < self.batch_size
        return [int(x) for x in self._rng.choice(self.image_ids, size=self.batch_size, replace=replace)]

    def __iter__(self) -> Iterator[List[int]]:
        while True:
            yield self.next_images()


def make_sampler(dataset, corpus, balanced: bool, n_predicates: int, k_images: int, seed: int):
    if balanced:
        return BalancedSampler.from_dataset(dataset, corpus, n_predicates, k_images, seed)
    return UniformImageSampler.from_dataset(dataset, n_predicates * k_images, seed)
