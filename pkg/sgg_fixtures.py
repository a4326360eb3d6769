"""Small hand-built datasets shared by the test modules"""
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from dec_sgg.geometry import BoundingBox
from dec_sgg.schema import (
    NO_RELATION,
    CategoryVocab,
    Dataset,
    EmbeddingTable,
    FeatureDims,
    ImageRecord,
    ObjectInstance,
    RelationTriple,
    VisualComponent,
)

SMALL_DIMS = FeatureDims(visual=4, spatial=16, word=3)

CATEGORIES = ('man', 'car', 'train', 'horse')
PREDICATES = ('sitting on', 'riding', 'near')

# car and train are close, man and horse are close
WORD_VECTORS = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.1],
    [0.0, 1.0, 0.0],
    [0.9, 0.1, 0.0],
])

InstanceSpec = Tuple[int, str, Sequence[float]]  # id, category name, box
TripleSpec = Tuple[int, str, int]  # subject id, predicate name, object id


def make_vocab(categories: Sequence[str] = CATEGORIES, predicates: Sequence[str] = PREDICATES) -> CategoryVocab:
    return CategoryVocab(tuple(categories), (NO_RELATION,) + tuple(predicates))


def make_embeddings(vocab: CategoryVocab, matrix: Optional[np.ndarray] = None) -> EmbeddingTable:
    if matrix is None:
        matrix = WORD_VECTORS
    return EmbeddingTable(vocab.object_categories, np.asarray(matrix, dtype=np.float64))


def make_image(vocab: CategoryVocab, image_id: int, instances: Iterable[InstanceSpec],
               triples: Iterable[TripleSpec] = (), width: float = 800.0, height: float = 600.0,
               visual_dim: Optional[int] = SMALL_DIMS.visual, seed: int = 0) -> ImageRecord:
    rng = np.random.default_rng(seed + image_id)
    objects = []
    for instance_id, category, box in instances:
        feature = rng.normal(0.0, 1.0, visual_dim) if visual_dim else None
        objects.append(ObjectInstance(instance_id, image_id, vocab.category_index(category),
                                      BoundingBox(*box), feature))
    relations = tuple(RelationTriple(image_id, s, o, vocab.predicate_index(p)) for s, p, o in triples)
    return ImageRecord(image_id, width, height, tuple(objects), relations)


def man_sitting_on_car(vocab: Optional[CategoryVocab] = None) -> Dataset:
    """Image 1 holds <man, sitting on, car> with a large man and a small, disjoint car.
    Image 2 holds a train and a horse, image 3 another car next to a man."""
    vocab = vocab or make_vocab()
    return Dataset([
        make_image(vocab, 1, [(1, 'man', (0, 0, 400, 500)), (2, 'car', (500, 400, 600, 450))],
                   [(1, 'sitting on', 2)]),
        make_image(vocab, 2, [(3, 'train', (450, 100, 560, 160)), (4, 'horse', (0, 0, 300, 300))],
                   [(4, 'near', 3)]),
        make_image(vocab, 3, [(5, 'car', (520, 380, 610, 440)), (6, 'man', (10, 10, 380, 520))],
                   [(6, 'riding', 5)]),
    ], vocab)


def random_box(rng: np.random.Generator, width: float = 800.0, height: float = 600.0) -> Tuple[float, ...]:
    x_t = float(rng.integers(0, int(width) - 20))
    y_t = float(rng.integers(0, int(height) - 20))
    x_b = float(rng.integers(int(x_t) + 1, int(width) + 1))
    y_b = float(rng.integers(int(y_t) + 1, int(height) + 1))
    return (x_t, y_t, x_b, y_b)


def random_dataset(rng: np.random.Generator, vocab: Optional[CategoryVocab] = None, n_images: int = 10,
                   visual_dim: Optional[int] = SMALL_DIMS.visual) -> Dataset:
    """Images with 2-6 random boxes and a few random triples each"""
    vocab = vocab or make_vocab()
    images = []
    next_id = 1
    for image_id in range(1, n_images + 1):
        n = int(rng.integers(2, 7))
        instances = []
        for _ in range(n):
            category = vocab.object_categories[int(rng.integers(vocab.num_categories))]
            instances.append((next_id, category, random_box(rng)))
            next_id += 1
        ids = [spec[0] for spec in instances]
        pairs = [(s, o) for s in ids for o in ids if s != o]
        chosen = rng.choice(len(pairs), size=min(len(pairs), int(rng.integers(1, 4))), replace=False)
        triples = [(pairs[i][0], vocab.predicates[int(rng.integers(1, vocab.num_predicates))], pairs[i][1])
                   for i in chosen]
        images.append(make_image(vocab, image_id, instances, triples, visual_dim=visual_dim,
                                 seed=int(rng.integers(1 << 30))))
    return Dataset(images, vocab)


def component(instance_id: int, category: int, box: Sequence[float], image_id: int = 1,
              dim: int = 3) -> VisualComponent:
    inst = ObjectInstance(instance_id, image_id, category, BoundingBox(*box))
    return VisualComponent(inst, np.full(dim, float(instance_id)))


def components_by_id(items: Iterable[VisualComponent]) -> Dict[int, VisualComponent]:
    return {c.instance_id: c for c in items}


def instance_ids(items: Iterable[VisualComponent]) -> List[int]:
    return [c.instance_id for c in items]
