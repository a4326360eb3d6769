"""Seeded synthetic scene graphs with a long-tailed predicate distribution.

Object categories are named ``"<adjective> <noun>"``; categories sharing a
noun form a group with similar word embeddings and visual clusters. Every
predicate belongs to a family bound to an ordered (subject group, object
group) pair, and members of one family differ by the vertical band the
subject sits in. Bands overlap, so frequent members crowd out rare ones.
Some (subject category, predicate, object category) combinations are held
out of training and planted in the test set.
"""
import os
import json
import math
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .error_handler import ConfigError
from .formats import save_annotations, save_vocab, write_features, write_token_vectors
from .geometry import BoundingBox
from .schema import NO_RELATION, CategoryVocab, Combination, Dataset, ImageRecord, ObjectInstance, RelationTriple

logger = logging.getLogger('DecSGG.synth')

NOUNS = ('vehicle', 'animal', 'person', 'furniture', 'plant', 'building', 'tool', 'food')
ADJECTIVES = ('red', 'blue', 'green', 'small', 'old', 'tall', 'dark', 'wooden')

SYNTH_FILES = {
    'vocab': 'vocab.json',
    'train': 'train.jsonl',
    'test': 'test.jsonl',
    'features': 'features.vcf',
    'embeddings': 'embeddings.txt',
    'info': 'synth_info.json',
}


@dataclass(frozen=True)
class SynthConfig:
    n_train_images: int = 2000
    n_test_images: int = 500
    n_object_categories: int = 20
    group_size: int = 4
    n_predicates: int = 50
    zipf_exponent: float = 1.0
    visual_dim: int = 64
    word_dim: int = 200
    cluster_scale: float = 1.0
    spread: float = 0.5
    image_width: int = 800
    image_height: int = 600
    placement_jitter: float = 0.12
    n_unseen: int = 10
    unseen_copies: int = 3
    seed: int = 0

    def __post_init__(self):
        counts = {
            'n_train_images': self.n_train_images, 'n_test_images': self.n_test_images,
            'n_object_categories': self.n_object_categories, 'group_size': self.group_size,
            'n_predicates': self.n_predicates, 'visual_dim': self.visual_dim, 'word_dim': self.word_dim,
            'image_width': self.image_width, 'image_height': self.image_height,
        }
        bad = {k: v for k, v in counts.items() if v < 1}
        if bad:
            raise ConfigError("Synthetic counts must be at least 1", bad)
        if self.spread < 0 or self.cluster_scale < 0 or self.placement_jitter < 0 or self.zipf_exponent < 0:
            raise ConfigError("Spread, scale, jitter and Zipf exponent must be non-negative", asdict(self))
        if self.n_unseen < 0 or self.unseen_copies < 0:
            raise ConfigError("Held-out counts must be non-negative",
                              {'n_unseen': self.n_unseen, 'unseen_copies': self.unseen_copies})
        if self.group_size > len(ADJECTIVES) or self.n_groups > len(NOUNS):
            raise ConfigError(
                f"At most {len(NOUNS)} groups of {len(ADJECTIVES)} categories are available",
                {'n_object_categories': self.n_object_categories, 'group_size': self.group_size},
            )

    @property
    def n_groups(self) -> int:
        return math.ceil(self.n_object_categories / self.group_size)

    @classmethod
    def from_params(cls, params, **overrides) -> 'SynthConfig':
        base = {'visual_dim': params['VISUAL_DIM'], 'word_dim': params['WORD_DIM'], 'seed': params['SEED']}
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)


@dataclass
class SynthData:
    config: SynthConfig
    vocab: CategoryVocab
    train: Dataset
    test: Dataset
    features: Dict[int, np.ndarray]
    token_vectors: Dict[str, np.ndarray]
    held_out: List[Combination]


def zipf_probabilities(n: int, exponent: float) -> np.ndarray:
    weights = np.power(np.arange(1, n + 1, dtype=np.float64), -exponent)
    return weights / weights.sum()


class _Generator:
    def __init__(self, config: SynthConfig):
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        c = config
        self.groups = [list(range(g * c.group_size, min((g + 1) * c.group_size, c.n_object_categories)))
                       for g in range(c.n_groups)]
        self.group_of = [cat // c.group_size for cat in range(c.n_object_categories)]
        families = [(gs, go) for gs in range(c.n_groups) for go in range(c.n_groups)]
        order = self.rng.permutation(len(families))
        self.families = [families[i] for i in order]
        self.members = math.ceil(c.n_predicates / len(self.families))
        self.cdf = np.cumsum(zipf_probabilities(c.n_predicates, c.zipf_exponent))
        self.next_instance = 1
        self.next_image = 1

    # predicate p (1-based) -> (family index, member index)
    def family_of(self, predicate: int) -> Tuple[int, int]:
        n_fam = len(self.families)
        return (predicate - 1) % n_fam, (predicate - 1) // n_fam

    def category_names(self) -> List[str]:
        return [f"{ADJECTIVES[cat % self.config.group_size]} {NOUNS[self.group_of[cat]]}"
                for cat in range(self.config.n_object_categories)]

    def token_vectors(self) -> Dict[str, np.ndarray]:
        c = self.config
        vectors = {}
        for noun in NOUNS[:c.n_groups]:
            vectors[noun] = self.rng.normal(0.0, 1.0, c.word_dim)
        for adjective in ADJECTIVES[:c.group_size]:
            vectors[adjective] = self.rng.normal(0.0, 0.6, c.word_dim)
        return vectors

    def cluster_means(self) -> np.ndarray:
        c = self.config
        group_means = self.rng.normal(0.0, c.cluster_scale, (c.n_groups, c.visual_dim))
        own = self.rng.normal(0.0, c.cluster_scale, (c.n_object_categories, c.visual_dim))
        return group_means[self.group_of] + 0.7 * own

    def choose_held_out(self) -> List[Combination]:
        c = self.config
        candidates = []
        for p in range(1, c.n_predicates + 1):
            gs, go = self.families[self.family_of(p)[0]]
            if len(self.groups[go]) < 2:
                continue
            candidates.extend((s, p, o) for s in self.groups[gs] for o in self.groups[go])
        if c.n_unseen > len(candidates):
            raise ConfigError(
                f"Cannot hold out {c.n_unseen} combinations, only {len(candidates)} exist",
                {'n_unseen': c.n_unseen, 'available': len(candidates)},
            )
        held: List[Combination] = []
        blocked: Dict[Tuple[int, int], int] = {}
        for i in self.rng.permutation(len(candidates)):
            if len(held) == c.n_unseen:
                break
            s, p, o = candidates[int(i)]
            go = self.families[self.family_of(p)[0]][1]
            # every (subject, predicate) keeps at least one trainable object category
            if blocked.get((s, p), 0) + 1 >= len(self.groups[go]):
                continue
            blocked[(s, p)] = blocked.get((s, p), 0) + 1
            held.append((s, p, o))
        if len(held) < c.n_unseen:
            raise ConfigError("Held-out combinations would leave predicates untrainable",
                              {'n_unseen': c.n_unseen, 'feasible': len(held)})
        return sorted(held)

    def _box(self, cx: float, cy: float, w: float, h: float) -> BoundingBox:
        W, H = self.config.image_width, self.config.image_height
        x_t = float(np.clip(round(cx - w / 2), 0, W - 1))
        y_t = float(np.clip(round(cy - h / 2), 0, H - 1))
        x_b = float(np.clip(round(cx + w / 2), x_t + 1, W))
        y_b = float(np.clip(round(cy + h / 2), y_t + 1, H))
        return BoundingBox(x_t, y_t, x_b, y_b)

    def _instance(self, image_id: int, category: int, box: BoundingBox, means: np.ndarray) -> ObjectInstance:
        noise = self.rng.normal(0.0, 1.0, self.config.visual_dim)
        feature = (means[category] + self.config.spread * noise).astype(np.float32).astype(np.float64)
        inst = ObjectInstance(self.next_instance, image_id, category, box, feature)
        self.next_instance += 1
        return inst

    def _pair_boxes(self, member: int) -> Tuple[BoundingBox, BoundingBox]:
        c = self.config
        W, H = c.image_width, c.image_height
        band = (member + 0.5) / self.members
        sy = (band + self.rng.normal(0.0, c.placement_jitter)) * H
        oy = self.rng.uniform(0.2, 0.8) * H
        sx = self.rng.uniform(0.15, 0.45) * W
        ox = self.rng.uniform(0.55, 0.85) * W
        big = (self.rng.uniform(0.18, 0.3) * W, self.rng.uniform(0.18, 0.3) * H)
        small = (self.rng.uniform(0.06, 0.14) * W, self.rng.uniform(0.06, 0.14) * H)
        s_size, o_size = (big, small) if self.rng.random() < 0.5 else (small, big)
        sy = float(np.clip(sy, s_size[1] / 2, H - s_size[1] / 2))
        return self._box(sx, sy, *s_size), self._box(ox, oy, *o_size)

    def _draw_predicate(self) -> int:
        index = int(np.searchsorted(self.cdf, self.rng.random(), side='right'))
        return min(index, self.config.n_predicates - 1) + 1

    def _categories(self, predicate: int, forbidden: Set[Combination]) -> Tuple[int, int]:
        family, _ = self.family_of(predicate)
        gs, go = self.families[family]
        s = int(self.rng.choice(self.groups[gs]))
        allowed = [o for o in self.groups[go] if (s, predicate, o) not in forbidden]
        return s, int(self.rng.choice(allowed))

    def image(self, means: np.ndarray, forbidden: Set[Combination],
              forced: Optional[Combination] = None) -> ImageRecord:
        c = self.config
        image_id = self.next_image
        self.next_image += 1
        n_triples = int(self.rng.integers(1, 4))
        n_instances = int(self.rng.integers(max(3, 2 * n_triples), 9))
        instances: List[ObjectInstance] = []
        triples: List[RelationTriple] = []
        for t in range(n_triples):
            if t == 0 and forced is not None:
                s_cat, predicate, o_cat = forced
            else:
                predicate = self._draw_predicate()
                s_cat, o_cat = self._categories(predicate, forbidden)
            s_box, o_box = self._pair_boxes(self.family_of(predicate)[1])
            subject = self._instance(image_id, s_cat, s_box, means)
            obj = self._instance(image_id, o_cat, o_box, means)
            instances.extend([subject, obj])
            triples.append(RelationTriple(image_id, subject.instance_id, obj.instance_id, predicate))
        W, H = c.image_width, c.image_height
        while len(instances) < n_instances:
            category = int(self.rng.integers(c.n_object_categories))
            w, h = self.rng.uniform(0.05, 0.2) * W, self.rng.uniform(0.05, 0.2) * H
            box = self._box(self.rng.uniform(w / 2, W - w / 2), self.rng.uniform(h / 2, H - h / 2), w, h)
            instances.append(self._instance(image_id, category, box, means))
        return ImageRecord(image_id, float(W), float(H), tuple(instances), tuple(triples))


def generate(config: SynthConfig) -> SynthData:
    gen = _Generator(config)
    names = gen.category_names()
    predicates = [NO_RELATION] + [f"rel_{p:02d}" for p in range(1, config.n_predicates + 1)]
    vocab = CategoryVocab(tuple(names), tuple(predicates))
    tokens = gen.token_vectors()
    means = gen.cluster_means()
    held_out = gen.choose_held_out()
    forbidden = set(held_out)

    train_images = [gen.image(means, forbidden) for _ in range(config.n_train_images)]
    planted = config.n_unseen * config.unseen_copies if held_out else 0
    test_images = [
        gen.image(means, set(), held_out[i % len(held_out)] if i < planted else None)
        for i in range(config.n_test_images)
    ]
    train = Dataset(train_images, vocab)
    test = Dataset(test_images, vocab)
    features = {inst.instance_id: inst.visual_feature
                for ds in (train, test) for inst in ds.iter_instances()}

    counts = train.predicate_counts()
    logger.info("Synthetic data generated", extra={
        'train_images': len(train), 'test_images': len(test), 'train_triples': train.num_triples,
        'head_count': int(counts[1:].max()), 'tail_count': int(counts[1:].min()), 'held_out': len(held_out),
    })
    return SynthData(config, vocab, train, test, features, tokens, held_out)


def write_synth(data: SynthData, out_dir: str) -> Dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {key: os.path.join(out_dir, name) for key, name in SYNTH_FILES.items()}
    save_vocab(data.vocab, paths['vocab'])
    save_annotations(data.train, paths['train'])
    save_annotations(data.test, paths['test'])
    write_features(data.features, paths['features'], data.config.visual_dim)
    write_token_vectors(data.token_vectors, paths['embeddings'])
    info = {
        'config': asdict(data.config),
        'held_out': [
            {'subject': data.vocab.object_categories[s], 'predicate': data.vocab.predicates[p],
             'object': data.vocab.object_categories[o]}
            for s, p, o in data.held_out
        ],
    }
    with open(paths['info'], 'w', encoding='utf-8') as f:
        json.dump(info, f, indent=2, sort_keys=True)
        f.write('\n')
    return paths
