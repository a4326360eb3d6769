"""Constrained Recall@K and mean Recall@K for predicate classification, plus
the few-shot and zero-shot split generators."""
import csv
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .error_handler import ConfigError, DataError, ParseError
from .schema import Combination, Dataset

logger = logging.getLogger('DecSGG.evaluation')
telemetry = logging.getLogger('telemetry')

Prediction = Tuple[int, int, int, float]  # subject id, object id, predicate, score
GroundTruth = Tuple[int, int, int]  # subject id, object id, predicate


@dataclass(frozen=True)
class EvalRecord:
    image_id: int
    predictions: Tuple[Prediction, ...]
    ground_truth: Tuple[GroundTruth, ...]

    def __post_init__(self):
        object.__setattr__(self, 'predictions', tuple(tuple(p) for p in self.predictions))
        object.__setattr__(self, 'ground_truth', tuple(tuple(g) for g in self.ground_truth))
        pairs = set()
        previous = math.inf
        for s, o, _, score in self.predictions:
            if not math.isfinite(score):
                raise DataError(f"Non-finite score in image {self.image_id}", {'image_id': self.image_id})
            if score > previous:
                raise DataError(f"Predictions of image {self.image_id} are not sorted by score",
                                {'image_id': self.image_id})
            previous = score
            # graph constraint: one predicate per ordered pair
            if (s, o) in pairs:
                raise DataError(
                    f"Pair ({s}, {o}) predicted twice in image {self.image_id}",
                    {'image_id': self.image_id, 'pair': [s, o]},
                )
            pairs.add((s, o))

    def top_k(self, k: int) -> Set[GroundTruth]:
        return {(s, o, p) for s, o, p, _ in self.predictions[:max(k, 0)]}

    def with_ground_truth(self, ground_truth: Iterable[GroundTruth]) -> 'EvalRecord':
        return EvalRecord(self.image_id, self.predictions, tuple(ground_truth))


def recall_at_k(record: EvalRecord, k: int) -> float:
    """Fraction of ground-truth triples found in the top-k predictions (0 without ground truth)"""
    if not record.ground_truth:
        return 0.0
    hits = record.top_k(k)
    return sum(1 for gt in record.ground_truth if gt in hits) / len(record.ground_truth)


def overall_recall_at_k(records: Iterable[EvalRecord], k: int) -> float:
    """Mean per-image R@K over images with ground truth"""
    values = [recall_at_k(r, k) for r in records if r.ground_truth]
    return float(np.mean(values)) if values else 0.0


def predicate_hits(records: Iterable[EvalRecord], k: int, num_predicates: int) -> Tuple[np.ndarray, np.ndarray]:
    hits = np.zeros(num_predicates, dtype=np.int64)
    totals = np.zeros(num_predicates, dtype=np.int64)
    for record in records:
        top = record.top_k(k)
        for gt in record.ground_truth:
            totals[gt[2]] += 1
            if gt in top:
                hits[gt[2]] += 1
    return hits, totals


def mean_recall_at_k(records: Sequence[EvalRecord], k: int, num_predicates: int,
                     exclude_absent: bool = True) -> Tuple[float, np.ndarray]:
    """Unweighted mean over predicates of recall aggregated across images.

    The returned vector has one entry per predicate index. Index 0 (no
    relation) is always NaN; predicates absent from the ground truth are NaN
    when excluded and 0 otherwise.
    """
    hits, totals = predicate_hits(records, k, num_predicates)
    per_predicate = np.full(num_predicates, np.nan)
    present = totals > 0
    per_predicate[present] = hits[present] / totals[present]
    if not exclude_absent:
        per_predicate[~present] = 0.0
    per_predicate[0] = np.nan
    if np.all(np.isnan(per_predicate)):
        return 0.0, per_predicate
    return float(np.nanmean(per_predicate)), per_predicate


def tail_predicates(train_counts: np.ndarray, per_predicate: np.ndarray, tail_size: int) -> List[int]:
    """The ``tail_size`` rarest training predicates that can be scored"""
    candidates = [p for p in range(1, len(train_counts)) if not np.isnan(per_predicate[p])]
    candidates.sort(key=lambda p: (train_counts[p], p))
    return candidates[:tail_size]


def tail_mean_recall(per_predicate: np.ndarray, train_counts: np.ndarray, tail_size: int) -> Tuple[float, List[int]]:
    tail = tail_predicates(train_counts, per_predicate, tail_size)
    if not tail:
        return 0.0, []
    return float(np.mean(per_predicate[tail])), tail


# -- splits -------------------------------------------------------------------

@dataclass
class SplitSpec:
    kind: str  # 'full', 'few-shot' or 'zero-shot'
    seed: Optional[int] = None
    shots: Optional[int] = None
    train_image_ids: Tuple[int, ...] = ()
    test_triples: Tuple[Tuple[int, int, int, int], ...] = ()  # image, subject, object, predicate
    per_predicate: Dict[int, List[int]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            'kind': self.kind,
            'seed': self.seed,
            'shots': self.shots,
            'train_image_ids': list(self.train_image_ids),
            'test_triples': [list(t) for t in self.test_triples],
            'per_predicate': {str(p): ids for p, ids in sorted(self.per_predicate.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'SplitSpec':
        try:
            return cls(
                kind=data['kind'],
                seed=data.get('seed'),
                shots=data.get('shots'),
                train_image_ids=tuple(int(i) for i in data.get('train_image_ids', [])),
                test_triples=tuple(tuple(int(v) for v in t) for t in data.get('test_triples', [])),
                per_predicate={int(p): [int(i) for i in ids] for p, ids in data.get('per_predicate', {}).items()},
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"Malformed split description: {e}")


def save_split(spec: SplitSpec, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(spec.to_dict(), f, indent=2, sort_keys=True)
        f.write('\n')


def load_split(path: str) -> SplitSpec:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return SplitSpec.from_dict(json.load(f))
    except FileNotFoundError:
        raise DataError(f"File not found: {path}", {'path': path})
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed split file {path}: {e.msg}", {'path': path})


def few_shot_split(dataset: Dataset, shots: int, seed: int) -> SplitSpec:
    """Sample min(shots, available) images per predicate; the union is the training set"""
    if shots < 1:
        raise ConfigError(f"Shots must be at least 1, got {shots}", {'shots': shots})
    rng = np.random.default_rng(seed)
    images_of: Dict[int, Set[int]] = {}
    for image, triple in dataset.iter_triples():
        images_of.setdefault(triple.predicate, set()).add(image.image_id)
    per_predicate = {}
    for predicate in sorted(images_of):
        available = np.array(sorted(images_of[predicate]), dtype=np.int64)
        take = min(shots, len(available))
        picked = rng.choice(available, size=take, replace=False)
        per_predicate[predicate] = sorted(int(i) for i in picked)
    train_ids = sorted({i for ids in per_predicate.values() for i in ids})
    logger.info("Few-shot split", extra={'shots': shots, 'seed': seed, 'images': len(train_ids)})
    return SplitSpec('few-shot', seed=seed, shots=shots, train_image_ids=tuple(train_ids),
                     per_predicate=per_predicate)


def zero_shot_split(train: Dataset, test: Dataset) -> SplitSpec:
    """Test triples whose category combination never occurs in training"""
    if train.vocab != test.vocab:
        raise DataError("Train and test datasets use different vocabularies")
    seen = train.combinations()
    selected = tuple(
        (image.image_id, triple.subject, triple.object, triple.predicate)
        for image, triple in test.iter_triples()
        if test.combination(triple) not in seen
    )
    spec = SplitSpec('zero-shot', test_triples=selected)
    verify_zero_shot(spec, train, test)
    logger.info("Zero-shot split", extra={'triples': len(selected)})
    return spec


def verify_zero_shot(spec: SplitSpec, train: Dataset, test: Dataset) -> None:
    seen = train.combinations()
    collisions: List[Combination] = []
    for image_id, s, o, p in spec.test_triples:
        combo = (test.instance(s).category, p, test.instance(o).category)
        if combo in seen:
            collisions.append(combo)
    if collisions:
        raise DataError("Zero-shot triples collide with training combinations",
                        {'collisions': [list(c) for c in collisions[:10]]})


def restrict_records(records: Iterable[EvalRecord], spec: SplitSpec) -> List[EvalRecord]:
    """Keep only the split's test triples as ground truth (zero-shot evaluation)"""
    if spec.kind != 'zero-shot':
        return list(records)
    wanted: Dict[int, Set[GroundTruth]] = {}
    for image_id, s, o, p in spec.test_triples:
        wanted.setdefault(image_id, set()).add((s, o, p))
    restricted = []
    for record in records:
        keep = [gt for gt in record.ground_truth if gt in wanted.get(record.image_id, ())]
        restricted.append(record.with_ground_truth(keep))
    return restricted


# -- reports ------------------------------------------------------------------

def evaluate(records: Sequence[EvalRecord], num_predicates: int, train_counts: np.ndarray,
             ks: Sequence[int] = (20, 50, 100), exclude_absent: bool = True, tail_size: int = 15) -> dict:
    """Summary dict with R@K, mR@K, per-predicate recall at the largest K and the tail view"""
    report = {'images': sum(1 for r in records if r.ground_truth),
              'triples': sum(len(r.ground_truth) for r in records),
              'recall': {}, 'mean_recall': {}}
    top_k = max(ks)
    per_predicate = None
    for k in ks:
        report['recall'][str(k)] = overall_recall_at_k(records, k)
        report['mean_recall'][str(k)], at_k = mean_recall_at_k(records, k, num_predicates, exclude_absent)
        if k == top_k:
            per_predicate = at_k
    tail_value, tail = tail_mean_recall(per_predicate, train_counts, tail_size)
    report['top_k'] = top_k
    report['per_predicate'] = [None if np.isnan(v) else float(v) for v in per_predicate]
    report['tail'] = {'size': tail_size, 'predicates': tail, 'mean_recall': tail_value}
    telemetry.info("Evaluation summary", extra={'telemetry': {
        'recall': report['recall'], 'mean_recall': report['mean_recall'], 'tail': tail_value}})
    return report


def write_per_predicate_csv(path: str, predicates: Sequence[str], train_counts: np.ndarray,
                            per_predicate: Sequence[Optional[float]], k: int = 100) -> None:
    """Rows sorted by descending training frequency, background excluded"""
    order = sorted(range(1, len(predicates)), key=lambda p: (-int(train_counts[p]), p))
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(['predicate', 'train_frequency', f'recall_at_{k}'])
        for p in order:
            value = per_predicate[p]
            writer.writerow([predicates[p], int(train_counts[p]), '' if value is None else repr(float(value))])


def compare_reports(baseline: dict, dec: dict, rarest: int = 5) -> dict:
    """Tail margin of a DeC report over a baseline evaluated on the same test set"""
    tail = baseline['tail']['predicates']
    dec_values = dec['per_predicate']
    base_values = baseline['per_predicate']
    dec_tail = float(np.mean([dec_values[p] for p in tail])) if tail else 0.0
    base_tail = float(np.mean([base_values[p] for p in tail])) if tail else 0.0
    return {
        'tail_predicates': tail,
        'baseline_tail_mean_recall': base_tail,
        'dec_tail_mean_recall': dec_tail,
        'margin': dec_tail - base_tail,
        'rarest': tail[:rarest],
        'rarest_nonzero_under_dec': all((dec_values[p] or 0.0) > 0 for p in tail[:rarest]),
        'mean_recall': {k: {'baseline': baseline['mean_recall'][k], 'dec': dec['mean_recall'][k]}
                        for k in baseline['mean_recall']},
    }
