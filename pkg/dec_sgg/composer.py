"""Composition of new relation triples from anchor relations.

A composed relation keeps the anchor's essential element and puts a retrieved
component in the decomposed slot. The slot's feature is
``[visual(replacement); spatial(decomposed box in the anchor image); word(replacement label)]``
and the label is the anchor's predicate.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .anchor import AnchorDecision, Decomposed, scan_anchors, select_and_decompose
from .dictionary import CategoryNeighborIndex, ComponentDictionary
from .error_handler import CompositionError, DataReferenceError
from .schema import (
    Combination,
    Dataset,
    EmbeddingTable,
    FeatureBank,
    FeatureDims,
    VisualComponent,
    concat_feature,
    spatial_encode,
)

logger = logging.getLogger('DecSGG.composer')
telemetry = logging.getLogger('telemetry')


class CompositionKind(str, Enum):
    INTRA = 'intra'
    INTER = 'inter'


@dataclass(frozen=True)
class ComposedRelation:
    anchor: AnchorDecision
    decomposed_slot: Decomposed
    replacement: VisualComponent
    kind: CompositionKind
    predicate_label: int
    composed_categories: Tuple[int, int]
    pair_feature: Tuple[np.ndarray, np.ndarray] = field(compare=False, repr=False)

    @property
    def image_id(self) -> int:
        return self.anchor.triple.image_id

    @property
    def subject_feature(self) -> np.ndarray:
        kept, composed = self.pair_feature
        return composed if self.decomposed_slot is Decomposed.SUBJECT else kept

    @property
    def object_feature(self) -> np.ndarray:
        kept, composed = self.pair_feature
        return kept if self.decomposed_slot is Decomposed.SUBJECT else composed

    def pair_vector(self) -> np.ndarray:
        """Classifier input: subject feature then object feature"""
        return np.concatenate([self.subject_feature, self.object_feature])

    def combination(self) -> Combination:
        return (self.composed_categories[0], self.predicate_label, self.composed_categories[1])

    def to_record(self) -> dict:
        triple = self.anchor.triple
        return {
            'image_id': triple.image_id,
            'subject': triple.subject,
            'object': triple.object,
            'predicate': triple.predicate,
            'slot': self.decomposed_slot.value,
            'replacement': self.replacement.instance_id,
            'kind': self.kind.value,
            'label': self.predicate_label,
        }


def anchor_pair_feature(decision: AnchorDecision, bank: FeatureBank) -> Tuple[np.ndarray, np.ndarray]:
    """(kept-element feature, decomposed-element feature) of the anchor itself"""
    if not decision.is_anchor:
        raise CompositionError("Triple is not an anchor relation", {'triple': list(decision.triple.key())})
    return bank.feature(decision.kept_id), bank.feature(decision.decomposed_id)


def compose(decision: AnchorDecision, replacement: VisualComponent, kind: CompositionKind,
            dataset: Dataset, bank: FeatureBank, embeddings: EmbeddingTable,
            index: Optional[CategoryNeighborIndex] = None) -> ComposedRelation:
    """Swap the decomposed element of an anchor for ``replacement``"""
    if not decision.is_anchor:
        raise CompositionError("Cannot compose from a non-anchor triple", {'triple': list(decision.triple.key())})
    dims: FeatureDims = bank.dims
    triple = decision.triple
    u = dataset.instance(decision.decomposed_id)
    kept = dataset.instance(decision.kept_id)
    _check_compatible(u.category, replacement.category, kind, index)
    if replacement.instance_id == kept.instance_id:
        raise CompositionError("Replacement is the kept element", {'ref': replacement.instance_id})
    if replacement.feature.shape != (dims.total,):
        raise CompositionError("Replacement feature has the wrong dimension",
                               {'expected': dims.total, 'got': list(replacement.feature.shape)})

    image = dataset.image(triple.image_id)
    composed = concat_feature(
        replacement.feature[:dims.visual],
        spatial_encode(u.box, image.width, image.height, dims.spatial),
        embeddings.vector(replacement.category),
    )
    if decision.decomposed is Decomposed.SUBJECT:
        categories = (replacement.category, kept.category)
    else:
        categories = (kept.category, replacement.category)
    return ComposedRelation(
        anchor=decision,
        decomposed_slot=decision.decomposed,
        replacement=replacement,
        kind=kind,
        predicate_label=triple.predicate,
        composed_categories=categories,
        pair_feature=(bank.feature(kept.instance_id), composed),
    )


def _check_compatible(u_category: int, r_category: int, kind: CompositionKind,
                      index: Optional[CategoryNeighborIndex]) -> None:
    if kind is CompositionKind.INTRA and r_category != u_category:
        raise CompositionError(
            "Intra-class replacement must share the decomposed element's category",
            {'decomposed': u_category, 'replacement': r_category},
        )
    if kind is CompositionKind.INTER:
        if r_category == u_category:
            raise CompositionError("Inter-class replacement must come from another category",
                                   {'category': u_category})
        if index is not None and not index.is_neighbor(u_category, r_category):
            raise CompositionError(
                "Inter-class replacement is not a semantic neighbor of the decomposed category",
                {'decomposed': u_category, 'replacement': r_category},
            )


def validate_composed(rel: ComposedRelation, dataset: Dataset, dims: FeatureDims,
                      embeddings: EmbeddingTable) -> None:
    """Raise CompositionError unless the relation satisfies every invariant"""
    triple = rel.anchor.triple
    s_cat = dataset.instance(triple.subject).category
    o_cat = dataset.instance(triple.object).category
    problems = []
    if rel.predicate_label != triple.predicate:
        problems.append('label differs from anchor predicate')
    if rel.decomposed_slot is not rel.anchor.decomposed or not rel.anchor.is_anchor:
        problems.append('slot does not match the anchor decision')
    if rel.kind is CompositionKind.INTRA and rel.composed_categories != (s_cat, o_cat):
        problems.append('intra composition changed categories')
    if rel.kind is CompositionKind.INTER:
        changed = [rel.composed_categories[0] != s_cat, rel.composed_categories[1] != o_cat]
        expected = [rel.decomposed_slot is Decomposed.SUBJECT, rel.decomposed_slot is Decomposed.OBJECT]
        if changed != expected:
            problems.append('inter composition must change exactly the decomposed slot')
    kept, composed = rel.pair_feature
    for name, vec in (('kept', kept), ('composed', composed)):
        if vec.shape != (dims.total,) or not np.all(np.isfinite(vec)):
            problems.append(f'{name} feature malformed')
    if not problems:
        image = dataset.image(triple.image_id)
        u = dataset.instance(rel.anchor.decomposed_id)
        expected_slot = concat_feature(
            rel.replacement.feature[:dims.visual],
            spatial_encode(u.box, image.width, image.height, dims.spatial),
            embeddings.vector(rel.replacement.category),
        )
        if not np.array_equal(composed, expected_slot):
            problems.append('composed slot layout is not [visual(replacement); spatial(u); word(label)]')
    if problems:
        raise CompositionError("Invalid composed relation: " + '; '.join(problems), rel.to_record())


@dataclass
class CompositionCorpus:
    relations: List[ComposedRelation]
    anchors: int
    counts_by_kind: Dict[str, int]
    counts_by_predicate: Dict[int, int]
    skipped: Dict[str, int]

    def __len__(self) -> int:
        return len(self.relations)

    def by_image(self) -> Dict[int, List[ComposedRelation]]:
        grouped: Dict[int, List[ComposedRelation]] = {}
        for rel in self.relations:
            grouped.setdefault(rel.image_id, []).append(rel)
        return grouped

    def summary(self) -> dict:
        return {
            'composed': len(self.relations),
            'anchors': self.anchors,
            'by_kind': dict(self.counts_by_kind),
            'by_predicate': {str(k): v for k, v in sorted(self.counts_by_predicate.items())},
            'skipped': dict(self.skipped),
        }


def _make_corpus(relations: List[ComposedRelation], anchors: int, skipped: Dict[str, int]) -> CompositionCorpus:
    return CompositionCorpus(
        relations=relations,
        anchors=anchors,
        counts_by_kind=dict(Counter(rel.kind.value for rel in relations)),
        counts_by_predicate=dict(Counter(rel.predicate_label for rel in relations)),
        skipped=skipped,
    )


def empty_corpus() -> CompositionCorpus:
    return _make_corpus([], 0, {})


def compose_corpus(dataset: Dataset, dictionary: ComponentDictionary, index: CategoryNeighborIndex,
                   bank: FeatureBank, embeddings: EmbeddingTable, budget: int, seed: int,
                   delta: float = 0.3,
                   kinds: Sequence[str] = ('intra', 'inter'),
                   retrieval: str = 'shape') -> CompositionCorpus:
    """One pass over the anchors in seeded order, one attempt per kind per anchor"""
    rng = np.random.default_rng(seed)
    anchors = scan_anchors(dataset, delta)
    order = rng.permutation(len(anchors))
    wanted = [CompositionKind(k) for k in kinds]
    relations: List[ComposedRelation] = []
    skipped = {kind.value: 0 for kind in wanted}

    for i in order:
        if len(relations) >= budget:
            break
        decision = anchors[int(i)]
        u = bank.component(decision.decomposed_id)
        for kind in wanted:
            if len(relations) >= budget:
                break
            replacement = _retrieve(dictionary, u, kind, index, retrieval, rng, exclude=(decision.kept_id,))
            if replacement is None:
                skipped[kind.value] += 1
                continue
            rel = compose(decision, replacement, kind, dataset, bank, embeddings, index)
            validate_composed(rel, dataset, bank.dims, embeddings)
            relations.append(rel)

    corpus = _make_corpus(relations, len(anchors), skipped)
    telemetry.info("Composition corpus built", extra={'telemetry': corpus.summary()})
    logger.info("Composed relations",
                extra={'composed': len(relations), 'anchors': len(anchors), 'budget': budget, 'skipped': skipped})
    return corpus


def _retrieve(dictionary: ComponentDictionary, u: VisualComponent, kind: CompositionKind,
              index: CategoryNeighborIndex, retrieval: str, rng: np.random.Generator,
              exclude: Iterable[int]) -> Optional[VisualComponent]:
    if retrieval == 'random':
        return dictionary.query_random(u, rng, index if kind is CompositionKind.INTER else None, exclude)
    if kind is CompositionKind.INTRA:
        return dictionary.query_intra(u, exclude)
    return dictionary.query_inter(u, index, exclude)


def load_corpus(records: Iterable[dict], dataset: Dataset, bank: FeatureBank, embeddings: EmbeddingTable,
                delta: float, index: Optional[CategoryNeighborIndex] = None) -> CompositionCorpus:
    """Rebuild a corpus from its manifest records, re-deriving every feature"""
    relations = []
    anchors: Set[Tuple[int, int, int, int]] = set()
    for record in records:
        image = dataset.image(int(record['image_id']))
        key = (int(record['subject']), int(record['object']), int(record['predicate']))
        triple = next((t for t in image.triples if t.key() == key), None)
        if triple is None:
            raise DataReferenceError("Corpus record names a triple absent from the dataset", record)
        decision = select_and_decompose(triple, dataset, delta)
        if decision.decomposed.value != record['slot']:
            raise CompositionError("Corpus record slot disagrees with the anchor rule", record)
        replacement = bank.component(int(record['replacement']))
        rel = compose(decision, replacement, CompositionKind(record['kind']), dataset, bank, embeddings, index)
        if rel.predicate_label != int(record['label']):
            raise CompositionError("Corpus record label disagrees with the anchor predicate", record)
        relations.append(rel)
        anchors.add((image.image_id,) + key)
    return _make_corpus(relations, len(anchors), {})


def novel_combinations(relations: Iterable[ComposedRelation], train: Dataset) -> Set[Combination]:
    """Composed (subject category, predicate, object category) combinations unseen in training"""
    seen = train.combinations()
    return {rel.combination() for rel in relations} - seen
