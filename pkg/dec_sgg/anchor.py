import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

from .error_handler import ConfigError
from .geometry import BoundingBox, area, iou
from .schema import Dataset, RelationTriple

logger = logging.getLogger('DecSGG.anchor')


class Decomposed(str, Enum):
    SUBJECT = 'subject'
    OBJECT = 'object'
    NOT_ANCHOR = 'not_anchor'

    def flipped(self) -> 'Decomposed':
        if self is Decomposed.SUBJECT:
            return Decomposed.OBJECT
        if self is Decomposed.OBJECT:
            return Decomposed.SUBJECT
        return self


@dataclass(frozen=True)
class AnchorDecision:
    triple: RelationTriple
    decomposed: Decomposed
    iou: float
    subject_area: float
    object_area: float

    @property
    def is_anchor(self) -> bool:
        return self.decomposed is not Decomposed.NOT_ANCHOR

    @property
    def decomposed_id(self) -> Optional[int]:
        """Instance removed from the anchor relation"""
        if self.decomposed is Decomposed.SUBJECT:
            return self.triple.subject
        if self.decomposed is Decomposed.OBJECT:
            return self.triple.object
        return None

    @property
    def kept_id(self) -> Optional[int]:
        """Instance that stays in the composed relation"""
        if self.decomposed is Decomposed.SUBJECT:
            return self.triple.object
        if self.decomposed is Decomposed.OBJECT:
            return self.triple.subject
        return None

    def to_record(self) -> dict:
        return {
            'image_id': self.triple.image_id,
            'subject': self.triple.subject,
            'object': self.triple.object,
            'predicate': self.triple.predicate,
            'decomposed': self.decomposed.value,
            'iou': self.iou,
            'subject_area': self.subject_area,
            'object_area': self.object_area,
        }


def decide(subject_box: BoundingBox, object_box: BoundingBox, delta: float) -> Decomposed:
    """Weakly entangled pairs (IoU below delta) drop their strictly smaller element"""
    if iou(subject_box, object_box) >= delta:
        return Decomposed.NOT_ANCHOR
    a_s, a_o = area(subject_box), area(object_box)
    if a_s < a_o:
        return Decomposed.SUBJECT
    if a_s > a_o:
        return Decomposed.OBJECT
    return Decomposed.NOT_ANCHOR


def _check_delta(delta: float) -> None:
    if not 0.0 <= delta <= 1.0:
        raise ConfigError(f"delta must lie in [0, 1], got {delta}", {'delta': delta})


def select_and_decompose(triple: RelationTriple, dataset: Dataset, delta: float) -> AnchorDecision:
    _check_delta(delta)
    b_s = dataset.instance(triple.subject).box
    b_o = dataset.instance(triple.object).box
    return AnchorDecision(
        triple=triple,
        decomposed=decide(b_s, b_o, delta),
        iou=iou(b_s, b_o),
        subject_area=area(b_s),
        object_area=area(b_o),
    )


def scan_anchors(dataset: Dataset, delta: float) -> List[AnchorDecision]:
    """Anchor decisions of every decomposable triple, in image-id then triple order"""
    _check_delta(delta)
    anchors = []
    skipped_ties = 0
    total = 0
    for _, triple in dataset.iter_triples():
        total += 1
        decision = select_and_decompose(triple, dataset, delta)
        if decision.is_anchor:
            anchors.append(decision)
        elif decision.iou < delta and decision.subject_area == decision.object_area:
            skipped_ties += 1

    logger.info(
        "Anchor scan finished",
        extra={'triples': total, 'anchors': len(anchors), 'skipped_ties': skipped_ties, 'delta': delta},
    )
    return anchors
