"""Data model: vocabularies, object instances, relation triples, datasets and
the per-instance feature vector ``[visual; spatial; word]``."""
import math
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Set, Tuple

import numpy as np

from .error_handler import (
    CompositionError,
    DataError,
    DataReferenceError,
    DimensionMismatchError,
    VocabularyError,
)
from .geometry import BoundingBox, area, clamp_to_image, within_image

logger = logging.getLogger('DecSGG.schema')

NO_RELATION = '__no_relation__'
SPATIAL_COMPONENTS = 8

# (subject category, predicate, object category)
Combination = Tuple[int, int, int]


@dataclass(frozen=True)
class FeatureDims:
    visual: int = 4096
    spatial: int = 128
    word: int = 200

    def __post_init__(self):
        if min(self.visual, self.spatial, self.word) < 1:
            raise DimensionMismatchError("Feature dimensions must be positive", {'dims': self.as_dict()})
        if self.spatial % (2 * SPATIAL_COMPONENTS):
            raise DimensionMismatchError(
                "Spatial dimension must be a multiple of 16",
                {'spatial': self.spatial},
            )

    @property
    def total(self) -> int:
        return self.visual + self.spatial + self.word

    def as_dict(self) -> Dict[str, int]:
        return {'visual': self.visual, 'spatial': self.spatial, 'word': self.word}

    @classmethod
    def from_params(cls, params: Mapping) -> 'FeatureDims':
        return cls(params['VISUAL_DIM'], params['SPATIAL_DIM'], params['WORD_DIM'])


@dataclass(frozen=True)
class CategoryVocab:
    object_categories: Tuple[str, ...]
    predicates: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, 'object_categories', tuple(self.object_categories))
        object.__setattr__(self, 'predicates', tuple(self.predicates))
        for label, names in (('object_categories', self.object_categories), ('predicates', self.predicates)):
            if len(names) < 1:
                raise DataError(f"Vocabulary list {label} is empty")
            if len(set(names)) != len(names):
                dupes = sorted({n for n in names if names.count(n) > 1})
                raise DataError(f"Duplicate names in {label}", {'duplicates': dupes})
        if self.predicates[0] != NO_RELATION:
            raise DataError(
                f"Predicate 0 must be the reserved {NO_RELATION!r} class",
                {'first': self.predicates[0]},
            )
        object.__setattr__(self, '_category_index', {n: i for i, n in enumerate(self.object_categories)})
        object.__setattr__(self, '_predicate_index', {n: i for i, n in enumerate(self.predicates)})

    @property
    def num_categories(self) -> int:
        return len(self.object_categories)

    @property
    def num_predicates(self) -> int:
        return len(self.predicates)

    def category_index(self, name: str) -> int:
        try:
            return self._category_index[name]
        except KeyError:
            raise DataReferenceError(f"Unknown object category: {name!r}", {'ref': name})

    def predicate_index(self, name: str) -> int:
        try:
            return self._predicate_index[name]
        except KeyError:
            raise DataReferenceError(f"Unknown predicate: {name!r}", {'ref': name})


@dataclass(frozen=True)
class ObjectInstance:
    instance_id: int
    image_id: int
    category: int
    box: BoundingBox
    visual_feature: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class RelationTriple:
    image_id: int
    subject: int
    object: int
    predicate: int

    def key(self) -> Tuple[int, int, int]:
        return (self.subject, self.object, self.predicate)


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    width: float
    height: float
    instances: Tuple[ObjectInstance, ...]
    triples: Tuple[RelationTriple, ...]

    def instance_ids(self) -> List[int]:
        return [inst.instance_id for inst in self.instances]


class Dataset:
    """Validated, immutable collection of annotated images"""

    def __init__(self, images: Iterable[ImageRecord], vocab: CategoryVocab):
        self.vocab = vocab
        self.images: Tuple[ImageRecord, ...] = tuple(sorted(images, key=lambda im: im.image_id))
        self._images: Dict[int, ImageRecord] = {}
        self._instances: Dict[int, ObjectInstance] = {}
        self._validate()

    def _validate(self) -> None:
        for image in self.images:
            if image.image_id in self._images:
                raise DataError(f"Duplicate image id {image.image_id}", {'image_id': image.image_id})
            if not (image.width > 0 and image.height > 0):
                raise DataError(f"Image {image.image_id} has non-positive size", {'image_id': image.image_id})
            self._images[image.image_id] = image
            local = set()
            for inst in image.instances:
                if inst.instance_id in local or inst.instance_id in self._instances:
                    raise DataError(
                        f"Duplicate instance id {inst.instance_id}",
                        {'image_id': image.image_id, 'ref': inst.instance_id},
                    )
                if inst.image_id != image.image_id:
                    raise DataReferenceError(
                        f"Instance {inst.instance_id} claims image {inst.image_id}",
                        {'image_id': image.image_id, 'ref': inst.instance_id},
                    )
                if not 0 <= inst.category < self.vocab.num_categories:
                    raise DataReferenceError(
                        f"Category index {inst.category} out of range",
                        {'ref': inst.instance_id},
                    )
                if inst.visual_feature is not None and not np.all(np.isfinite(inst.visual_feature)):
                    raise DataError(f"Non-finite visual feature for instance {inst.instance_id}",
                                    {'ref': inst.instance_id})
                local.add(inst.instance_id)
                self._instances[inst.instance_id] = inst
            for triple in image.triples:
                self._validate_triple(image, local, triple)

    def _validate_triple(self, image: ImageRecord, local: Set[int], triple: RelationTriple) -> None:
        for ref in (triple.subject, triple.object):
            if ref not in local:
                raise DataReferenceError(
                    f"Triple in image {image.image_id} references missing instance {ref}",
                    {'image_id': image.image_id, 'ref': ref},
                )
        if triple.subject == triple.object:
            raise DataError(f"Triple in image {image.image_id} relates instance {triple.subject} to itself",
                            {'image_id': image.image_id, 'ref': triple.subject})
        if triple.image_id != image.image_id:
            raise DataReferenceError("Triple image id mismatch", {'image_id': image.image_id})
        if not 1 <= triple.predicate < self.vocab.num_predicates:
            raise DataReferenceError(
                f"Annotated predicate index {triple.predicate} out of range",
                {'image_id': image.image_id, 'ref': triple.predicate},
            )

    def __len__(self) -> int:
        return len(self.images)

    def image(self, image_id: int) -> ImageRecord:
        try:
            return self._images[image_id]
        except KeyError:
            raise DataReferenceError(f"Unknown image id {image_id}", {'ref': image_id})

    def instance(self, instance_id: int) -> ObjectInstance:
        try:
            return self._instances[instance_id]
        except KeyError:
            raise DataReferenceError(f"Unknown instance id {instance_id}", {'ref': instance_id})

    def has_instance(self, instance_id: int) -> bool:
        return instance_id in self._instances

    def image_ids(self) -> List[int]:
        return [image.image_id for image in self.images]

    def iter_instances(self) -> Iterator[ObjectInstance]:
        for image in self.images:
            yield from image.instances

    def iter_triples(self) -> Iterator[Tuple[ImageRecord, RelationTriple]]:
        for image in self.images:
            for triple in image.triples:
                yield image, triple

    @property
    def num_triples(self) -> int:
        return sum(len(image.triples) for image in self.images)

    @property
    def has_features(self) -> bool:
        return all(inst.visual_feature is not None for inst in self._instances.values())

    def attach_features(self, features: Mapping[int, np.ndarray], visual_dim: int) -> 'Dataset':
        """Return a copy whose instances carry the given visual features"""
        images = []
        for image in self.images:
            instances = []
            for inst in image.instances:
                if inst.instance_id not in features:
                    raise DataReferenceError(
                        f"No visual feature for instance {inst.instance_id}",
                        {'ref': inst.instance_id},
                    )
                vec = np.asarray(features[inst.instance_id], dtype=np.float64)
                if vec.shape != (visual_dim,):
                    raise DimensionMismatchError(
                        f"Visual feature of instance {inst.instance_id} has shape {vec.shape}",
                        {'expected': visual_dim, 'got': list(vec.shape)},
                    )
                instances.append(replace(inst, visual_feature=vec))
            images.append(replace(image, instances=tuple(instances)))
        return Dataset(images, self.vocab)

    def subset(self, image_ids: Iterable[int]) -> 'Dataset':
        wanted = set(image_ids)
        return Dataset([image for image in self.images if image.image_id in wanted], self.vocab)

    def predicate_counts(self) -> np.ndarray:
        counts = np.zeros(self.vocab.num_predicates, dtype=np.int64)
        for _, triple in self.iter_triples():
            counts[triple.predicate] += 1
        return counts

    def combination(self, triple: RelationTriple) -> Combination:
        return (self.instance(triple.subject).category, triple.predicate, self.instance(triple.object).category)

    def combinations(self) -> Set[Combination]:
        return {self.combination(triple) for _, triple in self.iter_triples()}

    def semantic_key(self) -> frozenset:
        """Order-insensitive description used to compare datasets"""
        items = []
        for image in self.images:
            instances = frozenset(
                (inst.instance_id, inst.category, inst.box.as_tuple()) for inst in image.instances
            )
            triples = frozenset(triple.key() for triple in image.triples)
            items.append((image.image_id, image.width, image.height, instances, triples))
        return frozenset(items)


@dataclass(frozen=True)
class EmbeddingTable:
    """One word vector per object category, rows in vocabulary order"""
    categories: Tuple[str, ...]
    matrix: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.categories):
            raise VocabularyError(
                "Embedding table size does not match the vocabulary",
                {'rows': int(self.matrix.shape[0]), 'categories': len(self.categories)},
            )

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def vector(self, category: int) -> np.ndarray:
        if not 0 <= category < len(self.categories):
            raise VocabularyError(f"No embedding for category index {category}", {'categories': [category]})
        return self.matrix[category]


@dataclass(frozen=True)
class VisualComponent:
    """An object instance with its assembled ``[visual; spatial; word]`` feature"""
    instance: ObjectInstance
    feature: np.ndarray = field(compare=False, repr=False)

    @property
    def instance_id(self) -> int:
        return self.instance.instance_id

    @property
    def category(self) -> int:
        return self.instance.category

    @property
    def box(self) -> BoundingBox:
        return self.instance.box

    @property
    def image_id(self) -> int:
        return self.instance.image_id


def spatial_components(box: BoundingBox, image_w: float, image_h: float) -> np.ndarray:
    """The eight image-relative numbers the spatial feature expands"""
    w = box.x_b - box.x_t
    h = box.y_b - box.y_t
    return np.array([
        box.x_t / image_w,
        box.y_t / image_h,
        box.x_b / image_w,
        box.y_b / image_h,
        w / image_w,
        h / image_h,
        area(box) / (image_w * image_h),
        math.log(w / h),
    ], dtype=np.float64)


_clamped_boxes = 0


def clamped_box_count() -> int:
    return _clamped_boxes


def spatial_encode(box: BoundingBox, image_w: float, image_h: float, dim: int = 128) -> np.ndarray:
    """Deterministic sinusoidal encoding of a box relative to its image.

    Each of the eight components is expanded at ``dim // 16`` frequencies
    (pi * 2**j, j from -3 upward) into a (sin, cos) pair.
    """
    global _clamped_boxes
    if dim % (2 * SPATIAL_COMPONENTS):
        raise DimensionMismatchError("Spatial dimension must be a multiple of 16", {'spatial': dim})
    if not within_image(box, image_w, image_h):
        _clamped_boxes += 1
        logger.warning("Box exceeds image bounds, clamping",
                       extra={'box': list(box.as_tuple()), 'image': [image_w, image_h]})
        box = clamp_to_image(box, image_w, image_h)
    n_freq = dim // (2 * SPATIAL_COMPONENTS)
    freqs = math.pi * 2.0 ** np.arange(-3, n_freq - 3, dtype=np.float64)
    angles = spatial_components(box, image_w, image_h)[:, None] * freqs[None, :]
    return np.stack([np.sin(angles), np.cos(angles)], axis=-1).reshape(-1)


def concat_feature(visual: np.ndarray, spatial: np.ndarray, word: np.ndarray) -> np.ndarray:
    return np.concatenate([visual, spatial, word]).astype(np.float64, copy=False)


def assemble_component(inst: ObjectInstance, image_w: float, image_h: float,
                       embeddings: EmbeddingTable, dims: FeatureDims) -> VisualComponent:
    """Concatenate visual, spatial and word features of one instance"""
    if inst.visual_feature is None:
        raise CompositionError(
            f"Instance {inst.instance_id} has no visual feature; load or synthesize features first",
            {'ref': inst.instance_id},
        )
    if inst.visual_feature.shape != (dims.visual,):
        raise DimensionMismatchError(
            f"Visual feature of instance {inst.instance_id} has shape {inst.visual_feature.shape}",
            {'expected': dims.visual, 'got': list(inst.visual_feature.shape)},
        )
    if embeddings.dim != dims.word:
        raise DimensionMismatchError("Word embedding dimension mismatch",
                                     {'expected': dims.word, 'got': embeddings.dim})
    feature = concat_feature(
        inst.visual_feature,
        spatial_encode(inst.box, image_w, image_h, dims.spatial),
        embeddings.vector(inst.category),
    )
    if feature.shape != (dims.total,) or not np.all(np.isfinite(feature)):
        raise CompositionError(f"Invalid assembled feature for instance {inst.instance_id}",
                               {'ref': inst.instance_id})
    return VisualComponent(inst, feature)


def assemble_image_components(image: ImageRecord, embeddings: EmbeddingTable,
                              dims: FeatureDims) -> List[VisualComponent]:
    return [assemble_component(inst, image.width, image.height, embeddings, dims) for inst in image.instances]


class FeatureBank:
    """Assembled component features of every instance in a dataset"""

    def __init__(self, dataset: Dataset, embeddings: EmbeddingTable, dims: FeatureDims):
        self.dims = dims
        self._components: Dict[int, VisualComponent] = {}
        for image in dataset.images:
            for component in assemble_image_components(image, embeddings, dims):
                self._components[component.instance_id] = component

    def component(self, instance_id: int) -> VisualComponent:
        try:
            return self._components[instance_id]
        except KeyError:
            raise DataReferenceError(f"Unknown instance id {instance_id}", {'ref': instance_id})

    def feature(self, instance_id: int) -> np.ndarray:
        return self.component(instance_id).feature

    def pair(self, subject: int, obj: int) -> np.ndarray:
        return np.concatenate([self.feature(subject), self.feature(obj)])
