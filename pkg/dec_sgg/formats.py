"""File codecs: vocabulary, annotations, visual features and word embeddings.

See ``docs/data_formats.md`` for the exact grammar of each file.
"""
import os
import re
import json
import logging
from typing import Dict, Iterable, List, Mapping, Optional

import numpy as np

from .error_handler import (
    DataError,
    DimensionMismatchError,
    ParseError,
    VocabularyError,
)
from .geometry import BoundingBox
from .schema import (
    CategoryVocab,
    Dataset,
    EmbeddingTable,
    ImageRecord,
    ObjectInstance,
    RelationTriple,
)

logger = logging.getLogger('DecSGG.formats')

FEATURE_MAGIC = b'VCF1'
_HEADER = np.dtype([('magic', 'S4'), ('count', '<u4'), ('dim', '<u4')])
_TOKEN_SPLIT = re.compile(r'[\s_]+')


def _require(path: str) -> None:
    if not os.path.exists(path):
        raise DataError(f"File not found: {path}", {'path': path})


# -- vocabulary ---------------------------------------------------------------

def load_vocab(path: str) -> CategoryVocab:
    _require(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
        return CategoryVocab(tuple(data['object_categories']), tuple(data['predicates']))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ParseError(f"Malformed vocabulary file {path}: {e}", {'path': path})


def save_vocab(vocab: CategoryVocab, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump({'object_categories': list(vocab.object_categories),
                   'predicates': list(vocab.predicates)}, f, indent=2)
        f.write('\n')


# -- annotations --------------------------------------------------------------

def _parse_image(record: dict, vocab: CategoryVocab, line_no: int) -> ImageRecord:
    try:
        image_id = int(record['image_id'])
        width = float(record['width'])
        height = float(record['height'])
        instances = []
        for item in record['instances']:
            instances.append(ObjectInstance(
                instance_id=int(item['id']),
                image_id=image_id,
                category=vocab.category_index(item['category']),
                box=BoundingBox.from_sequence(item['box']),
            ))
        triples = tuple(
            RelationTriple(image_id, int(t['subject']), int(t['object']), vocab.predicate_index(t['predicate']))
            for t in record['triples']
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"Malformed annotation record on line {line_no}: {e}", {'line': line_no})
    except DataError as e:
        e.details.setdefault('line', line_no)
        raise
    return ImageRecord(image_id, width, height, tuple(instances), triples)


def load_annotations(path: str, vocab: CategoryVocab) -> Dataset:
    _require(path)
    images = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"Malformed line {line_no} in {path}: {e.msg}", {'line': line_no, 'path': path})
            if not isinstance(record, dict):
                raise ParseError(f"Line {line_no} in {path} is not an object", {'line': line_no, 'path': path})
            images.append(_parse_image(record, vocab, line_no))
    return Dataset(images, vocab)


def save_annotations(dataset: Dataset, path: str) -> None:
    vocab = dataset.vocab
    with open(path, 'w', encoding='utf-8') as f:
        for image in dataset.images:
            record = {
                'image_id': image.image_id,
                'width': image.width,
                'height': image.height,
                'instances': [
                    {'id': inst.instance_id,
                     'category': vocab.object_categories[inst.category],
                     'box': list(inst.box.as_tuple())}
                    for inst in image.instances
                ],
                'triples': [
                    {'subject': t.subject, 'predicate': vocab.predicates[t.predicate], 'object': t.object}
                    for t in image.triples
                ],
            }
            f.write(json.dumps(record, sort_keys=True) + '\n')


# -- visual features ----------------------------------------------------------

def _feature_dtype(dim: int) -> np.dtype:
    return np.dtype([('key', '<u8'), ('vec', '<f4', (dim,))])


def read_features(path: str, expected_dim: Optional[int] = None) -> Dict[int, np.ndarray]:
    """Read a ``VCF1`` binary feature file into ``{instance id: vector}``"""
    _require(path)
    with open(path, 'rb') as f:
        raw = f.read()
    if len(raw) < _HEADER.itemsize:
        raise ParseError(f"Feature file {path} is too short for a header", {'path': path})
    header = np.frombuffer(raw, dtype=_HEADER, count=1)[0]
    if header['magic'] != FEATURE_MAGIC:
        raise ParseError(f"Feature file {path} has bad magic {header['magic']!r}", {'path': path})
    count, dim = int(header['count']), int(header['dim'])
    if expected_dim is not None and dim != expected_dim:
        raise DimensionMismatchError(
            f"Feature file dimension {dim} does not match configured visual dimension {expected_dim}",
            {'path': path, 'expected': expected_dim, 'got': dim},
        )
    body_dtype = _feature_dtype(dim)
    body = raw[_HEADER.itemsize:]
    if len(body) != count * body_dtype.itemsize:
        raise ParseError(
            f"Feature file {path} body holds {len(body)} bytes, expected {count * body_dtype.itemsize}",
            {'path': path},
        )
    rows = np.frombuffer(body, dtype=body_dtype, count=count)
    if not np.all(np.isfinite(rows['vec'])):
        raise DataError(f"Feature file {path} contains non-finite values", {'path': path})
    return {int(key): vec.astype(np.float64) for key, vec in zip(rows['key'], rows['vec'])}


def write_features(features: Mapping[int, np.ndarray], path: str, dim: int) -> None:
    keys = sorted(features)
    rows = np.zeros(len(keys), dtype=_feature_dtype(dim))
    for i, key in enumerate(keys):
        vec = np.asarray(features[key])
        if vec.shape != (dim,):
            raise DimensionMismatchError(f"Feature {key} has shape {vec.shape}", {'expected': dim})
        rows['key'][i] = key
        rows['vec'][i] = vec
    header = np.array([(FEATURE_MAGIC, len(keys), dim)], dtype=_HEADER)
    with open(path, 'wb') as f:
        f.write(header.tobytes())
        f.write(rows.tobytes())


def load_dataset(annotations_path: str, features_path: Optional[str], vocab: CategoryVocab,
                 visual_dim: Optional[int] = None) -> Dataset:
    """Load annotations and, when given, attach visual features to every instance"""
    dataset = load_annotations(annotations_path, vocab)
    if features_path is None:
        logger.info("Loaded annotations without visual features",
                    extra={'images': len(dataset), 'path': annotations_path})
        return dataset
    features = read_features(features_path, visual_dim)
    dim = visual_dim if visual_dim is not None else _common_dim(features)
    dataset = dataset.attach_features(features, dim)
    unused = len(features) - sum(1 for _ in dataset.iter_instances())
    logger.info("Loaded dataset",
                extra={'images': len(dataset), 'triples': dataset.num_triples, 'unused_features': unused})
    return dataset


def _common_dim(features: Mapping[int, np.ndarray]) -> int:
    for vec in features.values():
        return int(vec.shape[0])
    return 0


# -- word embeddings ----------------------------------------------------------

def category_tokens(name: str) -> List[str]:
    return [token for token in _TOKEN_SPLIT.split(name.lower()) if token]


def read_token_vectors(path: str, dim: Optional[int] = None) -> Dict[str, np.ndarray]:
    _require(path)
    vectors: Dict[str, np.ndarray] = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0].lower(), parts[1:]
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise ParseError(f"Non-numeric embedding value on line {line_no}", {'line': line_no, 'path': path})
            if dim is None:
                dim = len(vec)
            if len(vec) != dim:
                raise DimensionMismatchError(
                    f"Embedding on line {line_no} has {len(vec)} values, expected {dim}",
                    {'line': line_no, 'expected': dim, 'got': len(vec)},
                )
            if not np.all(np.isfinite(vec)):
                raise ParseError(f"Non-finite embedding value on line {line_no}", {'line': line_no})
            vectors[token] = vec
    return vectors


def embed_categories(vocab: CategoryVocab, vectors: Mapping[str, np.ndarray]) -> EmbeddingTable:
    """Average token vectors of each category name"""
    rows, missing = [], []
    for name in vocab.object_categories:
        found = [vectors[t] for t in category_tokens(name) if t in vectors]
        if not found:
            missing.append(name)
            continue
        rows.append(np.mean(found, axis=0))
    if missing:
        raise VocabularyError(
            f"No embedding token for categories: {', '.join(missing)}",
            {'categories': missing},
        )
    return EmbeddingTable(vocab.object_categories, np.vstack(rows))


def load_embeddings(path: str, vocab: CategoryVocab, dim: Optional[int] = None) -> EmbeddingTable:
    return embed_categories(vocab, read_token_vectors(path, dim))


def write_token_vectors(vectors: Mapping[str, np.ndarray], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for token in sorted(vectors):
            f.write(token + ' ' + ' '.join(repr(float(v)) for v in vectors[token]) + '\n')


# -- line-delimited records ---------------------------------------------------

def write_records(records: Iterable[dict], path: str) -> int:
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + '\n')
            count += 1
    return count


def read_records(path: str) -> List[dict]:
    _require(path)
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ParseError(f"Malformed line {line_no} in {path}: {e.msg}", {'line': line_no, 'path': path})
    return records


def write_json(data: dict, path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
