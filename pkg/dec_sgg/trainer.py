"""Predicate classifier over pair features, trained with plain gradient descent.

The classifier refines each object feature with an optional ``tanh`` hidden
layer, concatenates (subject, object) and applies a softmax output layer.
The objective is mean cross-entropy over real and composed triples plus
``kl_weight`` times the mean KL divergence between each composed relation's
prediction and the (detached) prediction of its anchor.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .composer import ComposedRelation, CompositionCorpus
from .error_handler import ConfigError, DataError, DimensionMismatchError, DivergenceError, ParseError
from .evaluation import EvalRecord
from .schema import Dataset, EmbeddingTable, FeatureBank, FeatureDims

logger = logging.getLogger('DecSGG.trainer')
telemetry = logging.getLogger('telemetry')

PROB_FLOOR = 1e-12
CHECKPOINT_MAGIC = b'SGC1'


@dataclass
class ClassifierParams:
    num_predicates: int
    feature_dim: int
    hidden_dim: int = 0
    hidden_w: Optional[np.ndarray] = None  # (H, F)
    hidden_b: Optional[np.ndarray] = None  # (H,)
    out_w: Optional[np.ndarray] = None  # (C, 2G)
    out_b: Optional[np.ndarray] = None  # (C,)
    dims: Optional[FeatureDims] = None

    @property
    def refined_dim(self) -> int:
        return self.hidden_dim if self.hidden_dim else self.feature_dim

    @property
    def pair_dim(self) -> int:
        return 2 * self.feature_dim

    def arrays(self) -> List[np.ndarray]:
        if self.hidden_dim:
            return [self.hidden_w, self.hidden_b, self.out_w, self.out_b]
        return [self.out_w, self.out_b]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> 'ClassifierParams':
        if self.hidden_dim:
            hidden_w, hidden_b, out_w, out_b = arrays
        else:
            hidden_w, hidden_b = None, None
            out_w, out_b = arrays
        return ClassifierParams(self.num_predicates, self.feature_dim, self.hidden_dim,
                                hidden_w, hidden_b, out_w, out_b, self.dims)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vector: np.ndarray) -> 'ClassifierParams':
        arrays, offset = [], 0
        for a in self.arrays():
            arrays.append(vector[offset:offset + a.size].reshape(a.shape).copy())
            offset += a.size
        return self.with_arrays(arrays)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(num_predicates: int, feature_dim: int, hidden_dim: int = 0, seed: int = 0,
                dims: Optional[FeatureDims] = None) -> ClassifierParams:
    """Hidden weights get a seeded scaled normal draw; the output layer starts at zero"""
    rng = np.random.default_rng(seed)
    hidden_w = hidden_b = None
    if hidden_dim:
        hidden_w = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(hidden_dim, feature_dim))
        hidden_b = np.zeros(hidden_dim)
    refined = hidden_dim if hidden_dim else feature_dim
    return ClassifierParams(
        num_predicates=num_predicates,
        feature_dim=feature_dim,
        hidden_dim=hidden_dim,
        hidden_w=hidden_w,
        hidden_b=hidden_b,
        out_w=np.zeros((num_predicates, 2 * refined)),
        out_b=np.zeros(num_predicates),
        dims=dims,
    )


def _refine(params: ClassifierParams, pairs: np.ndarray) -> Tuple[np.ndarray, Optional[Tuple[np.ndarray, np.ndarray]]]:
    if not params.hidden_dim:
        return pairs, None
    f = params.feature_dim
    h_s = np.tanh(pairs[:, :f] @ params.hidden_w.T + params.hidden_b)
    h_o = np.tanh(pairs[:, f:] @ params.hidden_w.T + params.hidden_b)
    return np.concatenate([h_s, h_o], axis=1), (h_s, h_o)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _as_batch(pairs: np.ndarray, params: ClassifierParams) -> np.ndarray:
    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.float64))
    if pairs.shape[1] != params.pair_dim:
        raise DimensionMismatchError(
            f"Pair feature has {pairs.shape[1]} entries, classifier expects {params.pair_dim}",
            {'expected': params.pair_dim, 'got': int(pairs.shape[1])},
        )
    return pairs


def forward(params: ClassifierParams, pair: np.ndarray) -> np.ndarray:
    """Predicate distribution for one pair feature, or one row per pair"""
    single = np.ndim(pair) == 1
    z, _ = _refine(params, _as_batch(pair, params))
    probs = softmax(z @ params.out_w.T + params.out_b)
    return probs[0] if single else probs


def ce_loss(probs: np.ndarray, label: int) -> float:
    return float(-np.log(max(probs[label], PROB_FLOOR)))


def kl_loss(anchor: np.ndarray, composed: np.ndarray) -> float:
    """KL(anchor || composed); the anchor distribution is a constant target"""
    a = np.maximum(anchor, PROB_FLOOR)
    c = np.maximum(composed, PROB_FLOOR)
    return float(np.sum(anchor * (np.log(a) - np.log(c))))


@dataclass
class BatchItem:
    pair: np.ndarray
    label: int
    target: Optional[np.ndarray] = None  # anchor distribution for composed items


def _stack(batch: Sequence[BatchItem]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    pairs = np.stack([item.pair for item in batch])
    labels = np.array([item.label for item in batch], dtype=np.int64)
    composed = np.array([item.target is not None for item in batch])
    targets = np.zeros((len(batch), 0))
    if composed.any():
        targets = np.stack([item.target for item in batch if item.target is not None])
    return pairs, labels, composed, targets


def loss(params: ClassifierParams, batch: Sequence[BatchItem], kl_weight: float) -> float:
    return loss_and_grad(params, batch, kl_weight)[0]


def grad(params: ClassifierParams, batch: Sequence[BatchItem], kl_weight: float) -> ClassifierParams:
    """Analytic gradient of mean CE + kl_weight * mean KL, shaped like ``params``"""
    return loss_and_grad(params, batch, kl_weight)[1]


def loss_and_grad(params: ClassifierParams, batch: Sequence[BatchItem],
                  kl_weight: float) -> Tuple[float, ClassifierParams]:
    if not batch:
        raise DataError("Cannot compute a gradient over an empty batch")
    pairs, labels, composed, targets = _stack(batch)
    pairs = _as_batch(pairs, params)
    n = len(batch)
    n_comp = int(composed.sum())

    z, hidden = _refine(params, pairs)
    probs = softmax(z @ params.out_w.T + params.out_b)

    picked = np.maximum(probs[np.arange(n), labels], PROB_FLOOR)
    total = float(np.mean(-np.log(picked)))
    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n

    if n_comp and kl_weight:
        comp_probs = probs[composed]
        kl = np.sum(targets * (np.log(np.maximum(targets, PROB_FLOOR)) - np.log(np.maximum(comp_probs, PROB_FLOOR))),
                    axis=1)
        total += kl_weight * float(np.mean(kl))
        # targets sum to one, so d/dlogits of -sum(q log p) is p - q
        d_logits[composed] += kl_weight * (comp_probs - targets) / n_comp

    g_out_w = d_logits.T @ z
    g_out_b = d_logits.sum(axis=0)
    if not params.hidden_dim:
        return total, params.with_arrays([g_out_w, g_out_b])

    h_s, h_o = hidden
    d_z = d_logits @ params.out_w
    h = params.hidden_dim
    f = params.feature_dim
    d_a_s = d_z[:, :h] * (1.0 - h_s ** 2)
    d_a_o = d_z[:, h:] * (1.0 - h_o ** 2)
    g_hidden_w = d_a_s.T @ pairs[:, :f] + d_a_o.T @ pairs[:, f:]
    g_hidden_b = d_a_s.sum(axis=0) + d_a_o.sum(axis=0)
    return total, params.with_arrays([g_hidden_w, g_hidden_b, g_out_w, g_out_b])


def sgd_step(params: ClassifierParams, gradient: ClassifierParams, rate: float) -> ClassifierParams:
    return params.with_arrays([p - rate * g for p, g in zip(params.arrays(), gradient.arrays())])


# -- training loop ------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    iterations: int = 5000
    kl_weight: float = 1.0
    seed: int = 0
    triple_cap: int = 256
    negative_ratio: float = 1.0
    hidden_dim: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations < 1:
            raise ConfigError("Learning rate and iterations must be positive",
                              {'learning_rate': self.learning_rate, 'iterations': self.iterations})
        if self.kl_weight < 0 or self.negative_ratio < 0 or self.triple_cap < 1:
            raise ConfigError("Invalid training configuration", asdict(self))

    @classmethod
    def from_params(cls, params: Mapping, kl_weight: Optional[float] = None) -> 'TrainConfig':
        return cls(
            learning_rate=params['LEARNING_RATE'],
            iterations=params['ITERATIONS'],
            kl_weight=params['KL_WEIGHT'] if kl_weight is None else kl_weight,
            seed=params['SEED'],
            triple_cap=params['TRIPLE_CAP'],
            negative_ratio=params['NEGATIVE_RATIO'],
            hidden_dim=params['HIDDEN_DIM'],
            log_every=params['LOG_EVERY'],
        )


@dataclass
class _ImageItems:
    positives: List[Tuple[int, int, int]]  # subject, object, predicate
    composed: List[ComposedRelation]
    negatives: List[Tuple[int, int]]  # ordered pairs without annotation


@dataclass
class TrainResult:
    params: ClassifierParams
    trace: List[Tuple[int, float]] = field(default_factory=list)


def _index_images(dataset: Dataset, corpus: Optional[CompositionCorpus]) -> Dict[int, _ImageItems]:
    composed_by_image = corpus.by_image() if corpus is not None else {}
    items = {}
    for image in dataset.images:
        annotated = {(t.subject, t.object) for t in image.triples}
        ids = image.instance_ids()
        items[image.image_id] = _ImageItems(
            positives=[t.key() for t in image.triples],
            composed=composed_by_image.get(image.image_id, []),
            negatives=[(s, o) for s in ids for o in ids if s != o and (s, o) not in annotated],
        )
    return items


def _image_batch(params: ClassifierParams, items: _ImageItems, bank: FeatureBank, config: TrainConfig,
                 rng: np.random.Generator) -> List[BatchItem]:
    batch = [BatchItem(bank.pair(s, o), p) for s, o, p in items.positives]
    if items.composed:
        anchors = np.stack([bank.pair(rel.anchor.triple.subject, rel.anchor.triple.object)
                            for rel in items.composed])
        # anchor predictions are targets only, no gradient flows through them
        targets = forward(params, anchors)
        batch.extend(BatchItem(rel.pair_vector(), rel.predicate_label, targets[i])
                     for i, rel in enumerate(items.composed))
    if len(batch) > config.triple_cap:
        keep = np.sort(rng.choice(len(batch), size=config.triple_cap, replace=False))
        batch = [batch[i] for i in keep]
    wanted = int(round(config.negative_ratio * len(items.positives)))
    n_neg = min(wanted, len(items.negatives), config.triple_cap - len(batch))
    if n_neg > 0:
        picks = np.sort(rng.choice(len(items.negatives), size=n_neg, replace=False))
        batch.extend(BatchItem(bank.pair(*items.negatives[i]), 0) for i in picks)
    return batch


def train(dataset: Dataset, corpus: Optional[CompositionCorpus], sampler, config: TrainConfig,
          embeddings: EmbeddingTable, dims: FeatureDims) -> TrainResult:
    """Gradient descent for ``config.iterations`` batches drawn from ``sampler``"""
    bank = FeatureBank(dataset, embeddings, dims)
    items = _index_images(dataset, corpus)
    params = init_params(dataset.vocab.num_predicates, dims.total, config.hidden_dim, config.seed, dims)
    rng = np.random.default_rng(config.seed)
    trace: List[Tuple[int, float]] = []
    logger.info("Training started", extra={
        'iterations': config.iterations, 'composed': len(corpus) if corpus is not None else 0,
        'kl_weight': config.kl_weight, 'sampler': type(sampler).__name__,
    })

    for iteration in range(1, config.iterations + 1):
        batch: List[BatchItem] = []
        for image_id in sampler.next_images():
            batch.extend(_image_batch(params, items[image_id], bank, config, rng))
        if not batch:
            trace.append((iteration, 0.0))
            continue
        value, gradient = loss_and_grad(params, batch, config.kl_weight)
        if not np.isfinite(value):
            raise DivergenceError(
                f"Non-finite loss at iteration {iteration}",
                {'iteration': iteration, 'loss': repr(value), 'learning_rate': config.learning_rate},
            )
        params = sgd_step(params, gradient, config.learning_rate)
        trace.append((iteration, value))
        if iteration % config.log_every == 0:
            telemetry.info("Training loss", extra={'telemetry': {'iteration': iteration, 'loss': value}})

    if not params.is_finite():
        raise DivergenceError("Parameters became non-finite", {'iteration': config.iterations})
    logger.info("Training finished", extra={'final_loss': trace[-1][1] if trace else None})
    return TrainResult(params, trace)


# -- inference ----------------------------------------------------------------

def predict(params: ClassifierParams, dataset: Dataset, embeddings: EmbeddingTable) -> List[EvalRecord]:
    """Rank every ordered instance pair of every image by its best non-background predicate"""
    if params.dims is None:
        raise DimensionMismatchError("Classifier carries no feature dimensions")
    bank = FeatureBank(dataset, embeddings, params.dims)
    records = []
    for image in dataset.images:
        ids = image.instance_ids()
        pairs = [(s, o) for s in ids for o in ids if s != o]
        predictions = []
        if pairs:
            probs = forward(params, np.stack([bank.pair(s, o) for s, o in pairs]))
            fg = probs[:, 1:]
            best = np.argmax(fg, axis=1)
            scores = fg[np.arange(len(pairs)), best]
            order = np.argsort(-scores, kind='stable')
            predictions = [(pairs[i][0], pairs[i][1], int(best[i]) + 1, float(scores[i])) for i in order]
        ground_truth = [(t.subject, t.object, t.predicate) for t in image.triples]
        records.append(EvalRecord(image.image_id, tuple(predictions), tuple(ground_truth)))
    return records


# -- checkpoint and loss trace files --------------------------------------------

def save_checkpoint(params: ClassifierParams, path: str, config: Optional[dict] = None) -> None:
    """``SGC1`` magic, u32 length of a JSON config echo, the echo, then float32 blocks"""
    header = {
        'num_predicates': params.num_predicates,
        'feature_dim': params.feature_dim,
        'hidden_dim': params.hidden_dim,
        'dims': params.dims.as_dict() if params.dims else None,
        'shapes': [list(a.shape) for a in params.arrays()],
        'config': config or {},
    }
    echo = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.array([len(echo)], dtype='<u4').tobytes())
        f.write(echo)
        for a in params.arrays():
            f.write(np.ascontiguousarray(a, dtype='<f4').tobytes())


def load_checkpoint(path: str) -> Tuple[ClassifierParams, dict]:
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except FileNotFoundError:
        raise DataError(f"File not found: {path}", {'path': path})
    if raw[:4] != CHECKPOINT_MAGIC or len(raw) < 8:
        raise ParseError(f"{path} is not a classifier checkpoint", {'path': path})
    size = int(np.frombuffer(raw, dtype='<u4', count=1, offset=4)[0])
    try:
        header = json.loads(raw[8:8 + size].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"Corrupt checkpoint header in {path}: {e}", {'path': path})
    offset = 8 + size
    arrays = []
    for shape in header['shapes']:
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise ParseError(f"Checkpoint {path} is truncated", {'path': path})
        block = np.frombuffer(raw, dtype='<f4', count=count, offset=offset)
        arrays.append(block.astype(np.float64).reshape(shape))
        offset += 4 * count
    if offset != len(raw):
        raise ParseError(f"Checkpoint {path} has trailing bytes", {'path': path})
    dims = FeatureDims(**header['dims']) if header.get('dims') else None
    template = ClassifierParams(header['num_predicates'], header['feature_dim'], header['hidden_dim'], dims=dims)
    if template.hidden_dim:
        template.hidden_w, template.hidden_b = arrays[0], arrays[1]
    template.out_w, template.out_b = arrays[-2], arrays[-1]
    return template, header.get('config', {})


def write_loss_trace(trace: Sequence[Tuple[int, float]], path: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        for iteration, value in trace:
            f.write(f"{iteration} {value!r}\n")


def read_loss_trace(path: str) -> List[Tuple[int, float]]:
    trace = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                trace.append((int(parts[0]), float(parts[1])))
            except (IndexError, ValueError):
                raise ParseError(f"Malformed loss trace line {line_no}", {'line': line_no, 'path': path})
    return trace
