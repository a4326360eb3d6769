"""Pipeline wiring: load data, build the dictionary, compose, train, evaluate."""
import os
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .composer import CompositionCorpus, compose_corpus, load_corpus, novel_combinations
from .dictionary import CategoryNeighborIndex, ComponentDictionary, build_neighbor_index, populate
from .error_handler import DataError
from .evaluation import (
    EvalRecord,
    SplitSpec,
    compare_reports,
    evaluate,
    restrict_records,
    write_per_predicate_csv,
)
from .formats import load_dataset, load_embeddings, load_vocab, read_records, write_json, write_records
from .sampler import make_sampler
from .schema import CategoryVocab, Dataset, EmbeddingTable, FeatureBank, FeatureDims
from .synth import SYNTH_FILES, SynthConfig, generate, write_synth
from .trainer import (
    ClassifierParams,
    TrainConfig,
    TrainResult,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    write_loss_trace,
)

logger = logging.getLogger('DecSGG.core')


@dataclass
class DataPaths:
    vocab: str
    train: str
    features: Optional[str]
    embeddings: str
    test: Optional[str] = None

    @classmethod
    def from_dir(cls, data_dir: Optional[str], **overrides: Optional[str]) -> 'DataPaths':
        """Default every path to the synthetic file layout of ``data_dir``"""
        def pick(key: str) -> Optional[str]:
            if overrides.get(key):
                return overrides[key]
            if data_dir is None:
                return None
            path = os.path.join(data_dir, SYNTH_FILES[key])
            return path if os.path.exists(path) or key != 'test' else None

        paths = {key: pick(key) for key in ('vocab', 'train', 'features', 'embeddings', 'test')}
        missing = [k for k in ('vocab', 'train', 'embeddings') if paths[k] is None]
        if missing:
            raise DataError(f"Missing input paths: {', '.join(missing)}; pass --data-dir or the file options",
                            {'missing': missing})
        return cls(**paths)

    def as_inputs(self) -> Dict[str, Optional[str]]:
        return {'vocab': self.vocab, 'train': self.train, 'features': self.features,
                'embeddings': self.embeddings, 'test': self.test}


@dataclass
class DataBundle:
    vocab: CategoryVocab
    train: Dataset
    embeddings: EmbeddingTable
    test: Optional[Dataset] = None


class DecPipeline:
    """Runs the augmentation pipeline under one set of resolved parameters"""

    def __init__(self, params: Mapping[str, Any]):
        self.logger = logger
        self.params = dict(params)
        self.dims = FeatureDims.from_params(self.params)

    def load(self, paths: DataPaths, need_test: bool = False) -> DataBundle:
        vocab = load_vocab(paths.vocab)
        train_set = load_dataset(paths.train, paths.features, vocab, self.dims.visual)
        embeddings = load_embeddings(paths.embeddings, vocab, self.dims.word)
        test_set = None
        if need_test:
            if paths.test is None:
                raise DataError("A test annotation file is required", {'missing': ['test']})
            test_set = load_dataset(paths.test, paths.features, vocab, self.dims.visual)
        return DataBundle(vocab, train_set, embeddings, test_set)

    def neighbor_index(self, embeddings: EmbeddingTable) -> CategoryNeighborIndex:
        return build_neighbor_index(embeddings, self.params['NEIGHBOR_K'], self.params['MIN_NEIGHBOR_SIMILARITY'])

    def build_dictionary(self, dataset: Dataset, bank: FeatureBank) -> ComponentDictionary:
        dictionary = ComponentDictionary(self.params['DICTIONARY_CAPACITY'], self.params['SEED'])
        populate(dictionary, dataset, bank, self.params['SEED'])
        return dictionary

    def compose(self, data: DataBundle) -> CompositionCorpus:
        bank = FeatureBank(data.train, data.embeddings, self.dims)
        index = self.neighbor_index(data.embeddings)
        dictionary = self.build_dictionary(data.train, bank)
        corpus = compose_corpus(
            data.train, dictionary, index, bank, data.embeddings,
            budget=self.params['COMPOSE_BUDGET'],
            seed=self.params['SEED'],
            delta=self.params['DELTA'],
            kinds=self.params['COMPOSITION_KINDS'],
            retrieval=self.params['RETRIEVAL'],
        )
        novel = novel_combinations(corpus.relations, data.train)
        self.logger.info("Novel combinations composed", extra={'novel': len(novel)})
        return corpus

    def load_corpus(self, path: str, data: DataBundle) -> CompositionCorpus:
        bank = FeatureBank(data.train, data.embeddings, self.dims)
        index = self.neighbor_index(data.embeddings)
        return load_corpus(read_records(path), data.train, bank, data.embeddings, self.params['DELTA'], index)

    def train(self, data: DataBundle, dec: bool, corpus: Optional[CompositionCorpus] = None) -> TrainResult:
        """Baseline: uniform image batches, no corpus. DeC: balanced batches, corpus and KL"""
        if dec and corpus is None:
            corpus = self.compose(data)
        if not dec:
            corpus = None
        sampler = make_sampler(data.train, corpus, dec, self.params['N_PREDICATES'],
                               self.params['K_IMAGES'], self.params['SEED'])
        config = TrainConfig.from_params(self.params, kl_weight=None if dec else 0.0)
        return train(data.train, corpus, sampler, config, data.embeddings, self.dims)

    def evaluate(self, params: ClassifierParams, data: DataBundle,
                 split: Optional[SplitSpec] = None) -> Tuple[dict, List[EvalRecord]]:
        if data.test is None:
            raise DataError("Evaluation needs a test dataset")
        records = predict(params, data.test, data.embeddings)
        if split is not None:
            records = restrict_records(records, split)
        report = evaluate(
            records,
            data.vocab.num_predicates,
            data.train.predicate_counts(),
            ks=self.params['RECALL_KS'],
            exclude_absent=self.params['EXCLUDE_ABSENT_PREDICATES'],
            tail_size=self.params['TAIL_SIZE'],
        )
        report['split'] = split.kind if split is not None else 'full'
        return report, records

    def write_evaluation(self, report: dict, data: DataBundle, out_dir: str, name: str) -> Dict[str, str]:
        paths = {
            'report': os.path.join(out_dir, f"{name}.report.json"),
            'per_predicate': os.path.join(out_dir, f"{name}.per_predicate.csv"),
        }
        write_json(report, paths['report'])
        write_per_predicate_csv(paths['per_predicate'], data.vocab.predicates, data.train.predicate_counts(),
                                report['per_predicate'], report['top_k'])
        return paths


def write_training(result: TrainResult, out_dir: str, name: str, config_echo: dict) -> Dict[str, str]:
    paths = {
        'checkpoint': os.path.join(out_dir, f"{name}.ckpt"),
        'loss_trace': os.path.join(out_dir, f"{name}.loss.txt"),
    }
    save_checkpoint(result.params, paths['checkpoint'], config_echo)
    write_loss_trace(result.trace, paths['loss_trace'])
    return paths


def write_corpus(corpus: CompositionCorpus, path: str) -> int:
    return write_records((rel.to_record() for rel in corpus.relations), path)


def run_experiment(params: Mapping[str, Any], seeds: Sequence[int], out_dir: str,
                   synth_overrides: Optional[Dict[str, Any]] = None) -> dict:
    """Baseline against DeC on freshly generated data, once per seed"""
    runs = []
    for seed in seeds:
        seed_params = dict(params, SEED=int(seed))
        seed_dir = os.path.join(out_dir, f"seed_{seed}")
        synth = SynthConfig.from_params(seed_params, **(synth_overrides or {}))
        files = write_synth(generate(synth), os.path.join(seed_dir, 'data'))

        pipeline = DecPipeline(seed_params)
        data = pipeline.load(DataPaths.from_dir(os.path.dirname(files['vocab'])), need_test=True)
        corpus = pipeline.compose(data)
        write_corpus(corpus, os.path.join(seed_dir, 'corpus.jsonl'))

        reports = {}
        for name, dec in (('baseline', False), ('dec', True)):
            result = pipeline.train(data, dec=dec, corpus=corpus if dec else None)
            written = write_training(result, seed_dir, name, {'dec': dec, 'seed': int(seed)})
            classifier, _ = load_checkpoint(written['checkpoint'])
            reports[name], _ = pipeline.evaluate(classifier, data)
            pipeline.write_evaluation(reports[name], data, seed_dir, name)

        comparison = compare_reports(reports['baseline'], reports['dec'])
        comparison['seed'] = int(seed)
        comparison['composed'] = len(corpus)
        write_json(comparison, os.path.join(seed_dir, 'comparison.json'))
        runs.append(comparison)
        logger.info("Experiment seed finished", extra={'seed': seed, 'margin': comparison['margin']})

    margins = [run['margin'] for run in runs]
    return {
        'seeds': [int(s) for s in seeds],
        'runs': runs,
        'mean_margin': float(np.mean(margins)) if margins else 0.0,
        'dec_better_all_seeds': all(m > 0 for m in margins),
        'rarest_nonzero_all_seeds': all(run['rarest_nonzero_under_dec'] for run in runs),
    }
