"""DecSGG command line: every subcommand resolves its parameters, does its
work under ``--out`` and leaves a manifest behind."""
import os
import csv
import sys
import logging
from collections import Counter
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, List, Optional

import click

from .anchor import scan_anchors, select_and_decompose
from .composer import novel_combinations
from .config.config import CONFIG, PROFILES, resolve_params
from .config_validator import ConfigValidator
from .core import DataBundle, DataPaths, DecPipeline, run_experiment, write_corpus, write_training
from .error_handler import USAGE_EXIT_CODE, ConfigError, DataError, ErrorHandler
from .evaluation import compare_reports, few_shot_split, load_split, save_split, zero_shot_split
from .formats import save_annotations, write_json, write_records
from .logger_config import setup_logging
from .manifest import RunManifest, load_manifest, replay_argv, verify_inputs, verify_outputs
from .schema import FeatureBank
from .synth import SynthConfig, generate, write_synth
from .trainer import load_checkpoint
from .version import __version__, version_banner

logger = logging.getLogger('DecSGG.cli')

Body = Callable[[Dict[str, Any], RunManifest], None]


def _ok(message: str) -> None:
    click.echo(f"{click.style('✓', fg='green')} {message}")


def _run(subcommand: str, overrides: Dict[str, Any], body: Body) -> None:
    """Resolve and validate parameters, run ``body`` and record the outcome"""
    opts = click.get_current_context().obj
    out_dir = opts['out_dir']
    manifest = RunManifest(subcommand, out_dir, opts['argv'], opts['profile'], {})
    try:
        params = resolve_params(opts['profile'], opts['config_file'], overrides)
        manifest.params = params
        is_valid, errors, warnings = ConfigValidator(params).validate_config()
        for warning in warnings:
            logger.warning(warning)
        if not is_valid:
            raise ConfigError(f"Invalid configuration: {'; '.join(errors)}", {'errors': errors})
        if opts['config_file']:
            manifest.add_input('config', opts['config_file'])
        logger.info(f"Running {subcommand}", extra={'out_dir': out_dir, 'profile': opts['profile']})
        body(params, manifest)
    except Exception as e:
        manifest.write('failed', e)
        raise
    manifest.write('ok')


def data_options(f: Callable) -> Callable:
    """Input file options shared by the subcommands that read a dataset"""
    options = [
        click.option('--data-dir', type=click.Path(file_okay=False), default=None,
                     help='Directory laid out like the output of synth'),
        click.option('--vocab', 'vocab_path', type=click.Path(dir_okay=False), default=None),
        click.option('--train', 'train_path', type=click.Path(dir_okay=False), default=None,
                     help='Training annotations (JSON Lines)'),
        click.option('--test', 'test_path', type=click.Path(dir_okay=False), default=None,
                     help='Test annotations (JSON Lines)'),
        click.option('--features', 'features_path', type=click.Path(dir_okay=False), default=None,
                     help='Visual feature file'),
        click.option('--embeddings', 'embeddings_path', type=click.Path(dir_okay=False), default=None,
                     help='Word vector file'),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _paths(kwargs: Dict[str, Any]) -> DataPaths:
    return DataPaths.from_dir(
        kwargs.pop('data_dir'),
        vocab=kwargs.pop('vocab_path'),
        train=kwargs.pop('train_path'),
        test=kwargs.pop('test_path'),
        features=kwargs.pop('features_path'),
        embeddings=kwargs.pop('embeddings_path'),
    )


def _load(params: Dict[str, Any], paths: DataPaths, manifest: RunManifest,
          need_test: bool = False) -> DataBundle:
    for name, path in paths.as_inputs().items():
        if name != 'test' or need_test:
            manifest.add_input(name, path)
    return DecPipeline(params).load(paths, need_test=need_test)


def _out(name: str) -> str:
    return os.path.join(click.get_current_context().obj['out_dir'], name)


@click.group()
@click.option('--config', 'config_file', type=click.Path(dir_okay=False), default=None,
              help='Experiment file of key = value lines')
@click.option('--profile', type=click.Choice(sorted(PROFILES)), default='desk', show_default=True)
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), default='out', show_default=True,
              help='Directory for every file a run writes')
@click.option('--log-level', type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR']), default=None)
@click.version_option(__version__, prog_name='decsgg', message='%(prog)s ' + version_banner())
@click.pass_context
def cli(ctx, config_file, profile, out_dir, log_level):
    """DecSGG - decomposition and composition augmentation for scene graphs"""
    ctx.ensure_object(dict)
    ctx.obj.setdefault('argv', [])
    ctx.obj.update(config_file=config_file, profile=profile, out_dir=out_dir)
    os.makedirs(out_dir, exist_ok=True)
    setup_logging(os.path.join(out_dir, CONFIG['LOGGING']['dir_name']),
                  log_level or CONFIG['LOGGING']['level'])


@cli.command()
@click.option('--seed', type=int, default=None)
@click.option('--train-images', type=int, default=None)
@click.option('--test-images', type=int, default=None)
@click.option('--categories', type=int, default=None, help='Number of object categories')
@click.option('--predicates', type=int, default=None, help='Number of predicates, background excluded')
@click.option('--zipf', type=float, default=None, help='Exponent of the predicate frequency law')
@click.option('--unseen', type=int, default=None, help='Held-out combinations planted in the test set')
@click.option('--visual-dim', type=int, default=None)
def synth(seed, train_images, test_images, categories, predicates, zipf, unseen, visual_dim):
    """Generate a seeded synthetic long-tailed dataset"""
    def body(params, manifest):
        config = SynthConfig.from_params(
            params,
            n_train_images=train_images,
            n_test_images=test_images,
            n_object_categories=categories,
            n_predicates=predicates,
            zipf_exponent=zipf,
            n_unseen=unseen,
        )
        data = generate(config)
        paths = write_synth(data, click.get_current_context().obj['out_dir'])
        for name, path in paths.items():
            manifest.add_output(name, path)
        _ok(f"{len(data.train)} train / {len(data.test)} test images, "
            f"{data.train.num_triples} train triples, {len(data.held_out)} held-out combinations")

    _run('synth', {'SEED': seed, 'VISUAL_DIM': visual_dim}, body)


@cli.command()
@data_options
@click.option('--split', 'which', type=click.Choice(['train', 'test']), default='train', show_default=True)
@click.option('--delta', type=float, default=None)
def stats(which, delta, **kwargs):
    """Predicate frequency table with image and anchor counts"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest, need_test=which == 'test')
        dataset = data.train if which == 'train' else data.test
        counts = dataset.predicate_counts()
        images = Counter()
        for image in dataset.images:
            for predicate in {t.predicate for t in image.triples}:
                images[predicate] += 1
        anchors = Counter(d.triple.predicate for d in scan_anchors(dataset, params['DELTA']))

        out_path = _out('stats.csv')
        order = sorted(range(1, data.vocab.num_predicates), key=lambda p: (-int(counts[p]), p))
        with open(out_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['predicate', 'triples', 'images', 'anchors'])
            for p in order:
                writer.writerow([data.vocab.predicates[p], int(counts[p]), images[p], anchors[p]])
        manifest.add_output('stats', out_path)

        click.echo(f"{'predicate':<24}{'triples':>9}{'images':>9}{'anchors':>9}")
        for p in order[:10]:
            click.echo(f"{data.vocab.predicates[p]:<24}{int(counts[p]):>9}{images[p]:>9}{anchors[p]:>9}")
        if len(order) > 10:
            click.echo(f"... {len(order) - 10} more in {out_path}")

    _run('stats', {'DELTA': delta}, body)


@cli.command()
@data_options
@click.option('--delta', type=float, default=None)
@click.option('--all', 'include_all', is_flag=True, help='Also list triples that are not anchors')
def anchors(delta, include_all, **kwargs):
    """List anchor decisions as line-delimited records"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest)
        if include_all:
            decisions = [select_and_decompose(t, data.train, params['DELTA']) for _, t in data.train.iter_triples()]
        else:
            decisions = scan_anchors(data.train, params['DELTA'])
        out_path = _out('anchors.jsonl')
        write_records((d.to_record() for d in decisions), out_path)
        manifest.add_output('anchors', out_path)
        found = sum(1 for d in decisions if d.is_anchor)
        _ok(f"{found} anchors out of {data.train.num_triples} triples (delta={params['DELTA']})")

    _run('anchors', {'DELTA': delta}, body)


@cli.command('dict-dump')
@data_options
@click.option('--capacity', type=int, default=None)
@click.option('--seed', type=int, default=None)
def dict_dump(capacity, seed, **kwargs):
    """Populate the visual component dictionary and dump its entries"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest)
        pipeline = DecPipeline(params)
        bank = FeatureBank(data.train, data.embeddings, pipeline.dims)
        dictionary = pipeline.build_dictionary(data.train, bank)
        out_path = _out('dictionary.jsonl')
        write_records(dictionary.dump(), out_path)
        manifest.add_output('dictionary', out_path)
        _ok(f"{len(dictionary)} entries, {dictionary.evictions} evictions")

    _run('dict-dump', {'DICTIONARY_CAPACITY': capacity, 'SEED': seed}, body)


@cli.command()
@data_options
@click.option('--budget', type=int, default=None)
@click.option('--seed', type=int, default=None)
@click.option('--delta', type=float, default=None)
@click.option('--kinds', default=None, help="Comma separated subset of 'intra,inter'")
@click.option('--retrieval', type=click.Choice(['shape', 'random']), default=None)
def compose(budget, seed, delta, kinds, retrieval, **kwargs):
    """Compose new relation triples from anchors and write the corpus"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest)
        corpus = DecPipeline(params).compose(data)
        corpus_path = _out('corpus.jsonl')
        write_corpus(corpus, corpus_path)

        novel = sorted(novel_combinations(corpus.relations, data.train))
        summary = corpus.summary()
        summary['novel_combinations'] = len(novel)
        summary['novel'] = [
            {'subject': data.vocab.object_categories[s], 'predicate': data.vocab.predicates[p],
             'object': data.vocab.object_categories[o]}
            for s, p, o in novel
        ]
        summary_path = _out('corpus_summary.json')
        write_json(summary, summary_path)

        manifest.add_output('corpus', corpus_path)
        manifest.add_output('corpus_summary', summary_path)
        _ok(f"{len(corpus)} composed relations from {corpus.anchors} anchors, "
            f"{len(novel)} novel combinations")

    _run('compose', {'COMPOSE_BUDGET': budget, 'SEED': seed, 'DELTA': delta,
                     'COMPOSITION_KINDS': kinds, 'RETRIEVAL': retrieval}, body)


@cli.command()
@data_options
@click.option('--kind', type=click.Choice(['few-shot', 'zero-shot']), required=True)
@click.option('--shots', type=int, default=None)
@click.option('--seed', type=int, default=None)
def split(kind, shots, seed, **kwargs):
    """Write a few-shot or zero-shot split description"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest, need_test=kind == 'zero-shot')
        tag = kind.replace('-', '_')
        if kind == 'few-shot':
            spec = few_shot_split(data.train, params['SHOTS'], params['SEED'])
            subset_path = _out(f'train.{tag}.jsonl')
            save_annotations(data.train.subset(spec.train_image_ids), subset_path)
            manifest.add_output('train_subset', subset_path)
            summary = f"{len(spec.train_image_ids)} training images for {len(spec.per_predicate)} predicates"
        else:
            spec = zero_shot_split(data.train, data.test)
            summary = f"{len(spec.test_triples)} zero-shot test triples"
        split_path = _out(f'split.{tag}.json')
        save_split(spec, split_path)
        manifest.add_output('split', split_path)
        _ok(summary)

    _run('split', {'SHOTS': shots, 'SEED': seed}, body)


@cli.command()
@data_options
@click.option('--dec', is_flag=True, help='Balanced batches, composed corpus and the consistency term')
@click.option('--corpus', 'corpus_path', type=click.Path(dir_okay=False), default=None,
              help='Reuse a corpus written by compose instead of composing afresh')
@click.option('--kl-weight', type=float, default=None)
@click.option('--iterations', type=int, default=None)
@click.option('--lr', 'learning_rate', type=float, default=None)
@click.option('--hidden-dim', type=int, default=None)
@click.option('--budget', type=int, default=None)
@click.option('--kinds', default=None)
@click.option('--retrieval', type=click.Choice(['shape', 'random']), default=None)
@click.option('--seed', type=int, default=None)
@click.option('--name', default=None, help="Checkpoint name, 'dec' or 'baseline' by default")
def train(dec, corpus_path, kl_weight, iterations, learning_rate, hidden_dim, budget, kinds,
          retrieval, seed, name, **kwargs):
    """Train the predicate classifier, with or without DeC"""
    if corpus_path and not dec:
        raise click.UsageError("--corpus only applies to --dec runs")

    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest)
        pipeline = DecPipeline(params)
        corpus = None
        if corpus_path:
            manifest.add_input('corpus', corpus_path)
            corpus = pipeline.load_corpus(corpus_path, data)
        result = pipeline.train(data, dec=dec, corpus=corpus)
        run_name = name or ('dec' if dec else 'baseline')
        echo = {'dec': dec, 'params': {k: params[k] for k in sorted(params)}}
        for key, path in write_training(result, click.get_current_context().obj['out_dir'], run_name, echo).items():
            manifest.add_output(key, path)
        final = result.trace[-1][1] if result.trace else float('nan')
        _ok(f"{run_name}: {len(result.trace)} iterations, final loss {final:.4f}")

    _run('train', {'KL_WEIGHT': kl_weight, 'ITERATIONS': iterations, 'LEARNING_RATE': learning_rate,
                   'HIDDEN_DIM': hidden_dim, 'COMPOSE_BUDGET': budget, 'COMPOSITION_KINDS': kinds,
                   'RETRIEVAL': retrieval, 'SEED': seed}, body)


def _echo_report(report: dict) -> None:
    for k in report['mean_recall']:
        click.echo(f"R@{k}: {report['recall'][k]:.4f}  mR@{k}: {report['mean_recall'][k]:.4f}")
    tail = report['tail']
    click.echo(f"tail mR@{report['top_k']} ({len(tail['predicates'])} rarest): {tail['mean_recall']:.4f}")


@cli.command('eval')
@data_options
@click.option('--checkpoint', type=click.Path(dir_okay=False), required=True)
@click.option('--split-file', type=click.Path(dir_okay=False), default=None,
              help='Zero-shot split restricting the ground truth')
@click.option('--name', default=None, help='Report name, the checkpoint name by default')
def eval_(checkpoint, split_file, name, **kwargs):
    """Evaluate a checkpoint: R@K, mR@K and the per-predicate table"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest, need_test=True)
        manifest.add_input('checkpoint', checkpoint)
        spec = None
        if split_file:
            manifest.add_input('split', split_file)
            spec = load_split(split_file)
        classifier, _ = load_checkpoint(checkpoint)
        pipeline = DecPipeline(params)
        report, _ = pipeline.evaluate(classifier, data, spec)
        report_name = name or os.path.splitext(os.path.basename(checkpoint))[0]
        written = pipeline.write_evaluation(report, data, click.get_current_context().obj['out_dir'], report_name)
        for key, path in written.items():
            manifest.add_output(key, path)
        _echo_report(report)

    _run('eval', {}, body)


@cli.command()
@data_options
@click.option('--baseline', 'baseline_path', type=click.Path(dir_okay=False), required=True)
@click.option('--dec', 'dec_path', type=click.Path(dir_okay=False), required=True)
def report(baseline_path, dec_path, **kwargs):
    """Compare a baseline and a DeC checkpoint on the tail predicates"""
    def body(params, manifest):
        paths = _paths(kwargs)
        data = _load(params, paths, manifest, need_test=True)
        manifest.add_input('baseline', baseline_path)
        manifest.add_input('dec', dec_path)
        pipeline = DecPipeline(params)
        reports = {}
        for key, path in (('baseline', baseline_path), ('dec', dec_path)):
            classifier, _ = load_checkpoint(path)
            reports[key], _ = pipeline.evaluate(classifier, data)

        k = reports['baseline']['top_k']
        counts = data.train.predicate_counts()
        csv_path = _out('report.csv')
        order = sorted(range(1, data.vocab.num_predicates), key=lambda p: (-int(counts[p]), p))
        with open(csv_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(['predicate', 'train_frequency', f'baseline_recall_at_{k}', f'dec_recall_at_{k}'])
            for p in order:
                row = [reports[key]['per_predicate'][p] for key in ('baseline', 'dec')]
                writer.writerow([data.vocab.predicates[p], int(counts[p])] +
                                ['' if v is None else repr(float(v)) for v in row])

        comparison = compare_reports(reports['baseline'], reports['dec'])
        comparison_path = _out('comparison.json')
        write_json(comparison, comparison_path)
        manifest.add_output('report', csv_path)
        manifest.add_output('comparison', comparison_path)

        color = 'green' if comparison['margin'] > 0 else 'red'
        click.echo(f"tail mR@{k}: baseline {comparison['baseline_tail_mean_recall']:.4f}, "
                   f"dec {comparison['dec_tail_mean_recall']:.4f}, "
                   + click.style(f"margin {comparison['margin']:+.4f}", fg=color))

    _run('report', {}, body)


@contextmanager
def _working_directory(path: str) -> Iterator[None]:
    previous = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(previous)


@cli.command()
@click.option('--manifest', 'manifest_file', type=click.Path(dir_okay=False), required=True)
def replay(manifest_file):
    """Re-run a recorded subcommand into --out and verify its outputs"""
    def body(params, manifest):
        recorded = load_manifest(manifest_file)
        manifest.add_input('manifest', manifest_file)
        if recorded['subcommand'] == 'replay':
            raise DataError("A replay manifest cannot be replayed", {'path': manifest_file})
        changed = verify_inputs(recorded)
        if changed:
            raise DataError(f"Inputs changed since the recorded run: {', '.join(changed)}", {'changed': changed})

        out_dir = os.path.abspath(click.get_current_context().obj['out_dir'])
        argv = replay_argv(recorded, out_dir)
        with _working_directory(recorded.get('cwd', os.getcwd())):
            code = main(argv)
        if code != 0:
            raise DataError(f"Replayed {recorded['subcommand']} exited with {code}", {'exit_code': code})

        mismatched = verify_outputs(recorded, out_dir)
        if mismatched:
            raise DataError(f"Replayed outputs differ: {', '.join(mismatched)}", {'mismatched': mismatched})
        _ok(f"{len(recorded['outputs'])} outputs of {recorded['subcommand']} reproduced")

    _run('replay', {}, body)


@cli.command()
@click.option('--seeds', default='0,1,2', show_default=True, help='Comma separated seeds')
@click.option('--iterations', type=int, default=None)
@click.option('--budget', type=int, default=None)
@click.option('--kl-weight', type=float, default=None)
@click.option('--kinds', default=None)
@click.option('--retrieval', type=click.Choice(['shape', 'random']), default=None)
@click.option('--train-images', type=int, default=None)
@click.option('--test-images', type=int, default=None)
@click.option('--predicates', type=int, default=None)
def experiment(seeds, iterations, budget, kl_weight, kinds, retrieval, train_images, test_images, predicates):
    """Baseline against DeC on synthetic data for several seeds"""
    try:
        seed_list = [int(s) for s in seeds.split(',') if s.strip()]
    except ValueError:
        raise click.BadParameter(f"not a list of integers: {seeds}", param_hint='--seeds')
    if not seed_list:
        raise click.BadParameter("at least one seed is required", param_hint='--seeds')

    def body(params, manifest):
        out_dir = click.get_current_context().obj['out_dir']
        synth_overrides = {'n_train_images': train_images, 'n_test_images': test_images,
                           'n_predicates': predicates}
        summary = run_experiment(params, seed_list, out_dir, synth_overrides)
        summary_path = _out('experiment.json')
        write_json(summary, summary_path)
        for seed in seed_list:
            seed_dir = os.path.join(out_dir, f"seed_{seed}")
            for root, _, files in sorted(os.walk(seed_dir)):
                for filename in sorted(files):
                    path = os.path.join(root, filename)
                    manifest.add_output(os.path.relpath(path, out_dir), path)
        manifest.add_output('experiment', summary_path)

        for run in summary['runs']:
            color = 'green' if run['margin'] > 0 else 'red'
            click.echo(f"seed {run['seed']}: " + click.style(f"tail margin {run['margin']:+.4f}", fg=color))
        click.echo(f"mean margin {summary['mean_margin']:+.4f}; "
                   f"DeC ahead on every seed: {summary['dec_better_all_seeds']}; "
                   f"rarest predicates recalled on every seed: {summary['rarest_nonzero_all_seeds']}")

    _run('experiment', {'ITERATIONS': iterations, 'COMPOSE_BUDGET': budget, 'KL_WEIGHT': kl_weight,
                        'COMPOSITION_KINDS': kinds, 'RETRIEVAL': retrieval}, body)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes (0 ok, 1 usage, 2 data, 3 numeric)"""
    argv = list(sys.argv[1:] if argv is None else argv)
    handler = ErrorHandler()
    try:
        result = cli.main(args=argv, prog_name='decsgg', obj={'argv': argv}, standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return USAGE_EXIT_CODE
    except click.ClickException as e:
        e.show()
        return USAGE_EXIT_CODE
    except click.Abort:
        click.echo("Aborted!", err=True)
        return USAGE_EXIT_CODE
    except Exception as e:
        code = handler.handle_error(e, {'argv': argv})
        click.echo(click.style(f"Error: {e}", fg='red'), err=True)
        return code
    return result if isinstance(result, int) else 0


def entry() -> None:
    sys.exit(main())


if __name__ == '__main__':
    entry()
