"""
Replication loop, aggregation, bias sweeps and MI traces.

Files written under an experiment's out_dir carry no timestamps, so reruns
with the same config and seed are byte-identical:

    rep_{seed}.json        config, status and in/out-sample metrics
    rep_{seed}.ckpt.json   trained networks (neural variants)
    aggregate.json         mean / stderr / count per metric and split
    sweep_bias.csv         one row per (bias level, method)
    trace_mi.csv           per-epoch training trace with validation sqrt PEHE
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from django.conf import settings
from django.utils import timezone
from huey.exceptions import TaskException

from . import abcei, datagen, evaluation
from .exceptions import ConfigError, DimensionError, DomainError, ExperimentError, MetricUnavailableError, NumericError, TrainingError
from .forms import validate_search_space
from .models import Experiment, Replication
from .utils import reproducibility_header, write_frame, write_json

logger = logging.getLogger('experiment_logger')

NEURAL_VARIANTS = tuple(abcei.VARIANTS)
VARIANT_NAMES = NEURAL_VARIANTS + evaluation.BASELINES
CONFIG_KEYS = ('name', 'source', 'model', 'variant', 'replications', 'base_seed', 'out_dir', 'split', 'knn_k',
               'preset', 'override')


def default_out_dir():
    return str(getattr(settings, 'ABCEI_OUTPUT_DIR', 'results'))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = 'experiment'
    source: dict = field(default_factory=lambda: {'generator': 'toy_bias'})
    model: abcei.AbceiConfig = field(default_factory=abcei.AbceiConfig)
    variant: str = 'full'
    replications: int = 1
    base_seed: int = 0
    out_dir: str = field(default_factory=default_out_dir)
    split: dict = field(default_factory=dict)
    knn_k: int = 1
    preset: Optional[str] = None
    override: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'variant', str(self.variant).lower())
        if self.variant not in VARIANT_NAMES:
            raise ConfigError(f'unknown variant {self.variant!r}, choose from {", ".join(VARIANT_NAMES)}')
        if self.replications < 1:
            raise ConfigError(f'replications must be >= 1, got {self.replications}')
        if self.knn_k < 1:
            raise ConfigError(f'knn_k must be >= 1, got {self.knn_k}')
        datagen.check_source(self.source)
        try:
            self.split_spec(self.base_seed)
        except (DomainError, TypeError) as e:
            raise ConfigError(f'invalid split settings {self.split}: {e}')
        validate_search_space(self.model, self.override)

    @property
    def out_path(self):
        return Path(self.out_dir)

    @property
    def is_neural(self):
        return self.variant in NEURAL_VARIANTS

    @property
    def seeds(self):
        return list(range(self.base_seed, self.base_seed + self.replications))

    def split_spec(self, seed):
        return datagen.SplitSpec(seed=seed, **self.split)

    def model_for(self, seed):
        return dataclasses.replace(abcei.ablate(self.model, self.variant), seed=seed)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self, with_output=False):
        """Resolved config. The output directory is left out unless asked for, so it never leaks into files."""
        data = {
            'name': self.name,
            'source': dict(self.source),
            'model': self.model.to_dict(),
            'variant': self.variant,
            'replications': self.replications,
            'base_seed': self.base_seed,
            'split': dict(self.split),
            'knn_k': self.knn_k,
            'preset': self.preset,
            'override': self.override,
        }
        if with_output:
            data['out_dir'] = self.out_dir
        return data

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(sorted(unknown))}')
        model_settings = dict(data.pop('model', None) or {})
        try:
            if data.get('preset'):
                model = abcei.preset(data['preset'], **model_settings)
            else:
                model = abcei.AbceiConfig.from_dict(model_settings)
            return cls(model=model, **data)
        except TypeError as e:
            raise ConfigError(f'invalid config: {e}')


@dataclass
class ReplicationResult:
    seed: int
    status: str = 'completed'
    error: str = ''
    epochs: int = 0
    best_epoch: int = 0
    in_sample: Optional[evaluation.MetricsReport] = None
    out_sample: Optional[evaluation.MetricsReport] = None

    @property
    def completed(self):
        return self.status == 'completed'

    @property
    def reports(self):
        return self.in_sample, self.out_sample

    def to_dict(self):
        return {
            'seed': self.seed,
            'status': self.status,
            'error': self.error,
            'epochs': self.epochs,
            'best_epoch': self.best_epoch,
            'in_sample': self.in_sample.to_dict() if self.in_sample else None,
            'out_sample': self.out_sample.to_dict() if self.out_sample else None,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ('in_sample', 'out_sample'):
            if data.get(key) is not None:
                data[key] = evaluation.MetricsReport.from_dict(data[key])
        return cls(**data)


@dataclass
class AggregateResult:
    """Per split and metric: mean, standard error (population std / sqrt count) and count."""
    metrics: dict
    completed: int
    failed: int
    failed_seeds: list
    config: dict

    def to_dict(self):
        return dataclasses.asdict(self)

    def mean(self, metric, split='out'):
        return self.metrics[split][metric]['mean']

    def stderr(self, metric, split='out'):
        return self.metrics[split][metric]['stderr']


def _in_sample(dataset, parts):
    index = np.concatenate([parts.indices['train'], parts.indices['val']])
    part = dataset.subset(index)
    return part.with_covariates(parts.scaler.transform(part.X))


def _scaler_meta(scaler):
    return {'mean': scaler.mean_.tolist(), 'scale': scaler.scale_.tolist()}


def _fit_neural(config, parts, seed, on_epoch=None):
    model = abcei.AbceiModel.create(config.model_for(seed), parts.train.k)
    trace = abcei.fit(model, parts.train, parts.val, rng=np.random.default_rng(seed), on_epoch=on_epoch)
    return model, trace


def _estimates(config, parts, in_sample, seed):
    """(in-sample outcomes, out-sample outcomes, in-sample tau, out-sample tau, model, trace)."""
    test = parts.test
    if config.is_neural:
        model, trace = _fit_neural(config, parts, seed)
        outcomes_in = abcei.predict_outcomes(model, in_sample.X)
        outcomes_out = abcei.predict_outcomes(model, test.X)
        return outcomes_in, outcomes_out, None, None, model, trace
    if config.variant == 'knn':
        tau_in = evaluation.knn_cate(in_sample, config.knn_k)
        tau_out = evaluation.knn_cate(in_sample, config.knn_k, X=test.X)
        return None, None, tau_in, tau_out, None, None
    linear = evaluation.fit_lr1(in_sample) if config.variant == 'ols_lr1' else evaluation.fit_lr2(in_sample)
    return linear.predict_outcomes(in_sample.X), linear.predict_outcomes(test.X), None, None, None, None


def _report(dataset, outcomes, tau, split_tag):
    if tau is None:
        tau = outcomes[1] - outcomes[0]
    return evaluation.evaluate_estimate(dataset, tau, split_tag, outcomes=outcomes)


def run_replication(config, seed):
    """Generate or load, split, train, evaluate both splits and persist rep_{seed}.json."""
    logger.info(f'Replication {config.name} seed {seed}: variant {config.variant}')
    dataset = datagen.build_dataset(config.source, seed)
    parts = datagen.split(dataset, config.split_spec(seed))
    in_sample = _in_sample(dataset, parts)
    try:
        outcomes_in, outcomes_out, tau_in, tau_out, model, trace = _estimates(config, parts, in_sample, seed)
        result = ReplicationResult(
            seed=seed,
            epochs=len(trace) if trace else 0,
            best_epoch=trace.best_epoch if trace else 0,
            in_sample=_report(in_sample, outcomes_in, tau_in, 'in'),
            out_sample=_report(parts.test, outcomes_out, tau_out, 'out'),
        )
        if model is not None:
            model.save(config.out_path / f'rep_{seed}.ckpt.json',
                       meta={'seed': seed, 'variant': config.variant, 'scaler': _scaler_meta(parts.scaler)})
    except (TrainingError, NumericError) as e:
        logger.warning(f'  Replication seed {seed} failed: {e}')
        result = ReplicationResult(seed=seed, status='failed', error=str(e))
    write_json(config.out_path / f'rep_{seed}.json', {'config': config.to_dict(), **result.to_dict()})
    return result


def _summarize(reports):
    frame = pd.DataFrame([report.metrics() for report in reports])
    summary = {}
    for column in sorted(frame.columns):
        values = frame[column].dropna().to_numpy(dtype=np.float64)
        if values.size == 0:
            continue
        summary[column] = {
            'mean': float(values.mean()),
            'stderr': float(values.std() / math.sqrt(values.size)),
            'count': int(values.size),
        }
    return summary


def aggregate(results, config):
    """Aggregate completed replications; failed ones are counted, never averaged."""
    results = sorted(results, key=lambda r: r.seed)
    completed = [r for r in results if r.completed]
    failed_seeds = [r.seed for r in results if not r.completed]
    if not completed:
        raise ExperimentError(f'all {len(results)} replications of {config.name} failed')
    if failed_seeds:
        logger.warning(f'{len(failed_seeds)} replications of {config.name} failed and are excluded: seeds {failed_seeds}')
    return AggregateResult(
        metrics={
            'in': _summarize([r.in_sample for r in completed]),
            'out': _summarize([r.out_sample for r in completed]),
        },
        completed=len(completed),
        failed=len(failed_seeds),
        failed_seeds=failed_seeds,
        config=config.to_dict(),
    )


def _dispatch(config, jobs):
    if jobs <= 1:
        return [run_replication(config, seed) for seed in config.seeds]
    from .tasks import replication_task

    payload = config.to_dict(with_output=True)
    pending = [replication_task(payload, seed) for seed in config.seeds]
    results = []
    for seed, result in zip(config.seeds, pending):
        try:
            results.append(ReplicationResult.from_dict(result.get(blocking=True)))
        except TaskException as e:
            raise ExperimentError(f'replication task for seed {seed} raised: {e.metadata.get("error", e)}')
    return results


def _start_record(config):
    experiment, _ = Experiment.objects.update_or_create(
        name=config.name,
        defaults={
            'variant': config.variant,
            'config': config.to_dict(with_output=True),
            'status': 'running',
            'aggregate': None,
            'failed_replications': 0,
        },
    )
    experiment.replications.all().delete()
    return experiment


def _finish_record(experiment, results, result):
    Replication.objects.bulk_create([
        Replication(
            experiment=experiment,
            seed=r.seed,
            status=r.status,
            error=r.error,
            epochs=r.epochs,
            in_sample=r.in_sample.to_dict() if r.in_sample else None,
            out_sample=r.out_sample.to_dict() if r.out_sample else None,
        )
        for r in results
    ])
    experiment.status = 'completed' if result is not None else 'failed'
    experiment.aggregate = result.to_dict() if result is not None else None
    experiment.failed_replications = sum(1 for r in results if not r.completed)
    experiment.last_run = timezone.now()
    experiment.save()


def run_experiment(config, jobs=1, record=True):
    """Replications over seeds base_seed .. base_seed + R − 1, aggregated into aggregate.json."""
    logger.info(f'Running experiment {config.name}: {config.replications} replications, {jobs} jobs')
    experiment = _start_record(config) if record else None
    results = []
    try:
        results = _dispatch(config, jobs)
        result = aggregate(results, config)
    except Exception:
        if experiment is not None:
            _finish_record(experiment, results, None)
        raise
    write_json(config.out_path / 'aggregate.json', result.to_dict())
    if experiment is not None:
        _finish_record(experiment, results, result)
    return result


SWEEP_COLUMNS = ['offset', 'kl', 'method', 'sqrt_pehe_in', 'sqrt_pehe_in_stderr', 'sqrt_pehe_out',
                 'sqrt_pehe_out_stderr', 'completed', 'failed']


def _toy_spec(source, seed):
    params = {key: value for key, value in source.items() if key not in ('generator', 'full_scale')}
    return datagen.ToyBiasSpec(seed=seed, **params)


def _method_slug(method):
    return method.replace('*', 'star')


def sweep_bias(config, offsets=None, kl_targets=None, methods=None, jobs=1):
    """
    One row per (bias level, method). Levels are μ-offsets or target KL values;
    offset and KL columns are means over the replication seeds, whose covariances differ.
    """
    if config.source.get('generator', 'toy_bias') != 'toy_bias':
        raise ConfigError('sweep_bias needs the toy_bias generator')
    if (offsets is None) == (kl_targets is None):
        raise ConfigError('give either offsets or KL targets')
    methods = list(methods or [config.variant])
    if offsets is not None:
        levels = [('mu_offset', float(v)) for v in offsets]
    else:
        levels = [('kl_target', float(v)) for v in kl_targets]

    rows = []
    for index, (key, level) in enumerate(levels):
        source = {k: v for k, v in config.source.items() if k not in ('mu_offset', 'kl_target', 'mu1')}
        source[key] = level
        designs = [datagen.toy_bias_design(_toy_spec(source, seed)) for seed in config.seeds]
        offset = float(np.mean([design.mu1[0] - design.mu0[0] for design in designs]))
        kl = float(np.mean([design.kl for design in designs]))
        logger.info(f'Sweep level {index}: offset {offset:.4f}, KL {kl:.4f}')
        for method in methods:
            run_config = config.replace(
                name=f'{config.name}-level{index}-{_method_slug(method)}',
                source=source,
                variant=method,
                out_dir=str(config.out_path / 'sweep' / f'level_{index}' / _method_slug(method)),
            )
            result = run_experiment(run_config, jobs=jobs, record=False)
            pehe_in = result.metrics['in'].get('sqrt_pehe', {})
            pehe_out = result.metrics['out'].get('sqrt_pehe', {})
            rows.append({
                'offset': offset,
                'kl': kl,
                'method': run_config.variant,
                'sqrt_pehe_in': pehe_in.get('mean', math.nan),
                'sqrt_pehe_in_stderr': pehe_in.get('stderr', math.nan),
                'sqrt_pehe_out': pehe_out.get('mean', math.nan),
                'sqrt_pehe_out_stderr': pehe_out.get('stderr', math.nan),
                'completed': result.completed,
                'failed': result.failed,
            })
    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    write_frame(config.out_path / 'sweep_bias.csv', frame, reproducibility_header(config, config.base_seed))
    return frame


def trace_mi(config):
    """Train the variant without the adversarial component and record validation sqrt PEHE per epoch."""
    if abcei.VARIANTS.get(config.variant) != 'no-adversarial':
        raise ConfigError(f'trace_mi runs the abcei** variant, got {config.variant!r}')
    seed = config.base_seed
    dataset = datagen.build_dataset(config.source, seed)
    parts = datagen.split(dataset, config.split_spec(seed))
    if not parts.val.has_means:
        raise MetricUnavailableError('trace_mi needs mu0/mu1 to score validation sqrt PEHE')
    tau_val = parts.val.tau_true()
    pehe_by_epoch = []

    def score_epoch(model, record):
        pehe_by_epoch.append(evaluation.pehe(tau_val, abcei.predict_cate(model, parts.val.X)))

    _, trace = _fit_neural(config, parts, seed, on_epoch=score_epoch)
    frame = trace.to_frame()
    frame['sqrt_pehe'] = pehe_by_epoch
    write_frame(config.out_path / 'trace_mi.csv', frame, reproducibility_header(config, seed))
    return frame


def generate(config, seed, path):
    """Write the configured dataset for one seed as a CSV with a reproducibility header."""
    dataset = datagen.build_dataset(config.source, seed)
    datagen.write_csv(dataset, path, reproducibility_header({'source': config.source}, seed))
    logger.info(f'Wrote {dataset.n} units to {path}')
    return dataset


def train(config, seed):
    """Fit one neural model; writes model_{seed}.ckpt.json and trace_{seed}.csv."""
    if not config.is_neural:
        raise ConfigError(f'train needs a neural variant, got {config.variant!r}')
    dataset = datagen.build_dataset(config.source, seed)
    parts = datagen.split(dataset, config.split_spec(seed))
    model, trace = _fit_neural(config, parts, seed)
    checkpoint = model.save(config.out_path / f'model_{seed}.ckpt.json',
                            meta={'seed': seed, 'variant': config.variant, 'scaler': _scaler_meta(parts.scaler)})
    trace.to_csv(config.out_path / f'trace_{seed}.csv', reproducibility_header(config, seed))
    return model, trace, checkpoint


def evaluate_checkpoint(checkpoint, data_path, split_tag='out'):
    """Score a saved model on a dataset CSV, standardizing with the scaler stored at training time."""
    model, meta = abcei.AbceiModel.load(checkpoint, with_meta=True)
    dataset = datagen.load_csv(data_path)
    scaler = meta.get('scaler')
    if scaler:
        mean, scale = np.asarray(scaler['mean']), np.asarray(scaler['scale'])
        if mean.size != dataset.k:
            raise DimensionError(f'checkpoint was trained on {mean.size} covariates, {data_path} has {dataset.k}')
        dataset = dataset.with_covariates((dataset.X - mean) / scale)
    outcomes = abcei.predict_outcomes(model, dataset.X)
    return _report(dataset, outcomes, None, split_tag)
