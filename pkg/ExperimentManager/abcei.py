"""
Adversarial balancing representation learning for CATE estimation.

Four networks share one latent space:

    encoder        Φ: covariates -> latent h (d_h columns)
    mi_critic      Ω: [x, h] -> scalar, Donsker-Varadhan critic
    discriminator  D: [z, h] -> scalar, Wasserstein critic (no sigmoid)
    head0 / head1  Ψ₀, Ψ₁: latent -> outcome under control / treatment

Each optimizer step runs its own forward pass on a fresh tape, binding only the
networks it updates as trainable.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, cross_val_score

from . import autodiff as ad
from . import nets
from .exceptions import BalanceError, ConfigError, ContractError, DimensionError, DomainError, TrainingError
from .utils import write_frame

logger = logging.getLogger('experiment_logger')

NETWORKS = ('encoder', 'mi_critic', 'discriminator', 'head0', 'head1')

# Optimizer state per update line of the training schedule.
UPDATE_GROUPS = {
    'mi': ('encoder', 'mi_critic'),
    'disc': ('discriminator',),
    'adv': ('encoder',),
    'pred': ('encoder', 'head0', 'head1'),
}

VARIANTS = {
    'full': 'full',
    'no-mi': 'no-mi',
    'abcei*': 'no-mi',
    'no-adversarial': 'no-adversarial',
    'abcei**': 'no-adversarial',
}

MAX_BATCH_REDRAWS = 10


@dataclass(frozen=True)
class AbceiConfig:
    encoder_depth: int = 2
    encoder_width: int = 50
    mi_depth: int = 1
    mi_width: int = 50
    disc_depth: int = 2
    disc_width: int = 50
    pred_depth: int = 2
    pred_width: int = 50
    latent_dim: Optional[int] = None
    lam: float = 1e-4
    beta: float = 10.0
    disc_steps: int = 3
    batch_size: int = 100
    max_epochs: int = 300
    patience: int = 30
    learning_rate: float = 1e-3
    optimizer: str = 'adam'
    use_mi: bool = True
    use_adversarial: bool = True
    early_stop_metric: str = 'mse_plus_mi'
    anchor: str = 'control'
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f'lam must be > 0, got {self.lam}')
        if self.beta < 0:
            raise ConfigError(f'beta must be >= 0, got {self.beta}')
        if self.disc_steps < 1:
            raise ConfigError(f'disc_steps must be >= 1, got {self.disc_steps}')
        if self.batch_size < 2:
            raise ConfigError(f'batch_size must be >= 2, got {self.batch_size}')
        if min(self.encoder_depth, self.mi_depth, self.disc_depth, self.pred_depth) < 1:
            raise ConfigError('network depths must be >= 1')
        if min(self.encoder_width, self.mi_width, self.disc_width, self.pred_width, self.d_h) < 1:
            raise ConfigError('network widths must be >= 1')
        if self.max_epochs < 1 or self.patience < 1:
            raise ConfigError('max_epochs and patience must be >= 1')
        if self.optimizer not in ('adam', 'rmsprop'):
            raise ConfigError(f'unknown optimizer {self.optimizer!r}')
        if self.early_stop_metric not in ('mse_plus_mi', 'mse'):
            raise ConfigError(f'unknown early_stop_metric {self.early_stop_metric!r}')
        if self.anchor not in ('control', 'treated'):
            raise ConfigError(f'anchor must be control or treated, got {self.anchor!r}')

    @property
    def d_h(self):
        return self.latent_dim if self.latent_dim is not None else self.encoder_width

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f'unknown model settings: {", ".join(sorted(unknown))}')
        return cls(**data)


# Optimal settings per benchmark; `desk` keeps the dataclass defaults.
PRESETS = {
    'desk': {},
    'ihdp': dict(encoder_depth=4, encoder_width=200, mi_depth=2, mi_width=200, disc_depth=3,
                 disc_width=200, pred_depth=3, pred_width=100, batch_size=65),
    'jobs': dict(encoder_depth=5, encoder_width=200, mi_depth=2, mi_width=200, disc_depth=3,
                 disc_width=200, pred_depth=3, pred_width=100, batch_size=100),
    'twins': dict(encoder_depth=5, encoder_width=300, mi_depth=2, mi_width=200, disc_depth=3,
                  disc_width=200, pred_depth=3, pred_width=200, batch_size=300),
    'acic': dict(encoder_depth=4, encoder_width=200, mi_depth=2, mi_width=200, disc_depth=3,
                 disc_width=200, pred_depth=3, pred_width=100, batch_size=100),
}


def preset(name, **overrides):
    try:
        settings = {'lam': 1e-4, 'beta': 10.0, **PRESETS[name]}
    except KeyError:
        raise ConfigError(f'unknown preset {name!r}, choose from {", ".join(PRESETS)}')
    settings.update(overrides)
    return AbceiConfig.from_dict(settings)


def ablate(config, variant):
    key = VARIANTS.get(str(variant).lower())
    if key is None:
        raise ConfigError(f'unknown variant {variant!r}')
    if key == 'no-mi':
        return dataclasses.replace(config, use_mi=False)
    if key == 'no-adversarial':
        return dataclasses.replace(config, use_adversarial=False)
    return config


def network_specs(config, input_dim):
    d_h = config.d_h
    return {
        'encoder': nets.MlpSpec(input_dim, (config.encoder_width,) * (config.encoder_depth - 1), d_h),
        'mi_critic': nets.MlpSpec(input_dim + d_h, (config.mi_width,) * config.mi_depth, 1),
        'discriminator': nets.MlpSpec(2 * d_h, (config.disc_width,) * config.disc_depth, 1),
        'head0': nets.MlpSpec(d_h, (config.pred_width,) * config.pred_depth, 1),
        'head1': nets.MlpSpec(d_h, (config.pred_width,) * config.pred_depth, 1),
    }


def complexity(config, batch_size, epochs):
    """Multiply-add estimate n·m·Σ (layers − 1)·width² over the four networks."""
    per_sample = ((config.encoder_depth - 1) * config.encoder_width ** 2
                  + (config.mi_depth - 1) * config.mi_width ** 2
                  + (config.disc_depth - 1) * config.disc_width ** 2
                  + (config.pred_depth - 1) * config.pred_width ** 2)
    return batch_size * epochs * per_sample


@dataclass
class AbceiModel:
    config: AbceiConfig
    input_dim: int
    encoder: nets.MlpParams
    mi_critic: nets.MlpParams
    discriminator: nets.MlpParams
    head0: nets.MlpParams
    head1: nets.MlpParams
    optimizers: dict = field(default_factory=dict)

    @classmethod
    def create(cls, config, input_dim, seed=None):
        seed = config.seed if seed is None else seed
        specs = network_specs(config, input_dim)
        params = {name: nets.init_params(specs[name], seed + offset, name=name)
                  for offset, name in enumerate(NETWORKS)}
        optimizers = {group: nets.new_optimizer(config.optimizer, config.learning_rate) for group in UPDATE_GROUPS}
        return cls(config=config, input_dim=input_dim, optimizers=optimizers, **params)

    @property
    def networks(self):
        return {name: getattr(self, name) for name in NETWORKS}

    def bind(self, tape, trainable=()):
        unknown = set(trainable) - set(NETWORKS)
        if unknown:
            raise ContractError(f'unknown networks {sorted(unknown)}')
        return BoundModel(self, tape, trainable)

    def snapshot(self):
        return {name: params.copy() for name, params in self.networks.items()}

    def restore(self, snapshot):
        for name, params in snapshot.items():
            setattr(self, name, params.copy())

    def optimizer_steps(self):
        return sum(state.t for state in self.optimizers.values())

    def save(self, path, meta=None):
        meta = dict(meta or {})
        meta.update(config=self.config.to_dict(), input_dim=self.input_dim)
        return nets.save_checkpoint(path, self.networks, meta)

    @classmethod
    def load(cls, path, with_meta=False):
        networks, meta = nets.load_checkpoint(path)
        missing = set(NETWORKS) - set(networks)
        if missing:
            raise ContractError(f'checkpoint is missing networks {sorted(missing)}')
        config = AbceiConfig.from_dict(meta['config'])
        optimizers = {group: nets.new_optimizer(config.optimizer, config.learning_rate) for group in UPDATE_GROUPS}
        model = cls(config=config, input_dim=int(meta['input_dim']), optimizers=optimizers,
                    **{name: networks[name] for name in NETWORKS})
        return (model, meta) if with_meta else model


class BoundModel:
    """All five networks of a model bound onto one tape."""

    def __init__(self, model, tape, trainable=()):
        self.model = model
        self.config = model.config
        self.tape = tape
        self.trainable = tuple(trainable)
        for name in NETWORKS:
            setattr(self, name, nets.bind(getattr(model, name), tape, trainable=name in trainable))

    def gradients(self):
        grads = {}
        for name in self.trainable:
            grads.update(getattr(self, name).gradients())
        return grads


def _bound(model):
    if isinstance(model, BoundModel):
        return model
    return model.bind(ad.Tape())


def _treatment_vector(T, rows):
    t = np.asarray(T, dtype=np.float64).reshape(-1)
    if t.size != rows:
        raise DimensionError(f'treatment vector has {t.size} entries for {rows} rows')
    return t


def encode(model, X):
    bound = _bound(model)
    X = ad.as_matrix(X, 'X')
    if X.shape[1] != bound.model.input_dim:
        raise DimensionError(f'encoder expects {bound.model.input_dim} covariates, got {X.shape[1]}')
    return nets.forward(bound.encoder, bound.tape.constant(X))


def mi_loss(model, X, h, perm):
    """
    L_ΦΩ = −E[Ω(x, h)] + log E[exp Ω(x̃, h)]; −L_ΦΩ is the DV estimate Î(X; h).

    Positives pair each row of X with its own latent row; negatives pair
    X[perm] with h.
    """
    bound = _bound(model)
    tape = bound.tape
    X = ad.as_matrix(X, 'X')
    n = h.rows
    if n < 2:
        raise DomainError('MI estimation needs at least two rows')
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise ContractError('perm must be a permutation of the batch rows')
    if X.shape[0] != n:
        raise DimensionError(f'X has {X.shape[0]} rows, latent has {n}')

    joint = nets.forward(bound.mi_critic, ad.concat_cols(tape.constant(X), h))
    marginal = nets.forward(bound.mi_critic, ad.concat_cols(tape.constant(X[perm]), h))
    # log-mean-exp shifted by a constant maximum; the shift cancels in the gradient
    shift = tape.constant([[float(marginal.value.max())]])
    log_mean_exp = ad.add(ad.log(ad.mean(ad.exp(ad.sub(marginal, shift)))), shift)
    return ad.sub(log_mean_exp, ad.mean(joint))


def _group_weights(t, anchor):
    treated = t == 1
    control = t == 0
    if not treated.any() or not control.any():
        raise BalanceError('batch needs at least one treated and one control unit')
    weights = np.where(treated, 1.0 / treated.sum(), -1.0 / control.sum())
    if anchor == 'treated':
        weights = -weights
    return weights.reshape(-1, 1)


def _critic_input(bound, h, z):
    z = ad.as_matrix(z, 'z')
    if z.shape != h.shape:
        raise DimensionError(f'noise shape {z.shape} does not match latent shape {h.shape}')
    return ad.concat_cols(bound.tape.constant(z), h)


def gradient_penalty(model, inputs, t, rng):
    """
    E[(‖∇D(v̂)‖₂ − 1)²] at points v̂ interpolated between paired control and
    treated critic inputs; min(n₀, n₁) pairs without replacement.
    """
    bound = _bound(model)
    tape = bound.tape
    control = np.flatnonzero(t == 0)
    treated = np.flatnonzero(t == 1)
    pairs = min(control.size, treated.size)
    if pairs == 0:
        raise BalanceError('gradient penalty needs both groups')
    pick_control = rng.choice(control, size=pairs, replace=False)
    pick_treated = rng.choice(treated, size=pairs, replace=False)
    mix = np.repeat(rng.uniform(0.0, 1.0, size=(pairs, 1)), inputs.cols, axis=1)

    interpolated = ad.add(
        ad.mul(ad.take_rows(inputs, pick_control), tape.constant(mix)),
        ad.mul(ad.take_rows(inputs, pick_treated), tape.constant(1.0 - mix)),
    )
    grad = ad.mlp_input_gradient(bound.discriminator.layers, interpolated)
    norms = ad.sqrt(ad.total(ad.square(grad), axis=1))
    return ad.mean(ad.square(ad.sub(norms, tape.constant(np.ones((pairs, 1))))))


def discriminator_loss(model, h, z, T, rng):
    """L_D = −E_{t=0}[D([z, h])] + E_{t=1}[D([z, h])] + β·penalty."""
    bound = _bound(model)
    t = _treatment_vector(T, h.rows)
    weights = _group_weights(t, bound.config.anchor)
    inputs = _critic_input(bound, h, z)
    scores = nets.forward(bound.discriminator, inputs)
    group_gap = ad.total(ad.mul(scores, bound.tape.constant(weights)))
    if bound.config.beta == 0:
        return group_gap
    penalty = gradient_penalty(bound, inputs, t, rng)
    return ad.add(group_gap, ad.scale(penalty, bound.config.beta))


def encoder_adversarial_loss(model, h, z, T):
    """L_Φ = E_{t=0}[D([z, h])] − E_{t=1}[D([z, h])]."""
    bound = _bound(model)
    t = _treatment_vector(T, h.rows)
    weights = _group_weights(t, bound.config.anchor)
    scores = nets.forward(bound.discriminator, _critic_input(bound, h, z))
    return ad.total(ad.mul(scores, bound.tape.constant(-weights)))


def outcome_loss(model, h, T, Y):
    """L_ΦΨ = E[(Ψ_t(h) − y_t)²] + λ·(R(Ψ₀) + R(Ψ₁)) on factual outcomes."""
    bound = _bound(model)
    tape = bound.tape
    t = _treatment_vector(T, h.rows).reshape(-1, 1)
    y = np.asarray(Y, dtype=np.float64).reshape(-1, 1)
    if y.shape[0] != h.rows:
        raise DimensionError(f'outcome vector has {y.shape[0]} entries for {h.rows} rows')
    y0 = nets.forward(bound.head0, h)
    y1 = nets.forward(bound.head1, h)
    prediction = ad.add(ad.mul(y1, tape.constant(t)), ad.mul(y0, tape.constant(1.0 - t)))
    loss = ad.mean(ad.square(ad.sub(prediction, tape.constant(y))))
    if bound.config.lam:
        regularizer = ad.add(nets.l2_penalty(bound.head1), nets.l2_penalty(bound.head0))
        loss = ad.add(loss, ad.scale(regularizer, bound.config.lam))
    return loss


def predict_outcomes(model, X):
    bound = _bound(model)
    h = encode(bound, X)
    y0 = nets.forward(bound.head0, h).value.reshape(-1)
    y1 = nets.forward(bound.head1, h).value.reshape(-1)
    return y0, y1


def predict_cate(model, X):
    y0, y1 = predict_outcomes(model, X)
    return y1 - y0


def latent(model, X):
    return encode(model, X).value


def estimate_mi(model, X, rng):
    """Î(X; Φ(X)) with the current critic; 0 when fewer than two rows."""
    X = ad.as_matrix(X, 'X')
    if X.shape[0] < 2:
        return 0.0
    bound = _bound(model)
    h = encode(bound, X)
    return -mi_loss(bound, X, h, rng.permutation(X.shape[0])).item()


def factual_mse(model, dataset):
    y0, y1 = predict_outcomes(model, dataset.X)
    prediction = np.where(dataset.T == 1, y1, y0)
    return float(np.mean((prediction - dataset.YF) ** 2))


@dataclass
class EpochRecord:
    epoch: int
    l_mi: float
    l_d: float
    l_phi: float
    l_pred: float
    val_mse: float
    mi_estimate: float


TRACE_COLUMNS = ['epoch', 'l_mi', 'l_d', 'l_phi', 'l_pred', 'val_mse', 'mi_estimate']


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def append(self, record):
        values = dataclasses.astuple(record)
        if not all(math.isfinite(v) for v in values):
            raise TrainingError(f'non-finite trace entry at epoch {record.epoch}: {record}')
        self.records.append(record)

    def to_frame(self):
        return pd.DataFrame([dataclasses.asdict(r) for r in self.records], columns=TRACE_COLUMNS)

    def to_csv(self, path, header_lines=()):
        return write_frame(path, self.to_frame(), header_lines)


def _check_loss(loss, label):
    value = loss.item()
    if not math.isfinite(value):
        raise TrainingError(f'non-finite {label} loss: {value}')
    return value


def _update(model, group, tape, bound, loss, label):
    value = _check_loss(loss, label)
    tape.backward(loss)
    names = UPDATE_GROUPS[group]
    updated, model.optimizers[group] = nets.optimizer_step(
        model.optimizers[group], [getattr(model, name) for name in names], bound.gradients())
    for name, params in zip(names, updated):
        setattr(model, name, params)
    return value


def make_batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = max(1, int(math.ceil(n / batch_size)))
    return [chunk for chunk in np.array_split(order, chunks) if chunk.size >= 2]


def _balanced_batch(dataset, index, rng):
    t = dataset.T
    for _ in range(MAX_BATCH_REDRAWS + 1):
        groups = t[index]
        if groups.min() == 0 and groups.max() == 1:
            return index
        index = rng.choice(len(t), size=index.size, replace=False)
    return None


def mi_step(model, X, rng):
    tape = ad.Tape()
    bound = model.bind(tape, UPDATE_GROUPS['mi'])
    h = encode(bound, X)
    return _update(model, 'mi', tape, bound, mi_loss(bound, X, h, rng.permutation(h.rows)), 'MI')


def discriminator_step(model, X, T, rng):
    tape = ad.Tape()
    bound = model.bind(tape, UPDATE_GROUPS['disc'])
    h = encode(bound, X)
    z = rng.standard_normal(h.shape)
    return _update(model, 'disc', tape, bound, discriminator_loss(bound, h, z, T, rng), 'discriminator')


def encoder_adversarial_step(model, X, T, rng):
    tape = ad.Tape()
    bound = model.bind(tape, UPDATE_GROUPS['adv'])
    h = encode(bound, X)
    z = rng.standard_normal(h.shape)
    return _update(model, 'adv', tape, bound, encoder_adversarial_loss(bound, h, z, T), 'encoder adversarial')


def outcome_step(model, X, T, Y):
    tape = ad.Tape()
    bound = model.bind(tape, UPDATE_GROUPS['pred'])
    h = encode(bound, X)
    return _update(model, 'pred', tape, bound, outcome_loss(bound, h, T, Y), 'outcome')


def train_epoch(model, dataset, rng, batches=None):
    """
    One pass over the training set. Per batch: MI update of (Φ, Ω), disc_steps
    updates of D, one adversarial update of Φ, one joint update of (Φ, Ψ).
    Returns the epoch-mean losses; skipped steps contribute 0.
    """
    config = model.config
    if batches is None:
        batches = make_batches(dataset.n, config.batch_size, rng)
    sums = {'l_mi': [], 'l_d': [], 'l_phi': [], 'l_pred': []}
    for index in batches:
        X, T, Y = dataset.X[index], dataset.T[index], dataset.YF[index]
        if config.use_mi:
            sums['l_mi'].append(mi_step(model, X, rng))
        if config.use_adversarial:
            adversarial_index = _balanced_batch(dataset, index, rng)
            if adversarial_index is None:
                logger.warning(f'  No balanced batch after {MAX_BATCH_REDRAWS} redraws, skipping adversarial steps')
            else:
                X_adv, T_adv = dataset.X[adversarial_index], dataset.T[adversarial_index]
                for _ in range(config.disc_steps):
                    sums['l_d'].append(discriminator_step(model, X_adv, T_adv, rng))
                sums['l_phi'].append(encoder_adversarial_step(model, X_adv, T_adv, rng))
        sums['l_pred'].append(outcome_step(model, X, T, Y))
    return {key: float(np.mean(values)) if values else 0.0 for key, values in sums.items()}


def fit(model, train, val, rng=None, on_epoch=None):
    """Train with early stopping on the validation monitor; restores the best epoch."""
    config = model.config
    rng = np.random.default_rng(config.seed) if rng is None else rng
    trace = TrainTrace()
    best_monitor, best_snapshot, wait = math.inf, model.snapshot(), 0
    for epoch in range(1, config.max_epochs + 1):
        losses = train_epoch(model, train, rng)
        val_mse = factual_mse(model, val)
        mi_estimate = estimate_mi(model, val.X, rng)
        record = EpochRecord(epoch=epoch, val_mse=val_mse, mi_estimate=mi_estimate, **losses)
        trace.append(record)
        logger.info(f'  epoch {epoch}: l_mi={record.l_mi:.4f} l_d={record.l_d:.4f} l_phi={record.l_phi:.4f} '
                    f'l_pred={record.l_pred:.4f} val_mse={val_mse:.4f} mi={mi_estimate:.4f}')
        if on_epoch is not None:
            on_epoch(model, record)

        monitor = val_mse
        if config.early_stop_metric == 'mse_plus_mi' and config.use_mi:
            monitor = val_mse - mi_estimate
        if monitor < best_monitor:
            best_monitor, best_snapshot, wait = monitor, model.snapshot(), 0
            trace.best_epoch = epoch
        else:
            wait += 1
            if wait >= config.patience:
                logger.info(f'  Early stop at epoch {epoch}, best epoch {trace.best_epoch}')
                trace.stopped_early = True
                break
    model.restore(best_snapshot)
    return trace


def balance_probe(h, T, seed=0, folds=5):
    """Cross-validated accuracy of a logistic probe predicting T from h; lower means better balance."""
    h = ad.as_matrix(h, 'h')
    t = np.asarray(T).astype(int).reshape(-1)
    if t.size != h.shape[0]:
        raise DimensionError(f'treatment vector has {t.size} entries for {h.shape[0]} rows')
    counts = np.bincount(t, minlength=2)
    if counts.size != 2 or counts.min() < 2:
        raise BalanceError(f'probe needs at least two units per group, got {counts.tolist()}')
    cv = StratifiedKFold(n_splits=min(folds, int(counts.min())), shuffle=True, random_state=seed)
    scores = cross_val_score(LogisticRegression(max_iter=1000), h, t, cv=cv, scoring='accuracy')
    return float(np.mean(scores))
