"""
Observational datasets: schema, CSV I/O, the 60/30/10 split protocol and the
simulated benchmarks.

CSV schema (header names are exact):

    x0,...,x{k-1},t,yf[,ycf][,mu0,mu1]

Lines starting with '#' are comments (used for reproducibility headers).
Covariates are standardized at split time with train statistics; treatment
and outcomes are never rescaled.
"""
import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
import pandas as pd
from pandas.errors import ParserError
from sklearn.preprocessing import StandardScaler

from .exceptions import BalanceError, ConfigError, DimensionError, DomainError, MetricUnavailableError, NumericError, SchemaError
from .utils import write_frame

logger = logging.getLogger('experiment_logger')

MAX_RESEEDS = 10
PSD_FLOOR = 0.1


@dataclass
class Dataset:
    X: np.ndarray
    T: np.ndarray
    YF: np.ndarray
    YCF: Optional[np.ndarray] = None
    MU0: Optional[np.ndarray] = None
    MU1: Optional[np.ndarray] = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise DimensionError(f'X must be 2-D, got shape {self.X.shape}')
        n = self.X.shape[0]
        self.T = np.asarray(self.T).reshape(-1)
        if self.T.size != n:
            raise DimensionError(f'T has {self.T.size} entries for {n} rows')
        if not np.isin(self.T, (0, 1)).all():
            raise SchemaError('t must be 0 or 1')
        self.T = self.T.astype(np.int64)
        for column in ('YF', 'YCF', 'MU0', 'MU1'):
            values = getattr(self, column)
            if values is None:
                continue
            values = np.asarray(values, dtype=np.float64).reshape(-1)
            if values.size != n:
                raise DimensionError(f'{column} has {values.size} entries for {n} rows')
            setattr(self, column, values)
        if (self.MU0 is None) != (self.MU1 is None):
            raise SchemaError('mu0 and mu1 must be both present or both absent')
        for column in ('X', 'YF', 'YCF', 'MU0', 'MU1'):
            values = getattr(self, column)
            if values is not None and not np.all(np.isfinite(values)):
                raise SchemaError(f'{column} contains NaN or infinite values')

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def k(self):
        return self.X.shape[1]

    @property
    def has_counterfactuals(self):
        return self.YCF is not None

    @property
    def has_means(self):
        return self.MU0 is not None

    def require_both_groups(self):
        if self.n == 0 or self.T.min() == self.T.max():
            raise BalanceError('dataset needs both treated and control units')
        return self

    def tau_true(self):
        if not self.has_means:
            raise MetricUnavailableError('true CATE needs mu0 and mu1 columns')
        return self.MU1 - self.MU0

    def potential_outcomes(self):
        if not self.has_counterfactuals:
            raise MetricUnavailableError('potential outcomes need the ycf column')
        y0 = np.where(self.T == 1, self.YCF, self.YF)
        y1 = np.where(self.T == 1, self.YF, self.YCF)
        return y0, y1

    def subset(self, index):
        index = np.asarray(index)
        pick = lambda values: None if values is None else values[index]
        return Dataset(self.X[index], self.T[index], self.YF[index],
                       pick(self.YCF), pick(self.MU0), pick(self.MU1))

    def with_covariates(self, X):
        return replace(self, X=X)

    def to_frame(self):
        frame = pd.DataFrame(self.X, columns=[f'x{i}' for i in range(self.k)])
        frame['t'] = self.T
        frame['yf'] = self.YF
        if self.YCF is not None:
            frame['ycf'] = self.YCF
        if self.MU0 is not None:
            frame['mu0'] = self.MU0
            frame['mu1'] = self.MU1
        return frame


def write_csv(dataset, path, header_lines=()):
    return write_frame(path, dataset.to_frame(), header_lines)


def _check_header(columns):
    covariates = [c for c in columns if c.startswith('x')]
    if not covariates or covariates != [f'x{i}' for i in range(len(covariates))]:
        raise SchemaError(f'header must start with x0..x{{k-1}}, got {list(columns)}')
    rest = list(columns[len(covariates):])
    if rest[:2] != ['t', 'yf']:
        raise SchemaError(f'expected t,yf after the covariates, got {rest[:2]}')
    optional = rest[2:]
    allowed = [c for c in ('ycf', 'mu0', 'mu1') if c in optional]
    if optional != allowed:
        raise SchemaError(f'unexpected or misordered optional columns {optional}')
    return len(covariates), optional


def load_csv(path):
    try:
        frame = pd.read_csv(path, comment='#', dtype=str, keep_default_na=False, skipinitialspace=True)
    except ParserError as e:
        raise SchemaError(f'ragged rows in {path}: {e}')
    except (OSError, pd.errors.EmptyDataError) as e:
        raise SchemaError(f'cannot read {path}: {e}')
    k, optional = _check_header([c.strip() for c in frame.columns])
    frame.columns = [c.strip() for c in frame.columns]

    numeric = frame.apply(pd.to_numeric, errors='coerce')
    bad = numeric.isna() | ~np.isfinite(numeric.to_numpy(dtype=np.float64, na_value=np.nan))
    if bad.to_numpy().any():
        row, column = np.argwhere(bad.to_numpy())[0]
        raise SchemaError(f'missing or non-numeric value in column {frame.columns[column]!r}', row=int(row) + 1)
    bad_t = ~numeric['t'].isin([0, 1])
    if bad_t.any():
        raise SchemaError('t must be 0 or 1', row=int(np.flatnonzero(bad_t.to_numpy())[0]) + 1)

    get = lambda name: numeric[name].to_numpy(dtype=np.float64) if name in optional else None
    dataset = Dataset(
        X=numeric[[f'x{i}' for i in range(k)]].to_numpy(dtype=np.float64),
        T=numeric['t'].to_numpy().astype(np.int64),
        YF=numeric['yf'].to_numpy(dtype=np.float64),
        YCF=get('ycf'), MU0=get('mu0'), MU1=get('mu1'),
    )
    try:
        dataset.require_both_groups()
    except BalanceError:
        raise SchemaError(f'{path} contains a single treatment group')
    logger.info(f'Loaded {dataset.n} units with {dataset.k} covariates from {path}')
    return dataset


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.3
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0:
            raise DomainError('split fractions must be positive')
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise DomainError('split fractions must sum to 1')


@dataclass
class SplitResult:
    train: Dataset
    val: Dataset
    test: Dataset
    indices: dict = field(default_factory=dict)
    scaler: Optional[StandardScaler] = None
    seed: int = 0

    def __iter__(self):
        return iter((self.train, self.val, self.test))


def split(dataset, spec=None):
    """Shuffled disjoint train/val/test partition; covariates standardized on train."""
    spec = spec or SplitSpec()
    n = dataset.n
    if n < 10:
        raise DomainError(f'split needs at least 10 units, got {n}')
    n_train = int(round(spec.train * n))
    n_val = int(round(spec.val * n))
    if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
        raise DomainError(f'fractions leave an empty split for {n} units')

    for attempt in range(MAX_RESEEDS):
        seed = spec.seed + attempt
        order = np.random.default_rng(seed).permutation(n)
        train_idx, val_idx, test_idx = order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]
        if dataset.T[train_idx].min() != dataset.T[train_idx].max():
            break
        logger.warning(f'  Train split with seed {seed} has a single treatment group, resplitting')
    else:
        raise BalanceError(f'no balanced train split after {MAX_RESEEDS} seeds')

    scaler = StandardScaler().fit(dataset.X[train_idx])
    parts = {}
    for name, index in (('train', train_idx), ('val', val_idx), ('test', test_idx)):
        part = dataset.subset(index)
        parts[name] = part.with_covariates(scaler.transform(part.X))
    indices = {'train': train_idx, 'val': val_idx, 'test': test_idx}
    return SplitResult(indices=indices, scaler=scaler, seed=seed, **parts)


def shared_covariance(k, rng, floor=PSD_FLOOR):
    """
    0.5·(Σ + Σᵀ) with Σ ~ U((−1, 1)^{k×k}), redrawn until its smallest
    eigenvalue reaches `floor`. If no draw does, the last one is shifted by
    (floor − λ_min)·I so the smallest eigenvalue equals `floor`.
    """
    for _ in range(MAX_RESEEDS):
        sigma = rng.uniform(-1.0, 1.0, size=(k, k))
        covariance = 0.5 * (sigma + sigma.T)
        smallest = np.linalg.eigvalsh(covariance).min()
        if smallest >= floor:
            return covariance
    logger.info(f'  Covariance not PSD after {MAX_RESEEDS} draws (min eigenvalue {smallest:.4f}), '
                f'shifting the diagonal by {floor - smallest:.4f}')
    return covariance + (floor - smallest) * np.eye(k)


def gaussian_kl(mu0, mu1, covariance):
    """KL between N(μ₁, C) and N(μ₀, C): ½ (μ₁ − μ₀)ᵀ C⁻¹ (μ₁ − μ₀)."""
    delta = np.atleast_1d(np.asarray(mu1, dtype=np.float64) - np.asarray(mu0, dtype=np.float64))
    covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
    if covariance.shape != (delta.size, delta.size):
        raise DimensionError(f'covariance {covariance.shape} does not match mean length {delta.size}')
    try:
        if np.linalg.cond(covariance) > 1.0 / np.finfo(np.float64).eps:
            raise np.linalg.LinAlgError('covariance is numerically singular')
        solved = np.linalg.solve(covariance, delta)
    except np.linalg.LinAlgError as e:
        raise NumericError(f'cannot invert covariance: {e}')
    return float(max(0.5 * delta @ solved, 0.0))


def offset_for_kl(target, covariance, direction=None):
    """Scalar c such that μ₁ = μ₀ + c·direction gives KL equal to `target`."""
    if target < 0:
        raise DomainError('KL target must be >= 0')
    covariance = np.atleast_2d(covariance)
    direction = np.ones(covariance.shape[0]) if direction is None else np.asarray(direction, dtype=np.float64)
    unit_kl = gaussian_kl(np.zeros_like(direction), direction, covariance)
    if unit_kl == 0:
        raise NumericError('direction has zero KL')
    return math.sqrt(target / unit_kl)


@dataclass(frozen=True)
class ToyBiasSpec:
    n_control: int = 800
    n_treated: int = 200
    k: int = 10
    mu0: Optional[tuple] = None
    mu1: Optional[tuple] = None
    mu_offset: float = 0.0
    kl_target: Optional[float] = None
    noise_var: float = 0.1
    nonlinear: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_control < 1 or self.n_treated < 1 or self.k < 1:
            raise DomainError('toy generator needs positive group sizes and k')
        if self.kl_target is not None and self.kl_target < 0:
            raise DomainError('KL target must be >= 0')
        for name in ('mu0', 'mu1'):
            value = getattr(self, name)
            if value is not None:
                value = tuple(float(v) for v in value)
                if len(value) != self.k:
                    raise DimensionError(f'{name} has {len(value)} entries, expected {self.k}')
                object.__setattr__(self, name, value)

    @classmethod
    def full_scale(cls, **overrides):
        return cls(**{'n_control': 8000, 'n_treated': 2000, **overrides})


@dataclass
class ToyDesign:
    covariance: np.ndarray
    weights: np.ndarray
    mu0: np.ndarray
    mu1: np.ndarray
    rng: np.random.Generator

    @property
    def kl(self):
        return gaussian_kl(self.mu0, self.mu1, self.covariance)


def toy_bias_design(spec):
    rng = np.random.default_rng(spec.seed)
    covariance = shared_covariance(spec.k, rng)
    weights = rng.uniform(-1.0, 1.0, size=(spec.k, 2))
    mu0 = np.zeros(spec.k) if spec.mu0 is None else np.asarray(spec.mu0)
    if spec.mu1 is not None:
        mu1 = np.asarray(spec.mu1)
    else:
        offset = spec.mu_offset
        if spec.kl_target is not None:
            offset = offset_for_kl(spec.kl_target, covariance)
        mu1 = mu0 + offset
    return ToyDesign(covariance, weights, mu0, mu1, rng)


def gen_toy_bias(spec):
    design = toy_bias_design(spec)
    rng = design.rng
    X = np.vstack([
        rng.multivariate_normal(design.mu0, design.covariance, size=spec.n_control),
        rng.multivariate_normal(design.mu1, design.covariance, size=spec.n_treated),
    ])
    T = np.concatenate([np.zeros(spec.n_control, dtype=np.int64), np.ones(spec.n_treated, dtype=np.int64)])
    means = X @ design.weights
    if spec.nonlinear:
        means = means + np.sin(means)
    outcomes = means + rng.normal(0.0, math.sqrt(spec.noise_var), size=means.shape)
    order = rng.permutation(T.size)
    X, T, means, outcomes = X[order], T[order], means[order], outcomes[order]
    dataset = Dataset(
        X=X, T=T,
        YF=np.where(T == 1, outcomes[:, 1], outcomes[:, 0]),
        YCF=np.where(T == 1, outcomes[:, 0], outcomes[:, 1]),
        MU0=means[:, 0], MU1=means[:, 1],
    )
    logger.debug(f'Toy bias dataset: {spec.n_control} control, {spec.n_treated} treated, KL {design.kl:.4f}')
    return dataset


def gen_covariates(n, k, seed=0):
    return np.random.default_rng(seed).standard_normal((n, k))


def _sigmoid(values):
    return 1.0 / (1.0 + np.exp(-values))


def gen_assignment_bernoulli(X, w_scale=0.1, n_mean=1.0, n_sd=0.1, seed=0, w=None):
    """t | x ~ Bernoulli(σ(wᵀx + n)), w ~ N(0, w_scale·I), n ~ N(n_mean, n_sd²) per unit."""
    X = np.asarray(X, dtype=np.float64)
    n, k = X.shape
    for attempt in range(MAX_RESEEDS + 1):
        rng = np.random.default_rng(seed + attempt)
        weights = rng.normal(0.0, math.sqrt(w_scale), size=k) if w is None else np.asarray(w, dtype=np.float64)
        noise = rng.normal(n_mean, n_sd, size=n)
        T = (rng.uniform(size=n) < _sigmoid(X @ weights + noise)).astype(np.int64)
        if 0 < T.sum() < n:
            return T
        logger.warning(f'  Degenerate assignment with seed {seed + attempt}, reseeding')
    raise BalanceError(f'assignment stayed single-group after {MAX_RESEEDS} reseeds')


def apply_assignment(dataset, T):
    """Re-select factual outcomes from a dataset observing both potential outcomes."""
    y0, y1 = dataset.potential_outcomes()
    T = np.asarray(T).astype(np.int64).reshape(-1)
    return Dataset(dataset.X, T, np.where(T == 1, y1, y0), np.where(T == 1, y0, y1), dataset.MU0, dataset.MU1)


def gen_linear_outcomes(X, beta_effect, seed=0, noise_sd=1.0, s_scale=0.1, m_var=0.1):
    """
    y | x, t = wᵀx + β·t + n with w ~ N(0, 0.5·(Σ + Σᵀ)), n ~ N(0, noise_sd²);
    t | x ~ Bernoulli(σ(sᵀx + m)), s ~ N(0, s_scale·I), m ~ N(0, m_var).
    """
    X = np.asarray(X, dtype=np.float64)
    n, k = X.shape
    rng = np.random.default_rng(seed)
    w = rng.multivariate_normal(np.zeros(k), shared_covariance(k, rng))
    s = rng.normal(0.0, math.sqrt(s_scale), size=k)
    m = rng.normal(0.0, math.sqrt(m_var))
    probability = _sigmoid(X @ s + m)
    for _ in range(MAX_RESEEDS + 1):
        T = (rng.uniform(size=n) < probability).astype(np.int64)
        if 0 < T.sum() < n:
            break
    else:
        raise BalanceError('linear-outcome assignment stayed single-group')
    mu0 = X @ w
    mu1 = mu0 + beta_effect
    YF = np.where(T == 1, mu1, mu0) + noise_sd * rng.standard_normal(n)
    YCF = np.where(T == 1, mu0, mu1) + noise_sd * rng.standard_normal(n)
    return Dataset(X, T, YF, YCF, mu0, mu1)


GENERATORS = ('toy_bias', 'linear_outcomes', 'csv')
ASSIGNMENTS = (None, 'bernoulli')

# Settings a source block may carry besides `generator`.
SOURCE_KEYS = {
    'toy_bias': {f.name for f in fields(ToyBiasSpec)} - {'seed'} | {'full_scale'},
    'linear_outcomes': {'n', 'k', 'beta_effect', 'assignment', 'noise_sd', 's_scale', 'm_var'},
    'csv': {'path', 'assignment'},
}


def check_source(source):
    """Raise ConfigError unless `source` names a known generator with settings it accepts."""
    if not isinstance(source, dict):
        raise ConfigError(f'source must be a JSON object, got {source!r}')
    kind = source.get('generator', 'toy_bias')
    if kind not in GENERATORS:
        raise ConfigError(f'unknown generator {kind!r}, choose from {", ".join(GENERATORS)}')
    params = {key: value for key, value in source.items() if key != 'generator'}
    unknown = set(params) - SOURCE_KEYS[kind]
    if unknown:
        raise ConfigError(f'unknown {kind} source settings: {", ".join(sorted(unknown))}; '
                          f'allowed: {", ".join(sorted(SOURCE_KEYS[kind]))}')
    if params.get('assignment') not in ASSIGNMENTS:
        raise ConfigError(f'unknown assignment {params["assignment"]!r}, only bernoulli is supported')
    if kind == 'csv' and not params.get('path'):
        raise ConfigError('csv source needs a path')
    if kind == 'linear_outcomes':
        try:
            n, k = int(params.get('n', 2000)), int(params.get('k', 25))
            float(params.get('beta_effect', 2.0))
        except (TypeError, ValueError) as e:
            raise ConfigError(f'invalid linear_outcomes source: {e}')
        if n < 1 or k < 1:
            raise ConfigError('linear_outcomes needs positive n and k')
    if kind == 'toy_bias':
        params.pop('full_scale', None)
        try:
            ToyBiasSpec(**params)
        except (DomainError, DimensionError, TypeError, ValueError) as e:
            raise ConfigError(f'invalid toy_bias source: {e}')
    return source


def build_dataset(source, seed=0):
    """Dataset from a source block of an experiment config."""
    kind = source.get('generator', 'toy_bias')
    params = {key: value for key, value in source.items() if key not in ('generator', 'full_scale')}
    if kind == 'toy_bias':
        if source.get('full_scale'):
            return gen_toy_bias(ToyBiasSpec.full_scale(seed=seed, **params))
        return gen_toy_bias(ToyBiasSpec(seed=seed, **params))
    if kind == 'linear_outcomes':
        X = gen_covariates(int(params.pop('n', 2000)), int(params.pop('k', 25)), seed=seed)
        beta_effect = float(params.pop('beta_effect', 2.0))
        assignment = params.pop('assignment', None)
        dataset = gen_linear_outcomes(X, beta_effect, seed=seed, **params)
        if assignment == 'bernoulli':
            dataset = apply_assignment(dataset, gen_assignment_bernoulli(dataset.X, seed=seed))
        return dataset
    if kind == 'csv':
        dataset = load_csv(params['path'])
        if params.get('assignment') == 'bernoulli':
            standardized = StandardScaler().fit_transform(dataset.X)
            dataset = apply_assignment(dataset, gen_assignment_bernoulli(standardized, seed=seed))
        return dataset
    raise SchemaError(f'unknown generator {kind!r}, choose from {", ".join(GENERATORS)}')
