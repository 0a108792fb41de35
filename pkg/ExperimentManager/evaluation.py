"""
CATE metrics and classical baselines.

in-sample = train + validation units, out-sample = test units.
"""
import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from sklearn.metrics import roc_auc_score
from sklearn.neighbors import NearestNeighbors

from .exceptions import BalanceError, DimensionError, DomainError, MetricUnavailableError

logger = logging.getLogger('experiment_logger')

RIDGE = 1e-8
SPLIT_TAGS = ('in', 'out')


@dataclass
class MetricsReport:
    sqrt_pehe: Optional[float] = None
    ate_error: Optional[float] = None
    att_error: Optional[float] = None
    policy_risk: Optional[float] = None
    auc: Optional[float] = None
    split: str = 'in'

    def __post_init__(self):
        if self.split not in SPLIT_TAGS:
            raise DomainError(f'split tag must be one of {SPLIT_TAGS}, got {self.split!r}')
        if self.sqrt_pehe is not None and self.sqrt_pehe < 0:
            raise DomainError('sqrt_pehe must be >= 0')
        if self.auc is not None and not 0.0 <= self.auc <= 1.0:
            raise DomainError('auc must lie in [0, 1]')

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def metrics(self):
        return {key: value for key, value in self.to_dict().items() if key != 'split' and value is not None}


def _vectors(tau_true, tau_hat):
    tau_true = np.asarray(tau_true, dtype=np.float64).reshape(-1)
    tau_hat = np.asarray(tau_hat, dtype=np.float64).reshape(-1)
    if tau_true.size != tau_hat.size:
        raise DimensionError(f'effect vectors differ in length: {tau_true.size} vs {tau_hat.size}')
    if tau_true.size == 0:
        raise DomainError('effect vectors are empty')
    return tau_true, tau_hat


def pehe(tau_true, tau_hat):
    """Square root of the mean squared CATE error."""
    if tau_true is None:
        raise MetricUnavailableError('PEHE needs the true CATE (mu0/mu1 columns)')
    tau_true, tau_hat = _vectors(tau_true, tau_hat)
    return float(np.sqrt(np.mean((tau_true - tau_hat) ** 2)))


def ate_error(tau_true, tau_hat):
    if tau_true is None:
        raise MetricUnavailableError('ATE error needs the true CATE (mu0/mu1 columns)')
    tau_true, tau_hat = _vectors(tau_true, tau_hat)
    return float(abs(np.mean(tau_true) - np.mean(tau_hat)))


def att_error(dataset, tau_hat, att_true=None):
    treated = dataset.T == 1
    if not treated.any():
        raise BalanceError('ATT needs at least one treated unit')
    tau_hat = np.asarray(tau_hat, dtype=np.float64).reshape(-1)
    if tau_hat.size != dataset.n:
        raise DimensionError(f'{tau_hat.size} estimates for {dataset.n} units')
    if att_true is None:
        att_true = float(np.mean(dataset.tau_true()[treated]))
    return float(abs(att_true - np.mean(tau_hat[treated])))


def policy_risk(dataset, tau_hat, mask=None):
    """
    1 − [E(y₁ | π = 1)·P(π = 1) + E(y₀ | π = 0)·P(π = 0)] for the policy π = 1[τ̂ > 0].

    `mask` restricts the evaluation to a subset of units (e.g. a randomized
    component). An empty recommendation cell contributes 0.
    """
    y0, y1 = dataset.potential_outcomes()
    tau_hat = np.asarray(tau_hat, dtype=np.float64).reshape(-1)
    if tau_hat.size != dataset.n:
        raise DimensionError(f'{tau_hat.size} estimates for {dataset.n} units')
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        y0, y1, tau_hat = y0[mask], y1[mask], tau_hat[mask]
    if tau_hat.size == 0:
        raise DomainError('policy risk over an empty set of units')
    treat = tau_hat > 0
    p_treat = float(np.mean(treat))
    treat_value = float(np.mean(y1[treat])) if treat.any() else 0.0
    control_value = float(np.mean(y0[~treat])) if (~treat).any() else 0.0
    return 1.0 - (treat_value * p_treat + control_value * (1.0 - p_treat))


def auc(scores, labels):
    """ROC AUC in Mann-Whitney form; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.size != labels.size:
        raise DimensionError(f'{scores.size} scores for {labels.size} labels')
    if np.unique(labels).size != 2:
        raise MetricUnavailableError('AUC needs both label classes')
    return float(roc_auc_score(labels, scores))


def _is_binary(values):
    return values is not None and np.isin(values, (0.0, 1.0)).all()


def evaluate_estimate(dataset, tau_hat, split='in', outcomes=None, att_true=None, policy_mask=None):
    """MetricsReport with every metric the dataset supports."""
    report = {'split': split}
    if dataset.has_means:
        tau_true = dataset.tau_true()
        report['sqrt_pehe'] = pehe(tau_true, tau_hat)
        report['ate_error'] = ate_error(tau_true, tau_hat)
    if (dataset.T == 1).any() and (dataset.has_means or att_true is not None):
        report['att_error'] = att_error(dataset, tau_hat, att_true)
    if dataset.has_counterfactuals:
        y0, y1 = dataset.potential_outcomes()
        if _is_binary(y0) and _is_binary(y1):
            report['policy_risk'] = policy_risk(dataset, tau_hat, policy_mask)
            if outcomes is not None:
                labels = np.concatenate([y0, y1])
                if np.unique(labels).size == 2:
                    report['auc'] = auc(np.concatenate(outcomes), labels)
    return MetricsReport(**report)


def _solve_least_squares(design, y):
    """Normal equations with a 1e-8 ridge fallback for rank-deficient designs."""
    gram = design.T @ design
    moment = design.T @ y
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        logger.debug('  Rank-deficient design, adding ridge')
        gram = gram + RIDGE * np.eye(gram.shape[0])
    try:
        return np.linalg.solve(gram, moment)
    except np.linalg.LinAlgError:
        return np.linalg.solve(gram + RIDGE * np.eye(gram.shape[0]), moment)


def _with_intercept(X):
    return np.hstack([X, np.ones((X.shape[0], 1))])


@dataclass
class LinearFit:
    coef0: np.ndarray
    coef1: np.ndarray

    def predict_outcomes(self, X):
        design = _with_intercept(np.asarray(X, dtype=np.float64))
        return design @ self.coef0, design @ self.coef1

    def predict_cate(self, X):
        y0, y1 = self.predict_outcomes(X)
        return y1 - y0


def fit_lr1(dataset):
    """Single regression on [X, t, 1]; the treatment coefficient is the effect."""
    n, k = dataset.X.shape
    if n < k + 2:
        raise DomainError(f'OLS/LR1 is underdetermined with {n} units and {k} covariates')
    design = np.hstack([dataset.X, dataset.T.reshape(-1, 1).astype(np.float64), np.ones((n, 1))])
    coef = _solve_least_squares(design, dataset.YF)
    coef0 = np.concatenate([coef[:k], coef[k + 1:]])
    coef1 = coef0.copy()
    coef1[-1] += coef[k]
    return LinearFit(coef0, coef1)


def fit_lr2(dataset):
    """Separate regressions per treatment arm."""
    coefs = []
    for group in (0, 1):
        members = dataset.T == group
        if not members.any():
            raise BalanceError(f'OLS/LR2 needs units in group {group}')
        coefs.append(_solve_least_squares(_with_intercept(dataset.X[members]), dataset.YF[members]))
    return LinearFit(*coefs)


def ols_lr1(dataset, X=None):
    fit = fit_lr1(dataset)
    return fit.predict_cate(dataset.X if X is None else X)


def ols_lr2(dataset, X=None):
    fit = fit_lr2(dataset)
    return fit.predict_cate(dataset.X if X is None else X)


def knn_cate(dataset, k_neighbors=1, X=None):
    """
    k-NN matching. On the dataset's own units, τ̂ = y − mean of the k nearest
    opposite-group outcomes (sign flipped for controls). For new rows X,
    τ̂ = mean of k nearest treated outcomes − mean of k nearest control outcomes.
    """
    if k_neighbors < 1:
        raise DomainError('k_neighbors must be >= 1')
    groups = {}
    for group in (0, 1):
        members = np.flatnonzero(dataset.T == group)
        if members.size < k_neighbors:
            raise DomainError(f'k_neighbors={k_neighbors} exceeds the {members.size} units of group {group}')
        index = NearestNeighbors(n_neighbors=k_neighbors, metric='euclidean').fit(dataset.X[members])
        groups[group] = (index, dataset.YF[members])

    def neighbour_mean(group, rows):
        index, outcomes = groups[group]
        _, found = index.kneighbors(rows)
        return outcomes[found].mean(axis=1)

    if X is not None:
        X = np.asarray(X, dtype=np.float64)
        return neighbour_mean(1, X) - neighbour_mean(0, X)

    tau = np.empty(dataset.n)
    treated = dataset.T == 1
    if treated.any():
        tau[treated] = dataset.YF[treated] - neighbour_mean(0, dataset.X[treated])
    if (~treated).any():
        tau[~treated] = neighbour_mean(1, dataset.X[~treated]) - dataset.YF[~treated]
    return tau


BASELINES = ('ols_lr1', 'ols_lr2', 'knn')
