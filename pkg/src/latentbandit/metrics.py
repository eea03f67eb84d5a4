"""Evaluation metrics: MCC, reward R2, regret aggregation, regret bound.

MCC comes in two alignments. ``mcc_perm`` pairs estimated and true latent
coordinates by the absolute-Pearson-maximizing assignment (Hungarian method)
and averages the matched |corr|; it is invariant to permutation, sign flip
and per-coordinate scaling. ``mcc_affine`` first fits the best affine map
from estimates to truth and averages per-coordinate sqrt(R2); it is
additionally invariant to any invertible affine transform of the estimates,
which is the exact indeterminacy class of the latent recovery guarantee.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from latentbandit.errors import ConfigError, NumericalError


class NoiselessBoundWarning(UserWarning):
    """Raised when the regret bound is evaluated at sigma = 0."""


@dataclass
class MccReport:
    corr: np.ndarray  # (d, d) absolute correlations, [i, j] = |corr(est_i, true_j)|
    assignment: tuple  # assignment[i] = true coordinate matched to estimate i
    mcc_perm: float
    mcc_affine: float
    flagged: tuple = ()  # coordinates with zero variance


@dataclass
class RegretSummary:
    """Pointwise mean and standard error across instances, per algorithm."""

    horizon: int
    n_instances: dict  # algorithm -> count
    simple_mean: dict  # algorithm -> (T,)
    simple_se: dict
    cum_mean: dict
    cum_se: dict

    @property
    def algorithms(self):
        return sorted(self.simple_mean)


@dataclass
class BoundParams:
    delta_min: float  # minimal expected-reward gap
    delta_max: float  # maximal expected-reward gap
    n_arms: int
    sigma: float

    def __post_init__(self):
        if not 0 < self.delta_min <= self.delta_max:
            raise ConfigError("need 0 < delta_min <= delta_max")
        if self.n_arms < 2:
            raise ConfigError("need at least 2 arms")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")


# ---------------------------------------------------------------------------


def _abs_corr_matrix(est, true):
    est = np.asarray(est, dtype=float)
    true = np.asarray(true, dtype=float)
    e = est - est.mean(axis=0)
    t = true - true.mean(axis=0)
    e_sd = e.std(axis=0)
    t_sd = t.std(axis=0)
    flagged = tuple(np.nonzero((e_sd == 0) | (t_sd == 0))[0].tolist())
    e_sd = np.where(e_sd == 0, 1.0, e_sd)
    t_sd = np.where(t_sd == 0, 1.0, t_sd)
    corr = (e / e_sd).T @ (t / t_sd) / est.shape[0]
    corr = np.abs(corr)
    for i in flagged:
        corr[i, :] = 0.0
        corr[:, i] = 0.0
    return corr, flagged


def mcc(true_latents, estimated_latents):
    """Recovery score between true and estimated latent coordinates."""
    true = np.asarray(true_latents, dtype=float)
    est = np.asarray(estimated_latents, dtype=float)
    if true.shape != est.shape:
        raise ConfigError("true and estimated latents must have matching shapes")
    if true.ndim != 2 or true.shape[1] < 1:
        raise ConfigError("latents must be (samples, d) with d >= 1")
    corr, flagged = _abs_corr_matrix(est, true)
    rows, cols = linear_sum_assignment(-corr)
    order = np.argsort(rows)
    assignment = tuple(int(c) for c in cols[order])
    mcc_perm = float(corr[rows, cols].mean())
    mcc_affine = _affine_alignment_score(est, true)
    return MccReport(corr, assignment, mcc_perm, mcc_affine, flagged)


def _affine_alignment_score(est, true):
    design = np.hstack([est, np.ones((est.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(design, true, rcond=None)
    pred = design @ coef
    ss_res = np.sum((true - pred) ** 2, axis=0)
    ss_tot = np.sum((true - true.mean(axis=0)) ** 2, axis=0)
    scores = np.zeros(true.shape[1])
    ok = ss_tot > 0
    scores[ok] = np.sqrt(np.clip(1.0 - ss_res[ok] / ss_tot[ok], 0.0, 1.0))
    return float(scores.mean())


def r2(true_values, predicted_values):
    """1 - SS_res / SS_tot; undefined (error) for constant truth."""
    true = np.asarray(true_values, dtype=float).ravel()
    pred = np.asarray(predicted_values, dtype=float).ravel()
    if true.size != pred.size:
        raise ConfigError("true and predicted values must have equal length")
    if true.size < 2:
        raise ConfigError("need at least 2 samples")
    ss_tot = float(np.sum((true - true.mean()) ** 2))
    if ss_tot == 0.0:
        raise NumericalError("R^2 undefined for constant truth")
    ss_res = float(np.sum((true - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def aggregate_regret(traces):
    """Mean +/- standard error across instances, grouped by algorithm."""
    if not traces:
        raise ConfigError("no traces to aggregate")
    horizon = len(traces[0].inst_regret)
    by_algo = {}
    for trace in traces:
        if len(trace.inst_regret) != horizon:
            raise ConfigError("traces have mismatched horizons")
        by_algo.setdefault(trace.algorithm, []).append(trace)
    summary = RegretSummary(horizon, {}, {}, {}, {}, {})
    for algo, group in by_algo.items():
        simple = np.stack([t.inst_regret for t in group])
        cum = np.stack([t.cum_regret for t in group])
        n = simple.shape[0]
        summary.n_instances[algo] = n
        summary.simple_mean[algo] = simple.mean(axis=0)
        summary.cum_mean[algo] = cum.mean(axis=0)
        if n > 1:
            summary.simple_se[algo] = simple.std(axis=0, ddof=1) / np.sqrt(n)
            summary.cum_se[algo] = cum.std(axis=0, ddof=1) / np.sqrt(n)
        else:
            summary.simple_se[algo] = np.zeros(horizon)
            summary.cum_se[algo] = np.zeros(horizon)
    return summary


def greedy1_regret_bound(params: BoundParams):
    """Closed-form constant bound 2*K*delta_max / (exp(delta_min^2/(4 sigma^2)) - 1)."""
    if params.sigma == 0.0:
        warnings.warn(
            "regret bound evaluated at sigma = 0 (noiseless limit): bound is 0",
            NoiselessBoundWarning,
        )
        return 0.0
    with np.errstate(over="ignore"):
        denom = np.expm1(params.delta_min**2 / (4.0 * params.sigma**2))
    if np.isinf(denom):
        return 0.0
    return float(2.0 * params.n_arms * params.delta_max / denom)
