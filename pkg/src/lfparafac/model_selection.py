"""Gaussian log-likelihood, likelihood cross-validation and AIC over the rank."""
import csv
import json
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np
import scipy.linalg
from sklearn.model_selection import KFold

from .covariance import assemble
from .exceptions import ConfigError, InsufficientDataError, NumericalError
from .inference import _residual, design_matrix
from .lf_parafac import fit_lf_parafac

FIT_KEYS = ("grid_size", "bandwidth_mean", "bandwidth_cov", "min_pairs", "psd", "epsilon", "max_iter",
            "n_restarts", "seed")


@dataclass
class RankScore:
    R: int
    value: float
    folds: List[float] = field(default_factory=list)
    wall_time: float = 0.0


def sample_log_likelihood(model, sample):
    """``-½ rᵀ Σ_y⁻¹ r - ½ log|Σ_y|`` on the observed rows of one sample (no 2π term)."""
    r, obs = _residual(model, sample)
    r = r[obs]
    if r.size == 0:
        return 0.0
    F = design_matrix(model, sample.times)[obs]
    S = F @ model.lam @ F.T + float(model.sigma2) * np.eye(r.size)
    S = 0.5 * (S + S.T)
    try:
        c = scipy.linalg.cho_factor(S, lower=True)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        tr = np.trace(S)
        try:
            c = scipy.linalg.cho_factor(S + 1e-10 * max(tr, 1e-300) / r.size * np.eye(r.size), lower=True)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            raise NumericalError(f"covariance of sample {sample.sample_id!r} is not positive definite") from None
    quad = float(r @ scipy.linalg.cho_solve(c, r))
    logdet = 2.0 * float(np.sum(np.log(np.diag(c[0]))))
    return -0.5 * quad - 0.5 * logdet


def log_likelihood(model, dataset):
    """Sum of per-sample log-likelihoods under ``Σ_y = F Λ Fᵀ + σ² I``."""
    return float(sum(sample_log_likelihood(model, s) for s in dataset.samples))


def _split_params(params):
    params = dict(params or {})
    unknown = set(params) - set(FIT_KEYS)
    if unknown:
        raise ConfigError(f"unknown fit options: {sorted(unknown)}")
    cov_kw = {k: params[k] for k in ("grid_size", "bandwidth_mean", "bandwidth_cov", "min_pairs", "psd") if k in params}
    fit_kw = {k: params[k] for k in ("epsilon", "max_iter", "n_restarts", "seed") if k in params}
    return cov_kw, fit_kw


def _check_ranks(ranks):
    ranks = [int(r) for r in ranks]
    if not ranks or min(ranks) < 1:
        raise ConfigError("rank candidates must be positive integers")
    return ranks


def select_rank_lcv(dataset, ranks, folds=5, seed=0, params=None, cv=None):
    """K-fold likelihood cross-validation over sample splits.

    For every fold the covariance is re-estimated on the training samples,
    each candidate rank is fitted, and the log-likelihood of the held-out
    samples is recorded.  The criterion is the mean over folds.

    ``cv`` may give explicit ``(train, test)`` index pairs; it overrides
    ``folds`` and ``seed``.

    Returns
    -------
    scores : list of RankScore
    best : int
        Candidate with the largest criterion.
    """
    ranks = _check_ranks(ranks)
    n = len(dataset)
    if cv is None:
        if folds < 2:
            raise ConfigError("need at least two folds")
        if n // folds < 2:
            raise InsufficientDataError(f"{n} samples cannot fill {folds} folds of at least 2 samples")
        cv = list(KFold(n_splits=folds, shuffle=True, random_state=seed).split(np.arange(n)))
    else:
        cv = [(np.asarray(tr), np.asarray(te)) for tr, te in cv]
        if len(cv) < 1 or min(min(len(tr), len(te)) for tr, te in cv) < 2:
            raise InsufficientDataError("every fold needs at least 2 training and 2 test samples")
    cov_kw, fit_kw = _split_params(params)
    per_rank = {R: [] for R in ranks}
    times = {R: 0.0 for R in ranks}
    for train, test in cv:
        tr, te = dataset.subset(train), dataset.subset(test)
        cov = assemble(tr, **cov_kw)
        for R in ranks:
            t0 = time.perf_counter()
            model, _ = fit_lf_parafac(cov, R, dataset=tr, **fit_kw)
            per_rank[R].append(log_likelihood(model, te))
            times[R] += time.perf_counter() - t0
    scores = [RankScore(R, float(np.mean(per_rank[R])), per_rank[R], times[R]) for R in ranks]
    best = max(scores, key=lambda s: s.value).R
    return scores, best


def n_parameters(rank, shape):
    """Free parameters of ``Λ`` and the unit-norm factor columns (``Φ`` excluded)."""
    return rank * (rank + 1) // 2 + rank * sum(p - 1 for p in shape)


def select_rank_aic(dataset, ranks, params=None, penalty="rank", cov=None):
    """``AIC(R) = R - L`` from one full-data fit per candidate; smallest wins.

    ``penalty="params"`` replaces ``R`` by :func:`n_parameters`.
    """
    ranks = _check_ranks(ranks)
    if penalty not in ("rank", "params"):
        raise ConfigError(f"penalty must be 'rank' or 'params', got {penalty!r}")
    cov_kw, fit_kw = _split_params(params)
    if cov is None:
        cov = assemble(dataset, **cov_kw)
    scores = []
    for R in ranks:
        t0 = time.perf_counter()
        model, _ = fit_lf_parafac(cov, R, dataset=dataset, **fit_kw)
        L = log_likelihood(model, dataset)
        pen = R if penalty == "rank" else n_parameters(R, dataset.shape)
        scores.append(RankScore(R, pen - L, [], time.perf_counter() - t0))
    best = min(scores, key=lambda s: s.value).R
    return scores, best


def write_report(path, lcv=None, aic=None, config=None):
    """Write the criterion curves as CSV (``.csv``) or JSON (anything else).

    ``lcv`` and ``aic`` are ``(scores, best)`` pairs.
    """
    ranks = sorted({s.R for pair in (lcv, aic) if pair for s in pair[0]})
    rows = []
    for R in ranks:
        row = {"R": R}
        for name, pair in (("lcv", lcv), ("aic", aic)):
            if pair:
                score = next((s for s in pair[0] if s.R == R), None)
                row[name] = None if score is None else score.value
                row[f"{name}_selected"] = int(R == pair[1])
        rows.append(row)
    if str(path).endswith(".csv"):
        cols = ["R"] + [c for name, pair in (("lcv", lcv), ("aic", aic)) if pair for c in (name, f"{name}_selected")]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            for row in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    else:
        out = {"rows": rows, "config": config or {}}
        for name, pair in (("lcv", lcv), ("aic", aic)):
            if pair:
                out[f"{name}_best"] = pair[1]
                out[f"{name}_folds"] = {str(s.R): s.folds for s in pair[0]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(out, fh, indent=1)
    return path
