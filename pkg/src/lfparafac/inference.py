"""Empirical Bayes prediction of sample scores and trajectory reconstruction.

Under the model the observed entries of sample ``i`` stack into
``y_i = m_i + F_i u_i + e_i`` with ``u_i ~ N(μ, Λ)`` and ``e_i ~ N(0, σ² I)``,
where the rows of ``F_i = A ⊙ Φ_i`` are indexed by (entry, time) with time
fastest and unobserved rows removed.  The conditional mean and covariance
of ``u_i`` are computed in the form

    û = μ + (Λ FᵀF + σ² I)⁻¹ Λ Fᵀ (y - m - F μ),
    Cov = σ² (Λ FᵀF + σ² I)⁻¹ Λ,

which equals the usual ``Λ Fᵀ (F Λ Fᵀ + σ² I)⁻¹`` expression but only needs an
``R × R`` solve and stays finite as ``σ² → 0``.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .data_model import entry_labels
from .exceptions import InsufficientDataError
from .lf_parafac import gram
from .tensor_core import vec_axis


@dataclass
class ScorePrediction:
    sample_id: str
    u_hat: np.ndarray
    cov: np.ndarray
    n_observed: int


def _observed_rows(values, mask):
    """Flatten ``(N, P)`` values/mask in (entry, time) order, time fastest."""
    y = np.asarray(values, dtype=np.float64).T.reshape(-1)
    m = np.asarray(mask, dtype=bool).T.reshape(-1)
    return y, m


def design_matrix(model, times, mask=None):
    """``F = A ⊙ Φ(times)`` restricted to observed rows.

    Parameters
    ----------
    model : LfParafacModel
    times : array_like, length N
    mask : array_like of bool, shape (N, P), optional
        Observed (time, entry) pairs; all observed when omitted.

    Returns
    -------
    ndarray, shape (n_observed, R)
        Row ``j * N + k`` (before deletion) belongs to entry ``j`` at
        ``times[k]``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    phi = model.phi_at(times)  # (N, R)
    A = model.khatri_rao()  # (P, R)
    F = (A[:, None, :] * phi[None, :, :]).reshape(-1, model.rank)
    if mask is None:
        return F
    mask = np.asarray(mask, dtype=bool).reshape(times.size, -1)
    return F[mask.T.reshape(-1)]


def _residual(model, sample):
    mean = model.mean(sample.times).reshape(sample.n_times, -1, order="F")
    resid = sample.flat_values() - mean
    return _observed_rows(resid, sample.flat_mask())


def predict_scores(model, sample, mu=None):
    """Posterior mean and covariance of the scores of one sample.

    Parameters
    ----------
    model : LfParafacModel
    sample : LongitudinalSample
    mu : array_like, optional
        Prior mean of the scores; zero by default (centered data).

    Returns
    -------
    ScorePrediction
    """
    r, obs = _residual(model, sample)
    if not obs.any():
        raise InsufficientDataError(f"sample {sample.sample_id!r} has no observed entries")
    F = design_matrix(model, sample.times)[obs]
    r = r[obs]
    R = model.rank
    mu = np.zeros(R) if mu is None else np.asarray(mu, dtype=np.float64)
    r = r - F @ mu
    lam = model.lam
    s2 = float(model.sigma2)
    lhs = lam @ (F.T @ F) + s2 * np.eye(R)
    try:
        u = np.linalg.solve(lhs, lam @ (F.T @ r))
        cov = s2 * np.linalg.solve(lhs, lam)
    except np.linalg.LinAlgError:
        # σ² = 0 with a rank-deficient Λ: fall back to the pseudo-inverse form
        S = F @ lam @ F.T + s2 * np.eye(len(r))
        gain = lam @ F.T @ np.linalg.pinv(S)
        u = gain @ r
        cov = lam - gain @ F @ lam
    cov = 0.5 * (cov + cov.T)
    return ScorePrediction(sample.sample_id, mu + u, cov, int(obs.sum()))


def reconstruct(model, prediction, eval_times):
    """``x̂(t) = Σ_r û_r φ_r(t) a_r + m(t)``, shape ``(len(eval_times), *shape)``.

    ``prediction`` may be a :class:`ScorePrediction` or a plain score vector.
    """
    u = prediction.u_hat if isinstance(prediction, ScorePrediction) else np.asarray(prediction, dtype=np.float64)
    t = np.atleast_1d(np.asarray(eval_times, dtype=np.float64))
    flat = (model.phi_at(t) * u) @ model.khatri_rao().T  # (T, P)
    return vec_axis(flat, 1, model.shape) + model.mean(t)


def psi_star(model, x, center=True):
    """Noise-free projection scores of a sample observed on the whole grid.

    ``û = [Σ_g w_g x(s_g)ᵀ (A ⊙ Φ(s_g))] M⁻¹`` with ``M = (AᵀA) * G_Φ``.

    Parameters
    ----------
    x : ndarray, shape (G, P) or (G, *shape)
    center : bool
        Subtract the model mean first.
    """
    x = np.asarray(x, dtype=np.float64)
    G = model.G
    x = x.reshape(G, -1, order="F")
    if center:
        x = x - model.mean(model.grid).reshape(G, -1, order="F")
    A = model.khatri_rao()
    L = A[None, :, :] * model.phi[:, None, :]
    b = np.einsum("g,gj,gjr->r", model.weights, x, L)
    M = gram(model.phi, model.factors, model.weights)
    return np.linalg.solve(M, b)


def write_scores_csv(predictions, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        R = len(predictions[0].u_hat) if predictions else 0
        writer.writerow(["sample_id"] + [f"u_{r + 1}" for r in range(R)])
        for p in predictions:
            writer.writerow([p.sample_id] + [repr(float(v)) for v in p.u_hat])
    return path


def write_trajectories_csv(model, predictions, times_per_sample, path):
    """Long-format trajectories, same layout as the input CSV."""
    labels = entry_labels(model.shape)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "time"] + labels)
        for p, times in zip(predictions, times_per_sample):
            rec = reconstruct(model, p, times)
            flat = rec.reshape(len(times), -1, order="F")
            for t, row in zip(times, flat):
                writer.writerow([p.sample_id, repr(float(t))] + [repr(float(v)) for v in row])
    return path
