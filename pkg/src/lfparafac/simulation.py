"""Synthetic functional tensors and the LF-PARAFAC vs. CPD benchmark.

Ground truth follows a low-rank model: random Fourier feature functions,
uniform factor matrices with unit columns and scores ``u_i ~ N(0, Λ)`` with
``Λ = diag(R², ..., 1)``.  A misspecified generator draws every entry
independently-ish from a low-order Fourier model instead.
"""
import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

import numpy as np

from .covariance import trapezoid_rule
from .cpd_baseline import cpd_als, mean_impute
from .data_model import Dataset, LongitudinalSample, sparsify
from .exceptions import ConfigError, LFParafacError
from .tensor_core import flatten_axes, full_khatri_rao, vec_axis


@dataclass(frozen=True)
class SimConfig:
    """Generator settings.

    ``snr=None`` leaves the signal unscaled; otherwise the signal is
    multiplied by ``c_SNR = snr * sigma / RMS(signal)``.
    """

    n: int = 100
    rank: int = 3
    dims: Tuple[int, ...] = (10,)
    K: int = 30
    domain: Tuple[float, float] = (0.0, 1.0)
    M: int = 5
    lam: Optional[Tuple[float, ...]] = None
    sigma2: float = 1.0
    snr: Optional[float] = 1.0
    sparsity: float = 0.0
    seed: int = 0
    misspecified: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(p) for p in self.dims))
        object.__setattr__(self, "domain", tuple(float(v) for v in self.domain))
        if self.lam is not None:
            object.__setattr__(self, "lam", tuple(float(v) for v in self.lam))
        self.validate()

    def validate(self):
        if self.n < 1 or self.rank < 1 or self.K < 2 or self.M < 1:
            raise ConfigError("n, rank, M must be positive and K at least 2")
        if not self.dims or any(p < 1 for p in self.dims):
            raise ConfigError(f"dims must be positive, got {self.dims}")
        a, b = self.domain
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ConfigError(f"bad domain {self.domain}")
        if self.sigma2 < 0:
            raise ConfigError("sigma2 must be non-negative")
        if self.snr is not None and self.snr <= 0:
            raise ConfigError("snr must be positive")
        if not 0 <= self.sparsity < 1:
            raise ConfigError("sparsity must lie in [0, 1)")
        if self.lam is not None and (len(self.lam) != self.rank or min(self.lam) < 0):
            raise ConfigError("lam needs one non-negative variance per component")

    @property
    def lam_diag(self):
        if self.lam is not None:
            return np.array(self.lam)
        return np.arange(self.rank, 0, -1, dtype=np.float64) ** 2

    def to_dict(self):
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["domain"] = list(self.domain)
        d["lam"] = None if self.lam is None else list(self.lam)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown simulation keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("dims", "domain", "lam"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


PRESETS = {
    "d2-r3": SimConfig(n=100, rank=3, dims=(10,), K=30),
    "d3-r3": SimConfig(n=100, rank=3, dims=(5, 5), K=30),
    "misspecified": SimConfig(n=100, rank=3, dims=(8, 8), K=30, M=7, misspecified=True),
}


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(base, **overrides)


def fourier_basis(t, M, domain=(0.0, 1.0)):
    """``M`` orthonormal Fourier functions on ``domain`` evaluated at ``t``, ``(len(t), M)``."""
    a, b = domain
    x = (np.asarray(t, dtype=np.float64) - a) / (b - a)
    cols = [np.ones_like(x)]
    k = 1
    while len(cols) < M:
        cols.append(np.sqrt(2) * np.sin(2 * np.pi * k * x))
        if len(cols) < M:
            cols.append(np.sqrt(2) * np.cos(2 * np.pi * k * x))
        k += 1
    return np.column_stack(cols) / np.sqrt(b - a)


@dataclass
class GroundTruth:
    times: np.ndarray
    signal: np.ndarray  # (n, K, P), noiseless and scaled
    c_snr: float
    domain: tuple
    phi: Optional[np.ndarray] = None  # (K, R)
    phi_coef: Optional[np.ndarray] = None  # (M, R)
    factors: list = field(default_factory=list)
    lam: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None

    def phi_at(self, t):
        return fourier_basis(t, self.phi_coef.shape[0], self.domain) @ self.phi_coef

    def to_dict(self):
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "times": lst(self.times),
            "c_snr": self.c_snr,
            "domain": list(self.domain),
            "phi": lst(self.phi),
            "phi_coef": lst(self.phi_coef),
            "factors": [lst(a) for a in self.factors],
            "lambda": lst(self.lam),
            "u": lst(self.u),
            "signal": lst(self.signal),
        }


def _random_functions(rng, M, R, domain):
    coef = rng.standard_normal((M, R))
    coef /= np.linalg.norm(coef, axis=0)
    first = fourier_basis([domain[0]], M, domain) @ coef
    coef *= np.where(first[0] < 0, -1.0, 1.0)
    return coef


def generate(cfg):
    """Draw a dataset and its ground truth from ``cfg``.

    Returns
    -------
    dataset : Dataset
    truth : GroundTruth
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    times = np.linspace(cfg.domain[0], cfg.domain[1], cfg.K)
    P = int(np.prod(cfg.dims))
    truth = GroundTruth(times=times, signal=None, c_snr=1.0, domain=cfg.domain)
    if cfg.misspecified:
        basis = fourier_basis(times, cfg.M, cfg.domain)
        # correlated coefficients across entries, decaying with frequency
        mix = rng.standard_normal((P, P)) / np.sqrt(P)
        cov_e = mix @ mix.T + 0.1 * np.eye(P)
        chol = np.linalg.cholesky(cov_e)
        decay = 1.0 / (1.0 + np.arange(cfg.M) // 2)
        coef = rng.standard_normal((cfg.n, cfg.M, P)) @ chol.T * decay[None, :, None]
        raw = np.einsum("km,imp->ikp", basis, coef)
    else:
        coef = _random_functions(rng, cfg.M, cfg.rank, cfg.domain)
        factors = []
        for p in cfg.dims:
            a = rng.uniform(0.0, 1.0, size=(p, cfg.rank))
            factors.append(a / np.linalg.norm(a, axis=0))
        lam = cfg.lam_diag
        u = rng.standard_normal((cfg.n, cfg.rank)) * np.sqrt(lam)
        phi = fourier_basis(times, cfg.M, cfg.domain) @ coef
        A = full_khatri_rao(factors)
        raw = np.einsum("kr,jr,ir->ikj", phi, A, u)
        truth.phi, truth.phi_coef, truth.factors = phi, coef, factors
    sigma = np.sqrt(cfg.sigma2)
    if cfg.snr is None:
        c = 1.0
    else:
        rms = np.sqrt(np.mean(raw ** 2))
        if rms == 0:
            raise ConfigError("signal is identically zero; cannot set the SNR")
        c = cfg.snr * sigma / rms
    signal = c * raw
    truth.signal = signal
    truth.c_snr = float(c)
    if not cfg.misspecified:
        truth.lam = np.diag(c * c * lam)
        truth.u = c * u
    noisy = signal + sigma * rng.standard_normal(signal.shape) if sigma > 0 else signal.copy()
    width = len(str(cfg.n))
    samples = [
        LongitudinalSample(f"s{i + 1:0{width}d}", times, vec_axis(noisy[i], 1, cfg.dims))
        for i in range(cfg.n)
    ]
    dataset = Dataset(samples, cfg.dims, cfg.domain)
    if cfg.sparsity > 0:
        dataset = sparsify(dataset, cfg.sparsity, seed=int(rng.integers(2 ** 32)))
    return dataset, truth


# ----------------------------------------------------------------------
# metrics


def rmse(truth, reconstructions):
    """Root mean squared error against the noiseless signal.

    ``reconstructions`` is ``(n, K, P)`` or a per-sample list of
    ``(K, *dims)`` arrays.
    """
    sig = truth.signal if isinstance(truth, GroundTruth) else np.asarray(truth, dtype=np.float64)
    rec = reconstructions
    if not isinstance(rec, np.ndarray):
        dims = np.asarray(rec[0]).shape[1:]
        rec = np.stack([flatten_axes(np.asarray(r), 1, dims) if len(dims) > 1 else np.asarray(r).reshape(len(r), -1)
                        for r in rec])
    rec = np.asarray(rec, dtype=np.float64).reshape(sig.shape)
    return float(np.sqrt(np.mean((rec - sig) ** 2)))


def max_principal_angle(U, V, weights=None):
    """Largest principal angle between ``span(U)`` and ``span(V)`` under ``Σ_g w_g f(g) h(g)``.

    Both bases are orthonormalized in the weighted inner product; the angle
    is ``arccos`` of the smallest singular value of the cross-Gram.
    """
    U = np.asarray(U, dtype=np.float64).reshape(len(U), -1)
    V = np.asarray(V, dtype=np.float64).reshape(len(V), -1)
    if U.shape[0] != V.shape[0]:
        raise ValueError("bases must be sampled on the same grid")
    w = np.ones(U.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    sw = np.sqrt(w)[:, None]
    qu, _ = np.linalg.qr(sw * U)
    qv, _ = np.linalg.qr(sw * V)
    s = np.linalg.svd(qu.T @ qv, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), 0.0, 1.0)))


def column_angles(A, B):
    """Angles between matched columns, up to sign."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    cos = np.abs(np.sum(A * B, axis=0)) / (np.linalg.norm(A, axis=0) * np.linalg.norm(B, axis=0))
    return np.arccos(np.clip(cos, 0.0, 1.0))


# ----------------------------------------------------------------------
# benchmark


def _observed_grid_tensor(dataset, times):
    """``(n, K, *dims)`` array with NaN where nothing was observed."""
    n, K = len(dataset), len(times)
    out = np.full((n, K, dataset.n_entries), np.nan)
    for i, s in enumerate(dataset.samples):
        idx = np.searchsorted(times, s.times)
        out[i, idx] = s.flat_values()
    return out


def _fit_cpd(dataset, truth, rank, seed):
    arr = _observed_grid_tensor(dataset, truth.times)
    arr = mean_impute(arr)
    x = vec_axis(arr, 2, dataset.shape)
    fit = cpd_als(x, rank, max_iter=500, tol=1e-9, seed=seed)
    rec = fit.reconstruct()
    rec = flatten_axes(rec, 2, dataset.shape) if len(dataset.shape) > 1 else rec
    time_factor = fit.factors.factors[1]
    return rec, time_factor


def _fit_lf(dataset, truth, rank, seed, fit_params):
    from .lf_parafac import LFParafac

    est = LFParafac(rank=rank, random_state=seed, **fit_params).fit(dataset)
    recs = est.predict(dataset, times=truth.times)
    rec = np.stack([r.reshape(len(truth.times), -1, order="F") for r in recs])
    return rec, est.model_.phi_at(truth.times)


METHODS = {"lf_parafac": _fit_lf, "cpd_baseline": _fit_cpd}


def _run_cell(task):
    cell, repeat, cfg, seed, methods, fit_params = task
    ss = np.random.SeedSequence([seed, cell, repeat])
    data_seed, fit_seed = (int(v) for v in ss.generate_state(2))
    cfg = replace(cfg, seed=data_seed)
    dataset, truth = generate(cfg)
    w = trapezoid_rule(truth.times).weights
    rows = []
    base = {
        "cell": cell,
        "D": len(cfg.dims) + 1,
        "dims": "x".join(str(p) for p in cfg.dims),
        "R": cfg.rank,
        "s": cfg.sparsity,
        "snr": cfg.snr,
        "repeat": repeat,
    }
    for method in methods:
        try:
            if method == "lf_parafac":
                rec, phi = _fit_lf(dataset, truth, cfg.rank, fit_seed, fit_params)
            elif method == "cpd_baseline":
                rec, phi = _fit_cpd(dataset, truth, cfg.rank, fit_seed)
            else:
                raise ConfigError(f"unknown method {method!r}")
            values = {"rmse": rmse(truth, rec)}
            if truth.phi is not None:
                values["angle"] = max_principal_angle(truth.phi, phi, w)
            status, message = "ok", ""
        except (LFParafacError, np.linalg.LinAlgError, FloatingPointError) as exc:
            values = {"rmse": float("nan")}
            if truth.phi is not None:
                values["angle"] = float("nan")
            status, message = "failed", f"{type(exc).__name__}: {exc}"
        for metric, value in values.items():
            rows.append(dict(base, method=method, metric=metric, value=value, status=status, message=message))
    return rows


def benchmark_grid(base, ranks=None, sparsities=(0.0, 0.2, 0.5, 0.8), snrs=(0.5, 1.0, 2.0)):
    """Cartesian product of settings around ``base``, as a list of configs."""
    ranks = [base.rank] if ranks is None else ranks
    return [replace(base, rank=r, sparsity=s, snr=q) for r in ranks for s in sparsities for q in snrs]


def run_benchmark(cfgs, methods=("lf_parafac", "cpd_baseline"), repeats=1, seed=0, workers=1,
                  fit_params=None):
    """Fit every method on ``repeats`` fresh datasets per config.

    Each (cell, repeat) draws its data and fit seeds from
    ``SeedSequence([seed, cell, repeat])``, so the table does not depend on
    ``workers``.  Returns a list of row dicts with keys ``method, cell, D,
    dims, R, s, snr, repeat, metric, value, status, message``.
    """
    fit_params = dict(fit_params or {})
    tasks = [(c, k, cfg, seed, tuple(methods), fit_params) for c, cfg in enumerate(cfgs) for k in range(repeats)]
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        chunks = [_run_cell(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_run_cell, tasks))
    return [row for chunk in chunks for row in chunk]


ROW_FIELDS = ["method", "cell", "D", "dims", "R", "s", "snr", "repeat", "metric", "value", "status", "message"]


def write_rows(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def summarize(rows, metric):
    """Mean of ``metric`` per (method, cell) over completed repeats."""
    out = {}
    for row in rows:
        if row["metric"] == metric and row["status"] == "ok":
            out.setdefault((row["method"], row["cell"]), []).append(row["value"])
    return {k: float(np.mean(v)) for k, v in out.items()}


def save_truth(truth, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(), fh)
    return path
