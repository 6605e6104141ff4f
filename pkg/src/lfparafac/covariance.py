"""Full functional covariance of a tensor process on the quadrature grid."""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_model import center
from .exceptions import DataFormatError
from .smoothing import (
    MeanField,
    PairPool,
    default_bandwidth,
    estimate_mean,
    estimate_pair_covariance,
    estimate_sigma2,
    make_grid,
)
from .tensor_core import full_khatri_rao, vec_axis


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values, axis=0):
        return np.tensordot(self.weights, np.asarray(values), axes=([0], [axis]))


def quadrature(domain, size=51):
    """Composite trapezoid rule on ``size`` equispaced nodes of ``domain``."""
    nodes = make_grid(domain, size)
    return trapezoid_rule(nodes)


def trapezoid_rule(nodes):
    nodes = np.asarray(nodes, dtype=np.float64)
    if nodes.size < 2 or np.any(np.diff(nodes) <= 0):
        raise ValueError("quadrature nodes must be strictly increasing, at least two")
    gaps = np.diff(nodes)
    w = np.zeros(nodes.size)
    w[:-1] += gaps / 2
    w[1:] += gaps / 2
    return QuadratureRule(nodes, w)


@dataclass(frozen=True)
class CovarianceField:
    """``full[g, h, j, k] = Σ_jk(s_g, t_h)`` with entries in vectorization order."""

    grid: np.ndarray
    full: np.ndarray
    sigma2: float
    mean: MeanField
    shape: tuple
    bandwidth: float = None
    weights: np.ndarray = None
    _op: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        full = np.asarray(self.full, dtype=np.float64)
        G, P = grid.size, int(np.prod(self.shape))
        if full.shape != (G, G, P, P):
            raise ValueError(f"full must have shape {(G, G, P, P)}, got {full.shape}")
        if not np.all(np.isfinite(full)):
            raise ValueError("covariance field has non-finite entries")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "full", full)
        object.__setattr__(self, "shape", tuple(int(p) for p in self.shape))
        if self.weights is None:
            object.__setattr__(self, "weights", trapezoid_rule(grid).weights)

    @property
    def G(self):
        return self.grid.size

    @property
    def P(self):
        return self.full.shape[2]

    @property
    def quadrature(self):
        return QuadratureRule(self.grid, self.weights)

    @property
    def operator(self):
        """``(G*P, G*P)`` matrix with row ``(g, j)`` and column ``(h, k)``."""
        if "op" not in self._op:
            G, P = self.G, self.P
            self._op["op"] = np.ascontiguousarray(self.full.transpose(0, 2, 1, 3).reshape(G * P, G * P))
        return self._op["op"]

    def slab(self, g, h):
        return self.full[g, h]

    def collapse_f(self, g, h):
        """Row vector of length ``P**2``: the slab at ``(s_g, t_h)`` read row by row."""
        return self.full[g, h].reshape(-1)

    def collapse_d(self, mode, g, h):
        """``(p_mode, p_(-mode) * P)`` matrix with entry ``[i, m*P + k] = E[X_(mode)(s_g)[i, m] x(t_h)[k]]``."""
        if not 0 <= mode < len(self.shape):
            raise ValueError(f"mode {mode} out of range for shape {self.shape}")
        slab = vec_axis(self.full[g, h], 0, self.shape)  # (p_1, ..., p_D, P)
        return matricize_rows(np.moveaxis(slab, mode, 0), self.P)

    def diagonals(self):
        """``Σ_jj(t, t)`` for every entry, shape ``(P, G)``."""
        idx = np.arange(self.G)
        return np.stack([self.full[idx, idx, j, j] for j in range(self.P)])

    def with_full(self, full):
        return CovarianceField(self.grid, full, self.sigma2, self.mean, self.shape, self.bandwidth, self.weights)

    def project_psd(self):
        """Nearest (in the quadrature-weighted sense) positive semidefinite field."""
        G, P = self.G, self.P
        sw = np.sqrt(np.repeat(self.weights, P))
        op = self.operator
        m = sw[:, None] * op * sw[None, :]
        m = 0.5 * (m + m.T)
        vals, vecs = np.linalg.eigh(m)
        vals = np.clip(vals, 0.0, None)
        m = (vecs * vals) @ vecs.T
        m = 0.5 * (m + m.T)
        op = m / sw[:, None] / sw[None, :]
        full = op.reshape(G, P, G, P).transpose(0, 2, 1, 3)
        return self.with_full(full)

    def save(self, path):
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(
                fh,
                grid=self.grid,
                full=self.full,
                sigma2=np.array(self.sigma2),
                mean_values=self.mean.values,
                shape=np.array(self.shape),
                bandwidth=np.array(np.nan if self.bandwidth is None else self.bandwidth),
                weights=self.weights,
            )
        return path

    @classmethod
    def load(cls, path):
        try:
            z = np.load(path)
        except (OSError, ValueError) as exc:
            raise DataFormatError(f"{path}: not a covariance cache ({exc})") from None
        grid = z["grid"]
        bw = float(z["bandwidth"])
        return cls(
            grid,
            z["full"],
            float(z["sigma2"]),
            MeanField(grid, z["mean_values"]),
            tuple(int(p) for p in z["shape"]),
            None if np.isnan(bw) else bw,
            z["weights"],
        )


def matricize_rows(moved, P):
    """``moved`` is ``(p_mode, *other dims, P)``; unfold the middle dims first-index-fastest."""
    p = moved.shape[0]
    mid = moved.shape[1:-1]
    if not mid:
        return moved.reshape(p, P)
    nd = len(mid)
    rev = moved.transpose([0] + [nd - i for i in range(nd)] + [nd + 1])
    return rev.reshape(p, -1)


def model_covariance(phi, factors, lam):
    """Covariance ``(A ⊙ Φ(s)) Λ (A ⊙ Φ(t))ᵀ`` of a low-rank model, shape ``(G, G, P, P)``."""
    A = full_khatri_rao(factors)
    L = A[None, :, :] * phi[:, None, :]  # (G, P, R)
    return np.einsum("gjr,rq,hkq->ghjk", L, lam, L)


def assemble(dataset, grid_size=51, bandwidth_mean=None, bandwidth_cov=None, grid=None,
             min_pairs=10, psd=True):
    """Estimate mean, every pair surface and the noise variance from ``dataset``.

    Returns a :class:`CovarianceField`.  With ``psd=True`` negative
    eigenvalues of the weighted covariance operator are clipped to zero.
    """
    dataset.check_estimable()
    if grid is None:
        grid = make_grid(dataset.domain, grid_size)
    grid = np.asarray(grid, dtype=np.float64)
    mean = estimate_mean(dataset, bandwidth_mean, grid)
    centered = center(dataset, mean)
    pool = PairPool(centered)
    h = default_bandwidth(pool.times) if bandwidth_cov is None else float(bandwidth_cov)
    G, P = grid.size, dataset.n_entries
    full = np.empty((G, G, P, P))
    for j in range(P):
        for k in range(j, P):
            surf = estimate_pair_covariance(centered, j, k, h, grid, min_pairs=min_pairs, pool=pool).values
            full[:, :, j, k] = surf
            full[:, :, k, j] = surf.T
    idx = np.arange(G)
    diag = np.stack([full[idx, idx, j, j] for j in range(P)])
    sigma2 = estimate_sigma2(centered, diag, h, grid, pool=pool)
    cov = CovarianceField(grid, full, sigma2, mean, dataset.shape, h)
    return cov.project_psd() if psd else cov
