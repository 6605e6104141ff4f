"""Pooled local-linear smoothing of mean curves and (cross-)covariance surfaces.

Everything here uses the Epanechnikov kernel.  Observations sharing an
exact location are aggregated (summed weights, weighted mean response)
before fitting, which leaves the weighted least-squares solution unchanged
and keeps dense designs cheap.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import InsufficientDataError, SmoothingError
from .tensor_core import vec_axis

MAX_WIDENINGS = 3
_DEGENERACY_TOL = 1e-8


def epanechnikov(u):
    u = np.asarray(u, dtype=np.float64)
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def default_bandwidth(times, factor=1.5):
    """``factor`` times the mean gap between distinct sorted observation times."""
    t = np.unique(np.asarray(times, dtype=np.float64))
    if t.size < 2:
        raise InsufficientDataError("need at least two distinct time points to pick a bandwidth")
    return factor * float(np.mean(np.diff(t)))


def make_grid(domain, size=51):
    a, b = domain
    if size < 2:
        raise ValueError("grid size must be at least 2")
    return np.linspace(float(a), float(b), int(size))


def _aggregate(x, y, w):
    """Collapse duplicate locations: returns (x_unique, weighted mean y, total weight)."""
    xu, inv = np.unique(x, return_inverse=True)
    wsum = np.bincount(inv, weights=w, minlength=xu.size)
    ysum = np.bincount(inv, weights=w * y, minlength=xu.size)
    keep = wsum > 0
    return xu[keep], ysum[keep] / wsum[keep], wsum[keep]


def _kernel_moments_1d(t, y, w, h, grid):
    d = t[None, :] - grid[:, None]  # (G, n)
    k = epanechnikov(d / h) * w[None, :]
    s0 = k.sum(1)
    s1 = (k * d).sum(1)
    s2 = (k * d * d).sum(1)
    t0 = k @ y
    t1 = (k * d) @ y
    return s0, s1, s2, t0, t1


def local_linear_1d(t, y, bandwidth, grid, weights=None):
    """Local linear fit evaluated on ``grid`` (intercept of the local line).

    Grid points whose kernel window holds fewer than two distinct locations
    are refit with the bandwidth doubled, at most three times.

    Raises
    ------
    SmoothingError
        If some grid point stays degenerate after widening.
    """
    t = np.asarray(t, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    grid = np.asarray(grid, dtype=np.float64)
    if not t.size == y.size == w.size:
        raise ValueError("t, y and weights must have the same length")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    t, y, w = _aggregate(t, y, w)

    out = np.full(grid.size, np.nan)
    todo = np.arange(grid.size)
    h = float(bandwidth)
    for _ in range(MAX_WIDENINGS + 1):
        s0, s1, s2, t0, t1 = _kernel_moments_1d(t, y, w, h, grid[todo])
        det = s0 * s2 - s1 * s1
        ok = (s0 > 0) & (det > _DEGENERACY_TOL * s0 * s2)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[todo[ok]] = (s2[ok] * t0[ok] - s1[ok] * t1[ok]) / det[ok]
        todo = todo[~ok]
        if todo.size == 0:
            return out
        h *= 2.0
    raise SmoothingError(
        f"local linear design degenerate at {todo.size} grid point(s) (first at {grid[todo[0]]:.4g}) "
        f"even with bandwidth {h / 2:.4g}"
    )


def _aggregate_2d(s, t, y, w):
    pts = np.column_stack([s, t])
    uniq, inv = np.unique(pts, axis=0, return_inverse=True)
    inv = inv.ravel()
    wsum = np.bincount(inv, weights=w, minlength=len(uniq))
    ysum = np.bincount(inv, weights=w * y, minlength=len(uniq))
    keep = wsum > 0
    return uniq[keep, 0], uniq[keep, 1], ysum[keep] / wsum[keep], wsum[keep]


def _fit_2d(s, t, y, w, h1, h2, grid1, grid2):
    dx = s[None, :] - grid1[:, None]
    dy = t[None, :] - grid2[:, None]
    kx = epanechnikov(dx / h1)
    ky = epanechnikov(dy / h2)
    kx1, kx2 = kx * dx, kx * dx * dx
    ky1, ky2 = ky * dy, ky * dy * dy
    wy = w * y
    # separable kernel: every moment is a (G1 x n) diag(.) (n x G2) product
    S00 = (kx * w) @ ky.T
    S10 = (kx1 * w) @ ky.T
    S01 = (kx * w) @ ky1.T
    S20 = (kx2 * w) @ ky.T
    S11 = (kx1 * w) @ ky1.T
    S02 = (kx * w) @ ky2.T
    T0 = (kx * wy) @ ky.T
    T1 = (kx1 * wy) @ ky.T
    T2 = (kx * wy) @ ky1.T
    M = np.stack([
        np.stack([S00, S10, S01], -1),
        np.stack([S10, S20, S11], -1),
        np.stack([S01, S11, S02], -1),
    ], -2)
    rhs = np.stack([T0, T1, T2], -1)
    det = np.linalg.det(M)
    ok = (S00 > 0) & (det > _DEGENERACY_TOL * S00 * S20 * S02)
    out = np.full(S00.shape, np.nan)
    if ok.any():
        out[ok] = np.linalg.solve(M[ok], rhs[ok][..., None])[:, 0, 0]
    return out, ok


def local_linear_2d(s, t, y, bandwidths, grid1, grid2=None, weights=None):
    """Local plane fit at every node of ``grid1 × grid2``.

    ``bandwidths`` is a scalar or a pair ``(h1, h2)``.  Degenerate nodes are
    widened like in :func:`local_linear_1d`.
    """
    s = np.asarray(s, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    w = np.ones_like(s) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    grid1 = np.asarray(grid1, dtype=np.float64)
    grid2 = grid1 if grid2 is None else np.asarray(grid2, dtype=np.float64)
    h1, h2 = (bandwidths, bandwidths) if np.isscalar(bandwidths) else bandwidths
    if h1 <= 0 or h2 <= 0:
        raise ValueError("bandwidths must be positive")
    s, t, y, w = _aggregate_2d(s, t, y, w)

    out, ok = _fit_2d(s, t, y, w, h1, h2, grid1, grid2)
    for level in range(1, MAX_WIDENINGS + 1):
        if ok.all():
            return out
        rows = np.nonzero((~ok).any(1))[0]
        cols = np.nonzero((~ok).any(0))[0]
        f = 2.0 ** level
        sub, sub_ok = _fit_2d(s, t, y, w, h1 * f, h2 * f, grid1[rows], grid2[cols])
        bad = ~ok[np.ix_(rows, cols)]
        fill = bad & sub_ok
        block = out[np.ix_(rows, cols)]
        block[fill] = sub[fill]
        out[np.ix_(rows, cols)] = block
        okb = ok[np.ix_(rows, cols)]
        okb |= fill
        ok[np.ix_(rows, cols)] = okb
    if not ok.all():
        g1, g2 = np.argwhere(~ok)[0]
        raise SmoothingError(
            f"local plane design degenerate at {int((~ok).sum())} node(s), first at "
            f"({grid1[g1]:.4g}, {grid2[g2]:.4g}), after {MAX_WIDENINGS} widenings"
        )
    return out


@dataclass(frozen=True)
class MeanField:
    """Mean curves of every tensor entry on a regular grid.

    ``values`` has shape ``(G, *shape)``.  Calling the field evaluates it at
    arbitrary times by linear interpolation, returning ``(n, *shape)``.
    """

    grid: np.ndarray
    values: np.ndarray
    bandwidth: object = None

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def flat(self):
        """``(G, P)`` with entries in vectorization order."""
        g = self.values.shape[0]
        nd = self.values.ndim - 1
        return self.values.transpose([0] + list(range(nd, 0, -1))).reshape(g, -1)

    def __call__(self, times):
        times = np.asarray(times, dtype=np.float64).ravel()
        flat = self.values.reshape(self.values.shape[0], -1)
        out = np.empty((times.size, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.interp(times, self.grid, flat[:, c])
        return out.reshape((times.size,) + self.shape)

    @classmethod
    def zeros(cls, grid, shape):
        return cls(np.asarray(grid, float), np.zeros((len(grid),) + tuple(shape)))


@dataclass(frozen=True)
class SurfaceEstimate:
    grid: np.ndarray
    values: np.ndarray
    bandwidth: float
    n_pairs: int = 0


def estimate_mean(dataset, bandwidth=None, grid=None, grid_size=51):
    """Pool every sample's observations of each entry and smooth them.

    ``bandwidth`` may be a scalar, an array of per-entry bandwidths in
    vectorization order, or None for the per-entry default.
    """
    if grid is None:
        grid = make_grid(dataset.domain, grid_size)
    P = dataset.n_entries
    times = np.concatenate([np.repeat(s.times[:, None], P, 1) for s in dataset.samples])
    vals = np.concatenate([s.flat_values() for s in dataset.samples])
    bws = np.empty(P)
    flat = np.empty((len(grid), P))
    for j in range(P):
        obs = ~np.isnan(vals[:, j])
        if obs.sum() == 0:
            raise InsufficientDataError(f"entry {j} has no observed values; cannot estimate its mean")
        tj, yj = times[obs, j], vals[obs, j]
        if bandwidth is None:
            h = default_bandwidth(tj)
        elif np.ndim(bandwidth) == 0:
            h = float(bandwidth)
        else:
            h = float(np.asarray(bandwidth)[j])
        bws[j] = h
        try:
            flat[:, j] = local_linear_1d(tj, yj, h, grid)
        except SmoothingError as exc:
            raise SmoothingError(f"mean of entry {j}: {exc}") from None
    values = vec_axis(flat, 1, dataset.shape)
    return MeanField(np.asarray(grid, float), values, bws if bandwidth is None or np.ndim(bandwidth) else float(bandwidth))


class PairPool:
    """Raw within-sample products of centered observations, grouped by location.

    Built once per centered dataset; ``pair(j, k)`` returns aggregated raw
    cross-products ``y_j(t_a) y_k(t_b)`` with their multiplicities.
    """

    def __init__(self, centered):
        self.times = centered.distinct_times()
        self.T = self.times.size
        self.P = centered.n_entries
        self._idx = []
        self._vals = []
        for s in centered.samples:
            if s.n_times == 0:
                continue
            self._idx.append(np.searchsorted(self.times, s.times))
            self._vals.append(s.flat_values())

    def _collect(self, j, k, diagonal):
        codes, prods = [], []
        for idx, Y in zip(self._idx, self._vals):
            yj, yk = Y[:, j], Y[:, k]
            oj, ok = ~np.isnan(yj), ~np.isnan(yk)
            if not (oj.any() and ok.any()):
                continue
            a, b = idx[oj], idx[ok]
            c = a[:, None] * self.T + b[None, :]
            p = yj[oj][:, None] * yk[ok][None, :]
            if diagonal is not None:
                sel = (a[:, None] == b[None, :])
                if not diagonal:
                    sel = ~sel
                c, p = c[sel], p[sel]
            codes.append(c.ravel())
            prods.append(p.ravel())
        if not codes:
            return np.empty(0, np.int64), np.empty(0)
        return np.concatenate(codes), np.concatenate(prods)

    def _group(self, codes, prods):
        if self.T * self.T <= 4_000_000:
            cnt = np.bincount(codes, minlength=self.T * self.T)
            tot = np.bincount(codes, weights=prods, minlength=self.T * self.T)
            loc = np.nonzero(cnt)[0]
            cnt, tot = cnt[loc], tot[loc]
        else:
            loc, inv = np.unique(codes, return_inverse=True)
            cnt = np.bincount(inv)
            tot = np.bincount(inv, weights=prods)
        return self.times[loc // self.T], self.times[loc % self.T], tot / cnt, cnt.astype(float)

    def pair(self, j, k):
        """Off-diagonal raw products for auto pairs, all products for cross pairs."""
        codes, prods = self._collect(j, k, False if j == k else None)
        n = codes.size
        return self._group(codes, prods) + (n,)

    def diagonal(self, j):
        """Raw squared observations ``y_j(t)^2`` (the k == l pairs)."""
        codes, prods = self._collect(j, j, True)
        s, _, y, w = self._group(codes, prods)
        return s, y, w


def estimate_pair_covariance(centered, j, k, bandwidth=None, grid=None, grid_size=51,
                             min_pairs=10, pool=None):
    """Smoothed (cross-)covariance surface ``Σ_jk(s, t)`` from a centered dataset."""
    if grid is None:
        grid = make_grid(centered.domain, grid_size)
    if pool is None:
        pool = PairPool(centered)
    if bandwidth is None:
        bandwidth = default_bandwidth(pool.times)
    s, t, y, w, n = pool.pair(j, k)
    if n < min_pairs:
        raise InsufficientDataError(f"pair ({j}, {k}): only {n} raw products, need {min_pairs}")
    try:
        surf = local_linear_2d(s, t, y, bandwidth, grid, weights=w)
    except SmoothingError as exc:
        raise SmoothingError(f"pair ({j}, {k}): {exc}") from None
    if j == k:
        surf = 0.5 * (surf + surf.T)
    return SurfaceEstimate(np.asarray(grid, float), surf, bandwidth, n)


def estimate_sigma2(centered, diagonals, bandwidth=None, grid=None, pool=None):
    """Average residual variance over entries and grid points.

    ``diagonals[j]`` is ``Σ̂_jj(t, t)`` on ``grid``.  For each entry the raw
    squared observations are smoothed into ``V_j(t)`` and the noise variance
    is the grid average of ``V_j - Σ̂_jj``.
    """
    diagonals = np.asarray(diagonals, dtype=np.float64)
    if grid is None:
        grid = make_grid(centered.domain, diagonals.shape[1])
    if pool is None:
        pool = PairPool(centered)
    if bandwidth is None:
        bandwidth = default_bandwidth(pool.times)
    per_entry = np.empty(diagonals.shape[0])
    for j in range(diagonals.shape[0]):
        t, y, w = pool.diagonal(j)
        if t.size == 0:
            raise InsufficientDataError(f"entry {j} has no observations for the variance estimate")
        v = local_linear_1d(t, y, bandwidth, grid, weights=w)
        per_entry[j] = np.mean(v - diagonals[j])
    return max(float(np.mean(per_entry)), 1e-12)
