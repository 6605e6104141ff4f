import numpy as np
import pytest

from lfparafac.covariance import CovarianceField, model_covariance, trapezoid_rule
from lfparafac.lf_parafac import LfParafacModel
from lfparafac.simulation import fourier_basis
from lfparafac.smoothing import MeanField, make_grid


def random_model(rng, shape=(4,), rank=2, G=41, lam=None, sigma2=0.5):
    """Normalized model with Fourier feature functions on [0, 1]."""
    grid = make_grid((0.0, 1.0), G)
    w = trapezoid_rule(grid).weights
    coef = rng.standard_normal((5, rank))
    phi = fourier_basis(grid, 5) @ coef
    phi /= np.sqrt(w @ phi ** 2)
    phi *= np.where(phi[0] < 0, -1.0, 1.0)
    factors = []
    for p in shape:
        a = rng.uniform(0.1, 1.0, size=(p, rank))
        factors.append(a / np.linalg.norm(a, axis=0))
    if lam is None:
        lam = np.diag(np.arange(rank, 0, -1, dtype=float) ** 2)
    return LfParafacModel(
        rank=rank,
        grid=grid,
        weights=w,
        phi=phi,
        factors=factors,
        lam=np.asarray(lam, dtype=float),
        sigma2=sigma2,
        mean=MeanField.zeros(grid, shape),
        domain=(0.0, 1.0),
        shape=tuple(shape),
    )


def exact_field(model):
    """Covariance field synthesized from ``model`` with no estimation error."""
    full = model_covariance(model.phi, model.factors, model.lam)
    return CovarianceField(model.grid, full, model.sigma2, model.mean, model.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
