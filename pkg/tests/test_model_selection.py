import csv
import json

import numpy as np
import pytest
from conftest import random_model

from lfparafac import model_selection
from lfparafac.covariance import assemble, trapezoid_rule
from lfparafac.data_model import Dataset, LongitudinalSample
from lfparafac.exceptions import ConfigError, InsufficientDataError
from lfparafac.lf_parafac import LfParafacModel, _replace, fit_lf_parafac
from lfparafac.model_selection import (
    log_likelihood,
    n_parameters,
    sample_log_likelihood,
    select_rank_aic,
    select_rank_lcv,
    write_report,
)
from lfparafac.simulation import SimConfig, generate
from lfparafac.smoothing import MeanField, make_grid

FAST = {"grid_size": 21, "epsilon": 1e-6, "max_iter": 50, "seed": 0}


def noise_dataset(rng, n=4, shape=(2,)):
    t = np.linspace(0, 1, 5)
    return Dataset([LongitudinalSample(f"s{i}", t, rng.standard_normal((5,) + shape)) for i in range(n)], shape)


def true_model(truth, cfg, G=51):
    grid = make_grid(cfg.domain, G)
    return LfParafacModel(
        rank=cfg.rank, grid=grid, weights=trapezoid_rule(grid).weights, phi=truth.phi_at(grid),
        factors=truth.factors, lam=truth.lam, sigma2=cfg.sigma2, mean=MeanField.zeros(grid, cfg.dims),
        domain=cfg.domain, shape=cfg.dims,
    )


# ---------------------------------------------------------------- likelihood


def test_white_noise_closed_form(rng):
    m = _replace(random_model(rng, shape=(2,), rank=2), lam=np.zeros((2, 2)), sigma2=0.7)
    d = noise_dataset(rng)
    r = np.concatenate([s.flat_values().ravel() for s in d.samples])
    expected = -0.5 * np.sum(r ** 2) / 0.7 - 0.5 * r.size * np.log(0.7)
    assert log_likelihood(m, d) == pytest.approx(expected, rel=1e-12)


def test_quadratic_term_scales(rng):
    m = _replace(random_model(rng, shape=(2,), rank=1), lam=np.zeros((1, 1)), sigma2=1.0)
    t = np.linspace(0, 1, 4)
    y = rng.standard_normal((4, 2))
    a = sample_log_likelihood(m, LongitudinalSample("a", t, y))
    b = sample_log_likelihood(m, LongitudinalSample("a", t, 2 * y))
    assert b == pytest.approx(4 * a, rel=1e-12)  # log|I| = 0


def test_additive_and_permutation_invariant(rng):
    m = random_model(rng, shape=(2,), rank=2)
    d = noise_dataset(rng, n=5)
    total = log_likelihood(m, d)
    assert total == pytest.approx(sum(sample_log_likelihood(m, s) for s in d.samples), rel=1e-14)
    assert log_likelihood(m, d.subset([3, 1, 4, 0, 2])) == pytest.approx(total, rel=1e-12)


def test_masked_entries_ignored(rng):
    m = random_model(rng, shape=(3,), rank=2)
    t = np.array([0.1, 0.5, 0.9])
    y = rng.standard_normal((3, 3))
    y[1, 2] = np.nan
    base = sample_log_likelihood(m, LongitudinalSample("a", t, y))
    t2 = np.array([0.1, 0.3, 0.5, 0.9])
    y2 = np.insert(y, 1, np.nan, axis=0)
    assert sample_log_likelihood(m, LongitudinalSample("a", t2, y2)) == pytest.approx(base, rel=1e-13)


def test_true_model_beats_lower_rank_refit():
    wins = 0
    for seed in range(20):
        cfg = SimConfig(n=100, dims=(10,), seed=seed, sigma2=1.0, snr=1.0)
        ds, tr = generate(cfg)
        truth_L = log_likelihood(true_model(tr, cfg), ds)
        lower, _ = fit_lf_parafac(assemble(ds), 2, dataset=ds, seed=0)
        wins += truth_L > log_likelihood(lower, ds)
    assert wins > 10


# ---------------------------------------------------------------- LCV


def test_lcv_duplicate_halves_symmetric():
    half, _ = generate(SimConfig(n=20, rank=2, dims=(3,), seed=1))
    copy = [LongitudinalSample("c" + s.sample_id, s.times, s.values) for s in half.samples]
    d = Dataset(list(half.samples) + copy, half.shape, half.domain)
    a, b = np.arange(20), np.arange(20, 40)
    scores, _ = select_rank_lcv(d, [1, 2], params=FAST, cv=[(a, b), (b, a)])
    for s in scores:
        assert s.folds[0] == pytest.approx(s.folds[1], rel=1e-10)


def test_lcv_deterministic_and_fold_checks():
    d, _ = generate(SimConfig(n=20, rank=2, dims=(3,), seed=2))
    one = select_rank_lcv(d, [1, 2], folds=2, seed=4, params=FAST)
    two = select_rank_lcv(d, [1, 2], folds=2, seed=4, params=FAST)
    assert [s.folds for s in one[0]] == [s.folds for s in two[0]]
    assert one[1] == two[1]
    assert all(np.isfinite(s.value) and len(s.folds) == 2 for s in one[0])
    with pytest.raises(InsufficientDataError):
        select_rank_lcv(d.subset(range(5)), [1], folds=3)
    with pytest.raises(ConfigError):
        select_rank_lcv(d, [0, 1])
    with pytest.raises(ConfigError):
        select_rank_lcv(d, [1], params={"colour": 1})


# ---------------------------------------------------------------- AIC


def test_aic_equal_likelihood_prefers_smallest(monkeypatch):
    d, _ = generate(SimConfig(n=15, rank=2, dims=(3,), seed=3))
    monkeypatch.setattr(model_selection, "log_likelihood", lambda model, data: -100.0)
    scores, best = select_rank_aic(d, [3, 1, 2], params=FAST)
    assert best == 1
    assert {s.R: s.value for s in scores} == {1: 101.0, 2: 102.0, 3: 103.0}


def test_aic_literal_penalty_and_param_option():
    d, _ = generate(SimConfig(n=15, rank=2, dims=(3,), seed=3))
    lit, _ = select_rank_aic(d, [1, 2], params=FAST)
    par, _ = select_rank_aic(d, [1, 2], params=FAST, penalty="params")
    for a, b in zip(lit, par):
        assert b.value - a.value == pytest.approx(n_parameters(a.R, (3,)) - a.R)
    assert n_parameters(3, (10,)) == 6 + 27
    with pytest.raises(ConfigError):
        select_rank_aic(d, [1], penalty="bic")


# ---------------------------------------------------------------- report


def test_write_report(tmp_path):
    from lfparafac.model_selection import RankScore

    lcv = ([RankScore(1, -5.0, [-5.0]), RankScore(2, -4.0, [-4.0])], 2)
    aic = ([RankScore(1, 6.0), RankScore(2, 7.0)], 1)
    write_report(tmp_path / "r.csv", lcv=lcv, aic=aic)
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert [r["R"] for r in rows] == ["1", "2"]
    assert rows[1]["lcv_selected"] == "1" and rows[0]["aic_selected"] == "1"
    write_report(tmp_path / "r.json", lcv=lcv, config={"seed": 0})
    out = json.load(open(tmp_path / "r.json"))
    assert out["lcv_best"] == 2 and out["config"] == {"seed": 0} and "aic_best" not in out
