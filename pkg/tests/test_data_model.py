import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfparafac.data_model import Dataset, LongitudinalSample, center, entry_labels, load_csv, sparsify, write_csv
from lfparafac.exceptions import ConfigError, DataFormatError
from lfparafac.simulation import SimConfig, generate
from lfparafac.smoothing import MeanField, estimate_mean


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_smallest_file(tmp_path):
    p = write(tmp_path, "sample_id,time,1,2\na,0.0,1,2\na,1.0,3,4\n")
    d = load_csv(p)
    assert len(d) == 1 and d.shape == (2,)
    s = d.samples[0]
    assert s.n_times == 2 and s.mask.all()
    np.testing.assert_array_equal(s.values, [[1, 2], [3, 4]])
    assert d.domain == (0.0, 1.0)


def test_empty_cell_is_missing(tmp_path):
    p = write(tmp_path, "sample_id,time,1,2\na,0.0,1,\na,1.0,3,4\n")
    s = load_csv(p).samples[0]
    assert not s.mask[0, 1] and s.mask.sum() == 3


def test_times_sorted_and_multi_index(tmp_path):
    p = write(tmp_path, "sample_id,time,1.1,2.1,1.2,2.2\na,2.0,5,6,7,8\na,1.0,1,2,3,4\n")
    s = load_csv(p).samples[0]
    np.testing.assert_array_equal(s.times, [1.0, 2.0])
    # column "2.1" is entry (1, 0) in 0-based tensor indexing
    assert s.values[0, 1, 0] == 2 and s.values[0, 0, 1] == 3


@pytest.mark.parametrize(
    "text, match",
    [
        ("sample_id,time,1,x\na,0,1,2\n", "column 4"),
        ("sample_id,time,1,2\na,0,1,abc\n", "row 2, column '2'"),
        ("sample_id,time,1,2\na,zero,1,2\n", "row 2, column 'time'"),
        ("sample_id,time,1,2\na,0,1,2\na,0,3,4\n", "row 3: duplicate time"),
        ("sample_id,time,1,2\na,0,1\n", "row 2"),
        ("id,time,1\n", "header"),
        ("sample_id,time,1,3\na,0,1,2\n", "full tensor"),
    ],
)
def test_load_errors_name_location(tmp_path, text, match):
    with pytest.raises(DataFormatError, match=match):
        load_csv(write(tmp_path, text))


def test_sidecar(tmp_path):
    p = write(tmp_path, "sample_id,time,1\na,0.5,1\na,1.0,2\n")
    (tmp_path / "d.json").write_text(json.dumps({"domain": [0, 2]}))
    assert load_csv(p).domain == (0.0, 2.0)
    (tmp_path / "d.json").write_text(json.dumps({"domain": [0, 2], "colour": 1}))
    with pytest.raises(DataFormatError, match="unknown"):
        load_csv(p)
    (tmp_path / "d.json").write_text(json.dumps({"domain": [0.6, 2]}))
    with pytest.raises(DataFormatError, match="outside"):
        load_csv(p)


def test_round_trip_bit_identical(tmp_path):
    d, _ = generate(SimConfig(n=12, dims=(2, 3), sparsity=0.3, seed=4))
    p = write_csv(d, tmp_path / "sim.csv")
    back = load_csv(p)
    assert back.shape == d.shape and back.domain == d.domain
    for a, b in zip(d.samples, back.samples):
        assert a.sample_id == b.sample_id
        np.testing.assert_array_equal(a.times, b.times)
        np.testing.assert_array_equal(a.mask, b.mask)
        np.testing.assert_array_equal(np.nan_to_num(a.values, nan=7e77), np.nan_to_num(b.values, nan=7e77))


def test_entry_labels():
    assert entry_labels((2, 2)) == ["1.1", "2.1", "1.2", "2.2"]


def test_sample_validation():
    with pytest.raises(DataFormatError, match="increasing"):
        LongitudinalSample("a", [1.0, 0.0], np.zeros((2, 1)))
    with pytest.raises(DataFormatError):
        Dataset([], (1,))
    s = LongitudinalSample("a", [0.0], np.zeros((1, 1)))
    with pytest.raises(DataFormatError, match="duplicate"):
        Dataset([s, s], (1,))
    with pytest.raises(DataFormatError, match="two or more"):
        Dataset([s], (1,), (0.0, 1.0)).check_estimable()


# ---------------------------------------------------------------- sparsify


def dense_dataset(n=10, N=20, P=5, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, N)
    return Dataset([LongitudinalSample(f"s{i}", t, rng.standard_normal((N, P))) for i in range(n)], (P,))


def test_sparsify_zero_is_identity():
    d = dense_dataset()
    assert sparsify(d, 0.0, seed=1) is d


def test_sparsify_exact_count():
    d = dense_dataset()
    assert d.n_observed == 1000
    assert sparsify(d, 0.5, seed=3).n_observed == 500


def test_sparsify_deterministic():
    d = dense_dataset()
    a, b = sparsify(d, 0.4, seed=9), sparsify(d, 0.4, seed=9)
    for x, y in zip(a.samples, b.samples):
        np.testing.assert_array_equal(x.mask, y.mask)
        np.testing.assert_array_equal(x.times, y.times)


def test_sparsify_rejects_one():
    with pytest.raises(ConfigError):
        sparsify(dense_dataset(), 1.0)


def test_sparsify_slices():
    d = dense_dataset()
    s = sparsify(d, 0.5, seed=2, unit="slice")
    assert sum(x.n_times for x in s.samples) == 100


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.9), st.integers(0, 1000))
def test_sparsify_keeps_two_times_and_order(s, seed):
    d = dense_dataset(n=6, N=8, P=3)
    out = sparsify(d, s, seed=seed)
    assert out.n_observed == d.n_observed - int(np.floor(s * d.n_observed))
    for x in out.samples:
        assert x.n_times >= 2
        assert np.all(np.diff(x.times) > 0)
        assert np.all(x.mask.any(axis=1))


# ---------------------------------------------------------------- center


def test_center_zero_and_constant():
    d = dense_dataset(n=3)
    grid = np.linspace(0, 1, 11)
    same = center(d, MeanField.zeros(grid, d.shape))
    for a, b in zip(d.samples, same.samples):
        np.testing.assert_array_equal(a.values, b.values)
    shifted = center(d, MeanField(grid, np.full((11, 5), 2.5)))
    for a, b in zip(d.samples, shifted.samples):
        np.testing.assert_allclose(b.values, a.values - 2.5)


def test_center_removes_linear_mean():
    rng = np.random.default_rng(1)
    t = np.linspace(0, 1, 15)
    samples = []
    for i in range(200):
        y = (1.0 + 2.0 * t)[:, None] * np.array([1.0, -0.5]) + rng.standard_normal((15, 2))
        samples.append(LongitudinalSample(f"s{i}", t, y))
    d = Dataset(samples, (2,))
    c = center(d, estimate_mean(d))
    pooled = np.concatenate([s.flat_values() for s in c.samples])
    assert np.all(np.abs(pooled.mean(axis=0)) < 0.05)
