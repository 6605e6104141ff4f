"""Irregular longitudinal tensor observations and their CSV representation.

A sample is a sequence of tensor-valued observations ``Y_ik`` taken at
strictly increasing times ``t_ik``; any individual entry may be missing.
"""
import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DataFormatError

__all__ = [
    "LongitudinalSample",
    "Dataset",
    "load_csv",
    "write_csv",
    "sparsify",
    "center",
    "entry_labels",
]


@dataclass(frozen=True)
class LongitudinalSample:
    """One subject: ``values[k]`` is the tensor observed at ``times[k]``.

    Missing entries are NaN in ``values`` and False in ``mask``.
    """

    sample_id: str
    times: np.ndarray
    values: np.ndarray
    mask: np.ndarray = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).ravel()
        values = np.array(self.values, dtype=np.float64)
        if values.ndim < 2:
            values = values.reshape(len(times), -1)
        if values.shape[0] != times.size:
            raise DataFormatError(
                f"sample {self.sample_id!r}: {times.size} times but {values.shape[0]} slices"
            )
        if times.size < 1:
            raise DataFormatError(f"sample {self.sample_id!r} has no observation times")
        if np.any(np.diff(times) <= 0):
            raise DataFormatError(f"sample {self.sample_id!r}: times must be strictly increasing")
        if self.mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.asarray(self.mask, dtype=bool) & np.isfinite(values)
        values[~mask] = np.nan
        for a in (times, values, mask):
            a.setflags(write=False)
        object.__setattr__(self, "sample_id", str(self.sample_id))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def n_times(self):
        return self.times.size

    @property
    def shape(self):
        return self.values.shape[1:]

    @property
    def n_observed(self):
        return int(self.mask.sum())

    def flat_values(self):
        """``(N_i, P)`` matrix of vectorized slices (first index fastest)."""
        return _vec_slices(self.values)

    def flat_mask(self):
        return _vec_slices(self.mask)


def _vec_slices(a):
    n = a.shape[0]
    nd = a.ndim - 1
    return a.transpose([0] + list(range(nd, 0, -1))).reshape(n, -1)


def _unvec_slices(a, shape):
    n = a.shape[0]
    return a.reshape((n,) + tuple(shape)[::-1]).transpose([0] + list(range(len(shape), 0, -1)))


@dataclass(frozen=True)
class Dataset:
    """A collection of samples sharing one tensor shape and time domain."""

    samples: tuple
    shape: tuple
    domain: tuple = None

    def __post_init__(self):
        samples = tuple(self.samples)
        shape = tuple(int(p) for p in self.shape)
        if not samples:
            raise DataFormatError("a dataset needs at least one sample")
        for s in samples:
            if tuple(s.shape) != shape:
                raise DataFormatError(
                    f"sample {s.sample_id!r} has slice shape {s.shape}, expected {shape}"
                )
        ids = [s.sample_id for s in samples]
        if len(set(ids)) != len(ids):
            raise DataFormatError("duplicate sample ids")
        if self.domain is None:
            lo = min(float(s.times[0]) for s in samples)
            hi = max(float(s.times[-1]) for s in samples)
            domain = (lo, hi)
        else:
            domain = tuple(float(x) for x in self.domain)
        a, b = domain
        if not (math.isfinite(a) and math.isfinite(b) and a < b):
            raise DataFormatError(f"invalid domain {domain}; need finite a < b")
        for s in samples:
            if s.times[0] < a - 1e-12 or s.times[-1] > b + 1e-12:
                raise DataFormatError(f"sample {s.sample_id!r} has times outside domain {domain}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "domain", domain)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def n_entries(self):
        return int(np.prod(self.shape))

    @property
    def n_observed(self):
        return sum(s.n_observed for s in self.samples)

    def subset(self, indices):
        return Dataset(tuple(self.samples[i] for i in indices), self.shape, self.domain)

    def distinct_times(self):
        return np.unique(np.concatenate([s.times for s in self.samples]))

    def check_estimable(self):
        """Raise unless some sample has at least two time points."""
        if not any(s.n_times >= 2 for s in self.samples):
            raise DataFormatError("at least one sample needs two or more time points")
        return self


def entry_labels(shape):
    """Column labels ``"j1.j2..."`` (1-based) in vectorization order."""
    idx = np.indices(shape).reshape(len(shape), -1, order="F").T
    return [".".join(str(int(i) + 1) for i in row) for row in idx]


def _parse_header(header, path):
    if len(header) < 3 or header[0].strip() != "sample_id" or header[1].strip() != "time":
        raise DataFormatError(f"{path}: header must start with 'sample_id,time' followed by entry columns")
    indices = []
    for col, name in enumerate(header[2:], start=3):
        parts = name.strip().split(".")
        try:
            idx = tuple(int(p) for p in parts)
        except ValueError:
            raise DataFormatError(f"{path}: column {col} has malformed multi-index {name!r}") from None
        if any(i < 1 for i in idx):
            raise DataFormatError(f"{path}: column {col} multi-index {name!r} must be 1-based")
        indices.append(idx)
    orders = {len(i) for i in indices}
    if len(orders) != 1:
        raise DataFormatError(f"{path}: entry columns mix tensor orders {sorted(orders)}")
    shape = tuple(max(i[d] for i in indices) for d in range(orders.pop()))
    if len(set(indices)) != len(indices) or len(indices) != int(np.prod(shape)):
        raise DataFormatError(f"{path}: entry columns do not enumerate a full tensor of shape {shape}")
    return indices, shape


def load_csv(path, sidecar=None):
    """Read a long-format CSV: ``sample_id, time, <entry columns>``.

    Empty cells are missing entries.  A JSON sidecar (``<stem>.json`` next to
    the CSV, or ``sidecar``) may fix ``domain`` and ``shape``.
    """
    path = Path(path)
    meta = {}
    side = Path(sidecar) if sidecar is not None else path.with_suffix(".json")
    if side.exists():
        try:
            meta = json.loads(side.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{side}: invalid JSON sidecar ({exc})") from None
        unknown = set(meta) - {"domain", "shape"}
        if unknown:
            raise DataFormatError(f"{side}: unknown sidecar keys {sorted(unknown)}")

    if not path.is_file():
        raise DataFormatError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        indices, shape = _parse_header(header, path)
        if "shape" in meta and tuple(meta["shape"]) != shape:
            raise DataFormatError(f"{path}: header shape {shape} disagrees with sidecar {meta['shape']}")
        order = np.array([np.ravel_multi_index([i - 1 for i in idx], shape, order="F") for idx in indices])
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}")
            sid = row[0].strip()
            try:
                t = float(row[1])
            except ValueError:
                raise DataFormatError(f"{path}: row {lineno}, column 'time': non-numeric {row[1]!r}") from None
            if not math.isfinite(t):
                raise DataFormatError(f"{path}: row {lineno}, column 'time': non-finite value")
            vec = np.full(len(indices), np.nan)
            for c, cell in enumerate(row[2:]):
                cell = cell.strip()
                if cell == "":
                    continue
                try:
                    vec[order[c]] = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {lineno}, column {header[c + 2]!r}: non-numeric {cell!r}"
                    ) from None
                if not math.isfinite(vec[order[c]]):
                    raise DataFormatError(f"{path}: row {lineno}, column {header[c + 2]!r}: non-finite value")
            per = rows.setdefault(sid, {})
            if t in per:
                raise DataFormatError(f"{path}: row {lineno}: duplicate time {t!r} for sample {sid!r}")
            per[t] = vec

    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    samples = []
    for sid, per in rows.items():
        times = np.array(sorted(per))
        flat = np.stack([per[t] for t in times])
        samples.append(LongitudinalSample(sid, times, _unvec_slices(flat, shape)))
    domain = tuple(meta["domain"]) if "domain" in meta else None
    return Dataset(tuple(samples), shape, domain)


def write_csv(dataset, path, sidecar=True):
    """Write ``dataset`` in the format read by :func:`load_csv`."""
    path = Path(path)
    labels = entry_labels(dataset.shape)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "time"] + labels)
        for s in dataset.samples:
            flat = s.flat_values()
            for t, vec in zip(s.times, flat):
                writer.writerow([s.sample_id, repr(float(t))] + ["" if np.isnan(v) else repr(float(v)) for v in vec])
    if sidecar:
        meta = {"domain": list(dataset.domain), "shape": list(dataset.shape)}
        path.with_suffix(".json").write_text(json.dumps(meta), encoding="utf-8")
    return path


def sparsify(dataset, proportion, seed=None, unit="entry"):
    """Remove ``floor(proportion * n_observed)`` observations uniformly at random.

    ``unit="entry"`` removes individual tensor entries, ``unit="slice"``
    whole time points (the count then refers to slices).  Removals that
    would leave a sample with fewer than two informative time points are
    skipped and replaced by the next candidate.  Time points left without
    any observed entry are dropped.
    """
    if not 0 <= proportion < 1:
        raise ConfigError(f"sparsity proportion must lie in [0, 1), got {proportion}")
    if unit not in ("entry", "slice"):
        raise ConfigError(f"unit must be 'entry' or 'slice', got {unit!r}")
    rng = np.random.default_rng(seed)
    masks = [s.flat_mask().copy() for s in dataset.samples]
    if proportion == 0:
        return dataset

    # candidate (sample, time, entry) triples; entry = -1 for slice mode
    if unit == "entry":
        cand = np.concatenate([
            np.column_stack([np.full(m.sum(), i), *np.nonzero(m)]) for i, m in enumerate(masks)
        ])
    else:
        cand = np.concatenate([
            np.column_stack([np.full(int(m.any(1).sum()), i), np.nonzero(m.any(1))[0],
                             np.full(int(m.any(1).sum()), -1)])
            for i, m in enumerate(masks)
        ])
    target = int(math.floor(proportion * len(cand)))
    per_time = [m.sum(1) for m in masks]
    informative = [int((c > 0).sum()) for c in per_time]
    removed = 0
    for i, k, j in cand[rng.permutation(len(cand))]:
        if removed == target:
            break
        drop = per_time[i][k] if j < 0 else 1
        if per_time[i][k] - drop == 0 and informative[i] <= 2:
            continue
        if j < 0:
            masks[i][k, :] = False
        else:
            masks[i][k, j] = False
        per_time[i][k] -= drop
        if per_time[i][k] == 0:
            informative[i] -= 1
        removed += 1
    if removed < target:
        raise ConfigError(
            f"cannot remove {target} observations while keeping two time points per sample"
        )

    samples = []
    for s, m in zip(dataset.samples, masks):
        keep = m.any(1)
        vals = s.flat_values()[keep].copy()
        vals[~m[keep]] = np.nan
        samples.append(LongitudinalSample(s.sample_id, s.times[keep], _unvec_slices(vals, dataset.shape)))
    return Dataset(tuple(samples), dataset.shape, dataset.domain)


def center(dataset, mean):
    """Subtract the mean field evaluated at each observation time."""
    samples = []
    for s in dataset.samples:
        samples.append(replace(s, values=s.values - mean(s.times), mask=s.mask))
    return Dataset(tuple(samples), dataset.shape, dataset.domain)
