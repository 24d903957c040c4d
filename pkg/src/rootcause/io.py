"""CSV ingestion and preprocessing of count data.

Matrix files are UTF-8 CSV with a header row and a label column:

    label,X1,X2,...
    s1,0.5,1.25,...

Floats are written with ``repr`` so that reading a written file returns the
exact same doubles.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .sem import Dataset

log = logging.getLogger(__name__)


class InputError(ValueError):
    """Malformed or unusable input file."""


@dataclass
class LabeledMatrix:
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray
    corner: str = "label"

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def _parse_float(cell: str, where: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise InputError(f"non-numeric cell {cell!r} at {where}") from None
    if not math.isfinite(value):
        raise InputError(f"non-finite cell {cell!r} at {where}")
    return value


def parse_csv(text: str, source: str = "<csv>") -> LabeledMatrix:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]  # tolerate a trailing blank line
    if not rows:
        raise InputError(f"{source}: empty file")
    header = rows[0]
    if len(header) < 2:
        raise InputError(f"{source}: header needs a label column and at least one data column")
    cols = [h.strip() for h in header[1:]]
    seen: dict[str, int] = {}
    for c, name in enumerate(cols, start=2):
        if name in seen:
            raise InputError(f"{source}: duplicate header {name!r} in columns {seen[name]} and {c}")
        seen[name] = c
    labels = []
    values = np.empty((len(rows) - 1, len(cols)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{source}: row {i} has {len(row)} fields, expected {len(header)}")
        labels.append(row[0].strip())
        for j, cell in enumerate(row[1:]):
            values[i - 2, j] = _parse_float(cell.strip(), f"{source} row {i}, column {j + 2} ({cols[j]!r})")
    return LabeledMatrix(tuple(labels), tuple(cols), values, header[0].strip())


def load_csv(path: str | Path) -> LabeledMatrix:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from None
    return parse_csv(text, str(path))


def format_csv(matrix: LabeledMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([matrix.corner, *matrix.col_labels])
    for label, row in zip(matrix.row_labels, matrix.values):
        w.writerow([label, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def write_csv(path: str | Path, matrix: LabeledMatrix) -> None:
    Path(path).write_text(format_csv(matrix), encoding="utf-8")


def load_dataset(obs_path: str | Path, case_path: str | Path, case_row: int = 0) -> Dataset:
    """Observational matrix plus one interventional row, matched by column name."""
    obs = load_csv(obs_path)
    case = load_csv(case_path)
    if case.shape[0] == 0:
        raise InputError(f"{case_path}: no data rows")
    if not 0 <= case_row < case.shape[0]:
        raise InputError(f"{case_path}: row {case_row} out of range")
    missing = [c for c in obs.col_labels if c not in case.col_labels]
    if missing:
        raise InputError(f"{case_path}: missing columns {missing[:5]}")
    extra = [c for c in case.col_labels if c not in obs.col_labels]
    if extra:
        raise InputError(f"{case_path}: columns not in observational data {extra[:5]}")
    if obs.shape[0] < 2:
        raise InputError(f"{obs_path}: need at least two observational rows")
    sd = obs.values.std(axis=0)
    flat = [obs.col_labels[j] for j in np.flatnonzero(sd == 0)]
    if flat:
        raise InputError(f"{obs_path}: zero-variance columns {flat[:5]}")
    pos = {name: j for j, name in enumerate(case.col_labels)}
    x = case.values[case_row, [pos[c] for c in obs.col_labels]]
    return Dataset(obs.values, x, obs.col_labels)


def dataset_to_csv(dataset: Dataset) -> tuple[str, str]:
    """Observational and case CSV text for a dataset."""
    n = dataset.n
    obs = LabeledMatrix(tuple(f"obs{i + 1}" for i in range(n)), tuple(dataset.names), dataset.observations, "sample")
    case = LabeledMatrix(("case",), tuple(dataset.names), dataset.case[None, :], "sample")
    return format_csv(obs), format_csv(case)


# ---------------------------------------------------------------- count data


@dataclass
class CountMatrix:
    """Raw read counts, samples x genes."""

    samples: tuple[str, ...]
    genes: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=float)
        if c.shape != (len(self.samples), len(self.genes)):
            raise InputError("count matrix shape does not match its labels")
        if np.any(c < 0) or np.any(c != np.round(c)):
            bad = np.argwhere((c < 0) | (c != np.round(c)))[0]
            raise InputError(f"counts must be nonnegative integers (sample {self.samples[bad[0]]!r}, gene {self.genes[bad[1]]!r})")
        for kind, labels in (("sample", self.samples), ("gene", self.genes)):
            if len(set(labels)) != len(labels):
                raise InputError(f"duplicate {kind} labels")
        self.counts = c

    @classmethod
    def from_matrix(cls, m: LabeledMatrix) -> "CountMatrix":
        return cls(m.row_labels, m.col_labels, m.values)


@dataclass
class Preprocessed:
    samples: tuple[str, ...]
    genes: tuple[str, ...]
    values: np.ndarray
    size_factors: np.ndarray
    dropped_low: tuple[str, ...]
    dropped_correlated: tuple[str, ...]

    def to_matrix(self) -> LabeledMatrix:
        return LabeledMatrix(self.samples, self.genes, self.values, "sample")


def size_factors(counts: np.ndarray) -> np.ndarray:
    """Median-of-ratios size factor per sample; genes with any zero count are left out."""
    usable = np.all(counts > 0, axis=0)
    if not usable.any():
        raise InputError(
            "size factors undefined: every gene has a zero count; "
            "raise --min-count or lower --max-zero-frac to filter sparse genes"
        )
    logc = np.log(counts[:, usable])
    log_geo = logc.mean(axis=0)
    return np.exp(np.median(logc - log_geo, axis=1))


def _correlated_later(values: np.ndarray, cutoff: float, block: int = 512) -> np.ndarray:
    """Mask of genes dropped because an earlier kept gene has |corr| above ``cutoff``."""
    n, g = values.shape
    centred = values - values.mean(axis=0)
    norm = np.sqrt((centred**2).sum(axis=0))
    unit = np.divide(centred, norm, out=np.zeros_like(centred), where=norm > 0)
    drop = np.zeros(g, dtype=bool)
    for lo in range(0, g, block):
        hi = min(g, lo + block)
        corr = unit[:, lo:hi].T @ unit  # block x g
        for a in range(hi - lo):
            j = lo + a
            if drop[j]:
                continue
            later = np.flatnonzero(np.abs(corr[a, j + 1 :]) > cutoff) + j + 1
            drop[later] = True
    return drop


def preprocess_counts(
    counts: CountMatrix,
    min_count: float = 10,
    max_zero_frac: float = 0.9,
    corr_cutoff: float = 0.999,
    pseudocount: float = 1.0,
    log_then_divide: bool = False,
) -> Preprocessed:
    """Filter sparse genes, normalize by size factors, log-transform, and thin near-duplicates.

    By default ``y = log((count + pseudocount) / s)``.  With ``log_then_divide``
    the transform is ``log(count + pseudocount) / s`` instead.  Of two genes whose
    correlation exceeds ``corr_cutoff`` in absolute value the later one is dropped.
    """
    c = counts.counts
    if c.shape[0] < 2:
        raise InputError("need at least two samples")
    low = (c < min_count).mean(axis=0) > max_zero_frac
    keep = np.flatnonzero(~low)
    if keep.size == 0:
        raise InputError("no gene survives the count filter")
    kept = c[:, keep]
    s = size_factors(kept)
    if log_then_divide:
        y = np.log(kept + pseudocount) / s[:, None]
    else:
        y = np.log((kept + pseudocount) / s[:, None])
    dup = _correlated_later(y, corr_cutoff)
    genes = tuple(counts.genes[j] for j in keep)
    log.info("dropped %d sparse and %d correlated genes", int(low.sum()), int(dup.sum()))
    return Preprocessed(
        counts.samples,
        tuple(g for g, d in zip(genes, dup) if not d),
        y[:, ~dup],
        s,
        tuple(counts.genes[j] for j in np.flatnonzero(low)),
        tuple(g for g, d in zip(genes, dup) if d),
    )


def parse_int_list(text: str) -> list[int]:
    text = text.strip().strip("[]")
    if not text:
        return []
    try:
        return [int(t) for t in text.replace(" ", "").split(",")]
    except ValueError:
        raise InputError(f"expected a comma-separated list of integers, got {text!r}") from None


def parse_thresholds(text: str) -> Sequence[float] | None:
    if text.strip().lower() == "auto":
        return None
    try:
        return [float(t) for t in text.strip().strip("[]").split(",") if t.strip()]
    except ValueError:
        raise InputError(f"bad threshold list {text!r}") from None
