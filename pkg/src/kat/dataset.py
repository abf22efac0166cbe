"""Sample/dataset data model, CSV ingestion, splitting, merging, normalization.

A :class:`Dataset` stores samples as two read-only matrices (features,
targets) with historical rows always preceding synthetic rows. CSV files use
comma separators, ``.`` decimals, UTF-8, and a header row; origin counts and
normalization statistics travel in a JSON sidecar.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    BoundaryOutOfRange,
    DimensionMismatch,
    EmptyDataset,
    EmptyFile,
    MissingColumn,
    NonNumericCell,
    OriginViolation,
)


class Origin(Enum):
    HISTORICAL = "historical"
    SYNTHETIC = "synthetic"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Sample:
    """One observation: a feature vector, a target vector, and its origin."""

    features: np.ndarray
    target: np.ndarray
    origin: Origin

    def __post_init__(self):
        object.__setattr__(self, "features", _readonly(np.atleast_1d(self.features)))
        object.__setattr__(self, "target", _readonly(np.atleast_1d(self.target)))
        if self.features.ndim != 1 or self.target.ndim != 1:
            raise DimensionMismatch("sample features/target must be 1-D vectors")
        if not (np.isfinite(self.features).all() and np.isfinite(self.target).all()):
            raise DimensionMismatch("sample contains non-finite components")


class Dataset:
    """Ordered collection of samples, historical first, then synthetic.

    Parameters
    ----------
    features, targets:
        Matrices of shape (N, d) and (N, t).
    n_historical:
        Number of leading historical rows; the remaining rows are synthetic.
    feature_names, target_names:
        Column labels used for CSV round-trips. Defaults are generated.
    """

    def __init__(self, features, targets, n_historical, feature_names=None, target_names=None):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if features.shape[0] != targets.shape[0]:
            raise DimensionMismatch(
                f"feature rows ({features.shape[0]}) != target rows ({targets.shape[0]})"
            )
        if not (0 <= n_historical <= features.shape[0]):
            raise OriginViolation("n_historical outside [0, N]")
        if not (np.isfinite(features).all() and np.isfinite(targets).all()):
            raise DimensionMismatch("dataset contains non-finite components")
        self.features = _readonly(features)
        self.targets = _readonly(targets)
        self.n_historical = int(n_historical)
        if feature_names is None:
            feature_names = [f"x{i}" for i in range(features.shape[1])]
        if target_names is None:
            target_names = [f"y{i}" for i in range(targets.shape[1])]
        if len(feature_names) != features.shape[1]:
            raise DimensionMismatch("feature_names length != feature dimension")
        if len(target_names) != targets.shape[1]:
            raise DimensionMismatch("target_names length != target dimension")
        self.feature_names = tuple(feature_names)
        self.target_names = tuple(target_names)

    # -- basic container protocol ------------------------------------------
    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Sample:
        origin = Origin.HISTORICAL if i < self.n_historical else Origin.SYNTHETIC
        return Sample(self.features[i], self.targets[i], origin)

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(len(self))]

    @property
    def n_synthetic(self) -> int:
        return len(self) - self.n_historical

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    def origin_of(self, i: int) -> Origin:
        return Origin.HISTORICAL if i < self.n_historical else Origin.SYNTHETIC

    # -- construction helpers ----------------------------------------------
    @classmethod
    def from_samples(cls, samples, feature_names=None, target_names=None) -> "Dataset":
        samples = list(samples)
        if not samples:
            raise EmptyDataset("cannot build a dataset from zero samples")
        n_hist = sum(1 for s in samples if s.origin is Origin.HISTORICAL)
        for i, s in enumerate(samples):
            expected = Origin.HISTORICAL if i < n_hist else Origin.SYNTHETIC
            if s.origin is not expected:
                raise OriginViolation("historical samples must precede synthetic samples")
        features = np.stack([s.features for s in samples])
        targets = np.stack([s.target for s in samples])
        return cls(features, targets, n_hist, feature_names, target_names)

    def historical(self) -> "Dataset":
        return Dataset(
            self.features[: self.n_historical],
            self.targets[: self.n_historical],
            self.n_historical,
            self.feature_names,
            self.target_names,
        )

    def synthetic(self) -> "Dataset":
        return Dataset(
            self.features[self.n_historical :],
            self.targets[self.n_historical :],
            0,
            self.feature_names,
            self.target_names,
        )

    def with_targets(self, targets: np.ndarray) -> "Dataset":
        return Dataset(self.features, targets, self.n_historical, self.feature_names, self.target_names)

    def __repr__(self) -> str:
        return (
            f"Dataset(n={len(self)}, historical={self.n_historical}, "
            f"synthetic={self.n_synthetic}, d={self.feature_dim}, t={self.target_dim})"
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def load_csv(path, target_columns) -> Dataset:
    """Read a CSV file into an all-historical dataset.

    ``target_columns`` names the target columns; every other column becomes a
    feature, in file order. Raises :class:`MissingColumn`,
    :class:`NonNumericCell` (with row/column), or :class:`EmptyFile`.
    """
    path = Path(path)
    target_columns = list(target_columns)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path}: file has no header row") from None
        missing = [c for c in target_columns if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing target columns {missing}")
        tgt_idx = [header.index(c) for c in target_columns]
        feat_idx = [i for i in range(len(header)) if i not in tgt_idx]
        rows = []
        for r, row in enumerate(reader):
            if len(row) != len(header):
                raise NonNumericCell(r, "<row>", ",".join(row))
            parsed = []
            for i, cell in enumerate(row):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise NonNumericCell(r, header[i], cell) from None
            rows.append(parsed)
    if not rows:
        raise EmptyFile(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    return Dataset(
        data[:, feat_idx],
        data[:, tgt_idx],
        n_historical=len(rows),
        feature_names=[header[i] for i in feat_idx],
        target_names=target_columns,
    )


def save_csv(data: Dataset, path) -> None:
    """Write features+targets with a header row; values use round-trip repr."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(data.feature_names) + list(data.target_names))
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.features[i]] + [
                repr(float(v)) for v in data.targets[i]
            ]
            writer.writerow(row)


def split_time(data: Dataset, boundary_index: int) -> tuple[Dataset, Dataset]:
    """Split an all-historical dataset at ``boundary_index`` without shuffling."""
    if data.n_synthetic:
        raise OriginViolation("split_time expects an all-historical dataset")
    if not (0 < boundary_index < len(data)):
        raise BoundaryOutOfRange(f"boundary {boundary_index} outside (0, {len(data)})")
    train = Dataset(
        data.features[:boundary_index],
        data.targets[:boundary_index],
        boundary_index,
        data.feature_names,
        data.target_names,
    )
    test = Dataset(
        data.features[boundary_index:],
        data.targets[boundary_index:],
        len(data) - boundary_index,
        data.feature_names,
        data.target_names,
    )
    return train, test


def merge(hd: Dataset, sd: Dataset) -> Dataset:
    """Concatenate a historical dataset with a synthetic one (historical first)."""
    if sd is None or len(sd) == 0:
        return hd
    if hd.feature_dim != sd.feature_dim or hd.target_dim != sd.target_dim:
        raise DimensionMismatch(
            f"merge: ({hd.feature_dim},{hd.target_dim}) vs ({sd.feature_dim},{sd.target_dim})"
        )
    if hd.n_synthetic:
        raise OriginViolation("merge: first argument must be all-historical")
    if sd.n_historical:
        raise OriginViolation("merge: second argument must be all-synthetic")
    return Dataset(
        np.vstack([hd.features, sd.features]),
        np.vstack([hd.targets, sd.targets]),
        hd.n_historical,
        hd.feature_names,
        hd.target_names,
    )


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NormStats:
    """Per-feature z-score statistics, fitted on historical training rows only.

    Zero-variance features get a unit divisor. Targets are never scaled, so
    predictions and reports stay in original units.
    """

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", _readonly(self.mean))
        object.__setattr__(self, "std", _readonly(self.std))

    @classmethod
    def fit(cls, data: Dataset) -> "NormStats":
        if data.n_historical == 0:
            raise EmptyDataset("NormStats.fit needs at least one historical sample")
        hist = data.features[: data.n_historical]
        mean = hist.mean(axis=0)
        std = hist.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean, std)

    def transform_features(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) / self.std

    def inverse_features(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=float) * self.std + self.mean

    def apply(self, data: Dataset) -> Dataset:
        return Dataset(
            self.transform_features(data.features),
            data.targets,
            data.n_historical,
            data.feature_names,
            data.target_names,
        )


# ---------------------------------------------------------------------------
# sidecar metadata
# ---------------------------------------------------------------------------

def save_sidecar(data: Dataset, path, stats: NormStats | None = None) -> None:
    doc = {
        "feature_names": list(data.feature_names),
        "n_historical": data.n_historical,
        "n_synthetic": data.n_synthetic,
        "norm_mean": None if stats is None else [float(v) for v in stats.mean],
        "norm_std": None if stats is None else [float(v) for v in stats.std],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def load_sidecar(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("feature_names", "n_historical", "n_synthetic"):
        if key not in doc:
            raise MissingColumn(f"sidecar {path}: missing field {key!r}")
    return doc


def load_with_sidecar(csv_path, sidecar_path, target_columns) -> tuple[Dataset, NormStats | None]:
    """Load a CSV and restore origin counts (and stats) from its sidecar."""
    doc = load_sidecar(sidecar_path)
    flat = load_csv(csv_path, target_columns)
    n_hist = int(doc["n_historical"])
    if n_hist + int(doc["n_synthetic"]) != len(flat):
        raise OriginViolation("sidecar origin counts do not match CSV row count")
    data = Dataset(flat.features, flat.targets, n_hist, flat.feature_names, flat.target_names)
    stats = None
    if doc.get("norm_mean") is not None:
        stats = NormStats(np.asarray(doc["norm_mean"]), np.asarray(doc["norm_std"]))
    return data, stats
