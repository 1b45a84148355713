"""Synthetic in-domain clusters, OOD rings and CSV ingestion.

Every dataset lives in the box [-1, 1]^D.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConfigError, CSVParseError

IN_DOMAIN = "in_domain"
OOD_TRAIN = "ood_train"
OOD_EVAL = "ood_eval"
ROLES = (IN_DOMAIN, OOD_TRAIN, OOD_EVAL)
_BOX_TOL = 1e-9


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray | None = None
    split: str = "train"
    role: str = IN_DOMAIN
    scaling: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        if self.inputs.shape[0] == 0:
            raise ConfigError("a dataset needs at least one row")
        if self.role not in ROLES:
            raise ConfigError(f"unknown dataset role {self.role!r}")
        if np.any(np.abs(self.inputs) > 1.0 + _BOX_TOL):
            raise ConfigError("inputs must lie in [-1, 1]")
        if (self.labels is not None) != (self.role == IN_DOMAIN):
            raise ConfigError("labels are required for in-domain data and forbidden otherwise")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.intp)
            if self.labels.shape != (self.inputs.shape[0],):
                raise ConfigError("labels must have one entry per row")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self):
        return self.inputs.shape[1]


def default_means(n_classes, n_features, radius=0.5):
    """Class means evenly spaced on a circle in the first two coordinates."""
    if n_features < 2:
        raise ConfigError("default means need at least two input dimensions")
    angles = 2 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, n_features))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    return means


def make_gaussian_classes(n_classes=3, n_features=2, means=None, scale=0.08, n_per_class=500,
                          seed=0, split="train"):
    """Axis-aligned Gaussian clusters, one per class, clipped to the box.

    ``scale`` is a standard deviation shared by all coordinates or a
    length-D vector of per-coordinate deviations.
    """
    means = default_means(n_classes, n_features) if means is None else np.asarray(means, dtype=np.float64)
    if means.shape != (n_classes, n_features):
        raise ConfigError(f"means must have shape {(n_classes, n_features)}, got {means.shape}")
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (n_features,))
    if np.any(scale < 0):
        raise ConfigError("scale must be nonnegative")
    if np.any(np.abs(means) + 3 * scale > 1.0):
        raise ConfigError("class means need a 3-sigma margin inside [-1, 1]")
    if n_per_class < 1:
        raise ConfigError("n_per_class must be positive")
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(m, scale, size=(n_per_class, n_features)) for m in means])
    y = np.repeat(np.arange(n_classes), n_per_class)
    return Dataset(np.clip(x, -1.0, 1.0), y, split, IN_DOMAIN)


def make_ring_ood(n_features=2, radius=0.9, thickness=0.05, n_samples=500, seed=0,
                  role=OOD_TRAIN, split="train", plane_dims=None):
    """Points whose norm is uniform in [radius - thickness, radius + thickness].

    Directions are uniform on the circle (D=2) or the sphere (D>2).  With
    ``plane_dims=k`` the directions span only the first k coordinates and
    the remaining ones are zero, giving an annulus inside the data plane.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be positive")
    if thickness < 0 or radius - thickness < 0 or radius + thickness > 1.0:
        raise ConfigError("ring must satisfy 0 <= radius - thickness and radius + thickness <= 1")
    if role == IN_DOMAIN:
        raise ConfigError("an OOD ring cannot be in-domain")
    k = n_features if plane_dims is None else int(plane_dims)
    if not 1 <= k <= n_features:
        raise ConfigError(f"plane_dims must lie in [1, {n_features}]")
    rng = np.random.default_rng(seed)
    direction = np.zeros((n_samples, n_features))
    direction[:, :k] = rng.normal(size=(n_samples, k))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    norms = rng.uniform(radius - thickness, radius + thickness, size=(n_samples, 1))
    return Dataset(direction * norms, None, split, role)


class BoxScaler(TransformerMixin, BaseEstimator):
    """Per-column min-max scaling onto [-1, 1]; constant columns map to 0."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def _range(self):
        span = self.data_max_ - self.data_min_
        return span, span > 0

    def transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64)
        span, ok = self._range()
        safe = np.where(ok, span, 1.0)
        return np.where(ok, 2.0 * (X - self.data_min_) / safe - 1.0, 0.0)

    def inverse_transform(self, X):
        check_is_fitted(self, "data_min_")
        X = check_array(X, dtype=np.float64)
        span, ok = self._range()
        return np.where(ok, (X + 1.0) * 0.5 * span + self.data_min_, self.data_min_)

    def to_dict(self):
        return {"min": self.data_min_.tolist(), "max": self.data_max_.tolist()}

    @classmethod
    def from_dict(cls, d):
        s = cls()
        s.data_min_ = np.asarray(d["min"], dtype=np.float64)
        s.data_max_ = np.asarray(d["max"], dtype=np.float64)
        s.n_features_in_ = len(s.data_min_)
        return s


def _read_rows(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise CSVParseError(f"{path}: empty file")
    width = len(rows[0])
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise CSVParseError(f"{path}: expected {width} fields, found {len(row)}", row=i)
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise CSVParseError(f"{path}: non-numeric cell {cell!r}", row=i, col=j) from None
    return values


def load_csv(path, has_labels=False, role=None, split="train", scaling=None):
    """Read a numeric CSV and rescale feature columns onto [-1, 1].

    The fitted scaling is kept on ``Dataset.scaling`` and written next to the
    file as ``<path>.scaling.json``.  Pass ``scaling`` (a dict from a previous
    load) to reuse it instead of refitting.
    """
    values = _read_rows(path)
    labels = None
    if has_labels:
        if values.shape[1] < 2:
            raise CSVParseError(f"{path}: a labelled file needs at least one feature column", col=0)
        raw = values[:, -1]
        if np.any(raw != np.round(raw)) or np.any(raw < 0):
            bad = int(np.argmax((raw != np.round(raw)) | (raw < 0)))
            raise CSVParseError(f"{path}: labels must be nonnegative integers", row=bad, col=values.shape[1] - 1)
        labels = raw.astype(np.intp)
        values = values[:, :-1]
    scaler = BoxScaler.from_dict(scaling) if scaling is not None else BoxScaler().fit(values)
    inputs = np.clip(scaler.transform(values), -1.0, 1.0)
    if role is None:
        role = IN_DOMAIN if has_labels else OOD_EVAL
    sidecar = scaler.to_dict()
    with open(f"{path}.scaling.json", "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
    return Dataset(inputs, labels, split, role, sidecar)


def export_csv(dataset, path):
    """Write ``dataset`` in original units (inverse of its scaling, if any)."""
    x = dataset.inputs
    if dataset.scaling is not None:
        x = BoxScaler.from_dict(dataset.scaling).inverse_transform(x)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for i, row in enumerate(x):
            cells = [repr(float(v)) for v in row]
            if dataset.labels is not None:
                cells.append(str(int(dataset.labels[i])))
            writer.writerow(cells)
