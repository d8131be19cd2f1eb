"""Datasets with protected-group labels: loading, scaling, synthesis, partitioning."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed input data."""


@dataclass(frozen=True)
class Dataset:
    """Points with a per-point protected-group label in ``0..G-1``.

    ``components`` is only set for synthetic data and records the mixture
    component each point was drawn from.
    """

    points: np.ndarray
    groups: np.ndarray
    feature_names: tuple[str, ...] = ()
    group_names: tuple[str, ...] = ()
    components: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        groups = np.asarray(self.groups, dtype=np.int64)
        if points.ndim != 2 or groups.shape != (points.shape[0],):
            raise DataError("points must be n x d and groups length n")
        if not np.all(np.isfinite(points)):
            raise DataError("all coordinates must be finite")
        if groups.size and groups.min() < 0:
            raise DataError("group labels must be non-negative")
        n_groups = int(groups.max()) + 1 if groups.size else 0
        if np.any(np.bincount(groups, minlength=n_groups) == 0):
            raise DataError("every group label in 0..G-1 must be non-empty")
        points.setflags(write=False)
        groups.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "groups", groups)
        if not self.feature_names:
            names = tuple(f"x{c}" for c in range(points.shape[1]))
            object.__setattr__(self, "feature_names", names)
        if not self.group_names:
            names = tuple(str(g) for g in range(n_groups))
            object.__setattr__(self, "group_names", names)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) + 1

    @property
    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.groups, minlength=self.n_groups)

    @property
    def group_index(self) -> list[np.ndarray]:
        """Row indices of each group, in dataset order."""
        return [np.flatnonzero(self.groups == s) for s in range(self.n_groups)]

    def group_points(self, s: int) -> np.ndarray:
        return self.points[self.groups == s]

    def pi(self, s: int) -> float:
        """Share of group ``s`` in the data, ``n_s / n``."""
        return float(self.group_sizes[s]) / self.n

    def with_points(self, points: np.ndarray, feature_names=None) -> "Dataset":
        return Dataset(points, self.groups,
                       tuple(feature_names) if feature_names is not None else (),
                       self.group_names, self.components)


def load_csv(
    path: str | Path,
    group_column: str,
    feature_columns: Sequence[str] | None = None,
    group_map: Mapping[str, int] | None = None,
) -> Dataset:
    """Read a headered CSV file into a :class:`Dataset` with raw features.

    Group values are encoded in order of first appearance unless
    ``group_map`` is given. Feature columns default to every column except
    the group column. Row and column numbers in error messages are 1-based
    data rows and header names.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [r for r in reader if r and any(c.strip() for c in r)]

    if group_column not in header:
        raise DataError(f"missing column {group_column!r}")
    if feature_columns is None:
        feature_columns = [h for h in header if h != group_column]
    for c in feature_columns:
        if c not in header:
            raise DataError(f"missing column {c!r}")
    if not feature_columns:
        raise DataError("no feature columns")
    g_pos = header.index(group_column)
    f_pos = [header.index(c) for c in feature_columns]

    points = np.empty((len(rows), len(f_pos)))
    raw_groups = []
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise DataError(f"row {r} has {len(row)} fields, expected {len(header)}")
        for c, pos in enumerate(f_pos):
            cell = row[pos].strip()
            try:
                points[r - 1, c] = float(cell)
            except ValueError:
                raise DataError(
                    f"non-numeric value at row {r}, column {feature_columns[c]!r}"
                ) from None
        raw_groups.append(row[g_pos].strip())

    if group_map is None:
        group_map = {}
        for g in raw_groups:
            group_map.setdefault(g, len(group_map))
    else:
        group_map = dict(group_map)
        unknown = sorted(set(raw_groups) - set(group_map))
        if unknown:
            raise DataError(f"group values missing from mapping: {unknown}")
    if len(set(raw_groups)) < 2:
        raise DataError("fewer than two protected groups")
    labels = np.array([group_map[g] for g in raw_groups], dtype=np.int64)
    names = [None] * (max(group_map.values()) + 1)
    for k, v in group_map.items():
        names[v] = k
    try:
        return Dataset(points, labels, tuple(feature_columns),
                       tuple(str(n) for n in names))
    except DataError as exc:
        raise DataError(f"{exc} (check the group mapping)") from None


def standardize(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean, unit population-variance columns; constant columns dropped.

    Returns the scaled matrix and the boolean mask of kept columns.
    """
    mean = points.mean(axis=0)
    std = points.std(axis=0)
    scale = np.maximum(np.abs(mean), 1.0)
    keep = std > 1e-12 * scale
    if not keep.any():
        raise DataError("all feature columns are constant")
    return (points[:, keep] - mean[keep]) / std[keep], keep


def preprocess(ds: Dataset, l2_normalize: bool = False) -> Dataset:
    """Standardize features and optionally scale each row to unit L2 norm."""
    if ds.n < 2:
        raise DataError("need at least two points to standardize")
    x, keep = standardize(ds.points)
    if not keep.all():
        dropped = [n for n, k in zip(ds.feature_names, keep) if not k]
        warnings.warn(f"dropping constant columns: {dropped}", stacklevel=2)
    if l2_normalize:
        norms = np.linalg.norm(x, axis=1, keepdims=True)
        x = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    names = [n for n, k in zip(ds.feature_names, keep) if k]
    return ds.with_points(x, names)


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian-mixture generator settings.

    Components are split into ``n_groups`` consecutive chunks and a point's
    group is the chunk of its component. With ``equal_groups`` each group
    gets ``n / n_groups`` points (remainder to the first groups) and the
    component is drawn within the group's chunk.
    """

    n: int
    d: int = 2
    J: int = 4
    dirichlet_alpha: float | Sequence[float] = 1.0
    mean_range: tuple[float, float] = (-20.0, 20.0)
    sigma_range: tuple[float, float] = (1.0, 3.0)
    min_mean_separation: float = 1.0
    seed: int = 0
    n_groups: int = 2
    equal_groups: bool = False
    standardize: bool = True
    max_mean_tries: int = 10_000

    def __post_init__(self):
        if self.n_groups < 2 or self.J % self.n_groups:
            raise DataError("J must be a positive multiple of n_groups")
        if self.J < self.n_groups:
            raise DataError("J must be at least n_groups")
        if self.n < self.J:
            raise DataError("n must be at least J")
        lo, hi = self.sigma_range
        if not 0 < lo <= hi:
            raise DataError("sigma_range must lie in (0, inf)")
        if self.mean_range[0] >= self.mean_range[1]:
            raise DataError("mean_range must be a proper interval")
        if self.min_mean_separation <= 0:
            raise DataError("min_mean_separation must be positive")
        alpha = np.broadcast_to(np.asarray(self.dirichlet_alpha, float), (self.J,))
        if np.any(alpha <= 0):
            raise DataError("dirichlet_alpha must be positive")


def _sample_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = spec.mean_range
    means = np.empty((spec.J, spec.d))
    tries = 0
    k = 0
    while k < spec.J:
        cand = rng.uniform(lo, hi, size=spec.d)
        tries += 1
        if tries > spec.max_mean_tries:
            raise DataError(
                "could not place well-separated means; use a larger mean_range"
            )
        if k and np.min(np.linalg.norm(means[:k] - cand, axis=1)) < spec.min_mean_separation:
            continue
        means[k] = cand
        k += 1
    return means


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    alpha = np.broadcast_to(np.asarray(spec.dirichlet_alpha, float), (spec.J,))
    means = _sample_means(spec, rng)
    sigmas = rng.uniform(*spec.sigma_range, size=spec.J)
    weights = rng.dirichlet(alpha)
    per_group = spec.J // spec.n_groups

    if spec.equal_groups:
        sizes = np.full(spec.n_groups, spec.n // spec.n_groups)
        sizes[: spec.n % spec.n_groups] += 1
        comps = []
        for s, size in enumerate(sizes):
            chunk = np.arange(s * per_group, (s + 1) * per_group)
            w = weights[chunk] / weights[chunk].sum()
            comps.append(rng.choice(chunk, size=size, p=w))
        comp = np.concatenate(comps)
    else:
        comp = rng.choice(spec.J, size=spec.n, p=weights)
        if np.unique(comp // per_group).size < spec.n_groups:
            raise DataError("a protected group received no samples; change the seed")

    x = means[comp] + sigmas[comp, None] * rng.standard_normal((spec.n, spec.d))
    if spec.standardize:
        x, _ = standardize(x)
    return Dataset(x, comp // per_group, components=comp)


@dataclass(frozen=True)
class Partitioning:
    """Random split of each group into ``L`` blocks of near-equal size.

    ``blocks[l][s]`` holds the dataset row indices of group ``s`` in block
    ``l``.
    """

    L: int
    blocks: tuple[tuple[np.ndarray, ...], ...]
    target_size: int


def make_partitioning(ds: Dataset, m: int, seed: int = 0) -> Partitioning:
    if m < 2 or m > max(ds.n, 2):
        raise DataError("partition size m must satisfy 2 <= m <= n")
    L = max(1, int(math.floor(ds.n / m + 0.5)))
    L = min(L, int(ds.group_sizes.min()))
    rng = np.random.default_rng(seed)
    per_group = [np.array_split(rng.permutation(idx), L) for idx in ds.group_index]
    blocks = tuple(tuple(chunks[l] for chunks in per_group) for l in range(L))
    return Partitioning(L, blocks, m)


def full_partitioning(ds: Dataset) -> Partitioning:
    """The single block holding every point."""
    return Partitioning(1, (tuple(ds.group_index),), ds.n)
