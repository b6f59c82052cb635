"""Data model and the extended design that folds cluster effects into one
least-squares problem.

The extended design for ``q = 1`` is ``[X : A]`` where ``A`` is the one-hot
cluster assignment matrix; for ``q = 2`` a block of slope columns
``A[:, j] * z`` is appended.  Coefficients are laid out as
``[beta ; gamma_1 ; gamma_2]``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyCluster,
    EmptyClusterWarning,
    LengthMismatch,
    MissingAuxiliary,
    ShapeMismatch,
    UnknownLabel,
)

ROLES = ("train", "validation", "test")
MAX_ORDER = 2


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def first_appearance_order(labels) -> list:
    """Distinct labels in order of first appearance."""
    return list(dict.fromkeys(np.asarray(labels).tolist()))


@dataclass(frozen=True, eq=False)
class ClusteredDataset:
    """Rows of covariates, optional auxiliary covariate, outcome and cluster label.

    ``role`` tags each row as train/validation/test; it defaults to all-train.
    Arrays are copied and made read-only on construction.
    """

    X: np.ndarray
    y: np.ndarray
    labels: np.ndarray
    z: Optional[np.ndarray] = None
    role: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        X = _frozen(self.X)
        if X.ndim == 1:
            X = _frozen(X.reshape(-1, 1))
        if X.ndim != 2:
            raise ShapeMismatch("X must be a 2-D matrix")
        n = X.shape[0]
        y = _frozen(self.y).ravel()
        labels = np.array(self.labels, copy=True).ravel()
        labels.setflags(write=False)
        if y.shape[0] != n or labels.shape[0] != n:
            raise LengthMismatch(f"X has {n} rows but y has {y.shape[0]} and labels {labels.shape[0]}")
        if not np.all(np.isfinite(X)):
            raise ShapeMismatch("X contains missing or non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "labels", labels)
        if self.z is not None:
            z = _frozen(self.z).ravel()
            if z.shape[0] != n:
                raise LengthMismatch(f"z has length {z.shape[0]}, expected {n}")
            object.__setattr__(self, "z", z)
        role = np.full(n, "train", dtype=object) if self.role is None else np.array(self.role, dtype=object).ravel()
        if role.shape[0] != n:
            raise LengthMismatch("role must have one entry per row")
        bad = set(role.tolist()) - set(ROLES)
        if bad:
            raise ValueError(f"unknown row roles: {sorted(bad)}")
        role.setflags(write=False)
        object.__setattr__(self, "role", role)
        if self.feature_names is None:
            object.__setattr__(self, "feature_names", tuple(f"x{j + 1}" for j in range(X.shape[1])))
        elif len(self.feature_names) != X.shape[1]:
            raise LengthMismatch("feature_names must match the number of covariate columns")
        else:
            object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def cluster_order(self) -> list:
        return first_appearance_order(self.labels)

    def subset(self, mask) -> "ClusteredDataset":
        mask = np.asarray(mask)
        return ClusteredDataset(
            X=self.X[mask],
            y=self.y[mask],
            labels=self.labels[mask],
            z=None if self.z is None else self.z[mask],
            role=self.role[mask],
            feature_names=self.feature_names,
        )

    def with_role(self, *roles: str) -> "ClusteredDataset":
        return self.subset(np.isin(self.role, roles))

    def with_intercept(self) -> "ClusteredDataset":
        """Copy with an all-ones column prepended to ``X``."""
        X = np.hstack([np.ones((self.n, 1)), self.X])
        return ClusteredDataset(X, self.y, self.labels, self.z, self.role, ("(intercept)",) + self.feature_names)


def concat(parts: Sequence[ClusteredDataset]) -> ClusteredDataset:
    if any((d.z is None) != (parts[0].z is None) for d in parts):
        raise MissingAuxiliary("cannot concatenate datasets with and without z")
    return ClusteredDataset(
        X=np.vstack([d.X for d in parts]),
        y=np.concatenate([d.y for d in parts]),
        labels=np.concatenate([d.labels for d in parts]),
        z=None if parts[0].z is None else np.concatenate([d.z for d in parts]),
        role=np.concatenate([d.role for d in parts]),
        feature_names=parts[0].feature_names,
    )


def one_hot_assignment(labels, cluster_order: Sequence, empty: str = "warn") -> np.ndarray:
    """Binary n-by-K matrix with ``A[i, j] = 1`` iff row i is in cluster ``cluster_order[j]``.

    ``empty`` controls what happens when a cluster in ``cluster_order`` has no
    rows: ``"warn"`` (default), ``"error"`` or ``"ignore"``.
    """
    labels = np.asarray(labels).ravel()
    if len(cluster_order) < 1:
        raise ValueError("cluster_order must list at least one cluster")
    index = {c: j for j, c in enumerate(cluster_order)}
    if len(index) != len(cluster_order):
        raise ValueError("cluster_order contains duplicates")
    try:
        cols = np.fromiter((index[c] for c in labels.tolist()), dtype=np.intp, count=labels.shape[0])
    except KeyError as exc:
        raise UnknownLabel(f"label {exc.args[0]!r} is not in cluster_order") from None
    A = np.zeros((labels.shape[0], len(cluster_order)))
    A[np.arange(labels.shape[0]), cols] = 1.0
    counts = A.sum(axis=0)
    if np.any(counts == 0) and empty != "ignore":
        missing = [cluster_order[j] for j in np.flatnonzero(counts == 0)]
        msg = f"clusters without rows: {missing}"
        if empty == "error":
            raise EmptyCluster(msg)
        warnings.warn(msg, EmptyClusterWarning, stacklevel=2)
    return A


@dataclass(frozen=True, eq=False)
class ExtendedDesign:
    """The matrix ``[X : A]`` (q=1) or ``[X : A : z*A]`` (q=2) with block bookkeeping."""

    Xt: np.ndarray
    p: int
    K: int
    q: int
    cluster_order: tuple = field(default=())

    @property
    def n_columns(self) -> int:
        return self.p + self.q * self.K

    @property
    def block_index(self) -> np.ndarray:
        """Block id per column: 0 for fixed effects, i for cluster-effect block i."""
        return np.concatenate([np.zeros(self.p, dtype=int), np.repeat(np.arange(1, self.q + 1), self.K)])

    def block_slice(self, i: int) -> slice:
        """Columns of cluster-effect block ``i`` (1-based)."""
        start = self.p + (i - 1) * self.K
        return slice(start, start + self.K)


def build_extended_design(data: ClusteredDataset, A: np.ndarray, q: int = 1, cluster_order=()) -> ExtendedDesign:
    if q not in (1, 2):
        raise ValueError(f"cluster-effect order q must be 1 or 2, got {q}")
    A = np.asarray(A, dtype=float)
    if A.shape[0] != data.n:
        raise ShapeMismatch(f"A has {A.shape[0]} rows, dataset has {data.n}")
    blocks = [data.X, A]
    if q == 2:
        if data.z is None:
            raise MissingAuxiliary("q=2 requires the auxiliary covariate z")
        blocks.append(data.z[:, None] * A)
    Xt = _frozen(np.hstack(blocks))
    return ExtendedDesign(Xt=Xt, p=data.p, K=A.shape[1], q=q, cluster_order=tuple(cluster_order))


def design_for(data: ClusteredDataset, cluster_order=None, q: int = 1, empty: str = "warn") -> ExtendedDesign:
    """Convenience wrapper: one-hot the labels and build the extended design."""
    order = data.cluster_order() if cluster_order is None else list(cluster_order)
    A = one_hot_assignment(data.labels, order, empty=empty)
    return build_extended_design(data, A, q=q, cluster_order=order)


@dataclass(frozen=True, eq=False)
class CoefficientSplit:
    beta: np.ndarray
    Gamma: np.ndarray  # q x K, row i holds the i-th cluster-effect block

    def concatenate(self) -> np.ndarray:
        return np.concatenate([self.beta, self.Gamma.ravel()])


def split_coefficients(beta_tilde, p: int, K: int, q: int) -> CoefficientSplit:
    v = np.asarray(beta_tilde, dtype=float).ravel()
    if v.shape[0] != p + q * K:
        raise LengthMismatch(f"coefficient vector has length {v.shape[0]}, expected p + qK = {p + q * K}")
    return CoefficientSplit(beta=_frozen(v[:p]), Gamma=_frozen(v[p:].reshape(q, K)))
