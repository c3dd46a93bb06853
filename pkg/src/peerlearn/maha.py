"""Mahalanobis task mapper: teacher shares, tied covariance, routing.

Teachers share exact per-class feature means plus m sampled exemplars per
class.  Students pool all received exemplars, fit one tied covariance
(scatter about each exemplar's own class mean over pooled N), regularize
it with a scale-aware ridge, and route a query to the owner of the class
with the smallest Mahalanobis distance.

Share wire layout (little-endian): task_id u32, c u32, D u32, m u32,
c x D f32 means, c x m x D f32 exemplars.  The wire format requires a
uniform m per class; in-memory shares may be ragged when a class has
fewer than m samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimMismatch,
    EmptyClass,
    NotFinalized,
    SingularAfterRegularization,
)
from .numkit import RngStream, cholesky_factor

DEFAULT_EXEMPLARS_PER_CLASS = 5


def class_means(split, num_classes: int) -> np.ndarray:
    """Exact arithmetic mean of each class's vectors, (c, D)."""
    means = np.zeros((num_classes, split.x.shape[1]))
    for c in range(num_classes):
        mask = split.labels == c
        if not np.any(mask):
            raise EmptyClass(f"class {c} has no samples")
        means[c] = split.x[mask].mean(axis=0)
    return means


@dataclass
class MahaTeacherShare:
    task_id: int
    class_names: list[str]
    means: np.ndarray  # (c, D)
    exemplars: list[np.ndarray]  # per class, (m_c, D)
    m: int  # requested exemplars per class

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.shape[0] != len(self.class_names):
            raise DimMismatch("one mean per class required")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        for ex in self.exemplars:
            if ex.shape[0] < 1:
                raise EmptyClass("every class needs at least one exemplar")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def is_uniform(self) -> bool:
        return all(ex.shape[0] == self.m for ex in self.exemplars)


def sample_shared(
    ds, m: int = DEFAULT_EXEMPLARS_PER_CLASS, seed: int = 0
) -> MahaTeacherShare:
    """Means of the full training split plus m exemplars per class.

    Sampling is without replacement; a class smaller than m contributes
    all of its samples.
    """
    split = ds.split("train")
    means = class_means(split, ds.num_classes)
    exemplars = []
    for c in range(ds.num_classes):
        idx = np.where(split.labels == c)[0]
        rng = RngStream(seed).derive(0x3A3A, ds.task_id, c)
        picked = rng.sample_without_replacement(len(idx), m)
        exemplars.append(split.x[idx[sorted(picked)]])
    return MahaTeacherShare(ds.task_id, list(ds.classes), means, exemplars, m)


def share_to_bytes(share: MahaTeacherShare) -> bytes:
    if not share.is_uniform():
        raise ValueError(
            "wire format requires exactly m exemplars per class; "
            "choose m <= smallest class size"
        )
    out = struct.pack(
        "<IIII", share.task_id, share.num_classes, share.dim, share.m
    )
    out += share.means.astype("<f4").tobytes()
    out += np.stack(share.exemplars).astype("<f4").tobytes()
    return out


def share_from_bytes(buf: bytes, class_names: list[str]) -> MahaTeacherShare:
    task_id, c, dim, m = struct.unpack_from("<IIII", buf, 0)
    offset = 16
    means = np.frombuffer(buf, dtype="<f4", count=c * dim, offset=offset)
    offset += 4 * c * dim
    ex = np.frombuffer(buf, dtype="<f4", count=c * m * dim, offset=offset)
    exemplars = [row.astype(np.float64) for row in ex.reshape(c, m, dim)]
    return MahaTeacherShare(
        task_id, class_names, means.reshape(c, dim).astype(np.float64), exemplars, m
    )


def share_wire_size(c: int, dim: int, m: int) -> int:
    return 16 + 4 * c * dim + 4 * c * m * dim


class MahaBank:
    """All received class means plus one tied covariance over exemplars."""

    def __init__(self):
        self._shares: dict[int, MahaTeacherShare] = {}
        self._owners: list[tuple[int, int]] = []
        self._means: np.ndarray | None = None
        self._chol: np.ndarray | None = None
        self.covariance: np.ndarray | None = None
        self.epsilon: float | None = None
        self.pooled_count: int = 0

    def add_share(self, share: MahaTeacherShare) -> None:
        from .errors import DuplicateTask

        if share.task_id in self._shares:
            raise DuplicateTask(f"share for task {share.task_id} already pooled")
        self._shares[share.task_id] = share
        self._chol = None

    @property
    def task_ids(self) -> list[int]:
        return sorted(self._shares)

    @property
    def finalized(self) -> bool:
        return self._chol is not None

    def finalize(self, epsilon: float | None = None) -> None:
        """Fit the tied covariance; arrival order does not matter.

        The ridge defaults to 1e-6 * trace / D (1e-6 absolute when the
        pooled scatter is exactly zero).
        """
        if not self._shares:
            raise EmptyClass("no shares pooled")
        order = sorted(self._shares)
        dim = self._shares[order[0]].dim
        owners, mean_rows = [], []
        scatter = np.zeros((dim, dim))
        total = 0
        for tid in order:
            share = self._shares[tid]
            if share.dim != dim:
                raise DimMismatch("shares disagree on feature dim")
            for c in range(share.num_classes):
                owners.append((tid, c))
                mean_rows.append(share.means[c])
                diff = share.exemplars[c] - share.means[c]
                scatter += diff.T @ diff
                total += diff.shape[0]
        sigma = scatter / total
        if epsilon is None:
            trace = float(np.trace(sigma))
            epsilon = 1e-6 * trace / dim if trace > 0 else 1e-6
        try:
            chol = cholesky_factor(sigma + epsilon * np.eye(dim))
        except Exception as exc:
            raise SingularAfterRegularization(str(exc)) from exc
        self._owners = owners
        self._means = np.stack(mean_rows)
        self.covariance = sigma
        self.epsilon = epsilon
        self._chol = chol
        self.pooled_count = total

    @classmethod
    def from_parameters(
        cls, owners: list[tuple[int, int]], means: np.ndarray, covariance: np.ndarray
    ) -> "MahaBank":
        """Bank with a given covariance (no ridge); used by oracles/tests."""
        bank = cls()
        bank._owners = list(owners)
        bank._means = np.asarray(means, dtype=np.float64)
        bank.covariance = np.asarray(covariance, dtype=np.float64)
        bank.epsilon = 0.0
        bank._chol = cholesky_factor(bank.covariance)
        bank.pooled_count = 0
        return bank

    def distances(self, x: np.ndarray) -> np.ndarray:
        """(n, C) squared Mahalanobis distances to every banked class mean."""
        if self._chol is None:
            raise NotFinalized("finalize() the bank before querying")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        out = np.zeros((x.shape[0], self._means.shape[0]))
        for j in range(self._means.shape[0]):
            z = np.linalg.solve(self._chol, (x - self._means[j]).T)
            out[:, j] = np.sum(z * z, axis=0)
        return out

    def map_task(self, x: np.ndarray) -> tuple[int, int]:
        """(task_id, class index) of the nearest class, canonical ties."""
        d = self.distances(x)[0]
        return self._owners[int(np.argmin(d))]

    def map_tasks(self, x: np.ndarray) -> np.ndarray:
        d = self.distances(x)
        owner_tasks = np.array([t for t, _ in self._owners], dtype=np.int64)
        return owner_tasks[np.argmin(d, axis=1)]


def fit_tied_covariance(
    shares: list[MahaTeacherShare], epsilon: float | None = None
) -> MahaBank:
    """Pool the given teacher shares into a finalized bank."""
    if not shares:
        raise EmptyClass("need at least one share")
    bank = MahaBank()
    for share in shares:
        bank.add_share(share)
    bank.finalize(epsilon)
    return bank


def map_task_maha(bank: MahaBank, x: np.ndarray) -> tuple[int, int]:
    """(task_id, class) owning the smallest Mahalanobis distance."""
    return bank.map_task(x)
