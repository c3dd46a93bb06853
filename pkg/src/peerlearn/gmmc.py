"""Gaussian-mixture task anchors and the consolidated mapper bank.

Each teacher fits a k-component diagonal-covariance mixture to its task's
training features (k-means++ then EM, variance floor 1e-6).  Students
append received anchors to a bank in canonical (task_id, component) order
and route a query to the task owning the highest-posterior component,
with all densities evaluated in log space.

Anchor wire layout (little-endian): task_id u32, k u32, D u32, then
k x (1 + 2D) f32 as (weight, mean, diagonal covariance) per component.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateTask, EmptyBank, TooFewSamples
from .numkit import RngStream

VARIANCE_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GmmcAnchor:
    task_id: int
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, D)
    variances: np.ndarray  # (k, D), diagonal covariances
    log_likelihoods: list[float] = field(default_factory=list)  # per EM iteration
    n_iterations: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError("variances below the floor")

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])


def _log_density(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(n, k) log N(x | mean_j, diag var_j)."""
    # -0.5 * [ D log 2pi + sum log var + sum (x-mu)^2 / var ]
    const = -0.5 * (means.shape[1] * _LOG_2PI + np.sum(np.log(variances), axis=1))
    diff = x[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None, :, :], axis=2)
    return const[None, :] - 0.5 * quad


def _kmeanspp_init(x: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.below(n)]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        centers.append(x[rng.weighted_index(d2)])
        d2 = np.minimum(d2, np.sum((x - centers[-1]) ** 2, axis=1))
    return np.stack(centers)


def fit_gmmc(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 100,
    tol: float = 1e-4,
    task_id: int = 0,
) -> GmmcAnchor:
    """EM fit of a k-component diagonal Gaussian mixture."""
    x = np.asarray(x, dtype=np.float64)
    n, dim = x.shape
    if n < k:
        raise TooFewSamples(f"{n} samples for {k} components")
    rng = RngStream(seed).derive(0x6333C, task_id)
    means = _kmeanspp_init(x, k, rng)
    variances = np.full((k, dim), max(float(np.var(x, axis=0).mean()), VARIANCE_FLOOR))
    weights = np.full(k, 1.0 / k)

    lls: list[float] = []
    for iteration in range(max_iter):
        # E-step in log space
        log_joint = _log_density(x, means, variances) + np.log(weights)[None, :]
        row_max = log_joint.max(axis=1, keepdims=True)
        log_norm = row_max[:, 0] + np.log(np.sum(np.exp(log_joint - row_max), axis=1))
        resp = np.exp(log_joint - log_norm[:, None])
        ll = float(np.sum(log_norm))
        lls.append(ll)
        # M-step
        nk = resp.sum(axis=0) + 1e-300
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        diff = x[:, None, :] - means[None, :, :]
        variances = np.einsum("nk,nkd->kd", resp, diff * diff) / nk[:, None]
        variances = np.maximum(variances, VARIANCE_FLOOR)
        if iteration > 0 and abs(lls[-1] - lls[-2]) < tol:
            break
    weights = weights / weights.sum()
    return GmmcAnchor(task_id, weights, means, variances, lls, len(lls))


def anchor_to_bytes(anchor: GmmcAnchor) -> bytes:
    out = struct.pack("<III", anchor.task_id, anchor.k, anchor.dim)
    per = np.concatenate(
        [anchor.weights[:, None], anchor.means, anchor.variances], axis=1
    )
    return out + per.astype("<f4").tobytes()


def anchor_from_bytes(buf: bytes) -> GmmcAnchor:
    task_id, k, dim = struct.unpack_from("<III", buf, 0)
    per = np.frombuffer(buf, dtype="<f4", count=k * (1 + 2 * dim), offset=12)
    per = per.reshape(k, 1 + 2 * dim).astype(np.float64)
    weights = per[:, 0]
    return GmmcAnchor(
        task_id,
        weights / weights.sum(),
        per[:, 1 : 1 + dim],
        np.maximum(per[:, 1 + dim :], VARIANCE_FLOOR),
    )


def anchor_wire_size(k: int, dim: int) -> int:
    return 12 + 4 * k * (1 + 2 * dim)


class AnchorBank:
    """Student-side pool of received anchors, kept in canonical order."""

    def __init__(self):
        self._anchors: dict[int, GmmcAnchor] = {}
        self._cache = None

    def __len__(self) -> int:
        return sum(a.k for a in self._anchors.values())

    @property
    def task_ids(self) -> list[int]:
        return sorted(self._anchors)

    def merge_anchor(self, anchor: GmmcAnchor) -> "AnchorBank":
        if anchor.task_id in self._anchors:
            raise DuplicateTask(f"anchor for task {anchor.task_id} already in bank")
        self._anchors[anchor.task_id] = anchor
        self._cache = None
        return self

    def components(self) -> list[tuple[int, int]]:
        """(task_id, component index) pairs in canonical order."""
        return [
            (tid, j)
            for tid in sorted(self._anchors)
            for j in range(self._anchors[tid].k)
        ]

    def _stacked(self):
        if self._cache is None:
            order = sorted(self._anchors)
            self._cache = (
                np.concatenate([self._anchors[t].weights for t in order]),
                np.concatenate([self._anchors[t].means for t in order]),
                np.concatenate([self._anchors[t].variances for t in order]),
                self.components(),
            )
        return self._cache

    def log_posteriors(self, x: np.ndarray) -> np.ndarray:
        """(n, kT) log P(component | x) over all banked components."""
        if not self._anchors:
            raise EmptyBank("no anchors in bank")
        weights, means, variances, _ = self._stacked()
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        log_joint = _log_density(x, means, variances) + np.log(weights)[None, :]
        row_max = log_joint.max(axis=1, keepdims=True)
        log_norm = row_max + np.log(
            np.sum(np.exp(log_joint - row_max), axis=1, keepdims=True)
        )
        return log_joint - log_norm

    def map_task(self, x: np.ndarray) -> tuple[int, int, float]:
        """(owning task, component index within bank, posterior of argmax).

        Ties resolve to the lowest (task_id, component index); the bank is
        canonically sorted, so the first maximum wins.
        """
        log_post = self.log_posteriors(x)[0]
        best = int(np.argmax(log_post))
        owners = self._stacked()[3]
        return owners[best][0], best, float(np.exp(log_post[best]))

    def map_tasks(self, x: np.ndarray) -> np.ndarray:
        """Vectorized task assignment for a batch of queries."""
        log_post = self.log_posteriors(x)
        owners = np.array([t for t, _ in self._stacked()[3]], dtype=np.int64)
        return owners[np.argmax(log_post, axis=1)]
