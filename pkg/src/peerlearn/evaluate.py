"""Run evaluation: label-similarity scoring and accuracy curves.

Label embeddings arrive as LBL1 fixture files (magic "LBL1", count u32,
E u32, then per class: name length u16 + UTF-8 bytes + E x f32); the
cosine-similarity matrix over the registered global classes powers the
corrective scoring that forgives confusions between semantically
equivalent class names from different tasks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    TaskNeverLearned,
    ZeroNormEmbedding,
)


def write_lbl1(path, names: list[str], embeddings: np.ndarray) -> None:
    embeddings = np.asarray(embeddings, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(b"LBL1")
        fh.write(struct.pack("<II", len(names), embeddings.shape[1]))
        for name, vec in zip(names, embeddings):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(vec.astype("<f4").tobytes())


def read_lbl1(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] != b"LBL1":
        raise BadMagic(f"{path}: not a label-embedding file")
    count, dim = struct.unpack_from("<II", buf, 4)
    offset = 12
    names, rows = [], []
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        names.append(buf[offset : offset + ln].decode("utf-8"))
        offset += ln
        rows.append(np.frombuffer(buf, dtype="<f4", count=dim, offset=offset))
        offset += 4 * dim
    return names, np.stack(rows).astype(np.float64)


class SimilarityMatrix:
    """C x C cosine similarities over the global class enumeration."""

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("similarity matrix must be square")
        if np.abs(m - m.T).max() > 1e-9:
            raise ValueError("similarity matrix must be symmetric")
        if np.abs(np.diag(m) - 1.0).max() > 1e-6:
            raise ValueError("similarity diagonal must be 1")
        if m.min() < -1.0 - 1e-9 or m.max() > 1.0 + 1e-9:
            raise ValueError("similarities must lie in [-1, 1]")
        self.matrix = np.clip(m, -1.0, 1.0)

    @property
    def size(self) -> int:
        return int(self.matrix.shape[0])

    def similarity(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])


def similarity_from_embeddings(embeddings: np.ndarray) -> SimilarityMatrix:
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    bad = np.where(norms < 1e-12)[0]
    if len(bad):
        raise ZeroNormEmbedding(f"zero-norm label embeddings at rows {bad.tolist()}")
    unit = e / norms[:, None]
    m = unit @ unit.T
    np.fill_diagonal(m, 1.0)
    return SimilarityMatrix(np.clip((m + m.T) / 2.0, -1.0, 1.0))


def similarity_matrix(lbl_path, registry) -> SimilarityMatrix:
    """Similarities aligned to the registry's global class order.

    The LBL1 file must provide exactly one embedding per distinct
    registered class name.
    """
    names, embeddings = read_lbl1(lbl_path)
    by_name = {}
    for name, vec in zip(names, embeddings):
        by_name[name] = vec
    entries = registry.entries()
    missing = sorted({name for _, _, name in entries} - set(by_name))
    if missing:
        raise CountMismatch(f"no embedding for classes {missing[:5]}")
    rows = np.stack([by_name[name] for _, _, name in entries])
    return similarity_from_embeddings(rows)


def corrective_accuracy(
    predictions: list[tuple[int, int]],
    truth: list[tuple[int, int]],
    sims: SimilarityMatrix | None,
    theta: float,
    registry=None,
) -> float:
    """Fraction correct, where an exact (task, class) match counts and so
    does a predicted global class whose name similarity to the true one
    is >= theta."""
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    if len(predictions) != len(truth):
        raise CountMismatch("prediction/truth length mismatch")
    if not truth:
        return 0.0
    hits = 0
    for pred, true in zip(predictions, truth):
        if pred == true:
            hits += 1
        elif sims is not None and registry is not None:
            gi = registry.global_index(*pred)
            gj = registry.global_index(*true)
            if sims.similarity(gi, gj) >= theta:
                hits += 1
    return hits / len(truth)


def plain_accuracy(predictions, truth) -> float:
    return corrective_accuracy(predictions, truth, None, 1.0)


@dataclass
class Checkpoint:
    """State of the evaluation after the first t tasks are consolidated."""

    t: int
    task_ids: list[int]
    per_task_accuracy: dict[int, float]
    forced_accuracy: dict[int, float]
    mapper_accuracy: float

    @property
    def averaged_accuracy(self) -> float:
        vals = [self.per_task_accuracy[tid] for tid in self.task_ids]
        return float(np.mean(vals)) if vals else 0.0


@dataclass
class RunHistory:
    checkpoints: list[Checkpoint] = field(default_factory=list)

    def add(self, cp: Checkpoint) -> None:
        if cp.t != len(self.checkpoints) + 1:
            raise ValueError("checkpoint t must advance one task at a time")
        self.checkpoints.append(cp)

    def learned_at(self, task_id: int) -> int:
        for i, cp in enumerate(self.checkpoints):
            if task_id in cp.task_ids:
                return i
        raise TaskNeverLearned(f"task {task_id} has no checkpoint")


def normalized_accuracy(
    history: RunHistory, task_id: int, forced: bool = False
) -> list[float]:
    """Accuracy divided by its value right after the task was learned.

    Starts at exactly 1.0 at the learning checkpoint.
    """
    start = history.learned_at(task_id)
    field_name = "forced_accuracy" if forced else "per_task_accuracy"
    initial = getattr(history.checkpoints[start], field_name)[task_id]
    if initial == 0.0:
        return [1.0] + [
            0.0 for _ in history.checkpoints[start + 1 :]
        ]
    curve = [1.0]
    for cp in history.checkpoints[start + 1 :]:
        curve.append(getattr(cp, field_name)[task_id] / initial)
    return curve


@dataclass
class MapperCurve:
    checkpoints: list[int]
    accuracy: list[float]
    slope: float
    intercept: float
    zero_crossing: float | None


def mapper_accuracy_curve(history: RunHistory) -> MapperCurve:
    """Per-checkpoint mapper accuracy plus its ordinary least-squares line.

    The zero crossing -intercept/slope is reported only for a declining
    line; a flat or rising fit has no finite crossing.
    """
    if len(history.checkpoints) < 2:
        raise ValueError("need at least two checkpoints for a regression")
    xs = np.array([cp.t for cp in history.checkpoints], dtype=np.float64)
    ys = np.array([cp.mapper_accuracy for cp in history.checkpoints])
    slope, intercept = np.polyfit(xs, ys, 1)
    return MapperCurve(
        [int(v) for v in xs],
        ys.tolist(),
        float(slope),
        float(intercept),
        line_zero_crossing(float(slope), float(intercept)),
    )


def line_zero_crossing(slope: float, intercept: float) -> float | None:
    """Where a fitted accuracy line reaches zero; None for a flat or
    rising fit (slopes within 1e-12 of zero count as flat)."""
    return float(intercept / -slope) if slope < -1e-12 else None
