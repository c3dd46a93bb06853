"""Task fixtures: EMB1 embedding files, synthetic blob tasks, class registry.

EMB1 layout (little-endian):
  magic "EMB1" | version u32 = 1 | dim u32 | class_count u32 |
  record_count u64 | record_count x (label u32, dim x f32)

A task manifest is a JSON document {name, dim, classes: [...],
files: {train, val, test}} with file paths relative to the manifest.

Embeddings are stored as 32-bit floats (4 bytes per value, matching the
byte accounting) but widened to 64-bit for all computation.  Synthetic
data is rounded to 32-bit at creation so that write/load round-trips are
exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimMismatch,
    DuplicateName,
    DuplicateTask,
    LabelOutOfRange,
    TruncatedFile,
)
from .numkit import RngStream

EMB1_MAGIC = b"EMB1"
EMB1_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Split:
    """One labelled split: labels[i] indexes the task's class list."""

    labels: np.ndarray  # (n,) int64
    x: np.ndarray  # (n, dim) float64

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.float64)
        if self.x.ndim != 2 or self.labels.ndim != 1:
            raise DimMismatch("split arrays must be (n, dim) and (n,)")
        if self.labels.shape[0] != self.x.shape[0]:
            raise DimMismatch("label count != record count")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def record_bytes(self) -> set[bytes]:
        x32 = self.x.astype(np.float32)
        return {
            int(l).to_bytes(4, "little") + x32[i].tobytes()
            for i, l in enumerate(self.labels)
        }


@dataclass
class TaskDataset:
    task_id: int
    name: str
    dim: int
    classes: list[str]
    splits: dict[str, Split] = field(default_factory=dict)

    def __post_init__(self):
        if self.dim < 1:
            raise DimMismatch("dim must be >= 1")
        if len(set(self.classes)) != len(self.classes):
            raise DuplicateName(f"duplicate class names in task {self.task_id!r}")
        if not self.classes:
            raise ValueError("a task needs at least one class")
        for split_name in SPLIT_NAMES:
            self.splits.setdefault(
                split_name,
                Split(np.zeros(0, dtype=np.int64), np.zeros((0, self.dim))),
            )
        c = len(self.classes)
        for split_name, split in self.splits.items():
            if split.x.shape[1] != self.dim:
                raise DimMismatch(
                    f"{split_name}: vectors have dim {split.x.shape[1]}, task dim {self.dim}"
                )
            if len(split) and (split.labels.min() < 0 or split.labels.max() >= c):
                raise LabelOutOfRange(f"{split_name}: label outside [0, {c})")
        seen: set[bytes] = set()
        for split_name in SPLIT_NAMES:
            records = self.splits[split_name].record_bytes()
            if seen & records:
                raise ValueError("splits must be disjoint")
            seen |= records

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> Split:
        return self.splits[name]


def _read_exact(fh, n: int, path: Path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFile(f"{path}: expected {n} more bytes, got {len(buf)}")
    return buf


def read_emb1(path: Path) -> tuple[int, int, np.ndarray, np.ndarray]:
    """Return (dim, class_count, labels, vectors) from one EMB1 file."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMB1_MAGIC:
            raise BadMagic(f"{path}: magic {magic!r}")
        version, dim, class_count = struct.unpack("<III", _read_exact(fh, 12, path))
        if version != EMB1_VERSION:
            raise BadMagic(f"{path}: unsupported version {version}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, path))
        record = struct.Struct("<I" + "f" * dim)
        payload = _read_exact(fh, record.size * count, path)
        if fh.read(1):
            raise TruncatedFile(f"{path}: trailing bytes after {count} records")
    labels = np.zeros(count, dtype=np.int64)
    vectors = np.zeros((count, dim), dtype=np.float64)
    for i in range(count):
        fields = record.unpack_from(payload, i * record.size)
        if fields[0] >= class_count:
            raise LabelOutOfRange(f"{path}: record {i} label {fields[0]} >= {class_count}")
        labels[i] = fields[0]
        vectors[i] = fields[1:]
    return dim, class_count, labels, vectors


def write_emb1(path: Path, dim: int, class_count: int, split: Split) -> None:
    path = Path(path)
    record = struct.Struct("<I" + "f" * dim)
    x32 = split.x.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<III", EMB1_VERSION, dim, class_count))
        fh.write(struct.pack("<Q", len(split)))
        for i in range(len(split)):
            fh.write(record.pack(int(split.labels[i]), *x32[i].tolist()))


def load_task(manifest_path, task_id: int = 0) -> TaskDataset:
    """Load a task from its manifest; the caller assigns the task id."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    dim = int(manifest["dim"])
    classes = list(manifest["classes"])
    splits = {}
    for split_name in SPLIT_NAMES:
        rel = manifest["files"][split_name]
        file_dim, class_count, labels, vectors = read_emb1(manifest_path.parent / rel)
        if file_dim != dim:
            raise DimMismatch(f"{rel}: file dim {file_dim} != manifest dim {dim}")
        if class_count != len(classes):
            raise DimMismatch(
                f"{rel}: file class count {class_count} != manifest {len(classes)}"
            )
        splits[split_name] = Split(labels, vectors)
    return TaskDataset(task_id, manifest["name"], dim, classes, splits)


def write_task(ds: TaskDataset, out_dir) -> Path:
    """Write EMB1 files plus manifest; returns the manifest path."""
    from .errors import IoError

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {}
        for split_name in SPLIT_NAMES:
            fname = f"{split_name}.emb1"
            write_emb1(out_dir / fname, ds.dim, ds.num_classes, ds.splits[split_name])
            files[split_name] = fname
        manifest = {
            "name": ds.name,
            "dim": ds.dim,
            "classes": ds.classes,
            "files": files,
        }
        manifest_path = out_dir / "manifest.json"
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"writing task fixture under {out_dir}: {exc}") from exc
    return manifest_path


@dataclass(frozen=True)
class SynthSpec:
    """Isotropic Gaussian-blob task: analytic oracles stay available."""

    num_classes: int
    dim: int
    train_per_class: int
    val_per_class: int
    test_per_class: int
    separation: float
    std: float
    seed: int
    name: str = ""

    def __post_init__(self):
        if self.num_classes < 1 or self.dim < 1:
            raise ValueError("num_classes and dim must be >= 1")
        if self.separation < 0 or self.std <= 0:
            raise ValueError("separation must be >= 0 and std > 0")


def synth_class_means(spec: SynthSpec) -> np.ndarray:
    """Class means: seeded random unit directions scaled by separation."""
    rng = RngStream(spec.seed).derive(0xC1A55)
    return np.stack(
        [rng.unit_vector(spec.dim) * spec.separation for _ in range(spec.num_classes)]
    )


def synth_task(spec: SynthSpec, task_id: int = 0) -> TaskDataset:
    means = synth_class_means(spec)
    counts = {
        "train": spec.train_per_class,
        "val": spec.val_per_class,
        "test": spec.test_per_class,
    }
    splits = {}
    for split_index, split_name in enumerate(SPLIT_NAMES):
        n_per = counts[split_name]
        labels = np.zeros(n_per * spec.num_classes, dtype=np.int64)
        x = np.zeros((n_per * spec.num_classes, spec.dim))
        row = 0
        for k in range(spec.num_classes):
            rng = RngStream(spec.seed).derive(1 + split_index, k)
            for _ in range(n_per):
                x[row] = means[k] + spec.std * rng.normals(spec.dim)
                labels[row] = k
                row += 1
        # fixtures carry f32 payloads; round now so round-trips are exact
        splits[split_name] = Split(labels, x.astype(np.float32).astype(np.float64))
    name = spec.name or f"synth-c{spec.num_classes}-d{spec.dim}-s{spec.seed}"
    classes = [f"{name}/class{k}" for k in range(spec.num_classes)]
    return TaskDataset(task_id, name, spec.dim, classes, splits)


class GlobalClassRegistry:
    """Flattened (task_id, class index, name) enumeration over all tasks.

    Entries are kept sorted by (task_id, class index) so the global
    numbering is stable no matter the order tasks were registered in.
    """

    def __init__(self):
        self._tasks: dict[int, list[str]] = {}

    def add_task(self, task_id: int, classes: list[str]) -> None:
        if task_id in self._tasks:
            raise DuplicateTask(f"task {task_id} already registered")
        self._tasks[task_id] = list(classes)

    @property
    def total_classes(self) -> int:
        return sum(len(c) for c in self._tasks.values())

    def entries(self) -> list[tuple[int, int, str]]:
        out = []
        for task_id in sorted(self._tasks):
            for idx, name in enumerate(self._tasks[task_id]):
                out.append((task_id, idx, name))
        return out

    def global_index(self, task_id: int, class_idx: int) -> int:
        offset = 0
        for tid in sorted(self._tasks):
            if tid == task_id:
                if class_idx >= len(self._tasks[tid]):
                    raise LabelOutOfRange(f"class {class_idx} of task {task_id}")
                return offset + class_idx
            offset += len(self._tasks[tid])
        raise KeyError(f"task {task_id} not registered")

    def name_of(self, task_id: int, class_idx: int) -> str:
        return self._tasks[task_id][class_idx]

    def task_ids(self) -> list[int]:
        return sorted(self._tasks)

    def classes_of(self, task_id: int) -> list[str]:
        return list(self._tasks[task_id])
