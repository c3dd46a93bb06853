"""Run configuration: TOML document, full validation, CLI overrides.

Grammar (TOML):

  [run]
  agents       = 5                # number of agents, >= 1
  mapper       = "gmmc"           # "gmmc" | "maha"
  bb           = false            # train beneficial biases (needs [backbone])
  head2toe     = false            # add the bias-selected head variant
  seed         = 42
  alpha        = 1000.0           # MACs per transmitted byte
  byte_mode    = "paper"          # "exact" | "paper"
  gmmc_k       = 25
  maha_m       = 5
  theta        = 0.95             # corrective similarity threshold
  epochs/lr/batch_size/momentum   # head-training hyperparameters
  assignment   = "round_robin"    # or [[task indices], ...] one list per agent
  labels       = "labels.lbl1"    # optional label-embedding fixture

  [backbone]                      # optional frozen backbone (required for bb)
  input = [1, 10, 10]
  conv  = [8, 16]
  fc    = [128, 64]
  seed  = 0

  [[task]]                        # ordered; index = task id
  kind = "synth"                  # or "manifest" with path = "..."
  classes = 5
  dim = 16
  train = 40
  val = 10
  test = 20
  separation = 8.0
  std = 1.0
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dataset import SynthSpec
from .errors import ConfigInvalid


@dataclass
class TaskRef:
    kind: str  # "synth" | "manifest"
    synth: SynthSpec | None = None
    manifest_path: Path | None = None


@dataclass
class BackboneSpec:
    input_shape: tuple[int, int, int]
    conv: tuple[int, ...]
    fc: tuple[int, ...]
    seed: int


@dataclass
class RunConfig:
    tasks: list[TaskRef]
    agents: int = 1
    mapper: str = "gmmc"
    bb: bool = False
    head2toe: bool = False
    h2t_fraction: float = 0.01
    seed: int = 0
    alpha: float = 1000.0
    byte_mode: str = "paper"
    gmmc_k: int = 25
    maha_m: int = 5
    theta: float = 0.95
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 32
    momentum: float = 0.9
    assignment: list[list[int]] = field(default_factory=list)
    labels_path: Path | None = None
    backbone: BackboneSpec | None = None

    def assigned_agent(self, task_index: int) -> int:
        for agent_id, tasks in enumerate(self.assignment):
            if task_index in tasks:
                return agent_id
        raise KeyError(task_index)

    def to_canonical_dict(self) -> dict:
        return {
            "agents": self.agents,
            "mapper": self.mapper,
            "bb": self.bb,
            "head2toe": self.head2toe,
            "h2t_fraction": self.h2t_fraction,
            "seed": self.seed,
            "alpha": self.alpha,
            "byte_mode": self.byte_mode,
            "gmmc_k": self.gmmc_k,
            "maha_m": self.maha_m,
            "theta": self.theta,
            "epochs": self.epochs,
            "lr": self.lr,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "assignment": self.assignment,
            "labels": str(self.labels_path) if self.labels_path else None,
            "backbone": (
                {
                    "input": list(self.backbone.input_shape),
                    "conv": list(self.backbone.conv),
                    "fc": list(self.backbone.fc),
                    "seed": self.backbone.seed,
                }
                if self.backbone
                else None
            ),
            "tasks": [
                {
                    "kind": t.kind,
                    "manifest": str(t.manifest_path) if t.manifest_path else None,
                    "synth": (
                        {
                            "classes": t.synth.num_classes,
                            "dim": t.synth.dim,
                            "train": t.synth.train_per_class,
                            "val": t.synth.val_per_class,
                            "test": t.synth.test_per_class,
                            "separation": t.synth.separation,
                            "std": t.synth.std,
                            "seed": t.synth.seed,
                            "name": t.synth.name,
                        }
                        if t.synth
                        else None
                    ),
                }
                for t in self.tasks
            ],
        }


def _round_robin(n_tasks: int, n_agents: int) -> list[list[int]]:
    out: list[list[int]] = [[] for _ in range(n_agents)]
    for i in range(n_tasks):
        out[i % n_agents].append(i)
    return out


def parse_config(path) -> tuple[RunConfig | None, list[str]]:
    """Parse + validate; returns (config, violations).  The config is None
    only when the document cannot be interpreted at all; otherwise all
    violations are collected so the caller sees every problem at once."""
    path = Path(path)
    errors: list[str] = []
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        return None, [f"config file not found: {path}"]
    except tomllib.TOMLDecodeError as exc:
        return None, [f"config is not valid TOML: {exc}"]

    run = doc.get("run", {})
    task_docs = doc.get("task", [])
    tasks: list[TaskRef] = []
    run_seed = int(run.get("seed", 0))
    for i, td in enumerate(task_docs):
        kind = td.get("kind", "synth")
        if kind == "synth":
            try:
                spec = SynthSpec(
                    num_classes=int(td.get("classes", 2)),
                    dim=int(td.get("dim", 16)),
                    train_per_class=int(td.get("train", 40)),
                    val_per_class=int(td.get("val", 10)),
                    test_per_class=int(td.get("test", 20)),
                    separation=float(td.get("separation", 8.0)),
                    std=float(td.get("std", 1.0)),
                    seed=int(td.get("seed", run_seed * 1000 + i)),
                    name=str(td.get("name", "")),
                )
                tasks.append(TaskRef("synth", synth=spec))
            except ValueError as exc:
                errors.append(f"task[{i}]: {exc}")
        elif kind == "manifest":
            p = td.get("path")
            if p is None:
                errors.append(f"task[{i}]: manifest tasks need a path")
                continue
            mp = (path.parent / p) if not Path(p).is_absolute() else Path(p)
            if not mp.exists():
                errors.append(f"task[{i}]: manifest not found: {mp}")
            tasks.append(TaskRef("manifest", manifest_path=mp))
        else:
            errors.append(f"task[{i}]: unknown kind {kind!r}")
    if not tasks:
        errors.append("no tasks defined")

    agents = int(run.get("agents", 1))
    if agents < 1:
        errors.append("run.agents must be >= 1")

    mapper = str(run.get("mapper", "gmmc"))
    if mapper not in ("gmmc", "maha"):
        errors.append(f"run.mapper must be gmmc or maha, got {mapper!r}")

    byte_mode = str(run.get("byte_mode", "paper"))
    if byte_mode not in ("exact", "paper"):
        errors.append(f"run.byte_mode must be exact or paper, got {byte_mode!r}")

    theta = float(run.get("theta", 0.95))
    if not 0.0 <= theta <= 1.0:
        errors.append("run.theta must lie in [0, 1]")

    assignment_doc = run.get("assignment", "round_robin")
    if assignment_doc == "round_robin":
        assignment = _round_robin(len(tasks), max(agents, 1))
    else:
        assignment = [[int(t) for t in group] for group in assignment_doc]
        if len(assignment) != agents:
            errors.append(
                f"assignment has {len(assignment)} groups for {agents} agents"
            )
        flat = [t for group in assignment for t in group]
        if sorted(flat) != list(range(len(tasks))):
            errors.append(
                "assignment must partition the task list: each task index "
                "exactly once"
            )

    labels_path = None
    if "labels" in run:
        lp = Path(run["labels"])
        labels_path = (path.parent / lp) if not lp.is_absolute() else lp
        if not labels_path.exists():
            errors.append(f"run.labels not found: {labels_path}")

    backbone = None
    if "backbone" in doc:
        bd = doc["backbone"]
        try:
            backbone = BackboneSpec(
                tuple(int(v) for v in bd.get("input", [1, 10, 10])),
                tuple(int(v) for v in bd.get("conv", [8, 16])),
                tuple(int(v) for v in bd.get("fc", [128, 64])),
                int(bd.get("seed", 0)),
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"backbone: {exc}")

    bb = bool(run.get("bb", False))
    if bb and backbone is None:
        errors.append("run.bb = true requires a [backbone] section")
    head2toe = bool(run.get("head2toe", False))
    if head2toe and not bb:
        errors.append("run.head2toe = true requires run.bb = true")

    maha_m = int(run.get("maha_m", 5))
    if mapper == "maha":
        # the share wire format needs a uniform exemplar count per class
        for i, t in enumerate(tasks):
            if t.kind == "synth" and t.synth.train_per_class < maha_m:
                errors.append(
                    f"task[{i}]: train={t.synth.train_per_class} per class is "
                    f"smaller than maha_m={maha_m}"
                )

    cfg = RunConfig(
        tasks=tasks,
        agents=agents,
        mapper=mapper,
        bb=bb,
        head2toe=head2toe,
        h2t_fraction=float(run.get("h2t_fraction", 0.01)),
        seed=run_seed,
        alpha=float(run.get("alpha", 1000.0)),
        byte_mode=byte_mode,
        gmmc_k=int(run.get("gmmc_k", 25)),
        maha_m=maha_m,
        theta=theta,
        epochs=int(run.get("epochs", 30)),
        lr=float(run.get("lr", 0.01)),
        batch_size=int(run.get("batch_size", 32)),
        momentum=float(run.get("momentum", 0.9)),
        assignment=assignment,
        labels_path=labels_path,
        backbone=backbone,
    )
    return cfg, errors


def load_config(path) -> RunConfig:
    cfg, errors = parse_config(path)
    if errors or cfg is None:
        raise ConfigInvalid(errors or ["unreadable config"])
    return cfg
