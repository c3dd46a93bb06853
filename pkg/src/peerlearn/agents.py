"""The lifelong-learner agent: teacher, sharer, student, and inference.

Every agent owns a frozen backbone reference (or none, when task vectors
already live in the shared feature space), a bank of per-task heads, an
anchor bank for task mapping, and a cost-ledger reference.  Teachers
learn a task and package head + optional beneficial bias + anchor;
students accumulate received packets; after a consolidation barrier the
agent routes any input to a task, scores it with that task's head, and
reports the global class name.  No task oracle is used at test time.
"""

from __future__ import annotations

from dataclasses import dataclass

import hashlib

import numpy as np

from . import accounting, gmmc, maha
from .accounting import CostLedger
from .backbone import BeneficialBias, BbTrainConfig, ToyBackbone, forward_batch, train_bb
from .dataset import GlobalClassRegistry, TaskDataset
from .errors import DuplicateTask, NotAllReceived, NotFinalized
from .heads import Head, TrainConfig, head_to_bytes, head_from_bytes, train_head

GMMC = "gmmc"
MAHA = "maha"


@dataclass
class KnowledgePacket:
    task_id: int
    mapper_mode: str
    class_names: list[str]
    head_bytes: bytes
    anchor_bytes: bytes
    bb_bytes: bytes | None = None

    def __post_init__(self):
        if self.mapper_mode not in (GMMC, MAHA):
            raise ValueError(f"unknown mapper mode {self.mapper_mode!r}")

    def anchor(self):
        if self.mapper_mode == GMMC:
            return gmmc.anchor_from_bytes(self.anchor_bytes)
        return maha.share_from_bytes(self.anchor_bytes, self.class_names)

    def head(self) -> Head:
        return head_from_bytes(self.head_bytes)


@dataclass(frozen=True)
class AgentConfig:
    mapper_mode: str = GMMC
    use_bb: bool = False
    gmmc_k: int = 25
    maha_m: int = 5
    seed: int = 0
    expected_tasks: int | None = None


class AgentState:
    def __init__(
        self,
        agent_id: int,
        config: AgentConfig,
        ledger: CostLedger | None = None,
        backbone: ToyBackbone | None = None,
    ):
        self.agent_id = agent_id
        self.config = config
        self.ledger = ledger if ledger is not None else CostLedger()
        self.backbone = backbone
        self.heads: dict[int, Head] = {}
        self.biases: dict[int, BeneficialBias] = {}
        self.registry = GlobalClassRegistry()
        if config.mapper_mode == GMMC:
            self.bank = gmmc.AnchorBank()
        elif config.mapper_mode == MAHA:
            self.bank = maha.MahaBank()
        else:
            raise ValueError(f"unknown mapper mode {config.mapper_mode!r}")
        self._finalized = config.mapper_mode == GMMC  # GMMC needs no extra work

    # -- feature space ---------------------------------------------------

    def features(self, x: np.ndarray, task_id: int | None = None) -> np.ndarray:
        """Map raw inputs into the shared feature space.

        Task anchors always live in the common space (no task bias); the
        per-task bias only applies when scoring with that task's head.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if self.backbone is None:
            return x
        bb = self.biases.get(task_id) if task_id is not None else None
        embed, _, _ = forward_batch(self.backbone, bb, x)
        return embed

    # -- teacher role ----------------------------------------------------

    def learn_task(
        self,
        ds: TaskDataset,
        train_cfg: TrainConfig | None = None,
        bb_cfg: BbTrainConfig | None = None,
    ) -> KnowledgePacket:
        """Train head (+ bias), fit the task anchor, assemble the packet.

        Seeds derive from the run seed and task id only, so any agent
        teaching the same task emits a byte-identical packet.
        """
        if ds.task_id in self.heads:
            raise DuplicateTask(f"task {ds.task_id} already learned")
        cfg = train_cfg or TrainConfig(seed=self.config.seed)
        split = ds.split("train")
        bb_bytes = None
        if self.config.use_bb:
            if self.backbone is None:
                raise ValueError("beneficial biases need a backbone")
            bcfg = bb_cfg or BbTrainConfig(seed=self.config.seed)
            bias, head = train_bb(self.backbone, ds, bcfg)
            self.biases[ds.task_id] = bias
            bb_bytes = bias.to_bytes()
            self.ledger.add_macs(
                self.agent_id,
                "teacher_train",
                accounting.mac_bb_train(
                    len(split), accounting.mac_backbone_forward(self.backbone), bcfg.epochs
                ),
            )
        else:
            feats = self.features(split.x)
            head = train_head(
                type(split)(split.labels, feats), cfg, ds.task_id, ds.num_classes
            )
            self.ledger.add_macs(
                self.agent_id,
                "teacher_train",
                accounting.mac_head_train(
                    len(split), feats.shape[1], ds.num_classes, cfg.epochs
                ),
            )

        anchor_feats = self.features(split.x)
        if self.config.mapper_mode == GMMC:
            anchor = gmmc.fit_gmmc(
                anchor_feats,
                self.config.gmmc_k,
                seed=self.config.seed,
                task_id=ds.task_id,
            )
            anchor_bytes = gmmc.anchor_to_bytes(anchor)
            self.ledger.add_macs(
                self.agent_id,
                "anchor_fit",
                accounting.mac_gmmc_fit(
                    len(split), anchor.k, anchor.dim, max(anchor.n_iterations, 1)
                ),
            )
        else:
            if self.backbone is None:
                feature_ds = ds
            else:
                # exemplars are shared in the common feature space
                dim = anchor_feats.shape[1]
                empty = type(split)(np.zeros(0, dtype=np.int64), np.zeros((0, dim)))
                feature_ds = TaskDataset(
                    ds.task_id,
                    ds.name,
                    dim,
                    list(ds.classes),
                    {
                        "train": type(split)(split.labels, anchor_feats),
                        "val": empty,
                        "test": empty,
                    },
                )
            anchor = maha.sample_shared(
                feature_ds, self.config.maha_m, seed=self.config.seed
            )
            anchor_bytes = maha.share_to_bytes(anchor)
            self.ledger.add_macs(
                self.agent_id,
                "anchor_fit",
                accounting.mac_class_means(len(split), anchor.dim),
            )

        packet = KnowledgePacket(
            ds.task_id,
            self.config.mapper_mode,
            list(ds.classes),
            head_to_bytes(head),
            anchor_bytes,
            bb_bytes,
        )
        self._store(packet)
        return packet

    # -- student role ------------------------------------------------------

    def _store(self, packet: KnowledgePacket) -> None:
        if packet.mapper_mode != self.config.mapper_mode:
            raise ValueError(
                f"packet carries a {packet.mapper_mode} anchor, agent maps with "
                f"{self.config.mapper_mode}"
            )
        if packet.task_id in self.heads:
            raise DuplicateTask(f"task {packet.task_id} already known")
        self.heads[packet.task_id] = packet.head()
        if packet.bb_bytes is not None and self.backbone is not None:
            self.biases[packet.task_id] = BeneficialBias.from_flat(
                self.backbone, np.frombuffer(packet.bb_bytes, dtype="<f4").astype(np.float64)
            )
        self.registry.add_task(packet.task_id, packet.class_names)
        anchor = packet.anchor()
        if self.config.mapper_mode == GMMC:
            self.bank.merge_anchor(anchor)
        else:
            self.bank.add_share(anchor)
            self._finalized = False

    def receive(self, packet: KnowledgePacket) -> "AgentState":
        self._store(packet)
        return self

    def finalize(self) -> "AgentState":
        """Consolidate the mapper.  Idempotent; no-op for GMMC students."""
        expected = self.config.expected_tasks
        if expected is not None and len(self.heads) < expected:
            raise NotAllReceived(f"{len(self.heads)}/{expected} tasks known")
        if self.config.mapper_mode == MAHA and not self.bank.finalized:
            self.bank.finalize()
            self.ledger.add_macs(
                self.agent_id,
                "student_finalize",
                accounting.mac_maha_finalize(
                    self.bank.pooled_count, self.bank._means.shape[1]
                ),
            )
            self._finalized = True
        return self

    # -- inference ---------------------------------------------------------

    @property
    def known_tasks(self) -> list[int]:
        return sorted(self.heads)

    def map_tasks(self, x: np.ndarray) -> np.ndarray:
        if self.config.mapper_mode == GMMC:
            return self.bank.map_tasks(self.features(x))
        if not self.bank.finalized:
            raise NotFinalized("call finalize() before inference")
        return self.bank.map_tasks(self.features(x))

    def infer(self, x: np.ndarray, forced_task: int | None = None):
        """(task_id, class index, global class name) for one input."""
        if not self.heads:
            raise NotFinalized("no tasks known")
        if self.config.mapper_mode == MAHA and not self.bank.finalized:
            raise NotFinalized("call finalize() before inference")
        if forced_task is not None:
            task = forced_task
        else:
            task = int(self.map_tasks(np.atleast_2d(x))[0])
        feats = self.features(x, task_id=task)
        head = self.heads[task]
        cls = int(np.argmax(feats @ head.weights.T + head.bias, axis=1)[0])
        return task, cls, self.registry.name_of(task, cls)

    def infer_batch(self, x: np.ndarray, forced_tasks: np.ndarray | None = None):
        """Vectorized inference: (tasks, classes) arrays for a batch."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if forced_tasks is None:
            tasks = self.map_tasks(x)
        else:
            tasks = np.asarray(forced_tasks, dtype=np.int64)
        classes = np.zeros(x.shape[0], dtype=np.int64)
        for task in np.unique(tasks):
            mask = tasks == task
            feats = self.features(x[mask], task_id=int(task))
            head = self.heads[int(task)]
            classes[mask] = np.argmax(feats @ head.weights.T + head.bias, axis=1)
        return tasks, classes

    # -- state identity ------------------------------------------------------

    def state_digest(self) -> str:
        """SHA-256 over the canonically sorted state; equal digests mean
        byte-identical knowledge regardless of arrival order."""
        h = hashlib.sha256()
        h.update(self.config.mapper_mode.encode())
        for task_id in sorted(self.heads):
            h.update(task_id.to_bytes(4, "little"))
            h.update(head_to_bytes(self.heads[task_id]))
            if task_id in self.biases:
                h.update(self.biases[task_id].to_bytes())
            for name in self.registry.classes_of(task_id):
                h.update(name.encode())
        if self.config.mapper_mode == GMMC:
            for task_id in self.bank.task_ids:
                h.update(gmmc.anchor_to_bytes(self.bank._anchors[task_id]))
        else:
            for task_id in self.bank.task_ids:
                h.update(maha.share_to_bytes(self.bank._shares[task_id]))
        return h.hexdigest()
