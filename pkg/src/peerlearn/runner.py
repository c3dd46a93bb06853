"""Experiment runner: learn -> broadcast -> finalize -> evaluate -> report.

A run is fully determined by its config (seeds included); the report
bundle contains no timestamps or machine-dependent values, so two runs of
the same config are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .accounting import CostLedger
from .agents import AgentConfig, AgentState, KnowledgePacket
from .backbone import BbTrainConfig, h2t_accuracy, head2toe_select, make_backbone, train_head2toe
from .config import RunConfig
from .dataset import TaskDataset, load_task, synth_task
from .evaluate import (
    Checkpoint,
    RunHistory,
    corrective_accuracy,
    mapper_accuracy_curve,
    plain_accuracy,
    similarity_matrix,
)
from .heads import TrainConfig
from .network import EXACT, PAPER, SimNetwork, packet_size


@dataclass
class RunResult:
    config: RunConfig
    tasks: list[TaskDataset]
    agents: list[AgentState]
    network: SimNetwork
    ledger: CostLedger
    history: RunHistory
    packets: dict[int, KnowledgePacket]
    end_to_end_accuracy: float
    corrective: dict[str, float]
    h2t_accuracy: dict[int, float] | None = None


def build_tasks(cfg: RunConfig) -> list[TaskDataset]:
    tasks = []
    for task_id, ref in enumerate(cfg.tasks):
        if ref.kind == "synth":
            tasks.append(synth_task(ref.synth, task_id))
        else:
            tasks.append(load_task(ref.manifest_path, task_id))
    return tasks


def _make_agents(cfg: RunConfig, ledger: CostLedger) -> list[AgentState]:
    backbone = None
    if cfg.backbone is not None:
        backbone = make_backbone(
            cfg.backbone.input_shape, cfg.backbone.conv, cfg.backbone.fc, cfg.backbone.seed
        )
    agent_cfg = AgentConfig(
        mapper_mode=cfg.mapper,
        use_bb=cfg.bb,
        gmmc_k=cfg.gmmc_k,
        maha_m=cfg.maha_m,
        seed=cfg.seed,
        expected_tasks=len(cfg.tasks),
    )
    return [AgentState(i, agent_cfg, ledger, backbone) for i in range(cfg.agents)]


def _eval_agent_upto(cfg: RunConfig, packets: dict[int, KnowledgePacket], t: int) -> AgentState:
    """Fresh consolidated student holding tasks 0..t-1 only."""
    agent_cfg = AgentConfig(
        mapper_mode=cfg.mapper,
        use_bb=cfg.bb,
        gmmc_k=cfg.gmmc_k,
        maha_m=cfg.maha_m,
        seed=cfg.seed,
        expected_tasks=t,
    )
    backbone = None
    if cfg.backbone is not None:
        backbone = make_backbone(
            cfg.backbone.input_shape, cfg.backbone.conv, cfg.backbone.fc, cfg.backbone.seed
        )
    viewer = AgentState(10_000, agent_cfg, CostLedger(cfg.alpha), backbone)
    for task_id in range(t):
        viewer.receive(packets[task_id])
    viewer.finalize()
    return viewer


def evaluate_checkpoints(
    cfg: RunConfig, tasks: list[TaskDataset], packets: dict[int, KnowledgePacket]
) -> RunHistory:
    """After each task count t, accuracy over the tasks consolidated so far."""
    history = RunHistory()
    for t in range(1, len(tasks) + 1):
        viewer = _eval_agent_upto(cfg, packets, t)
        per_task, forced = {}, {}
        routed_hits = 0
        routed_total = 0
        for ds in tasks[:t]:
            test = ds.split("test")
            if len(test) == 0:
                per_task[ds.task_id] = 0.0
                forced[ds.task_id] = 0.0
                continue
            mapped, classes = viewer.infer_batch(test.x)
            per_task[ds.task_id] = float(
                np.mean((mapped == ds.task_id) & (classes == test.labels))
            )
            routed_hits += int(np.sum(mapped == ds.task_id))
            routed_total += len(test)
            _, forced_classes = viewer.infer_batch(
                test.x, forced_tasks=np.full(len(test), ds.task_id)
            )
            forced[ds.task_id] = float(np.mean(forced_classes == test.labels))
        history.add(
            Checkpoint(
                t,
                [ds.task_id for ds in tasks[:t]],
                per_task,
                forced,
                routed_hits / routed_total if routed_total else 0.0,
            )
        )
    return history


def run_experiment(cfg: RunConfig, out_dir) -> RunResult:
    """Execute the full pipeline and write the report bundle."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = build_tasks(cfg)
    ledger = CostLedger(cfg.alpha)
    agents = _make_agents(cfg, ledger)
    net = SimNetwork(agents, byte_mode=cfg.byte_mode, ledger=ledger)

    train_cfg = TrainConfig(
        epochs=cfg.epochs,
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        momentum=cfg.momentum,
        seed=cfg.seed,
    )

    bb_cfg = BbTrainConfig(epochs=cfg.epochs, seed=cfg.seed) if cfg.bb else None

    # Teachers learn their own task sequences.
    packets: dict[int, KnowledgePacket] = {}
    for agent in agents:
        for task_index in cfg.assignment[agent.agent_id]:
            packets[task_index] = agent.learn_task(tasks[task_index], train_cfg, bb_cfg)

    # Optional bias-selected intermediate-feature heads, teacher-side only.
    h2t_acc = None
    if cfg.head2toe:
        h2t_acc = {}
        for agent in agents:
            for task_index in cfg.assignment[agent.agent_id]:
                ds = tasks[task_index]
                bias = agent.biases[task_index]
                selected = head2toe_select(bias, cfg.h2t_fraction)
                h2t = train_head2toe(
                    agent.backbone, bias, selected, ds, seed=cfg.seed
                )
                test = ds.split("test")
                h2t_acc[task_index] = h2t_accuracy(
                    agent.backbone, bias, h2t, test.x, test.labels
                )

    # Broadcast in canonical task order, then consolidate at the barrier.
    for task_id in sorted(packets):
        net.broadcast(cfg.assigned_agent(task_id), packets[task_id])
    for agent in agents:
        agent.finalize()

    history = evaluate_checkpoints(cfg, tasks, packets)

    # Pooled end-to-end accuracy over every task's test split.
    final_viewer = _eval_agent_upto(cfg, packets, len(tasks))
    predictions, truth = [], []
    for ds in tasks:
        test = ds.split("test")
        if len(test) == 0:
            continue
        mapped, classes = final_viewer.infer_batch(test.x)
        predictions.extend(
            (int(tk), int(cl)) for tk, cl in zip(mapped, classes)
        )
        truth.extend((ds.task_id, int(l)) for l in test.labels)
    e2e = plain_accuracy(predictions, truth)

    corrective: dict[str, float] = {"plain": e2e}
    if cfg.labels_path is not None:
        sims = similarity_matrix(cfg.labels_path, final_viewer.registry)
        for theta in sorted({0.90, 0.95, cfg.theta}):
            corrective[f"theta_{theta:.2f}"] = corrective_accuracy(
                predictions, truth, sims, theta, final_viewer.registry
            )

    result = RunResult(
        cfg, tasks, agents, net, ledger, history, packets, e2e, corrective, h2t_acc
    )
    write_reports(result, out_dir)
    return result


def write_reports(result: RunResult, out_dir: Path) -> None:
    cfg = result.config

    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(cfg.to_canonical_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    # Both byte-counting modes, side by side, for every shared packet.
    per_packet = {
        task_id: {
            "exact": packet_size(p, EXACT),
            "paper": packet_size(p, PAPER),
        }
        for task_id, p in sorted(result.packets.items())
    }
    bytes_exact = sum(v["exact"] for v in per_packet.values())
    bytes_paper = sum(v["paper"] for v in per_packet.values())

    costs = result.ledger.to_dict()
    costs["bytes_per_task"] = {str(k): v for k, v in per_packet.items()}
    costs["totals"] = {
        "egress_once": {"exact": bytes_exact, "paper": bytes_paper},
        "delivered": {
            "exact": bytes_exact * (cfg.agents - 1),
            "paper": bytes_paper * (cfg.agents - 1),
        },
        "byte_mode_for_ledger": cfg.byte_mode,
    }
    costs["end_to_end_accuracy"] = result.end_to_end_accuracy
    costs["corrective_accuracy"] = result.corrective
    with open(out_dir / "costs.json", "w", encoding="utf-8") as fh:
        json.dump(costs, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(out_dir / "checkpoints.csv", "w", encoding="utf-8") as fh:
        fh.write("t,mapper_accuracy,averaged_accuracy\n")
        for cp in result.history.checkpoints:
            fh.write(f"{cp.t},{cp.mapper_accuracy!r},{cp.averaged_accuracy!r}\n")

    with open(out_dir / "per_task_accuracy.csv", "w", encoding="utf-8") as fh:
        fh.write("t,task_id,accuracy,forced_accuracy\n")
        for cp in result.history.checkpoints:
            for task_id in cp.task_ids:
                fh.write(
                    f"{cp.t},{task_id},{cp.per_task_accuracy[task_id]!r},"
                    f"{cp.forced_accuracy[task_id]!r}\n"
                )

    with open(out_dir / "delivery_log.csv", "w", encoding="utf-8") as fh:
        fh.write(result.network.export_log_csv())

    summary: dict = {
        "tasks": len(result.tasks),
        "agents": cfg.agents,
        "mapper": cfg.mapper,
        "bb": cfg.bb,
        "end_to_end_accuracy": result.end_to_end_accuracy,
        "averaged_accuracy": result.history.checkpoints[-1].averaged_accuracy,
        "mapper_accuracy": result.history.checkpoints[-1].mapper_accuracy,
        "corrective_accuracy": result.corrective,
        "ledger_conservation": result.ledger.conservation_holds(cfg.agents),
    }
    if len(result.history.checkpoints) >= 2:
        curve = mapper_accuracy_curve(result.history)
        summary["mapper_regression"] = {
            "slope": curve.slope,
            "intercept": curve.intercept,
            "zero_crossing": curve.zero_crossing,
        }
    if result.h2t_accuracy is not None:
        summary["head2toe_accuracy"] = {
            str(k): v for k, v in sorted(result.h2t_accuracy.items())
        }
    summary["speedup"] = result.ledger.speedup_report()
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    sp = summary["speedup"]
    with open(out_dir / "summary.csv", "w", encoding="utf-8") as fh:
        fh.write(
            "row,teacher_macs,anchor_macs,comm_bytes_exact,comm_bytes_paper,"
            "student_macs,total_macs,efficiency,avg_accuracy\n"
        )
        teacher = sum(c.macs["teacher_train"] for c in result.ledger.agents.values())
        anchor = sum(c.macs["anchor_fit"] for c in result.ledger.agents.values())
        student = max(
            (c.macs["student_finalize"] for c in result.ledger.agents.values()),
            default=0.0,
        )
        fh.write(
            f"single,{teacher!r},{anchor!r},0,0,{student!r},"
            f"{sp['single_agent_macs']!r},1.0,"
            f"{summary['averaged_accuracy']!r}\n"
        )
        per_agent_teacher = teacher / cfg.agents
        fh.write(
            f"parallel,{per_agent_teacher!r},{anchor / cfg.agents!r},"
            f"{bytes_exact * (cfg.agents - 1)},{bytes_paper * (cfg.agents - 1)},"
            f"{student!r},{sp['wall_macs']!r},{sp['efficiency']!r},"
            f"{summary['averaged_accuracy']!r}\n"
        )


def bundle_digest(out_dir) -> str:
    """SHA-256 over every report file; used by the determinism check."""
    import hashlib

    out_dir = Path(out_dir)
    h = hashlib.sha256()
    for path in sorted(out_dir.rglob("*")):
        if path.is_file():
            h.update(path.relative_to(out_dir).as_posix().encode())
            h.update(path.read_bytes())
    return h.hexdigest()
