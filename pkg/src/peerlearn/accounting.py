"""Compute and communication cost accounting.

All compute is counted in multiply-accumulate operations (MACs) using
fixed, documented counting contracts rather than hardware measurement;
transmitted bytes convert to MAC-equivalents through the factor alpha
(default 1,000 MACs per byte).  The parallel wall-clock model is the max
over agents of (own training + alpha-converted ingress + consolidation),
i.e. a synchronous barrier after sharing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

DEFAULT_ALPHA = 1000.0

PHASES = ("teacher_train", "anchor_fit", "student_finalize")


def mac_head_train(n: int, dim: int, c: int, epochs: int) -> float:
    """epochs * n * 3 * D * c: one forward (D*c) plus backward (2*D*c) per sample."""
    if min(n, dim, c, epochs) < 1:
        raise ValueError("all head-training counts must be >= 1")
    return float(epochs) * n * 3.0 * dim * c


def mac_backbone_forward(backbone) -> float:
    """MACs of one forward pass through a toy backbone (conv + fc)."""
    from .backbone import ConvLayer, KERNEL

    total = 0.0
    c, h, w = backbone.input_shape
    for layer in backbone.layers:
        if isinstance(layer, ConvLayer):
            oh, ow = h - KERNEL + 1, w - KERNEL + 1
            total += layer.out_units * c * KERNEL * KERNEL * oh * ow
            c, h, w = layer.out_units, oh, ow
        else:
            total += float(layer.weights.shape[0]) * layer.weights.shape[1]
    return total


def mac_bb_train(n: int, backbone_forward_macs: float, epochs: int) -> float:
    """Bias training pays forward + 2x backward through the whole backbone."""
    return float(epochs) * n * 3.0 * backbone_forward_macs


def mac_gmmc_fit(n: int, k: int, dim: int, iters: int) -> float:
    """iters * n * k * 5 * D: E-step 3D per component-sample, M-step 2D."""
    if min(n, k, dim, iters) < 1:
        raise ValueError("all mixture-fit counts must be >= 1")
    return float(iters) * n * k * 5.0 * dim


def mac_class_means(n: int, dim: int) -> float:
    """One accumulate per value when averaging class vectors."""
    return float(n) * dim


def mac_maha_finalize(n_samples: int, dim: int) -> float:
    """Scatter accumulation N*D*(D+1)/2 plus the D^3/3 Cholesky."""
    return float(n_samples) * dim * (dim + 1) / 2.0 + float(dim) ** 3 / 3.0


def comm_to_macs(nbytes: float, alpha: float = DEFAULT_ALPHA) -> float:
    return float(nbytes) * alpha


def speedup(
    total_single_macs: float, per_agent_parallel_macs: list[float], n_agents: int
) -> tuple[float, float]:
    """(speedup, parallelization efficiency).

    Wall MACs is the max over agents of their parallel totals (each entry
    must already include alpha-converted ingress and consolidation);
    speedup = single/wall and efficiency = speedup / N, so 1.0 means
    perfect parallelization.
    """
    if n_agents != len(per_agent_parallel_macs) or n_agents < 1:
        raise ValueError("need one parallel MAC total per agent")
    wall = max(per_agent_parallel_macs)
    if wall <= 0:
        raise ValueError("parallel MACs must be positive")
    s = total_single_macs / wall
    return s, s / n_agents


def er_cost(n_tasks: int, gamma: float) -> dict[str, float]:
    """Normalized training time of the growing-rehearsal-buffer baseline.

    Returns both readings of the arithmetic series sum_t (1 + (t-1)*gamma):
    the exact summation N + gamma*N*(N-1)/2 and the reference closed form
    N + gamma*(N-1)*(N-2)/2.  They disagree; neither is corrected here.
    """
    if n_tasks < 1:
        raise ValueError("need at least one task")
    summation = n_tasks + gamma * n_tasks * (n_tasks - 1) / 2.0
    closed = n_tasks + gamma * (n_tasks - 1) * (n_tasks - 2) / 2.0
    return {"summation_form": summation, "paper_form": closed}


@dataclass
class AgentCosts:
    macs: dict[str, float] = field(default_factory=lambda: {p: 0.0 for p in PHASES})
    egress_bytes: float = 0.0
    ingress_bytes: float = 0.0

    @property
    def compute_macs(self) -> float:
        return sum(self.macs.values())

    def parallel_total(self, alpha: float) -> float:
        return self.compute_macs + comm_to_macs(self.ingress_bytes, alpha)


class CostLedger:
    """Per-agent, per-phase MAC and byte counters; counters only grow."""

    def __init__(self, alpha: float = DEFAULT_ALPHA):
        self.alpha = float(alpha)
        self.agents: dict[int, AgentCosts] = {}

    def _agent(self, agent_id: int) -> AgentCosts:
        return self.agents.setdefault(agent_id, AgentCosts())

    def add_macs(self, agent_id: int, phase: str, macs: float) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if macs < 0:
            raise ValueError("MAC counts cannot decrease")
        self._agent(agent_id).macs[phase] += macs

    def add_egress(self, agent_id: int, nbytes: float) -> None:
        if nbytes < 0:
            raise ValueError("byte counts cannot decrease")
        self._agent(agent_id).egress_bytes += nbytes

    def add_ingress(self, agent_id: int, nbytes: float) -> None:
        if nbytes < 0:
            raise ValueError("byte counts cannot decrease")
        self._agent(agent_id).ingress_bytes += nbytes

    def total_egress(self) -> float:
        return sum(a.egress_bytes for a in self.agents.values())

    def total_ingress(self) -> float:
        return sum(a.ingress_bytes for a in self.agents.values())

    def conservation_holds(self, n_agents: int) -> bool:
        """Broadcast sharing: every egress byte lands on N-1 receivers."""
        return self.total_egress() * (n_agents - 1) == self.total_ingress()

    def speedup_report(self) -> dict:
        """Single-vs-parallel comparison under the documented wall model.

        The single-agent reference does all teaching and anchor fitting
        itself plus one consolidation, with no communication.
        """
        ids = sorted(self.agents)
        per_agent = [self.agents[a].parallel_total(self.alpha) for a in ids]
        single = sum(
            self.agents[a].macs["teacher_train"] + self.agents[a].macs["anchor_fit"]
            for a in ids
        )
        single += max((self.agents[a].macs["student_finalize"] for a in ids), default=0.0)
        s, eff = speedup(single, per_agent, len(ids))
        return {
            "single_agent_macs": single,
            "wall_macs": max(per_agent),
            "speedup": s,
            "efficiency": eff,
            "n_agents": len(ids),
        }

    def to_dict(self) -> dict:
        out = {
            "alpha": self.alpha,
            "agents": {
                str(a): {
                    "macs": dict(c.macs),
                    "egress_bytes": c.egress_bytes,
                    "ingress_bytes": c.ingress_bytes,
                    "parallel_total_macs": c.parallel_total(self.alpha),
                }
                for a, c in sorted(self.agents.items())
            },
        }
        if self.agents:
            out["speedup"] = self.speedup_report()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)
