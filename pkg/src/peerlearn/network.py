"""Simulated fully-connected broadcast network with byte-exact accounting.

The network is a deterministic event log: a broadcast delivers one copy
of the packet to every other agent in ascending agent-id order, and the
received bytes accumulate at the receiver (the communication bottleneck
sits at the student's single interface).  Two byte-counting modes exist:

  exact        -- the length of the serialized packet as transmitted here
  paper-parity -- what the reference deployment would transmit for the
                  same knowledge: head 2048*c*4 bytes, beneficial biases
                  N*4 bytes, mixture anchors k*(2*2048)*4 bytes (mixture
                  weights not counted), and 5 raw 299x299 RGB exemplar
                  images per task for the Mahalanobis route

Packet wire layout (little-endian): magic "PKT1", task_id u32, mapper
kind u8 (0 gmmc / 1 maha), bb flag u8, class count u16, per class
(name length u16 + UTF-8 bytes), head block (len u32 + bytes), bb block
(len u32 + bytes, len 0 when absent), anchor block (len u32 + bytes).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .agents import GMMC, MAHA, AgentState, KnowledgePacket
from .errors import BadMagic, UnknownSender

EXACT = "exact"
PAPER = "paper"

PAPER_DIM = 2048
PAPER_IMAGE_BYTES = 299 * 299 * 3
PAPER_EXEMPLARS_PER_TASK = 5
FLOAT_BYTES = 4

_MAGIC = b"PKT1"
_KIND = {GMMC: 0, MAHA: 1}
_KIND_BACK = {v: k for k, v in _KIND.items()}


def serialize_packet(packet: KnowledgePacket) -> bytes:
    names = b""
    for name in packet.class_names:
        raw = name.encode("utf-8")
        names += struct.pack("<H", len(raw)) + raw
    bb = packet.bb_bytes or b""
    out = _MAGIC
    out += struct.pack(
        "<IBBH",
        packet.task_id,
        _KIND[packet.mapper_mode],
        1 if packet.bb_bytes is not None else 0,
        len(packet.class_names),
    )
    out += names
    out += struct.pack("<I", len(packet.head_bytes)) + packet.head_bytes
    out += struct.pack("<I", len(bb)) + bb
    out += struct.pack("<I", len(packet.anchor_bytes)) + packet.anchor_bytes
    return out


def deserialize_packet(buf: bytes) -> KnowledgePacket:
    if buf[:4] != _MAGIC:
        raise BadMagic("not a knowledge packet")
    task_id, kind, has_bb, n_names = struct.unpack_from("<IBBH", buf, 4)
    offset = 12
    names = []
    for _ in range(n_names):
        (ln,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        names.append(buf[offset : offset + ln].decode("utf-8"))
        offset += ln
    blocks = []
    for _ in range(3):
        (ln,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        blocks.append(buf[offset : offset + ln])
        offset += ln
    head_bytes, bb_bytes, anchor_bytes = blocks
    return KnowledgePacket(
        task_id,
        _KIND_BACK[kind],
        names,
        head_bytes,
        anchor_bytes,
        bb_bytes if has_bb else None,
    )


def paper_head_bytes(c: int) -> int:
    return PAPER_DIM * c * FLOAT_BYTES


def paper_bb_bytes(n_biases: int) -> int:
    return n_biases * FLOAT_BYTES


def paper_gmmc_bytes(k: int) -> int:
    return k * (2 * PAPER_DIM) * FLOAT_BYTES


def paper_maha_bytes(n_images: int = PAPER_EXEMPLARS_PER_TASK) -> int:
    return n_images * PAPER_IMAGE_BYTES


def paper_h2t_bytes(n_biases: int, c: int) -> int:
    """Optional intermediate-feature head: N x c extra weights."""
    return n_biases * c * FLOAT_BYTES


def paper_ar_bytes() -> int:
    """Optional input-space reprogramming pattern: one raw image."""
    return PAPER_IMAGE_BYTES


def packet_size(packet: KnowledgePacket, mode: str = EXACT) -> int:
    """Bytes attributed to one shared packet under the given mode."""
    if mode == EXACT:
        return len(serialize_packet(packet))
    if mode != PAPER:
        raise ValueError(f"unknown byte-counting mode {mode!r}")
    c = len(packet.class_names)
    total = paper_head_bytes(c)
    if packet.bb_bytes is not None:
        total += paper_bb_bytes(len(packet.bb_bytes) // FLOAT_BYTES)
    if packet.mapper_mode == GMMC:
        (k,) = struct.unpack_from("<I", packet.anchor_bytes, 4)
        total += paper_gmmc_bytes(k)
    else:
        total += paper_maha_bytes()
    return total


@dataclass
class Delivery:
    sender: int
    receiver: int
    task_id: int
    nbytes: int


class SimNetwork:
    """Roster of agents plus the committed delivery log."""

    def __init__(self, agents: list[AgentState], byte_mode: str = EXACT, ledger=None):
        self.agents = {a.agent_id: a for a in agents}
        if len(self.agents) != len(agents):
            raise ValueError("duplicate agent ids in the roster")
        self.byte_mode = byte_mode
        self.ledger = ledger
        self.log: list[Delivery] = []
        self.packet_store: dict[tuple[int, int], bytes] = {}

    def broadcast(self, sender_id: int, packet: KnowledgePacket) -> list[Delivery]:
        """Deliver to every other agent in ascending id order; no self-delivery."""
        if sender_id not in self.agents:
            raise UnknownSender(f"agent {sender_id} is not in the roster")
        wire = serialize_packet(packet)
        self.packet_store[(sender_id, packet.task_id)] = wire
        nbytes = packet_size(packet, self.byte_mode)
        if self.ledger is not None:
            self.ledger.add_egress(sender_id, nbytes)
        events = []
        for receiver_id in sorted(self.agents):
            if receiver_id == sender_id:
                continue
            self.agents[receiver_id].receive(deserialize_packet(wire))
            if self.ledger is not None:
                self.ledger.add_ingress(receiver_id, nbytes)
            events.append(Delivery(sender_id, receiver_id, packet.task_id, nbytes))
        self.log.extend(events)
        return events

    def total_logged_bytes(self) -> int:
        return sum(d.nbytes for d in self.log)

    def export_log_csv(self) -> str:
        lines = ["sender,receiver,task_id,bytes,mode"]
        for d in self.log:
            lines.append(f"{d.sender},{d.receiver},{d.task_id},{d.nbytes},{self.byte_mode}")
        return "\n".join(lines) + "\n"

    def replay_into(self, agents: list[AgentState]) -> None:
        """Re-deliver the stored packets to a fresh roster, log order."""
        fresh = {a.agent_id: a for a in agents}
        delivered: set[tuple[int, int]] = set()
        for d in self.log:
            key = (d.sender, d.task_id)
            fresh[d.receiver].receive(deserialize_packet(self.packet_store[key]))
            delivered.add(key)
