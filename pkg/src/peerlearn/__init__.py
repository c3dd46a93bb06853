"""peerlearn: parallel lifelong learners sharing compact task knowledge.

N agents learn disjoint task sequences as linear heads (plus optional
beneficial biases) over a frozen feature space, broadcast heads and task
anchors to each other, and afterwards route any input to the right head
without a task oracle.  All compute and communication is accounted in
MACs and bytes.
"""

from .accounting import (
    CostLedger,
    comm_to_macs,
    er_cost,
    mac_gmmc_fit,
    mac_head_train,
    mac_maha_finalize,
    speedup,
)
from .agents import AgentConfig, AgentState, KnowledgePacket
from .backbone import (
    BeneficialBias,
    ToyBackbone,
    forward,
    head2toe_select,
    make_backbone,
    train_bb,
    train_head2toe,
)
from .dataset import (
    GlobalClassRegistry,
    SynthSpec,
    TaskDataset,
    load_task,
    synth_task,
    write_task,
)
from .evaluate import (
    RunHistory,
    SimilarityMatrix,
    corrective_accuracy,
    mapper_accuracy_curve,
    normalized_accuracy,
    similarity_matrix,
)
from .gmmc import AnchorBank, GmmcAnchor, fit_gmmc
from .heads import (
    Head,
    TrainConfig,
    concat_heads,
    normalize_rows,
    predict,
    train_head,
    transfer_init,
)
from .maha import MahaBank, MahaTeacherShare, class_means, fit_tied_covariance, sample_shared
from .network import SimNetwork, deserialize_packet, packet_size, serialize_packet
from .numkit import RngStream, cholesky_solve, logsumexp

__version__ = "0.1.0"
