"""gems: gradient multi-subspace tuning on a toy search & recommendation
workload.

Task gradients are projected into a shared and two task-specific
low-rank subspaces (tracked with subspace-local Adam moments), fused
through an adaptive gate, and optionally projected off the dominant
hidden-state directions of a pre-trained backbone before being applied.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, rng_for, seed_stream
from .controller import VARIANTS, GemsOptimizer, NumericError, StepReport, fuse
from .data import (
    DataConfig,
    Dataset,
    EvalRecord,
    Interaction,
    ItemId,
    ProbeRecord,
    Vocab,
    format_prompt,
    general_domain,
    generate_dataset,
    load_dataset,
    save_dataset,
)
from .decode import (
    constrained_beam_search,
    evaluate,
    hit_at_k,
    ndcg_at_k,
    rank_candidates,
    top1,
)
from .diagnostics import (
    ConflictRecord,
    MemoryAudit,
    classify_layer,
    conflict_coefficient,
    conflict_heatmap,
    intent_preservation,
    memory_audit,
)
from .experiments import (
    RunResult,
    conflict_csv,
    metrics_csv,
    run_ablation,
    run_intent_experiment,
    run_training,
)
from .gating import GatingNet, TaskBatchStats, gate_features, gate_forward
from .harness import assemble_batch, nll_loss, sample_batch, task_gradients
from .linalg import flat_cosine, load_matrix, save_matrix, svd, truncated_basis
from .model import ModelConfig, ToyModel
from .nullspace import (
    KnowledgeProjector,
    ProbeCorpus,
    build_projector,
    collect_features,
    drift_probe,
    project_update,
)
from .subspace import SubspaceState, adam_step, project, project_back

__version__ = "0.1.0"
