"""Speculative decoding with prune-then-graft hybrid draft trees, desk scale."""

from .drafttree import (
    DraftNode,
    DraftTree,
    PruneConfig,
    PruneDecision,
    evaluate_gate,
    expand_layer,
    layer_confidence,
    new_tree,
    resolve_stage,
)
from .engine import (
    AblationFixture,
    CalibrationResult,
    CostModel,
    DecodeConfig,
    DecodeReport,
    build_next_tree,
    calibrate,
    compute_metrics,
    coverage_gain,
    decode_session,
    run_ablation,
    theory_checks,
)
from .errors import AnalysisError, ConfigError, InputError, SpecGraftError, StructureError
from .hybrid import (
    HybridTree,
    VerificationPackage,
    flatten,
    insert_root_variant,
    insert_tail_variant,
    merge,
    render_tree,
)
from .models import (
    DraftDerivation,
    MarkovTableModel,
    VocabSpec,
    build_markov,
    derive_draft,
    next_distribution,
    sample,
    train_ngram,
)
from .retrieval import (
    RetrievedBranch,
    StageTemplate,
    TransitionMatrix,
    builtin_templates,
    instantiate,
    load_matrix,
    lookup,
    new_matrix,
    save_matrix,
    storage_bytes,
    update_from_verification,
    update_row,
    warmup,
)
from .verify import VerifyOutcome, node_distributions, verify_greedy, verify_stochastic

__version__ = "0.1.0"
