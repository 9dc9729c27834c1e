"""Layered draft-tree construction, path scores, confidence gates, pruning.

A tree is stored as parallel arrays in breadth-first order. Node 0 is the
root (the last committed token); every other node carries the log draft
probability of its token given its path and the cumulative path score,
which is the sum of those log probabilities from the root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, InputError, StructureError
from .models import MarkovTableModel

ROOT_PARENT = -1
STAGE_NONE = "none"


def stage_label(checkpoint) -> str:
    return STAGE_NONE if checkpoint is None else f"d{checkpoint}"


@dataclass(frozen=True)
class DraftNode:
    token: int
    parent: int
    depth: int
    logq: float
    score: float


@dataclass
class DraftTree:
    """Breadth-first draft tree rooted at the last committed token.

    ``context`` is the full committed token sequence; its final element is
    the root token. ``layer_offsets[d]`` is the (start, end) slice of the
    depth-d nodes inside the node arrays.
    """

    context: tuple[int, ...]
    tokens: np.ndarray
    parents: np.ndarray
    depths: np.ndarray
    logqs: np.ndarray
    scores: np.ndarray
    layer_offsets: list[tuple[int, int]]

    @property
    def root_token(self) -> int:
        return int(self.tokens[0])

    @property
    def n_nodes(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def max_layer(self) -> int:
        return len(self.layer_offsets) - 1

    def node(self, i: int) -> DraftNode:
        return DraftNode(
            token=int(self.tokens[i]),
            parent=int(self.parents[i]),
            depth=int(self.depths[i]),
            logq=float(self.logqs[i]),
            score=float(self.scores[i]),
        )

    def layer(self, depth: int) -> np.ndarray:
        if not 0 <= depth < len(self.layer_offsets):
            raise StructureError(f"no layer at depth {depth}")
        lo, hi = self.layer_offsets[depth]
        return np.arange(lo, hi)

    def branch_tokens(self, i: int) -> list[int]:
        """Tokens below the root along the path to node i (i's token last)."""
        out = []
        while i != 0:
            out.append(int(self.tokens[i]))
            i = int(self.parents[i])
        out.reverse()
        return out


def new_tree(context) -> DraftTree:
    context = tuple(int(t) for t in context)
    if not context:
        raise InputError("context must contain at least the root token")
    return DraftTree(
        context=context,
        tokens=np.array([context[-1]], dtype=np.int32),
        parents=np.array([ROOT_PARENT], dtype=np.int32),
        depths=np.array([0], dtype=np.int16),
        logqs=np.array([0.0]),
        scores=np.array([0.0]),
        layer_offsets=[(0, 1)],
    )


def expand_layer(tree: DraftTree, draft: MarkovTableModel, top_k: int, beam_width: int | None = None) -> DraftTree:
    """Append one layer: top-``top_k`` children per frontier node, then keep
    the ``beam_width`` highest-score nodes of the new layer.

    Ties in the per-node top-k go to the lower token id; zero-probability
    tokens are never proposed. Returns a new tree, leaving the input intact.
    """
    if top_k < 1:
        raise InputError(f"top_k must be >= 1, got {top_k}")
    if beam_width is None:
        beam_width = top_k
    frontier = tree.layer(tree.max_layer)
    if frontier.size == 0:
        raise StructureError("cannot expand an empty frontier")

    rows = np.empty((frontier.size, draft.vocab.size))
    for r, i in enumerate(frontier):
        rows[r] = draft.next_distribution(tree.context + tuple(tree.branch_tokens(int(i))))

    # stable argsort on -p resolves probability ties to ascending token id
    order = np.argsort(-rows, axis=1, kind="stable")[:, :top_k]
    picked = np.take_along_axis(rows, order, axis=1)

    cand_parent = np.repeat(frontier, order.shape[1]).astype(np.int32)
    cand_token = order.reshape(-1).astype(np.int32)
    cand_p = picked.reshape(-1)
    keep = cand_p > 0.0
    cand_parent, cand_token, cand_p = cand_parent[keep], cand_token[keep], cand_p[keep]
    if cand_token.size == 0:
        raise StructureError("no positive-probability candidates in the new layer")
    cand_logq = np.log(cand_p)
    cand_score = tree.scores[cand_parent] + cand_logq

    if cand_score.size > beam_width:
        best = np.argsort(-cand_score, kind="stable")[:beam_width]
        best.sort()  # keep the (parent, token-rank) generation order
        cand_parent, cand_token = cand_parent[best], cand_token[best]
        cand_logq, cand_score = cand_logq[best], cand_score[best]

    lo = tree.n_nodes
    hi = lo + cand_token.size
    depth = tree.max_layer + 1
    return DraftTree(
        context=tree.context,
        tokens=np.concatenate([tree.tokens, cand_token]),
        parents=np.concatenate([tree.parents, cand_parent]),
        depths=np.concatenate([tree.depths, np.full(cand_token.size, depth, dtype=np.int16)]),
        logqs=np.concatenate([tree.logqs, cand_logq]),
        scores=np.concatenate([tree.scores, cand_score]),
        layer_offsets=tree.layer_offsets + [(lo, hi)],
    )


def layer_confidence(tree: DraftTree, depth: int) -> float:
    """exp(best cumulative score at ``depth``); the root layer scores 1.0."""
    idx = tree.layer(depth)
    if idx.size == 0:
        raise StructureError(f"empty layer at depth {depth}")
    return float(np.exp(tree.scores[idx].max()))


def evaluate_gate(confidence: float, threshold: float) -> bool:
    """True iff the gate passes (strictly above threshold); equality prunes."""
    if not (0.0 < threshold < 1.0):
        raise InputError(f"threshold must be in (0, 1), got {threshold}")
    return confidence > threshold


@dataclass(frozen=True)
class PruneConfig:
    """Checkpointed pruning policy and the fixed-budget stage splits."""

    checkpoints: tuple[int, ...] = (0, 1, 5)
    thresholds: dict[int, float] = field(default_factory=lambda: {0: 0.15, 1: 0.13, 5: 0.51})
    stage_budgets: dict[int, tuple[int, int]] = field(
        default_factory=lambda: {0: (8, 52), 1: (24, 36), 5: (40, 20)}
    )
    total_budget: int = 60
    top_k: int = 10
    max_depth: int = 8
    beam_width: int = 10

    def __post_init__(self):
        if self.total_budget < 1 or self.top_k < 1 or self.max_depth < 1:
            raise ConfigError("budget, top_k and max_depth must be positive")
        if tuple(sorted(self.checkpoints)) != self.checkpoints:
            raise ConfigError("checkpoints must be ascending")
        for d in self.checkpoints:
            if not 0 <= d < self.max_depth:
                raise ConfigError(f"checkpoint {d} outside [0, max_depth)")
            if d not in self.thresholds:
                raise ConfigError(f"missing threshold for checkpoint {d}")
            if not (0.0 < self.thresholds[d] < 1.0):
                raise ConfigError(f"threshold for checkpoint {d} must be in (0, 1)")
            if d not in self.stage_budgets:
                raise ConfigError(f"missing stage budget for checkpoint {d}")
            kd, kr = self.stage_budgets[d]
            if kd < 0 or kr < 0 or kd + kr != self.total_budget:
                raise ConfigError(
                    f"stage {d} split {kd}+{kr} must equal total budget {self.total_budget}"
                )

    def draft_budget(self, checkpoint) -> int:
        if checkpoint is None:
            return self.total_budget
        return self.stage_budgets[checkpoint][0]

    def retrieval_budget(self, checkpoint) -> int:
        if checkpoint is None:
            return 0
        return self.stage_budgets[checkpoint][1]


@dataclass
class PruneDecision:
    """Outcome of gated expansion: the stage and the retained candidate set."""

    stage: int | None
    confidence_trace: dict[int, float]
    layer_confidences: list[float]
    retained: np.ndarray  # node indices in the expanded tree, root included
    layers_drafted: int

    @property
    def stage_name(self) -> str:
        return stage_label(self.stage)


def select_retained(tree: DraftTree, limit: int) -> np.ndarray:
    """Top-``limit`` candidates by score, parent-closed, root always kept.

    Candidates are ranked by score with ties broken toward shallower,
    earlier nodes; a node may be kept only if its parent is kept. Since
    scores never increase along a path, one best-first pass suffices.
    """
    order = np.argsort(-tree.scores, kind="stable")
    keep = _kernels.select_topk_closure(order, tree.parents, limit)
    return np.flatnonzero(keep)


def resolve_stage(draft: MarkovTableModel, context, config: PruneConfig) -> tuple[DraftTree, PruneDecision]:
    """Expand with gates per the pruning policy and pick the stage.

    A checkpoint d is evaluated right after layer d+1 is drafted, on that
    layer's confidence; the first failed gate stops expansion. With no
    failed gate the tree reaches ``max_depth`` and the stage is ``None``.
    """
    tree = new_tree(context)
    checkpoints = set(config.checkpoints)
    trace: dict[int, float] = {}
    layer_conf: list[float] = []
    stage: int | None = None
    for depth in range(1, config.max_depth + 1):
        tree = expand_layer(tree, draft, config.top_k, config.beam_width)
        conf = layer_confidence(tree, depth)
        layer_conf.append(conf)
        checkpoint = depth - 1
        if checkpoint in checkpoints:
            trace[checkpoint] = conf
            if not evaluate_gate(conf, config.thresholds[checkpoint]):
                stage = checkpoint
                break
    retained = select_retained(tree, config.draft_budget(stage))
    return tree, PruneDecision(
        stage=stage,
        confidence_trace=trace,
        layer_confidences=layer_conf,
        retained=retained,
        layers_drafted=tree.max_layer,
    )
