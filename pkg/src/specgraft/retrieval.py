"""Top-k successor matrix, stage-adaptive retrieval templates, online updates.

The matrix holds, per vocabulary token, the k most likely successor ids
seen so far. Rows are refreshed wholesale from verified target rows
(argtop-k with ties to the lower id). Cold entries are tracked with an
explicit validity bitmap so every token id stays usable.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, InputError, StructureError
from .models import MarkovTableModel

COLD = -1

# per-depth node counts for the builtin templates (9 retrieval depths)
TEMPLATE_DEPTH_COUNTS = {
    "full": (8, 16, 14, 11, 8, 7, 6, 5, 5),
    "d0": (8, 10, 8, 6, 5, 4, 4, 4, 3),
    "d1": (6, 7, 5, 4, 4, 3, 3, 2, 2),
    "d5": (4, 3, 3, 2, 2, 2, 2, 1, 1),
}
MAX_TEMPLATE_DEPTH = 9


@dataclass
class TransitionMatrix:
    rows: np.ndarray  # (vocab, k) int32 successor ids
    valid: np.ndarray  # (vocab, k) bool
    k: int

    @property
    def vocab_size(self) -> int:
        return int(self.rows.shape[0])

    def copy(self) -> "TransitionMatrix":
        return TransitionMatrix(self.rows.copy(), self.valid.copy(), self.k)

    def touched_rows(self) -> int:
        if self.k == 0:
            return 0
        return int(self.valid[:, 0].sum())


def new_matrix(vocab_size: int, k: int) -> TransitionMatrix:
    if vocab_size < 2 or k < 0:
        raise InputError(f"bad matrix shape vocab={vocab_size} k={k}")
    k = min(k, vocab_size)  # a row cannot hold more distinct successors
    return TransitionMatrix(
        rows=np.full((vocab_size, k), COLD, dtype=np.int32),
        valid=np.zeros((vocab_size, k), dtype=bool),
        k=k,
    )


def lookup(matrix: TransitionMatrix, token: int, rank: int):
    """Stored successor id, or None when the slot is cold."""
    if not 0 <= token < matrix.vocab_size:
        raise InputError(f"token {token} out of range")
    if not 0 <= rank < matrix.k:
        raise InputError(f"rank {rank} out of range for k={matrix.k}")
    if not matrix.valid[token, rank]:
        return None
    return int(matrix.rows[token, rank])


def argtopk(dist: np.ndarray, k: int) -> np.ndarray:
    """Top-k token ids by probability, descending, ties to the lower id."""
    order = np.argsort(-dist, kind="stable")
    return order[:k].astype(np.int32)


def update_row(matrix: TransitionMatrix, token: int, dist: np.ndarray) -> TransitionMatrix:
    """Replace the row wholesale with argtop-k of ``dist``; all slots valid."""
    if not 0 <= token < matrix.vocab_size:
        raise InputError(f"token {token} out of range")
    matrix.rows[token] = argtopk(np.asarray(dist, dtype=np.float64), matrix.k)
    matrix.valid[token] = True
    return matrix


def update_from_verification(matrix: TransitionMatrix, pairs) -> TransitionMatrix:
    """Apply ``update_row`` for each (token, dist) in order; last writer wins.

    Equivalent to sequential update_row calls, with the argtop-k sorts batched.
    """
    pairs = list(pairs)
    if not pairs:
        return matrix
    tokens = np.fromiter((int(t) for t, _ in pairs), dtype=np.int64, count=len(pairs))
    if tokens.min() < 0 or tokens.max() >= matrix.vocab_size:
        raise InputError("verified token out of range")
    stacked = np.stack([d for _, d in pairs])
    order = np.argsort(-stacked, axis=1, kind="stable")[:, : matrix.k].astype(np.int32)
    for i in range(len(pairs)):
        matrix.rows[tokens[i]] = order[i]
        matrix.valid[tokens[i]] = True
    return matrix


def storage_bytes(matrix: TransitionMatrix) -> int:
    """Dense capacity: 4 bytes per id slot plus the validity bitmap."""
    cells = matrix.vocab_size * matrix.k
    return cells * 4 + (cells + 7) // 8


def touched_bytes(matrix: TransitionMatrix) -> int:
    """Touched-rows-only footprint (ids of refreshed rows, no bitmap)."""
    return matrix.touched_rows() * matrix.k * 4


# ---------------------------------------------------------------------------
# templates


@dataclass(frozen=True)
class TemplateNode:
    parent: int  # template index, -1 for the root
    rank: int
    depth: int


@dataclass
class StageTemplate:
    """Static rank-path topology, breadth-first, root excluded."""

    stage: str
    parents: np.ndarray  # (n,) int32, -1 means the tree root
    ranks: np.ndarray  # (n,) int32
    depths: np.ndarray  # (n,) int32
    declared_size: int

    def __len__(self) -> int:
        return self.declared_size

    def node(self, i: int) -> TemplateNode:
        return TemplateNode(int(self.parents[i]), int(self.ranks[i]), int(self.depths[i]))

    def depth_counts(self) -> list[int]:
        n_depths = int(self.depths.max()) if self.declared_size else 0
        return [int((self.depths == d).sum()) for d in range(1, n_depths + 1)]

    def max_rank(self) -> int:
        return int(self.ranks.max()) if self.declared_size else 0

    def rank_path(self, i: int) -> tuple[int, ...]:
        path = []
        while i >= 0:
            path.append(int(self.ranks[i]))
            i = int(self.parents[i])
        return tuple(reversed(path))


def template_from_depth_counts(stage: str, counts) -> StageTemplate:
    """Build the unbalanced template realizing the per-depth node counts.

    Children are dealt to the previous layer in waves (one child per parent
    per wave, parents in lexicographic rank-path order), so lower-rank
    lineages get more children and survive deepest; a parent's children take
    ranks 0..c-1. The rank-0 chain therefore persists through every depth.
    """
    counts = [int(c) for c in counts if int(c) > 0]
    if len(counts) > MAX_TEMPLATE_DEPTH:
        raise ConfigError(f"template deeper than {MAX_TEMPLATE_DEPTH}")
    parents: list[int] = []
    ranks: list[int] = []
    depths: list[int] = []
    prev_layer: list[int] = []  # template indices of the previous depth, priority order

    for depth, count in enumerate(counts, start=1):
        if depth == 1:
            layer = []
            for r in range(count):
                parents.append(-1)
                ranks.append(r)
                depths.append(1)
                layer.append(len(parents) - 1)
        else:
            if count > 0 and not prev_layer:
                raise ConfigError("template layer has no parents to attach to")
            per_parent = [0] * len(prev_layer)
            for j in range(count):
                per_parent[j % len(prev_layer)] += 1
            layer = []
            # emit children parent-major so BFS order matches priority order
            for slot, parent in enumerate(prev_layer):
                for r in range(per_parent[slot]):
                    parents.append(parent)
                    ranks.append(r)
                    depths.append(depth)
                    layer.append(len(parents) - 1)
        prev_layer = layer

    return StageTemplate(
        stage=stage,
        parents=np.array(parents, dtype=np.int32),
        ranks=np.array(ranks, dtype=np.int32),
        depths=np.array(depths, dtype=np.int32),
        declared_size=len(parents),
    )


@lru_cache(maxsize=8)
def builtin_templates(k: int) -> dict[str, StageTemplate]:
    """The four shipped templates: sizes 80 (full), 52 (d0), 36 (d1), 20 (d5).

    Cached per k; callers must treat the returned templates as read-only.
    """
    templates = {name: template_from_depth_counts(name, counts) for name, counts in TEMPLATE_DEPTH_COUNTS.items()}
    need = max(t.max_rank() for t in templates.values()) + 1
    if k < need:
        raise ConfigError(f"k={k} too small for builtin templates (need >= {need})")
    return templates


def filter_template(
    template: StageTemplate,
    max_depth: int | None = None,
    max_rank: int | None = None,
) -> StageTemplate:
    """Ancestor-closed restriction to nodes within a depth/successor-rank cap."""
    n = template.declared_size
    keep = np.zeros(n, dtype=bool)
    remap = np.full(n, -1, dtype=np.int32)
    parents, ranks, depths = [], [], []
    for i in range(n):
        p = int(template.parents[i])
        if p >= 0 and not keep[p]:
            continue
        if max_depth is not None and template.depths[i] > max_depth:
            continue
        if max_rank is not None and template.ranks[i] >= max_rank:
            continue
        keep[i] = True
        remap[i] = len(parents)
        parents.append(remap[p] if p >= 0 else -1)
        ranks.append(int(template.ranks[i]))
        depths.append(int(template.depths[i]))
    return StageTemplate(
        stage=f"{template.stage}|d<={max_depth},r<{max_rank}",
        parents=np.array(parents, dtype=np.int32),
        ranks=np.array(ranks, dtype=np.int32),
        depths=np.array(depths, dtype=np.int32),
        declared_size=len(parents),
    )


def template_prefix(template: StageTemplate, size: int, stage: str | None = None) -> StageTemplate:
    """Breadth-first prefix of a template (parents always precede children)."""
    if size >= template.declared_size:
        return template
    return StageTemplate(
        stage=stage or f"{template.stage}[:{size}]",
        parents=template.parents[:size].copy(),
        ranks=template.ranks[:size].copy(),
        depths=template.depths[:size].copy(),
        declared_size=size,
    )


@dataclass
class RetrievedBranch:
    """Template instantiated against the matrix from a root token.

    ``tokens[i]`` is valid only where ``realized[i]``; a node is realized
    iff its parent is realized and the parent row has a valid entry at the
    node's rank.
    """

    template: StageTemplate
    root_token: int
    tokens: np.ndarray
    realized: np.ndarray

    @property
    def realized_count(self) -> int:
        return int(self.realized.sum())


def instantiate(matrix: TransitionMatrix, template: StageTemplate, root: int) -> RetrievedBranch:
    """Breadth-first fill; cold rows shrink the branch, never fail it."""
    if not 0 <= root < matrix.vocab_size:
        raise InputError(f"root token {root} out of range")
    n = template.declared_size
    tokens = np.full(n, COLD, dtype=np.int32)
    realized = np.zeros(n, dtype=bool)
    for i in range(n):
        p = int(template.parents[i])
        rank = int(template.ranks[i])
        if rank >= matrix.k:
            continue
        if p < 0:
            parent_token = root
        elif realized[p]:
            parent_token = int(tokens[p])
        else:
            continue
        if matrix.valid[parent_token, rank]:
            tokens[i] = matrix.rows[parent_token, rank]
            realized[i] = True
    return RetrievedBranch(template=template, root_token=int(root), tokens=tokens, realized=realized)


def empty_branch(root: int) -> RetrievedBranch:
    t = StageTemplate(
        stage="empty",
        parents=np.empty(0, dtype=np.int32),
        ranks=np.empty(0, dtype=np.int32),
        depths=np.empty(0, dtype=np.int32),
        declared_size=0,
    )
    return RetrievedBranch(template=t, root_token=int(root), tokens=np.empty(0, dtype=np.int32), realized=np.zeros(0, dtype=bool))


# ---------------------------------------------------------------------------
# warm-up


def warmup(
    matrix: TransitionMatrix,
    target: MarkovTableModel,
    draft: MarkovTableModel,
    prompts,
    rounds: int,
    config=None,
    max_new_tokens: int = 128,
):
    """Enrich the matrix with ``rounds`` full decode sessions over held-out
    warm-up prompts, one prompt per round (cycling), discarding the text.

    Each round visits fresh held-out material, so touched-row storage grows
    with the round count. The transcript carries per-round statistics and
    the observed checkpoint confidences for threshold calibration.
    """
    from .engine import DecodeConfig, decode_session  # cycle: engine drives sessions

    if rounds < 0:
        raise InputError("rounds must be >= 0")
    transcript = []
    if rounds == 0:
        return matrix, transcript
    if config is None:
        config = DecodeConfig(method="graft", max_new_tokens=max_new_tokens)
    prompts = list(prompts)
    if not prompts:
        raise InputError("warm-up needs at least one prompt")
    for rnd in range(rounds):
        confidences: dict[int, list[float]] = {d: [] for d in config.prune.checkpoints}
        prompt = prompts[rnd % len(prompts)]
        _, report = decode_session(config, target, draft, matrix, prompt)
        for step in report.steps:
            for d, c in step.get("confidence_trace", {}).items():
                confidences[int(d)].append(c)
        transcript.append(
            {
                "round": rnd,
                "prompt_index": rnd % len(prompts),
                "steps": report.steps_count,
                "tokens": report.tokens_emitted,
                "mat": report.mat,
                "rows_touched": matrix.touched_rows(),
                "confidences": {d: sorted(v) for d, v in confidences.items()},
            }
        )
    return matrix, transcript


# ---------------------------------------------------------------------------
# snapshot file

MAGIC = b"SGMX0001"


def save_matrix(path, matrix: TransitionMatrix) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", matrix.vocab_size, matrix.k))
        fh.write(matrix.rows.astype("<i4").tobytes())
        fh.write(np.packbits(matrix.valid.reshape(-1)).tobytes())


def load_matrix(path) -> TransitionMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise StructureError(f"{path}: not a matrix snapshot (bad magic)")
        vocab_size, k = struct.unpack("<II", fh.read(8))
        cells = vocab_size * k
        rows = np.frombuffer(fh.read(cells * 4), dtype="<i4").reshape(vocab_size, k).astype(np.int32)
        bitmap = np.frombuffer(fh.read((cells + 7) // 8), dtype=np.uint8)
        valid = np.unpackbits(bitmap)[:cells].reshape(vocab_size, k).astype(bool)
    m = TransitionMatrix(rows=rows.copy(), valid=valid, k=int(k))
    bad = m.valid & ((m.rows < 0) | (m.rows >= vocab_size))
    if bad.any():
        raise StructureError(f"{path}: snapshot holds out-of-range successor ids")
    return m
