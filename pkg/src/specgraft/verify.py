"""Lossless verification of hybrid trees against the target model.

Greedy mode walks the target argmax chain through the tree. Stochastic
mode runs a residual acceptance walk that emits tokens with exactly the
target's next-token distribution, conditional on the verified tree: each
child is accepted with the current residual mass of its token; a rejection
zeroes that token and renormalizes, and the final correction/bonus token
is drawn from what remains.

Every node's target distribution is returned regardless of acceptance, so
the caller can refresh the transition matrix from the whole verified tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import StructureError
from .hybrid import VerificationPackage
from .models import MarkovTableModel, greedy_token


@dataclass
class VerifyOutcome:
    accepted_path: list[int]  # node indices, root excluded
    emitted_tokens: list[int]  # accepted tokens + one bonus/correction token
    node_dists: list[tuple[int, np.ndarray]]  # (token, target row) for every node
    accepted_len: int


def node_distributions(target: MarkovTableModel, prefix, package: VerificationPackage) -> np.ndarray:
    """(n, vocab) target rows; row i predicts the successor of node i's token."""
    prefix = tuple(int(t) for t in prefix)
    if not prefix or prefix[-1] != package.tree.root_token:
        raise StructureError("package root must be the last committed token")
    n = package.n_nodes
    order = target.order
    contexts: list[tuple[int, ...]] = [()] * n
    contexts[0] = target.context_of(prefix)
    parents = package.parents
    tokens = package.tokens
    for i in range(1, n):
        ctx = contexts[parents[i]] + (int(tokens[i]),)
        contexts[i] = ctx[-order:] if order else ()
    dists = np.empty((n, target.vocab.size))
    for i in range(n):
        dists[i] = target.row_for_context(contexts[i])
    return dists


def _pairs(tokens: np.ndarray, dists: np.ndarray) -> list[tuple[int, np.ndarray]]:
    return [(int(tokens[i]), dists[i]) for i in range(tokens.shape[0])]


def verify_greedy(
    target: MarkovTableModel,
    prefix,
    package: VerificationPackage,
    dists: np.ndarray | None = None,
) -> VerifyOutcome:
    """Accept the longest root chain matching the target argmax walk.

    Argmax ties go to the lowest token id, so the emitted step is
    bit-identical to pure target greedy decoding.
    """
    if dists is None:
        dists = node_distributions(target, prefix, package)
    ptr, idx = package.children
    tokens = package.tokens
    path: list[int] = []
    cur = 0
    while True:
        want = greedy_token(dists[cur])
        nxt = -1
        for j in range(ptr[cur], ptr[cur + 1]):
            c = int(idx[j])
            if int(tokens[c]) == want:
                nxt = c
                break
        if nxt < 0:
            emitted = [int(tokens[i]) for i in path] + [want]
            return VerifyOutcome(
                accepted_path=path,
                emitted_tokens=emitted,
                node_dists=_pairs(tokens, dists),
                accepted_len=len(path),
            )
        path.append(nxt)
        cur = nxt


def verify_stochastic(
    target: MarkovTableModel,
    prefix,
    package: VerificationPackage,
    rng: np.random.Generator,
    dists: np.ndarray | None = None,
) -> VerifyOutcome:
    """Residual acceptance walk; the emitted next-token marginal equals the
    target distribution exactly, for any fixed tree."""
    if dists is None:
        dists = node_distributions(target, prefix, package)
    ptr, idx = package.children
    tokens = np.ascontiguousarray(package.tokens, dtype=np.int32)
    n = package.n_nodes
    uniforms = rng.random(n + 1)
    path_buf = np.empty(n, dtype=np.int32)
    n_acc, emitted = _kernels.stochastic_walk(
        tokens,
        np.ascontiguousarray(ptr, dtype=np.int32),
        np.ascontiguousarray(idx, dtype=np.int32),
        np.ascontiguousarray(dists),
        uniforms,
        path_buf,
    )
    if emitted < 0:
        raise StructureError("residual exhausted; node distributions are inconsistent")
    path = [int(i) for i in path_buf[:n_acc]]
    return VerifyOutcome(
        accepted_path=path,
        emitted_tokens=[int(tokens[i]) for i in path] + [int(emitted)],
        node_dists=_pairs(tokens, dists),
        accepted_len=len(path),
    )


def first_token_frequencies(
    target: MarkovTableModel,
    prefix,
    package: VerificationPackage,
    n_trials: int,
    seed: int,
) -> np.ndarray:
    """Empirical first-emitted-token counts over ``n_trials`` stochastic walks.

    Runs the same walk kernel as :func:`verify_stochastic`, batched.
    """
    dists = node_distributions(target, prefix, package)
    ptr, idx = package.children
    n = package.n_nodes
    rng = np.random.default_rng(seed)
    uniforms = rng.random((n_trials, n + 1))
    return _kernels.stochastic_trials(
        np.ascontiguousarray(package.tokens, dtype=np.int32),
        np.ascontiguousarray(ptr, dtype=np.int32),
        np.ascontiguousarray(idx, dtype=np.int32),
        np.ascontiguousarray(dists),
        uniforms,
    )
