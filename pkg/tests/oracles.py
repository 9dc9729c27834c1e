"""Independent brute-force oracles; none share code with the paths they check."""

from __future__ import annotations

import numpy as np


def ar_greedy(target, prompt, n):
    """Pure autoregressive greedy decode of the target model."""
    out = list(prompt)
    for _ in range(n):
        row = target.next_distribution(out)
        out.append(int(np.argmax(row)))
    return out[len(prompt):]


def enumerate_candidates(draft, context, paths_with_scores, top_k):
    """All (parent path, token, score) children of the given frontier paths."""
    out = []
    for path, score in paths_with_scores:
        row = draft.next_distribution(list(context) + list(path))
        ranked = sorted(range(len(row)), key=lambda t: (-row[t], t))[:top_k]
        for t in ranked:
            if row[t] > 0:
                out.append((list(path) + [t], score + np.log(row[t])))
    return out


def closure_topk_iterative(scores, parents, limit):
    """Repeatedly take the best-scoring node whose parent is already kept."""
    n = len(scores)
    kept = {0}
    while len(kept) - 1 < limit:
        best = None
        for i in range(1, n):
            if i in kept or parents[i] not in kept:
                continue
            if best is None or (scores[i], -i) > (scores[best], -best):
                best = i
        if best is None:
            break
        kept.add(best)
    return sorted(kept)


def reachability_mask(parents):
    """Ancestor closure via boolean matrix powers (graph oracle)."""
    n = len(parents)
    adj = np.eye(n, dtype=bool)
    for i in range(n):
        if parents[i] >= 0:
            adj[i, parents[i]] = True
    closure = adj.copy()
    while True:
        nxt = closure | (closure @ adj)
        if np.array_equal(nxt, closure):
            return closure
        closure = nxt


def greedy_chain_walk(target, prefix, tokens, parents):
    """Longest root chain matching the target's greedy continuation."""
    children = {}
    for i in range(1, len(tokens)):
        children.setdefault(int(parents[i]), []).append(i)
    seq = list(prefix)
    cur = 0
    length = 0
    while True:
        want = int(np.argmax(target.next_distribution(seq)))
        nxt = None
        for c in children.get(cur, []):
            if int(tokens[c]) == want:
                nxt = c
                break
        if nxt is None:
            return length
        seq.append(want)
        cur = nxt
        length += 1


def enumerate_first_token_marginal(tokens, parents, root_dist, child_order=None):
    """Exact first-emission marginal of the residual acceptance scheme.

    Walks the root-level accept/reject branches analytically: child c is
    accepted with the current residual mass of its token; rejection zeroes
    the token and renormalizes; leftover probability draws the correction
    from the final residual.
    """
    if child_order is None:
        child_order = [i for i in range(1, len(tokens)) if parents[i] == 0]
    marginal = np.zeros_like(root_dist)
    residual = np.array(root_dist, dtype=float)
    live = 1.0
    for c in child_order:
        t = int(tokens[c])
        a = float(residual[t])
        marginal[t] += live * a
        live *= 1.0 - a
        residual[t] = 0.0
        s = residual.sum()
        if s <= 0.0:
            live = 0.0
            break
        residual /= s
    marginal += live * residual
    return marginal


def template_walk_realized(template, matrix_rows, matrix_valid, root):
    """Count realizable template nodes by resolving each full rank path."""
    realized = 0
    for i in range(template.declared_size):
        token = root
        ok = True
        for rank in template.rank_path(i):
            if rank >= matrix_valid.shape[1] or not matrix_valid[token, rank]:
                ok = False
                break
            token = int(matrix_rows[token, rank])
        realized += ok
    return realized


def path_token_sets(tokens, parents):
    """Set of root-exclusive token paths of every node."""
    paths = [()] * len(tokens)
    out = set()
    for i in range(1, len(tokens)):
        paths[i] = paths[parents[i]] + (int(tokens[i]),)
        out.add(paths[i])
    return out


def exhaustive_path_confidence(draft, context, depth, top_k, beam_width):
    """Best depth-d cumulative path probability via explicit enumeration."""
    frontier = [([], 0.0)]
    for _ in range(depth):
        cands = enumerate_candidates(draft, context, frontier, top_k)
        cands.sort(key=lambda ps: -ps[1])
        frontier = cands[:beam_width]
    return float(np.exp(max(s for _, s in frontier)))
