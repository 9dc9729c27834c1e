"""Toy target/draft language models with exact, enumerable next-token rows.

Models are tables from context tuples to probability rows, built either
from a seeded pseudo-random construction or from n-gram counts over a
corpus. Every row is a plain float64 numpy array over the full vocabulary,
so verification claims can be checked analytically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

DIST_ATOL = 1e-9
TEMPERATURE_SCALE = 4.0

DERIVATION_MODES = ("temperature-smooth", "uniform-mix", "context-truncate")


@dataclass(frozen=True)
class VocabSpec:
    """Token id space 0..size-1 with an optional per-id display table."""

    size: int
    glyphs: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.size < 2:
            raise InputError(f"vocab size must be >= 2, got {self.size}")
        if self.glyphs is not None and len(self.glyphs) != self.size:
            raise InputError(
                f"glyph table has {len(self.glyphs)} entries for vocab size {self.size}"
            )

    def glyph(self, token: int) -> str:
        if self.glyphs is not None:
            return self.glyphs[token]
        return str(token)


def check_distribution(probs: np.ndarray, size: int) -> np.ndarray:
    """Validate and freeze a probability row (non-negative, sums to 1)."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (size,):
        raise InputError(f"distribution shape {probs.shape} != ({size},)")
    if np.any(probs < 0):
        raise InputError("distribution has negative entries")
    total = float(probs.sum())
    if abs(total - 1.0) > DIST_ATOL:
        raise InputError(f"distribution sums to {total!r}, not 1")
    probs.setflags(write=False)
    return probs


@dataclass(frozen=True)
class DraftDerivation:
    """How a draft model is weakened relative to its target."""

    mode: str
    strength: float

    def __post_init__(self):
        if self.mode not in DERIVATION_MODES:
            raise InputError(f"unknown derivation mode {self.mode!r}")
        if not 0.0 <= self.strength <= 1.0:
            raise InputError(f"strength must be in [0, 1], got {self.strength}")


@dataclass(frozen=True)
class MarkovTableModel:
    """Order-``order`` table model; unseen contexts fall back to one row."""

    vocab: VocabSpec
    order: int
    table: dict[tuple[int, ...], np.ndarray]
    fallback: np.ndarray
    seed: int = 0
    _frozen: bool = field(default=False, repr=False, compare=False)

    def context_of(self, prefix) -> tuple[int, ...]:
        if self.order == 0:
            return ()
        return tuple(int(t) for t in prefix[-self.order:])

    def next_distribution(self, prefix) -> np.ndarray:
        """Row for the last ``order`` tokens of ``prefix`` (fallback if unseen)."""
        for t in prefix[-self.order:] if self.order else ():
            if not 0 <= t < self.vocab.size:
                raise InputError(f"token {t} out of range for vocab {self.vocab.size}")
        return self.table.get(self.context_of(prefix), self.fallback)

    def row_for_context(self, context: tuple[int, ...]) -> np.ndarray:
        return self.table.get(context, self.fallback)


def next_distribution(model: MarkovTableModel, prefix) -> np.ndarray:
    return model.next_distribution(prefix)


def _freeze_model(vocab, order, table, fallback, seed) -> MarkovTableModel:
    fallback = check_distribution(fallback, vocab.size)
    table = {ctx: check_distribution(row, vocab.size) for ctx, row in table.items()}
    return MarkovTableModel(vocab=vocab, order=order, table=table, fallback=fallback, seed=seed)


def _all_contexts(size: int, order: int):
    if order == 0:
        yield ()
        return
    ctx = [0] * order
    while True:
        yield tuple(ctx)
        i = order - 1
        while i >= 0:
            ctx[i] += 1
            if ctx[i] < size:
                break
            ctx[i] = 0
            i -= 1
        if i < 0:
            return


def build_markov(vocab: VocabSpec, order: int, seed: int, sparsity: float = 0.0) -> MarkovTableModel:
    """Seeded random table: exponential weights, ``sparsity`` share zeroed, renormalized."""
    if order < 0:
        raise InputError(f"order must be >= 0, got {order}")
    if not 0.0 <= sparsity < 1.0:
        raise InputError(f"sparsity must be in [0, 1), got {sparsity}")
    if vocab.size ** (order + 1) > 4_000_000:
        raise InputError(
            f"markov table vocab^(order+1) = {vocab.size ** (order + 1)} cells is too large; "
            "train an n-gram model from a corpus instead"
        )
    rng = np.random.default_rng(seed)
    table: dict[tuple[int, ...], np.ndarray] = {}
    for ctx in _all_contexts(vocab.size, order):
        w = rng.gamma(1.0, 1.0, size=vocab.size)
        if sparsity > 0.0:
            drop = rng.random(vocab.size) < sparsity
            keep_best = int(np.argmax(w))
            w[drop] = 0.0
            if w.sum() == 0.0:
                w[keep_best] = 1.0
        table[ctx] = w / w.sum()
    fallback = np.full(vocab.size, 1.0 / vocab.size)
    model = _freeze_model(vocab, order, table, fallback, seed)
    if order == 0:
        # a single-row model: the row IS the fallback
        return _freeze_model(vocab, 0, table, table[()], seed)
    return model


def train_ngram(vocab: VocabSpec, corpus, order: int, smoothing: float = 0.0) -> MarkovTableModel:
    """Add-``smoothing`` count model; unseen contexts map to the smoothed unigram."""
    corpus = [int(t) for t in corpus]
    if not corpus:
        raise InputError("empty corpus")
    if len(corpus) <= order:
        raise InputError(f"corpus length {len(corpus)} must exceed order {order}")
    if smoothing < 0:
        raise InputError("smoothing must be >= 0")
    for t in corpus:
        if not 0 <= t < vocab.size:
            raise InputError(f"corpus token {t} out of range for vocab {vocab.size}")

    size = vocab.size
    counts: dict[tuple[int, ...], np.ndarray] = {}
    for i in range(order, len(corpus)):
        ctx = tuple(corpus[i - order:i])
        row = counts.get(ctx)
        if row is None:
            row = np.zeros(size)
            counts[ctx] = row
        row[corpus[i]] += 1.0

    unigram = np.zeros(size)
    for t in corpus:
        unigram[t] += 1.0
    fallback = (unigram + smoothing) / (unigram.sum() + smoothing * size)

    table = {}
    for ctx, row in counts.items():
        table[ctx] = (row + smoothing) / (row.sum() + smoothing * size)
    if order == 0:
        table = {(): fallback}
    return _freeze_model(vocab, order, table, fallback, seed=0)


def derive_draft(target: MarkovTableModel, derivation: DraftDerivation) -> MarkovTableModel:
    """Weakened copy of ``target``; strength 0 is the identity for smooth/mix."""
    size = target.vocab.size
    s = derivation.strength

    if derivation.mode == "temperature-smooth":
        expo = 1.0 / (1.0 + s * TEMPERATURE_SCALE)

        def transform(row):
            w = np.power(row, expo)
            return w / w.sum()

        table = {ctx: transform(row) for ctx, row in target.table.items()}
        fallback = transform(target.fallback)
        return _freeze_model(target.vocab, target.order, table, fallback, target.seed)

    if derivation.mode == "uniform-mix":
        u = np.full(size, 1.0 / size)

        def transform(row):
            return (1.0 - s) * row + s * u

        table = {ctx: transform(row) for ctx, row in target.table.items()}
        fallback = transform(target.fallback)
        return _freeze_model(target.vocab, target.order, table, fallback, target.seed)

    # context-truncate: shrink the order, averaging rows that share a suffix
    new_order = target.order - int(round(s * target.order))
    if new_order == target.order:
        return target
    groups: dict[tuple[int, ...], list[np.ndarray]] = {}
    for ctx, row in target.table.items():
        suffix = ctx[len(ctx) - new_order:] if new_order else ()
        groups.setdefault(suffix, []).append(row)
    table = {suffix: np.mean(rows, axis=0) for suffix, rows in groups.items()}
    return _freeze_model(target.vocab, new_order, table, target.fallback, target.seed)


def sample(dist: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over ascending token ids."""
    u = rng.random()
    cdf = np.cumsum(dist)
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, dist.shape[0] - 1)


def greedy_token(dist: np.ndarray) -> int:
    """Argmax with ties resolved to the lowest token id."""
    return int(np.argmax(dist))


# ---------------------------------------------------------------------------
# corpus ingestion

BYTE_VOCAB = VocabSpec(256, tuple(chr(i) if 32 <= i < 127 else f"\\x{i:02x}" for i in range(256)))


def tokenize_bytes(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def tokenize_whitespace(text: str) -> tuple[list[int], VocabSpec]:
    words = text.split()
    if not words:
        raise InputError("empty corpus text")
    symbols = sorted(set(words))
    if len(symbols) < 2:
        symbols = symbols + ["<pad>"]
    index = {w: i for i, w in enumerate(symbols)}
    return [index[w] for w in words], VocabSpec(len(symbols), tuple(symbols))


def load_token_file(path) -> list[int]:
    """Newline-delimited integer token stream."""
    tokens = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                tokens.append(int(line))
    if not tokens:
        raise InputError(f"no tokens in {path}")
    return tokens


def load_corpus(path, tokenizer: str = "bytes") -> tuple[list[int], VocabSpec]:
    """Read a UTF-8 text (or integer) file into a token stream + vocab."""
    if tokenizer == "ints":
        tokens = load_token_file(path)
        return tokens, VocabSpec(max(tokens) + 1 if max(tokens) >= 1 else 2)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    if tokenizer == "bytes":
        return tokenize_bytes(text), BYTE_VOCAB
    if tokenizer == "whitespace":
        return tokenize_whitespace(text)
    raise InputError(f"unknown tokenizer {tokenizer!r}")
