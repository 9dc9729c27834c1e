"""Run-configuration file loading with strict key validation.

Configs are YAML documents with fixed sections; unknown keys are rejected
and every referenced file must exist at load time. The raw document is
echoed verbatim into every report for auditability.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import yaml

from .drafttree import PruneConfig
from .engine import CostModel, DecodeConfig
from .errors import ConfigError
from .models import (
    DraftDerivation,
    MarkovTableModel,
    VocabSpec,
    build_markov,
    derive_draft,
    load_corpus,
    tokenize_bytes,
    train_ngram,
)

_SECTION_KEYS = {
    "vocab": {"size"},
    "target": {"kind", "seed", "order", "sparsity", "corpus", "tokenizer", "smoothing"},
    "draft": {"mode", "strength"},
    "prune": {"checkpoints", "thresholds", "stage_budgets", "total_budget", "top_k", "max_depth", "beam_width"},
    "cost": {"t_ar", "draft_layer_cost", "verify_base", "verify_per_node", "retrieval_cost", "overhead_cost"},
    "decode": {
        "max_new_tokens",
        "acceptance",
        "seed",
        "prompt_text",
        "prompt_tokens",
        "end_token",
        "updates_enabled",
        "prefill_update",
        "fixed_split",
        "root_branch_size",
        "tail_chain_len",
    },
    "warmup": {"rounds", "prompts_text", "prompts_tokens", "derive", "max_new_tokens"},
    "matrix": {"k", "load", "save"},
    "calibration": {"grid"},
    "ablation": {"seeds", "n_seeds", "prompt_length"},
    "output": {"json", "csv", "dump_trees"},
}
_TOP_KEYS = set(_SECTION_KEYS) | {"method"}

DEFAULT_CALIBRATION_GRID = [0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9]


@dataclass
class RunConfig:
    raw: dict
    path: str
    vocab: VocabSpec
    target: MarkovTableModel
    draft: MarkovTableModel
    decode: DecodeConfig
    corpus_tokens: list[int] | None
    prompt: list[int]
    warmup_rounds: int
    warmup_prompts: list[list[int]]
    calibration_grid: dict[int, list[float]]
    ablation_seeds: list[int]
    ablation_prompt_length: int
    matrix_k: int
    matrix_load: str | None
    matrix_save: str | None
    output_json: str | None
    output_csv: str | None
    dump_trees: str | None


def _check_keys(section: str, value: dict) -> None:
    if not isinstance(value, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    unknown = set(value) - _SECTION_KEYS[section]
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")


def _require_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise ConfigError(f"{what} file does not exist: {path}")
    return path


def _build_models(doc: dict) -> tuple[VocabSpec, MarkovTableModel, list[int] | None, str]:
    target_cfg = doc.get("target", {})
    kind = target_cfg.get("kind", "markov")
    tokenizer = target_cfg.get("tokenizer", "bytes")
    if kind == "markov":
        size = doc.get("vocab", {}).get("size")
        if size is None:
            raise ConfigError("markov targets need vocab.size")
        vocab = VocabSpec(int(size))
        target = build_markov(
            vocab,
            int(target_cfg.get("order", 1)),
            int(target_cfg.get("seed", 0)),
            float(target_cfg.get("sparsity", 0.0)),
        )
        return vocab, target, None, tokenizer
    if kind == "ngram":
        corpus_path = target_cfg.get("corpus")
        if corpus_path is None:
            raise ConfigError("ngram targets need target.corpus")
        _require_file(corpus_path, "corpus")
        tokens, vocab = load_corpus(corpus_path, tokenizer)
        cfg_size = doc.get("vocab", {}).get("size")
        if cfg_size is not None and int(cfg_size) != vocab.size:
            raise ConfigError(f"vocab.size {cfg_size} != corpus-derived vocab {vocab.size}")
        target = train_ngram(
            vocab,
            tokens,
            int(target_cfg.get("order", 2)),
            float(target_cfg.get("smoothing", 0.1)),
        )
        return vocab, target, tokens, tokenizer
    raise ConfigError(f"unknown target kind {kind!r}")


def _prompt_tokens(doc: dict, tokenizer: str, vocab: VocabSpec, corpus: list[int] | None) -> list[int]:
    decode_cfg = doc.get("decode", {})
    if "prompt_tokens" in decode_cfg:
        return [int(t) for t in decode_cfg["prompt_tokens"]]
    if "prompt_text" in decode_cfg:
        if tokenizer != "bytes":
            raise ConfigError("prompt_text needs the byte tokenizer; use prompt_tokens")
        return tokenize_bytes(decode_cfg["prompt_text"])
    if corpus:
        return corpus[: min(32, len(corpus) - 1)]
    return [0]


def derive_prompts(
    corpus: list[int] | None,
    vocab: VocabSpec,
    count: int,
    length: int,
    seed: int,
) -> list[list[int]]:
    """Seeded held-out prompts: corpus slices when available, random tokens otherwise."""
    rng = np.random.default_rng(seed)
    prompts = []
    for _ in range(count):
        if corpus and len(corpus) > length + 1:
            start = int(rng.integers(0, len(corpus) - length - 1))
            prompts.append([int(t) for t in corpus[start : start + length]])
        else:
            prompts.append([int(t) for t in rng.integers(0, vocab.size, size=length)])
    return prompts


def _warmup_prompts(doc: dict, tokenizer: str, vocab: VocabSpec, corpus: list[int] | None, seed: int) -> list[list[int]]:
    warm = doc.get("warmup", {})
    if "prompts_tokens" in warm:
        return [[int(t) for t in p] for p in warm["prompts_tokens"]]
    if "prompts_text" in warm:
        if tokenizer != "bytes":
            raise ConfigError("warmup.prompts_text needs the byte tokenizer")
        return [tokenize_bytes(p) for p in warm["prompts_text"]]
    derive = warm.get("derive", {}) or {}
    rounds = int(warm.get("rounds", 0))
    count = int(derive.get("count", max(3, rounds)))  # one fresh prompt per round
    length = int(derive.get("length", 64))
    return derive_prompts(corpus, vocab, count, length, seed=seed ^ 0x5EED)


def load_run_config(path: str, overrides: dict | None = None) -> RunConfig:
    """Parse + validate a config file; ``overrides`` (CLI) win over the file."""
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    for section in _SECTION_KEYS:
        if section in doc:
            _check_keys(section, doc[section])

    overrides = overrides or {}
    vocab, target, corpus, tokenizer = _build_models(doc)
    draft_cfg = doc.get("draft", {"mode": "uniform-mix", "strength": 0.4})
    draft = derive_draft(target, DraftDerivation(draft_cfg.get("mode", "uniform-mix"), float(draft_cfg.get("strength", 0.4))))

    prune_cfg = doc.get("prune", {})
    prune_kwargs = {}
    if "checkpoints" in prune_cfg:
        prune_kwargs["checkpoints"] = tuple(int(d) for d in prune_cfg["checkpoints"])
    if "thresholds" in prune_cfg:
        prune_kwargs["thresholds"] = {int(d): float(v) for d, v in prune_cfg["thresholds"].items()}
    if "stage_budgets" in prune_cfg:
        prune_kwargs["stage_budgets"] = {int(d): (int(v[0]), int(v[1])) for d, v in prune_cfg["stage_budgets"].items()}
    for key in ("total_budget", "top_k", "max_depth", "beam_width"):
        if key in prune_cfg:
            prune_kwargs[key] = int(prune_cfg[key])
    prune = PruneConfig(**prune_kwargs)

    cost = CostModel(**{k: float(v) for k, v in doc.get("cost", {}).items()})

    decode_cfg = doc.get("decode", {})
    matrix_cfg = doc.get("matrix", {})
    method = overrides.get("method", doc.get("method", "graft"))
    seed = int(overrides.get("seed", decode_cfg.get("seed", 0)))
    warm = doc.get("warmup", {})
    decode = DecodeConfig(
        method=method,
        prune=prune,
        k=int(matrix_cfg.get("k", 10)),
        max_new_tokens=int(decode_cfg.get("max_new_tokens", 128)),
        acceptance=decode_cfg.get("acceptance", "greedy"),
        seed=seed,
        warmup_rounds=int(warm.get("rounds", 0)),
        updates_enabled=bool(decode_cfg.get("updates_enabled", True)),
        prefill_update=bool(decode_cfg.get("prefill_update", True)),
        fixed_split=tuple(decode_cfg.get("fixed_split", (24, 36))),
        root_branch_size=int(decode_cfg.get("root_branch_size", 20)),
        tail_chain_len=int(decode_cfg.get("tail_chain_len", 8)),
        cost=cost,
        end_token=decode_cfg.get("end_token"),
    )

    grid_cfg = (doc.get("calibration", {}) or {}).get("grid")
    if grid_cfg:
        grid = {int(d): [float(v) for v in taus] for d, taus in grid_cfg.items()}
    else:
        grid = {d: list(DEFAULT_CALIBRATION_GRID) for d in prune.checkpoints}

    ablation_cfg = doc.get("ablation", {})
    if "seeds" in ablation_cfg:
        seeds = [int(s) for s in ablation_cfg["seeds"]]
    else:
        seeds = list(range(int(ablation_cfg.get("n_seeds", 8))))

    matrix_load = matrix_cfg.get("load")
    if matrix_load:
        _require_file(matrix_load, "matrix snapshot")

    output_cfg = doc.get("output", {})
    return RunConfig(
        raw=doc,
        path=path,
        vocab=vocab,
        target=target,
        draft=draft,
        decode=decode,
        corpus_tokens=corpus,
        prompt=_prompt_tokens(doc, tokenizer, vocab, corpus),
        warmup_rounds=int(warm.get("rounds", 0)),
        warmup_prompts=_warmup_prompts(doc, tokenizer, vocab, corpus, seed),
        calibration_grid=grid,
        ablation_seeds=seeds,
        ablation_prompt_length=int(ablation_cfg.get("prompt_length", 48)),
        matrix_k=int(matrix_cfg.get("k", 10)),
        matrix_load=matrix_load,
        matrix_save=matrix_cfg.get("save"),
        output_json=output_cfg.get("json"),
        output_csv=output_cfg.get("csv"),
        dump_trees=output_cfg.get("dump_trees"),
    )
