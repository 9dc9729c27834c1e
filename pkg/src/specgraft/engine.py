"""Decode loop, cost model, metrics, calibration, ablations, theory checks.

One decode session is a strict loop: build the next candidate tree for the
configured method, verify it against the target, commit the emitted
tokens, refresh the transition matrix from every verified node, and
account costs. Greedy sessions are fully deterministic in their inputs.
"""

from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .drafttree import (
    DraftTree,
    PruneConfig,
    PruneDecision,
    expand_layer,
    new_tree,
    resolve_stage,
    select_retained,
    stage_label,
)
from .errors import AnalysisError, ConfigError, InputError
from .hybrid import (
    ORIGIN_DRAFT,
    ORIGIN_RETRIEVED,
    HybridTree,
    _Builder,
    draft_only,
    flatten,
    insert_root_variant,
    insert_tail_variant,
    merge,
)
from .models import MarkovTableModel, greedy_token, sample
from .retrieval import (
    TEMPLATE_DEPTH_COUNTS,
    StageTemplate,
    TransitionMatrix,
    builtin_templates,
    empty_branch,
    filter_template,
    instantiate,
    new_matrix,
    template_from_depth_counts,
    template_prefix,
    update_from_verification,
    update_row,
)
from .verify import node_distributions, verify_greedy, verify_stochastic

METHODS = ("autoregressive", "dense", "prune_only", "fixed_split", "graft", "graft_root", "graft_tail")
TREE_METHODS = METHODS[1:]
ACCEPTANCE_MODES = ("greedy", "stochastic")


@dataclass(frozen=True)
class CostModel:
    """Analytical per-step costs standing in for wall-clock time."""

    t_ar: float = 1.0
    draft_layer_cost: float = 0.18
    verify_base: float = 0.55
    verify_per_node: float = 0.004
    retrieval_cost: float = 0.0  # off the critical path by default (overlapped)
    overhead_cost: float = 0.02  # merge + rebuild + matrix update

    def __post_init__(self):
        for name in ("t_ar", "draft_layer_cost", "verify_base", "verify_per_node", "retrieval_cost", "overhead_cost"):
            if getattr(self, name) < 0:
                raise ConfigError(f"cost {name} must be >= 0")

    def step_cost(self, layers_drafted: int, tree_candidates: int) -> float:
        return (
            self.draft_layer_cost * layers_drafted
            + self.verify_base
            + self.verify_per_node * tree_candidates
            + self.retrieval_cost
            + self.overhead_cost
        )


@dataclass(frozen=True)
class DecodeConfig:
    method: str = "graft"
    prune: PruneConfig = field(default_factory=PruneConfig)
    k: int = 10
    max_new_tokens: int = 64
    acceptance: str = "greedy"
    seed: int = 0
    warmup_rounds: int = 5
    updates_enabled: bool = True
    prefill_update: bool = True
    fixed_split: tuple[int, int] = (24, 36)
    root_branch_size: int = 20
    tail_chain_len: int = 8
    cost: CostModel = field(default_factory=CostModel)
    end_token: int | None = None
    dense_replay: bool = False
    template_filter: tuple[int | None, int | None] | None = None  # (max_depth, max_rank)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.acceptance not in ACCEPTANCE_MODES:
            raise ConfigError(f"unknown acceptance mode {self.acceptance!r}")
        if self.max_new_tokens < 1:
            raise ConfigError("max_new_tokens must be >= 1")
        kd, kr = self.fixed_split
        if kd + kr != self.prune.total_budget:
            raise ConfigError(
                f"fixed split {kd}+{kr} must equal the total budget {self.prune.total_budget}"
            )


@dataclass
class DecodeReport:
    mat: float
    steps_count: int
    tokens_emitted: int
    stage_histogram: dict[str, int]
    cost_total: float
    speedup_proxy: float
    tradeoff_ratio: float | None
    regret_estimate: float | None
    coverage_gain_samples: list[float]
    coverage_gain_mean: float | None
    realized_retrieval_fill: float | None
    overpruning_rate_estimates: dict[str, float]
    max_tree_candidates: int
    steps: list[dict]

    def to_dict(self, include_steps: bool = True) -> dict:
        out = {
            "mat": self.mat,
            "steps_count": self.steps_count,
            "tokens_emitted": self.tokens_emitted,
            "stage_histogram": dict(self.stage_histogram),
            "cost_total": self.cost_total,
            "speedup_proxy": self.speedup_proxy,
            "tradeoff_ratio": self.tradeoff_ratio,
            "regret_estimate": self.regret_estimate,
            "coverage_gain_mean": self.coverage_gain_mean,
            "realized_retrieval_fill": self.realized_retrieval_fill,
            "overpruning_rate_estimates": dict(self.overpruning_rate_estimates),
            "max_tree_candidates": self.max_tree_candidates,
        }
        if include_steps:
            out["steps"] = self.steps
        return out


@dataclass
class CalibrationResult:
    thresholds: dict[int, float]
    objective_trace: list[tuple[dict[int, float], float]]


def _resolve_templates(config: DecodeConfig) -> dict[str, StageTemplate]:
    templates = builtin_templates(config.k)
    if config.template_filter is not None:
        max_depth, max_rank = config.template_filter
        templates = {
            name: filter_template(t, max_depth=max_depth, max_rank=max_rank)
            for name, t in templates.items()
        }
    return templates


def _template_for_size(templates: dict[str, StageTemplate], size: int) -> StageTemplate:
    for t in templates.values():
        if t.declared_size == size:
            return t
    return template_prefix(templates["full"], size, stage=f"prefix{size}")


def expand_full(draft: MarkovTableModel, context, prune: PruneConfig) -> DraftTree:
    """The static envelope: ``max_depth`` gated-free layers under the beam."""
    tree = new_tree(context)
    for _ in range(prune.max_depth):
        tree = expand_layer(tree, draft, prune.top_k, prune.beam_width)
    return tree


def build_next_tree(
    config: DecodeConfig,
    draft: MarkovTableModel,
    matrix: TransitionMatrix,
    committed,
    templates: dict[str, StageTemplate],
) -> tuple[HybridTree, dict]:
    """Next candidate tree for the configured method, plus build metadata."""
    prune = config.prune
    method = config.method
    root = int(committed[-1])

    if method in ("dense", "graft_root", "graft_tail", "fixed_split"):
        tree = expand_full(draft, committed, prune)
        info = {"stage": stage_label(None), "layers_drafted": prune.max_depth, "confidence_trace": {}}
        if method == "dense":
            hy = draft_only(tree, select_retained(tree, prune.total_budget), prune.total_budget)
        elif method == "graft_root":
            template = _template_for_size(templates, config.root_branch_size)
            branch = instantiate(matrix, template, root)
            hy = insert_root_variant(tree, branch, prune.total_budget)
            info["declared"] = template.declared_size
            info["realized"] = branch.realized_count
        elif method == "graft_tail":
            hy = insert_tail_variant(tree, matrix, prune.total_budget, config.tail_chain_len)
        else:  # fixed_split
            kd, kr = config.fixed_split
            template = _template_for_size(templates, kr)
            branch = instantiate(matrix, template, root)
            hy = merge(_fixed_decision(tree, kd, prune.max_depth), tree, branch, prune.total_budget)
            info["declared"] = template.declared_size
            info["realized"] = branch.realized_count
        return hy, info

    if method in ("prune_only", "graft"):
        tree, decision = resolve_stage(draft, committed, prune)
        info = {
            "stage": decision.stage_name,
            "layers_drafted": decision.layers_drafted,
            "confidence_trace": {str(d): c for d, c in decision.confidence_trace.items()},
        }
        if method == "prune_only" or decision.stage is None:
            hy = draft_only(tree, decision.retained, prune.total_budget)
        else:
            template = templates[stage_label(decision.stage)]
            branch = instantiate(matrix, template, root)
            hy = merge(decision, tree, branch, prune.total_budget)
            info["declared"] = template.declared_size
            info["realized"] = branch.realized_count
        return hy, info

    raise ConfigError(f"method {method!r} does not build trees")


def _fixed_decision(tree: DraftTree, k_draft: int, layers: int) -> PruneDecision:
    return PruneDecision(
        stage=None,
        confidence_trace={},
        layer_confidences=[],
        retained=select_retained(tree, k_draft),
        layers_drafted=layers,
    )


def coverage_gain(root_dist: np.ndarray, draft_tokens, retrieved_tokens) -> float:
    """Target mass of retrieved frontier tokens absent from the draft siblings."""
    draft_set = {int(t) for t in draft_tokens}
    seen = set()
    gain = 0.0
    for t in retrieved_tokens:
        t = int(t)
        if t not in draft_set and t not in seen:
            gain += float(root_dist[t])
            seen.add(t)
    return gain


def _root_frontier(hy: HybridTree) -> tuple[list[int], list[int]]:
    kids = hy.children_of(0)
    drafted = [int(hy.tokens[i]) for i in kids if hy.origin[i] == ORIGIN_DRAFT]
    retrieved = [int(hy.tokens[i]) for i in kids if hy.origin[i] == ORIGIN_RETRIEVED]
    return drafted, retrieved


def _dense_union_replay(
    config: DecodeConfig,
    target: MarkovTableModel,
    draft: MarkovTableModel,
    committed,
    method_tree: HybridTree,
) -> int:
    """Greedy accepted length of (dense top-budget) UNION (method tree).

    The union keeps the method tree a subset of the replay tree, so replay
    acceptance is a per-step upper bound (subset monotonicity); nothing
    from the replay is ever committed.
    """
    prune = config.prune
    tree = expand_full(draft, committed, prune)
    retained = select_retained(tree, prune.total_budget)
    builder = _Builder(tree.root_token, prune.total_budget + method_tree.n_candidates)
    mapping = {0: 0}
    for i in retained.tolist():
        if i == 0:
            continue
        mapping[i] = builder.add(mapping[int(tree.parents[i])], int(tree.tokens[i]), ORIGIN_DRAFT, float(tree.logqs[i]))
    mmap = {0: 0}
    for i in range(1, method_tree.n_nodes):
        mmap[i] = builder.add(
            mmap[int(method_tree.parents[i])],
            int(method_tree.tokens[i]),
            int(method_tree.origin[i]),
            float(method_tree.logqs[i]),
        )
    union = builder.finish()
    package = flatten(union, len(committed) - 1)
    outcome = verify_greedy(target, committed, package)
    return outcome.accepted_len


def decode_session(
    config: DecodeConfig,
    target: MarkovTableModel,
    draft: MarkovTableModel,
    matrix: TransitionMatrix,
    prompt,
    tree_observer=None,
) -> tuple[list[int], DecodeReport]:
    """Run one decode session; returns (new tokens, report).

    The matrix is updated in place from every verified node (and from the
    prompt prefill) when updates are enabled.
    """
    if target.vocab.size != draft.vocab.size or target.vocab.size != matrix.vocab_size:
        raise ConfigError("target, draft and matrix must share one vocabulary")
    committed = [int(t) for t in prompt]
    if not committed:
        raise InputError("prompt must be nonempty")
    for t in committed:
        if not 0 <= t < target.vocab.size:
            raise InputError(f"prompt token {t} out of range")

    templates = _resolve_templates(config)
    rng = np.random.default_rng(config.seed)
    cost = config.cost

    if config.updates_enabled and config.prefill_update:
        for i in range(len(committed)):
            update_row(matrix, committed[i], target.next_distribution(committed[: i + 1]))

    steps: list[dict] = []
    remaining = config.max_new_tokens
    prompt_len = len(committed)
    stop = False

    while remaining > 0 and not stop:
        if config.method == "autoregressive":
            dist = target.next_distribution(committed)
            token = greedy_token(dist) if config.acceptance == "greedy" else sample(dist, rng)
            if config.updates_enabled:
                update_row(matrix, committed[-1], dist)
            emitted = [token]
            record = {
                "stage": stage_label(None),
                "layers_drafted": 0,
                "tree_candidates": 0,
                "n_draft": 0,
                "n_retrieved": 0,
                "accepted_len": 0,
                "cost": cost.t_ar,
                "confidence_trace": {},
            }
        else:
            hy, info = build_next_tree(config, draft, matrix, committed, templates)
            if tree_observer is not None:
                tree_observer(len(steps), hy)
            package = flatten(hy, len(committed) - 1)
            dists = node_distributions(target, committed, package)
            if config.acceptance == "greedy":
                outcome = verify_greedy(target, committed, package, dists=dists)
            else:
                outcome = verify_stochastic(target, committed, package, rng, dists=dists)
            n_draft, n_retrieved = hy.counts_by_origin()
            record = {
                "stage": info["stage"],
                "layers_drafted": info["layers_drafted"],
                "tree_candidates": hy.n_candidates,
                "n_draft": n_draft,
                "n_retrieved": n_retrieved,
                "accepted_len": outcome.accepted_len,
                "cost": cost.step_cost(info["layers_drafted"], hy.n_candidates),
                "confidence_trace": info["confidence_trace"],
            }
            if "declared" in info:
                record["declared"] = info["declared"]
                record["realized"] = info["realized"]
            if n_retrieved > 0:
                drafted_tokens, retrieved_tokens = _root_frontier(hy)
                record["coverage_gain"] = coverage_gain(dists[0], drafted_tokens, retrieved_tokens)
            if config.dense_replay and config.acceptance == "greedy":
                record["replay_accepted_len"] = _dense_union_replay(config, target, draft, committed, hy)
            if config.updates_enabled:
                update_from_verification(matrix, outcome.node_dists)
            emitted = outcome.emitted_tokens

        emitted = emitted[:remaining]
        if config.end_token is not None and config.end_token in emitted:
            emitted = emitted[: emitted.index(config.end_token) + 1]
            stop = True
        committed.extend(emitted)
        remaining -= len(emitted)
        record["emitted"] = emitted
        steps.append(record)

    report = compute_metrics(steps, cost)
    return committed[prompt_len:], report


def compute_metrics(steps: list[dict], cost: CostModel, dense_report: DecodeReport | None = None) -> DecodeReport:
    """Aggregate a session trace into a report.

    MAT counts every emitted token (bonus included), so the speedup proxy
    ``mat * t_ar * steps / cost_total`` equals ``t_ar * tokens / cost``.
    """
    if not steps:
        raise AnalysisError("empty session trace")
    tokens = sum(len(s["emitted"]) for s in steps)
    cost_total = float(sum(s["cost"] for s in steps))
    mat = tokens / len(steps)
    proxy = mat * cost.t_ar * len(steps) / cost_total

    histogram = Counter(s["stage"] for s in steps)
    fills = [s["realized"] / s["declared"] for s in steps if s.get("declared")]
    gains = [s["coverage_gain"] for s in steps if "coverage_gain" in s]

    regret = None
    eps_hat: dict[str, float] = {}
    replayed = [s for s in steps if "replay_accepted_len" in s]
    if replayed:
        diffs = [s["replay_accepted_len"] - s["accepted_len"] for s in replayed]
        regret = float(np.mean(diffs))
        for stage in sorted({s["stage"] for s in replayed if s["stage"] != stage_label(None)}):
            staged = [s for s in replayed if s["stage"] == stage]
            harmful = sum(1 for s in staged if s["replay_accepted_len"] > s["accepted_len"])
            eps_hat[stage] = harmful / len(staged)

    report = DecodeReport(
        mat=mat,
        steps_count=len(steps),
        tokens_emitted=tokens,
        stage_histogram=dict(histogram),
        cost_total=cost_total,
        speedup_proxy=proxy,
        tradeoff_ratio=None,
        regret_estimate=regret,
        coverage_gain_samples=gains,
        coverage_gain_mean=float(np.mean(gains)) if gains else None,
        realized_retrieval_fill=float(np.mean(fills)) if fills else None,
        overpruning_rate_estimates=eps_hat,
        max_tree_candidates=max(s["tree_candidates"] for s in steps),
        steps=steps,
    )
    if dense_report is not None:
        report.tradeoff_ratio = report.speedup_proxy / dense_report.speedup_proxy
    return report


def attach_tradeoff(report: DecodeReport, dense_report: DecodeReport) -> DecodeReport:
    report.tradeoff_ratio = report.speedup_proxy / dense_report.speedup_proxy
    return report


# ---------------------------------------------------------------------------
# calibration


def calibrate(
    target: MarkovTableModel,
    draft: MarkovTableModel,
    matrix: TransitionMatrix,
    prompts,
    grid: dict[int, list[float]],
    config: DecodeConfig,
) -> CalibrationResult:
    """Coordinate-wise threshold search (two sweeps) maximizing the mean
    speedup proxy of graft sessions replayed on the warm-up prompts.

    Each evaluation runs on a copy of the supplied (typically warmed)
    matrix, so scoring is deterministic and order-free. Ties keep the
    lowest threshold.
    """
    prompts = [list(p) for p in prompts]
    if not prompts:
        raise ConfigError("calibration needs at least one prompt")
    for d in config.prune.checkpoints:
        if d not in grid or not grid[d]:
            raise ConfigError(f"empty calibration grid for checkpoint {d}")

    thresholds = dict(config.prune.thresholds)
    trace: list[tuple[dict[int, float], float]] = []

    def score(vector: dict[int, float]) -> float:
        cfg = replace(config, method="graft", prune=replace(config.prune, thresholds=dict(vector)))
        proxies = []
        for prompt in prompts:
            _, report = decode_session(cfg, target, draft, matrix.copy(), prompt)
            proxies.append(report.speedup_proxy)
        return float(np.mean(proxies))

    for _ in range(2):
        for d in config.prune.checkpoints:
            best_tau, best_score = None, -math.inf
            for tau in sorted(grid[d]):
                vector = dict(thresholds)
                vector[d] = tau
                s = score(vector)
                trace.append((vector, s))
                if s > best_score:
                    best_tau, best_score = tau, s
            thresholds[d] = best_tau
    return CalibrationResult(thresholds=thresholds, objective_trace=trace)


# ---------------------------------------------------------------------------
# theory checks

_SMALL_TEMPLATE = template_from_depth_counts("d5", TEMPLATE_DEPTH_COUNTS["d5"])


def _random_subset_tree(hy: HybridTree, rng: np.random.Generator, keep_prob: float) -> HybridTree:
    keep = np.zeros(hy.n_nodes, dtype=bool)
    keep[0] = True
    for i in range(1, hy.n_nodes):
        keep[i] = keep[hy.parents[i]] and rng.random() < keep_prob
    builder = _Builder(hy.root_token, hy.budget)
    mapping = {0: 0}
    for i in range(1, hy.n_nodes):
        if keep[i]:
            mapping[i] = builder.add(mapping[int(hy.parents[i])], int(hy.tokens[i]), int(hy.origin[i]), float(hy.logqs[i]))
    return builder.finish()


def _random_instance(rng: np.random.Generator, with_matrix: bool = False):
    from .models import DraftDerivation, VocabSpec, build_markov, derive_draft

    vocab = VocabSpec(int(rng.integers(4, 13)))
    target = build_markov(vocab, 1, int(rng.integers(0, 2**31)))
    draft = derive_draft(target, DraftDerivation("uniform-mix", float(rng.uniform(0.1, 0.7))))
    prefix = [int(rng.integers(0, vocab.size)) for _ in range(int(rng.integers(1, 4)))]
    tree = new_tree(prefix)
    depth = int(rng.integers(2, 5))
    top_k = int(rng.integers(2, 4))
    for _ in range(depth):
        tree = expand_layer(tree, draft, top_k, beam_width=int(rng.integers(3, 7)))
    matrix = None
    if with_matrix:
        matrix = new_matrix(vocab.size, 4)
        for t in range(vocab.size):
            if rng.random() < 0.8:
                update_row(matrix, t, target.row_for_context((t,)))
    return target, draft, prefix, tree, matrix


def theory_checks(
    seed: int = 0,
    n_monotonic: int = 10_000,
    n_graft: int = 10_000,
    n_coverage: int = 1_000,
    overprune_eps: tuple[float, ...] = (0.1, 0.1, 0.1),
    overprune_trials: int = 100_000,
) -> dict:
    """Randomized checks of the acceptance-length and coverage guarantees."""
    rng = np.random.default_rng(seed)
    report: dict = {}

    violations = 0
    for _ in range(n_monotonic):
        target, _, prefix, tree, _ = _random_instance(rng)
        big = draft_only(tree, select_retained(tree, tree.n_nodes), tree.n_nodes)
        small = _random_subset_tree(big, rng, keep_prob=float(rng.uniform(0.3, 0.9)))
        l_small = verify_greedy(target, prefix, flatten(small, len(prefix) - 1)).accepted_len
        l_big = verify_greedy(target, prefix, flatten(big, len(prefix) - 1)).accepted_len
        if l_small > l_big:
            violations += 1
    report["subset_monotonicity"] = {"instances": n_monotonic, "violations": violations}

    violations = 0
    for _ in range(n_graft):
        target, _, prefix, tree, matrix = _random_instance(rng, with_matrix=True)
        limit = int(rng.integers(1, max(tree.n_nodes - 1, 2)))
        decision = _fixed_decision(tree, limit, tree.max_layer)
        pruned = draft_only(tree, decision.retained, tree.n_nodes + 32)
        tmpl = template_prefix(_SMALL_TEMPLATE, int(rng.integers(0, 12)), stage="rand")
        branch = instantiate(matrix, tmpl, tree.root_token) if tmpl.declared_size else empty_branch(tree.root_token)
        grafted = merge(decision, tree, branch, tree.n_nodes + 32)
        l_pruned = verify_greedy(target, prefix, flatten(pruned, len(prefix) - 1)).accepted_len
        l_grafted = verify_greedy(target, prefix, flatten(grafted, len(prefix) - 1)).accepted_len
        if l_grafted < l_pruned:
            violations += 1
    report["graft_monotonicity"] = {"instances": n_graft, "violations": violations}

    neg = strict_violations = strict_cases = 0
    for _ in range(n_coverage):
        v = int(rng.integers(4, 17))
        w = rng.gamma(1.0, 1.0, size=v)
        p = w / w.sum()
        drafted = list(rng.choice(v, size=int(rng.integers(0, v)), replace=False))
        retrieved = list(rng.choice(v, size=int(rng.integers(0, v)), replace=False))
        gain = coverage_gain(p, drafted, retrieved)
        if gain < 0:
            neg += 1
        new_mass = [t for t in retrieved if t not in set(drafted) and p[t] > 0]
        if new_mass:
            strict_cases += 1
            if not gain > 0:
                strict_violations += 1
    report["coverage_gain"] = {
        "instances": n_coverage,
        "negative": neg,
        "strict_cases": strict_cases,
        "strict_violations": strict_violations,
    }

    eps = np.asarray(overprune_eps, dtype=np.float64)
    draws = rng.random((overprune_trials, eps.shape[0])) < eps
    measured = float(draws.any(axis=1).mean())
    predicted = float(1.0 - np.prod(1.0 - eps))
    report["overprune_compounding"] = {
        "eps": [float(e) for e in eps],
        "trials": overprune_trials,
        "measured": measured,
        "predicted": predicted,
        "abs_error": abs(measured - predicted),
    }
    return report


# ---------------------------------------------------------------------------
# ablation suites


ABLATION_SUITES = ("component", "warmup", "template", "temperature")
WARMUP_SWEEP = (0, 1, 3, 5, 10, 25, 50)
TEMPLATE_DEPTH_SWEEP = (2, 4, 6, 8, 9)
TEMPLATE_WIDTH_SWEEP = (2, 4, 6, 8, 10)


@dataclass
class AblationFixture:
    """Matched inputs for paired ablation runs."""

    target: MarkovTableModel
    draft: MarkovTableModel
    warmed_matrix: TransitionMatrix
    prompts: dict[int, list[int]]  # seed -> prompt
    config: DecodeConfig
    warmup_prompts: list[list[int]] = field(default_factory=list)


def _run_variant(fixture: AblationFixture, variant: str, cfg: DecodeConfig, seed: int, matrix: TransitionMatrix) -> dict:
    cfg = replace(cfg, seed=seed)
    _, report = decode_session(cfg, fixture.target, fixture.draft, matrix, fixture.prompts[seed])
    return {
        "variant": variant,
        "method": cfg.method,
        "seed": seed,
        "acceptance": cfg.acceptance,
        "warmup_rounds": cfg.warmup_rounds,
        "report": report,
    }


def run_ablation(suite: str, fixture: AblationFixture, jobs: int = 1) -> list[dict]:
    """Matched sessions across a named variant grid; identical seeds/prompts."""
    if suite not in ABLATION_SUITES:
        raise ConfigError(f"unknown ablation suite {suite!r}; pick one of {ABLATION_SUITES}")
    base = fixture.config
    tasks: list[tuple[str, DecodeConfig, int, TransitionMatrix]] = []

    if suite == "component":
        variants = [
            ("graft", replace(base, method="graft")),
            ("w/o retrieval", replace(base, method="prune_only")),
            ("w/o prune", replace(base, method="fixed_split")),
            ("dense", replace(base, method="dense")),
        ]
        for name, cfg in variants:
            for seed in fixture.prompts:
                tasks.append((name, cfg, seed, fixture.warmed_matrix.copy()))
    elif suite == "warmup":
        from .retrieval import warmup

        for rounds in WARMUP_SWEEP:
            matrix = new_matrix(fixture.target.vocab.size, base.k)
            if rounds:
                warmup(matrix, fixture.target, fixture.draft, fixture.warmup_prompts, rounds, config=base)
            cfg = replace(base, method="graft", warmup_rounds=rounds)
            for seed in fixture.prompts:
                tasks.append((f"K={rounds}", cfg, seed, matrix.copy()))
    elif suite == "template":
        for depth in TEMPLATE_DEPTH_SWEEP:
            cfg = replace(base, method="graft")
            for seed in fixture.prompts:
                tasks.append((f"d={depth}", _with_template_filter(cfg, max_depth=depth), seed, fixture.warmed_matrix.copy()))
        for width in TEMPLATE_WIDTH_SWEEP:
            cfg = replace(base, method="graft")
            for seed in fixture.prompts:
                tasks.append((f"w={width}", _with_template_filter(cfg, max_rank=width), seed, fixture.warmed_matrix.copy()))
    else:  # temperature
        for name, cfg in (
            ("greedy", replace(base, method="graft", acceptance="greedy")),
            ("T=1", replace(base, method="graft", acceptance="stochastic")),
        ):
            for seed in fixture.prompts:
                tasks.append((name, cfg, seed, fixture.warmed_matrix.copy()))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda t: _run_variant(fixture, t[0], t[1], t[2], t[3]), tasks))
    else:
        rows = [_run_variant(fixture, *t) for t in tasks]
    return rows


def _with_template_filter(cfg: DecodeConfig, max_depth: int | None = None, max_rank: int | None = None) -> DecodeConfig:
    return replace(cfg, template_filter=(max_depth, max_rank))
