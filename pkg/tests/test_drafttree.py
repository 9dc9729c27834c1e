import math

import numpy as np
import pytest

from specgraft.drafttree import (
    PruneConfig,
    evaluate_gate,
    expand_layer,
    layer_confidence,
    new_tree,
    resolve_stage,
    select_retained,
)
from specgraft.errors import ConfigError, InputError, StructureError
from specgraft.models import VocabSpec, build_markov

from .oracles import closure_topk_iterative, enumerate_candidates, exhaustive_path_confidence


def grow(model, context, depth, top_k, beam):
    tree = new_tree(context)
    for _ in range(depth):
        tree = expand_layer(tree, model, top_k, beam)
    return tree


class TestExpandLayer:
    def test_det4_single_child(self, det4):
        tree = expand_layer(new_tree([0]), det4, top_k=1)
        assert tree.n_nodes == 2
        node = tree.node(1)
        assert (node.token, node.logq, node.score, node.depth) == (1, 0.0, 0.0, 1)

    def test_uni4_tie_break(self, uni4):
        tree = expand_layer(new_tree([0]), uni4, top_k=2)
        assert list(tree.tokens[1:]) == [0, 1]
        assert np.allclose(tree.logqs[1:], math.log(0.25))

    def test_matches_bruteforce_beam(self):
        draft = build_markov(VocabSpec(8), 1, seed=42)
        context = [5]
        tree = grow(draft, context, depth=2, top_k=3, beam=6)
        # oracle: score all 9 depth-2 candidates, keep the best 6
        layer1 = [([int(tree.tokens[i])], float(tree.scores[i])) for i in tree.layer(1)]
        cands = enumerate_candidates(draft, context, layer1, top_k=3)
        expect = sorted(cands, key=lambda ps: -ps[1])[:6]
        got = sorted(
            (tuple(tree.branch_tokens(int(i))), float(tree.scores[i])) for i in tree.layer(2)
        )
        assert sorted((tuple(p), s) for p, s in expect) == pytest.approx(got)

    def test_zero_prob_children_dropped(self, det4):
        tree = expand_layer(new_tree([0]), det4, top_k=4)
        assert tree.layer(1).size == 1  # only the cycle successor has mass

    def test_score_additivity_exact(self):
        draft = build_markov(VocabSpec(6), 1, seed=3)
        tree = grow(draft, [0], depth=3, top_k=2, beam=4)
        for i in range(1, tree.n_nodes):
            assert tree.scores[i] == tree.scores[tree.parents[i]] + tree.logqs[i]

    def test_parents_precede_children(self):
        draft = build_markov(VocabSpec(6), 1, seed=4)
        tree = grow(draft, [1], depth=4, top_k=3, beam=5)
        assert all(tree.parents[i] < i for i in range(1, tree.n_nodes))
        lo_hi = tree.layer_offsets
        assert lo_hi[0] == (0, 1)
        assert [hi for _, hi in lo_hi][-1] == tree.n_nodes


class TestLayerConfidence:
    def test_det4_always_one(self, det4):
        tree = grow(det4, [0], depth=4, top_k=1, beam=1)
        for d in range(5):
            assert layer_confidence(tree, d) == 1.0

    def test_uni4_depth3(self, uni4):
        tree = grow(uni4, [0], depth=3, top_k=2, beam=4)
        assert layer_confidence(tree, 3) == pytest.approx(0.25**3, abs=1e-15)

    def test_matches_exhaustive_oracle(self):
        draft = build_markov(VocabSpec(8), 1, seed=42)
        tree = grow(draft, [2], depth=2, top_k=3, beam=6)
        expect = exhaustive_path_confidence(draft, [2], depth=2, top_k=3, beam_width=6)
        assert layer_confidence(tree, 2) == pytest.approx(expect, rel=1e-12)

    def test_monotone_in_depth(self):
        draft = build_markov(VocabSpec(10), 1, seed=8, sparsity=0.3)
        tree = grow(draft, [3], depth=5, top_k=3, beam=6)
        confs = [layer_confidence(tree, d) for d in range(6)]
        assert all(confs[d + 1] <= confs[d] + 1e-15 for d in range(5))

    def test_missing_layer(self, det4):
        with pytest.raises(StructureError):
            layer_confidence(new_tree([0]), 1)


class TestEvaluateGate:
    def test_pass(self):
        assert evaluate_gate(0.25, 0.14) is True

    def test_prune(self):
        assert evaluate_gate(0.50, 0.51) is False

    def test_boundary_prunes(self):
        assert evaluate_gate(0.3, 0.3) is False

    def test_threshold_domain(self):
        with pytest.raises(InputError):
            evaluate_gate(0.5, 1.0)


class TestPruneConfig:
    def test_default_stage_splits(self):
        cfg = PruneConfig()
        assert cfg.total_budget == 60
        assert cfg.stage_budgets == {0: (8, 52), 1: (24, 36), 5: (40, 20)}
        for d in cfg.checkpoints:
            kd, kr = cfg.stage_budgets[d]
            assert kd + kr == 60

    def test_split_must_sum(self):
        with pytest.raises(ConfigError):
            PruneConfig(stage_budgets={0: (8, 50), 1: (24, 36), 5: (40, 20)})

    def test_checkpoint_range(self):
        with pytest.raises(ConfigError):
            PruneConfig(checkpoints=(0, 8), thresholds={0: 0.1, 8: 0.1}, stage_budgets={0: (8, 52), 8: (40, 20)})


class TestResolveStage:
    def test_det4_never_prunes(self, det4):
        tree, decision = resolve_stage(det4, [0], PruneConfig())
        assert decision.stage is None
        assert decision.stage_name == "none"
        # full chain retained (8 candidates, fewer than the budget)
        assert list(decision.retained) == list(range(9))
        assert decision.layers_drafted == 8

    def test_uni4_prunes_at_root_stage(self, uni4):
        cfg = PruneConfig(thresholds={0: 0.3, 1: 0.3, 5: 0.51})
        tree, decision = resolve_stage(uni4, [0], cfg)
        assert decision.stage == 0
        assert decision.confidence_trace[0] == pytest.approx(0.25)
        assert cfg.draft_budget(0) == 8
        # vocab 4 only offers 4 depth-1 candidates; all retained
        assert len(decision.retained) == 1 + 4
        assert decision.layers_drafted == 1

    def test_uni16_fills_stage_budget(self, uni16):
        cfg = PruneConfig(thresholds={0: 0.3, 1: 0.3, 5: 0.51})
        tree, decision = resolve_stage(uni16, [0], cfg)
        assert decision.stage == 0
        assert len(decision.retained) == 1 + 8  # root + exactly the d0 draft budget

    def test_retention_matches_iterative_oracle(self):
        draft = build_markov(VocabSpec(24), 1, seed=42)
        cfg = PruneConfig()
        tree, decision = resolve_stage(draft, [3], cfg)
        limit = cfg.draft_budget(decision.stage)
        expect = closure_topk_iterative(tree.scores.tolist(), tree.parents.tolist(), limit)
        assert list(decision.retained) == expect

    def test_parent_closure(self):
        draft = build_markov(VocabSpec(12), 1, seed=6, sparsity=0.2)
        tree, decision = resolve_stage(draft, [1], PruneConfig())
        kept = set(decision.retained.tolist())
        for i in decision.retained:
            if i != 0:
                assert int(tree.parents[i]) in kept

    def test_budget_cap_and_equality(self):
        draft = build_markov(VocabSpec(24), 1, seed=9)
        cfg = PruneConfig(thresholds={0: 0.999, 1: 0.13, 5: 0.51})  # force d0 prune
        tree, decision = resolve_stage(draft, [2], cfg)
        assert decision.stage == 0
        assert len(decision.retained) - 1 == min(cfg.draft_budget(0), tree.n_nodes - 1)

    def test_determinism(self):
        draft = build_markov(VocabSpec(16), 1, seed=5, sparsity=0.1)
        a = resolve_stage(draft, [2, 7], PruneConfig())
        b = resolve_stage(draft, [2, 7], PruneConfig())
        assert np.array_equal(a[1].retained, b[1].retained)
        assert a[1].stage == b[1].stage
        assert np.array_equal(a[0].tokens, b[0].tokens)


class TestSelectRetained:
    def test_random_trees_match_oracle(self):
        rng = np.random.default_rng(0)
        draft = build_markov(VocabSpec(10), 1, seed=2)
        for _ in range(20):
            tree = grow(draft, [int(rng.integers(10))], depth=int(rng.integers(2, 5)), top_k=3, beam=6)
            limit = int(rng.integers(1, tree.n_nodes + 4))
            got = select_retained(tree, limit)
            expect = closure_topk_iterative(tree.scores.tolist(), tree.parents.tolist(), limit)
            assert list(got) == expect
