import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from evpr.fusion import (
    FusionParams,
    global_fusion,
    relevance_scores,
    score_and_match,
    select_topk,
    selection_count,
    semantic_inject,
)
from evpr.losses import grad_check
from oracles import (
    best_word_oracle,
    inject_oracle,
    relevance_oracle,
    selection_count_oracle,
    topk_oracle,
)


def all_valid(n):
    return torch.ones(n, dtype=torch.bool)


class TestGlobalFusion:
    def test_zero_inputs_hit_the_bias_path(self):
        torch.manual_seed(0)
        params = FusionParams(8)
        zero = torch.zeros(8)
        out = global_fusion(zero, zero, params)
        assert torch.equal(out, params.mlp(torch.zeros(16)))

    def test_order_sensitivity(self):
        # A generic MLP distinguishes which half of the concat each token
        # occupies; search a few seeds for a witness.
        witnesses = 0
        for seed in range(5):
            torch.manual_seed(seed)
            params = FusionParams(8)
            a, b = torch.randn(8), torch.randn(8)
            if not torch.allclose(global_fusion(a, b, params), global_fusion(b, a, params)):
                witnesses += 1
        assert witnesses == 5

    def test_dimension_mismatch(self):
        params = FusionParams(8)
        with pytest.raises(ValueError):
            global_fusion(torch.zeros(8), torch.zeros(9), params)
        with pytest.raises(ValueError):
            global_fusion(torch.zeros(4), torch.zeros(4), params)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(1)
        params = FusionParams(8).double()

        def fn(v, t):
            return (global_fusion(v, t, params) ** 2).sum()

        report = grad_check(fn, [torch.randn(8), torch.randn(8)])
        assert report.max_rel_error < 1e-4

    def test_rho_validation(self):
        with pytest.raises(ValueError):
            FusionParams(8, rho=0.0)
        with pytest.raises(ValueError):
            FusionParams(8, rho=1.5)


class TestRelevanceScores:
    def test_patch_equal_to_word_scores_one(self):
        words = torch.randn(4, 16, dtype=torch.float64)
        patches = torch.cat([words[2:3], torch.randn(2, 16, dtype=torch.float64)])
        m = relevance_scores(patches, words, all_valid(4))
        assert float(m[0]) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_patch_scores_zero(self):
        words = torch.zeros(2, 4)
        words[0, 0] = 1.0
        words[1, 1] = 1.0
        patches = torch.tensor([[0.0, 0.0, 3.0, 0.0]])
        assert float(relevance_scores(patches, words, all_valid(2))[0]) == 0.0

    def test_matches_double_loop_oracle(self):
        torch.manual_seed(3)
        patches = torch.randn(8, 16, dtype=torch.float64)
        words = torch.randn(5, 16, dtype=torch.float64)
        m = relevance_scores(patches, words, all_valid(5))
        expected = relevance_oracle(patches.tolist(), words.tolist(), [True] * 5)
        assert torch.allclose(m, torch.tensor(expected, dtype=torch.float64), atol=1e-6)

    def test_zero_norm_vectors_contribute_zero(self):
        words = torch.zeros(2, 4)
        patches = torch.zeros(1, 4)
        m = relevance_scores(patches, words, all_valid(2))
        assert float(m[0]) == 0.0

    def test_mask_excludes_padding(self):
        patches = torch.tensor([[1.0, 0.0]])
        words = torch.tensor([[-1.0, 0.0], [1.0, 0.0]])
        mask = torch.tensor([True, False])
        assert float(relevance_scores(patches, words, mask)[0]) == pytest.approx(-1.0)
        with pytest.raises(ValueError):
            relevance_scores(patches, words, torch.tensor([False, False]))

    def test_bounded(self):
        torch.manual_seed(4)
        m = relevance_scores(torch.randn(32, 8) * 100, torch.randn(6, 8) * 100, all_valid(6))
        assert float(m.min()) >= -1.0
        assert float(m.max()) <= 1.0

    @given(st.floats(0.1, 100.0), st.integers(0, 2**31))
    @settings(max_examples=25, deadline=None)
    def test_invariant_to_positive_rescaling(self, scale, seed):
        gen = torch.Generator().manual_seed(seed)
        patches = torch.randn(6, 8, generator=gen, dtype=torch.float64)
        words = torch.randn(4, 8, generator=gen, dtype=torch.float64)
        base = relevance_scores(patches, words, all_valid(4))
        scaled = relevance_scores(patches * scale, words, all_valid(4))
        assert torch.allclose(base, scaled, atol=1e-9)


class TestSelectTopk:
    def test_quarter_of_sixteen_is_four(self):
        sel = select_topk(torch.arange(16.0), 0.25)
        assert len(sel.indices) == 4
        assert sel.indices.tolist() == [12, 13, 14, 15]

    def test_all_equal_ties_break_low_index(self):
        sel = select_topk(torch.ones(8), 0.25)
        assert sel.indices.tolist() == [0, 1]

    def test_scale_invariance(self):
        torch.manual_seed(5)
        scores = torch.randn(20, dtype=torch.float64)
        assert torch.equal(select_topk(scores, 0.3).indices, select_topk(scores * 3.7, 0.3).indices)

    @given(st.integers(1, 64), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_monotone_transform_invariance(self, n, seed):
        gen = torch.Generator().manual_seed(seed)
        scores = torch.randn(n, generator=gen, dtype=torch.float64)
        base = select_topk(scores, 0.25).indices
        warped = select_topk(2.0 * scores + 1.0, 0.25).indices
        assert torch.equal(base, warped)

    def test_floor_clamps_to_one(self):
        assert select_topk(torch.randn(3), 0.1).indices.shape == (1,)

    def test_matches_sort_oracle(self):
        torch.manual_seed(6)
        scores = torch.randn(40, dtype=torch.float64)
        sel = select_topk(scores, 0.25)
        assert sel.indices.tolist() == topk_oracle(scores.tolist(), 10)

    def test_count_grid_matches_exact_arithmetic(self):
        for rho in ("0.15", "0.20", "0.25", "0.29", "0.30", "0.5", "1.0"):
            for n in (1, 3, 7, 10, 16, 50, 100, 196):
                assert selection_count(n, float(rho)) == selection_count_oracle(rho, n), (rho, n)

    def test_carries_word_indices(self):
        scores = torch.tensor([3.0, 1.0, 2.0, 0.0])
        words = torch.tensor([7, 8, 9, 10])
        sel = select_topk(scores, 0.5, word_indices=words)
        assert sel.indices.tolist() == [0, 2]
        assert sel.word_indices.tolist() == [7, 9]


class TestSemanticInject:
    def test_alpha_zero_is_identity(self):
        torch.manual_seed(7)
        patches = torch.randn(8, 4)
        words = torch.randn(3, 4)
        scores, match = score_and_match(patches, words, all_valid(3))
        sel = select_topk(scores, 0.5, word_indices=match)
        out = semantic_inject(patches, words, sel, alpha=0.0)
        assert torch.equal(out, patches)

    def test_ones_times_twos_plus_ones(self):
        patches = torch.ones(1, 4)
        words = torch.full((1, 4), 2.0)
        sel = select_topk(torch.tensor([1.0]), 1.0, word_indices=torch.tensor([0]))
        out = semantic_inject(patches, words, sel, alpha=1.0)
        assert torch.equal(out, torch.full((1, 4), 3.0))

    def test_unselected_rows_bitwise_unchanged(self):
        torch.manual_seed(8)
        patches = torch.randn(16, 8, dtype=torch.float64)
        words = torch.randn(5, 8, dtype=torch.float64)
        scores, match = score_and_match(patches, words, all_valid(5))
        sel = select_topk(scores, 0.25, word_indices=match)
        out = semantic_inject(patches, words, sel, alpha=0.7)
        selected = set(sel.indices.tolist())
        untouched = [i for i in range(16) if i not in selected]
        assert len(untouched) == 12
        for i in untouched:
            assert torch.equal(out[i], patches[i])
        expected = inject_oracle(
            patches.tolist(), words.tolist(), sel.indices.tolist(), sel.word_indices.tolist(), 0.7
        )
        assert torch.allclose(out, torch.tensor(expected, dtype=torch.float64), atol=1e-6)

    def test_best_word_matches_oracle(self):
        torch.manual_seed(9)
        patches = torch.randn(10, 6, dtype=torch.float64)
        words = torch.randn(7, 6, dtype=torch.float64)
        mask = torch.tensor([True, True, False, True, True, False, True])
        _, match = score_and_match(patches, words, mask)
        assert match.tolist() == best_word_oracle(patches.tolist(), words.tolist(), mask.tolist())

    def test_requires_word_indices(self):
        sel = select_topk(torch.tensor([1.0, 0.0]), 0.5)
        with pytest.raises(ValueError, match="word indices"):
            semantic_inject(torch.zeros(2, 3), torch.zeros(1, 3), sel, 1.0)


def test_end_to_end_gradients_with_fixed_selection():
    """Global fusion + injection + aggregation, selection held fixed."""
    from evpr.aggregation import pyramid_aggregate, tokens_to_map

    torch.manual_seed(10)
    params = FusionParams(8, alpha_init=0.3).double()
    patches0 = torch.randn(9, 8, dtype=torch.float64)
    words = torch.randn(4, 8, dtype=torch.float64)
    scores, match = score_and_match(patches0, words, all_valid(4))
    sel = select_topk(scores, 0.25, word_indices=match)

    def fn(patches, cls_token, sentence):
        anchor = global_fusion(cls_token, sentence, params)
        injected = semantic_inject(patches, words, sel, params.alpha)
        descriptor = pyramid_aggregate(tokens_to_map(injected, (3, 3)), anchor, 3.0)
        return (descriptor * torch.linspace(0.5, 1.5, descriptor.shape[0])).sum()

    report = grad_check(fn, [patches0, torch.randn(8, dtype=torch.float64), torch.randn(8, dtype=torch.float64)])
    assert report.max_rel_error < 1e-4
