import numpy as np
import pytest

from modalign import autodiff as ad
from modalign.autodiff import Tensor, counter_rng
from modalign.errors import ConfigError, ParameterError, ShapeError
from modalign.fusion import (
    ConcatFusion,
    CoAttentionFusion,
    CrossAttentionBlock,
    CrossAttentionFusion,
    FusionConfig,
    KnowledgeFusion,
    SentimentLexicon,
    build_fusion,
    sc_weight,
)

from oracles import attention_brute

TWO_E = 5.4365636569180905  # 2e, mpmath 40 digits


def rnd(shape, seed):
    return counter_rng("fusion-test", seed).standard_normal(shape)


def make_block(width=6, seed=0, self_attention=False):
    return CrossAttentionBlock(width, counter_rng("blk", seed), "blk",
                               self_attention=self_attention)


class TestCrossAttentionBlock:
    def test_single_key_attends_fully(self):
        block = make_block()
        q = Tensor(rnd((3, 6), 0))
        kv = Tensor(rnd((1, 6), 1))
        out = block(q, kv, attention_only=True)
        np.testing.assert_array_equal(block.last_weights, np.ones((3, 1)))
        v_row = kv.data @ block.wv.data
        for i in range(3):
            np.testing.assert_allclose(out.data[i], v_row[0], atol=1e-15)

    def test_identical_keys_average_values(self):
        block = make_block(seed=1)
        q = Tensor(rnd((2, 6), 2))
        kv_base = rnd(6, 3)
        kv = Tensor(np.tile(kv_base, (4, 1)))
        # same K everywhere, but V rows differ: overwrite kv with distinct rows
        kv = Tensor(np.vstack([kv_base + 0 * i for i in range(4)]))
        out = block(q, kv, attention_only=True).data
        v = kv.data @ block.wv.data
        np.testing.assert_allclose(out, np.tile(v.mean(axis=0), (2, 1)), atol=1e-12)

    def test_matches_brute_force_oracle(self):
        block = make_block(seed=2)
        q = rnd((3, 6), 4)
        kv = rnd((4, 6), 5)
        got = block(Tensor(q), Tensor(kv), attention_only=True).data
        want = attention_brute(q, kv, block.wq.data, block.wk.data, block.wv.data)
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_width_mismatch_rejected(self):
        block = make_block()
        with pytest.raises(ShapeError):
            block(Tensor(rnd((3, 4), 6)), Tensor(rnd((2, 6), 7)))

    def test_full_block_invariant_to_kv_permutation(self):
        block = make_block(seed=3)
        q = Tensor(rnd((3, 6), 8))
        kv = rnd((5, 6), 9)
        mask = [1, 1, 0, 1, 1]
        perm = [3, 0, 4, 1, 2]
        base = block(q, Tensor(kv), key_mask=mask).data
        permuted = block(q, Tensor(kv[perm]), key_mask=[mask[i] for i in perm]).data
        np.testing.assert_allclose(base, permuted, atol=1e-10)

    def test_attention_rows_sum_to_one(self):
        block = make_block(seed=4)
        lex = SentimentLexicon({"0": 0.9, "1": -0.7})
        block.sentiment(Tensor(rnd((3, 6), 10)), Tensor(rnd((4, 6), 11)),
                        ["0", "1", "0"], ["1", "0", "1", "0"], lex, key_mask=[1, 1, 1, 0])
        np.testing.assert_allclose(block.last_weights.sum(axis=1), 1.0, atol=1e-12)

    def test_masked_key_gets_zero_weight(self):
        block = make_block(seed=5)
        block(Tensor(rnd((2, 6), 12)), Tensor(rnd((3, 6), 13)), key_mask=[1, 0, 1])
        assert np.all(block.last_weights[:, 1] == 0.0)


class TestCrossAttentionFusion:
    def test_one_layer_equals_block_then_pool(self):
        config = FusionConfig(variant="cross_attention", layers=1, width=6)
        fusion = CrossAttentionFusion(config, seed=6)
        text = Tensor(rnd((4, 6), 14))
        image = Tensor(rnd((3, 6), 15))
        got = fusion(text, image).data
        want = fusion.blocks[0](text, image).data.mean(axis=0)
        np.testing.assert_allclose(got, want, atol=1e-15)

    @pytest.mark.parametrize("n,m", [(2, 3), (5, 1), (1, 4)])
    def test_output_width_independent_of_lengths(self, n, m):
        fusion = CrossAttentionFusion(FusionConfig(layers=3, width=6), seed=7)
        out = fusion(Tensor(rnd((n, 6), n)), Tensor(rnd((m, 6), 10 + m)))
        assert out.shape == (6,)

    def test_gradients_through_three_layers(self):
        fusion = CrossAttentionFusion(FusionConfig(layers=3, width=4), seed=8)
        text = Tensor(rnd((3, 4), 16), requires_grad=True)
        image = Tensor(rnd((2, 4), 17), requires_grad=True)
        readout = Tensor(rnd(4, 18))
        inputs = [text, image] + [t for _, t in fusion.parameters()]

        def f(ts):
            return ad.mean(ad.mul(fusion(ts[0], ts[1]), readout))

        err = ad.grad_check(f, inputs, max_entries_per_tensor=6)
        assert err < 1e-4


class TestConcatFusion:
    def test_concatenates_pooled_text_first(self):
        fusion = ConcatFusion(FusionConfig(variant="concat", width=5))
        text = rnd((3, 5), 19)
        image = rnd((2, 5), 20)
        out = fusion(Tensor(text), Tensor(image)).data
        np.testing.assert_allclose(out[:5], text.mean(axis=0), atol=1e-15)
        np.testing.assert_allclose(out[5:], image.mean(axis=0), atol=1e-15)

    def test_swapping_modalities_swaps_halves(self):
        fusion = ConcatFusion(FusionConfig(variant="concat", width=5))
        a, b = Tensor(rnd((3, 5), 21)), Tensor(rnd((4, 5), 22))
        fwd = fusion(a, b).data
        rev = fusion(b, a).data
        np.testing.assert_array_equal(fwd, np.concatenate([rev[5:], rev[:5]]))

    def test_output_width(self):
        config = FusionConfig(variant="concat", width=32)
        assert config.output_width == 64
        out = ConcatFusion(config)(Tensor(rnd((2, 32), 23)), Tensor(rnd((2, 32), 24)))
        assert out.shape == (64,)


class TestCoAttentionFusion:
    def test_zero_weights_give_zero_output(self):
        fusion = CoAttentionFusion(FusionConfig(variant="co_attention", width=4), seed=9)
        for _, p in fusion.parameters():
            p.data[:] = 0.0
        out = fusion(Tensor(rnd((3, 4), 25)), Tensor(rnd((2, 4), 26)))
        np.testing.assert_array_equal(out.data, np.zeros(8))

    def test_single_position_hand_formula(self):
        fusion = CoAttentionFusion(FusionConfig(variant="co_attention", width=3), seed=10)
        t_col = rnd((3, 1), 27)
        i_col = rnd((3, 1), 28)
        got = fusion.fuse_columns(Tensor(t_col), Tensor(i_col)).data
        wc, wt, wi = fusion.w_c.data, fusion.w_t.data, fusion.w_i.data
        affinity = np.tanh(t_col.T @ wc @ i_col)
        h_i = np.tanh(wi @ i_col + (wt @ t_col) @ affinity)
        h_t = np.tanh(wt @ t_col + (wi @ i_col) @ affinity.T)
        np.testing.assert_allclose(got, np.concatenate([h_t[:, 0], h_i[:, 0]]), atol=1e-12)

    def test_affinity_entries_bounded_by_tanh_range(self):
        fusion = CoAttentionFusion(FusionConfig(variant="co_attention", width=4), seed=11)
        t_cols = rnd((4, 6), 29)
        i_cols = rnd((4, 5), 30)
        affinity = np.tanh(t_cols.T @ fusion.w_c.data @ i_cols)
        assert np.all(np.abs(affinity) < 1.0)
        # extreme inputs saturate to exactly +-1 in float64, never beyond
        extreme = np.tanh((t_cols * 50).T @ fusion.w_c.data @ (i_cols * 50))
        assert np.all(np.abs(extreme) <= 1.0)

    def test_gradients(self):
        fusion = CoAttentionFusion(FusionConfig(variant="co_attention", width=3), seed=12)
        text = Tensor(rnd((2, 3), 31), requires_grad=True)
        image = Tensor(rnd((2, 3), 32), requires_grad=True)
        inputs = [text, image] + [t for _, t in fusion.parameters()]
        err = ad.grad_check(lambda ts: ad.mean(fusion(ts[0], ts[1])), inputs)
        assert err < 1e-6


class TestSentimentWeighting:
    def test_same_token_zero_discrepancy(self):
        for s in (-1.0, -0.3, 0.0, 0.8, 1.0):
            assert sc_weight(s, s) == 0.0

    def test_opposite_extremes(self):
        assert abs(sc_weight(1.0, -1.0) - TWO_E) < 1e-12

    def test_symmetry_on_random_lexicons(self):
        rng = counter_rng("sc", 0)
        for _ in range(20):
            lex = SentimentLexicon({str(i): float(v) for i, v in
                                    enumerate(rng.uniform(-1, 1, size=6))})
            tokens = [str(int(t)) for t in rng.integers(0, 6, size=5)]
            sc = lex.sc_matrix(tokens, tokens)
            np.testing.assert_allclose(sc, sc.T, atol=1e-15)

    def test_shared_single_token_reduces_to_plain_attention(self):
        block = make_block(seed=13)
        lex = SentimentLexicon({"7": 0.9})
        q, kv = Tensor(rnd((2, 6), 33)), Tensor(rnd((3, 6), 34))
        plain = block(q, kv).data
        weighted = block.sentiment(q, kv, ["7", "7"], ["7", "7", "7"], lex).data
        np.testing.assert_array_equal(plain, weighted)

    def test_token_position_mismatch_rejected(self):
        block = make_block(seed=14)
        with pytest.raises(ShapeError):
            block.sentiment(Tensor(rnd((2, 6), 35)), Tensor(rnd((3, 6), 36)),
                            ["1"], ["1", "2", "3"], SentimentLexicon())

    def test_out_of_range_value_rejected(self):
        with pytest.raises(ParameterError):
            SentimentLexicon({"x": 1.5})

    def test_lexicon_file_round_trip(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("good\t0.75\nbad\t-0.6\n17\t0.1\n", encoding="utf-8")
        lex = SentimentLexicon.load(path)
        assert lex.value("good") == 0.75
        assert lex.value(17) == 0.1
        assert lex.value("unknown") == 0.0

    def test_malformed_lexicon_line(self, tmp_path):
        path = tmp_path / "lex.tsv"
        path.write_text("no-tab-here\n", encoding="utf-8")
        with pytest.raises(ConfigError):
            SentimentLexicon.load(path)


class TestKnowledgeFusion:
    def _setup(self, seed=15, width=6, n=4, m=3, a=4):
        fusion = KnowledgeFusion(FusionConfig(variant="knowledge_cross_attention",
                                              width=width), seed=seed)
        text = Tensor(rnd((n, width), seed + 100))
        image = Tensor(rnd((m, width), seed + 200))
        aux = Tensor(rnd((a, width), seed + 300))
        text_tokens = [str(i) for i in range(n)]
        aux_tokens = [str(i + 10) for i in range(a)]
        return fusion, text, image, aux, text_tokens, aux_tokens

    def test_empty_lexicon_matches_plain_stack_bitwise(self):
        fusion, text, image, aux, tt, at = self._setup()
        with_empty = fusion(text, image, aux_feats=aux, text_tokens=tt, aux_tokens=at,
                            lexicon=SentimentLexicon()).data
        plain = fusion(text, image, aux_feats=aux, text_tokens=tt, aux_tokens=at,
                       lexicon=None).data
        np.testing.assert_array_equal(with_empty, plain)

    def test_output_shape(self):
        fusion, text, image, aux, tt, at = self._setup(width=5, n=3, m=2, a=6)
        out = fusion(text, image, aux_feats=aux, text_tokens=tt, aux_tokens=at,
                     lexicon=SentimentLexicon({"1": 0.5}))
        assert out.shape == (5,)

    def test_missing_auxiliary_features_rejected(self):
        fusion, text, image, *_ = self._setup()
        with pytest.raises(ConfigError):
            fusion(text, image, text_tokens=["a"], lexicon=None)

    def test_gradients(self):
        fusion, text, image, aux, tt, at = self._setup(seed=16, width=4, n=2, m=2, a=2)
        lex = SentimentLexicon({"0": 0.9, "1": -0.8, "10": 0.4, "11": -0.2})
        params = [t for _, t in fusion.parameters()]

        def f(ts):
            return ad.mean(fusion(text, image, aux_feats=aux, text_tokens=tt,
                                  aux_tokens=at, lexicon=lex))

        err = ad.grad_check(f, params, max_entries_per_tensor=4)
        assert err < 1e-4


class TestVariantContract:
    @pytest.mark.parametrize("variant", ["concat", "co_attention", "cross_attention",
                                         "knowledge_cross_attention"])
    def test_every_variant_emits_declared_fixed_width(self, variant):
        config = FusionConfig(variant=variant, width=6, layers=2)
        fusion = build_fusion(config, seed=17)
        for n, m in [(2, 3), (5, 4)]:
            out = fusion(
                Tensor(rnd((n, 6), n + 40)), Tensor(rnd((m, 6), m + 50)),
                aux_feats=Tensor(rnd((3, 6), 60)),
                text_tokens=[str(i) for i in range(n)],
                aux_tokens=["a", "b", "c"],
                lexicon=None,
            )
            assert out.shape == (config.output_width,)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            FusionConfig(variant="bilinear")

    def test_layers_must_be_positive(self):
        with pytest.raises(ParameterError):
            FusionConfig(layers=0)
