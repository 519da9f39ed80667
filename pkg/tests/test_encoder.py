"""Tokenization, masking, the transformer forward pass, and gradient checks."""

import numpy as np
import pytest

from ehr_riskbench.cohort import CohortSample
from ehr_riskbench.errors import DegenerateBatch, EmptyAfterSkips, NonFinite
from ehr_riskbench.sentemed import autodiff as ad
from ehr_riskbench.sentemed.embeddings import random_embedding_table
from ehr_riskbench.sentemed.encoder import (
    Batch,
    EncoderConfig,
    TokenSeq,
    classify_logits,
    classify_loss,
    encode_patient,
    encode_visits,
    forward,
    init_params,
    make_batch,
    mask_for_mlm,
    mlm_loss,
    next_visit_loss,
)
from ehr_riskbench.sentemed.gradcheck import grad_check

from conftest import mk_code, mk_visit

VOCAB = [f"C{i:02d}" for i in range(12)]
TINY = EncoderConfig(layers=2, heads=2, d_model=8, ff_dim=16, max_seq=16,
                     max_visits=4)


@pytest.fixture(scope="module")
def table():
    return random_embedding_table([mk_code(c) for c in VOCAB], dim=8, seed=1,
                                  encoder_id="tiny-fixture-v1")


def visits(*code_lists):
    return tuple(mk_visit(i + 1, list(codes), day=7 * i)
                 for i, codes in enumerate(code_lists))


class TestEncode:
    def test_tokens_in_visit_order(self, table):
        seq = encode_visits("p", visits(["C00", "C01"], ["C02"]), table, TINY)
        assert seq.code_ids.tolist() == [0, 1, 2]
        assert seq.visit_slots.tolist() == [0, 0, 1]
        assert seq.attention_mask.tolist() == [1.0, 1.0, 1.0]
        assert seq.skipped == 0

    def test_unknown_codes_skipped_and_counted(self, table):
        seq = encode_visits("p", visits(["C00", "Z99"], ["Z88", "C03"]),
                            table, TINY)
        assert seq.code_ids.tolist() == [0, 3]
        assert seq.visit_slots.tolist() == [0, 1]
        assert seq.skipped == 2

    def test_all_unknown_raises(self, table):
        with pytest.raises(EmptyAfterSkips):
            encode_visits("p", visits(["Z99"], ["Z88"]), table, TINY)

    def test_truncates_to_most_recent_tokens(self, table):
        # 3 visits x 6 codes = 18 tokens; max_seq=16 drops the oldest 2
        v = visits(VOCAB[0:6], VOCAB[3:9], VOCAB[6:12])
        seq = encode_visits("p", v, table, TINY)
        assert len(seq) == 16
        assert seq.code_ids.tolist() == ([2, 3, 4, 5] + list(range(3, 9))
                                         + list(range(6, 12)))
        assert seq.visit_slots.tolist() == [0] * 4 + [1] * 6 + [2] * 6

    def test_truncation_can_drop_whole_visits(self, table):
        v = visits(VOCAB[0:6], VOCAB[0:6], VOCAB[0:6], VOCAB[6:12])
        seq = encode_visits("p", v, table, TINY)
        # 24 tokens -> keep the last 16: 4 of visit 2, then visits 3 and 4
        assert seq.visit_slots.tolist() == [0] * 4 + [1] * 6 + [2] * 6
        assert seq.code_ids[-6:].tolist() == list(range(6, 12))

    def test_visit_slots_capped(self, table):
        v = visits(*[[VOCAB[i]] for i in range(6)])
        seq = encode_visits("p", v, table, TINY)
        assert seq.visit_slots.tolist() == [0, 1, 2, 3, 3, 3]

    def test_slots_follow_order_not_ordinal_values(self, table):
        v = (mk_visit(5, ["C00"]), mk_visit(17, ["C01"]), mk_visit(40, ["C02"]))
        seq = encode_visits("p", v, table, TINY)
        assert seq.visit_slots.tolist() == [0, 1, 2]

    def test_encode_patient_uses_input_visits(self, table):
        sample = CohortSample("p9", visits(["C00"], ["C01"]), 1, 3)
        seq = encode_patient(sample, table, TINY)
        assert seq.patient_id == "p9"
        assert seq.code_ids.tolist() == [0, 1]


class TestMaskForMlm:
    def seq(self, n, table):
        ids = np.arange(n) % len(table)
        return TokenSeq("p", ids.astype(np.int64),
                        np.zeros(n, dtype=np.int64), np.ones(n))

    @pytest.mark.parametrize("length,expected", [
        (20, 3),   # round(3.0)
        (2, 1),    # max(1, round(0.3))
        (1, 1),
        (7, 1),    # round(1.05)
        (10, 2),   # round(1.5) rounds half up
        (128, 19), # round(19.2)
    ])
    def test_mask_count(self, table, length, expected):
        positions, targets = mask_for_mlm(self.seq(length, table),
                                          np.random.default_rng(0))
        assert len(positions) == expected
        assert len(targets) == expected

    def test_positions_sorted_unique_in_range(self, table):
        seq = self.seq(40, table)
        positions, targets = mask_for_mlm(seq, np.random.default_rng(3))
        assert sorted(set(positions.tolist())) == positions.tolist()
        assert positions.min() >= 0 and positions.max() < 40
        np.testing.assert_array_equal(targets, seq.code_ids[positions])

    def test_deterministic_under_seed(self, table):
        seq = self.seq(30, table)
        a, _ = mask_for_mlm(seq, np.random.default_rng(11))
        b, _ = mask_for_mlm(seq, np.random.default_rng(11))
        c, _ = mask_for_mlm(seq, np.random.default_rng(12))
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c) or len(a) == 30


class TestMakeBatch:
    def test_padding_layout(self, table):
        s1 = encode_visits("a", visits(["C00", "C01"], ["C02"]), table, TINY)
        s2 = encode_visits("b", visits(["C03"]), table, TINY)
        batch = make_batch([s1, s2])
        assert batch.ids.shape == (2, 3)
        np.testing.assert_array_equal(batch.pad, [[1, 1, 1], [1, 0, 0]])
        np.testing.assert_array_equal(batch.ids[1], [3, 0, 0])

    def test_masks_recorded_flat(self, table):
        s1 = encode_visits("a", visits(["C00", "C01"], ["C02"]), table, TINY)
        s2 = encode_visits("b", visits(["C03", "C04"]), table, TINY)
        batch = make_batch([s1, s2], [(np.array([1]), np.array([1])),
                                      (np.array([0]), np.array([3]))])
        np.testing.assert_array_equal(batch.mlm_flat_pos, [1, 3])
        np.testing.assert_array_equal(batch.mlm_targets, [1, 3])
        np.testing.assert_array_equal(batch.mask_sel,
                                      [[0, 1, 0], [1, 0, 0]])

    def test_empty_batch_raises(self):
        with pytest.raises(DegenerateBatch):
            make_batch([])


@pytest.fixture(scope="module")
def tiny_params(table):
    return init_params(TINY, len(table), seed=5)


def batch_of(table, *histories):
    seqs = [encode_visits(f"p{i}", visits(*h), table, TINY)
            for i, h in enumerate(histories)]
    return make_batch(seqs)


class TestForward:
    def test_shapes(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01"], ["C02"]), (["C03"],))
        attn = []
        hidden, pooled = forward(tiny_params, table, batch, TINY,
                                 collect_attention=attn)
        assert hidden.value.shape == (2, 3, 8)
        assert pooled.value.shape == (2, 8)
        assert len(attn) == TINY.layers
        assert all(a.shape == (2, TINY.heads, 3, 3) for a in attn)

    def test_attention_rows_sum_to_one(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01", "C02"], ["C03", "C04"]),
                         (["C05"],))
        attn = []
        forward(tiny_params, table, batch, TINY, collect_attention=attn)
        for layer in attn:
            assert np.all(layer >= 0.0)
            np.testing.assert_allclose(layer.sum(axis=-1),
                                       np.ones(layer.shape[:-1]), atol=1e-6)

    def test_padding_masks_attention(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01", "C02"],), (["C03"],))
        attn = []
        forward(tiny_params, table, batch, TINY, collect_attention=attn)
        # padded keys of the short patient receive exactly zero attention
        for layer in attn:
            np.testing.assert_array_equal(layer[1, :, 0, 1:], 0.0)

    def test_padding_does_not_contaminate(self, table, tiny_params):
        short = encode_visits("s", visits(["C07", "C08"], ["C09"]), table, TINY)
        long = encode_visits("l", visits(VOCAB[:6]), table, TINY)
        solo_hidden, solo_pooled = forward(tiny_params, table,
                                           make_batch([short]), TINY)
        hid, pooled = forward(tiny_params, table, make_batch([long, short]),
                              TINY)
        np.testing.assert_allclose(hid.value[1, :3], solo_hidden.value[0],
                                   atol=1e-9)
        np.testing.assert_allclose(pooled.value[1], solo_pooled.value[0],
                                   atol=1e-9)

    def test_pooled_is_mean_over_real_positions(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01"], ["C02"]), (["C03"],))
        hidden, pooled = forward(tiny_params, table, batch, TINY)
        manual0 = hidden.value[0].mean(axis=0)
        manual1 = hidden.value[1, :1].mean(axis=0)
        np.testing.assert_allclose(pooled.value[0], manual0, atol=1e-12)
        np.testing.assert_allclose(pooled.value[1], manual1, atol=1e-12)

    def test_token_permutation_equivariance(self, table, tiny_params):
        rng = np.random.default_rng(2)
        ids = np.array([0, 1, 2, 3, 4, 5], dtype=np.int64)
        slots = np.array([0, 0, 1, 1, 2, 2], dtype=np.int64)
        perm = rng.permutation(6)
        base = TokenSeq("p", ids, slots, np.ones(6))
        shuffled = TokenSeq("p", ids[perm], slots[perm], np.ones(6))
        h1, p1 = forward(tiny_params, table, make_batch([base]), TINY)
        h2, p2 = forward(tiny_params, table, make_batch([shuffled]), TINY)
        np.testing.assert_allclose(p2.value, p1.value, atol=1e-9)
        np.testing.assert_allclose(h2.value[0], h1.value[0][perm], atol=1e-9)

    def test_non_finite_params_detected(self, table):
        params = init_params(TINY, len(table), seed=5)
        params["l0.wq"].value[:] = np.nan
        batch = batch_of(table, (["C00"],))
        with pytest.raises(NonFinite):
            forward(params, table, batch, TINY)


class TestInit:
    def test_fresh_classifier_scores_exactly_half(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01"], ["C02"]), (["C05", "C07"],))
        logits = classify_logits(tiny_params, table, batch, TINY)
        np.testing.assert_array_equal(logits.value, 0.0)

    def test_initial_mlm_loss_near_log_vocab(self):
        cfg = EncoderConfig(layers=2, heads=4, d_model=32, ff_dim=16,
                            max_seq=64, max_visits=8)
        vocab = [mk_code(f"D{i:02d}") for i in range(40)]
        big = random_embedding_table(vocab, dim=32, seed=9)
        params = init_params(cfg, len(big), seed=0)
        rng = np.random.default_rng(4)
        seqs, masks = [], []
        for p in range(6):
            ids = rng.integers(0, 40, size=20).astype(np.int64)
            slots = np.repeat(np.arange(4), 5).astype(np.int64)
            seq = TokenSeq(f"p{p}", ids, slots, np.ones(20))
            seqs.append(seq)
            masks.append(mask_for_mlm(seq, rng))
        batch = make_batch(seqs, masks)
        loss = float(mlm_loss(params, big, batch, cfg).value)
        assert abs(loss - np.log(40.0)) < 0.5

    def test_learned_mode_adds_code_embeddings(self, table):
        frozen = init_params(TINY, len(table), seed=0, mode="frozen")
        learned = init_params(TINY, len(table), seed=0, mode="learned")
        assert "code_emb" not in frozen
        assert learned["code_emb"].value.shape == (len(table), TINY.d_model)

    def test_seed_determinism(self, table):
        a = init_params(TINY, len(table), seed=3)
        b = init_params(TINY, len(table), seed=3)
        c = init_params(TINY, len(table), seed=4)
        for name in a:
            np.testing.assert_array_equal(a[name].value, b[name].value)
        assert not np.array_equal(a["l0.wq"].value, c["l0.wq"].value)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="divisible"):
            EncoderConfig(d_model=10, heads=4).validate()
        with pytest.raises(ValueError, match="mask_rate"):
            EncoderConfig(mask_rate=0.0).validate()
        with pytest.raises(ValueError, match="max_seq"):
            EncoderConfig(max_seq=0).validate()
        with pytest.raises(ValueError, match="mode"):
            init_params(TINY, 4, mode="thawed")


class TestLosses:
    def test_mlm_requires_masks(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01"],))
        with pytest.raises(DegenerateBatch):
            mlm_loss(tiny_params, table, batch, TINY)

    def test_next_visit_requires_targets(self, table, tiny_params):
        batch = batch_of(table, (["C00"],))
        with pytest.raises(DegenerateBatch):
            next_visit_loss(tiny_params, table, batch,
                            np.zeros((1, len(table))), TINY)

    def test_classify_loss_matches_manual_bce(self, table, tiny_params):
        batch = batch_of(table, (["C00", "C01"],), (["C02"],))
        labels = np.array([1.0, 0.0])
        loss = classify_loss(tiny_params, table, batch, labels, TINY)
        # zero-init head gives 0.5 either way: loss is exactly log(2)
        assert float(loss.value) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_frozen_table_is_bit_identical_after_backward(self, table):
        params = init_params(TINY, len(table), seed=7)
        before = table.fingerprint()
        rng = np.random.default_rng(0)
        seqs = [encode_visits("p", visits(["C00", "C01", "C02"]), table, TINY)]
        masks = [mask_for_mlm(s, rng) for s in seqs]
        loss = mlm_loss(params, table, make_batch(seqs, masks), TINY)
        ad.backward(loss)
        assert table.fingerprint() == before


class TestGradCheck:
    def build_batch(self, table):
        rng = np.random.default_rng(8)
        seqs = [encode_visits("a", visits(["C00", "C01", "C02"], ["C03"]),
                              table, TINY),
                encode_visits("b", visits(["C04", "C05"]), table, TINY)]
        masks = [mask_for_mlm(s, rng) for s in seqs]
        return make_batch(seqs, masks)

    def test_mlm_gradients(self, table):
        params = init_params(TINY, len(table), seed=1)
        batch = self.build_batch(table)
        err = grad_check(lambda: mlm_loss(params, table, batch, TINY), params,
                         max_entries_per_param=4)
        assert err < 1e-4

    def test_classify_gradients(self, table):
        params = init_params(TINY, len(table), seed=2)
        # non-zero head so the check exercises a non-trivial classifier path
        params["cls.w"].value[:] = np.random.default_rng(0).standard_normal((8, 1))
        batch = self.build_batch(table)
        labels = np.array([1.0, 0.0])
        err = grad_check(lambda: classify_loss(params, table, batch, labels, TINY),
                         params, max_entries_per_param=4)
        assert err < 1e-4

    def test_next_visit_gradients(self, table):
        params = init_params(TINY, len(table), seed=3)
        batch = self.build_batch(table)
        multihot = np.zeros((2, len(table)))
        multihot[0, [3, 5]] = 1.0
        multihot[1, [0]] = 1.0
        err = grad_check(
            lambda: next_visit_loss(params, table, batch, multihot, TINY),
            params, max_entries_per_param=4)
        assert err < 1e-4

    def test_learned_mode_gradients(self, table):
        params = init_params(TINY, len(table), seed=4, mode="learned")
        batch = self.build_batch(table)
        err = grad_check(
            lambda: mlm_loss(params, table, batch, TINY, mode="learned"),
            params, max_entries_per_param=4)
        assert err < 1e-4

    def test_full_enumeration_on_head_params(self, table):
        params = init_params(TINY, len(table), seed=6)
        rng = np.random.default_rng(1)
        params["cls.w"].value[:] = rng.standard_normal((8, 1))
        params["cls.b"].value[:] = rng.standard_normal(1)
        batch = self.build_batch(table)
        labels = np.array([0.0, 1.0])
        subset = {k: params[k] for k in ("cls.w", "cls.b", "lnf.g", "l1.bo")}
        err = grad_check(lambda: classify_loss(params, table, batch, labels, TINY),
                         subset)
        assert err < 1e-4
