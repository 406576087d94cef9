import numpy as np
import pytest

from bertfit import autodiff as ad
from bertfit.autodiff import Tape, Tensor
from bertfit.model import (ClassifierHead, EncoderConfig, LayerSelection,
                           class_logits, classify, encode_batch, init_model,
                           mlm_logits, nsp_logits, select_features)
from bertfit.rng import Rng


def param_count_closed_form(L, H, A, F, V, P):
    emb = V * H + P * H + 2 * H + 2 * H
    per_block = 4 * (H * H + H) + 2 * H + (H * F + F) + (F * H + H) + 2 * H
    heads = (H * H + H) + 2 * H + V + (H * 2 + 2)
    return emb + L * per_block + heads


class TestInit:
    def test_deterministic(self, toy_config):
        a = init_model(toy_config, Rng(5))
        b = init_model(toy_config, Rng(5))
        for k in a.params:
            assert (a.params[k].data == b.params[k].data).all()

    def test_param_count_matches_arithmetic(self):
        cfg = EncoderConfig(n_layers=2, hidden=32, n_heads=2, ffn=128,
                            vocab_size=100, max_positions=64, dropout=0.0)
        model = init_model(cfg, Rng(0))
        assert model.param_count() == param_count_closed_form(
            2, 32, 2, 128, 100, 64)

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            EncoderConfig(hidden=10, n_heads=3)
        with pytest.raises(ValueError):
            EncoderConfig(n_layers=0)
        with pytest.raises(ValueError):
            EncoderConfig(dropout=1.0)

    def test_zero_dropout_forward_deterministic(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        a = encode_batch(toy_model, ids, segs, mask, mode="train")
        b = encode_batch(toy_model, ids, segs, mask, mode="train")
        assert (a[-1].data == b[-1].data).all()


class TestEncode:
    def test_padding_invariance(self, toy_model):
        ids = np.array([[2, 5, 6, 3, 0, 0]])
        segs = np.zeros_like(ids)
        mask = (ids != 0).astype(int)
        out1 = encode_batch(toy_model, ids, segs, mask)[-1].data
        ids2 = ids.copy()
        ids2[0, 4] = 17   # change a padded position's token id
        out2 = encode_batch(toy_model, ids2, segs, mask)[-1].data
        np.testing.assert_array_equal(out1[0, :4], out2[0, :4])

    def test_eval_deterministic(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        a = encode_batch(toy_model, ids, segs, mask, mode="eval")[-1].data
        b = encode_batch(toy_model, ids, segs, mask, mode="eval")[-1].data
        assert (a == b).all()

    def test_attention_rows_sum_to_one(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        _, attn = encode_batch(toy_model, ids, segs, mask, return_attn=True)
        probs = attn[0].data      # (B, A, S, S)
        sums = probs.sum(axis=-1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-6)
        # no weight on padded keys
        assert probs[0, :, :, 4:].max() < 1e-8

    def test_too_long_rejected(self, toy_model):
        S = toy_model.config.max_positions + 1
        ids = np.zeros((1, S), dtype=int)
        with pytest.raises(ValueError, match="max positions"):
            encode_batch(toy_model, ids, ids, np.ones_like(ids))

    def test_layer_count(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        outs = encode_batch(toy_model, ids, segs, mask)
        assert len(outs) == toy_model.config.n_layers + 1
        assert all(o.shape == (2, 6, 8) for o in outs)


class TestSelectFeatures:
    def _outputs(self, model, batch):
        ids, segs, mask, _ = batch
        return encode_batch(model, ids, segs, mask)

    def test_last4_concat_width(self):
        cfg = EncoderConfig(n_layers=4, hidden=16, n_heads=2, vocab_size=30,
                            max_positions=8, dropout=0.0)
        model = init_model(cfg, Rng(0))
        ids = np.array([[2, 5, 3, 0]])
        outs = encode_batch(model, ids, np.zeros_like(ids),
                            (ids != 0).astype(int))
        sel = LayerSelection(strategy="last4", combiner="concat")
        feats = select_features(outs, sel)
        assert feats.shape == (1, 64)
        assert sel.feature_width(768, 12) == 3072   # paper-scale width

    def test_identical_layers_degenerate(self):
        h = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
        outs = [Tensor(h.copy(), np.float64) for _ in range(5)]
        mean = select_features(outs, LayerSelection("last4", combiner="mean"))
        mx = select_features(outs, LayerSelection("last4", combiner="max"))
        single = select_features(outs, LayerSelection("single", layer=4))
        np.testing.assert_allclose(mean.data, single.data)
        np.testing.assert_allclose(mx.data, single.data)

    def test_max_equals_top_when_dominant(self):
        outs = [Tensor(np.full((1, 2, 4), float(i)), np.float64)
                for i in range(5)]
        mx = select_features(outs, LayerSelection("last4", combiner="max"))
        top = select_features(outs, LayerSelection("single", layer=4))
        np.testing.assert_allclose(mx.data, top.data)

    def test_widths(self, toy_model, toy_batch):
        outs = self._outputs(toy_model, toy_batch)
        H, L = 8, 2
        assert select_features(outs, LayerSelection("single")).shape == (2, H)
        assert select_features(
            outs, LayerSelection("all", combiner="mean")).shape == (2, H)
        assert select_features(
            outs, LayerSelection("all", combiner="concat")).shape == (2, L * H)

    def test_embedding_output_selectable(self, toy_model, toy_batch):
        outs = self._outputs(toy_model, toy_batch)
        feats = select_features(outs, LayerSelection("single", layer=0))
        np.testing.assert_array_equal(feats.data, outs[0].data[:, 0])


class TestClassify:
    def test_zero_weights_uniform(self):
        head = ClassifierHead(W=Tensor(np.zeros((8, 4))),
                              b=Tensor(np.zeros(4)))
        probs = classify(Tensor(np.ones((3, 8))), head)
        np.testing.assert_allclose(probs.data, 0.25)

    def test_identity_closed_form(self):
        head = ClassifierHead(W=Tensor(np.eye(2), np.float64),
                              b=Tensor(np.zeros(2), np.float64))
        probs = classify(Tensor([[1.0, 0.0]], np.float64), head)
        e = np.e
        np.testing.assert_allclose(probs.data, [[e / (e + 1), 1 / (e + 1)]])

    def test_argmax_monotone(self):
        feats = np.array([[0.3, 2.0, -1.0]])
        head = ClassifierHead(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)))
        for s in (0.5, 1.0, 7.0):
            probs = classify(Tensor(feats * s), head)
            assert probs.data.argmax() == 1

    def test_rows_sum_to_one(self):
        rng = Rng(3)
        head = ClassifierHead.init(8, 5, rng)
        probs = classify(Tensor(rng.normal((6, 8)) * 30), head)
        np.testing.assert_allclose(probs.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_width_mismatch_rejected(self):
        head = ClassifierHead.init(8, 3, Rng(0))
        with pytest.raises(ValueError, match="width"):
            classify(Tensor(np.zeros((2, 5))), head)

    def test_zero_classifier_loss_is_log_c(self, toy_model, toy_batch):
        ids, segs, mask, labels = toy_batch
        outs = encode_batch(toy_model, ids, segs, mask)
        feats = select_features(outs, LayerSelection())
        head = ClassifierHead(W=Tensor(np.zeros((8, 4)), np.float64),
                              b=Tensor(np.zeros(4), np.float64))
        loss = ad.cross_entropy(class_logits(feats, head), labels)
        assert loss.item() == pytest.approx(np.log(4.0))


class TestHeads:
    def test_mlm_shape(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        outs = encode_batch(toy_model, ids, segs, mask)
        assert mlm_logits(toy_model, outs).shape == (2, 6, 30)

    def test_nsp_shape(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        outs = encode_batch(toy_model, ids, segs, mask)
        assert nsp_logits(toy_model, outs).shape == (2, 2)

    def test_tied_embedding_perturbation(self, toy_model, toy_batch):
        ids, segs, mask, _ = toy_batch
        outs = encode_batch(toy_model, ids, segs, mask)
        before = mlm_logits(toy_model, outs).data.copy()
        tok = 23
        assert tok not in ids  # perturbed row must not feed the forward pass
        toy_model.params["emb.tok"].data[tok, 0] += 0.5
        outs2 = encode_batch(toy_model, ids, segs, mask)
        after = mlm_logits(toy_model, outs2).data
        assert np.abs(after[..., tok] - before[..., tok]).max() > 1e-4
        np.testing.assert_allclose(
            np.delete(after, tok, axis=-1), np.delete(before, tok, axis=-1),
            atol=1e-12)


class TestGradCheckFullModel:
    def test_classification_loss_grad(self, toy_model, toy_batch):
        ids, segs, mask, labels = toy_batch
        head = ClassifierHead.init(8, 3, Rng(1), dtype=np.float64)
        params = toy_model.parameters() + head.parameters()

        def f():
            with Tape() as tape:
                outs = encode_batch(toy_model, ids, segs, mask)
                feats = select_features(outs, LayerSelection())
                loss = ad.cross_entropy(class_logits(feats, head), labels)
            return loss, tape

        err = ad.grad_check(f, params, h=2e-3, samples=40, order=4)
        assert err < 1e-6
