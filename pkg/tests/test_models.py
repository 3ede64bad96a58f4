import numpy as np
import pytest
import torch
import torch.nn.functional as F

from extractlab.corpus import synth_corpus
from extractlab.models import (
    KnaggCNN,
    KnaggCNNConfig,
    LabeledExamples,
    LayerMask,
    TrainConfig,
    build_classifier,
    evaluate_accuracy,
    load_classifier,
    predict_soft,
    save_checkpoint,
    soft_cross_entropy,
    train_classifier,
    transfer_layers,
)

TINY = KnaggCNNConfig(n_classes=4, input_len=1024, width_scale=0.0625, embedding_dim=32)


def params_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return all(torch.equal(sa[k], sb[k]) for k in sa)


class TestBuild:
    def test_same_seed_identical_parameters(self):
        assert params_equal(build_classifier(TINY, 3), build_classifier(TINY, 3))

    def test_different_seed_differs(self):
        assert not params_equal(build_classifier(TINY, 3), build_classifier(TINY, 4))

    def test_zero_input_finite_logits(self):
        m = build_classifier(TINY, 0)
        out = m(torch.zeros(2, 1024))
        assert out.shape == (2, 4)
        assert torch.isfinite(out).all()

    def test_wrong_length_rejected(self):
        m = build_classifier(TINY, 0)
        with pytest.raises(ValueError):
            m(torch.zeros(1, 999))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            KnaggCNNConfig(n_classes=1)
        with pytest.raises(ValueError):
            KnaggCNNConfig(n_classes=4, conv_channels=(128, 64, 32, 16))
        with pytest.raises(ValueError):
            KnaggCNNConfig(n_classes=4, conv_channels=(128, 256, 384))

    def test_softmax_sums_to_one(self):
        m = build_classifier(TINY, 1)
        X = np.random.default_rng(0).uniform(-1, 1, (16, 1024)).astype(np.float32)
        probs = predict_soft(m, X)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-5)


class TestGradients:
    def test_classifier_gradient_matches_finite_differences(self):
        torch.manual_seed(0)
        model = build_classifier(TINY, 5).double()
        model.eval()  # batch norm uses running stats, so the loss is pure
        x = torch.from_numpy(
            np.random.default_rng(1).uniform(-1, 1, (3, 1024))
        ).double()
        y = torch.tensor([0, 2, 1])

        def loss_fn():
            return F.cross_entropy(model(x), y)

        loss = loss_fn()
        loss.backward()
        rng = np.random.default_rng(2)
        params = [p for p in model.parameters() if p.grad is not None]
        checked = 0
        while checked < 20:
            p = params[int(rng.integers(len(params)))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = float(p.grad[idx])
            eps = 1e-5
            with torch.no_grad():
                orig = float(p[idx])
                p[idx] = orig + eps
                up = float(loss_fn())
                p[idx] = orig - eps
                down = float(loss_fn())
                p[idx] = orig
            numeric = (up - down) / (2 * eps)
            denom = max(abs(analytic), abs(numeric), 1e-8)
            assert abs(analytic - numeric) / denom <= 1e-3, (analytic, numeric)
            checked += 1


class TestTraining:
    def test_single_speaker_trivial_task(self):
        corpus = synth_corpus(2, 10, duration_s=0.1, seed=0)
        keep = corpus.speaker_ids == 0
        data = LabeledExamples(
            clips=[w.samples for w, k in zip(corpus.examples, keep) if k],
            n_classes=2,
            hard=np.zeros(int(keep.sum()), dtype=np.int64),
        )
        model = build_classifier(KnaggCNNConfig(n_classes=2, input_len=1024, width_scale=0.0625), 0)
        result = train_classifier(model, data, TrainConfig(epochs=12, batch_size=8, seed=0))
        X = np.stack([c[:1024] for c in data.clips]).astype(np.float32)
        preds = np.argmax(predict_soft(model, X), axis=1)
        assert (preds == 0).all()
        assert result.epoch_losses[-1] < 0.1
        assert result.epoch_losses[-1] < result.epoch_losses[0] / 5

    def test_loss_decreases_over_five_epoch_windows(self):
        corpus = synth_corpus(4, 12, duration_s=0.15, seed=3)
        ok = 0
        for seed in (0, 1, 2):
            model = build_classifier(KnaggCNNConfig(n_classes=4, input_len=1024, width_scale=0.0625), seed)
            result = train_classifier(
                model, LabeledExamples.from_corpus(corpus, "train"),
                TrainConfig(epochs=9, batch_size=8, seed=seed),
            )
            losses = result.epoch_losses
            if all(losses[i + 4] <= losses[i] for i in range(len(losses) - 4)):
                ok += 1
        assert ok >= 2

    def test_deterministic_given_seed(self):
        corpus = synth_corpus(3, 6, duration_s=0.1, seed=1)
        data = LabeledExamples.from_corpus(corpus, "train")
        cfg = KnaggCNNConfig(n_classes=3, input_len=1024, width_scale=0.0625)
        m1 = build_classifier(cfg, 9)
        m2 = build_classifier(cfg, 9)
        tc = TrainConfig(epochs=2, batch_size=4, seed=5)
        r1 = train_classifier(m1, data, tc)
        r2 = train_classifier(m2, data, tc)
        assert r1.epoch_losses == r2.epoch_losses
        assert params_equal(m1, m2)

    def test_soft_labels_must_sum_to_one(self):
        with pytest.raises(ValueError):
            LabeledExamples(
                clips=[np.zeros(16, dtype=np.float32)],
                n_classes=2,
                soft=np.array([[0.9, 0.2]], dtype=np.float32),
            )

    def test_soft_ce_equals_hard_ce_on_one_hot(self):
        torch.manual_seed(0)
        logits = torch.randn(8, 5, dtype=torch.float64)
        y = torch.randint(0, 5, (8,))
        one_hot = F.one_hot(y, 5).double()
        assert abs(float(soft_cross_entropy(logits, one_hot)) - float(F.cross_entropy(logits, y))) < 1e-9


class TestTransfer:
    def test_k_zero_student_unchanged(self):
        student = build_classifier(TINY, 1)
        donor = build_classifier(TINY, 2)
        before = {k: v.clone() for k, v in student.state_dict().items()}
        transfer_layers(student, donor, LayerMask(0))
        after = student.state_dict()
        assert all(torch.equal(before[k], after[k]) for k in before)

    def test_k_total_equals_donor(self):
        student = build_classifier(TINY, 1)
        donor = build_classifier(TINY, 2)
        transfer_layers(student, donor, LayerMask(KnaggCNN.N_LAYERS))
        assert params_equal(student, donor)

    def test_k_one_matches_first_layer_activations(self):
        student = build_classifier(TINY, 1)
        donor = build_classifier(TINY, 2)
        transfer_layers(student, donor, LayerMask(1))
        x = torch.from_numpy(np.random.default_rng(0).uniform(-1, 1, (2, 1024)).astype(np.float32))
        student.eval(), donor.eval()
        with torch.no_grad():
            a = student.conv_activations(x, 0)
            b = donor.conv_activations(x, 0)
        assert torch.allclose(a, b, atol=1e-6)
        # beyond the first block they must diverge
        with torch.no_grad():
            assert not torch.allclose(student.conv_activations(x, 1), donor.conv_activations(x, 1))

    def test_idempotent(self):
        student = build_classifier(TINY, 1)
        donor = build_classifier(TINY, 2)
        transfer_layers(student, donor, LayerMask(3))
        snap = {k: v.clone() for k, v in student.state_dict().items()}
        transfer_layers(student, donor, LayerMask(3))
        assert all(torch.equal(snap[k], v) for k, v in student.state_dict().items())

    def test_freeze_stops_gradients(self):
        student = build_classifier(TINY, 1)
        donor = build_classifier(TINY, 2)
        transfer_layers(student, donor, LayerMask(2, freeze=True))
        assert not student.conv1.weight.requires_grad
        assert not student.conv2.weight.requires_grad
        assert student.conv3.weight.requires_grad

    def test_architecture_mismatch_fatal(self):
        student = build_classifier(TINY, 1)
        other = build_classifier(KnaggCNNConfig(n_classes=4, input_len=1024, width_scale=0.125), 2)
        with pytest.raises(ValueError):
            transfer_layers(student, other, LayerMask(1))

    def test_mask_bounds(self):
        with pytest.raises(ValueError):
            LayerMask(7)
        with pytest.raises(ValueError):
            LayerMask(-1)


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        model = build_classifier(TINY, 3)
        path = tmp_path / "model.pt"
        save_checkpoint(path, model, TINY.to_dict(), seed=3, step=17)
        back, meta = load_classifier(path)
        assert params_equal(model, back)
        assert meta["seed"] == 3
        assert meta["step"] == 17
        assert back.cfg == TINY

    def test_wrong_kind_rejected(self, tmp_path):
        model = build_classifier(TINY, 3)
        path = tmp_path / "model.pt"
        save_checkpoint(path, model, TINY.to_dict(), seed=3, kind="other")
        with pytest.raises(ValueError):
            load_classifier(path)


class TestEvaluate:
    def test_accuracy_bounds(self):
        corpus = synth_corpus(3, 6, duration_s=0.1, seed=1)
        model = build_classifier(KnaggCNNConfig(n_classes=3, input_len=1024, width_scale=0.0625), 0)
        acc = evaluate_accuracy(model, corpus, "test")
        assert 0.0 <= acc <= 1.0
