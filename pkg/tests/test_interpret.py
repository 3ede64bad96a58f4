import numpy as np
import pytest
import torch

from extractlab.corpus import synth_corpus
from extractlab.interpret import (
    FilterMatch,
    OctaveSchedule,
    default_matching_filterbank,
    export_match_csv,
    export_sine_response_csv,
    match_filters,
    mean_matched_distance,
    octave_lengths,
    sine_response,
    visualize_filter,
)
from extractlab.models import KnaggCNNConfig, LabeledExamples, TrainConfig, build_classifier, train_classifier

FAST_SCHED = OctaveSchedule(steps_per_octave=8, n_octaves=3, ratio=1.8, start_scale=1.8**-1)
CFG = KnaggCNNConfig(n_classes=4, input_len=1024, width_scale=0.0625, embedding_dim=32)


@pytest.fixture(scope="module")
def tiny_trained():
    corpus = synth_corpus(4, 10, duration_s=0.12, seed=31)
    model = build_classifier(CFG, 2)
    train_classifier(model, LabeledExamples.from_corpus(corpus, "train"), TrainConfig(epochs=5, batch_size=8, seed=2))
    return model


class TestOctaveSchedule:
    def test_canonical_lengths_frozen(self):
        assert octave_lengths(16384, OctaveSchedule()) == [5057, 9103, 16384, 29491, 53084]

    def test_strictly_increasing_and_anchored(self):
        for input_len in (1024, 4096, 16000):
            lengths = octave_lengths(input_len, OctaveSchedule())
            assert lengths[2] == input_len
            assert all(b > a for a, b in zip(lengths, lengths[1:]))

    def test_final_length_is_ratio_squared(self):
        sched = OctaveSchedule()
        for input_len in (4096, 16384):
            lengths = octave_lengths(input_len, sched)
            assert lengths[-1] == int(round(lengths[-2] * sched.ratio))

    def test_validation(self):
        with pytest.raises(ValueError):
            OctaveSchedule(n_octaves=0)
        with pytest.raises(ValueError):
            OctaveSchedule(ratio=0.9)


class TestVisualize:
    def test_clamped_and_expected_length(self, tiny_trained):
        wave, info = visualize_filter(tiny_trained, 0, 0, FAST_SCHED, seed=0)
        assert np.abs(wave.samples).max() <= 1.0
        assert len(wave) == octave_lengths(1024, FAST_SCHED)[-1]
        assert not info["degenerate"]

    def test_objective_increases(self, tiny_trained):
        wave, info = visualize_filter(tiny_trained, 0, 1, FAST_SCHED, seed=3)
        assert info["final_activation"] >= info["initial_activation"]

    def test_deterministic_given_seed(self, tiny_trained):
        w1, _ = visualize_filter(tiny_trained, 1, 0, FAST_SCHED, seed=7)
        w2, _ = visualize_filter(tiny_trained, 1, 0, FAST_SCHED, seed=7)
        assert np.array_equal(w1.samples, w2.samples)

    def test_bad_indices_rejected(self, tiny_trained):
        with pytest.raises(IndexError):
            visualize_filter(tiny_trained, 9, 0, FAST_SCHED, seed=0)
        with pytest.raises(IndexError):
            visualize_filter(tiny_trained, 0, 999, FAST_SCHED, seed=0)


class TestSineResponse:
    def test_single_frequency_grid(self, tiny_trained):
        curve = sine_response(tiny_trained, 0, 0, [440.0])
        assert len(curve) == 1
        assert curve[0][0] == 440.0

    def test_above_nyquist_rejected(self, tiny_trained):
        with pytest.raises(ValueError):
            sine_response(tiny_trained, 0, 0, [9000.0])

    def test_activation_varies_with_frequency(self, tiny_trained):
        curve = sine_response(tiny_trained, 0, 0, np.linspace(100, 3000, 12))
        acts = [a for _, a in curve]
        assert max(acts) > min(acts)

    def test_export_csv(self, tiny_trained, tmp_path):
        curve = sine_response(tiny_trained, 0, 0, [100.0, 200.0])
        path = tmp_path / "curve.csv"
        export_sine_response_csv(curve, path)
        assert path.read_text().startswith("freq_hz,mean_activation")


class TestMatching:
    def test_self_match_is_identity_with_zero_distance(self, tiny_trained):
        fb = default_matching_filterbank(window_len=1024)
        match = match_filters(tiny_trained, tiny_trained, 0, fb, sched=FAST_SCHED, seed=11)
        for i, j, d in match.pairs:
            assert i == j
            assert d <= 1e-6

    def test_distance_matrix_symmetric_under_swap(self, tiny_trained):
        other = build_classifier(CFG, 8)
        fb = default_matching_filterbank(window_len=1024)
        ab = match_filters(tiny_trained, other, 0, fb, sched=FAST_SCHED, seed=4)
        ba = match_filters(other, tiny_trained, 0, fb, sched=FAST_SCHED, seed=4)
        assert np.allclose(ab.distance_matrix, ba.distance_matrix.T, atol=1e-9)

    def test_distances_in_range(self, tiny_trained):
        other = build_classifier(CFG, 8)
        match = match_filters(tiny_trained, other, 0, sched=FAST_SCHED, seed=4)
        for _, _, d in match.pairs:
            assert 0.0 <= d <= 2.0

    def test_layer_width_mismatch_rejected(self, tiny_trained):
        other = build_classifier(KnaggCNNConfig(n_classes=4, input_len=1024, width_scale=0.125), 0)
        with pytest.raises(ValueError):
            match_filters(tiny_trained, other, 0, sched=FAST_SCHED)

    def test_export_csv(self, tiny_trained, tmp_path):
        match = match_filters(tiny_trained, tiny_trained, 0, sched=FAST_SCHED, seed=2)
        path = tmp_path / "match.csv"
        export_match_csv(match, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "idx_a,idx_b,distance,excluded"
        assert len(lines) == 1 + match.distance_matrix.shape[0]

    def test_permutation_recovery_first_layer(self, tiny_trained):
        import copy

        permuted = copy.deepcopy(tiny_trained)
        n = CFG.effective_channels()[0]
        rng = np.random.default_rng(5)
        perm = rng.permutation(n)
        with torch.no_grad():
            permuted.conv1.weight.copy_(tiny_trained.conv1.weight[perm])
            permuted.conv1.bias.copy_(tiny_trained.conv1.bias[perm])
            permuted.bn1.weight.copy_(tiny_trained.bn1.weight[perm])
            permuted.bn1.bias.copy_(tiny_trained.bn1.bias[perm])
            permuted.bn1.running_mean.copy_(tiny_trained.bn1.running_mean[perm])
            permuted.bn1.running_var.copy_(tiny_trained.bn1.running_var[perm])
        match = match_filters(tiny_trained, permuted, 0, sched=FAST_SCHED, seed=6)
        # filter i of the original lives at position perm^-1(i) in the permuted model
        inverse = np.argsort(perm)
        recovered = sum(1 for i, j, _ in match.pairs if j == inverse[i])
        assert recovered / len(match.pairs) >= 0.9


class TestDegenerateFilter:
    def test_zeroed_filter_reports_degenerate(self, tiny_trained):
        import copy

        broken = copy.deepcopy(tiny_trained)
        with torch.no_grad():
            broken.conv1.weight[0].zero_()
            broken.conv1.bias[0] = -5.0  # stays negative through BN, ReLU kills it
            broken.bn1.weight[0] = 1.0
            broken.bn1.bias[0] = -5.0
            broken.bn1.running_mean[0] = 0.0
            broken.bn1.running_var[0] = 1.0
        _, info = visualize_filter(broken, 0, 0, FAST_SCHED, seed=0)
        assert info["degenerate"]
