"""Filter-level interpretability: gradient-ascent visualization with octaves,
sine-sweep response curves, and cross-model filter matching in a small
mel feature space.

A filter's "activation" here is the mean of its post-ReLU map, which is what
the sine sweep needs (the pre-nonlinearity mean of a filtered sinusoid is
just its DC component and carries no gain information).
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
import torch

from .audio import (
    MelFilterbank,
    Waveform,
    center_window_samples,
    magnitude_spectrum,
    mel_project,
    stretch_to_length,
    write_wav,
)
from .models import KnaggCNN
from .rng import as_rng, derive_seed


@dataclass(frozen=True)
class OctaveSchedule:
    steps_per_octave: int = 100
    n_octaves: int = 5
    ratio: float = 1.8
    start_scale: float = 1.8**-2
    step_size: float = 1.0  # Adam step on the RMS-normalized gradient

    def __post_init__(self):
        if self.n_octaves < 1 or self.steps_per_octave < 1:
            raise ValueError("need at least one octave and one step")
        if self.ratio <= 1.0:
            raise ValueError("ratio must exceed 1")
        if not 0.0 < self.start_scale <= 1.0:
            raise ValueError("start_scale must be in (0, 1]")


def octave_lengths(input_len: int, sched: OctaveSchedule = OctaveSchedule()) -> list:
    """Strictly increasing signal lengths, one per octave.

    Lengths grow by successive rounded multiplication with `ratio`, anchored
    so that the octave at the model's native scale is exactly input_len
    (successive rounding alone would drift off it by a sample).
    """
    n_below = int(round(-math.log(sched.start_scale) / math.log(sched.ratio)))
    n_below = min(n_below, sched.n_octaves - 1)
    lengths = [0] * sched.n_octaves
    lengths[min(n_below, sched.n_octaves - 1)] = input_len
    cur = int(round(input_len * sched.ratio**-n_below))
    for i in range(n_below):
        lengths[i] = cur
        cur = int(round(cur * sched.ratio))
    cur = input_len
    for i in range(n_below + 1, sched.n_octaves):
        cur = int(round(cur * sched.ratio))
        lengths[i] = cur
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise ValueError(f"octave lengths not strictly increasing: {lengths}")
    return lengths


def _filter_mean_activation(model: KnaggCNN, x: torch.Tensor, layer_idx: int, filter_idx: int) -> torch.Tensor:
    act = model.conv_activations(x.unsqueeze(0), layer_idx)
    if not 0 <= filter_idx < act.shape[1]:
        raise IndexError(f"filter {filter_idx} out of range for layer {layer_idx}")
    return act[0, filter_idx].mean()


def _ascend_octave(model, x: np.ndarray, layer_idx: int, filter_idx: int, sched: OctaveSchedule) -> np.ndarray:
    """One octave of Adam ascent on the RMS-normalized input gradient."""
    m = np.zeros_like(x, dtype=np.float64)
    v = np.zeros_like(x, dtype=np.float64)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(1, sched.steps_per_octave + 1):
        t = torch.from_numpy(x).requires_grad_(True)
        act = _filter_mean_activation(model, t, layer_idx, filter_idx)
        (grad,) = torch.autograd.grad(act, t)
        g = grad.numpy().astype(np.float64)
        rms = np.sqrt(np.mean(g**2))
        if rms == 0.0:
            break
        g /= rms
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g**2
        m_hat = m / (1 - b1**step)
        v_hat = v / (1 - b2**step)
        x = x + sched.step_size * (m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
        x = np.clip(x, -1.0, 1.0).astype(np.float32)
    return x


def visualize_filter(
    model: KnaggCNN,
    layer_idx: int,
    filter_idx: int,
    sched: OctaveSchedule = OctaveSchedule(),
    seed: int = 0,
) -> tuple[Waveform, dict]:
    """Gradient-ascent audio that maximizes one conv filter's mean activation.

    Starts from a uniform random signal at the smallest octave, clamps to
    [-1, 1] after every step, and upsamples by the octave ratio between
    rounds. Returns the final waveform plus bookkeeping (initial and final
    activation, degenerate flag for filters with no input gradient).
    """
    model.eval()
    lengths = octave_lengths(model.cfg.input_len, sched)
    rate = 16000

    def init_signal(s):
        return as_rng(s).uniform(-1.0, 1.0, size=lengths[0]).astype(np.float32)

    x = init_signal(seed)
    with torch.no_grad():
        initial = float(_filter_mean_activation(model, torch.from_numpy(x), layer_idx, filter_idx))
    t = torch.from_numpy(x).requires_grad_(True)
    (grad,) = torch.autograd.grad(_filter_mean_activation(model, t, layer_idx, filter_idx), t)
    degenerate = False
    if float(grad.abs().max()) == 0.0:
        x = init_signal(derive_seed(seed, "reseed"))
        t = torch.from_numpy(x).requires_grad_(True)
        (grad,) = torch.autograd.grad(_filter_mean_activation(model, t, layer_idx, filter_idx), t)
        if float(grad.abs().max()) == 0.0:
            degenerate = True

    if not degenerate:
        for octave, length in enumerate(lengths):
            if octave > 0:
                x = stretch_to_length(Waveform(x, rate), length).samples
            x = _ascend_octave(model, x, layer_idx, filter_idx, sched)
    else:
        x = np.zeros(lengths[-1], dtype=np.float32)

    with torch.no_grad():
        final = float(_filter_mean_activation(model, torch.from_numpy(x), layer_idx, filter_idx))
    info = {"initial_activation": initial, "final_activation": final, "degenerate": degenerate}
    return Waveform(x, rate), info


def sine_response(model: KnaggCNN, layer_idx: int, filter_idx: int, freq_grid) -> list:
    """Mean activation of one filter for unit-amplitude sine inputs."""
    model.eval()
    n = model.cfg.input_len
    rate = 16000
    t = np.arange(n, dtype=np.float64) / rate
    out = []
    for f in freq_grid:
        if f >= rate / 2:
            raise ValueError(f"frequency {f} Hz is at or above Nyquist")
        x = np.sin(2.0 * np.pi * f * t).astype(np.float32)
        with torch.no_grad():
            act = float(_filter_mean_activation(model, torch.from_numpy(x), layer_idx, filter_idx))
        out.append((float(f), act))
    return out


# ---------------------------------------------------------------------------
# Matching filters across two models of the same architecture
# ---------------------------------------------------------------------------


@dataclass
class FilterMatch:
    pairs: list            # (idx_a, idx_b, cosine_distance) over retained filters
    excluded_a: list
    excluded_b: list
    distance_matrix: np.ndarray  # full (n_a, n_b) cosine distances


def default_matching_filterbank(sample_rate: int = 16000, window_len: int = 16384, n_filters: int = 10) -> MelFilterbank:
    return MelFilterbank.design(
        n_filters, 0.0, sample_rate / 2, n_bins=window_len // 2 + 1, bin_hz=sample_rate / window_len
    )


def filter_features(
    model: KnaggCNN,
    layer_idx: int,
    fb: MelFilterbank,
    sched: OctaveSchedule = OctaveSchedule(),
    seed: int = 0,
    low_freq_cutoff: float = 100.0,
    low_energy_frac: float = 0.8,
) -> tuple[np.ndarray, list, list]:
    """Mel feature per filter from its visualization; flags low-frequency ones.

    The visualization seed depends only on (layer, filter index), so two
    models visualized with the same base seed see identical starting noise,
    which keeps matching symmetric and self-matching exact.
    """
    window_len = 2 * (fb.weights.shape[1] - 1)
    n_filters = model.cfg.effective_channels()[layer_idx]
    features = np.zeros((n_filters, fb.n_filters))
    excluded, waveforms = [], []
    for i in range(n_filters):
        vis, info = visualize_filter(
            model, layer_idx, i, sched, seed=derive_seed(seed, f"vis/{layer_idx}/{i}")
        )
        waveforms.append(vis)
        spec = magnitude_spectrum(
            Waveform(center_window_samples(vis.samples, window_len), vis.sample_rate), window="hann"
        )
        energy = spec.magnitudes**2
        total = energy.sum()
        low = energy[np.arange(spec.n_bins) * spec.bin_hz < low_freq_cutoff].sum()
        if info["degenerate"] or total == 0.0 or low / total > low_energy_frac:
            excluded.append(i)
        features[i] = mel_project(spec, fb)
    return features, excluded, waveforms


def _cosine_distance_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(A, axis=1, keepdims=True)
    nb = np.linalg.norm(B, axis=1, keepdims=True)
    na[na == 0] = 1.0
    nb[nb == 0] = 1.0
    return 1.0 - (A / na) @ (B / nb).T


def match_filters(
    model_a: KnaggCNN,
    model_b: KnaggCNN,
    layer_idx: int,
    fb: MelFilterbank | None = None,
    low_freq_cutoff: float = 100.0,
    sched: OctaveSchedule = OctaveSchedule(),
    seed: int = 0,
    low_energy_frac: float = 0.8,
) -> FilterMatch:
    """Match each retained filter of model_a to its nearest (cosine distance
    over mel features of the visualizations) filter in model_b."""
    if model_a.cfg.effective_channels()[layer_idx] != model_b.cfg.effective_channels()[layer_idx]:
        raise ValueError("layer widths differ between the two models")
    if fb is None:
        fb = default_matching_filterbank(window_len=model_a.cfg.input_len)
    feats_a, excl_a, _ = filter_features(model_a, layer_idx, fb, sched, seed, low_freq_cutoff, low_energy_frac)
    feats_b, excl_b, _ = filter_features(model_b, layer_idx, fb, sched, seed, low_freq_cutoff, low_energy_frac)
    dist = _cosine_distance_matrix(feats_a, feats_b)
    keep_a = [i for i in range(feats_a.shape[0]) if i not in set(excl_a)]
    keep_b = [j for j in range(feats_b.shape[0]) if j not in set(excl_b)]
    if not keep_a or not keep_b:
        raise ValueError("all filters excluded by the low-frequency screen")
    pairs = []
    for i in keep_a:
        row = dist[i, keep_b]
        j = keep_b[int(np.argmin(row))]
        pairs.append((i, j, float(dist[i, j])))
    return FilterMatch(pairs=pairs, excluded_a=excl_a, excluded_b=excl_b, distance_matrix=dist)


def mean_matched_distance(match: FilterMatch) -> float:
    return float(np.mean([d for _, _, d in match.pairs]))


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def export_match_csv(match: FilterMatch, path) -> None:
    excluded_a = set(match.excluded_a)
    matched = {i: (j, d) for i, j, d in match.pairs}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["idx_a", "idx_b", "distance", "excluded"])
        for i in range(match.distance_matrix.shape[0]):
            if i in excluded_a:
                writer.writerow([i, "", "", 1])
            else:
                j, d = matched[i]
                writer.writerow([i, j, f"{d:.6f}", 0])


def export_sine_response_csv(curve: list, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["freq_hz", "mean_activation"])
        writer.writerows([(f"{f:.2f}", f"{a:.6f}") for f, a in curve])


def export_filter_wavs(model: KnaggCNN, layer_idx: int, out_dir, sched: OctaveSchedule = OctaveSchedule(), seed: int = 0) -> list:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    n_filters = model.cfg.effective_channels()[layer_idx]
    for i in range(n_filters):
        vis, _ = visualize_filter(model, layer_idx, i, sched, seed=derive_seed(seed, f"vis/{layer_idx}/{i}"))
        p = out / f"layer{layer_idx}_filter{i:03d}.wav"
        write_wav(p, vis)
        paths.append(p)
    return paths
