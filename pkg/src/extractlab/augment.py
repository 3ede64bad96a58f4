"""Attacker-side query construction: amplify, pitch shift, mixup, noise.

Pitch shifting is a phase-vocoder time stretch followed by sinc resampling
back to the original length, so duration is preserved exactly.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .audio import Waveform, clamp, stretch_to_length
from .rng import as_rng

AUGMENT_KINDS = ("amplify", "pitch_shift", "interpolate", "gaussian_noise")


@dataclass(frozen=True)
class AugmentSpec:
    """Serializable recipe for one augmentation baseline."""

    kind: str
    p: float = 1.0       # per-example application probability
    a: float = 0.0       # amplification half-range, amplify only
    sigma: float = 1.0   # semitone std-dev, pitch_shift only
    std: float = 0.1     # noise amplitude, gaussian_noise only
    seed: int = 0

    def __post_init__(self):
        if self.kind not in AUGMENT_KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        if not 0.0 <= self.a <= 1.0:
            raise ValueError("a must be in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentSpec":
        return cls(**d)


def random_amplify(w: Waveform, a: float, p: float, rng) -> Waveform:
    """With probability p, scale every sample by b ~ U([1-a, 1+a]), then clamp."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must be in [0, 1]")
    rng = as_rng(rng)
    if rng.random() >= p:
        return Waveform(w.samples.copy(), w.sample_rate)
    b = rng.uniform(1.0 - a, 1.0 + a)
    return Waveform(clamp(w.samples * np.float32(b)), w.sample_rate)


def interpolate(w1: Waveform, w2: Waveform, lam: float, rng=None) -> Waveform:
    """lam * w1 + (1 - lam) * w2, clamped. Inputs must already be aligned."""
    if len(w1) != len(w2) or w1.sample_rate != w2.sample_rate:
        raise ValueError("interpolate needs equal lengths and sample rates")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    mixed = np.float32(lam) * w1.samples + np.float32(1.0 - lam) * w2.samples
    return Waveform(clamp(mixed), w1.sample_rate)


def gaussian_noise_query(length: int, std: float, rng) -> Waveform:
    """i.i.d. N(0, std^2) samples clamped to [-1, 1], at the canonical rate."""
    if std <= 0:
        raise ValueError("std must be positive")
    rng = as_rng(rng)
    return Waveform(clamp(rng.normal(0.0, std, size=length).astype(np.float32)), 16000)


# ---------------------------------------------------------------------------
# Phase vocoder
# ---------------------------------------------------------------------------


def _pick_n_fft(n: int) -> int:
    n_fft = 2048
    while n_fft > max(64, n // 2):
        n_fft //= 2
    return max(64, n_fft)


def _stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    window = np.hanning(n_fft + 1)[:-1]
    pad = n_fft // 2
    xp = np.pad(x.astype(np.float64), pad, mode="reflect")
    n_frames = 1 + (xp.size - n_fft) // hop
    starts = np.arange(n_frames) * hop
    frames = xp[starts[:, None] + np.arange(n_fft)[None, :]] * window
    return np.fft.rfft(frames, axis=1).T  # (n_bins, n_frames)


def _istft(S: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    window = np.hanning(n_fft + 1)[:-1]
    n_frames = S.shape[1]
    out_len = n_fft + hop * (n_frames - 1)
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    frames = np.fft.irfft(S.T, n=n_fft, axis=1)
    for t in range(n_frames):
        sl = slice(t * hop, t * hop + n_fft)
        out[sl] += frames[t] * window
        norm[sl] += window**2
    out /= np.maximum(norm, 1e-8)
    pad = n_fft // 2
    out = out[pad : pad + length]
    if out.size < length:
        out = np.pad(out, (0, length - out.size))
    return out


def time_stretch(w: Waveform, rate: float) -> Waveform:
    """Phase-vocoder stretch: output duration = len(w) / rate, pitch unchanged."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    if abs(rate - 1.0) < 1e-12:
        return Waveform(w.samples.copy(), w.sample_rate)
    n_fft = _pick_n_fft(len(w))
    hop = n_fft // 4
    S = _stft(w.samples, n_fft, hop)
    n_bins, n_frames = S.shape

    steps = np.arange(0.0, n_frames, rate)
    expected = 2.0 * np.pi * hop * np.arange(n_bins) / n_fft
    mags = np.abs(S)
    phases = np.angle(S)

    out = np.empty((n_bins, steps.size), dtype=np.complex128)
    acc = phases[:, 0].copy()
    for j, t in enumerate(steps):
        t0 = int(np.floor(t))
        t1 = min(t0 + 1, n_frames - 1)
        frac = t - t0
        mag = (1.0 - frac) * mags[:, t0] + frac * mags[:, t1]
        out[:, j] = mag * np.exp(1j * acc)
        dphi = phases[:, t1] - phases[:, t0] - expected
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        acc += expected + dphi

    target_len = int(round(len(w) / rate))
    y = _istft(out, n_fft, hop, target_len)
    return Waveform(clamp(y.astype(np.float32)), w.sample_rate)


def pitch_shift(w: Waveform, semitones: float, p: float = 1.0, rng=None, cap: float = 12.0) -> Waveform:
    """Shift pitch by 2^(s/12) with duration preserved.

    Time-stretches at rate 2^(-s/12) and then resamples the result back onto
    the original sample count, which scales all frequencies by 2^(s/12).
    """
    if abs(semitones) > cap:
        raise ValueError(f"|semitones| must be <= {cap}")
    rng = as_rng(rng if rng is not None else 0)
    if semitones == 0.0 or rng.random() >= p:
        return Waveform(w.samples.copy(), w.sample_rate)
    rate = 2.0 ** (-semitones / 12.0)
    stretched = time_stretch(w, rate)
    return stretch_to_length(stretched, len(w))
