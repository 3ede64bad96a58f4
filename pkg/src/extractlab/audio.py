"""Waveform type and the DSP primitives everything else consumes.

All functions are pure: randomness comes in through an explicit seed or
numpy Generator, so any of them can be called concurrently.
"""

import json
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import as_rng

CANONICAL_SAMPLE_RATE = 16000
CANONICAL_INPUT_LEN = 16384  # ~1.02 s at 16 kHz, shared by classifier and generator


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono amplitude sequence in [-1, 1] with its sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size == 0:
            raise ValueError("waveform must contain at least one sample")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


def clamp(samples: np.ndarray) -> np.ndarray:
    """Hard-limit amplitudes to [-1, 1]; applied after any amplifying step."""
    return np.clip(samples, -1.0, 1.0).astype(np.float32)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided magnitude spectrum of a real signal."""

    magnitudes: np.ndarray  # non-negative, length floor(n/2)+1
    bin_hz: float

    def __post_init__(self):
        mags = np.asarray(self.magnitudes, dtype=np.float64)
        if np.any(mags < 0):
            raise ValueError("spectrum magnitudes must be non-negative")
        object.__setattr__(self, "magnitudes", mags)

    @property
    def n_bins(self) -> int:
        return self.magnitudes.size

    @property
    def top_hz(self) -> float:
        """Highest represented frequency (the Nyquist bin for even windows)."""
        return self.bin_hz * (self.n_bins - 1)


def random_window_samples(x: np.ndarray, target_len: int, rng) -> np.ndarray:
    """Contiguous slice of `x` at a uniform random offset, zero-padded if short."""
    if target_len < 1:
        raise ValueError("target_len must be >= 1")
    rng = as_rng(rng)
    n = x.size
    if n >= target_len:
        offset = int(rng.integers(0, n - target_len + 1))
        return np.ascontiguousarray(x[offset : offset + target_len])
    out = np.zeros(target_len, dtype=x.dtype)
    out[:n] = x
    return out


def random_window(w: Waveform, target_len: int, rng) -> Waveform:
    return Waveform(random_window_samples(w.samples, target_len, rng), w.sample_rate)


def center_window_samples(x: np.ndarray, target_len: int) -> np.ndarray:
    """Deterministic counterpart of random_window_samples, used for evaluation."""
    n = x.size
    if n >= target_len:
        offset = (n - target_len) // 2
        return np.ascontiguousarray(x[offset : offset + target_len])
    out = np.zeros(target_len, dtype=x.dtype)
    out[:n] = x
    return out


def magnitude_spectrum(w: Waveform, window: str = "none") -> Spectrum:
    """DFT magnitude of the (optionally Hann-windowed) signal.

    With window="none", Parseval holds: time-domain energy equals
    (|X_0|^2 + 2*sum|X_mid|^2 + |X_nyq|^2) / n to within 1e-6 relative.
    """
    n = len(w)
    if n < 2:
        raise ValueError("magnitude_spectrum needs at least 2 samples")
    x = w.samples.astype(np.float64)
    if window == "hann":
        x = x * np.hanning(n)
    elif window != "none":
        raise ValueError(f"unknown window {window!r}")
    mags = np.abs(np.fft.rfft(x))
    return Spectrum(mags, bin_hz=w.sample_rate / n)


def spectrum_energy(s: Spectrum, n_samples: int) -> float:
    """Time-domain energy implied by a one-sided magnitude spectrum."""
    m2 = s.magnitudes**2
    total = m2[0] + 2.0 * m2[1:-1].sum()
    if n_samples % 2 == 0:
        total += m2[-1]
    else:
        total += 2.0 * m2[-1]
    return float(total / n_samples)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    """Triangular filters (peak 1.0) with centers equally spaced on the mel scale."""

    n_filters: int
    f_min: float
    f_max: float
    weights: np.ndarray  # (n_filters, n_bins)
    bin_hz: float

    @classmethod
    def design(cls, n_filters: int, f_min: float, f_max: float, n_bins: int, bin_hz: float) -> "MelFilterbank":
        if n_filters < 1:
            raise ValueError("need at least one filter")
        if not 0 <= f_min < f_max:
            raise ValueError(f"bad band edges f_min={f_min}, f_max={f_max}")
        edges_hz = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2))
        bin_freqs = np.arange(n_bins) * bin_hz
        lo = edges_hz[:-2, None]
        center = edges_hz[1:-1, None]
        hi = edges_hz[2:, None]
        rising = (bin_freqs[None, :] - lo) / np.maximum(center - lo, 1e-12)
        falling = (hi - bin_freqs[None, :]) / np.maximum(hi - center, 1e-12)
        weights = np.maximum(0.0, np.minimum(rising, falling))
        if np.any(weights.sum(axis=1) == 0.0):
            raise ValueError(
                "filterbank has an empty filter; widen the band or reduce n_filters"
            )
        return cls(n_filters, float(f_min), float(f_max), weights, float(bin_hz))


def mel_project(s: Spectrum, fb: MelFilterbank) -> np.ndarray:
    """Per-filter weighted sums of spectrum magnitudes (all non-negative)."""
    if fb.f_max > s.top_hz + 1e-9:
        raise ValueError(
            f"filterbank f_max {fb.f_max} Hz exceeds spectrum top {s.top_hz:.1f} Hz"
        )
    if fb.weights.shape[1] != s.n_bins:
        raise ValueError(
            f"filterbank designed for {fb.weights.shape[1]} bins, spectrum has {s.n_bins}"
        )
    return fb.weights @ s.magnitudes


# ---------------------------------------------------------------------------
# Band-limited resampling: windowed-sinc interpolation with a Kaiser window,
# 16 zero crossings one-sided at the (anti-alias scaled) cutoff. Boundaries
# are reflected so edge samples see plausible data instead of zeros.
# ---------------------------------------------------------------------------

_SINC_ZERO_CROSSINGS = 16
_KAISER_BETA = 8.6


def _sinc_interpolate(x: np.ndarray, out_len: int, ratio: float) -> np.ndarray:
    """Evaluate x at out_len points spaced 1/ratio input samples apart."""
    n = x.size
    cutoff = min(1.0, ratio)
    half = _SINC_ZERO_CROSSINGS / cutoff
    reach = int(np.ceil(half))

    positions = np.arange(out_len, dtype=np.float64) / ratio
    base = np.floor(positions).astype(np.int64)
    taps = np.arange(-reach, reach + 1, dtype=np.int64)
    idx = base[:, None] + taps[None, :]
    t = positions[:, None] - idx

    u = t / half
    inside = np.abs(u) <= 1.0
    window = np.zeros_like(u)
    window[inside] = np.i0(_KAISER_BETA * np.sqrt(1.0 - u[inside] ** 2)) / np.i0(_KAISER_BETA)
    kernel = cutoff * np.sinc(cutoff * t) * window
    # normalize rows so DC passes exactly and the identity ratio is exact
    kernel /= kernel.sum(axis=1, keepdims=True)

    pad = reach + 1
    padded = np.pad(x.astype(np.float64), pad, mode="reflect")
    out = (padded[idx + pad] * kernel).sum(axis=1)
    return out.astype(np.float32)


def resample(w: Waveform, new_rate: int) -> Waveform:
    """Band-limited rate conversion; output length = round(len * new/old)."""
    if new_rate <= 0:
        raise ValueError("new_rate must be positive")
    if new_rate == w.sample_rate:
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = new_rate / w.sample_rate
    out_len = int(round(len(w) * ratio))
    out = _sinc_interpolate(w.samples, max(1, out_len), ratio)
    return Waveform(clamp(out), new_rate)


def stretch_to_length(w: Waveform, new_len: int) -> Waveform:
    """Resample the content onto new_len samples, keeping the declared rate.

    Reinterpreting the result at the original rate scales all frequencies by
    len(w)/new_len, which is exactly what pitch shifting and the octave
    upsampler in the visualizer need.
    """
    if new_len < 1:
        raise ValueError("new_len must be >= 1")
    if new_len == len(w):
        return Waveform(w.samples.copy(), w.sample_rate)
    ratio = new_len / len(w)
    out = _sinc_interpolate(w.samples, new_len, ratio)
    return Waveform(clamp(out), w.sample_rate)


# ---------------------------------------------------------------------------
# File I/O: 16-bit mono PCM WAV and raw float32 with a JSON sidecar.
# ---------------------------------------------------------------------------


class AudioIOError(RuntimeError):
    pass


def write_wav(path, w: Waveform) -> None:
    pcm = np.round(clamp(w.samples) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise AudioIOError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise AudioIOError(f"{path}: expected 16-bit PCM")
            n = fh.getnframes()
            if n == 0:
                raise AudioIOError(f"{path}: empty file")
            raw = fh.readframes(n)
            if len(raw) != 2 * n:
                raise AudioIOError(f"{path}: truncated payload ({len(raw)} of {2 * n} bytes)")
            rate = fh.getframerate()
    except (wave.Error, EOFError, struct.error, OSError) as exc:
        raise AudioIOError(f"{path}: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32767.0
    return Waveform(clamp(samples), rate)


def write_raw(path, w: Waveform) -> None:
    path = Path(path)
    w.samples.astype("<f4").tofile(path)
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps({"sample_rate": w.sample_rate, "length": len(w)})
    )


def read_raw(path) -> Waveform:
    path = Path(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    try:
        meta = json.loads(sidecar.read_text())
        samples = np.fromfile(path, dtype="<f4")
    except (OSError, json.JSONDecodeError) as exc:
        raise AudioIOError(f"{path}: {exc}") from exc
    return Waveform(samples, int(meta["sample_rate"]))
