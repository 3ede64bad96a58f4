"""Dataset ingestion, splits, label statistics, and the synthetic toy corpus.

The toy corpus stands in for a real multi-speaker dataset at desk scale:
each speaker is a harmonic stack with a fixed fundamental, a fixed harmonic
envelope, vibrato, and a noise floor, so the discriminative feature is the
speaker's frequency contour.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, clamp, read_wav, write_wav, AudioIOError
from .rng import as_rng

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_SPLIT_RATIOS = (0.6, 0.2, 0.2)

_F0_RANGE = (80.0, 400.0)
_MIN_F0_SEPARATION_HZ = 3.0
_MAX_HARMONICS = 8


@dataclass(frozen=True)
class LabelHistogram:
    """Per-class example counts c_1..c_N."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if np.any(c < 0):
            raise ValueError("histogram counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_labels(cls, labels, n_classes: int) -> "LabelHistogram":
        return cls(np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes))

    @property
    def n_classes(self) -> int:
        return self.counts.size

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ToySpeakerProfile:
    fundamental_hz: float
    harmonic_amplitudes: tuple  # <= 8 non-negative values summing to <= 1
    vibrato_rate_hz: float
    vibrato_depth: float
    noise_floor: float


@dataclass(eq=False)
class SpeakerCorpus:
    """Immutable-by-convention set of (waveform, speaker id) with split tags."""

    examples: list  # list[Waveform]
    speaker_ids: np.ndarray  # int64, values in [0, n_speakers)
    splits: np.ndarray  # array of 'train' | 'val' | 'test'
    n_speakers: int
    source_ids: dict = field(default_factory=dict)  # contiguous id -> original name
    profiles: list | None = None

    def __post_init__(self):
        self.speaker_ids = np.asarray(self.speaker_ids, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        if not (len(self.examples) == self.speaker_ids.size == self.splits.size):
            raise ValueError("examples, speaker_ids and splits must align")
        if self.speaker_ids.size and self.speaker_ids.max() >= self.n_speakers:
            raise ValueError("speaker id out of range")

    def __len__(self) -> int:
        return len(self.examples)

    def indices(self, split: str | None = None) -> np.ndarray:
        if split is None:
            return np.arange(len(self.examples))
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == split)

    def restrict(self, split: str) -> "SpeakerCorpus":
        """New corpus containing only one split (same label space)."""
        idx = self.indices(split)
        return SpeakerCorpus(
            examples=[self.examples[i] for i in idx],
            speaker_ids=self.speaker_ids[idx],
            splits=self.splits[idx],
            n_speakers=self.n_speakers,
            source_ids=self.source_ids,
            profiles=self.profiles,
        )


def histogram(corpus: SpeakerCorpus, split: str | None = None) -> LabelHistogram:
    idx = corpus.indices(split)
    return LabelHistogram.from_labels(corpus.speaker_ids[idx], corpus.n_speakers)


def assign_splits(corpus: SpeakerCorpus, ratios=DEFAULT_SPLIT_RATIOS, seed: int = 0) -> SpeakerCorpus:
    """Stratified per-speaker split, keeping per-speaker proportions aligned."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three values summing to 1")
    rng = as_rng(seed)
    splits = np.empty(len(corpus), dtype=object)
    for spk in range(corpus.n_speakers):
        idx = np.flatnonzero(corpus.speaker_ids == spk)
        rng.shuffle(idx)
        n = idx.size
        n_train = int(round(n * ratios[0]))
        n_val = int(round(n * ratios[1]))
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        splits[idx[:n_train]] = "train"
        splits[idx[n_train : n_train + n_val]] = "val"
        splits[idx[n_train + n_val :]] = "test"
    return SpeakerCorpus(
        examples=corpus.examples,
        speaker_ids=corpus.speaker_ids,
        splits=splits,
        n_speakers=corpus.n_speakers,
        source_ids=corpus.source_ids,
        profiles=corpus.profiles,
    )


# ---------------------------------------------------------------------------
# Synthetic toy corpus
# ---------------------------------------------------------------------------


def _draw_profiles(n_speakers: int, rng: np.random.Generator) -> list:
    lo, hi = _F0_RANGE
    slot = (hi - lo) / n_speakers
    if slot < _MIN_F0_SEPARATION_HZ:
        raise ValueError(
            f"cannot place {n_speakers} speakers with >= {_MIN_F0_SEPARATION_HZ} Hz "
            f"separation inside [{lo}, {hi}] Hz"
        )
    # evenly spaced slots with jitter small enough to preserve the separation
    jitter_span = max(0.0, (slot - _MIN_F0_SEPARATION_HZ) / 2.0)
    profiles = []
    for i in range(n_speakers):
        f0 = lo + (i + 0.5) * slot + rng.uniform(-jitter_span, jitter_span)
        n_harm = int(rng.integers(2, _MAX_HARMONICS + 1))
        raw = rng.uniform(0.2, 1.0, size=n_harm) * (0.72 ** np.arange(n_harm))
        amps = raw / raw.sum() * rng.uniform(0.8, 1.0)
        profiles.append(
            ToySpeakerProfile(
                fundamental_hz=float(f0),
                harmonic_amplitudes=tuple(float(a) for a in amps),
                vibrato_rate_hz=float(rng.uniform(4.0, 7.0)),
                vibrato_depth=float(rng.uniform(0.05, 0.35)),
                noise_floor=float(rng.uniform(0.002, 0.012)),
            )
        )
    return profiles


def render_toy_example(
    profile: ToySpeakerProfile, n_samples: int, sample_rate: int, rng: np.random.Generator
) -> Waveform:
    """One utterance: harmonic stack + vibrato + noise, peak-normalized to 0.9."""
    t = np.arange(n_samples, dtype=np.float64) / sample_rate
    vibrato = profile.vibrato_depth * np.sin(
        2.0 * np.pi * profile.vibrato_rate_hz * t + rng.uniform(0.0, 2.0 * np.pi)
    )
    x = np.zeros(n_samples, dtype=np.float64)
    for h, amp in enumerate(profile.harmonic_amplitudes, start=1):
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += amp * np.sin(2.0 * np.pi * h * profile.fundamental_hz * t + h * vibrato + phase)
    if profile.noise_floor > 0:
        x += profile.noise_floor * rng.standard_normal(n_samples)
    peak = np.abs(x).max()
    if peak > 0:
        x *= 0.9 / peak
    return Waveform(clamp(x.astype(np.float32)), sample_rate)


def synth_corpus(
    n_speakers: int,
    examples_per_speaker: int,
    duration_s: float = 1.5,
    seed: int = 0,
    sample_rate: int = 16000,
    split_ratios=DEFAULT_SPLIT_RATIOS,
) -> SpeakerCorpus:
    """Deterministic multi-speaker toy corpus with a three-way stratified split."""
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    if examples_per_speaker < 1:
        raise ValueError("need at least 1 example per speaker")
    rng = as_rng(seed)
    profiles = _draw_profiles(n_speakers, rng)
    n_samples = int(round(duration_s * sample_rate))
    examples, ids = [], []
    for spk, profile in enumerate(profiles):
        for _ in range(examples_per_speaker):
            examples.append(render_toy_example(profile, n_samples, sample_rate, rng))
            ids.append(spk)
    corpus = SpeakerCorpus(
        examples=examples,
        speaker_ids=np.asarray(ids),
        splits=np.asarray(["train"] * len(examples), dtype=object),
        n_speakers=n_speakers,
        profiles=profiles,
    )
    return assign_splits(corpus, split_ratios, seed=int(rng.integers(0, 2**31 - 1)))


# ---------------------------------------------------------------------------
# Directory ingestion: root/<speaker_dir>/<clip>.wav
# ---------------------------------------------------------------------------


def ingest_directory(root_path, pattern: str = "*.wav") -> tuple[SpeakerCorpus, int]:
    """Load a per-speaker directory tree; returns (corpus, skipped_file_count).

    Speaker directories are re-indexed to contiguous ids in sorted name order;
    the original names are kept in corpus.source_ids. Unreadable files are
    skipped with a warning. The result carries no split tags (all 'train');
    use assign_splits afterwards.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise ValueError(f"{root} is not a directory")
    speaker_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    examples, ids, source_ids = [], [], {}
    skipped = 0
    for new_id, spk_dir in enumerate(speaker_dirs):
        source_ids[new_id] = spk_dir.name
        for f in sorted(spk_dir.glob(pattern)):
            try:
                examples.append(read_wav(f))
                ids.append(new_id)
            except AudioIOError as exc:
                skipped += 1
                log.warning("skipping unreadable file: %s", exc)
    if not examples:
        raise ValueError(f"no usable audio files under {root}")
    used = sorted(set(ids))
    remap = {old: new for new, old in enumerate(used)}
    source_ids = {remap[k]: v for k, v in source_ids.items() if k in remap}
    ids = [remap[i] for i in ids]
    corpus = SpeakerCorpus(
        examples=examples,
        speaker_ids=np.asarray(ids),
        splits=np.asarray(["train"] * len(examples), dtype=object),
        n_speakers=len(used),
        source_ids=source_ids,
    )
    return corpus, skipped


def save_corpus(corpus: SpeakerCorpus, root_path) -> None:
    """Write the corpus back out in the root/<speaker>/<clip>.wav layout."""
    root = Path(root_path)
    counters = {}
    for wav, spk in zip(corpus.examples, corpus.speaker_ids):
        spk = int(spk)
        name = corpus.source_ids.get(spk, f"{spk:04d}")
        d = root / str(name)
        d.mkdir(parents=True, exist_ok=True)
        k = counters.get(spk, 0)
        counters[spk] = k + 1
        write_wav(d / f"{k:05d}.wav", wav)


def export_manifest(corpus: SpeakerCorpus, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "speaker_id", "split", "duration_s"])
        counters = {}
        for wav, spk, split in zip(corpus.examples, corpus.speaker_ids, corpus.splits):
            spk = int(spk)
            name = corpus.source_ids.get(spk, f"{spk:04d}")
            k = counters.get(spk, 0)
            counters[spk] = k + 1
            writer.writerow([f"{name}/{k:05d}.wav", spk, split, f"{wav.duration_s:.4f}"])


# ---------------------------------------------------------------------------
# Subsets
# ---------------------------------------------------------------------------


def subset(corpus: SpeakerCorpus, mode: str, *, size: int | None = None, k: int | None = None, seed: int = 0) -> SpeakerCorpus:
    """Query-material subsets: 'diverse', 'first_k_speakers', or 'random'.

    diverse          stratified sample of `size` containing every speaker
    first_k_speakers all examples of speakers [0, k)
    random           uniform sample of `size` without replacement

    The label space (n_speakers) of the parent corpus is preserved.
    """
    rng = as_rng(seed)
    if mode == "diverse":
        if size is None or not 1 <= size <= len(corpus):
            raise ValueError("diverse subset needs 1 <= size <= corpus size")
        per_speaker = []
        for spk in range(corpus.n_speakers):
            idx = np.flatnonzero(corpus.speaker_ids == spk)
            rng.shuffle(idx)
            per_speaker.append(list(idx))
        chosen = []
        round_i = 0
        while len(chosen) < size:
            made_progress = False
            for spk in range(corpus.n_speakers):
                if len(chosen) >= size:
                    break
                if round_i < len(per_speaker[spk]):
                    chosen.append(per_speaker[spk][round_i])
                    made_progress = True
            if not made_progress:
                break
            round_i += 1
        take = np.asarray(sorted(chosen), dtype=np.int64)
    elif mode == "first_k_speakers":
        if k is None or not 1 <= k <= corpus.n_speakers:
            raise ValueError("first_k_speakers needs 1 <= k <= n_speakers")
        take = np.flatnonzero(corpus.speaker_ids < k)
    elif mode == "random":
        if size is None or not 1 <= size <= len(corpus):
            raise ValueError("random subset needs 1 <= size <= corpus size")
        take = np.sort(rng.choice(len(corpus), size=size, replace=False))
    else:
        raise ValueError(f"unknown subset mode {mode!r}")
    return SpeakerCorpus(
        examples=[corpus.examples[i] for i in take],
        speaker_ids=corpus.speaker_ids[take],
        splits=corpus.splits[take],
        n_speakers=corpus.n_speakers,
        source_ids=corpus.source_ids,
        profiles=corpus.profiles,
    )
