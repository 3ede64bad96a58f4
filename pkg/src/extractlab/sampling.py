"""Query retention: static/dynamic thresholding and iterative sampling.

Retention is first-come-first-kept within each label, applied as a single
ordered pass, so per-label caps hold after every prefix of the stream.
Discarded queries do not refund oracle budget.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform
from .corpus import LabelHistogram
from .oracle import BudgetExhaustedError
from .rng import derive_seed


@dataclass(frozen=True)
class ThresholdPolicy:
    """none | static(alpha) | dynamic(beta, reference histogram)."""

    kind: str
    alpha: int | None = None
    beta: float | None = None
    reference: LabelHistogram | None = None

    def __post_init__(self):
        if self.kind == "none":
            pass
        elif self.kind == "static":
            if self.alpha is None or int(self.alpha) < 1:
                raise ValueError("static threshold needs alpha >= 1")
        elif self.kind == "dynamic":
            if self.beta is None or self.beta < 1.0:
                raise ValueError("dynamic threshold needs beta >= 1")
            if self.reference is None:
                raise ValueError("dynamic threshold needs a reference histogram")
        else:
            raise ValueError(f"unknown policy kind {self.kind!r}")

    @classmethod
    def none(cls) -> "ThresholdPolicy":
        return cls("none")

    @classmethod
    def static(cls, alpha: int) -> "ThresholdPolicy":
        return cls("static", alpha=int(alpha))

    @classmethod
    def dynamic(cls, beta: float, reference: LabelHistogram) -> "ThresholdPolicy":
        return cls("dynamic", beta=float(beta), reference=reference)

    def cap(self, label: int) -> int | None:
        """Retention cap for a label; None means unlimited.

        Dynamic caps are ceil(beta * c_i); labels absent from the reference
        (c_i = 0) get cap 0 and are always discarded.
        """
        if self.kind == "none":
            return None
        if self.kind == "static":
            return int(self.alpha)
        c = int(self.reference.counts[label])
        return math.ceil(self.beta * c) if c > 0 else 0

    def describe(self) -> str:
        if self.kind == "static":
            return f"static(alpha={self.alpha})"
        if self.kind == "dynamic":
            return f"dynamic(beta={self.beta})"
        return "none"


@dataclass(eq=False)
class QueryRecord:
    waveform: Waveform
    hard: int
    soft: np.ndarray | None = None


@dataclass(eq=False)
class RetainedSet:
    records: list = field(default_factory=list)
    retained_counts: LabelHistogram | None = None
    discarded: int = 0
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.records)

    @property
    def hard_labels(self) -> np.ndarray:
        return np.asarray([r.hard for r in self.records], dtype=np.int64)


class _Retainer:
    """Online FCFS fold for one policy; reused across iterations."""

    def __init__(self, policy: ThresholdPolicy, n_classes: int):
        self.policy = policy
        self.counts = np.zeros(n_classes, dtype=np.int64)
        self.records = []
        self.discarded = 0

    def offer(self, waveform: Waveform, hard: int, soft: np.ndarray | None) -> bool:
        cap = self.policy.cap(hard)
        if cap is None or self.counts[hard] < cap:
            self.counts[hard] += 1
            self.records.append(QueryRecord(waveform, hard, soft))
            return True
        self.discarded += 1
        return False

    def snapshot(self, truncated: bool = False) -> RetainedSet:
        return RetainedSet(
            records=list(self.records),
            retained_counts=LabelHistogram(self.counts.copy()),
            discarded=self.discarded,
            truncated=truncated,
        )


def _split_label(label) -> tuple[int, np.ndarray | None]:
    arr = np.asarray(label)
    if arr.ndim == 0:
        return int(arr), None
    # soft vector: argmax for counting, the vector itself is retained
    return int(np.argmax(arr)), arr.astype(np.float32)


def apply_threshold(labeled_stream, policy: ThresholdPolicy, n_classes: int) -> RetainedSet:
    """Fold a stream of (waveform, label) through a retention policy.

    Labels may be hard ids or soft vectors. Retained order equals arrival
    order and per-label counts respect the policy caps exactly.
    """
    retainer = _Retainer(policy, n_classes)
    for waveform, label in labeled_stream:
        hard, soft = _split_label(label)
        retainer.offer(waveform, hard, soft)
    return retainer.snapshot()


def iterative_collect(
    sample_fn,
    session,
    policies: list,
    n: int,
    size: int,
    seed: int,
    n_classes: int | None = None,
    history: list | None = None,
) -> list:
    """n rounds of synthesize -> label -> retain, one shared labeled stream.

    sample_fn(count, seed) must return a list of Waveforms. Each policy gets
    its own cumulative retainer over the same stream. On budget exhaustion
    the loop stops and every result carries a truncation flag. If `history`
    is a list, a per-iteration snapshot of retained counts per policy is
    appended to it.
    """
    if n < 1 or size < 1:
        raise ValueError("n and size must be >= 1")
    n_classes = n_classes if n_classes is not None else session.n_classes
    retainers = [_Retainer(p, n_classes) for p in policies]
    truncated = False
    for it in range(n):
        remaining = session.remaining()
        count = size if remaining is None else min(size, remaining)
        if count == 0:
            truncated = True
            break
        batch = sample_fn(count, derive_seed(seed, f"iteration/{it}"))
        try:
            labels = session.query(batch)
        except BudgetExhaustedError:
            truncated = True
            break
        for w, label in zip(batch, labels):
            hard, soft = _split_label(label)
            for r in retainers:
                r.offer(w, hard, soft)
        if history is not None:
            history.append([r.counts.copy() for r in retainers])
        if count < size:
            truncated = True
            break
    return [r.snapshot(truncated) for r in retainers]


def iterative_sample(
    gen,
    session,
    static_policy: ThresholdPolicy,
    dynamic_policy: ThresholdPolicy,
    n: int,
    size: int,
    seed: int,
) -> tuple[RetainedSet, RetainedSet]:
    """Run the repeated-iteration loop with both retention policies at once."""
    from .wavegan import sample_generator

    results = iterative_collect(
        lambda count, s: sample_generator(gen, count, s),
        session,
        [static_policy, dynamic_policy],
        n,
        size,
        seed,
    )
    return results[0], results[1]


# ---------------------------------------------------------------------------
# Persistence: packed float32 waveforms + soft vectors + a CSV manifest,
# replayable into extraction without touching the oracle again.
# ---------------------------------------------------------------------------


def save_retained_set(rs: RetainedSet, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    wave_path = d / "waveforms.f32"
    soft_path = d / "soft.f32"
    offset_w = 0
    offset_s = 0
    rows = []
    with open(wave_path, "wb") as wfh, open(soft_path, "wb") as sfh:
        for i, rec in enumerate(rs.records):
            samples = rec.waveform.samples.astype("<f4")
            wfh.write(samples.tobytes())
            soft_off = -1
            soft_len = 0
            if rec.soft is not None:
                sfh.write(rec.soft.astype("<f4").tobytes())
                soft_off = offset_s
                soft_len = rec.soft.size
                offset_s += rec.soft.size
            rows.append(
                (i, rec.hard, offset_w, samples.size, rec.waveform.sample_rate, soft_off, soft_len)
            )
            offset_w += samples.size
    with open(d / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["index", "label", "wave_offset", "wave_len", "sample_rate", "soft_offset", "soft_len"]
        )
        writer.writerows(rows)
    (d / "meta.csv").write_text(
        f"discarded,truncated,n_classes\n{rs.discarded},{int(rs.truncated)},{rs.retained_counts.n_classes}\n"
    )


def load_retained_set(directory) -> RetainedSet:
    d = Path(directory)
    waves = np.fromfile(d / "waveforms.f32", dtype="<f4")
    softs = np.fromfile(d / "soft.f32", dtype="<f4")
    meta = (d / "meta.csv").read_text().strip().splitlines()[1].split(",")
    discarded, truncated, n_classes = int(meta[0]), bool(int(meta[1])), int(meta[2])
    records = []
    with open(d / "manifest.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            off, ln = int(row["wave_offset"]), int(row["wave_len"])
            w = Waveform(waves[off : off + ln], int(row["sample_rate"]))
            soft = None
            s_off, s_len = int(row["soft_offset"]), int(row["soft_len"])
            if s_off >= 0:
                soft = softs[s_off : s_off + s_len].copy()
            records.append(QueryRecord(w, int(row["label"]), soft))
    counts = LabelHistogram.from_labels([r.hard for r in records], n_classes)
    return RetainedSet(records=records, retained_counts=counts, discarded=discarded, truncated=truncated)
