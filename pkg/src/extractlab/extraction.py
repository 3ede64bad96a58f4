"""The learning-based adversary: query, distill, evaluate.

The attack path touches the victim only through a session object's query
surface (query / remaining / label_mode / n_classes / input_len), so any
object with that surface works, including the HTTP client. Evaluation
against ground truth and victim agreement is evaluator-side and happens
after the attack.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .audio import random_window
from .augment import AugmentSpec, gaussian_noise_query, interpolate, pitch_shift, random_amplify
from .corpus import SpeakerCorpus
from .models import (
    KnaggCNN,
    KnaggCNNConfig,
    LabeledExamples,
    LayerMask,
    TrainConfig,
    build_classifier,
    eval_windows,
    predict_hard,
    train_classifier,
    transfer_layers,
)
from .oracle import BudgetExhaustedError, CoverageReport, OracleSession, coverage_from_labels
from .rng import as_rng, derive_seed
from .sampling import RetainedSet, ThresholdPolicy, iterative_collect

_LABEL_BATCH = 128


@dataclass(frozen=True)
class CorpusSource:
    """Windows drawn from a proxy corpus (or the victim's own data)."""

    corpus: SpeakerCorpus
    volume: int | None = None
    split: str | None = "train"


@dataclass(frozen=True)
class AugmentedSource:
    corpus: SpeakerCorpus
    spec: AugmentSpec
    volume: int
    split: str | None = "train"


@dataclass(frozen=True)
class NoiseSource:
    count: int
    std: float = 0.1


@dataclass(frozen=True)
class GeneratorSource:
    generator: object  # WaveGANGenerator
    n: int = 1
    size: int = 1000
    policy: ThresholdPolicy = ThresholdPolicy.none()


@dataclass(frozen=True)
class ExtractionRun:
    source: object
    surrogate_cfg: KnaggCNNConfig
    tc: TrainConfig
    layer_mask: LayerMask | None = None
    donor: object = None  # state_dict, required when layer_mask transfers anything
    seed: int = 0


@dataclass(frozen=True)
class AgreementReport:
    test_accuracy: float  # vs ground truth on the victim's held-out split
    agreement: float      # argmax match with the victim on the same split


@dataclass
class ExtractionResult:
    surrogate: KnaggCNN
    report: AgreementReport | None
    coverage: CoverageReport
    volume: int
    truncated: bool
    epochs: int
    retained: RetainedSet | None = None


def _corpus_windows(corpus, volume, split, input_len, rng) -> list:
    idx = corpus.indices(split)
    if idx.size == 0:
        raise ValueError(f"no examples in split {split!r}")
    if volume is None:
        take = idx
    elif volume <= idx.size:
        take = rng.choice(idx, size=volume, replace=False)
    else:
        # a fixed-size proxy pool queried above its size repeats clips with
        # fresh windows
        take = rng.choice(idx, size=volume, replace=True)
    return [random_window(corpus.examples[i], input_len, rng) for i in take]


def build_queries(source, input_len: int, seed: int) -> list:
    """Materialize the query waveforms for a non-generator source."""
    rng = as_rng(seed)
    if isinstance(source, CorpusSource):
        return _corpus_windows(source.corpus, source.volume, source.split, input_len, rng)
    if isinstance(source, NoiseSource):
        return [gaussian_noise_query(input_len, source.std, rng) for _ in range(source.count)]
    if isinstance(source, AugmentedSource):
        spec = source.spec
        if spec.kind == "gaussian_noise":
            return [gaussian_noise_query(input_len, spec.std, rng) for _ in range(source.volume)]
        if spec.kind == "interpolate":
            a = _corpus_windows(source.corpus, source.volume, source.split, input_len, rng)
            b = _corpus_windows(source.corpus, source.volume, source.split, input_len, rng)
            return [interpolate(w1, w2, float(rng.uniform()), rng) for w1, w2 in zip(a, b)]
        windows = _corpus_windows(source.corpus, source.volume, source.split, input_len, rng)
        if spec.kind == "amplify":
            return [random_amplify(w, spec.a, spec.p, rng) for w in windows]
        if spec.kind == "pitch_shift":
            out = []
            for w in windows:
                s = float(np.clip(rng.normal(0.0, spec.sigma), -12.0, 12.0))
                out.append(pitch_shift(w, s, spec.p, rng))
            return out
        raise ValueError(f"unknown augmentation kind {spec.kind!r}")
    raise TypeError(f"not a buildable source: {type(source).__name__}")


def _label_queries(session, queries: list) -> tuple[list, list, bool]:
    """Send queries in batches; on budget exhaustion keep what was labeled."""
    labeled_waves, labels = [], []
    truncated = False
    for start in range(0, len(queries), _LABEL_BATCH):
        batch = queries[start : start + _LABEL_BATCH]
        remaining = session.remaining()
        if remaining is not None and remaining < len(batch):
            batch = batch[:remaining]
            truncated = True
        if not batch:
            truncated = True
            break
        try:
            out = session.query(batch)
        except BudgetExhaustedError:
            truncated = True
            break
        labeled_waves.extend(batch)
        labels.extend(list(out))
        if truncated:
            break
    return labeled_waves, labels, truncated


def labeled_examples_from_retained(retained: RetainedSet, n_classes: int, soft: bool) -> LabeledExamples:
    waves = [r.waveform for r in retained.records]
    if soft:
        return LabeledExamples.from_soft_queries(waves, np.stack([r.soft for r in retained.records]))
    return LabeledExamples.from_hard_queries(waves, retained.hard_labels, n_classes)


def train_surrogate(
    data: LabeledExamples,
    cfg: KnaggCNNConfig,
    tc: TrainConfig,
    seed: int,
    layer_mask: LayerMask | None = None,
    donor=None,
) -> KnaggCNN:
    """Fresh surrogate, optional partial weight transfer, distillation training."""
    surrogate = build_classifier(cfg, derive_seed(seed, "surrogate_init"))
    if layer_mask is not None and layer_mask.transfer_upto > 0:
        if donor is None:
            raise ValueError("layer_mask transfer requires donor weights")
        transfer_layers(surrogate, donor, layer_mask)
    tc = dataclasses.replace(tc, seed=derive_seed(seed, "train"))
    train_classifier(surrogate, data, tc)
    return surrogate


def extract(run: ExtractionRun, session) -> tuple[KnaggCNN, dict]:
    """Attack phase: build queries, label through the oracle, distill.

    Returns the trained surrogate plus accounting (volume, hard labels seen,
    truncation flag, retained set for generator sources).
    """
    cfg = run.surrogate_cfg
    soft_mode = session.label_mode == "soft"
    expected_loss = "soft_ce" if soft_mode else "hard_ce"
    if run.tc.loss != expected_loss:
        raise ValueError(f"tc.loss={run.tc.loss!r} incompatible with label_mode={session.label_mode!r}")
    oracle_classes = getattr(session, "n_classes", None)
    if oracle_classes is not None and oracle_classes != cfg.n_classes:
        raise ValueError(
            f"surrogate n_classes {cfg.n_classes} != oracle n_classes {oracle_classes}"
        )

    info = {"retained": None}
    if isinstance(run.source, GeneratorSource):
        src = run.source
        results = iterative_collect(
            lambda count, s: _sample_gen(src.generator, count, s),
            session,
            [src.policy],
            src.n,
            src.size,
            derive_seed(run.seed, "queries"),
            n_classes=cfg.n_classes,
        )
        retained = results[0]
        if not retained.records:
            raise ValueError("no retained queries; oracle budget exhausted?")
        data = labeled_examples_from_retained(retained, cfg.n_classes, soft_mode)
        hard_seen = retained.hard_labels
        truncated = retained.truncated
        volume = retained.retained_counts.total + retained.discarded
        info["retained"] = retained
    else:
        queries = build_queries(run.source, cfg.input_len, derive_seed(run.seed, "queries"))
        waves, labels, truncated = _label_queries(session, queries)
        if not waves:
            raise ValueError("no labeled queries available; oracle budget exhausted?")
        volume = len(waves)
        if soft_mode:
            soft = np.stack([np.asarray(v, dtype=np.float32) for v in labels])
            data = LabeledExamples.from_soft_queries(waves, soft)
            hard_seen = np.argmax(soft, axis=1)
        else:
            hard_seen = np.asarray(labels, dtype=np.int64)
            data = LabeledExamples.from_hard_queries(waves, hard_seen, cfg.n_classes)

    surrogate = train_surrogate(data, cfg, run.tc, run.seed, run.layer_mask, run.donor)
    info.update(volume=volume, hard_labels=hard_seen, truncated=truncated)
    return surrogate, info


def _sample_gen(gen, count, seed):
    from .wavegan import sample_generator

    return sample_generator(gen, count, seed)


def evaluate_surrogate(surrogate: KnaggCNN, victim: KnaggCNN, eval_corpus, split: str = "test") -> AgreementReport:
    X, y = eval_windows(eval_corpus, split, victim.cfg.input_len)
    victim_pred = predict_hard(victim, X)
    surrogate_pred = predict_hard(surrogate, X)
    return AgreementReport(
        test_accuracy=float((surrogate_pred == y).mean()),
        agreement=float((surrogate_pred == victim_pred).mean()),
    )


def run_extraction(
    run: ExtractionRun,
    session,
    eval_corpus,
    victim: KnaggCNN | None = None,
    n_train_labels: int | None = None,
) -> ExtractionResult:
    """Full pipeline: attack, then evaluator-side coverage and agreement."""
    surrogate, info = extract(run, session)
    if n_train_labels is None:
        hist = getattr(session, "train_histogram", None)
        if hist is not None:
            n_train_labels = int(np.count_nonzero(hist.counts))
        else:
            n_train_labels = run.surrogate_cfg.n_classes
    coverage = coverage_from_labels(info["hard_labels"], n_train_labels, volume=info["volume"])
    victim = victim if victim is not None else getattr(session, "victim", None)
    report = evaluate_surrogate(surrogate, victim, eval_corpus) if victim is not None else None
    return ExtractionResult(
        surrogate=surrogate,
        report=report,
        coverage=coverage,
        volume=info["volume"],
        truncated=info["truncated"],
        epochs=run.tc.epochs,
        retained=info["retained"],
    )


def layerwise_experiment(
    victim: KnaggCNN,
    donor,
    proxy_corpus: SpeakerCorpus,
    k_values,
    surrogate_cfg: KnaggCNNConfig,
    tc: TrainConfig,
    eval_corpus,
    seed: int = 0,
    label_mode: str = "soft",
    volume: int | None = None,
    freeze: bool = False,
) -> list:
    """Accuracy as a function of how many victim-side layers the adversary got.

    Each k gets a fresh unlimited session and an identical query seed, so the
    only difference between points is the transferred prefix.
    """
    donor_state = donor.state_dict() if hasattr(donor, "state_dict") else donor
    curve = []
    for k in k_values:
        session = OracleSession(victim, label_mode=label_mode)
        run = ExtractionRun(
            source=CorpusSource(proxy_corpus, volume=volume),
            surrogate_cfg=surrogate_cfg,
            tc=tc,
            layer_mask=LayerMask(k, freeze=freeze),
            donor=donor_state if k > 0 else None,
            seed=seed,
        )
        result = run_extraction(run, session, eval_corpus, victim=victim)
        curve.append((int(k), result.report.test_accuracy))
    return curve
