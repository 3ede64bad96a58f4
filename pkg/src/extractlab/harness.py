"""Config-driven experiment runner: victims, GANs, attacks, and the table
experiments, with an append-only CSV ledger and static plots.

One JSON document describes an experiment; every random choice derives its
seed from the global seed plus a stable component name, so any ledger row is
reproducible from its recorded config and seed.
"""

import csv
import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentSpec
from .corpus import SpeakerCorpus, histogram, ingest_directory, assign_splits, subset, synth_corpus
from .extraction import (
    AugmentedSource,
    CorpusSource,
    ExtractionResult,
    ExtractionRun,
    GeneratorSource,
    NoiseSource,
    evaluate_surrogate,
    labeled_examples_from_retained,
    run_extraction,
    train_surrogate,
)
from .models import (
    KnaggCNNConfig,
    TrainConfig,
    build_classifier,
    evaluate_accuracy,
    LabeledExamples,
    load_classifier,
    save_checkpoint,
    train_classifier,
)
from .oracle import OracleSession, RemoteOracleClient, coverage_from_labels, serve
from .rng import derive_seed
from .sampling import ThresholdPolicy, iterative_collect
from .wavegan import WaveGANConfig, build_wavegan, load_generator, sample_generator, save_generator, train_wavegan


class ConfigError(Exception):
    pass


LEDGER_COLUMNS = [
    "run_id", "table", "source", "volume", "coverage",
    "test_accuracy", "agreement", "epochs", "seed", "truncated",
]


def append_ledger_rows(path, rows: list) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    new_file = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS)
        if new_file:
            writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in LEDGER_COLUMNS})


# ---------------------------------------------------------------------------
# Config schema
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusSpec:
    kind: str = "synth"  # synth | directory
    n_speakers: int = 16
    examples_per_speaker: int = 50
    duration_s: float = 1.5
    sample_rate: int = 16000
    root: str | None = None

    def build(self, seed: int) -> SpeakerCorpus:
        if self.kind == "synth":
            return synth_corpus(
                self.n_speakers, self.examples_per_speaker, self.duration_s,
                seed=seed, sample_rate=self.sample_rate,
            )
        if self.kind == "directory":
            if not self.root:
                raise ConfigError("directory corpus needs 'root'")
            corpus, _ = ingest_directory(self.root)
            return assign_splits(corpus, seed=seed)
        raise ConfigError(f"unknown corpus kind {self.kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str = "toy"
    seed: int = 0
    victim_corpus: CorpusSpec = field(default_factory=CorpusSpec)
    proxy_corpus: CorpusSpec = field(default_factory=CorpusSpec)
    model: dict = field(default_factory=dict)        # KnaggCNNConfig overrides minus n_classes
    victim_train: dict = field(default_factory=lambda: {"epochs": 15})
    label_mode: str = "soft"
    budget: int | None = None
    attack: dict = field(default_factory=dict)
    gan: dict = field(default_factory=dict)          # WaveGANConfig overrides + steps
    tables: dict = field(default_factory=dict)

    def model_cfg(self, n_classes: int) -> KnaggCNNConfig:
        try:
            return KnaggCNNConfig(n_classes=n_classes, **self.model)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad model config: {exc}") from exc

    def victim_tc(self) -> TrainConfig:
        try:
            return TrainConfig(seed=derive_seed(self.seed, "victim_train"), **self.victim_train)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad victim train config: {exc}") from exc

    def gan_cfg(self) -> WaveGANConfig:
        overrides = {k: v for k, v in self.gan.items() if k not in ("steps", "train_on")}
        overrides.setdefault("slice_len", self.model.get("input_len", 16384))
        try:
            return WaveGANConfig(**overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad gan config: {exc}") from exc

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        for key in ("victim_corpus", "proxy_corpus"):
            if key in d:
                d[key] = CorpusSpec(**d[key])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_json(self, path) -> None:
        d = dataclasses.asdict(self)
        Path(path).write_text(json.dumps(d, indent=2))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _paths(out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return {
        "victim": out / "victim.pt",
        "victim_reverse": out / "victim_reverse.pt",
        "gan_proxy": out / "gan_proxy.pt",
        "gan_self": out / "gan_self.pt",
        "ledger": out / "ledger.csv",
        "metrics": out / "metrics.json",
        "plots": out / "plots",
    }


def build_victim_corpus(cfg: ExperimentConfig) -> SpeakerCorpus:
    return cfg.victim_corpus.build(derive_seed(cfg.seed, "victim_corpus"))


def build_proxy_corpus(cfg: ExperimentConfig) -> SpeakerCorpus:
    return cfg.proxy_corpus.build(derive_seed(cfg.seed, "proxy_corpus"))


def cmd_train_victim(cfg: ExperimentConfig, out_dir, reverse: bool = False) -> dict:
    """Train the victim classifier on its corpus and checkpoint it."""
    paths = _paths(out_dir)
    corpus = build_proxy_corpus(cfg) if reverse else build_victim_corpus(cfg)
    mcfg = cfg.model_cfg(corpus.n_speakers)
    seed = derive_seed(cfg.seed, "victim_reverse" if reverse else "victim")
    model = build_classifier(mcfg, seed)
    result = train_classifier(
        model, LabeledExamples.from_corpus(corpus, "train"), cfg.victim_tc(), eval_corpus=corpus
    )
    ckpt = paths["victim_reverse"] if reverse else paths["victim"]
    save_checkpoint(ckpt, model, mcfg.to_dict(), seed, step=len(result.epoch_losses))
    record = {
        "checkpoint": str(ckpt),
        "test_accuracy": result.final_accuracy,
        "epochs": cfg.victim_tc().epochs,
        "seed": cfg.seed,
    }
    with open(paths["metrics"], "a") as fh:
        fh.write(json.dumps({"event": "train_victim", "reverse": reverse, **record}) + "\n")
    return record


def cmd_train_gan(cfg: ExperimentConfig, out_dir, train_on: str | None = None) -> dict:
    """Train a WaveGAN on the proxy corpus (default) or the victim corpus."""
    paths = _paths(out_dir)
    train_on = train_on or cfg.gan.get("train_on", "proxy")
    if train_on not in ("proxy", "self"):
        raise ConfigError("gan train_on must be 'proxy' or 'self'")
    corpus = build_proxy_corpus(cfg) if train_on == "proxy" else build_victim_corpus(cfg)
    gcfg = cfg.gan_cfg()
    steps = int(cfg.gan.get("steps", 600))
    seed = derive_seed(cfg.seed, f"gan_{train_on}")
    gen, critic = build_wavegan(gcfg, seed)
    history = train_wavegan(gen, critic, corpus, steps, seed)
    ckpt = paths[f"gan_{train_on}"]
    save_generator(ckpt, gen, seed, step=steps)
    return {"checkpoint": str(ckpt), "steps": steps, "final_losses": history[-2:]}


def _load_victim(cfg: ExperimentConfig, out_dir, reverse: bool = False):
    paths = _paths(out_dir)
    ckpt = paths["victim_reverse"] if reverse else paths["victim"]
    if not ckpt.exists():
        raise ConfigError(f"missing victim checkpoint {ckpt}; run 'train-victim' first")
    model, _ = load_classifier(ckpt)
    return model


def _load_gan(cfg: ExperimentConfig, out_dir, which: str):
    paths = _paths(out_dir)
    ckpt = paths[f"gan_{which}"]
    if not ckpt.exists():
        raise ConfigError(f"missing generator checkpoint {ckpt}; run 'train-gan' first")
    gen, _ = load_generator(ckpt)
    return gen


def _session(cfg: ExperimentConfig, victim, victim_corpus) -> OracleSession:
    return OracleSession(
        victim,
        label_mode=cfg.label_mode,
        budget_limit=cfg.budget,
        train_histogram=histogram(victim_corpus, "train"),
    )


def _attack_tc(cfg: ExperimentConfig, run_seed: int) -> TrainConfig:
    attack = cfg.attack
    return TrainConfig(
        lr=attack.get("lr", 1e-3),
        epochs=attack.get("epochs", 8),
        batch_size=attack.get("batch_size", 32),
        seed=run_seed,
        loss="soft_ce" if cfg.label_mode == "soft" else "hard_ce",
    )


def _result_row(run_id: str, table: str, source: str, result, seed: int) -> dict:
    return {
        "run_id": run_id,
        "table": table,
        "source": source,
        "volume": result.volume,
        "coverage": f"{result.coverage.ratio:.4f}",
        "test_accuracy": f"{result.report.test_accuracy:.4f}" if result.report else "",
        "agreement": f"{result.report.agreement:.4f}" if result.report else "",
        "epochs": result.epochs,
        "seed": seed,
        "truncated": int(result.truncated),
    }


def _run_source(cfg, victim, victim_corpus, source, label: str, table: str, seed: int) -> tuple[dict, object]:
    session = _session(cfg, victim, victim_corpus)
    run = ExtractionRun(
        source=source,
        surrogate_cfg=victim.cfg,
        tc=_attack_tc(cfg, seed),
        seed=seed,
    )
    result = run_extraction(run, session, victim_corpus, victim=victim)
    run_id = f"{cfg.experiment_id}-{table}-{label}-{int(time.time())}"
    return _result_row(run_id, table, label, result, seed), result


def run_table_t1(cfg: ExperimentConfig, out_dir) -> list:
    """Augmentation baselines: proxy data, amplification, pitch, mixup, noise."""
    victim = _load_victim(cfg, out_dir)
    victim_corpus = build_victim_corpus(cfg)
    proxy = build_proxy_corpus(cfg)
    volume = int(cfg.tables.get("t1_volume", len(proxy.indices("train"))))
    subset_volume = int(cfg.tables.get("t1_subset_volume", max(2, volume // 2)))
    seed = derive_seed(cfg.seed, "t1")

    def aug(kind, **kw):
        return AugmentedSource(proxy, AugmentSpec(kind=kind, **kw), volume=volume)

    conditions = [
        ("proxy_full", CorpusSource(proxy, volume=volume)),
        ("proxy_subset", CorpusSource(proxy, volume=subset_volume)),
        ("amplify_a0.2_p1", aug("amplify", a=0.2, p=1.0)),
        ("amplify_a0.5_p0.5", aug("amplify", a=0.5, p=0.5)),
        ("amplify_a0.2_p0.5", aug("amplify", a=0.2, p=0.5)),
        ("pitch_sigma1_p1", aug("pitch_shift", sigma=1.0, p=1.0)),
        ("pitch_sigma1_p0.5", aug("pitch_shift", sigma=1.0, p=0.5)),
        ("interpolation", aug("interpolate")),
        ("gaussian_noise", NoiseSource(count=volume)),
    ]
    rows = []
    for label, source in conditions:
        row, _ = _run_source(cfg, victim, victim_corpus, source, label, "t1", derive_seed(seed, label))
        rows.append(row)
    return rows


def run_table_t2(cfg: ExperimentConfig, out_dir) -> list:
    """Coverage vs volume: subsets of the victim's own data and of the proxy."""
    victim = _load_victim(cfg, out_dir)
    victim_corpus = build_victim_corpus(cfg)
    proxy = build_proxy_corpus(cfg)
    own_train = victim_corpus.restrict("train")
    volume = int(cfg.tables.get("t2_volume", min(len(own_train), len(proxy.indices("train")))))
    k = int(cfg.tables.get("t2_speakers", max(2, victim_corpus.n_speakers // 2)))
    seed = derive_seed(cfg.seed, "t2")

    few = subset(own_train, "first_k_speakers", k=k, seed=seed)
    few = subset(few, "random", size=min(volume, len(few)), seed=seed)
    conditions = [
        ("own_diverse", CorpusSource(subset(own_train, "diverse", size=volume, seed=seed), volume=volume, split=None)),
        (f"own_{k}_speakers", CorpusSource(few, volume=volume, split=None)),
        ("proxy_full", CorpusSource(proxy)),
        ("proxy_subset", CorpusSource(proxy, volume=volume)),
    ]
    rows = []
    for label, source in conditions:
        row, _ = _run_source(cfg, victim, victim_corpus, source, label, "t2", derive_seed(seed, label))
        rows.append(row)
    return rows


def run_table_t3(cfg: ExperimentConfig, out_dir) -> list:
    """Real data vs generator queries, no thresholding."""
    victim = _load_victim(cfg, out_dir)
    victim_corpus = build_victim_corpus(cfg)
    proxy = build_proxy_corpus(cfg)
    gan_volume = int(cfg.tables.get("t3_gan_volume", 1000))
    seed = derive_seed(cfg.seed, "t3")
    conditions = [
        ("proxy_full", CorpusSource(proxy)),
        ("self_full", CorpusSource(victim_corpus)),
        ("proxy_gan", GeneratorSource(_load_gan(cfg, out_dir, "proxy"), n=1, size=gan_volume)),
        ("self_gan", GeneratorSource(_load_gan(cfg, out_dir, "self"), n=1, size=gan_volume)),
    ]
    rows = []
    for label, source in conditions:
        row, _ = _run_source(cfg, victim, victim_corpus, source, label, "t3", derive_seed(seed, label))
        rows.append(row)
    return rows


def run_table_t4(cfg: ExperimentConfig, out_dir) -> list:
    """Iterative thresholded sampling from the proxy GAN, plus the per-speaker
    retained-count figure."""
    victim = _load_victim(cfg, out_dir)
    victim_corpus = build_victim_corpus(cfg)
    gen = _load_gan(cfg, out_dir, "proxy")
    ref = histogram(victim_corpus, "train")
    alphas = cfg.tables.get("t4_alphas", [5, 10])
    betas = cfg.tables.get("t4_betas", [1.0, 2.0])
    n_values = cfg.tables.get("t4_n", [1, 5])
    size = int(cfg.tables.get("t4_size", 200))
    seed = derive_seed(cfg.seed, "t4")

    policies = [ThresholdPolicy.dynamic(b, ref) for b in betas] + [ThresholdPolicy.static(a) for a in alphas]
    labels = [f"beta{b}" for b in betas] + [f"alpha{a}" for a in alphas]
    rows = []
    histories = {}
    for n in n_values:
        session = _session(cfg, victim, victim_corpus)
        history = []
        retained_sets = iterative_collect(
            lambda count, s: sample_generator(gen, count, s),
            session, policies, int(n), size, derive_seed(seed, f"n{n}"),
            history=history,
        )
        histories[int(n)] = history
        for label, rs in zip(labels, retained_sets):
            run_seed = derive_seed(seed, f"n{n}/{label}")
            surrogate_tc = _attack_tc(cfg, run_seed)
            data = labeled_examples_from_retained(rs, victim.cfg.n_classes, cfg.label_mode == "soft")
            surrogate = train_surrogate(data, victim.cfg, surrogate_tc, run_seed)
            report = evaluate_surrogate(surrogate, victim, victim_corpus)
            coverage = coverage_from_labels(
                rs.hard_labels, int(np.count_nonzero(ref.counts)), volume=len(rs)
            )
            result = ExtractionResult(
                surrogate=surrogate, report=report, coverage=coverage,
                volume=len(rs), truncated=rs.truncated, epochs=surrogate_tc.epochs,
            )
            rows.append(_result_row(
                f"{cfg.experiment_id}-t4-n{n}-{label}-{int(time.time())}", "t4",
                f"gan_n{n}_{label}", result, run_seed,
            ))
    _plot_retained_histograms(histories, labels, _paths(out_dir)["plots"])
    return rows


def _plot_retained_histograms(histories: dict, labels: list, plots_dir) -> None:
    """Per-speaker retained counts after each iteration, one file per policy."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plots = Path(plots_dir)
    plots.mkdir(parents=True, exist_ok=True)
    for p_idx, label in enumerate(labels):
        fig, ax = plt.subplots(figsize=(7, 4))
        csv_rows = []
        for n, history in sorted(histories.items()):
            if not history:
                continue
            counts = history[-1][p_idx]
            ax.plot(np.arange(counts.size), counts, marker="o", label=f"n={n}")
            csv_rows.extend((n, spk, int(c)) for spk, c in enumerate(counts))
        ax.set_xlabel("speaker id")
        ax.set_ylabel("retained samples")
        ax.set_title(f"retained per speaker, policy {label}")
        ax.legend()
        fig.tight_layout()
        fig.savefig(plots / f"retained_{label}.png", dpi=120)
        plt.close(fig)
        with open(plots / f"retained_{label}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "speaker", "retained"])
            writer.writerows(csv_rows)


def run_table_reverse(cfg: ExperimentConfig, out_dir) -> list:
    """Swap the corpora: extract a proxy-trained victim with the original data."""
    swapped = dataclasses.replace(cfg, experiment_id=cfg.experiment_id + "-reverse")
    paths = _paths(out_dir)
    if not paths["victim_reverse"].exists():
        raise ConfigError(
            f"missing victim checkpoint {paths['victim_reverse']}; run 'train-victim --reverse' first"
        )
    victim, _ = load_classifier(paths["victim_reverse"])
    # same corpus draws as the forward direction, with the roles exchanged:
    # the reverse victim was trained on the proxy corpus
    victim_corpus = build_proxy_corpus(cfg)
    proxy = build_victim_corpus(cfg)
    seed = derive_seed(cfg.seed, "reverse")
    conditions = [("proxy_full", CorpusSource(proxy)), ("self_full", CorpusSource(victim_corpus))]
    if paths["gan_self"].exists():
        # the original self-GAN is the reverse setting's cross-domain generator
        gen, _ = load_generator(paths["gan_self"])
        conditions.append(("cross_gan", GeneratorSource(gen, n=1, size=int(cfg.tables.get("t3_gan_volume", 1000)))))
    rows = []
    for label, source in conditions:
        row, _ = _run_source(swapped, victim, victim_corpus, source, label, "reverse", derive_seed(seed, label))
        rows.append(row)
    return rows


TABLE_RUNNERS = {
    "t1": run_table_t1,
    "t2": run_table_t2,
    "t3": run_table_t3,
    "t4": run_table_t4,
    "reverse": run_table_reverse,
}


def cmd_run_table(cfg: ExperimentConfig, table: str, out_dir) -> tuple[list, bool]:
    if table not in TABLE_RUNNERS:
        raise ConfigError(f"unknown table {table!r}; pick from {sorted(TABLE_RUNNERS)}")
    rows = TABLE_RUNNERS[table](cfg, out_dir)
    append_ledger_rows(_paths(out_dir)["ledger"], rows)
    truncated = any(int(r.get("truncated", 0)) for r in rows)
    return rows, truncated


def cmd_attack(cfg: ExperimentConfig, out_dir, session=None, victim=None) -> tuple[dict, bool]:
    """Run the configured attack against an in-process or remote oracle."""
    victim_corpus = build_victim_corpus(cfg)
    if victim is None:
        victim = _load_victim(cfg, out_dir)
    if session is None:
        session = _session(cfg, victim, victim_corpus)
    attack = cfg.attack
    kind = attack.get("source", "proxy")
    seed = derive_seed(cfg.seed, f"attack/{kind}")
    volume = attack.get("volume")
    if kind == "proxy":
        source = CorpusSource(build_proxy_corpus(cfg), volume=volume)
    elif kind == "self":
        source = CorpusSource(victim_corpus, volume=volume)
    elif kind == "noise":
        source = NoiseSource(count=int(volume or 1000), std=attack.get("std", 0.1))
    elif kind in ("amplify", "pitch_shift", "interpolate"):
        spec = AugmentSpec(kind=kind, p=attack.get("p", 1.0), a=attack.get("a", 0.2), sigma=attack.get("sigma", 1.0))
        source = AugmentedSource(build_proxy_corpus(cfg), spec, volume=int(volume or 1000))
    elif kind == "gan":
        threshold = attack.get("threshold", {"kind": "none"})
        if threshold.get("kind") == "static":
            policy = ThresholdPolicy.static(threshold["alpha"])
        elif threshold.get("kind") == "dynamic":
            policy = ThresholdPolicy.dynamic(threshold["beta"], histogram(victim_corpus, "train"))
        else:
            policy = ThresholdPolicy.none()
        source = GeneratorSource(
            _load_gan(cfg, out_dir, attack.get("gan", "proxy")),
            n=int(attack.get("n", 1)), size=int(attack.get("size", 1000)), policy=policy,
        )
    else:
        raise ConfigError(f"unknown attack source {kind!r}")
    run = ExtractionRun(source=source, surrogate_cfg=victim.cfg, tc=_attack_tc(cfg, seed), seed=seed)
    result = run_extraction(run, session, victim_corpus, victim=victim)
    row = _result_row(f"{cfg.experiment_id}-attack-{kind}-{int(time.time())}", "attack", kind, result, seed)
    append_ledger_rows(_paths(out_dir)["ledger"], [row])
    return row, result.truncated


def cmd_serve_oracle(cfg: ExperimentConfig, out_dir, host: str = "127.0.0.1", port: int = 8765):
    victim = _load_victim(cfg, out_dir)
    victim_corpus = build_victim_corpus(cfg)
    session = _session(cfg, victim, victim_corpus)
    return serve(session, host, port)


def cmd_attack_remote(cfg: ExperimentConfig, url: str, out_dir) -> tuple[dict, bool]:
    victim = _load_victim(cfg, out_dir)  # evaluation-side copy
    client = RemoteOracleClient(url, label_mode=cfg.label_mode)
    return cmd_attack(cfg, out_dir, session=client, victim=victim)
