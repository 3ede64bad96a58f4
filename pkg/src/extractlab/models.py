"""Raw-waveform speaker CNN: build, train, transfer, checkpoint.

The classifier is four strided 1-D convolutions (stride 4, so a canonical
16384-sample input collapses to ~64 frames) with batch norm, global average
pooling, and a two-layer head. Width is a config knob; the default is sized
so a toy victim trains in minutes on one CPU core.
"""

from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import center_window_samples, random_window_samples
from .rng import as_rng


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class KnaggCNNConfig:
    n_classes: int
    input_len: int = 16384
    conv_channels: tuple = (128, 256, 384, 512)
    width_scale: float = 0.125
    first_kernel: int = 32
    later_kernel: int = 9
    embedding_dim: int = 128
    batchnorm: bool = True
    dropout_prob: float = 0.0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if len(self.conv_channels) != 4:
            raise ValueError("exactly 4 conv layers required")
        if any(b > a for a, b in zip(self.conv_channels[1:], self.conv_channels)):
            raise ValueError("conv_channels must be non-decreasing")
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))

    def effective_channels(self) -> tuple:
        return tuple(max(1, int(round(c * self.width_scale))) for c in self.conv_channels)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "KnaggCNNConfig":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3       # Adam, framework-default betas
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    loss: str = "hard_ce"  # or "soft_ce"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss not in ("hard_ce", "soft_ce"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class LayerMask:
    """Transfer donor weights into layers 1..transfer_upto of a student."""

    transfer_upto: int
    freeze: bool = False

    def __post_init__(self):
        if not 0 <= self.transfer_upto <= KnaggCNN.N_LAYERS:
            raise ValueError(f"transfer_upto must be in [0, {KnaggCNN.N_LAYERS}]")


class KnaggCNN(nn.Module):
    N_CONV = 4
    N_LAYERS = 6  # 4 conv blocks + 2 fully connected

    def __init__(self, cfg: KnaggCNNConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.effective_channels()
        in_ch = 1
        for i, out_ch in enumerate(chans, start=1):
            k = cfg.first_kernel if i == 1 else cfg.later_kernel
            setattr(self, f"conv{i}", nn.Conv1d(in_ch, out_ch, k, stride=4, padding=k // 2))
            if cfg.batchnorm:
                setattr(self, f"bn{i}", nn.BatchNorm1d(out_ch))
            in_ch = out_ch
        self.dropout = nn.Dropout1d(cfg.dropout_prob) if cfg.dropout_prob > 0 else None
        self.fc1 = nn.Linear(chans[-1], cfg.embedding_dim)
        self.fc2 = nn.Linear(cfg.embedding_dim, cfg.n_classes)

    def conv_activations(self, x: torch.Tensor, upto: int) -> torch.Tensor:
        """Post-ReLU map of conv block `upto` (0-based); accepts any length."""
        if not 0 <= upto < self.N_CONV:
            raise IndexError(f"conv block index {upto} out of range")
        if x.dim() == 2:
            x = x.unsqueeze(1)
        for i in range(1, upto + 2):
            x = getattr(self, f"conv{i}")(x)
            if self.cfg.batchnorm:
                x = getattr(self, f"bn{i}")(x)
            if self.dropout is not None:
                x = self.dropout(x)
            x = F.relu(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        if x.shape[-1] != self.cfg.input_len:
            raise ValueError(
                f"expected input length {self.cfg.input_len}, got {x.shape[-1]}"
            )
        x = self.conv_activations(x.squeeze(1), self.N_CONV - 1)
        x = x.mean(dim=2)
        x = F.relu(self.fc1(x))
        return self.fc2(x)

    def layer_state_keys(self, block: int) -> list:
        """state_dict keys belonging to parameterized layer `block` (0-based)."""
        if block < self.N_CONV:
            prefixes = [f"conv{block + 1}."]
            if self.cfg.batchnorm:
                prefixes.append(f"bn{block + 1}.")
        else:
            prefixes = [f"fc{block - self.N_CONV + 1}."]
        return [k for k in self.state_dict() if any(k.startswith(p) for p in prefixes)]


def build_classifier(cfg: KnaggCNNConfig, seed: int) -> KnaggCNN:
    torch.manual_seed(seed)
    model = KnaggCNN(cfg)
    model.eval()
    return model


def transfer_layers(student: KnaggCNN, donor, mask: LayerMask) -> KnaggCNN:
    """Copy donor weights into layers 1..k of the student, bitwise.

    donor may be a model or a state_dict; architectures must match exactly.
    With freeze=True the transferred parameters stop receiving gradients.
    """
    donor_state = donor.state_dict() if isinstance(donor, nn.Module) else donor
    own_state = student.state_dict()
    if set(donor_state) != set(own_state) or any(
        donor_state[k].shape != own_state[k].shape for k in own_state
    ):
        raise ValueError("donor and student architectures do not match")
    keys = []
    for block in range(mask.transfer_upto):
        keys.extend(student.layer_state_keys(block))
    with torch.no_grad():
        for k in keys:
            own_state[k].copy_(donor_state[k])
    if mask.freeze:
        frozen = set(k for k in keys if not k.endswith(("running_mean", "running_var", "num_batches_tracked")))
        for name, p in student.named_parameters():
            if name in frozen:
                p.requires_grad_(False)
    return student


# ---------------------------------------------------------------------------
# Training data and loop
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class LabeledExamples:
    """Clips plus either hard speaker ids or soft probability vectors."""

    clips: list  # list of float32 arrays, arbitrary lengths
    n_classes: int
    hard: np.ndarray | None = None
    soft: np.ndarray | None = None

    def __post_init__(self):
        if (self.hard is None) == (self.soft is None):
            raise ValueError("provide exactly one of hard or soft labels")
        if self.hard is not None:
            self.hard = np.asarray(self.hard, dtype=np.int64)
            if self.hard.size != len(self.clips):
                raise ValueError("label count must match clip count")
        else:
            self.soft = np.asarray(self.soft, dtype=np.float32)
            if self.soft.shape != (len(self.clips), self.n_classes):
                raise ValueError("soft label shape must be (n, n_classes)")
            sums = self.soft.sum(axis=1)
            if np.any(np.abs(sums - 1.0) > 1e-4):
                raise ValueError("soft labels must sum to 1 within 1e-4")

    def __len__(self) -> int:
        return len(self.clips)

    @classmethod
    def from_corpus(cls, corpus, split: str | None = "train") -> "LabeledExamples":
        idx = corpus.indices(split)
        return cls(
            clips=[corpus.examples[i].samples for i in idx],
            n_classes=corpus.n_speakers,
            hard=corpus.speaker_ids[idx],
        )

    @classmethod
    def from_soft_queries(cls, waveforms, soft: np.ndarray) -> "LabeledExamples":
        soft = np.asarray(soft, dtype=np.float32)
        return cls(
            clips=[w.samples for w in waveforms],
            n_classes=soft.shape[1],
            soft=soft,
        )

    @classmethod
    def from_hard_queries(cls, waveforms, hard, n_classes: int) -> "LabeledExamples":
        return cls(
            clips=[w.samples for w in waveforms],
            n_classes=n_classes,
            hard=np.asarray(hard, dtype=np.int64),
        )


@dataclass
class TrainResult:
    epoch_losses: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)
    final_accuracy: float | None = None


def soft_cross_entropy(logits: torch.Tensor, target_probs: torch.Tensor) -> torch.Tensor:
    return -(target_probs * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def _forward_batches(model: KnaggCNN, X: np.ndarray, batch: int = 256) -> np.ndarray:
    outs = []
    with torch.no_grad():
        for i in range(0, X.shape[0], batch):
            outs.append(model(torch.from_numpy(X[i : i + batch])).numpy())
    return np.concatenate(outs, axis=0)


def predict_soft(model: KnaggCNN, X: np.ndarray) -> np.ndarray:
    logits = _forward_batches(model, np.ascontiguousarray(X, dtype=np.float32))
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits.astype(np.float64))
    return (e / e.sum(axis=1, keepdims=True)).astype(np.float32)


def predict_hard(model: KnaggCNN, X: np.ndarray) -> np.ndarray:
    # np.argmax resolves ties to the lowest index, matching the oracle contract
    return np.argmax(predict_soft(model, X), axis=1).astype(np.int64)


def eval_windows(corpus, split: str, input_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic center-cropped windows and ground-truth ids for a split."""
    idx = corpus.indices(split)
    X = np.stack(
        [center_window_samples(corpus.examples[i].samples, input_len) for i in idx]
    ).astype(np.float32)
    return X, corpus.speaker_ids[idx]


def evaluate_accuracy(model: KnaggCNN, corpus, split: str = "test") -> float:
    X, y = eval_windows(corpus, split, model.cfg.input_len)
    return float((predict_hard(model, X) == y).mean())


def train_classifier(
    model: KnaggCNN,
    data: LabeledExamples,
    tc: TrainConfig,
    eval_corpus=None,
    eval_split: str = "test",
) -> TrainResult:
    """Adam training with a fresh random window drawn from each clip per epoch.

    Hard labels use plain cross entropy, soft labels the distillation form
    (cross entropy against the full probability vector, temperature 1).
    """
    if tc.loss == "soft_ce" and data.soft is None:
        raise ValueError("soft_ce requires soft labels")
    if tc.loss == "hard_ce" and data.hard is None:
        raise ValueError("hard_ce requires hard labels")
    rng = as_rng(tc.seed)
    torch.manual_seed(tc.seed)
    opt = torch.optim.Adam(
        [p for p in model.parameters() if p.requires_grad], lr=tc.lr
    )
    input_len = model.cfg.input_len
    result = TrainResult()
    n = len(data)
    for epoch in range(tc.epochs):
        model.train()
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, tc.batch_size):
            take = perm[start : start + tc.batch_size]
            X = np.stack(
                [random_window_samples(data.clips[i], input_len, rng) for i in take]
            ).astype(np.float32)
            logits = model(torch.from_numpy(X))
            if tc.loss == "hard_ce":
                target = torch.from_numpy(data.hard[take])
                loss = F.cross_entropy(logits, target)
            else:
                target = torch.from_numpy(data.soft[take])
                loss = soft_cross_entropy(logits, target)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, step {start // tc.batch_size}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
        result.epoch_losses.append(float(np.mean(losses)))
        if eval_corpus is not None:
            model.eval()
            result.epoch_accuracy.append(evaluate_accuracy(model, eval_corpus, eval_split))
    model.eval()
    if eval_corpus is not None:
        result.final_accuracy = result.epoch_accuracy[-1]
    return result


# ---------------------------------------------------------------------------
# Checkpoints: named tensors + config + seed + step in one archive
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: nn.Module, cfg_dict: dict, seed: int, step: int = 0, kind: str = "classifier") -> None:
    torch.save(
        {"kind": kind, "config": cfg_dict, "state": model.state_dict(), "seed": int(seed), "step": int(step)},
        str(path),
    )


def load_checkpoint_meta(path) -> dict:
    return torch.load(str(path), map_location="cpu", weights_only=True)


def load_classifier(path) -> tuple[KnaggCNN, dict]:
    blob = load_checkpoint_meta(path)
    if blob.get("kind") != "classifier":
        raise ValueError(f"{path} is not a classifier checkpoint")
    cfg = KnaggCNNConfig.from_dict(blob["config"])
    model = KnaggCNN(cfg)
    model.load_state_dict(blob["state"])
    model.eval()
    return model, blob
