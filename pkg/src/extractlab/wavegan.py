"""Raw-audio GAN: transposed-conv generator, phase-shuffled critic, WGAN-GP.

Slice length must be 16 * 4^k; the number of up/down blocks is derived from
it, so a desk-scale 4096-sample model and the canonical 16384 one share code.
"""

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .audio import Waveform
from .models import TrainingDivergedError, save_checkpoint, load_checkpoint_meta
from .rng import as_rng


@dataclass(frozen=True)
class WaveGANConfig:
    latent_dim: int = 10
    kernel_len: int = 25
    dim_mult: int = 16          # width multiplier; 64 at full scale
    phase_shuffle_radius: int = 2
    disc_updates_per_gen: int = 5
    batch_size: int = 64
    slice_len: int = 16384
    sample_rate: int = 16000
    gp_lambda: float = 10.0
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9

    def __post_init__(self):
        if self.dim_mult < 1:
            raise ValueError("dim_mult must be >= 1")
        if self.kernel_len % 2 == 0 or self.kernel_len < 5:
            raise ValueError("kernel_len must be odd and >= 5")
        n_up = math.log(self.slice_len / 16, 4)
        if abs(n_up - round(n_up)) > 1e-9 or n_up < 1:
            raise ValueError("slice_len must be 16 * 4^k for integer k >= 1")

    @property
    def n_blocks(self) -> int:
        return int(round(math.log(self.slice_len / 16, 4)))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "WaveGANConfig":
        return cls(**d)


class WaveGANGenerator(nn.Module):
    def __init__(self, cfg: WaveGANConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.dim_mult
        c0 = (2 ** (cfg.n_blocks - 1)) * d
        self.fc = nn.Linear(cfg.latent_dim, 16 * c0)
        self.c0 = c0
        chans = [c0 >> i for i in range(cfg.n_blocks)] + [1]
        # padding chosen so each block upsamples by exactly 4
        pad = (cfg.kernel_len - 3) // 2
        self.deconvs = nn.ModuleList(
            nn.ConvTranspose1d(
                chans[i], chans[i + 1], cfg.kernel_len,
                stride=4, padding=pad, output_padding=1,
            )
            for i in range(cfg.n_blocks)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.fc(z)).view(z.shape[0], self.c0, 16)
        for i, layer in enumerate(self.deconvs):
            x = layer(x)
            x = torch.tanh(x) if i == len(self.deconvs) - 1 else F.relu(x)
        return x  # (B, 1, slice_len), amplitudes in (-1, 1)


class PhaseShuffle(nn.Module):
    """Random per-example time shift in [-radius, radius] with reflect padding."""

    def __init__(self, radius: int, rng: torch.Generator):
        super().__init__()
        self.radius = radius
        self.rng = rng

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        r = self.radius
        if r == 0:
            return x
        shifts = torch.randint(-r, r + 1, (x.shape[0],), generator=self.rng)
        padded = F.pad(x, (r, r), mode="reflect")
        L = x.shape[-1]
        return torch.stack(
            [padded[i, :, r - int(s) : r - int(s) + L] for i, s in enumerate(shifts)]
        )


class WaveGANCritic(nn.Module):
    def __init__(self, cfg: WaveGANConfig, shuffle_seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.shuffle_rng = torch.Generator()
        self.shuffle_rng.manual_seed(shuffle_seed)
        d = cfg.dim_mult
        chans = [1] + [d << i for i in range(cfg.n_blocks)]
        pad = (cfg.kernel_len - 1) // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(chans[i], chans[i + 1], cfg.kernel_len, stride=4, padding=pad)
            for i in range(cfg.n_blocks)
        )
        self.shuffles = nn.ModuleList(
            PhaseShuffle(cfg.phase_shuffle_radius, self.shuffle_rng)
            for _ in range(cfg.n_blocks - 1)
        )
        self.fc = nn.Linear(16 * chans[-1], 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x.unsqueeze(1)
        for i, conv in enumerate(self.convs):
            x = F.leaky_relu(conv(x), 0.2)
            if i < len(self.shuffles):
                x = self.shuffles[i](x)
        return self.fc(x.flatten(1)).squeeze(1)


def build_wavegan(cfg: WaveGANConfig, seed: int) -> tuple[WaveGANGenerator, WaveGANCritic]:
    torch.manual_seed(seed)
    gen = WaveGANGenerator(cfg)
    critic = WaveGANCritic(cfg, shuffle_seed=seed + 1)
    gen.eval()
    critic.eval()
    return gen, critic


def gradient_penalty(critic: WaveGANCritic, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    eps = torch.rand(real.shape[0], 1, 1)
    mixed = (eps * real + (1.0 - eps) * fake).requires_grad_(True)
    score = critic(mixed)
    grads = torch.autograd.grad(score.sum(), mixed, create_graph=True)[0]
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def train_wavegan(
    gen: WaveGANGenerator,
    critic: WaveGANCritic,
    corpus,
    steps: int,
    seed: int,
    checkpoint_every: int | None = None,
    out_dir=None,
) -> list:
    """WGAN-GP loop: 5 critic optimizer steps per generator step.

    `steps` counts optimizer steps, so steps=60 means 50 critic + 10 generator
    updates. Returns a per-step history of losses and penalty values.
    """
    from .audio import random_window_samples

    cfg = gen.cfg
    train_idx = corpus.indices("train")
    if train_idx.size == 0:
        train_idx = corpus.indices(None)
    clips = [corpus.examples[i].samples for i in train_idx]
    if len(clips) < cfg.batch_size:
        raise ValueError(f"corpus has {len(clips)} examples, need >= {cfg.batch_size}")

    rng = as_rng(seed)
    torch.manual_seed(seed)
    gen.train()
    critic.train()
    opt_g = torch.optim.Adam(gen.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(critic.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))

    def real_batch() -> torch.Tensor:
        take = rng.choice(len(clips), size=cfg.batch_size, replace=False)
        X = np.stack(
            [random_window_samples(clips[i], cfg.slice_len, rng) for i in take]
        ).astype(np.float32)
        return torch.from_numpy(X).unsqueeze(1)

    history = []
    cycle = cfg.disc_updates_per_gen + 1
    gen_updates = 0
    for step in range(steps):
        if step % cycle < cfg.disc_updates_per_gen:
            real = real_batch()
            z = torch.rand(cfg.batch_size, cfg.latent_dim) * 2.0 - 1.0
            with torch.no_grad():
                fake = gen(z)
            d_real = critic(real).mean()
            d_fake = critic(fake).mean()
            gp = gradient_penalty(critic, real, fake)
            d_loss = d_fake - d_real + cfg.gp_lambda * gp
            d_val = float(d_loss.detach())
            if not np.isfinite(d_val) or abs(d_val) > 1e4:
                raise TrainingDivergedError(f"critic loss {d_val:.3g} at step {step}")
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            history.append({"step": step, "role": "critic", "loss": d_val, "gp": float(gp.detach())})
        else:
            z = torch.rand(cfg.batch_size, cfg.latent_dim) * 2.0 - 1.0
            g_loss = -critic(gen(z)).mean()
            g_val = float(g_loss.detach())
            if not np.isfinite(g_val):
                raise TrainingDivergedError(f"generator loss non-finite at step {step}")
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            gen_updates += 1
            history.append({"step": step, "role": "generator", "loss": g_val})
            if checkpoint_every and out_dir is not None and gen_updates % checkpoint_every == 0:
                save_generator(f"{out_dir}/generator_{gen_updates:06d}.pt", gen, seed, step)
    gen.eval()
    critic.eval()
    return history


def sample_generator(gen: WaveGANGenerator, count: int, seed: int) -> list:
    """Deterministic i.i.d. samples from the latent prior U([-1, 1])^latent_dim."""
    if count < 1:
        raise ValueError("count must be >= 1")
    cfg = gen.cfg
    g = torch.Generator()
    g.manual_seed(int(seed))
    out = []
    gen.eval()
    with torch.no_grad():
        remaining = count
        while remaining > 0:
            b = min(remaining, 64)
            z = torch.rand(b, cfg.latent_dim, generator=g) * 2.0 - 1.0
            x = gen(z).squeeze(1).numpy()
            for row in x:
                out.append(Waveform(np.clip(row, -1.0, 1.0), cfg.sample_rate))
            remaining -= b
    return out


def save_generator(path, gen: WaveGANGenerator, seed: int, step: int = 0) -> None:
    save_checkpoint(path, gen, gen.cfg.to_dict(), seed, step, kind="wavegan_generator")


def load_generator(path) -> tuple[WaveGANGenerator, dict]:
    blob = load_checkpoint_meta(path)
    if blob.get("kind") != "wavegan_generator":
        raise ValueError(f"{path} is not a generator checkpoint")
    cfg = WaveGANConfig.from_dict(blob["config"])
    gen = WaveGANGenerator(cfg)
    gen.load_state_dict(blob["state"])
    gen.eval()
    return gen, blob
