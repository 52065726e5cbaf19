"""Alternating adversarial training: discriminators first, then the generator."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .discriminators import DiscriminatorSet, PatchDiscConfig, SemanticDiscConfig
from .errors import ConfigError, NumericError, ParameterError
from .generator import Generator, SwinConfig
from .losses import LossReport, LossWeights, discriminator_losses, part_mask_tensors, total
from .masking import preset, random_mask
from .metrics import RandomConvEncoder
from .segmentation import Segmenter
from .toyfaces import PARTS, Sample


@dataclass
class TrainConfig:
    generator_lr: float = 0.001
    discriminator_lr: float = 0.0001
    batch_size: int = 8
    epochs: int = 5
    max_steps: int = 0  # > 0 overrides epochs
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    alpha: float = 10.0
    beta: float = 10.0
    gamma: float = 100.0
    delta: float = 20.0
    omega_skin: float = 0.083
    omega_eye: float = 0.25
    omega_hair: float = 0.083
    omega_lip: float = 0.25
    omega_cloth: float = 0.083
    omega_ear: float = 0.25
    perceptual_weight: float = 0.0
    pixel_norm: str = "L1"
    mask_preset: str = "aggressive"
    seed: int = 0
    checkpoint_interval: int = 100  # 0 disables intermediate checkpoints
    precision: int = 32
    semantic_discriminators: bool = True
    segmenter_command: str = ""  # empty -> ground-truth part masks
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple = (2, 2, 2)
    heads: tuple = (2, 4, 4)
    window_size: int = 4
    disc_layers: int = 4
    disc_channels: int = 32

    def __post_init__(self):
        self.depths = tuple(int(v) for v in self.depths)
        self.heads = tuple(int(v) for v in self.heads)
        if self.generator_lr < 0 or self.discriminator_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0 or self.max_steps < 0 or self.checkpoint_interval < 0:
            raise ConfigError("epochs, max_steps and checkpoint_interval must be >= 0")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        try:
            preset(self.mask_preset)
            self.loss_weights()
        except ParameterError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def dtype(self) -> torch.dtype:
        return torch.float64 if self.precision == 64 else torch.float32

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            alpha=self.alpha,
            beta=self.beta,
            gamma=self.gamma,
            delta=self.delta,
            omega={p: getattr(self, f"omega_{p}") for p in PARTS},
            perceptual_weight=self.perceptual_weight,
            pixel_norm=self.pixel_norm,
        )

    def swin_config(self) -> SwinConfig:
        return SwinConfig(
            patch_size=self.patch_size,
            embed_dim=self.embed_dim,
            depths=list(self.depths),
            heads=list(self.heads),
            window_size=self.window_size,
        )

    def patch_config(self) -> PatchDiscConfig:
        return PatchDiscConfig(layers=self.disc_layers, base_channels=self.disc_channels)

    def semantic_config(self) -> SemanticDiscConfig:
        return SemanticDiscConfig(layers=self.disc_layers, base_channels=self.disc_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"], d["heads"] = list(self.depths), list(self.heads)
        return d


def _parse_value(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: cannot parse value {raw!r}") from exc


def parse_config(text: str, **overrides) -> TrainConfig:
    """Parse flat ``key = value`` lines (``#`` starts a comment)."""
    defaults = {f.name: f.default for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r} (line {lineno})")
        values[key] = _parse_value(key, raw, defaults[key])
    values.update(overrides)
    return TrainConfig(**values)


def load_config(path, **overrides) -> TrainConfig:
    return parse_config(Path(path).read_text(), **overrides)


def format_config(config: TrainConfig) -> str:
    lines = []
    for key, value in config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


@dataclass
class TrainState:
    generator: Generator
    discs: DiscriminatorSet
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    step: int = 0
    encoder: torch.nn.Module | None = None
    segmenter: Segmenter = field(default_factory=Segmenter)


def build_state(config: TrainConfig) -> TrainState:
    """Fresh generator, discriminators and optimizers; every module has its own seed."""
    generator = Generator(config.swin_config(), seed=config.seed).to(config.dtype)
    discs = DiscriminatorSet(
        config.patch_config(), config.semantic_config(), seed=config.seed, semantic=config.semantic_discriminators
    ).to(config.dtype)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.generator_lr, betas=betas, eps=config.adam_eps)
    opt_d = torch.optim.Adam(discs.parameters(), lr=config.discriminator_lr, betas=betas, eps=config.adam_eps)
    encoder = None
    if config.perceptual_weight > 0:
        encoder = RandomConvEncoder(seed=config.seed).to(config.dtype)
    segmenter = Segmenter("external", config.segmenter_command) if config.segmenter_command else Segmenter()
    return TrainState(generator, discs, opt_g, opt_d, 0, encoder, segmenter)


def step_seed(seed: int, step: int, item: int) -> int:
    return int(np.random.SeedSequence([seed, step, item]).generate_state(1)[0])


def batch_tensors(batch: Sequence[Sample], segmenter: Segmenter, dtype) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.from_numpy(np.stack([s.image for s in batch])).permute(0, 3, 1, 2).to(dtype)
    labels = torch.from_numpy(np.stack([segmenter(s).labels for s in batch]).astype(np.int64))
    return images.contiguous(), labels


def step_masks(config: TrainConfig, step: int, count: int, size: int, dtype) -> torch.Tensor:
    spec = preset(config.mask_preset)
    grids = [random_mask(spec, step_seed(config.seed, step, k), size).grid for k in range(count)]
    return torch.from_numpy(np.stack(grids)[:, None].astype(np.float64)).to(dtype)


def _check_parameters(module: torch.nn.Module, what: str) -> None:
    for name, p in module.named_parameters():
        if not torch.isfinite(p).all():
            raise NumericError(f"{what} parameter {name} became non-finite")


def train_step(batch: Sequence[Sample], state: TrainState, config: TrainConfig) -> tuple[TrainState, LossReport]:
    """One discriminator update followed by one generator update.

    Masks are drawn from ``(config.seed, state.step, item index)``, so a step
    is a pure function of the state, the batch and the config.
    """
    dtype = config.dtype
    images, labels = batch_tensors(batch, state.segmenter, dtype)
    masks = step_masks(config, state.step, len(batch), images.shape[-1], dtype)
    part_masks = part_mask_tensors(labels, dtype)

    inpainted = state.generator(images * (1 - masks), masks)

    state.opt_d.zero_grad(set_to_none=True)
    d_losses = discriminator_losses(state.discs, images, inpainted, part_masks)
    torch.stack([v for v in d_losses.values() if v is not None]).sum().backward()
    state.opt_d.step()
    _check_parameters(state.discs, "discriminator")

    state.opt_g.zero_grad(set_to_none=True)
    value, report = total(inpainted, images, part_masks, state.discs, config.loss_weights(), state.encoder)
    value.backward()
    state.opt_g.step()
    _check_parameters(state.generator, "generator")

    report.adv_d = {name: None if v is None else float(v.detach()) for name, v in d_losses.items()}
    state.step += 1
    return state, report


def parameter_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in module.state_dict().items():
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def save_state(path, state: TrainState, config: TrainConfig) -> Path:
    return ckpt.save_checkpoint(
        path, state.generator, state.discs, state.opt_g, state.opt_d, state.step, config.to_dict()
    )


def load_state(path, config: TrainConfig) -> TrainState:
    meta, arrays = ckpt.read_checkpoint(path)
    state = build_state(config)
    ckpt.load_parameters("gen", state.generator, arrays)
    ckpt.load_parameters("disc", state.discs, arrays)
    ckpt.load_optimizer_state("gen", state.generator, state.opt_g, arrays)
    ckpt.load_optimizer_state("disc", state.discs, state.opt_d, arrays)
    state.step = int(meta["step"])
    return state


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def batch_indices(n: int, config: TrainConfig, step: int) -> np.ndarray:
    """Indices of the batch at a global step; each epoch is a seeded permutation."""
    per_epoch = steps_per_epoch(n, config.batch_size)
    epoch, offset = divmod(step, per_epoch)
    order = np.random.default_rng([config.seed, epoch]).permutation(n)
    return order[offset * config.batch_size:(offset + 1) * config.batch_size]


def total_steps(n: int, config: TrainConfig) -> int:
    return config.max_steps if config.max_steps > 0 else config.epochs * steps_per_epoch(n, config.batch_size)


@dataclass
class TrainResult:
    state: TrainState
    reports: list
    log_path: Path | None
    checkpoints: list


def _open_log(path: Path, start_step: int):
    """Open the CSV log; on resume keep only rows from before the resumed step."""
    kept = []
    if start_step > 0 and path.is_file():
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        kept = [r for r in rows[1:] if r and int(r[0]) < start_step]
    fh = open(path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(LossReport.csv_header())
    writer.writerows(kept)
    return fh, writer


def train(samples: Sequence[Sample], config: TrainConfig, out_dir=None, resume=None, progress=None) -> TrainResult:
    """Run the epoch loop.

    Args:
        samples: training set.
        config: hyperparameters; ``max_steps`` > 0 replaces the epoch count.
        out_dir: where ``train_log.csv`` and ``checkpoints/`` go; ``None`` keeps everything in memory.
        resume: checkpoint path to continue from (parameters, Adam moments and step).
        progress: optional callback ``(step, report)``.
    """
    if len(samples) == 0:
        raise ConfigError("training dataset is empty")
    torch.manual_seed(config.seed)
    state = load_state(resume, config) if resume else build_state(config)
    n = len(samples)
    last = total_steps(n, config)

    out = Path(out_dir) if out_dir is not None else None
    fh = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh, writer = _open_log(out / "train_log.csv", state.step)
    reports, written = [], []
    try:
        while state.step < last:
            batch = [samples[i] for i in batch_indices(n, config, state.step)]
            step = state.step
            state, report = train_step(batch, state, config)
            reports.append(report)
            if writer is not None:
                writer.writerow(report.csv_row(step))
                fh.flush()
            if progress is not None:
                progress(step, report)
            if out is not None and config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
                written.append(save_state(out / "checkpoints" / f"step_{state.step:06d}.npz", state, config))
        if out is not None:
            written.append(save_state(out / "checkpoints" / "last.npz", state, config))
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(state, reports, out / "train_log.csv" if out else None, written)
