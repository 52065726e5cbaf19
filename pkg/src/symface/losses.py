"""Generator and discriminator objectives.

Naming: ``inpainted`` is the generator output, ``target`` the ground truth.
Discriminators treat ``target`` as real and ``inpainted`` as fake. Every loss
the generator minimizes evaluates discriminators through
:func:`~symface.diffcore.frozen_call`, so it never produces a gradient on a
discriminator parameter; discriminator losses see ``inpainted`` detached, so
they never produce a gradient on a generator parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Mapping, Sequence

import torch
import torch.nn as nn

from .diffcore import frozen_call
from .discriminators import DiscriminatorSet, extract_part
from .errors import NumericError, ParameterError, ShapeError
from .toyfaces import PART_CODES, PARTS

PROB_EPS = 1e-6
DEFAULT_OMEGA = {"skin": 0.083, "eye": 0.25, "hair": 0.083, "lip": 0.25, "cloth": 0.083, "ear": 0.25}


@dataclass
class LossWeights:
    alpha: float = 10.0  # pixel-wise
    beta: float = 10.0  # adversarial (patch)
    gamma: float = 100.0  # feature matching (patch)
    delta: float = 20.0  # homogeneity
    omega: dict = field(default_factory=lambda: dict(DEFAULT_OMEGA))
    perceptual_weight: float = 0.0
    pixel_norm: str = "L1"

    def __post_init__(self):
        if set(self.omega) != set(PARTS):
            raise ParameterError(f"omega must have exactly the parts {PARTS}, got {sorted(self.omega)}")
        values = [self.alpha, self.beta, self.gamma, self.delta, self.perceptual_weight, *self.omega.values()]
        if any(v < 0 for v in values):
            raise ParameterError("loss weights must be non-negative")
        if self.pixel_norm not in ("L1", "L2"):
            raise ParameterError(f"pixel_norm must be 'L1' or 'L2', got {self.pixel_norm!r}")


def _check_finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NumericError(f"loss term {name!r} is not finite")
    return value


def _distance(a: torch.Tensor, b: torch.Tensor, norm: str = "L1") -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = a - b
    return diff.abs().mean() if norm == "L1" else (diff * diff).mean()


def pixel_wise(inpainted: torch.Tensor, target: torch.Tensor, norm: str = "L1") -> torch.Tensor:
    return _distance(inpainted, target, norm)


def probabilities(logits: torch.Tensor) -> torch.Tensor:
    _check_finite("discriminator logits", logits)
    return torch.sigmoid(logits).clamp(PROB_EPS, 1 - PROB_EPS)


def discriminator_adversarial(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> torch.Tensor:
    """-E[log D(real)] - E[log(1 - D(fake))], expectations over batch and logit grid."""
    return -torch.log(probabilities(real_logits)).mean() - torch.log(1 - probabilities(fake_logits)).mean()


def generator_adversarial(fake_logits: torch.Tensor) -> torch.Tensor:
    """-E[log D(fake)]."""
    return -torch.log(probabilities(fake_logits)).mean()


def feature_distance(fake_features: Sequence[torch.Tensor], real_features: Sequence[torch.Tensor],
                     norm: str = "L1") -> torch.Tensor:
    """Sum over layers of the mean elementwise distance; real features are detached."""
    if len(fake_features) != len(real_features):
        raise ShapeError("feature lists differ in length")
    terms = [_distance(f, r.detach(), norm) for f, r in zip(fake_features, real_features)]
    return torch.stack(terms).sum()


def adversarial_pair(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Return ``(L_D, L_G)``.

    ``L_D`` only reaches the discriminator (fake is detached); ``L_G`` only
    reaches the generator (discriminator parameters are stop-gradiented).
    Summing them and backpropagating once trains each side on its own term.
    """
    real_logits, _ = disc(real)
    fake_logits_d, _ = disc(fake.detach())
    loss_d = discriminator_adversarial(real_logits, fake_logits_d)
    fake_logits_g, _ = frozen_call(disc, fake)
    return loss_d, generator_adversarial(fake_logits_g)


def feature_matching(disc: nn.Module, inpainted: torch.Tensor, target: torch.Tensor, norm: str = "L1") -> torch.Tensor:
    _, fake_features = frozen_call(disc, inpainted)
    with torch.no_grad():
        _, real_features = disc(target)
    return feature_distance(fake_features, real_features, norm)


def perceptual(encoder: Callable, inpainted: torch.Tensor, target: torch.Tensor, norm: str = "L1") -> torch.Tensor:
    """Distance between frozen-encoder features, summed over encoder stages."""
    if isinstance(encoder, nn.Module):
        fake_stages = frozen_call(encoder, inpainted)
    else:
        fake_stages = encoder(inpainted)
    with torch.no_grad():
        real_stages = encoder(target)
    return feature_distance(list(fake_stages), list(real_stages), norm)


def part_mask_tensors(labels: torch.Tensor, dtype=None) -> dict[str, torch.Tensor]:
    """(B, H, W) integer label maps -> {part: (B, 1, H, W) float mask}."""
    dtype = dtype or torch.get_default_dtype()
    return {name: (labels == PART_CODES[name]).unsqueeze(1).to(dtype) for name in PARTS}


def present_items(part_mask: torch.Tensor) -> torch.Tensor:
    return part_mask.flatten(1).amax(dim=1) > 0


def part_loss(part: str, inpainted: torch.Tensor, target: torch.Tensor, part_masks: Mapping[str, torch.Tensor],
              disc: nn.Module, norm: str = "L1") -> torch.Tensor | None:
    """Adversarial (generator side) plus feature matching on one part.

    Batch items whose part mask is empty are dropped; returns ``None``
    (skipped) when no item has the part.
    """
    if part not in PARTS:
        raise ParameterError(f"unknown part {part!r}")
    mask = part_masks[part]
    keep = present_items(mask)
    if not bool(keep.any()):
        return None
    fake = extract_part(inpainted[keep], mask[keep])
    real = extract_part(target[keep], mask[keep])
    fake_logits, fake_features = frozen_call(disc, fake)
    with torch.no_grad():
        _, real_features = disc(real)
    return generator_adversarial(fake_logits) + feature_distance(fake_features, real_features, norm)


def homogeneity(inpainted: torch.Tensor, target: torch.Tensor, part_masks: Mapping[str, torch.Tensor],
                discs: Mapping[str, nn.Module], omega: Mapping[str, float],
                norm: str = "L1") -> tuple[torch.Tensor, dict[str, torch.Tensor | None]]:
    """Weighted sum of per-part losses; skipped parts contribute exactly zero."""
    per_part: dict[str, torch.Tensor | None] = {}
    value = inpainted.new_zeros(())
    for name in PARTS:
        if name not in discs:
            per_part[name] = None
            continue
        loss = part_loss(name, inpainted, target, part_masks, discs[name], norm)
        per_part[name] = loss
        if loss is not None:
            value = value + omega[name] * loss
    return value, per_part


@dataclass
class LossReport:
    pixel: float
    adv_g: float
    fm: float
    perceptual: float
    homogeneity: float
    total: float
    parts: dict = field(default_factory=dict)  # part -> value or None when skipped
    adv_d: dict = field(default_factory=dict)  # discriminator name -> L_D or None

    def weighted_total(self, weights: LossWeights) -> float:
        return (
            weights.alpha * self.pixel
            + weights.beta * self.adv_g
            + weights.gamma * self.fm
            + weights.delta * self.homogeneity
            + weights.perceptual_weight * self.perceptual
        )

    @property
    def skipped(self) -> dict[str, bool]:
        return {name: self.parts.get(name) is None for name in PARTS}

    @staticmethod
    def csv_header() -> list[str]:
        disc_names = ["patch"] + [f"part.{p}" for p in PARTS]
        return (
            ["step", "pixel", "adv_g", "fm", "perceptual"]
            + [f"part_{p}" for p in PARTS]
            + ["homogeneity", "total"]
            + [f"adv_d_{n}" for n in disc_names]
            + [f"skipped_{p}" for p in PARTS]
        )

    def csv_row(self, step: int) -> list:
        def fmt(v):
            return "" if v is None else repr(float(v))

        disc_names = ["patch"] + [f"part.{p}" for p in PARTS]
        return (
            [step, fmt(self.pixel), fmt(self.adv_g), fmt(self.fm), fmt(self.perceptual)]
            + [fmt(self.parts.get(p)) for p in PARTS]
            + [fmt(self.homogeneity), fmt(self.total)]
            + [fmt(self.adv_d.get(n)) for n in disc_names]
            + [int(self.skipped[p]) for p in PARTS]
        )

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _item(t) -> float | None:
    return None if t is None else float(t.detach())


def total(inpainted: torch.Tensor, target: torch.Tensor, part_masks: Mapping[str, torch.Tensor],
          discs: DiscriminatorSet, weights: LossWeights, encoder: Callable | None = None) -> tuple[torch.Tensor, LossReport]:
    """Full generator objective: weighted pixel, adversarial, feature-matching,
    homogeneity and (optional) perceptual terms. Returns the differentiable
    total and a report of every term.
    """
    norm = weights.pixel_norm
    pixel = _check_finite("pixel", pixel_wise(inpainted, target, norm))

    fake_logits, fake_features = frozen_call(discs.patch, inpainted)
    with torch.no_grad():
        _, real_features = discs.patch(target)
    adv = _check_finite("adv_g", generator_adversarial(fake_logits))
    fm = _check_finite("fm", feature_distance(fake_features, real_features, norm))

    hg, per_part = homogeneity(inpainted, target, part_masks, dict(discs.part.items()), weights.omega, norm)
    _check_finite("homogeneity", hg)

    if encoder is not None and weights.perceptual_weight > 0:
        perc = _check_finite("perceptual", perceptual(encoder, inpainted, target, norm))
    else:
        perc = inpainted.new_zeros(())

    value = (
        weights.alpha * pixel
        + weights.beta * adv
        + weights.gamma * fm
        + weights.delta * hg
        + weights.perceptual_weight * perc
    )
    _check_finite("total", value)
    report = LossReport(
        pixel=_item(pixel),
        adv_g=_item(adv),
        fm=_item(fm),
        perceptual=_item(perc),
        homogeneity=_item(hg),
        total=_item(value),
        parts={name: _item(v) for name, v in per_part.items()},
    )
    return value, report


def discriminator_losses(discs: DiscriminatorSet, target: torch.Tensor, inpainted: torch.Tensor,
                         part_masks: Mapping[str, torch.Tensor]) -> dict[str, torch.Tensor | None]:
    """L_D for the patch discriminator and each semantic discriminator.

    ``inpainted`` is detached here; semantic terms use only batch items in
    which the part is present and are ``None`` otherwise.
    """
    fake = inpainted.detach()
    out: dict[str, torch.Tensor | None] = {}
    real_logits, _ = discs.patch(target)
    fake_logits, _ = discs.patch(fake)
    out["patch"] = _check_finite("adv_d_patch", discriminator_adversarial(real_logits, fake_logits))
    for name, disc in discs.part.items():
        mask = part_masks[name]
        keep = present_items(mask)
        if not bool(keep.any()):
            out[f"part.{name}"] = None
            continue
        real_logits, _ = disc(extract_part(target[keep], mask[keep]))
        fake_logits, _ = disc(extract_part(fake[keep], mask[keep]))
        out[f"part.{name}"] = _check_finite(f"adv_d_part.{name}", discriminator_adversarial(real_logits, fake_logits))
    return out
