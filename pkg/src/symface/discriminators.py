"""Patch discriminator and the per-part semantic discriminators."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .diffcore import init_parameters
from .errors import ShapeError
from .toyfaces import PARTS


@dataclass
class PatchDiscConfig:
    layers: int = 4
    base_channels: int = 32
    slope: float = 0.2
    in_channels: int = 3


@dataclass
class SemanticDiscConfig:
    layers: int = 4
    base_channels: int = 32
    slope: float = 0.2
    in_channels: int = 3


def _conv_stack(in_channels: int, base: int, layers: int, slope: float) -> tuple[nn.ModuleList, int]:
    blocks = nn.ModuleList()
    channels = in_channels
    for i in range(layers):
        out = base * 2 ** min(i, 2)
        blocks.append(
            nn.Sequential(nn.Conv2d(channels, out, kernel_size=4, stride=2, padding=1), nn.LeakyReLU(slope))
        )
        channels = out
    return blocks, channels


def _check_input(image: torch.Tensor, layers: int) -> None:
    if image.dim() != 4:
        raise ShapeError(f"expected (B, C, H, W), got {tuple(image.shape)}")
    h, w = image.shape[2:]
    unit = 2**layers
    if h < unit or w < unit or h % unit or w % unit:
        raise ShapeError(f"input {h}x{w} too small or not divisible for {layers} stride-2 layers")


class PatchDiscriminator(nn.Module):
    """Strided conv stack ending in a 1x1 conv: one logit per receptive-field patch."""

    def __init__(self, config: PatchDiscConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config = config or PatchDiscConfig()
        self.blocks, channels = _conv_stack(config.in_channels, config.base_channels, config.layers, config.slope)
        self.to_logits = nn.Conv2d(channels, 1, kernel_size=1)
        init_parameters(self, seed)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Return the ``(B, 1, H/2^L, W/2^L)`` logit grid and per-block features, shallow to deep."""
        _check_input(image, self.config.layers)
        features = []
        x = image
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return self.to_logits(x), features


class SemanticDiscriminator(nn.Module):
    """Same conv trunk, globally pooled into a single realness logit per image."""

    def __init__(self, config: SemanticDiscConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config = config or SemanticDiscConfig()
        self.blocks, channels = _conv_stack(config.in_channels, config.base_channels, config.layers, config.slope)
        self.head = nn.Linear(channels, 1)
        init_parameters(self, seed)

    def forward(self, image: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        _check_input(image, self.config.layers)
        features = []
        x = image
        for block in self.blocks:
            x = block(x)
            features.append(x)
        return self.head(x.mean(dim=(2, 3))).reshape(-1), features


def extract_part(image: torch.Tensor, part_mask: torch.Tensor) -> torch.Tensor:
    """Zero everything outside the part, keeping full resolution.

    ``image`` is ``(B, C, H, W)``; ``part_mask`` is ``(B, 1, H, W)`` or ``(B, H, W)``.
    """
    if part_mask.dim() == 3:
        part_mask = part_mask.unsqueeze(1)
    if image.shape[0] != part_mask.shape[0] or image.shape[2:] != part_mask.shape[2:]:
        raise ShapeError(f"image {tuple(image.shape)} and part mask {tuple(part_mask.shape)} disagree")
    return image * part_mask.to(image.dtype)


class DiscriminatorSet(nn.Module):
    """The patch discriminator plus one independent semantic discriminator per part.

    Parameter names follow the checkpoint namespaces ``patch.*`` and
    ``part.<name>.*`` (stored under the ``disc.`` prefix).
    """

    def __init__(
        self,
        patch_config: PatchDiscConfig | None = None,
        semantic_config: SemanticDiscConfig | None = None,
        seed: int = 0,
        semantic: bool = True,
    ):
        super().__init__()
        self.patch = PatchDiscriminator(patch_config, seed=seed * 100 + 1)
        self.part = nn.ModuleDict()
        if semantic:
            for k, name in enumerate(PARTS):
                self.part[name] = SemanticDiscriminator(semantic_config, seed=seed * 100 + 10 + k)

    def named_discriminators(self) -> dict[str, nn.Module]:
        out = {"patch": self.patch}
        out.update({f"part.{name}": disc for name, disc in self.part.items()})
        return out
