"""Swin-Unet style inpainting generator without encoder-to-decoder skips.

Tensors inside the transformer are channels-last ``(B, H, W, C)``; the public
``Generator.forward`` takes and returns channels-first images.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .diffcore import init_parameters
from .errors import NumericError, ShapeError


@dataclass
class SwinConfig:
    patch_size: int = 4
    embed_dim: int = 32
    depths: Sequence[int] = field(default_factory=lambda: [2, 2, 2])
    heads: Sequence[int] = field(default_factory=lambda: [2, 4, 4])
    window_size: int = 4
    mlp_ratio: float = 4.0
    input_channels: int = 4
    output_channels: int = 3

    def __post_init__(self):
        self.depths = [int(d) for d in self.depths]
        self.heads = [int(h) for h in self.heads]
        if len(self.depths) != len(self.heads) or not self.depths:
            raise ShapeError(f"depths {self.depths} and heads {self.heads} must be non-empty and equal length")
        for i, h in enumerate(self.heads):
            if self.stage_dim(i) % h:
                raise ShapeError(f"stage {i} width {self.stage_dim(i)} is not divisible by {h} heads")

    @property
    def num_stages(self) -> int:
        return len(self.depths)

    def stage_dim(self, i: int) -> int:
        return self.embed_dim * 2**i

    def check_size(self, height: int, width: int) -> None:
        unit = self.patch_size * 2 ** (self.num_stages - 1)
        if height % unit or width % unit:
            raise ShapeError(f"image {height}x{width} is not divisible by patch_size*2^(stages-1) = {unit}")
        for i in range(self.num_stages):
            th, tw = height // (self.patch_size * 2**i), width // (self.patch_size * 2**i)
            for t in (th, tw):
                if t > self.window_size and t % self.window_size:
                    raise ShapeError(f"stage {i} token grid {th}x{tw} is not tiled by window {self.window_size}")

    def to_dict(self) -> dict:
        return asdict(self)


def window_partition(x: torch.Tensor, window_size: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nW, ws, ws, C), windows in row-major order."""
    b, h, w, c = x.shape
    if h % window_size or w % window_size:
        raise ShapeError(f"spatial dims {h}x{w} not divisible by window {window_size}")
    x = x.reshape(b, h // window_size, window_size, w // window_size, window_size, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window_size, window_size, c)


def window_reverse(windows: torch.Tensor, window_size: int, height: int, width: int) -> torch.Tensor:
    """Inverse of :func:`window_partition`."""
    if height % window_size or width % window_size:
        raise ShapeError(f"spatial dims {height}x{width} not divisible by window {window_size}")
    nh, nw = height // window_size, width // window_size
    b = windows.shape[0] // (nh * nw)
    x = windows.reshape(b, nh, nw, window_size, window_size, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, height, width, -1)


def shift_attention_mask(height: int, width: int, window_size: int, shift: int) -> torch.Tensor:
    """Additive bias (nW, L, L) forbidding attention across the cyclic-roll seam."""
    region = torch.zeros(1, height, width, 1)
    bounds = (slice(0, -window_size), slice(-window_size, -shift), slice(-shift, None))
    label = 0
    for hs in bounds:
        for ws in bounds:
            region[:, hs, ws, :] = label
            label += 1
    ids = window_partition(region, window_size).reshape(-1, window_size * window_size)
    same = ids[:, None, :] == ids[:, :, None]
    return torch.zeros(same.shape).masked_fill(~same, float("-inf"))


def relative_position_index(window_size: int, table_window: int) -> torch.Tensor:
    """Index into a ((2*table_window-1)^2)-row bias table for every token pair of a window."""
    coords = torch.stack(torch.meshgrid(torch.arange(window_size), torch.arange(window_size), indexing="ij"))
    coords = coords.flatten(1)
    rel = coords[:, :, None] - coords[:, None, :] + (table_window - 1)
    return rel[0] * (2 * table_window - 1) + rel[1]


class WindowAttention(nn.Module):
    """Multi-head self-attention inside one window, with relative position bias."""

    def __init__(self, dim: int, num_heads: int, window_size: int):
        super().__init__()
        self.dim = dim
        self.num_heads = num_heads
        self.window_size = window_size
        self.scale = (dim // num_heads) ** -0.5
        self.relative_position_bias_table = nn.Parameter(torch.zeros((2 * window_size - 1) ** 2, num_heads))
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def position_bias(self, window_size: int) -> torch.Tensor:
        index = relative_position_index(window_size, self.window_size)
        return self.relative_position_bias_table[index.reshape(-1)].reshape(
            window_size**2, window_size**2, self.num_heads
        ).permute(2, 0, 1)

    def forward(self, windows: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        n, length, c = windows.shape
        window_size = int(round(length**0.5))
        qkv = self.qkv(windows).reshape(n, length, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        attn = attn + self.position_bias(window_size).unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.reshape(n // nw, nw, self.num_heads, length, length) + mask[None, :, None].to(attn.dtype)
            attn = attn.reshape(n, self.num_heads, length, length)
        attn = torch.softmax(attn, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(n, length, c)
        return self.proj(out)


def effective_window(height: int, width: int, window_size: int, shift: int) -> tuple[int, int]:
    """Clamp the window to small token grids; no shift once one window covers the grid."""
    if min(height, width) <= window_size:
        return min(height, width), 0
    return window_size, shift


def shifted_window_attention(attn: WindowAttention, x: torch.Tensor, window_size: int, shift: int) -> torch.Tensor:
    """Windowed attention over a (B, H, W, C) token grid, optionally cyclically shifted."""
    b, h, w, c = x.shape
    if shift:
        x = torch.roll(x, shifts=(-shift, -shift), dims=(1, 2))
        mask = shift_attention_mask(h, w, window_size, shift)
    else:
        mask = None
    windows = window_partition(x, window_size).reshape(-1, window_size * window_size, c)
    out = attn(windows, mask).reshape(-1, window_size, window_size, c)
    out = window_reverse(out, window_size, h, w)
    if shift:
        out = torch.roll(out, shifts=(shift, shift), dims=(1, 2))
    return out


class SwinBlock(nn.Module):
    def __init__(self, dim: int, num_heads: int, window_size: int, shift: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.window_size = window_size
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, num_heads, window_size)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _, h, w, _ = x.shape
        window_size, shift = effective_window(h, w, self.window_size, self.shift)
        x = x + shifted_window_attention(self.attn, self.norm1(x), window_size, shift)
        x = x + self.mlp(self.norm2(x))
        if not torch.isfinite(x).all():
            raise NumericError("non-finite activation in Swin block")
        return x


class PatchEmbed(nn.Module):
    def __init__(self, in_channels: int, dim: int, patch_size: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch_size, stride=patch_size)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.norm(self.proj(x).permute(0, 2, 3, 1))


class PatchMerging(nn.Module):
    """2x2 token neighbourhoods -> one token with twice the width."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduction = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, c = x.shape
        x = x.reshape(b, h // 2, 2, w // 2, 2, c).permute(0, 1, 3, 4, 2, 5).reshape(b, h // 2, w // 2, 4 * c)
        return self.reduction(self.norm(x))


class PatchExpand(nn.Module):
    """One token -> 2x2 tokens with half the width (inverse layout of merging)."""

    def __init__(self, dim: int, scale: int = 2, out_dim: int | None = None):
        super().__init__()
        self.scale = scale
        self.out_dim = out_dim if out_dim is not None else dim // 2
        self.expand = nn.Linear(dim, scale * scale * self.out_dim, bias=False)
        self.norm = nn.LayerNorm(self.out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, h, w, _ = x.shape
        s = self.scale
        x = self.expand(x).reshape(b, h, w, s, s, self.out_dim)
        x = x.permute(0, 1, 3, 2, 4, 5).reshape(b, h * s, w * s, self.out_dim)
        return self.norm(x)


class FinalPatchExpand(PatchExpand):
    """Token grid back to pixel resolution; not one of the U-shape's expand stages."""


def _stage(dim: int, depth: int, heads: int, config: SwinConfig) -> nn.Sequential:
    return nn.Sequential(
        *[
            SwinBlock(dim, heads, config.window_size, 0 if k % 2 == 0 else config.window_size // 2, config.mlp_ratio)
            for k in range(depth)
        ]
    )


class Generator(nn.Module):
    """Encoder (embed, Swin stages, merging) -> bottleneck -> decoder (expanding, Swin stages).

    The decoder consumes only the bottleneck tensor; no encoder activation is
    concatenated or added into it.
    """

    def __init__(self, config: SwinConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config = config or SwinConfig()
        stages = config.num_stages
        self.embed = PatchEmbed(config.input_channels, config.embed_dim, config.patch_size)
        self.encoder = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i in range(stages - 1):
            self.encoder.append(_stage(config.stage_dim(i), config.depths[i], config.heads[i], config))
            self.merges.append(PatchMerging(config.stage_dim(i)))
        last = stages - 1
        self.bottleneck = _stage(config.stage_dim(last), config.depths[last], config.heads[last], config)
        self.expands = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for i in reversed(range(stages - 1)):
            self.expands.append(PatchExpand(config.stage_dim(i + 1)))
            self.decoder.append(_stage(config.stage_dim(i), config.depths[i], config.heads[i], config))
        self.final_expand = FinalPatchExpand(config.embed_dim, scale=config.patch_size, out_dim=config.embed_dim)
        self.head = nn.Linear(config.embed_dim, config.output_channels)
        init_parameters(self, seed)

    def encode(self, masked_image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = torch.cat([masked_image * (1 - mask), mask], dim=1)
        x = self.embed(x)
        for stage, merge in zip(self.encoder, self.merges):
            x = merge(stage(x))
        return self.bottleneck(x)

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        for expand, stage in zip(self.expands, self.decoder):
            z = stage(expand(z))
        z = self.head(self.final_expand(z))
        return (torch.tanh(z) + 1) / 2

    def forward(self, masked_image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Inpaint a batch.

        Args:
            masked_image: ``(B, 3, H, W)`` in [0, 1]; hole pixels are zeroed here regardless.
            mask: ``(B, 1, H, W)`` binary, 1 = hole.

        Returns:
            ``(B, 3, H, W)`` full-image reconstruction in [0, 1].
        """
        if masked_image.dim() != 4 or mask.dim() != 4:
            raise ShapeError("expected (B, 3, H, W) image and (B, 1, H, W) mask")
        self.config.check_size(masked_image.shape[2], masked_image.shape[3])
        out = self.decode(self.encode(masked_image, mask)).permute(0, 3, 1, 2)
        if not torch.isfinite(out).all():
            raise NumericError("generator produced non-finite output")
        return out


def composite(output: torch.Tensor, image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return mask * output + (1 - mask) * image


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def audit_skip_connections(generator: Generator, size: int = 32) -> dict:
    """Inspect the autograd graph of one forward pass for encoder->decoder shortcuts.

    The graph is walked backwards from the output while refusing to pass
    through the bottleneck node. Any encoder activation, encoder parameter or
    network input still reachable is a skip path.
    """
    captured: dict[str, torch.Tensor] = {}
    hooks = []

    def keep(name):
        def hook(_module, _inputs, output):
            captured[name] = output

        return hook

    hooks.append(generator.embed.register_forward_hook(keep("embed")))
    for i, (stage, merge) in enumerate(zip(generator.encoder, generator.merges)):
        for k, block in enumerate(stage):
            hooks.append(block.register_forward_hook(keep(f"encoder.{i}.{k}")))
        hooks.append(merge.register_forward_hook(keep(f"merge.{i}")))
    hooks.append(generator.bottleneck.register_forward_hook(keep("bottleneck")))

    image = torch.rand(1, 3, size, size, requires_grad=True)
    mask = torch.zeros(1, 1, size, size)
    try:
        out = generator(image, mask)
    finally:
        for h in hooks:
            h.remove()

    cut = captured.pop("bottleneck").grad_fn
    encoder_nodes = {t.grad_fn for t in captured.values()}
    decoder_params = {id(p) for m in (generator.expands, generator.decoder, generator.final_expand, generator.head)
                      for p in m.parameters()}
    encoder_param_ids = {id(p) for p in generator.parameters()} - decoder_params

    seen, stack = set(), [out.grad_fn]
    concat_nodes = 0
    skip_paths = 0
    while stack:
        node = stack.pop()
        if node is None or node in seen or node is cut:
            continue
        seen.add(node)
        name = type(node).__name__
        if name.startswith("CatBackward"):
            concat_nodes += 1
        if node in encoder_nodes:
            skip_paths += 1
        variable = getattr(node, "variable", None)
        if variable is not None and (variable is image or id(variable) in encoder_param_ids):
            skip_paths += 1
        stack.extend(nxt for nxt, _ in node.next_functions)

    return {
        "merge_ops": sum(isinstance(m, PatchMerging) for m in generator.modules()),
        "expand_ops": sum(type(m) is PatchExpand for m in generator.modules()),
        "stages": generator.config.num_stages,
        "decoder_concats": concat_nodes,
        "skip_paths": skip_paths,
    }
