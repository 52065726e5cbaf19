"""Hole masks: random training masks, organ masks, growth toward half-face, tiles.

Convention everywhere: 1 marks a missing pixel the inpainter must fill.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from .errors import MaskGenerationError, OrganNotFoundError, ParameterError
from .toyfaces import PART_CODES, Sample

SIDES = ("left", "right")
ORGAN_BOX_MARGIN = 2


@dataclass(frozen=True)
class Mask:
    grid: np.ndarray
    spec_tag: str = ""

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2:
            raise ParameterError(f"mask grid must be 2-D, got {grid.shape}")
        if not np.isin(grid, (0, 1)).all():
            raise ParameterError("mask grid must be binary")
        object.__setattr__(self, "grid", grid.astype(np.uint8))

    @property
    def hole_fraction(self) -> float:
        return float(self.grid.mean())

    def __or__(self, other: "Mask") -> "Mask":
        return Mask(self.grid | other.grid, f"({self.spec_tag})|({other.spec_tag})")

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.grid, other.grid)


@dataclass(frozen=True)
class MaskSpec:
    """Parameters of the random stroke-and-rectangle generator.

    Pixel quantities are given for a 64 px image and scaled linearly with
    the requested size.
    """

    kind: str
    strokes: tuple[int, int]
    thickness: tuple[float, float]
    rectangles: tuple[int, int] = (0, 0)
    rect_size: tuple[float, float] = (0.10, 0.30)  # fraction of image side
    fraction: tuple[float, float] = (0.0, 0.9)
    max_retries: int = 500

    def __post_init__(self):
        lo, hi = self.fraction
        if not 0.0 <= lo < hi <= 0.9:
            raise ParameterError(f"fraction bounds must satisfy 0 <= lo < hi <= 0.9, got {self.fraction}")
        if self.kind not in ("aggressive", "narrow", "medium", "wide"):
            raise ParameterError(f"unknown mask kind {self.kind!r}")
        for name in ("strokes", "thickness", "rectangles", "rect_size"):
            a, b = getattr(self, name)
            if a < 0 or a > b:
                raise ParameterError(f"bad {name} range {(a, b)}")

    @property
    def tag(self) -> str:
        return (
            f"{self.kind}(strokes={self.strokes},thickness={self.thickness},"
            f"rects={self.rectangles},fraction={self.fraction})"
        )


PRESETS = {
    "narrow": MaskSpec("narrow", strokes=(1, 4), thickness=(2, 6), fraction=(0.02, 0.15)),
    "medium": MaskSpec("medium", strokes=(2, 6), thickness=(6, 14), rectangles=(0, 2), fraction=(0.10, 0.35)),
    "wide": MaskSpec(
        "wide", strokes=(3, 8), thickness=(10, 20), rectangles=(1, 3), rect_size=(0.15, 0.40), fraction=(0.25, 0.55)
    ),
    "aggressive": MaskSpec("aggressive", strokes=(1, 8), thickness=(2, 20), rectangles=(0, 3), fraction=(0.02, 0.55)),
}


def preset(name: str, **overrides) -> MaskSpec:
    if name not in PRESETS:
        raise ParameterError(f"unknown mask preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides) if overrides else PRESETS[name]


def _draw_attempt(spec: MaskSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    scale = size / 64.0
    canvas = Image.new("L", (size, size), 0)
    draw = ImageDraw.Draw(canvas)

    for _ in range(rng.integers(spec.rectangles[0], spec.rectangles[1] + 1)):
        h, w = rng.uniform(*spec.rect_size, size=2) * size
        y0, x0 = rng.uniform(0, size - h), rng.uniform(0, size - w)
        draw.rectangle([x0, y0, x0 + w, y0 + h], fill=1)

    for _ in range(rng.integers(spec.strokes[0], spec.strokes[1] + 1)):
        width = max(1, int(round(rng.uniform(*spec.thickness) * scale)))
        x, y = rng.uniform(0, size, size=2)
        points = [(x, y)]
        angle = rng.uniform(0, 2 * np.pi)
        for _ in range(rng.integers(2, 6)):
            angle += rng.uniform(-np.pi / 2, np.pi / 2)
            length = rng.uniform(0.1, 0.4) * size
            x = float(np.clip(x + length * np.cos(angle), 0, size - 1))
            y = float(np.clip(y + length * np.sin(angle), 0, size - 1))
            points.append((x, y))
        draw.line(points, fill=1, width=width)
        r = width / 2.0
        for px, py in points:
            draw.ellipse([px - r, py - r, px + r, py + r], fill=1)

    return np.asarray(canvas, dtype=np.uint8)


def random_mask(spec: MaskSpec, seed: int, size: int = 64) -> Mask:
    """Sample a stroke/rectangle mask whose hole fraction lies in ``spec.fraction``.

    The ``aggressive`` kind picks narrow, medium or wide uniformly per call and
    uses that preset's own bounds. Attempts are redrawn until the fraction fits
    or ``spec.max_retries`` is exhausted.
    """
    rng = np.random.default_rng(seed)
    if spec.kind == "aggressive":
        sub = PRESETS[("narrow", "medium", "wide")[rng.integers(0, 3)]]
        spec = replace(sub, max_retries=spec.max_retries)
    lo, hi = spec.fraction
    best = None
    for _ in range(spec.max_retries):
        grid = _draw_attempt(spec, rng, size)
        frac = float(grid.mean())
        if lo <= frac <= hi:
            return Mask(grid, f"{spec.tag}@seed={seed}")
        if best is None or abs(frac - (lo + hi) / 2) < abs(best - (lo + hi) / 2):
            best = frac
    raise MaskGenerationError(
        f"could not reach hole fraction in [{lo}, {hi}] after {spec.max_retries} attempts "
        f"(closest achieved {best:.4f})",
        achieved=best,
    )


def _side_columns(size: int, midline_x: int, side: str) -> np.ndarray:
    if side not in SIDES:
        raise ParameterError(f"side must be 'left' or 'right', got {side!r}")
    cols = np.arange(size)
    return cols < midline_x if side == "left" else cols > midline_x


def organ_mask(sample: Sample, organ: str, side: str) -> Mask:
    """Bounding box, dilated by two pixels, of one side's copy of ``organ``."""
    if organ not in PART_CODES or organ == "background":
        raise ParameterError(f"unknown organ {organ!r}")
    h, w = sample.parts.shape
    part = sample.parts.mask(organ).astype(bool)
    part &= _side_columns(w, sample.midline_x, side)[None, :]
    if not part.any():
        raise OrganNotFoundError(f"organ {organ!r} not present on the {side} side of sample seed={sample.seed}")
    rows = np.flatnonzero(part.any(axis=1))
    cols = np.flatnonzero(part.any(axis=0))
    r0, r1 = max(rows[0] - ORGAN_BOX_MARGIN, 0), min(rows[-1] + ORGAN_BOX_MARGIN, h - 1)
    c0, c1 = max(cols[0] - ORGAN_BOX_MARGIN, 0), min(cols[-1] + ORGAN_BOX_MARGIN, w - 1)
    grid = np.zeros((h, w), dtype=np.uint8)
    grid[r0 : r1 + 1, c0 : c1 + 1] = 1
    return Mask(grid, f"organ({organ},{side})")


def half_face_mask(sample: Sample, side: str) -> Mask:
    h, w = sample.parts.shape
    grid = sample.parts.face_mask() & _side_columns(w, sample.midline_x, side)[None, :]
    return Mask(grid.astype(np.uint8), f"half_face({side})")


def hole_side(mask: Mask, midline_x: int) -> str:
    cols = np.nonzero(mask.grid)[1]
    if cols.size == 0:
        raise ParameterError("mask has no hole pixels")
    return "left" if cols.mean() < midline_x else "right"


def grow_mask(mask: Mask, steps: int, sample: Sample) -> Mask:
    """Dilate the hole by ``steps`` pixels (square element) within its half-face.

    The result always contains the input, so growth is monotone in ``steps``
    and saturates at ``input | half_face_mask(side)``.
    """
    if steps < 0:
        raise ParameterError(f"steps must be >= 0, got {steps}")
    if steps == 0:
        return Mask(mask.grid.copy(), mask.spec_tag)
    side = hole_side(mask, sample.midline_x)
    region = half_face_mask(sample, side).grid.astype(bool)
    grown = ndimage.binary_dilation(mask.grid.astype(bool), structure=np.ones((3, 3), bool), iterations=steps)
    grid = (grown & region) | mask.grid.astype(bool)
    return Mask(grid.astype(np.uint8), f"grow({mask.spec_tag},{steps})")


def tile_grid(K: int, size: int) -> int:
    if K <= 0 or size % K:
        raise ParameterError(f"tile size K={K} does not divide image side {size}")
    return size // K


def block_mask(i: int, j: int, K: int, size: int) -> Mask:
    """The K x K square at tile row ``i``, tile column ``j``."""
    n = tile_grid(K, size)
    if not (0 <= i < n and 0 <= j < n):
        raise ParameterError(f"tile ({i}, {j}) outside the {n}x{n} grid for K={K}, size={size}")
    grid = np.zeros((size, size), dtype=np.uint8)
    grid[i * K : (i + 1) * K, j * K : (j + 1) * K] = 1
    return Mask(grid, f"block({i},{j},K={K})")


def save_mask_png(mask: Mask | np.ndarray, path) -> None:
    grid = mask.grid if isinstance(mask, Mask) else np.asarray(mask)
    Image.fromarray((grid.astype(np.uint8) * 255), mode="L").save(path)


def load_mask_png(path) -> Mask:
    with Image.open(path) as img:
        data = np.asarray(img.convert("L"))
    return Mask((data >= 128).astype(np.uint8), f"file({Path(path).name})")
