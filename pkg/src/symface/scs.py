"""Occlusion-influence heatmaps and the symmetry concentration score (SCS).

For a held-out region M (the right eye, or the right half of the face) every
K x K tile is additionally masked and the change it causes in the
reconstruction of M is recorded. SCS measures how much of that influence,
after per-K max-normalization, falls on tiles covering the mirror image of M.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import torch
from PIL import Image
from scipy import ndimage

from .errors import ParameterError
from .generator import Generator, composite
from .masking import Mask, block_mask, half_face_mask, organ_mask, tile_grid
from .toyfaces import PART_CODES, Sample, reflect

KS = (16, 32, 64)
GRAY = 0.5
MIRROR_TARGET_PARTS = ("eye", "lip", "ear")


class Inpainter(Protocol):
    def __call__(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class ConstantFill:
    value: float = GRAY

    def __call__(self, image, mask):
        out = np.array(image, dtype=np.float64, copy=True)
        out[np.asarray(mask, dtype=bool)] = self.value
        return out


@dataclass(frozen=True)
class MirrorFill:
    """Copy each hole pixel from its horizontal mirror; gray if that source is also missing."""

    midline_x: int | None = None

    def __call__(self, image, mask):
        image = np.asarray(image, dtype=np.float64)
        hole = np.asarray(mask, dtype=bool)
        width = image.shape[1]
        mid = width // 2 if self.midline_x is None else self.midline_x
        out = image.copy()
        rows, cols = np.nonzero(hole)
        src = 2 * mid - cols
        ok = (src >= 0) & (src < width)
        ok[ok] &= ~hole[rows[ok], src[ok]]
        out[rows, cols] = GRAY
        out[rows[ok], cols[ok]] = image[rows[ok], src[ok]]
        return out


@dataclass(frozen=True)
class LocalFill:
    """Fill holes from the mean of known pixels in a (2r+1)^2 window, repeated until closed."""

    radius: int = 5

    def __call__(self, image, mask):
        image = np.asarray(image, dtype=np.float64)
        known = ~np.asarray(mask, dtype=bool)
        out = image * known[..., None]
        kernel = np.ones((2 * self.radius + 1, 2 * self.radius + 1))
        while not known.all():
            counts = ndimage.correlate(known.astype(np.float64), kernel, mode="constant")
            fillable = ~known & (counts > 0)
            if not fillable.any():
                out[~known] = GRAY
                break
            sums = np.stack(
                [ndimage.correlate(out[..., ch], kernel, mode="constant") for ch in range(out.shape[2])], axis=-1
            )
            out[fillable] = sums[fillable] / counts[fillable][:, None]
            known = known | fillable
        return out


@dataclass
class ModelInpainter:
    generator: Generator
    composite: bool = True

    def __call__(self, image, mask):
        dtype = next(self.generator.parameters()).dtype
        img = torch.from_numpy(np.asarray(image, dtype=np.float64)).permute(2, 0, 1)[None].to(dtype)
        m = torch.from_numpy(np.asarray(mask, dtype=np.float64))[None, None].to(dtype)
        with torch.no_grad():
            out = self.generator(img * (1 - m), m)
            if self.composite:
                out = composite(out, img, m)
        return out[0].permute(1, 2, 0).double().numpy()


def parse_inpainter(spec: str, load_generator: Callable[[str], Generator] | None = None) -> Inpainter:
    """``mirror`` | ``constant:V`` | ``local:R`` | ``model:CKPT``."""
    kind, _, arg = spec.partition(":")
    try:
        if kind == "mirror":
            return MirrorFill()
        if kind == "constant":
            return ConstantFill(float(arg) if arg else GRAY)
        if kind == "local":
            return LocalFill(int(arg) if arg else 5)
    except ValueError as exc:
        raise ParameterError(f"bad inpainter argument in {spec!r}") from exc
    if kind == "model" and arg:
        if load_generator is None:
            from .checkpoint import load_generator as load_generator
        return ModelInpainter(load_generator(arg))
    raise ParameterError(f"unknown inpainter {spec!r}; use mirror, constant:V, local:R or model:CKPT")


def _grid(mask) -> np.ndarray:
    return (mask.grid if isinstance(mask, Mask) else np.asarray(mask)).astype(bool)


def influence(inpainter: Inpainter, sample: Sample, region, tile: tuple[int, int], K: int,
              baseline: np.ndarray | None = None) -> float:
    """Mean over pixels of ``region`` (channel-averaged) of |A - B|, where A
    inpaints ``region`` alone and B inpaints ``region`` plus the tile."""
    held = _grid(region)
    block = block_mask(tile[0], tile[1], K, sample.size).grid.astype(bool)
    if (block & held).any():
        raise ParameterError(f"tile {tile} at K={K} overlaps the held-out region")
    if baseline is None:
        baseline = inpainter(sample.image, held.astype(np.uint8))
    occluded = inpainter(sample.image, (held | block).astype(np.uint8))
    return float(np.abs(baseline - occluded)[held].mean())


@dataclass
class InfluenceHeatmap:
    K: int
    values: np.ndarray  # (n, n); excluded tiles hold 0
    excluded: np.ndarray  # (n, n) bool
    organ_mask: np.ndarray
    face_mask: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def tiles(self):
        for i in range(self.n):
            for j in range(self.n):
                yield i, j

    def normalized(self) -> np.ndarray:
        peak = self.values[~self.excluded].max(initial=0.0)
        return np.zeros_like(self.values) if peak <= 0 else self.values / peak

    def tile_overlap(self, region: np.ndarray) -> np.ndarray:
        """(n, n) bool: which tiles share at least one pixel with ``region``."""
        n, K = self.n, self.K
        return region.reshape(n, K, n, K).any(axis=(1, 3))


def eligible_tiles(held: np.ndarray, face: np.ndarray, K: int) -> np.ndarray:
    size = held.shape[0]
    n = tile_grid(K, size)
    touches_face = face.reshape(n, K, n, K).any(axis=(1, 3))
    touches_held = held.reshape(n, K, n, K).any(axis=(1, 3))
    return touches_face & ~touches_held


def heatmap(inpainter: Inpainter, sample: Sample, region, K: int, workers: int = 1) -> InfluenceHeatmap:
    """Influence of every eligible K x K tile on the reconstruction of ``region``.

    Tiles entirely in the background, or touching the region itself, are
    excluded. The result does not depend on ``workers``.
    """
    size = sample.size
    n = tile_grid(K, size)
    held = _grid(region)
    face = sample.parts.face_mask().astype(bool)
    eligible = eligible_tiles(held, face, K)
    baseline = inpainter(sample.image, held.astype(np.uint8))
    todo = [(i, j) for i in range(n) for j in range(n) if eligible[i, j]]

    def one(tile):
        return influence(inpainter, sample, held, tile, K, baseline=baseline)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, todo))
    else:
        results = [one(t) for t in todo]

    values = np.zeros((n, n))
    for (i, j), v in zip(todo, results):
        values[i, j] = v
    return InfluenceHeatmap(K=K, values=values, excluded=~eligible, organ_mask=held, face_mask=face)


def target_regions(sample: Sample, target: str) -> tuple[np.ndarray, np.ndarray]:
    """Held-out region M (right side) and the mirror region R whose influence SCS rewards."""
    if target == "eye":
        held = organ_mask(sample, "eye", "right").grid.astype(bool)
        mirror = reflect(held, sample.midline_x)
    elif target in ("half", "half_face"):
        held = half_face_mask(sample, "right").grid.astype(bool)
        organs = np.isin(sample.parts.labels, [PART_CODES[p] for p in MIRROR_TARGET_PARTS])
        mirror = reflect(held & organs, sample.midline_x)
    else:
        raise ParameterError(f"target must be 'eye' or 'half_face', got {target!r}")
    return held, mirror.astype(bool)


@dataclass
class ScsResult:
    score: float
    per_k: dict
    heatmaps: dict = field(repr=False)
    held: np.ndarray = field(repr=False)
    mirror: np.ndarray = field(repr=False)


def scs_from_heatmaps(heatmaps: Sequence[InfluenceHeatmap], mirror: np.ndarray) -> tuple[float, dict]:
    per_k = {}
    for hm in heatmaps:
        on_mirror = hm.tile_overlap(mirror) & ~hm.excluded
        per_k[hm.K] = float(hm.normalized()[on_mirror].mean()) if on_mirror.any() else 0.0
    return float(np.mean(list(per_k.values()))), per_k


def symmetry_concentration(inpainter: Inpainter, sample: Sample, target: str = "eye",
                           ks: Sequence[int] = KS, workers: int = 1) -> ScsResult:
    held, mirror = target_regions(sample, target)
    maps = {K: heatmap(inpainter, sample, held, K, workers=workers) for K in ks}
    score, per_k = scs_from_heatmaps(list(maps.values()), mirror)
    return ScsResult(score=score, per_k=per_k, heatmaps=maps, held=held, mirror=mirror)


def scs(inpainter: Inpainter, sample: Sample, target: str = "eye", ks: Sequence[int] = KS, workers: int = 1) -> float:
    return symmetry_concentration(inpainter, sample, target, ks, workers).score


def face_boundary(face: np.ndarray) -> np.ndarray:
    face = face.astype(bool)
    return face & ~ndimage.binary_erosion(face, structure=np.ones((3, 3), bool), border_value=0)


def render(hm: InfluenceHeatmap, path, draw_boundary: bool = True) -> np.ndarray:
    """Save the heatmap as an RGB PNG at image resolution; returns the pixel array.

    Brightness is the max-normalized influence (excluded tiles dark); the face
    border is drawn in red.
    """
    tile = np.ones((hm.K, hm.K))
    gray = np.kron(hm.normalized() * ~hm.excluded, tile)
    rgb = np.repeat(np.rint(gray * 255).astype(np.uint8)[..., None], 3, axis=2)
    if draw_boundary:
        rgb[face_boundary(hm.face_mask)] = (255, 0, 0)
    Image.fromarray(rgb, mode="RGB").save(path)
    return rgb


CSV_FIELDS = ("i", "j", "K", "value", "excluded")


def write_heatmap_csv(heatmaps: Sequence[InfluenceHeatmap], path) -> int:
    rows = 0
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for hm in heatmaps:
            for i, j in hm.tiles():
                writer.writerow([i, j, hm.K, repr(float(hm.values[i, j])), int(hm.excluded[i, j])])
                rows += 1
    return rows


def read_heatmap_csv(path) -> dict[int, dict[str, np.ndarray]]:
    """{K: {'values': (n, n), 'excluded': (n, n) bool}} from a heatmap CSV."""
    entries: dict[int, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            entries.setdefault(int(row["K"]), []).append(
                (int(row["i"]), int(row["j"]), float(row["value"]), bool(int(row["excluded"])))
            )
    out = {}
    for K, items in entries.items():
        n = max(i for i, *_ in items) + 1
        values = np.zeros((n, n))
        excluded = np.zeros((n, n), dtype=bool)
        for i, j, v, e in items:
            values[i, j] = v
            excluded[i, j] = e
        out[K] = {"values": values, "excluded": excluded}
    return out


def write_scs_outputs(result: ScsResult, directory, draw_boundary: bool = True) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for K, hm in result.heatmaps.items():
        paths[f"heatmap_K{K}"] = directory / f"heatmap_K{K}.png"
        render(hm, paths[f"heatmap_K{K}"], draw_boundary)
    paths["csv"] = directory / "heatmap.csv"
    write_heatmap_csv(list(result.heatmaps.values()), paths["csv"])
    return paths
