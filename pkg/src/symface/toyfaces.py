"""Procedural toy faces with exact part labels.

Faces are assembled from geometric primitives painted back to front onto an
indexed label map, then colored per label. Every left/right primitive is
evaluated on ``|c - midline_x|`` so that, with zero asymmetry, the image and
the labels are exactly invariant under reflection about ``midline_x``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import DatasetIntegrityError, ParameterError

PART_CODES = {
    "background": 0,
    "skin": 1,
    "eye": 2,
    "hair": 3,
    "lip": 4,
    "cloth": 5,
    "ear": 6,
}
PARTS = ("skin", "eye", "hair", "lip", "cloth", "ear")
FORMAT_VERSION = 1

# Colors for the indexed part PNGs, purely for viewing.
_PALETTE = [
    (0, 0, 0),
    (230, 180, 150),
    (40, 90, 200),
    (120, 70, 20),
    (200, 30, 60),
    (60, 160, 80),
    (240, 140, 40),
]


@dataclass(frozen=True)
class PartMaskSet:
    """Disjoint cover of an image by the six face parts plus background.

    Stored as one indexed label map; the per-part binary masks are views
    computed on demand, so disjointness and full cover hold by construction.
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ParameterError(f"label map must be 2-D, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > max(PART_CODES.values())):
            raise ParameterError(f"label map contains codes outside 0..6: {np.unique(labels)}")
        object.__setattr__(self, "labels", labels.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def mask(self, name: str) -> np.ndarray:
        if name not in PART_CODES:
            raise ParameterError(f"unknown part {name!r}")
        return (self.labels == PART_CODES[name]).astype(np.uint8)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: self.mask(name) for name in PART_CODES}

    def face_mask(self) -> np.ndarray:
        return (self.labels != PART_CODES["background"]).astype(np.uint8)

    def __eq__(self, other):
        return isinstance(other, PartMaskSet) and np.array_equal(self.labels, other.labels)


@dataclass
class Sample:
    image: np.ndarray  # H x W x 3 in [0, 1]
    parts: PartMaskSet
    midline_x: int
    asymmetry: float
    seed: int
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.image.shape[0]


def reflect(array: np.ndarray, midline_x: int) -> np.ndarray:
    """Reflect columns about ``midline_x`` (column c maps to 2*midline_x - c).

    Columns whose mirror partner falls outside the image are left untouched.
    """
    out = np.array(array, copy=True)
    width = array.shape[1]
    cols = np.arange(width)
    partner = 2 * midline_x - cols
    ok = (partner >= 0) & (partner < width)
    out[:, cols[ok]] = array[:, partner[ok]]
    return out


def _ellipse(rr, cc, cy, cx, ry, rx):
    return ((rr - cy) / ry) ** 2 + ((cc - cx) / rx) ** 2 <= 1.0


def generate_face(seed: int, size: int = 64, asymmetry: float = 0.0, *, with_ears: bool = True) -> Sample:
    """Render one toy face.

    Args:
        seed: RNG seed; the result is a pure function of all arguments.
        size: image side in pixels, at least 32 and a multiple of 16.
        asymmetry: amount of right-side color and position deviation in [0, 1].
        with_ears: set False to produce a face with no ear part at all.
    """
    if not isinstance(size, (int, np.integer)) or size < 32 or size % 16:
        raise ParameterError(f"size must be >= 32 and a multiple of 16, got {size}")
    if not 0.0 <= asymmetry <= 1.0:
        raise ParameterError(f"asymmetry must lie in [0, 1], got {asymmetry}")

    rng = np.random.default_rng(seed)
    s = float(size)
    mid = size // 2
    rr, cc = np.mgrid[0:size, 0:size].astype(np.float64)
    adx = np.abs(cc - mid)
    right = cc > mid

    # geometry, all relative to the image side
    cy = s * rng.uniform(0.44, 0.50)
    rx = s * rng.uniform(0.23, 0.27)
    ry = s * rng.uniform(0.30, 0.34)
    eye_y = cy - s * rng.uniform(0.04, 0.08)
    eye_x = s * rng.uniform(0.10, 0.12)
    eye_r = s * rng.uniform(0.040, 0.050)
    lip_y = cy + s * rng.uniform(0.16, 0.20)
    lip_rx = s * rng.uniform(0.07, 0.10)
    lip_ry = s * rng.uniform(0.025, 0.035)
    ear_y = cy + s * rng.uniform(-0.02, 0.04)
    ear_ry = s * rng.uniform(0.07, 0.09)
    ear_rx = s * rng.uniform(0.045, 0.055)
    hair_cut = cy - s * rng.uniform(0.02, 0.08)
    cloth_top = cy + ry * rng.uniform(0.80, 0.90)
    shoulder = s * rng.uniform(0.38, 0.46)

    # right-side perturbation offsets (in |dx| terms), scaled by asymmetry below
    eye_shift = rng.uniform(-1.0, 1.0, size=2) * s * 0.04
    ear_shift = rng.uniform(-1.0, 1.0, size=2) * s * 0.04
    color_shift = {name: rng.uniform(-0.35, 0.35, size=3) for name in ("skin", "eye", "lip", "ear")}

    palette = {
        "background": rng.uniform(0.05, 0.35, size=3),
        "skin": rng.uniform([0.65, 0.45, 0.35], [0.95, 0.75, 0.60]),
        "eye": rng.uniform(0.05, 0.45, size=3),
        "hair": rng.uniform(0.05, 0.45, size=3),
        "lip": rng.uniform([0.55, 0.10, 0.15], [0.85, 0.35, 0.40]),
        "cloth": rng.uniform(0.10, 0.90, size=3),
        "ear": rng.uniform([0.60, 0.40, 0.30], [0.90, 0.70, 0.55]),
    }

    a = float(asymmetry)
    labels = np.zeros((size, size), dtype=np.uint8)

    hair = _ellipse(rr, adx, cy - 0.04 * s, 0.0, ry * 1.12, rx * 1.18) & (rr <= hair_cut)
    labels[hair] = PART_CODES["hair"]

    cloth = (rr >= cloth_top) & (adx <= shoulder * (0.6 + 0.4 * (rr - cloth_top) / max(s - cloth_top, 1.0)))
    labels[cloth] = PART_CODES["cloth"]

    if with_ears:
        ear_x = rx + 0.4 * ear_rx
        ear_left = _ellipse(rr, adx, ear_y, ear_x, ear_ry, ear_rx) & ~right
        ear_right = _ellipse(rr, adx, ear_y + a * ear_shift[0], ear_x + a * ear_shift[1], ear_ry, ear_rx) & right
        labels[ear_left | ear_right] = PART_CODES["ear"]

    skin = _ellipse(rr, adx, cy, 0.0, ry, rx)
    labels[skin] = PART_CODES["skin"]

    eye_left = _ellipse(rr, adx, eye_y, eye_x, eye_r, eye_r) & ~right
    eye_right = _ellipse(rr, adx, eye_y + a * eye_shift[0], eye_x + a * eye_shift[1], eye_r, eye_r) & right
    labels[eye_left | eye_right] = PART_CODES["eye"]

    lip = _ellipse(rr, adx, lip_y, 0.0, lip_ry, lip_rx)
    labels[lip] = PART_CODES["lip"]

    # shading terms depend on row and |dx| only, keeping mirror invariance
    image = np.zeros((size, size, 3), dtype=np.float64)
    shade = {
        "background": 0.15 * rr / s,
        "skin": 0.18 * (adx / rx) ** 2 + 0.08 * (rr - cy) / ry,
        "hair": 0.12 * np.cos(adx / max(1.5, 0.05 * s)),
        "cloth": 0.10 * (rr - cloth_top) / s,
        "lip": 0.25 * np.clip((rr - lip_y) / lip_ry, -1, 1),
        "ear": 0.15 * ((rr - ear_y) / ear_ry) ** 2,
    }
    # eye: dark pupil toward the disc center
    eye_cx = np.where(right, eye_x + a * eye_shift[1], eye_x)
    eye_cy = np.where(right, eye_y + a * eye_shift[0], eye_y)
    eye_d = np.sqrt((rr - eye_cy) ** 2 + (adx - eye_cx) ** 2) / eye_r
    shade["eye"] = 0.5 * (1.0 - np.clip(eye_d, 0.0, 1.0))

    for name, code in PART_CODES.items():
        sel = labels == code
        if not sel.any():
            continue
        color = palette[name][None, :] * (1.0 - shade[name][sel][:, None])
        if name in color_shift and a > 0:
            color = color + a * right[sel][:, None] * color_shift[name][None, :]
        image[sel] = color
    np.clip(image, 0.0, 1.0, out=image)

    return Sample(
        image=image,
        parts=PartMaskSet(labels),
        midline_x=mid,
        asymmetry=float(asymmetry),
        seed=int(seed),
        meta={"with_ears": with_ears},
    )


def generate_faces(seeds: Iterable[int], size: int = 64, asymmetry: float = 0.0) -> list[Sample]:
    return [generate_face(seed, size, asymmetry) for seed in seeds]


def _index_name(i: int) -> str:
    return f"{i:06d}.png"


def save_part_png(labels: np.ndarray, path) -> None:
    img = Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="P")
    img.putpalette([v for rgb in _PALETTE for v in rgb])
    img.save(path)


def load_part_png(path) -> np.ndarray:
    with Image.open(path) as img:
        if img.mode not in ("P", "L"):
            raise DatasetIntegrityError(f"{path}: part image must be 8-bit indexed, got mode {img.mode}")
        return np.array(img, dtype=np.uint8)


def save_image_png(image: np.ndarray, path) -> None:
    data = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path)


def load_image_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def write_dataset(samples: Sequence[Sample], directory) -> dict:
    """Write samples as PNG pairs plus ``manifest.json``; returns the manifest."""
    if not samples:
        raise ParameterError("cannot write an empty dataset")
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "parts").mkdir(parents=True, exist_ok=True)
    sizes = {s.size for s in samples}
    if len(sizes) != 1:
        raise ParameterError(f"all samples must share one size, got {sorted(sizes)}")
    for i, sample in enumerate(samples):
        save_image_png(sample.image, directory / "images" / _index_name(i))
        save_part_png(sample.parts.labels, directory / "parts" / _index_name(i))
    manifest = {
        "format_version": FORMAT_VERSION,
        "count": len(samples),
        "size": sizes.pop(),
        "midline_x": [int(s.midline_x) for s in samples],
        "seeds": [int(s.seed) for s in samples],
        "asymmetry": [float(s.asymmetry) for s in samples],
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    os.replace(tmp, directory / "manifest.json")
    return manifest


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise DatasetIntegrityError(f"{directory}: manifest.json is missing")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetIntegrityError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DatasetIntegrityError(f"{path}: unsupported format_version {manifest.get('format_version')!r}")
    count = manifest.get("count")
    for key in ("seeds", "asymmetry"):
        if len(manifest.get(key, [])) != count:
            raise DatasetIntegrityError(f"{path}: manifest field {key!r} does not match count={count}")
    return manifest


def read_dataset(directory, limit: int | None = None) -> list[Sample]:
    directory = Path(directory)
    manifest = read_manifest(directory)
    count = manifest["count"] if limit is None else min(limit, manifest["count"])
    size = manifest["size"]
    midlines = manifest.get("midline_x", [size // 2] * manifest["count"])
    samples = []
    for i in range(count):
        name = _index_name(i)
        image_path = directory / "images" / name
        part_path = directory / "parts" / name
        for path in (image_path, part_path):
            if not path.is_file():
                raise DatasetIntegrityError(f"sample {i} ({name}): missing file {path.relative_to(directory)}")
        image = load_image_png(image_path)
        labels = load_part_png(part_path)
        if image.shape[:2] != (size, size) or labels.shape != (size, size):
            raise DatasetIntegrityError(f"sample {i} ({name}): expected {size}x{size}, got {image.shape[:2]}")
        if labels.max() > max(PART_CODES.values()):
            raise DatasetIntegrityError(f"sample {i} ({name}): part codes outside the palette")
        samples.append(
            Sample(
                image=image,
                parts=PartMaskSet(labels),
                midline_x=int(midlines[i]),
                asymmetry=float(manifest["asymmetry"][i]),
                seed=int(manifest["seeds"][i]),
            )
        )
    return samples
