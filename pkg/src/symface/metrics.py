"""Evaluation metrics: Fréchet distance, a perceptual distance, pixel and symmetry errors."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .diffcore import freeze
from .errors import NumericError, OrganNotFoundError, ParameterError, ShapeError
from .toyfaces import Sample, reflect

COV_JITTER = 1e-6
EIG_TOLERANCE = 1e-6


class RandomConvEncoder(nn.Module):
    """Frozen, seeded stack of stride-2 convolutions returning every stage.

    Stands in for a pretrained backbone wherever deep features are needed
    (perceptual loss, perceptual distance, Fréchet features).
    """

    def __init__(self, seed: int = 0, dims=(16, 32, 64), in_channels: int = 3):
        super().__init__()
        gen = torch.Generator().manual_seed(int(seed))
        self.stages = nn.ModuleList()
        channels = in_channels
        for d in dims:
            conv = nn.Conv2d(channels, d, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                nn.init.kaiming_normal_(conv.weight, a=0.2, nonlinearity="leaky_relu", generator=gen)
                conv.bias.zero_()
            self.stages.append(nn.Sequential(conv, nn.LeakyReLU(0.2)))
            channels = d
        freeze(self)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        out = []
        for stage in self.stages:
            x = stage(x)
            out.append(x)
        return out


class IdentityEncoder(nn.Module):
    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        return [x]


def _to_nchw(images) -> torch.Tensor:
    if isinstance(images, torch.Tensor):
        t = images
        if t.dim() == 3:
            t = t.unsqueeze(0)
        return t
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ShapeError(f"expected (N, H, W, 3) or (H, W, 3) images, got {arr.shape}")
    return torch.from_numpy(arr).permute(0, 3, 1, 2).to(torch.get_default_dtype())


@dataclass
class FeatureExtractor:
    """``flatten_pixels``, ``random_conv`` (seeded, frozen) or ``external`` (feature CSV)."""

    kind: str = "random_conv"
    seed: int = 0
    dims: tuple = (16, 32, 64)
    path: str | None = None
    _encoder: nn.Module | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("flatten_pixels", "random_conv", "external"):
            raise ParameterError(f"unknown feature extractor kind {self.kind!r}")
        if self.kind == "random_conv":
            self._encoder = RandomConvEncoder(self.seed, tuple(self.dims))
        if self.kind == "external" and not self.path:
            raise ParameterError("external extractor needs a feature-matrix path")

    @property
    def normalizes(self) -> bool:
        return self.kind == "random_conv"

    def stages(self, images) -> list[torch.Tensor]:
        x = _to_nchw(images)
        if self.kind == "flatten_pixels":
            return [x]
        if self.kind == "random_conv":
            with torch.no_grad():
                return self._encoder.to(x.dtype)(x)
        raise ParameterError("external features are precomputed; no per-image stages available")

    def features(self, images=None) -> np.ndarray:
        """One row per image: raw pixels, or the pooled last conv stage."""
        if self.kind == "external":
            return read_feature_csv(self.path)
        x = _to_nchw(images)
        if self.kind == "flatten_pixels":
            return x.reshape(x.shape[0], -1).double().numpy()
        return self.stages(x)[-1].mean(dim=(2, 3)).double().numpy()


def read_feature_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if rows:
                    raise
                continue  # header line
    if not rows:
        raise ParameterError(f"{path}: no feature rows")
    matrix = np.asarray(rows, dtype=np.float64)
    if not np.isfinite(matrix).all():
        raise NumericError(f"{path}: non-finite features")
    return matrix


def write_feature_csv(matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(np.asarray(matrix).tolist())


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((matrix + matrix.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) between Gaussian fits.

    The trace of the product's square root is taken from the eigenvalues of the
    symmetric matrix ``S_a^(1/2) S_b S_a^(1/2)``, which shares them with
    ``S_a S_b``.
    """
    a = np.asarray(features_a, dtype=np.float64)
    b = np.asarray(features_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature matrices must be N x d with equal d, got {a.shape} and {b.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise NumericError("features contain non-finite values")
    d = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False)) + COV_JITTER * np.eye(d)
    cov_b = np.atleast_2d(np.cov(b, rowvar=False)) + COV_JITTER * np.eye(d)

    root_a = _psd_sqrt(cov_a)
    middle = root_a @ cov_b @ root_a
    vals = np.linalg.eigvalsh((middle + middle.T) / 2)
    if vals.min() < -EIG_TOLERANCE:
        raise NumericError(f"covariance product has a negative eigenvalue {vals.min():.3e}")
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()

    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


def _unit(feat: torch.Tensor) -> torch.Tensor:
    return feat / (feat.norm(dim=1, keepdim=True) + 1e-10)


def perceptual_distance(extractor: FeatureExtractor, x, xhat) -> float:
    """LPIPS-shaped distance with uniform channel weights.

    Per stage: normalize each spatial position's channel vector (deep
    extractors only), take the squared distance summed over channels, average
    over positions and images. Stages are summed.
    """
    fx, fy = extractor.stages(x), extractor.stages(xhat)
    total = 0.0
    for a, b in zip(fx, fy):
        if a.shape != b.shape:
            raise ShapeError(f"stage shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")
        if extractor.normalizes:
            a, b = _unit(a), _unit(b)
        total += float(((a - b) ** 2).sum(dim=1).mean())
    return total


def pixel_error(x: np.ndarray, xhat: np.ndarray, norm: str = "L1") -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(xhat, dtype=np.float64)
    return float(np.abs(diff).mean() if norm == "L1" else (diff**2).mean())


def symmetry_support(sample: Sample, organ: str) -> np.ndarray:
    """Right-side organ pixels whose mirror position holds the left-side organ."""
    part = sample.parts.mask(organ).astype(bool)
    cols = np.arange(part.shape[1])[None, :]
    left = part & (cols < sample.midline_x)
    right = part & (cols > sample.midline_x)
    if not left.any() or not right.any():
        raise OrganNotFoundError(f"organ {organ!r} is not present on both sides of sample seed={sample.seed}")
    support = right & reflect(left, sample.midline_x)
    if not support.any():
        raise OrganNotFoundError(f"organ {organ!r} has no mirror-overlapping support")
    return support


def symmetry_error(sample: Sample, inpainted: np.ndarray, organ: str = "eye") -> float:
    """Mean |I(r, c) - I(r, 2*midline - c)| over the organ's mirror-intersected support."""
    support = symmetry_support(sample, organ)
    rows, cols = np.nonzero(support)
    img = np.asarray(inpainted, dtype=np.float64)
    return float(np.abs(img[rows, cols] - img[rows, 2 * sample.midline_x - cols]).mean())


def write_report(metrics: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in metrics.items():
            writer.writerow([name, repr(float(value))])
