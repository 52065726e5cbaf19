"""Frozen part segmentation: exact oracle for toy data, or an external process."""

from __future__ import annotations

import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError, SegmentationError
from .toyfaces import PART_CODES, PartMaskSet, Sample, save_image_png


@dataclass(frozen=True)
class Segmenter:
    """``mode='oracle'`` returns ground-truth parts; ``mode='external'`` runs
    ``<command> <input.png> <output.png>`` and reads back an indexed part image.
    """

    mode: str = "oracle"
    command: str | None = None
    timeout: float = 60.0

    def __post_init__(self):
        if self.mode not in ("oracle", "external"):
            raise ParameterError(f"unknown segmenter mode {self.mode!r}")
        if self.mode == "external" and not self.command:
            raise ParameterError("external segmenter needs a command")

    def segment(self, sample_or_image) -> PartMaskSet:
        if self.mode == "oracle":
            if not isinstance(sample_or_image, Sample):
                raise SegmentationError("oracle segmentation needs a Sample with ground-truth parts")
            return PartMaskSet(sample_or_image.parts.labels.copy())
        image = sample_or_image.image if isinstance(sample_or_image, Sample) else sample_or_image
        return self._run_external(np.asarray(image, dtype=np.float64))

    __call__ = segment

    def _run_external(self, image: np.ndarray) -> PartMaskSet:
        with tempfile.TemporaryDirectory(prefix="symface-seg-") as tmp:
            src, dst = Path(tmp) / "input.png", Path(tmp) / "output.png"
            save_image_png(image, src)
            argv = shlex.split(self.command) + [str(src), str(dst)]
            try:
                proc = subprocess.run(argv, capture_output=True, text=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise SegmentationError(f"external segmenter failed to run: {exc}") from exc
            if proc.returncode != 0:
                detail = proc.stderr.strip().splitlines()[-1:] or [""]
                raise SegmentationError(f"external segmenter exited with {proc.returncode}: {detail[0]}")
            if not dst.is_file():
                raise SegmentationError("external segmenter produced no output image")
            with Image.open(dst) as img:
                if img.mode not in ("P", "L"):
                    raise SegmentationError(f"segmenter output must be 8-bit indexed, got mode {img.mode}")
                labels = np.array(img, dtype=np.uint8)
        if labels.shape != image.shape[:2]:
            raise SegmentationError(f"segmenter output {labels.shape} does not match image {image.shape[:2]}")
        bad = np.setdiff1d(np.unique(labels), list(PART_CODES.values()))
        if bad.size:
            raise SegmentationError(f"segmenter output uses codes outside the part palette: {bad.tolist()}")
        return PartMaskSet(labels)
