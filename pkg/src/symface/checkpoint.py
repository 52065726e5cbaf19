"""Single-file checkpoints (``.npz``) for generator, discriminators and Adam state.

Layout: a ``__meta__`` entry holding UTF-8 JSON (format_version, SwinConfig,
training config, step, discriminator configs), then one little-endian array
per parameter named ``gen.<param>`` / ``disc.<param>`` and one per optimizer
moment named ``opt.<group>.<param>.<field>``.
"""

from __future__ import annotations

import io
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError
from .generator import Generator, SwinConfig

FORMAT_VERSION = 1


def _le(array: np.ndarray) -> np.ndarray:
    return array.astype(array.dtype.newbyteorder("<"), copy=False)


def _param_arrays(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"{prefix}.{name}": _le(p.detach().cpu().numpy()) for name, p in module.named_parameters()}


def _optimizer_arrays(prefix: str, module: torch.nn.Module, optimizer: torch.optim.Optimizer) -> dict[str, np.ndarray]:
    out = {}
    for name, p in module.named_parameters():
        state = optimizer.state.get(p)
        if not state:
            continue
        for key, value in state.items():
            arr = value.detach().cpu().numpy() if torch.is_tensor(value) else np.asarray(value)
            out[f"opt.{prefix}.{name}.{key}"] = _le(np.asarray(arr))
    return out


def save_checkpoint(path, generator: Generator, discs=None, opt_g=None, opt_d=None, step: int = 0,
                    train_config: dict | None = None) -> Path:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "swin_config": generator.config.to_dict(),
        "step": int(step),
        "train_config": train_config or {},
        "has_discriminators": discs is not None,
        "semantic_parts": list(discs.part.keys()) if discs is not None else [],
        "patch_config": asdict(discs.patch.config) if discs is not None else None,
        "semantic_config": (asdict(next(iter(discs.part.values())).config)
                            if discs is not None and len(discs.part) else None),
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    arrays.update(_param_arrays("gen", generator))
    if discs is not None:
        arrays.update(_param_arrays("disc", discs))
    if opt_g is not None:
        arrays.update(_optimizer_arrays("gen", generator, opt_g))
    if opt_d is not None and discs is not None:
        arrays.update(_optimizer_arrays("disc", discs, opt_d))

    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buffer.getvalue())
    os.replace(tmp, path)
    return path


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: missing metadata")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version {meta.get('format_version')!r}")
    return meta, arrays


def load_parameters(prefix: str, module: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    params = dict(module.named_parameters())
    wanted = {f"{prefix}.{n}" for n in params}
    present = {k for k in arrays if k.startswith(prefix + ".")}
    if wanted != present:
        missing = sorted(wanted - present)[:3]
        extra = sorted(present - wanted)[:3]
        raise CheckpointError(f"parameter mismatch under {prefix!r}: missing {missing}, unexpected {extra}")
    with torch.no_grad():
        for name, p in params.items():
            value = torch.from_numpy(np.ascontiguousarray(arrays[f"{prefix}.{name}"]))
            if value.shape != p.shape:
                raise CheckpointError(f"{prefix}.{name}: shape {tuple(value.shape)} != {tuple(p.shape)}")
            p.copy_(value)


def load_optimizer_state(prefix: str, module: torch.nn.Module, optimizer: torch.optim.Optimizer,
                         arrays: dict[str, np.ndarray]) -> None:
    head = f"opt.{prefix}."
    for name, p in module.named_parameters():
        stem = f"{head}{name}."
        fields = {k[len(stem):]: v for k, v in arrays.items() if k.startswith(stem) and "." not in k[len(stem):]}
        if fields:
            optimizer.state[p] = {key: torch.from_numpy(np.array(v)) for key, v in fields.items()}


def generator_from_meta(meta: dict) -> Generator:
    return Generator(SwinConfig(**meta["swin_config"]))


def load_generator(path) -> Generator:
    meta, arrays = read_checkpoint(path)
    generator = generator_from_meta(meta)
    dtype = torch.from_numpy(arrays[next(k for k in arrays if k.startswith("gen."))][:0]).dtype
    generator.to(dtype)
    load_parameters("gen", generator, arrays)
    return generator.eval()
