"""Command line entry point: ``symface <command> [flags]``.

Each command validates its flags, calls library functions and writes a
``run_manifest.json`` (argv, parsed flags, seeds, package versions) next to
its outputs. Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import json
import platform
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import MissingInputError, ParameterError, SymfaceError

METRICS = ("fid", "perc", "pixel", "symmetry")


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("symface", "torch", "numpy", "scipy", "Pillow"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def write_manifest(path: Path, command: str, args: argparse.Namespace, argv: list[str], extra: dict | None = None) -> Path:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {"command": command, "argv": argv, "flags": flags, "versions": _versions()}
    manifest.update(extra or {})
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, default=str))
    return path


def _manifest_beside(out: Path) -> Path:
    """Directories get ``run_manifest.json`` inside; files get ``<name>.run_manifest.json``."""
    if out.suffix:
        return out.with_name(out.name + ".run_manifest.json")
    return out / "run_manifest.json"


def _need_file(path: Path, what: str) -> None:
    if not path.is_file():
        raise MissingInputError(f"{what} {path} does not exist")


def _need_dataset(path: Path) -> None:
    if not (path / "manifest.json").is_file():
        raise MissingInputError(f"{path} is not a dataset directory (no manifest.json)")


def cmd_make_dataset(args, argv):
    from .toyfaces import generate_faces, write_dataset

    if args.count < 1:
        raise ParameterError("--count must be >= 1")
    samples = generate_faces(range(args.seed, args.seed + args.count), args.size, args.asymmetry)
    manifest = write_dataset(samples, args.out)
    write_manifest(_manifest_beside(args.out), "make-dataset", args, argv, {"seeds": manifest["seeds"]})
    print(f"wrote {manifest['count']} samples to {args.out}")


def cmd_train(args, argv):
    from .toyfaces import read_dataset
    from .trainer import load_config, train

    _need_dataset(args.data)
    _need_file(args.config, "config")
    if args.resume:
        _need_file(args.resume, "checkpoint")
    overrides = {"max_steps": args.max_steps} if args.max_steps is not None else {}
    config = load_config(args.config, **overrides)
    samples = read_dataset(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    write_manifest(_manifest_beside(args.out), "train", args, argv, {"seed": config.seed, "config": config.to_dict()})
    result = train(samples, config, args.out, resume=args.resume)
    last = result.reports[-1].total if result.reports else float("nan")
    print(f"trained to step {result.state.step}; last total loss {last:.6g}; checkpoints in {args.out / 'checkpoints'}")


def cmd_inpaint(args, argv):
    from .checkpoint import load_generator
    from .masking import load_mask_png
    from .scs import ModelInpainter
    from .toyfaces import load_image_png, save_image_png

    for path, what in ((args.ckpt, "checkpoint"), (args.image, "image"), (args.mask, "mask")):
        _need_file(path, what)
    image = load_image_png(args.image)
    mask = load_mask_png(args.mask).grid
    if mask.shape != image.shape[:2]:
        raise ParameterError(f"mask {mask.shape} does not match image {image.shape[:2]}")
    inpainter = ModelInpainter(load_generator(args.ckpt), composite=not args.no_composite)
    save_image_png(inpainter(image, mask), args.out)
    write_manifest(_manifest_beside(args.out), "inpaint", args, argv)
    print(f"wrote {args.out}")


def _scs_samples(args):
    from .toyfaces import read_dataset

    _need_dataset(args.data)
    samples = read_dataset(args.data, limit=args.samples)
    if not samples:
        raise ParameterError(f"{args.data} has no samples")
    return samples


def cmd_scs(args, argv):
    from .scs import parse_inpainter, symmetry_concentration, write_scs_outputs

    if args.samples < 1 or args.workers < 1:
        raise ParameterError("--samples and --workers must be >= 1")
    inpainter = parse_inpainter(args.inpainter)
    samples = _scs_samples(args)
    args.out.mkdir(parents=True, exist_ok=True)
    scores = []
    with open(args.out / "scs_per_sample.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "seed", "scs", "scs_K16", "scs_K32", "scs_K64"])
        for index, sample in enumerate(samples):
            result = symmetry_concentration(inpainter, sample, args.target, workers=args.workers)
            if index == 0:
                write_scs_outputs(result, args.out)
            scores.append(result.score)
            writer.writerow([index, sample.seed, repr(result.score)] + [repr(result.per_k.get(k, 0.0)) for k in (16, 32, 64)])
    score = float(np.mean(scores))
    (args.out / "scs.txt").write_text(f"{score!r}\n")
    write_manifest(_manifest_beside(args.out), "scs", args, argv, {"seeds": [s.seed for s in samples]})
    print(f"SCS({args.target}) = {score:.6f} over {len(samples)} sample(s)")


def cmd_heatmap(args, argv):
    from .scs import heatmap, parse_inpainter, render, target_regions, write_heatmap_csv
    from .toyfaces import read_dataset

    _need_dataset(args.data)
    samples = read_dataset(args.data, limit=args.index + 1)
    if args.index >= len(samples):
        raise ParameterError(f"--index {args.index} is out of range for {len(samples)} samples")
    sample = samples[args.index]
    inpainter = parse_inpainter(args.inpainter)
    held, _ = target_regions(sample, args.target)
    hm = heatmap(inpainter, sample, held, args.K, workers=args.workers)
    args.out.mkdir(parents=True, exist_ok=True)
    render(hm, args.out / f"heatmap_K{args.K}.png")
    write_heatmap_csv([hm], args.out / "heatmap.csv")
    write_manifest(_manifest_beside(args.out), "heatmap", args, argv, {"seed": sample.seed})
    print(f"wrote heatmap for sample {args.index} (K={args.K}) to {args.out}")


def evaluate(generator, samples, masks: str, metrics, seed: int = 0, feature_kind: str = "random_conv") -> dict:
    """Metric name -> value for a generator on a dataset under random masks."""
    import torch

    from .masking import organ_mask, preset, random_mask
    from .metrics import FeatureExtractor, frechet_distance, perceptual_distance, pixel_error, symmetry_error
    from .scs import ModelInpainter

    inpainter = ModelInpainter(generator, composite=True)
    spec = preset(masks)
    real = np.stack([s.image for s in samples])
    fake = np.stack([
        inpainter(s.image, random_mask(spec, int(np.random.SeedSequence([seed, i]).generate_state(1)[0]), s.size).grid)
        for i, s in enumerate(samples)
    ])
    out = {}
    extractor = FeatureExtractor(feature_kind, seed=seed)
    if "fid" in metrics:
        out["fid"] = frechet_distance(extractor.features(real), extractor.features(fake))
    if "perc" in metrics:
        out["perc"] = perceptual_distance(extractor, torch.from_numpy(real).permute(0, 3, 1, 2),
                                          torch.from_numpy(fake).permute(0, 3, 1, 2))
    if "pixel" in metrics:
        out["pixel"] = pixel_error(real, fake, "L1")
    if "symmetry" in metrics:
        errors = []
        for s in samples:
            eye = organ_mask(s, "eye", "right").grid
            errors.append(symmetry_error(s, inpainter(s.image, eye), "eye"))
        out["symmetry"] = float(np.mean(errors))
    return out


def cmd_eval(args, argv):
    from .checkpoint import load_generator
    from .metrics import write_report
    from .toyfaces import read_dataset

    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown or not metrics:
        raise ParameterError(f"unknown metrics {unknown}; choose from {','.join(METRICS)}")
    _need_file(args.ckpt, "checkpoint")
    _need_dataset(args.data)
    samples = read_dataset(args.data, limit=args.samples)
    values = evaluate(load_generator(args.ckpt), samples, args.masks, metrics, args.seed, args.features)
    write_report(values, args.out)
    write_manifest(_manifest_beside(args.out), "eval", args, argv, {"seed": args.seed})
    for name, value in values.items():
        print(f"{name}: {value:.6g}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="symface", description="Symmetric face inpainting toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-dataset", help="generate a toy face dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0, help="first face seed; faces use seed..seed+count-1")
    p.add_argument("--asymmetry", type=float, default=0.0)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train generator and discriminators")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path)
    p.add_argument("--max-steps", type=int, help="override max_steps from the config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("inpaint", help="inpaint one image with a trained generator")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--mask", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-composite", action="store_true", help="keep generator output on known pixels too")
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("scs", help="symmetry concentration score and influence heatmaps")
    p.add_argument("--inpainter", required=True, help="model:CKPT | mirror | constant:V | local:R")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--target", choices=("eye", "half"), required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_scs)

    p = sub.add_parser("heatmap", help="influence heatmap for one sample and one tile size")
    p.add_argument("--inpainter", required=True, help="model:CKPT | mirror | constant:V | local:R")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--K", type=int, default=16)
    p.add_argument("--target", choices=("eye", "half"), default="eye")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("eval", help="FID-form, perceptual, pixel and symmetry metrics")
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--masks", choices=("narrow", "medium", "wide", "aggressive"), default="aggressive")
    p.add_argument("--metrics", default=",".join(METRICS))
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--samples", type=int, help="use only the first N samples")
    p.add_argument("--seed", type=int, default=0, help="mask and feature-extractor seed")
    p.add_argument("--features", choices=("random_conv", "flatten_pixels"), default="random_conv")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        args.func(args, argv)
    except SymfaceError as exc:
        print(f"symface {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ArithmeticError as exc:
        print(f"symface {args.command}: numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"symface {args.command}: I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
