"""Command-line entry point: ``dsalgan {make-corpus,corrupt,train,eval,demo}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or precondition error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import evaluation as E
from .config import PHASES, ConfigError, RunConfig, load_config
from .pipeline import models_from_config
from .train import Checkpoint, CheckpointError, NonFiniteLossError, TrainData, TrainState, run_schedule

logger = logging.getLogger("dsalgan")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _sigmas(text: str | None):
    if text is None:
        return None
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sigma expects comma-separated numbers, got {text!r}")


def _resolve_config(args) -> RunConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
        overrides["data.seed"] = args.seed
    if getattr(args, "sigma", None):
        overrides["data.sigmas"] = args.sigma
        overrides["eval.sigmas"] = args.sigma
    return load_config(args.config, **overrides)


# ---------------------------------------------------------------------------
# commands


def cmd_make_corpus(args) -> int:
    cfg = _resolve_config(args)
    size = args.size or cfg.data.size
    samples = D.make_shapes_corpus(args.n, size, cfg.data.sigmas, cfg.data.seed)
    manifest = D.write_corpus(samples, args.out)
    cfg.write(args.out)
    print(manifest)
    return EXIT_OK


def _input_images(input_dir: Path) -> list[tuple[Path, Path | None]]:
    try:
        return [(img, mask) for img, mask in D.find_pairs(input_dir)]
    except FileNotFoundError:
        files = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in D.IMAGE_SUFFIXES)
        if not files:
            raise UsageError(f"no images found in {input_dir}")
        return [(p, None) for p in files]


def cmd_corrupt(input_dir, output_dir, sigmas, seed: int, size: int | None = None) -> Path:
    """Write one corrupted copy of every input per sigma plus ``manifest.csv``."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not input_dir.is_dir():
        raise UsageError(f"input directory not found: {input_dir}")
    pairs = _input_images(input_dir)
    (output_dir / "noisy").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (img_path, mask_path) in enumerate(pairs):
        if size:
            image = D.load_image(img_path, size)
        else:
            image = np.asarray(D._read(img_path, "RGB"), dtype=np.float32) / 255.0
        for sigma in sigmas:
            noisy = D.corrupt_gaussian(image, D.NoiseModel(sigma, E.noise_seed(seed, i)))
            out = output_dir / "noisy" / f"{img_path.stem}_s{sigma:g}.png"
            D.save_image(out, noisy)
            rows.append((img_path.resolve(), out, mask_path.resolve() if mask_path else "", f"{sigma:g}"))
    return D.write_manifest(output_dir / "manifest.csv", rows, relative_to=output_dir)


def _cmd_corrupt(args) -> int:
    cfg = _resolve_config(args)
    sigmas = args.sigma or list(cfg.data.sigmas)
    print(cmd_corrupt(args.input_dir, args.out, sigmas, cfg.data.seed, args.size))
    cfg.write(args.out)
    return EXIT_OK


def _train_samples(cfg: RunConfig) -> list[D.SampleTriplet]:
    source = cfg.data.source
    if source == "shapes":
        return D.make_shapes_corpus(cfg.data.n_train, cfg.data.size, (0,), cfg.data.seed)
    root = Path(source)
    if not root.is_absolute() and os.environ.get("DSALGAN_DATA"):
        root = Path(os.environ["DSALGAN_DATA"]) / root
    return D.load_dataset(root, cfg.data.size)


def cmd_train(phase: str, cfg: RunConfig, out_dir, resume=None, steps: int | None = None) -> Path:
    """Train one phase (or ``all``) and return the final checkpoint path.

    Without ``resume``, a phase after the first continues from the previous
    phase's checkpoint in ``out_dir`` when one exists.
    """
    out_dir = Path(out_dir)
    phases = list(PHASES) if phase == "all" else [phase]
    specs = models_from_config(cfg.net, cfg.data.size).specs
    data = TrainData.from_samples(_train_samples(cfg))
    if resume is None and phases[0] != PHASES[0]:
        previous = out_dir / f"{PHASES[PHASES.index(phases[0]) - 1]}.ckpt"
        resume = previous if previous.exists() else None
    if resume is not None:
        ckpt = Checkpoint.load(resume, specs=specs)
        if ckpt.config_hash and ckpt.config_hash != cfg.config_hash():
            logger.warning("resuming %s, which was written under a different config", resume)
        state = TrainState.from_checkpoint(ckpt, data, dump_dir=out_dir)
    else:
        state = TrainState.fresh(models_from_config(cfg.net, cfg.data.size), data, cfg.train.seed, dump_dir=out_dir)
    state.config_hash = cfg.config_hash()
    configs = [cfg.phase_config(p, steps) for p in phases]
    cfg.write(out_dir)
    run_schedule(configs, state, out_dir, out_dir / "train_log.csv", cfg.to_dict())
    if state.history:
        print(state.history[-1])
    return out_dir / f"{phases[-1]}.ckpt"


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    print(cmd_train(args.phase, cfg, args.out, args.resume, args.steps))
    return EXIT_OK


def _eval_datasets(cfg: RunConfig, data_dirs) -> dict[str, list[D.SampleTriplet]]:
    if not data_dirs and os.environ.get("DSALGAN_DATA"):
        root = Path(os.environ["DSALGAN_DATA"])
        try:
            D.find_pairs(root)
            data_dirs = [root]
        except FileNotFoundError:
            data_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not data_dirs:
        test = D.make_shapes_corpus(cfg.data.n_test, cfg.data.size, (0,), cfg.data.seed + 1)
        return {cfg.eval.dataset: test}
    out = {}
    for d in data_dirs:
        d = Path(d)
        if not d.is_dir():
            raise UsageError(f"dataset directory not found: {d}")
        out[d.name] = D.load_dataset(d, cfg.data.size)
    return out


def cmd_eval(checkpoint, cfg: RunConfig, out_dir, data_dirs=(), panels: int = 0) -> list[Path]:
    if not Path(checkpoint).exists():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    models = Checkpoint.load(checkpoint).to_models()
    size = models.specs["D1"].input_size
    if size != cfg.data.size:
        cfg = cfg.override(**{"data.size": size})
    datasets = _eval_datasets(cfg, data_dirs)
    reports = E.evaluate_model(models, datasets, cfg.eval.sigmas, cfg.eval.seed)
    panel_rows = []
    if panels:
        name = sorted(datasets)[0]
        clean, masks = D.stack_samples(datasets[name][:panels])
        sigma = 50.0 if 50.0 in cfg.eval.sigmas else max(cfg.eval.sigmas)
        noisy = E.corrupt_set(clean, sigma, cfg.eval.seed)
        den, sal = models.denoise_and_saliency(noisy)
        panel_rows = list(zip(noisy, den, sal, masks))
    written = E.emit_report(reports, out_dir, panels=panel_rows)
    cfg.write(out_dir)
    for r in reports:
        print(f"{r.dataset} sigma={r.sigma:g} n={r.n_images} aveF={r.aveF:.4f} maxF={r.maxF:.4f} auc={r.auc:.4f} mae={r.mae:.4f}")
    return written


def _cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    for path in cmd_eval(args.checkpoint, cfg, args.out, args.data or (), args.panels):
        print(path)
    return EXIT_OK


def cmd_demo(image_path, checkpoint, out, sigma: float = 0.0, mask_path=None, seed: int = 0) -> Path:
    """Denoise and predict saliency for one image; writes a 4-panel PNG."""
    if not Path(checkpoint).exists():
        raise UsageError(f"checkpoint not found: {checkpoint}")
    models = Checkpoint.load(checkpoint).to_models()
    size = models.specs["D1"].input_size
    raw = D._read(image_path, "RGB")
    if raw.size != (size, size):
        logger.warning("resizing %s from %dx%d to %dx%d", image_path, *raw.size, size, size)
    image = D.load_image(image_path, size)
    gt = D.load_mask(mask_path, size) if mask_path else np.zeros((size, size), np.float32)
    noisy = D.corrupt_gaussian(image, D.NoiseModel(sigma, seed)) if sigma else image
    den, sal = models.denoise_and_saliency(noisy[None])
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    return E.save_panel(out, noisy, den[0], sal[0], gt)


def _cmd_demo(args) -> int:
    sigma = args.sigma[0] if args.sigma else 0.0
    print(cmd_demo(args.image, args.checkpoint, args.out, sigma, args.mask, args.seed or 0))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--sigma", type=_sigmas, help="comma-separated noise std values (0-255 scale)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="dsalgan", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", parents=[common], help="write a procedural shapes dataset")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--size", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_corpus)

    p = sub.add_parser("corrupt", parents=[common], help="add Gaussian noise to a directory of images")
    p.add_argument("input_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, help="resize to this square size first")
    p.set_defaults(func=_cmd_corrupt)

    p = sub.add_parser("train", parents=[common], help="run a training phase")
    p.add_argument("--phase", choices=list(PHASES) + ["all"], default="all")
    p.add_argument("--steps", type=int, help="override the step count of the phase(s)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out", default="runs/dsalgan")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint across noise levels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", action="append", help="dataset directory (repeatable); default $DSALGAN_DATA or shapes")
    p.add_argument("--panels", type=int, default=0, help="write this many side-by-side PNG panels")
    p.add_argument("--out", default="reports")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("demo", parents=[common], help="4-panel figure for one image")
    p.add_argument("image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", help="ground-truth mask for the last panel")
    p.add_argument("--out", default="demo.png")
    p.set_defaults(func=_cmd_demo)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
