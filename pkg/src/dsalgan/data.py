"""Image/mask loading, Gaussian corruption and the procedural shapes corpus.

Images are ``float32`` arrays of shape ``(H, W, 3)`` with values in ``[0, 1]``.
Saliency maps and masks are ``(H, W)`` arrays in ``[0, 1]``; ground-truth
masks hold only 0 and 1.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

logger = logging.getLogger(__name__)

BENCHMARK_SIGMAS = (10, 30, 50, 80)
DEFAULT_SIZE = 96
MASK_THRESHOLD = 0.5
MANIFEST_COLUMNS = ("clean_path", "noisy_path", "mask_path", "sigma")
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise; ``sigma`` is in 8-bit intensity units."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be a finite value >= 0, got {self.sigma}")


@dataclass
class SampleTriplet:
    clean: np.ndarray
    mask: np.ndarray
    noisy: np.ndarray | None = None
    sigma: float | None = None

    def __post_init__(self):
        shapes = {self.clean.shape[:2], self.mask.shape[:2]}
        if self.noisy is not None:
            shapes.add(self.noisy.shape[:2])
        if len(shapes) != 1:
            raise ValueError(f"clean/noisy/mask spatial sizes differ: {sorted(shapes)}")


def check_size(size: int) -> int:
    if size <= 0 or size % 16:
        raise ValueError(f"image size must be a positive multiple of 16, got {size}")
    return int(size)


def binarize(mask: np.ndarray, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    return (np.asarray(mask) >= threshold).astype(np.float32)


def gaussian_noise_field(shape: Sequence[int], noise: NoiseModel) -> np.ndarray:
    """Unclamped noise in unit scale: standard normal draws times sigma/255.

    The standard-normal field depends only on ``(shape, seed)``, so the same
    seed at two sigmas gives proportional fields.
    """
    rng = np.random.default_rng(noise.seed)
    return rng.standard_normal(tuple(shape)) * (noise.sigma / 255.0)


def corrupt_gaussian(image: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Return ``clip(image + n, 0, 1)`` with per-channel i.i.d. Gaussian ``n``."""
    image = np.asarray(image)
    if image.size and (image.min() < 0 or image.max() > 1):
        raise ValueError("image values must lie in [0, 1]")
    noisy = image.astype(np.float64) + gaussian_noise_field(image.shape, noise)
    return np.clip(noisy, 0.0, 1.0).astype(image.dtype, copy=False)


def _read(path, mode: str) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert(mode)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {os.fspath(path)!r}: {exc}") from exc


def _resize(im: Image.Image, size: int) -> Image.Image:
    if im.size == (size, size):
        return im
    return im.resize((size, size), Image.BILINEAR)


def load_image(path, target_size: int = DEFAULT_SIZE) -> np.ndarray:
    im = _read(path, "RGB")
    if im.size != (target_size, target_size):
        logger.debug("resizing %s from %s to %d", path, im.size, target_size)
    return np.asarray(_resize(im, check_size(target_size)), dtype=np.float32) / 255.0


def load_mask(path, target_size: int = DEFAULT_SIZE) -> np.ndarray:
    im = _resize(_read(path, "L"), check_size(target_size))
    return binarize(np.asarray(im, dtype=np.float32) / 255.0)


def load_pair(image_path, mask_path, target_size: int = DEFAULT_SIZE) -> SampleTriplet:
    """Load an image and its mask, resized to ``target_size`` square; mask binarized at 0.5."""
    check_size(target_size)
    return SampleTriplet(
        clean=load_image(image_path, target_size),
        mask=load_mask(mask_path, target_size),
    )


def to_uint8(array: np.ndarray) -> np.ndarray:
    return np.round(np.clip(array, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    Image.fromarray(to_uint8(image)).save(path)


def save_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(to_uint8(np.squeeze(mask))).save(path)


# ---------------------------------------------------------------------------
# shapes corpus


def _background(rng: np.random.Generator, yy, xx) -> np.ndarray:
    base = rng.uniform(0.15, 0.45, size=3)
    tilt = rng.uniform(-0.1, 0.1, size=(2, 3))
    freq = rng.uniform(2.0, 6.0, size=2) * np.pi
    phase = rng.uniform(0, 2 * np.pi, size=2)
    texture = 0.05 * (np.sin(freq[0] * xx + phase[0]) + np.cos(freq[1] * yy + phase[1]))
    bg = base + yy[..., None] * tilt[0] + xx[..., None] * tilt[1] + texture[..., None]
    return np.clip(bg, 0.05, 0.6)


def _shape_mask(rng: np.random.Generator, yy, xx) -> np.ndarray:
    cy, cx = rng.uniform(0.2, 0.8, size=2)
    r = rng.uniform(0.05, 0.15)
    kind = rng.integers(4)
    if kind == 0:
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r**2
    if kind == 1:
        a, b = r * rng.uniform(0.6, 1.4, size=2)
        return ((yy - cy) / a) ** 2 + ((xx - cx) / b) ** 2 <= 1.0
    if kind == 2:
        h, w = r * rng.uniform(0.6, 1.2, size=2)
        return (np.abs(yy - cy) <= h) & (np.abs(xx - cx) <= w)
    # triangle: intersection of three half-planes around the centre
    angles = rng.uniform(0, 2 * np.pi) + np.array([0.0, 2.0, 4.0]) * np.pi / 3
    inside = np.ones_like(yy, dtype=bool)
    for a in angles:
        inside &= (yy - cy) * np.sin(a) + (xx - cx) * np.cos(a) <= r * 0.6
    return inside


def make_shape_sample(size: int, seed: int, index: int) -> SampleTriplet:
    """Render one textured background with 1-3 shapes brighter than their surroundings.

    The mask is the union of the shape interiors.
    """
    rng = np.random.default_rng([seed, index])
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    image = _background(rng, yy, xx)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        region = _shape_mask(rng, yy, xx)
        if not region.any():
            continue
        lift = rng.uniform(0.04, 0.3) + rng.uniform(-0.05, 0.05, size=3)
        colour = image[region].mean(axis=0) + lift
        image[region] = np.clip(colour, 0.0, 1.0)
        mask |= region
    if not mask.any():
        mask[size // 2 - 2 : size // 2 + 2, size // 2 - 2 : size // 2 + 2] = True
        image[mask] = np.clip(image[mask] + 0.3, 0.0, 1.0)
    return SampleTriplet(clean=image.astype(np.float32), mask=mask.astype(np.float32))


def make_shapes_corpus(
    n: int, size: int, sigmas: Iterable[float] = (0,), seed: int = 0
) -> list[SampleTriplet]:
    """Generate ``n`` deterministic shape samples, each corrupted at a sigma drawn from ``sigmas``.

    Every sample depends only on ``(seed, index)``, so corpora built with the
    same arguments are identical and samples can be generated independently.
    """
    check_size(size)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    sigmas = [float(s) for s in sigmas]
    if not sigmas:
        raise ValueError("need at least one sigma")
    out = []
    for i in range(n):
        sample = make_shape_sample(size, seed, i)
        pick = np.random.default_rng([seed, i, 1])
        sigma = sigmas[int(pick.integers(len(sigmas)))]
        noise = NoiseModel(sigma, seed=int(pick.integers(2**31)))
        sample.noisy = corrupt_gaussian(sample.clean, noise)
        sample.sigma = sigma
        out.append(sample)
    return out


# ---------------------------------------------------------------------------
# directories and manifests


def write_corpus(samples: Sequence[SampleTriplet], out_dir) -> Path:
    """Write PNGs for every sample plus ``manifest.csv``; returns the manifest path."""
    out_dir = Path(out_dir)
    for sub in ("clean", "noisy", "masks"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(samples):
        stem = f"{i:05d}"
        clean_p = out_dir / "clean" / f"{stem}.png"
        mask_p = out_dir / "masks" / f"{stem}.png"
        save_image(clean_p, s.clean)
        save_mask(mask_p, s.mask)
        noisy_p = ""
        if s.noisy is not None:
            noisy_p = out_dir / "noisy" / f"{stem}_s{s.sigma:g}.png"
            save_image(noisy_p, s.noisy)
        rows.append((clean_p, noisy_p, mask_p, "" if s.sigma is None else f"{s.sigma:g}"))
    return write_manifest(out_dir / "manifest.csv", rows, relative_to=out_dir)


def write_manifest(path, rows, relative_to=None) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for clean_p, noisy_p, mask_p, sigma in rows:
            cells = []
            for p in (clean_p, noisy_p, mask_p):
                if p and relative_to is not None:
                    p = os.path.relpath(p, relative_to)
                cells.append(str(p))
            writer.writerow(cells + [sigma])
    return path


def read_manifest(path) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("clean_path", "noisy_path", "mask_path"):
            if row[key]:
                row[key] = str((path.parent / row[key]).resolve())
    return rows


def _by_stem(folder: Path) -> dict[str, Path]:
    return {
        p.stem: p
        for p in sorted(folder.iterdir())
        if p.suffix.lower() in IMAGE_SUFFIXES
    }


def find_pairs(root) -> list[tuple[Path, Path]]:
    """Locate (image, mask) pairs under ``root``, sorted by image path.

    Accepts either a ``manifest.csv`` or ``images/`` (or ``clean/``) next to
    ``masks/`` with matching file stems.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    manifest = root / "manifest.csv"
    if manifest.exists():
        seen = {}
        for row in read_manifest(manifest):
            seen.setdefault(row["clean_path"], row["mask_path"])
        return sorted((Path(c), Path(m)) for c, m in seen.items())
    masks_dir = root / "masks"
    images_dir = next((root / d for d in ("images", "clean") if (root / d).is_dir()), None)
    if images_dir is None or not masks_dir.is_dir():
        raise FileNotFoundError(
            f"{root} needs manifest.csv or images/ (or clean/) and masks/ subdirectories"
        )
    masks = _by_stem(masks_dir)
    pairs = [(p, masks[stem]) for stem, p in _by_stem(images_dir).items() if stem in masks]
    if not pairs:
        raise FileNotFoundError(f"no image/mask pairs with matching names under {root}")
    return sorted(pairs)


def load_dataset(root, target_size: int = DEFAULT_SIZE) -> list[SampleTriplet]:
    return [load_pair(img, mask, target_size) for img, mask in find_pairs(root)]


def stack_samples(samples: Sequence[SampleTriplet]) -> tuple[np.ndarray, np.ndarray]:
    """Stack into ``(N, H, W, 3)`` clean images and ``(N, H, W)`` masks."""
    clean = np.stack([s.clean for s in samples]).astype(np.float32)
    masks = np.stack([np.squeeze(s.mask) for s in samples]).astype(np.float32)
    return clean, masks
