"""Images, samples, the synthetic scene generator, manifests and CV splits.

Images are plain ``float32`` arrays of shape ``(H, W, 3)``: linear RGB in
[0, 1], channel order r, g, b.  Ground-truth illuminants are unit-norm
float64 triplets.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.ndimage import zoom

from .formats import FormatError, read_rif, write_rif

MANIFEST_HEADER = ["path", "e_r", "e_g", "e_b", "fold"]


def validate_image(image, name: str = "image") -> np.ndarray:
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name}: expected HxWx3, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name}: non-finite pixel values")
    if img.min() < 0:
        raise ValueError(f"{name}: negative pixel values")
    return img


def validate_illuminant(e, name: str = "illuminant") -> np.ndarray:
    e = np.asarray(e, dtype=np.float64)
    if e.shape != (3,) or not np.all(np.isfinite(e)) or np.any(e <= 0):
        raise ValueError(f"{name} must be three finite positive values, got {e}")
    return e


def normalize_illuminant(e) -> np.ndarray:
    e = validate_illuminant(e)
    n = np.linalg.norm(e)
    # already-unit vectors pass through untouched so manifests round-trip bit-exactly
    return e if abs(n - 1.0) <= 4 * np.finfo(float).eps else e / n


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize to ``size x size`` on linear values (no gamma)."""
    img = validate_image(image)
    h, w, _ = img.shape
    if (h, w) == (size, size):
        return img
    out = zoom(img, (size / h, size / w, 1), order=1, mode="nearest", grid_mode=True)
    return np.clip(out, 0, None).astype(np.float32)


# ---------------------------------------------------------------------- samples
@dataclass(eq=False)
class Sample:
    gt: np.ndarray
    fold: int = 0
    image: np.ndarray | None = None
    path: Path | None = None

    def __post_init__(self):
        self.gt = normalize_illuminant(self.gt)
        if self.path is not None:
            self.path = Path(self.path)

    def load(self) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.path is None:
            raise ValueError("sample has neither pixels nor a path")
        return read_image(self.path)


@dataclass(eq=False)
class SynthSample(Sample):
    reflectance: np.ndarray | None = None
    illuminant: np.ndarray | None = None  # drawn e before normalisation


@dataclass
class SynthConfig:
    """Parameters of the Mondrian-style scene generator.

    ``reflectance_bias`` multiplies every patch's chroma; a non-grey bias
    produces scenes whose average colour is deliberately not neutral.
    ``grey_mean`` rescales each scene's reflectance so all three channel
    means are equal (the Grey-World assumption holds exactly).
    """

    size: int = 64
    patch_range: tuple[int, int] = (8, 48)
    reflectance_range: tuple[float, float] = (0.05, 0.85)
    chroma_spread: float = 0.3
    reflectance_bias: tuple[float, float, float] = (1.0, 1.0, 1.0)
    grey_mean: bool = False
    rg_range: tuple[float, float] = (0.6, 1.4)
    bg_range: tuple[float, float] = (0.6, 1.4)
    noise_std: float = 0.0
    clip: bool = True
    folds: int = 10
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.patch_range
        if not 1 <= lo <= hi:
            raise ValueError(f"patch_range must satisfy 1 <= lo <= hi, got {self.patch_range}")
        lo, hi = self.reflectance_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"reflectance_range must lie in (0, 1], got {self.reflectance_range}")
        for name in ("rg_range", "bg_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo:
                raise ValueError(f"{name} must be positive, got {(lo, hi)}")
            if not lo < hi:
                raise ValueError(f"degenerate chromaticity box: {name}={(lo, hi)} has zero width")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.noise_std > 0 and not self.clip:
            raise ValueError("noisy images must be clipped to stay non-negative")
        if self.size < 1 or self.folds < 1:
            raise ValueError("size and folds must be >= 1")


def sample_illuminants(rng: np.random.Generator, rg_range, bg_range, n: int) -> np.ndarray:
    """Draw ``(r/g, 1, b/g)`` uniformly from the chromaticity box."""
    rg = rng.uniform(*rg_range, size=n)
    bg = rng.uniform(*bg_range, size=n)
    return np.stack([rg, np.ones(n), bg], axis=1)


def _mosaic(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    k = int(rng.integers(cfg.patch_range[0], cfg.patch_range[1] + 1))
    seeds = rng.uniform(0, cfg.size, size=(k, 2))
    yy, xx = np.mgrid[0:cfg.size, 0:cfg.size] + 0.5
    d = (yy[..., None] - seeds[:, 0]) ** 2 + (xx[..., None] - seeds[:, 1]) ** 2
    labels = d.argmin(axis=-1)
    lightness = rng.uniform(*cfg.reflectance_range, size=(k, 1))
    chroma = np.asarray(cfg.reflectance_bias) * (
        1 + cfg.chroma_spread * rng.uniform(-1, 1, size=(k, 3)))
    patches = np.clip(lightness * chroma, 0.0, 1.0)
    refl = patches[labels]
    if cfg.grey_mean:
        means = refl.reshape(-1, 3).mean(axis=0)
        refl = refl * (means.mean() / means)
        refl /= max(1.0, refl.max())
    return refl


def synthesize(config: SynthConfig, n: int,
               illuminant: Sequence[float] | None = None) -> list[SynthSample]:
    """Render ``n`` scenes as ``I = R * e`` (plus optional noise).

    Illuminants are drawn from the config's chromaticity box unless a fixed
    ``illuminant`` is given.  Images are scaled by ``1 / max(e)`` so a white
    reflectance never exceeds 1; the ground truth is the drawn ``e``
    normalised to unit length.  Sample ``i`` lands in fold ``i % folds``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(config.seed)
    out = []
    for i in range(n):
        refl = _mosaic(rng, config)
        if illuminant is None:
            e = sample_illuminants(rng, config.rg_range, config.bg_range, 1)[0]
        else:
            e = validate_illuminant(illuminant)
        img = refl * (e / e.max())
        if config.noise_std > 0:
            img = img + rng.normal(0, config.noise_std, size=img.shape)
        if config.clip:
            img = np.clip(img, 0.0, 1.0)
        out.append(SynthSample(gt=e, fold=i % config.folds, image=img.astype(np.float32),
                               reflectance=refl.astype(np.float32), illuminant=e))
    return out


def stack(samples: Sequence[Sample], size: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Images as ``[N, S, S, 3]`` (resized when ``size`` is given) and gts as ``[N, 3]``."""
    images = [s.load() for s in samples]
    if size is not None:
        images = [resize_image(im, size) for im in images]
    return np.stack(images).astype(np.float32), np.stack([s.gt for s in samples])


# ------------------------------------------------------------------------ I/O
def write_image(image: np.ndarray, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        import cv2
        img16 = np.round(np.clip(validate_image(image), 0, 1) * 65535).astype(np.uint16)
        if not cv2.imwrite(str(path), img16[..., ::-1]):
            raise OSError(f"could not write {path}")
        return
    write_rif(validate_image(image), path)


def read_image(path) -> np.ndarray:
    """Read a native ``.rif`` image, or import a PNG (16-bit maps to /65535, assumed linear)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic.startswith(b"\x89PNG"):
        import cv2
        raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if raw is None or raw.ndim != 3:
            raise FormatError(f"{path}: not an RGB PNG")
        scale = 65535.0 if raw.dtype == np.uint16 else 255.0
        return (raw[..., 2::-1] / scale).astype(np.float32)
    return read_rif(path)


# -------------------------------------------------------------------- manifest
def write_manifest(samples: Sequence[Sample], path) -> None:
    """CSV with header ``path,e_r,e_g,e_b,fold``; paths stored relative to the manifest."""
    path = Path(path)
    root = path.parent.resolve()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for s in samples:
            if s.path is None:
                raise ValueError("every sample needs a path to be written to a manifest")
            rel = Path(os.path.relpath(Path(s.path).resolve(), root)).as_posix()
            w.writerow([rel, *(repr(float(v)) for v in s.gt), int(s.fold)])


def load_manifest(path, check_files: bool = True) -> list[Sample]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent.resolve()
    samples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise ValueError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {header}")
        for row_no, row in enumerate(reader, start=1):
            where = f"{path}: row {row_no}"
            if len(row) != 5:
                raise ValueError(f"{where}: expected 5 fields, got {len(row)}")
            try:
                gt = np.array([float(v) for v in row[1:4]])
                fold = int(row[4])
            except ValueError as exc:
                raise ValueError(f"{where}: malformed value ({exc})") from None
            if not np.all(np.isfinite(gt)) or np.any(gt <= 0):
                raise ValueError(f"{where}: ground truth must be positive, got {row[1:4]}")
            if fold < 0:
                raise ValueError(f"{where}: negative fold {fold}")
            img_path = root / row[0]
            if check_files and not img_path.exists():
                raise ValueError(f"{where}: missing image file {img_path}")
            samples.append(Sample(gt=gt, fold=fold, path=img_path))
    return samples


def cross_validation_splits(samples: Sequence[Sample], folds: int
                            ) -> Iterator[tuple[list[Sample], list[Sample]]]:
    """Yield ``(train, test)`` per fold; fold ``k`` tests on samples with ``fold == k``."""
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    ids = [s.fold for s in samples]
    bad = [f for f in ids if not 0 <= f < folds]
    if bad:
        raise ValueError(f"fold id {bad[0]} outside [0, {folds})")
    counts = np.bincount(ids, minlength=folds)
    empty = [k for k in range(folds) if counts[k] == 0]
    if empty:
        raise ValueError(f"fold(s) {empty} are empty")
    for k in range(folds):
        yield ([s for s in samples if s.fold != k], [s for s in samples if s.fold == k])
