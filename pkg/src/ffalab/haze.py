"""Synthetic haze from the atmospheric scattering model.

A clean image ``J`` seen through a medium with transmission ``t`` and
airlight ``A`` is observed as ``I = J * t + A * (1 - t)``, with
``t = exp(-beta * depth)``. The relation is inverted exactly by
``J = (I - A) / t + A`` wherever ``t`` is bounded away from zero.

Images are numpy arrays of shape (3, H, W) with values in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ppm import read_ppm, write_ppm

__all__ = [
    "HazeParams",
    "HazeRanges",
    "HazeSample",
    "DomainError",
    "make_depth_map",
    "transmission",
    "apply_haze",
    "invert_haze",
    "sample_haze_params",
    "draw_dihedral",
    "dihedral",
    "augment",
    "sample_patch",
    "crop",
    "procedural_image",
    "generate_sample",
    "write_dataset",
    "load_dataset",
    "read_meta",
]

DEPTH_KINDS = ("linear", "radial")
DEFAULT_DEPTH_SCALE = 10.0


class DomainError(ValueError):
    """Inversion requested where the transmission is too small."""


@dataclass(frozen=True)
class HazeParams:
    A: float
    beta: float
    depth_kind: str = "linear"
    depth_scale: float = DEFAULT_DEPTH_SCALE


@dataclass(frozen=True)
class HazeRanges:
    a_min: float = 0.8
    a_max: float = 1.0
    beta_min: float = 0.04
    beta_max: float = 0.2

    def __post_init__(self):
        if self.a_min > self.a_max:
            raise ValueError(f"empty airlight range [{self.a_min}, {self.a_max}]")
        if self.beta_min > self.beta_max:
            raise ValueError(f"empty beta range [{self.beta_min}, {self.beta_max}]")
        if self.a_min < 0.0 or self.a_max > 1.0:
            raise ValueError("airlight must lie in [0, 1]")
        if self.beta_min <= 0:
            raise ValueError("beta must be positive")


@dataclass
class HazeSample:
    clean: np.ndarray
    hazy: np.ndarray
    params: HazeParams
    transmission: np.ndarray


def make_depth_map(kind: str, height: int, width: int, depth_scale: float = DEFAULT_DEPTH_SCALE) -> np.ndarray:
    """Analytic depth: ``linear`` grows top to bottom, ``radial`` grows from the center."""
    if height < 1 or width < 1:
        raise ValueError("depth map needs H, W >= 1")
    if kind == "linear":
        col = np.linspace(0.0, depth_scale, height)
        return np.repeat(col[:, None], width, axis=1)
    if kind == "radial":
        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        r = np.hypot(yy - (height - 1) / 2, xx - (width - 1) / 2)
        rmax = r.max()
        return r * (depth_scale / rmax) if rmax > 0 else r
    raise ValueError(f"unknown depth kind {kind!r}")


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    if beta <= 0:
        raise ValueError("beta must be positive")
    return np.exp(-beta * np.asarray(depth))


def apply_haze(J: np.ndarray, A: float, t: np.ndarray) -> np.ndarray:
    """Observed hazy image; ``t`` (H, W) broadcasts over channels."""
    J = np.asarray(J)
    t = np.asarray(t, dtype=J.dtype)
    I = J * t + A * (1 - t)
    return np.clip(I, 0, 1, out=I)


def invert_haze(I: np.ndarray, A: float, t: np.ndarray, t_floor: float = 1e-3) -> np.ndarray:
    I = np.asarray(I)
    t = np.asarray(t, dtype=I.dtype)
    bad = int(np.count_nonzero(t < t_floor))
    if bad:
        raise DomainError(f"{bad} pixels have transmission below {t_floor}")
    return (I - A) / t + A


def sample_haze_params(rng: np.random.Generator, ranges: HazeRanges = HazeRanges(),
                       depth_scale: float = DEFAULT_DEPTH_SCALE) -> HazeParams:
    A = float(rng.uniform(ranges.a_min, ranges.a_max))
    beta = float(rng.uniform(ranges.beta_min, ranges.beta_max))
    kind = DEPTH_KINDS[int(rng.integers(2))]
    return HazeParams(A, beta, kind, depth_scale)


# ---------------------------------------------------------------------------
# patches and augmentation


def draw_dihedral(rng: np.random.Generator) -> tuple[int, bool]:
    """One of the 8 square symmetries as (quarter turns, horizontal flip)."""
    v = int(rng.integers(8))
    return v % 4, v >= 4


def dihedral(img: np.ndarray, k: int, flip: bool) -> np.ndarray:
    out = np.rot90(img, k, axes=(-2, -1))
    if flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if patch.shape[-1] != patch.shape[-2]:
        raise ValueError(f"augment needs a square patch, got {patch.shape}")
    return dihedral(patch, *draw_dihedral(rng))


def crop(img: np.ndarray, offset: tuple[int, int], size: int) -> np.ndarray:
    y, x = offset
    return img[..., y:y + size, x:x + size]


def sample_patch(img: np.ndarray, size: int, rng: np.random.Generator) -> tuple[np.ndarray, tuple[int, int]]:
    """Uniformly placed square crop; returns the patch and its top-left offset."""
    h, w = img.shape[-2:]
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image {h}x{w}")
    offset = (int(rng.integers(h - size + 1)), int(rng.integers(w - size + 1)))
    return crop(img, offset, size), offset


# ---------------------------------------------------------------------------
# dataset


def procedural_image(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Smooth colour gradient overlaid with random rectangles and soft blobs."""
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    base = rng.uniform(0.1, 0.9, size=(3, 1, 1))
    slope = rng.uniform(-0.5, 0.5, size=(3, 2, 1, 1))
    img = base + slope[:, 0] * yy + slope[:, 1] * xx
    for _ in range(int(rng.integers(3, 9))):
        h = int(rng.integers(max(1, height // 8), max(2, height // 2)))
        w = int(rng.integers(max(1, width // 8), max(2, width // 2)))
        y0 = int(rng.integers(0, height - h + 1))
        x0 = int(rng.integers(0, width - w + 1))
        img[:, y0:y0 + h, x0:x0 + w] = rng.uniform(0, 1, size=(3, 1, 1))
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, 1, size=2)
        s = rng.uniform(0.05, 0.2)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        img = img + rng.uniform(-0.4, 0.4, size=(3, 1, 1)) * blob
    return np.clip(img, 0, 1).astype(np.float32)


def generate_sample(index: int, seed: int, size: tuple[int, int], ranges: HazeRanges = HazeRanges(),
                    depth: str = "mixed", depth_scale: float = DEFAULT_DEPTH_SCALE,
                    sources: list[np.ndarray] | None = None) -> HazeSample:
    """Deterministic sample ``index`` of the dataset identified by ``seed``.

    ``depth`` is ``linear``, ``radial`` or ``mixed`` (alternates by index).
    With ``sources`` the clean image is a random crop of one of them.
    """
    rng = np.random.default_rng([seed, index])
    h, w = size
    if sources:
        src = sources[int(rng.integers(len(sources)))]
        if src.shape[1] < h or src.shape[2] < w:
            raise ValueError(f"source image {src.shape[1:]} smaller than {size}")
        y = int(rng.integers(src.shape[1] - h + 1))
        x = int(rng.integers(src.shape[2] - w + 1))
        clean = np.array(src[:, y:y + h, x:x + w], dtype=np.float32)
    else:
        clean = procedural_image(rng, h, w)
    params = sample_haze_params(rng, ranges, depth_scale)
    if depth == "mixed":
        kind = DEPTH_KINDS[index % 2]
    elif depth in DEPTH_KINDS:
        kind = depth
    else:
        raise ValueError(f"unknown depth mode {depth!r}")
    params = HazeParams(params.A, params.beta, kind, depth_scale)
    t = transmission(make_depth_map(kind, h, w, depth_scale), params.beta).astype(np.float32)
    hazy = apply_haze(clean, params.A, t)
    return HazeSample(clean, hazy, params, t)


def write_dataset(out, count: int, size: tuple[int, int], seed: int, ranges: HazeRanges = HazeRanges(),
                  depth: str = "mixed", depth_scale: float = DEFAULT_DEPTH_SCALE,
                  source_dir=None) -> list[str]:
    """Write ``clean/NNNN.ppm``, ``hazy/NNNN.ppm`` and ``meta/NNNN.txt``."""
    out = Path(out)
    sources = None
    if source_dir is not None:
        sources = [read_ppm(p) for p in sorted(Path(source_dir).glob("*.ppm"))]
        if not sources:
            raise ValueError(f"no .ppm files in {source_dir}")
    for sub in ("clean", "hazy", "meta"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(count):
        s = generate_sample(i, seed, size, ranges, depth, depth_scale, sources)
        name = f"{i:04d}"
        write_ppm(s.clean, out / "clean" / f"{name}.ppm")
        write_ppm(s.hazy, out / "hazy" / f"{name}.ppm")
        p = s.params
        (out / "meta" / f"{name}.txt").write_text(
            f"A={p.A!r}\nbeta={p.beta!r}\ndepth_kind={p.depth_kind}\n"
            f"depth_scale={p.depth_scale!r}\nseed={seed}\nindex={i}\n"
        )
        names.append(name)
    return names


def read_meta(path) -> dict[str, str]:
    entries = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def load_dataset(directory) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """All ``(name, clean, hazy)`` pairs of a dataset directory, sorted by name."""
    d = Path(directory)
    clean = {p.stem: p for p in (d / "clean").glob("*.ppm")}
    hazy = {p.stem: p for p in (d / "hazy").glob("*.ppm")}
    orphans = sorted(set(clean) ^ set(hazy))
    if orphans:
        raise ValueError(f"unpaired images in {d}: {', '.join(orphans)}")
    return [(n, read_ppm(clean[n]), read_ppm(hazy[n])) for n in sorted(clean)]
