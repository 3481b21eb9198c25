"""PSNR and SSIM for images with unit dynamic range.

SSIM is the single-scale Gaussian-window form: 11 x 11 window, sigma 1.5,
``C1 = 0.01**2``, ``C2 = 0.03**2``, population (biased) local statistics,
valid-region filtering, computed per channel and averaged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = ["psnr", "ssim", "gaussian_window", "MetricReport"]

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2


def _prepare(x, y):
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, 1.0)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    return x, y


def psnr(x, y) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; ``inf`` for identical images."""
    x, y = _prepare(x, y)
    sq = ((x - y) ** 2).ravel()
    # fsum keeps the mean correctly rounded, so a uniform 0.1 offset scores exactly 20 dB
    mse = math.fsum(sq) / sq.size
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian; the 2-D window is its outer product."""
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    rows = sliding_window_view(img, k, axis=-1) @ g
    return sliding_window_view(rows, k, axis=-2) @ g


def _ssim_channel(x: np.ndarray, y: np.ndarray, g: np.ndarray) -> float:
    mx, my = _filter(x, g), _filter(y, g)
    sxx = _filter(x * x, g) - mx * mx
    syy = _filter(y * y, g) - my * my
    sxy = _filter(x * y, g) - mx * my
    num = (2 * mx * my + C1) * (2 * sxy + C2)
    den = (mx * mx + my * my + C1) * (sxx + syy + C2)
    return float(np.mean(num / den))


def ssim(x, y) -> float:
    """Mean SSIM of two (C, H, W) or (H, W) images."""
    x, y = _prepare(x, y)
    if x.ndim == 2:
        x, y = x[None], y[None]
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape[-2:]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    return float(np.mean([_ssim_channel(a, b, g) for a, b in zip(x, y)]))


@dataclass
class MetricReport:
    names: list[str] = field(default_factory=list)
    psnr: list[float] = field(default_factory=list)
    ssim: list[float] = field(default_factory=list)

    def add(self, name: str, x, y) -> None:
        self.names.append(name)
        self.psnr.append(psnr(x, y))
        self.ssim.append(ssim(x, y))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr)) if self.psnr else math.nan

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim)) if self.ssim else math.nan

    def rows(self):
        yield from zip(self.names, self.psnr, self.ssim)
        yield "mean", self.mean_psnr, self.mean_ssim

    def to_text(self) -> str:
        lines = [f"{'name':<16} {'psnr_db':>10} {'ssim':>8}"]
        lines += [f"{n:<16} {p:>10.4f} {s:>8.5f}" for n, p, s in self.rows()]
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "psnr_db", "ssim"])
            for n, p, s in self.rows():
                w.writerow([n, f"{p:.6f}", f"{s:.8f}"])

    @classmethod
    def read_csv(cls, path) -> "MetricReport":
        rep = cls()
        with open(Path(path), newline="") as fh:
            for row in csv.DictReader(fh):
                if row["name"] == "mean":
                    continue
                rep.names.append(row["name"])
                rep.psnr.append(float(row["psnr_db"]))
                rep.ssim.append(float(row["ssim"]))
        return rep
