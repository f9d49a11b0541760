"""Image quality metrics: RMSE, PSNR, and mean SSIM.

Inputs are single-channel images in [0, 1] (2-d arrays, or 3-d with a
leading channel of 1); values are scaled by `peak` (default 255) so RMSE is
reported on the 8-bit scale. Identical images yield math.inf for PSNR: a cap
sentinel that orders above every finite value.

border_mode selects whether a 4-pixel frame is excluded before measuring:
"keep" leaves images untouched, "trim" removes 4 pixels from every side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BORDER_MODES = ("keep", "trim")
TRIM_PIXELS = 4

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_image(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim != 2:
        raise ValueError(f"expected a single-channel image, got shape {a.shape}")
    return a


def _prepare(a, b, border_mode: str, min_size: int = 1):
    a, b = _as_image(a), _as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if border_mode not in BORDER_MODES:
        raise ValueError(f"border_mode must be one of {BORDER_MODES}, got {border_mode!r}")
    if border_mode == "trim":
        t = TRIM_PIXELS
        if a.shape[0] <= 2 * t or a.shape[1] <= 2 * t:
            raise ValueError(
                f"image {a.shape[0]}x{a.shape[1]} too small to trim {t} pixels per side")
        a, b = a[t:-t, t:-t], b[t:-t, t:-t]
    if a.shape[0] < min_size or a.shape[1] < min_size:
        raise ValueError(
            f"image must be at least {min_size}x{min_size} after border handling, "
            f"got {a.shape[0]}x{a.shape[1]}")
    return a, b


def rmse(a, b, border_mode: str = "keep", peak: float = 255.0) -> float:
    """Root mean squared error on the 0..peak scale."""
    a, b = _prepare(a, b, border_mode)
    return float(peak * math.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b, peak: float = 255.0, border_mode: str = "keep") -> float:
    """10*log10(peak^2 / MSE) in dB; math.inf when the images are identical."""
    a, b = _prepare(a, b, border_mode)
    mse = float(np.mean((peak * (a - b)) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax * ax) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    win = sliding_window_view(img, window.shape)
    return np.tensordot(win, window, axes=([2, 3], [0, 1]))


def mssim(a, b, border_mode: str = "keep", peak: float = 255.0) -> float:
    """Mean of the local SSIM map (11x11 Gaussian window, sigma 1.5,
    K1 = 0.01, K2 = 0.03, dynamic range = peak), over the valid region."""
    a, b = _prepare(a, b, border_mode, min_size=SSIM_WINDOW)
    a, b = peak * a, peak * b
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    window = _gaussian_window()
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a * mu_a
    var_b = _filter_valid(b * b, window) - mu_b * mu_b
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    psnr: float
    rmse: float
    mssim: float
    border_mode: str
    peak: float = 255.0


@dataclass
class SetSummary:
    count: int
    mean_psnr: float
    mean_rmse: float
    mean_mssim: float
    psnr_excluded: int  # identical pairs whose cap-sentinel PSNR was left out
    failures: list[tuple[int, str]]
    border_mode: str
    peak: float = 255.0


def compute_report(sr, hr, border_mode: str = "keep", peak: float = 255.0) -> MetricReport:
    """All three metrics for one image pair."""
    return MetricReport(
        psnr=psnr(sr, hr, peak=peak, border_mode=border_mode),
        rmse=rmse(sr, hr, border_mode=border_mode, peak=peak),
        mssim=mssim(sr, hr, border_mode=border_mode, peak=peak),
        border_mode=border_mode,
        peak=peak,
    )


def evaluate_set(pairs, border_mode: str = "keep",
                 peak: float = 255.0) -> tuple[list[MetricReport | None], SetSummary]:
    """Per-image reports plus arithmetic means over the pairs.

    Infinite PSNR values (identical pairs) are excluded from the PSNR mean
    and counted. Per-image failures are recorded as (index, message) and the
    aggregation proceeds over the successes.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_set needs at least one image pair")
    reports: list[MetricReport | None] = []
    failures: list[tuple[int, str]] = []
    for i, (sr, hr) in enumerate(pairs):
        try:
            reports.append(compute_report(sr, hr, border_mode=border_mode, peak=peak))
        except ValueError as exc:
            reports.append(None)
            failures.append((i, str(exc)))
    good = [r for r in reports if r is not None]
    finite_psnr = [r.psnr for r in good if math.isfinite(r.psnr)]
    summary = SetSummary(
        count=len(good),
        mean_psnr=float(np.mean(finite_psnr)) if finite_psnr else math.inf,
        mean_rmse=float(np.mean([r.rmse for r in good])) if good else math.nan,
        mean_mssim=float(np.mean([r.mssim for r in good])) if good else math.nan,
        psnr_excluded=len(good) - len(finite_psnr),
        failures=failures,
        border_mode=border_mode,
        peak=peak,
    )
    return reports, summary
