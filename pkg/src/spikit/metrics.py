"""Image-quality and basis metrics plus the reconstruction timing harness."""

from __future__ import annotations

import csv
import os
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from spikit.imaging import BasisSet

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r**2) / (2 * sigma**2))
    return g / g.sum()


def ssim(a, b) -> float:
    """Mean structural similarity over all fully-contained 11x11 Gaussian windows.

    Uses sigma 1.5, K1 = 0.01, K2 = 0.03 and a dynamic range of 1. Images
    smaller than the window use the largest odd window that fits.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ValueError(f"ssim needs two equal-shape 2-D images, got {a.shape} and {b.shape}")
    size = min(SSIM_WINDOW, min(a.shape) - (1 - min(a.shape) % 2))
    g = gaussian_window(size)
    r = size // 2

    def filt(img):
        out = correlate1d(correlate1d(img, g, axis=0, mode="constant"), g, axis=1, mode="constant")
        return out[r : img.shape[0] - r, r : img.shape[1] - r]

    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    # rounding can overshoot the bound by a few ulps
    return float(np.clip(np.mean(num / den), -1.0, 1.0))


def mse(a, b) -> float:
    return float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))


def psnr(a, b, data_range: float = 1.0) -> float:
    err = mse(a, b)
    return float("inf") if err == 0 else float(10 * np.log10(data_range**2 / err))


def omega_value(W: np.ndarray) -> float:
    """Mean absolute deviation of the normalized Gram matrix from identity."""
    from spikit.neural.regularizers import ortho_regularizer

    return ortho_regularizer(W, grad=False)[0]


def omega_score(basis: BasisSet) -> float:
    return omega_value(basis.patterns)


# --- timing -------------------------------------------------------------------


def environment_descriptor() -> str:
    import numpy

    return f"{platform.python_implementation()} {platform.python_version()}; numpy {numpy.__version__}; {platform.machine()}; cpus={os.cpu_count()}"


@dataclass
class TimingSummary:
    median_ms: float
    iqr_ms: float
    samples_ms: list[float]
    environment: str
    reliable: bool = True


class TimingError(RuntimeError):
    """A timed call raised; ``partial`` holds the samples recorded before it."""

    def __init__(self, message: str, partial: list[float]):
        super().__init__(message)
        self.partial = partial


def time_reconstruction(method, inputs, repeats: int = 5, warmup: int = 1) -> TimingSummary:
    """Median and IQR of per-frame wall time for ``method(inp)`` over ``inputs``.

    Runs with BLAS pinned to one thread; warm-up calls are not recorded. A run
    whose IQR exceeds half the median is flagged unreliable.
    """
    from threadpoolctl import threadpool_limits

    if repeats < 5:
        raise ValueError("repeats must be >= 5")
    inputs = list(inputs)
    if not inputs:
        raise ValueError("no inputs to time")
    samples: list[float] = []
    with threadpool_limits(limits=1):
        for inp in inputs[: max(warmup, 0)]:
            method(inp)
        for _ in range(repeats):
            for inp in inputs:
                t0 = time.perf_counter()
                try:
                    method(inp)
                except Exception as exc:
                    raise TimingError(f"timed call failed after {len(samples)} samples: {exc}", samples) from exc
                samples.append(max((time.perf_counter() - t0) * 1e3, 1e-6))
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return TimingSummary(float(med), float(q3 - q1), samples, environment_descriptor(), reliable=bool((q3 - q1) <= 0.5 * med))


# --- reports ------------------------------------------------------------------

REPORT_FIELDS = ["method", "alpha", "eta", "ssim_mean", "ssim_std", "omega", "t_median_ms", "t_iqr_ms"]


@dataclass
class EvalReport:
    method: str
    alpha: float
    eta: float
    ssim_values: list[float] = field(default_factory=list)
    omega: float = float("nan")
    t_median_ms: float | None = None
    t_iqr_ms: float | None = None
    environment: str = ""

    def __post_init__(self):
        for s in self.ssim_values:
            if not -1.0 <= s <= 1.0:
                raise ValueError(f"SSIM value {s} outside [-1, 1]")

    @property
    def ssim_mean(self) -> float:
        return statistics.fmean(self.ssim_values) if self.ssim_values else float("nan")

    @property
    def ssim_std(self) -> float:
        return statistics.pstdev(self.ssim_values) if len(self.ssim_values) > 1 else 0.0

    def row(self) -> list[str]:
        def fmt(v):
            return "" if v is None else f"{v:.6g}"

        return [
            self.method,
            f"{self.alpha:g}",
            f"{self.eta:g}",
            fmt(self.ssim_mean),
            fmt(self.ssim_std),
            fmt(self.omega),
            fmt(self.t_median_ms),
            fmt(self.t_iqr_ms),
        ]


def write_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for rep in reports:
            w.writerow(rep.row())
