"""Shared image/basis/measurement types and the single-pixel forward model.

Images are plain ``(N, N)`` float64 arrays with values in ``[0, 1]``; the
helpers here validate and convert them. Bases and measurement vectors carry
metadata and are immutable once built.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class BasisKind(str, enum.Enum):
    RANDOM_BINARY = "RandomBinary"
    RANDOM_NONBINARY = "RandomNonBinary"
    FOURIER_STEP = "FourierStep"
    LEARNED = "Learned"


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def check_image(image) -> np.ndarray:
    """Validate a square grayscale image and return it as float64."""
    x = np.asarray(image, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"image must be square 2-D, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError("image side must be >= 2")
    if not np.all(np.isfinite(x)):
        raise ValueError("image contains non-finite values")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError(f"image values outside [0, 1]: [{x.min()}, {x.max()}]")
    return x


def flatten(image) -> np.ndarray:
    """Row-major flattening of an ``N x N`` image to a length ``N**2`` vector."""
    return check_image(image).reshape(-1).copy()


def unflatten(vector, side: int | None = None) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    if side is None:
        side = int(round(np.sqrt(v.size)))
    if v.ndim != 1 or v.size != side * side:
        raise ValueError(f"cannot reshape vector of length {v.size} to {side}x{side}")
    return v.reshape(side, side).copy()


@dataclass(frozen=True)
class BasisSet:
    """``P`` modulation patterns of ``N**2`` coefficients each (one per row)."""

    patterns: np.ndarray
    side: int
    kind: BasisKind
    value_range: tuple[float, float]

    def __post_init__(self):
        pats = np.asarray(self.patterns, dtype=np.float64)
        if pats.ndim != 2 or pats.shape[0] < 1:
            raise ValueError(f"patterns must be a non-empty 2-D matrix, got {pats.shape}")
        if pats.shape[1] != self.side * self.side:
            raise ValueError(
                f"pattern length {pats.shape[1]} does not match side {self.side} "
                f"(expected {self.side * self.side})"
            )
        lo, hi = (float(v) for v in self.value_range)
        if lo > hi:
            raise ValueError(f"bad value_range {self.value_range}")
        if pats.min() < lo or pats.max() > hi:
            raise ValueError(
                f"coefficients [{pats.min()}, {pats.max()}] outside value_range [{lo}, {hi}]"
            )
        kind = BasisKind(self.kind)
        if kind is BasisKind.RANDOM_BINARY and np.unique(pats).size != 2:
            raise ValueError("a RandomBinary basis must take exactly two distinct values")
        object.__setattr__(self, "patterns", _frozen(pats))
        object.__setattr__(self, "value_range", (lo, hi))
        object.__setattr__(self, "kind", kind)

    @property
    def pattern_count(self) -> int:
        return self.patterns.shape[0]

    def pattern(self, j: int) -> np.ndarray:
        return self.patterns[j].reshape(self.side, self.side)


@dataclass(frozen=True)
class MeasurementVector:
    values: np.ndarray
    noise_level: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1:
            raise ValueError("measurement values must be 1-D")
        if self.noise_level < 0:
            raise ValueError("noise_level must be >= 0")
        object.__setattr__(self, "values", _frozen(vals))

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class SamplingConfig:
    alpha: float
    side: int = 64
    pattern_count: int = field(init=False)

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.side < 2:
            raise ValueError("side must be >= 2")
        object.__setattr__(self, "pattern_count", max(1, int(round(self.alpha * self.side**2))))


def forward_measure(basis: BasisSet, image) -> MeasurementVector:
    """Ideal detector readings ``y = Phi x``."""
    x = check_image(image)
    if x.shape[0] != basis.side:
        raise ValueError(
            f"dimension mismatch: basis is {basis.pattern_count}x{basis.side**2} "
            f"(side {basis.side}) but image is {x.shape[0]}x{x.shape[1]}"
        )
    return MeasurementVector(basis.patterns @ x.reshape(-1))


def add_noise(y: MeasurementVector, eta: float, seed: int, side: int) -> MeasurementVector:
    """Add i.i.d. detector noise with standard deviation ``eta * side**2``."""
    if eta < 0:
        raise ValueError(f"noise level must be non-negative, got {eta}")
    if eta == 0:
        return MeasurementVector(y.values, noise_level=0.0, seed=seed)
    rng = np.random.default_rng(seed)
    sigma = eta * side * side
    noisy = y.values + rng.normal(0.0, sigma, size=y.values.shape)
    return MeasurementVector(noisy, noise_level=float(eta), seed=seed)


def complementary_measure(basis: BasisSet, image) -> MeasurementVector:
    """Measure signed patterns with non-negative hardware.

    Each pattern ``w`` in ``[-1, 1]`` is displayed as ``(1 + w) / 2`` and as its
    one's complement; the two bucket readings are differenced.
    """
    x = check_image(image)
    if x.shape[0] != basis.side:
        raise ValueError(f"dimension mismatch: basis side {basis.side}, image side {x.shape[0]}")
    w = basis.patterns
    if w.min() < -1.0 or w.max() > 1.0:
        raise ValueError("complementary measurement needs coefficients in [-1, 1]")
    w_exp = 0.5 * (1.0 + w)
    flat = x.reshape(-1)
    direct = w_exp @ flat
    complement = (1.0 - w_exp) @ flat
    return MeasurementVector(direct - complement)


def load_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM as a grayscale float image in ``[0, 1]``.

    Colour files are converted with ITU-R BT.601 luma weights.
    """
    from PIL import Image as PILImage

    with PILImage.open(path) as im:
        if im.mode in ("L", "P", "1"):
            arr = np.asarray(im.convert("L"), dtype=np.float64)
        else:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
            arr = rgb @ np.array([0.299, 0.587, 0.114])
    return arr / 255.0


def save_image(path, image) -> None:
    """Write an image as 8-bit grayscale; ``.pgm`` gives binary P5, otherwise PNG."""
    from PIL import Image as PILImage

    x = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    img8 = np.round(x * 255.0).astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        h, w = img8.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img8.tobytes())
    else:
        PILImage.fromarray(img8).save(path)
