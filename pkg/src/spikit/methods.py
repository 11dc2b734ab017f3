"""The seven reconstruction methods behind one measure/reconstruct interface.

Each method owns the basis it measures with. TV methods use seeded random
patterns, FT uses the two-step sinusoids along the spiral path and DL
methods use the patterns learned by their checkpoint. Signed bases are
measured through the one's-complement scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spikit import dcan
from spikit.fourier import assemble_spectrum, fourier_reconstruct
from spikit.imaging import BasisKind, BasisSet, MeasurementVector, add_noise, complementary_measure, forward_measure
from spikit.metrics import omega_score
from spikit.patterns import FourierPatternSpec, fourier_analysis_basis, fourier_basis, fourier_coefficient_count, quantize, random_basis, spiral_path
from spikit.tv import TvSolverConfig, tv_reconstruct

METHODS = ("tv-b", "tv-nb", "ft", "dl-b", "dl-bo", "dl-nb", "dl-nbo")
DL_VARIANTS = {"dl-b": "B", "dl-bo": "BO", "dl-nb": "NB", "dl-nbo": "NBO"}
FOURIER_LEVELS = 256


class MissingCheckpoint(FileNotFoundError):
    pass


def pattern_count(alpha: float, N: int) -> int:
    return max(1, int(round(alpha * N * N)))


def checkpoint_name(variant, alpha: float) -> str:
    return f"dcan_{dcan.Variant(variant).value}_a{alpha:g}.ckpt"


@dataclass
class Method:
    """A configured reconstruction method for one side length and sampling ratio."""

    name: str
    alpha: float
    side: int
    basis: BasisSet
    tv_config: TvSolverConfig | None = None
    trained: dcan.TrainedDcan | None = None
    _fourier: tuple | None = field(default=None, repr=False)

    def measure(self, image, eta: float = 0.0, seed: int = 0) -> MeasurementVector:
        if self.name == "ft":
            y = forward_measure(self.basis, image)
        else:
            y = complementary_measure(self.basis, image)
        return add_noise(y, eta, seed, self.side)

    def reconstruct(self, y: MeasurementVector) -> np.ndarray:
        if self.name == "ft":
            path, spec = self._fourier
            return np.clip(fourier_reconstruct(assemble_spectrum(y, path, spec)), 0.0, 1.0)
        if self.trained is not None:
            return dcan.decode(self.trained, y)
        return tv_reconstruct(self.basis, y, self.tv_config)[0]

    def omega(self) -> float:
        """Orthogonality score of the basis this method effectively measures with."""
        if self.name == "ft":
            return omega_score(quantize(fourier_analysis_basis(self._fourier[0], self.side), FOURIER_LEVELS))
        return omega_score(self.basis)


def make_method(name: str, alpha: float, side: int, *, seed: int = 0, checkpoint_dir=None,
                tv_config: TvSolverConfig | None = None, trained: dcan.TrainedDcan | None = None) -> Method:
    """Build method ``name`` at ratio ``alpha``.

    DL methods load ``checkpoint_dir / checkpoint_name(variant, alpha)`` unless
    a ``trained`` model is passed; a missing file raises ``MissingCheckpoint``.
    """
    if name not in METHODS:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHODS)}")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if name == "ft":
        path = spiral_path(side, fourier_coefficient_count(alpha, side))
        spec = FourierPatternSpec(path.coords)
        return Method(name, alpha, side, fourier_basis(spec, side), _fourier=(path, spec))
    if name.startswith("tv"):
        kind = BasisKind.RANDOM_BINARY if name == "tv-b" else BasisKind.RANDOM_NONBINARY
        return Method(name, alpha, side, random_basis(pattern_count(alpha, side), side, kind, seed),
                      tv_config=tv_config or TvSolverConfig())
    if trained is None:
        path = Path(checkpoint_dir or ".") / checkpoint_name(DL_VARIANTS[name], alpha)
        if not path.exists():
            raise MissingCheckpoint(f"no checkpoint for {name} at alpha={alpha:g}: {path}")
        trained = dcan.TrainedDcan.load(path)
    cfg = trained.config
    if cfg.side != side or cfg.pattern_count != pattern_count(alpha, side):
        raise ValueError(f"checkpoint is for N={cfg.side}, P={cfg.pattern_count}; "
                         f"need N={side}, P={pattern_count(alpha, side)}")
    return Method(name, alpha, side, dcan.extract_basis(trained), trained=trained)
