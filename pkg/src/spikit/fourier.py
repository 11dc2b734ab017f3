"""Two-step Fourier single-pixel imaging: spectrum assembly and inversion."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from spikit.imaging import MeasurementVector
from spikit.patterns import FourierPatternSpec, SpectralPath

IMAG_TOLERANCE = 1e-6


@dataclass(frozen=True)
class SpectrumEstimate:
    """Complex DFT grid (numpy index order) with the mask of measured bins."""

    side: int
    coefficients: np.ndarray
    mask: np.ndarray
    amplitude: float = 1.0

    def __post_init__(self):
        shape = (self.side, self.side)
        if self.coefficients.shape != shape or self.mask.shape != shape:
            raise ValueError("spectrum arrays must be side x side")

    def is_hermitian(self, atol: float = 1e-9) -> bool:
        H, m = self.coefficients, self.mask
        mirrored = np.roll(np.flip(H, (0, 1)), 1, axis=(0, 1))
        mirrored_mask = np.roll(np.flip(m, (0, 1)), 1, axis=(0, 1))
        if not np.array_equal(m, mirrored_mask):
            return False
        if np.any(H[~m] != 0):
            return False
        scale = max(np.abs(H).max(), 1.0)
        return bool(np.all(np.abs(H - np.conj(mirrored)) <= atol * scale))


def _pixel_sum(y0_dc: float, y1_dc: float, a: float, b: float) -> float:
    # least squares over the two DC readings: y0 = (a + b) S, y1 = a S
    return ((a + b) * y0_dc + a * y1_dc) / ((a + b) ** 2 + a**2)


def assemble_spectrum(y: MeasurementVector, path: SpectralPath, spec: FourierPatternSpec) -> SpectrumEstimate:
    """Combine each reading pair as ``(y0 - a S) - j (y1 - a S)``.

    ``S`` is the scene's total intensity, recovered from the DC pair that every
    spiral path begins with. Each coefficient also fills its conjugate mirror;
    self-conjugate bins keep only the real part.
    """
    N = path.side
    uv = path.array
    values = np.asarray(y.values, dtype=np.float64)
    if values.size != 2 * len(uv):
        raise ValueError(f"expected {2 * len(uv)} readings for {len(uv)} coefficients, got {values.size}")
    dc_rows = np.flatnonzero((uv[:, 0] == 0) & (uv[:, 1] == 0))
    if dc_rows.size == 0:
        raise ValueError("spectral path must include the DC bin")
    a, b = spec.a, spec.b
    pairs = values.reshape(-1, 2)
    dc = dc_rows[0]
    S = _pixel_sum(pairs[dc, 0], pairs[dc, 1], a, b)

    H = (pairs[:, 0] - a * S) - 1j * (pairs[:, 1] - a * S)
    pu, pv = uv[:, 0] % N, uv[:, 1] % N
    qu, qv = (-uv[:, 0]) % N, (-uv[:, 1]) % N
    self_conj = (pu == qu) & (pv == qv)
    H = np.where(self_conj, H.real + 0j, H)

    grid = np.zeros((N, N), dtype=np.complex128)
    mask = np.zeros((N, N), dtype=bool)
    grid[qu, qv] = np.conj(H)
    grid[pu, pv] = H
    mask[pu, pv] = True
    mask[qu, qv] = True
    return SpectrumEstimate(N, grid, mask, amplitude=b)


def fourier_reconstruct(spectrum: SpectrumEstimate) -> np.ndarray:
    """Inverse DFT, rescaled by the known pattern amplitude and clamped to [0, 1]."""
    x = np.fft.ifft2(spectrum.coefficients / spectrum.amplitude)
    scale = max(np.abs(x.real).max(), 1e-300)
    residue = np.abs(x.imag).max() / scale
    if residue > IMAG_TOLERANCE:
        raise ValueError(f"imaginary residue {residue:.3g} too large: spectrum mask is not Hermitian")
    return np.clip(x.real, 0.0, 1.0)


def dump_spectrum_csv(path, spectrum: SpectrumEstimate) -> None:
    N = spectrum.side
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["u", "v", "re", "im"])
        for pu, pv in zip(*np.nonzero(spectrum.mask)):
            u = pu - N if pu > (N - 1) // 2 else pu
            v = pv - N if pv > (N - 1) // 2 else pv
            h = spectrum.coefficients[pu, pv]
            w.writerow([int(u), int(v), repr(float(h.real)), repr(float(h.imag))])

