"""Measurement-basis generation, quantization and the pattern container format."""

from __future__ import annotations

import functools
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spikit.imaging import BasisKind, BasisSet

CONTAINER_MAGIC = "SPIB1"


def random_basis(P: int, N: int, kind, seed: int) -> BasisSet:
    """Uniform random patterns: ``{-1, +1}`` for binary, ``U[-1, 1]`` otherwise."""
    if P < 1:
        raise ValueError("pattern count must be >= 1")
    kind = BasisKind(kind)
    rng = np.random.default_rng(seed)
    if kind is BasisKind.RANDOM_BINARY:
        pats = rng.integers(0, 2, size=(P, N * N)).astype(np.float64) * 2.0 - 1.0
        if P * N * N > 1 and np.unique(pats).size == 1:
            # astronomically unlikely; keep the two-value invariant anyway
            pats.flat[0] = -pats.flat[0]
    elif kind is BasisKind.RANDOM_NONBINARY:
        pats = rng.uniform(-1.0, 1.0, size=(P, N * N))
    else:
        raise ValueError(f"random_basis does not generate {kind.value} bases")
    return BasisSet(pats, N, kind, (-1.0, 1.0))


# --- spectral sampling paths -------------------------------------------------


def _centered(k: int, N: int) -> int:
    """Map a DFT index to the centered range ``[-(N//2), (N-1)//2]``."""
    k %= N
    return k - N if k > (N - 1) // 2 else k


def hermitian_partner(u: int, v: int, N: int) -> tuple[int, int]:
    return _centered(-u, N), _centered(-v, N)


def independent_coefficient_count(N: int) -> int:
    """Number of bins left after pairing each bin with its conjugate mirror."""
    self_conjugate = 4 if N % 2 == 0 else 1
    return self_conjugate + (N * N - self_conjugate) // 2


def _square_spiral():
    """Centered square spiral: right 1, down 1, left 2, up 2, right 3, ..."""
    u = v = 0
    yield u, v
    run = 1
    while True:
        for du, dv in ((0, 1), (1, 0)):
            for _ in range(run):
                u, v = u + du, v + dv
                yield u, v
        run += 1
        for du, dv in ((0, -1), (-1, 0)):
            for _ in range(run):
                u, v = u + du, v + dv
                yield u, v
        run += 1


@dataclass(frozen=True)
class SpectralPath(Sequence):
    """Ordered centered DFT coordinates ``(u, v)`` on an ``side x side`` grid."""

    side: int
    coords: tuple[tuple[int, int], ...]

    def __getitem__(self, i):
        return self.coords[i]

    def __len__(self) -> int:
        return len(self.coords)

    @functools.cached_property
    def array(self) -> np.ndarray:
        """Coordinates as a read-only ``(count, 2)`` int array."""
        arr = np.array(self.coords, dtype=np.int64).reshape(-1, 2)
        arr.flags.writeable = False
        return arr


def spiral_path(N: int, count: int) -> SpectralPath:
    """Low-frequency-first path over Hermitian-independent DFT bins.

    Walks an outward square spiral over centered coordinates ``(u, v)`` (``u``
    indexes rows, ``v`` columns; ``u, v`` in ``[-N//2, (N-1)//2]``), skipping
    bins off the grid and bins whose conjugate mirror was already emitted.
    """
    limit = independent_coefficient_count(N)
    if not 1 <= count <= limit:
        raise ValueError(f"count must be in [1, {limit}] for N={N}, got {count}")
    lo, hi = -(N // 2), (N - 1) // 2
    seen: set[tuple[int, int]] = set()
    path = []
    for u, v in _square_spiral():
        if not (lo <= u <= hi and lo <= v <= hi):
            continue
        if hermitian_partner(u, v, N) in seen:
            continue
        seen.add((u, v))
        path.append((u, v))
        if len(path) == count:
            return SpectralPath(N, tuple(path))
    raise AssertionError("unreachable")


def fourier_coefficient_count(alpha: float, N: int) -> int:
    """Coefficients sampled at ratio ``alpha``; each costs two physical patterns."""
    if not 0 < alpha <= 1:
        raise ValueError(f"Fourier sampling ratio must be in (0, 1], got {alpha}")
    total = independent_coefficient_count(N)
    return min(total, max(1, int(round(alpha * total))))


@dataclass(frozen=True)
class FourierPatternSpec:
    """Two-step phase-shifted sinusoids ``a + b cos(theta - k * phase_shift)``.

    With ``phase_shift = pi/2`` the second step is ``a + b sin(theta)`` so that
    ``(y0 - a S) - j (y1 - a S)`` is the forward DFT coefficient times ``b``.
    """

    path: tuple[tuple[int, int], ...]
    a: float = 0.5
    b: float = 0.5
    step_count: int = field(default=2, init=False)
    phase_shift: float = math.pi / 2

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError("need a >= b > 0 for non-negative patterns")
        path = tuple((int(u), int(v)) for u, v in self.path)
        if len(path) == 0:
            raise ValueError("empty spectral path")
        if len(set(path)) != len(path):
            raise ValueError("spectral path entries must be unique")
        object.__setattr__(self, "path", path)

    def check_grid(self, N: int) -> None:
        seen = set()
        lo, hi = -(N // 2), (N - 1) // 2
        for u, v in self.path:
            if not (lo <= u <= hi and lo <= v <= hi):
                raise ValueError(f"path entry {(u, v)} is off the {N}x{N} grid")
            partner = hermitian_partner(u, v, N)
            if partner in seen:
                raise ValueError(f"path contains {(u, v)} and its conjugate {partner}")
            seen.add((u, v))

    def frequencies(self, N: int) -> list[tuple[float, float]]:
        """Path as spatial frequencies in cycles/pixel."""
        return [(u / N, v / N) for u, v in self.path]


def _phase_grid(u: int, v: int, N: int) -> np.ndarray:
    m, n = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")
    # integer product mod N keeps the phase exact for large frequencies
    return 2.0 * np.pi * ((u * m + v * n) % N) / N


def fourier_basis(spec: FourierPatternSpec, N: int) -> BasisSet:
    """Physical patterns ordered coefficient-major, then phase step."""
    spec.check_grid(N)
    pats = np.empty((2 * len(spec.path), N * N))
    for i, (u, v) in enumerate(spec.path):
        theta = _phase_grid(u, v, N)
        for k in range(2):
            pats[2 * i + k] = (spec.a + spec.b * np.cos(theta - k * spec.phase_shift)).ravel()
    np.clip(pats, spec.a - spec.b, spec.a + spec.b, out=pats)
    return BasisSet(pats, N, BasisKind.FOURIER_STEP, (spec.a - spec.b, spec.a + spec.b))


def fourier_analysis_basis(path, N: int) -> BasisSet:
    """Zero-mean cos/sin patterns that the two-step scheme effectively measures.

    This is the signed basis the orthogonality score is defined on. Sine patterns
    of self-conjugate bins (DC and Nyquist) are identically zero and are omitted.
    """
    rows = []
    for u, v in path:
        theta = _phase_grid(u, v, N)
        rows.append(np.cos(theta).ravel())
        if hermitian_partner(u, v, N) != (u, v):
            rows.append(np.sin(theta).ravel())
    pats = np.clip(np.array(rows), -1.0, 1.0)
    return BasisSet(pats, N, BasisKind.FOURIER_STEP, (-1.0, 1.0))


# --- quantization --------------------------------------------------------------


def quantize(basis: BasisSet, levels: int) -> BasisSet:
    """Snap coefficients to ``levels`` evenly spaced values across ``value_range``.

    Values exactly midway between two levels go to the upper one.
    """
    if levels < 2:
        raise ValueError("levels must be >= 2")
    lo, hi = basis.value_range
    if hi == lo:
        return basis
    step = (hi - lo) / (levels - 1)
    idx = np.floor((basis.patterns - lo) / step + 0.5)
    np.clip(idx, 0, levels - 1, out=idx)
    q = np.clip(lo + idx * step, lo, hi)
    if basis.kind is BasisKind.RANDOM_BINARY and np.unique(q).size != 2:
        kind = BasisKind.RANDOM_NONBINARY
    else:
        kind = basis.kind
    return BasisSet(q, basis.side, kind, basis.value_range)


# --- container format ----------------------------------------------------------


def save_basis(path, basis: BasisSet) -> None:
    """Write ``SPIB1 P N kind vmin vmax\\n`` then P*N^2 little-endian float32."""
    lo, hi = basis.value_range
    header = f"{CONTAINER_MAGIC} {basis.pattern_count} {basis.side} {basis.kind.value} {lo!r} {hi!r}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(basis.patterns.astype("<f4").tobytes())


def load_basis(path) -> BasisSet:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 6 or header[0] != CONTAINER_MAGIC:
            raise ValueError(f"{path}: not a pattern container")
        P, N = int(header[1]), int(header[2])
        kind = BasisKind(header[3])
        lo, hi = float(header[4]), float(header[5])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != P * N * N:
        raise ValueError(f"{path}: expected {P * N * N} coefficients, found {data.size}")
    return BasisSet(data.astype(np.float64).reshape(P, N * N), N, kind, (lo, hi))


def export_pattern_png(path, basis: BasisSet, index: int) -> None:
    """Save one pattern as 8-bit PNG, mapping ``value_range`` linearly to 0..255."""
    from PIL import Image as PILImage

    lo, hi = basis.value_range
    scale = (basis.pattern(index) - lo) / (hi - lo) if hi > lo else np.zeros((basis.side,) * 2)
    PILImage.fromarray(np.round(scale * 255).astype(np.uint8)).save(Path(path))
