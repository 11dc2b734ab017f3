"""Total-variation compressive-sensing reconstruction.

Solves ``min ||z||_1  s.t.  z = Theta x,  y = Phi x`` with an augmented
Lagrangian (ADMM ordering): closed-form shrinkage for ``z``, a quadratic solve
for ``x`` and first-order multiplier updates for both constraints. The ``x``
solve is exact by default (FFT-diagonal Laplacian plus a Woodbury correction);
a capped conjugate-gradient solve is available as an option.

With multiplier updates the augmented Lagrangian itself is not monotone. The
quantity that provably decreases for exact sub-solves is the fixed-point
residual ``beta |Theta dx|^2 + mu |A dx|^2 + |d nu|^2 / beta + |d lam|^2 / mu``
between consecutive iterates, which the trace records alongside the objective.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from spikit.imaging import BasisSet, MeasurementVector


class TvFlavor(str, enum.Enum):
    ANISOTROPIC = "anisotropic"
    ISOTROPIC = "isotropic"


@dataclass(frozen=True)
class TvSolverConfig:
    mu: float = 2.0**8
    beta: float = 2.0**5
    max_outer_iters: int = 300
    max_inner_iters: int = 20
    tol: float = 1e-4
    tv_flavor: TvFlavor = TvFlavor.ANISOTROPIC
    # "direct": exact x-update via FFT + Woodbury; "cg": max_inner_iters CG steps
    x_solver: str = "direct"

    def __post_init__(self):
        if not (self.mu > 0 and self.beta > 0 and self.tol > 0):
            raise ValueError("mu, beta and tol must be positive")
        if self.max_outer_iters < 1 or self.max_inner_iters < 1:
            raise ValueError("iteration caps must be >= 1")
        if self.x_solver not in ("direct", "cg"):
            raise ValueError(f"unknown x_solver {self.x_solver!r}")
        object.__setattr__(self, "tv_flavor", TvFlavor(self.tv_flavor))


class GradientOperator:
    """Periodic forward differences, horizontal block first then vertical.

    Maps an ``N*N`` row-major vector to ``2*N*N`` entries.
    """

    def __init__(self, N: int):
        if N < 2:
            raise ValueError("N must be >= 2")
        self.N = N
        self.shape = (2 * N * N, N * N)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        img = x.reshape(self.N, self.N)
        dh = np.roll(img, -1, axis=1) - img
        dv = np.roll(img, -1, axis=0) - img
        return np.concatenate([dh.ravel(), dv.ravel()])

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        n2 = self.N * self.N
        gh = g[:n2].reshape(self.N, self.N)
        gv = g[n2:].reshape(self.N, self.N)
        out = (np.roll(gh, 1, axis=1) - gh) + (np.roll(gv, 1, axis=0) - gv)
        return out.ravel()

    def gram(self, x: np.ndarray) -> np.ndarray:
        """``Theta^T Theta x``: the periodic 5-point negative Laplacian."""
        img = x.reshape(self.N, self.N)
        lap = 4 * img - np.roll(img, 1, 0) - np.roll(img, -1, 0) - np.roll(img, 1, 1) - np.roll(img, -1, 1)
        return lap.ravel()

    def as_sparse(self) -> sp.csr_matrix:
        N = self.N
        idx = np.arange(N * N).reshape(N, N)
        eye = sp.identity(N * N, format="csr")
        right = sp.csr_matrix((np.ones(N * N), (idx.ravel(), np.roll(idx, -1, axis=1).ravel())), shape=(N * N, N * N))
        down = sp.csr_matrix((np.ones(N * N), (idx.ravel(), np.roll(idx, -1, axis=0).ravel())), shape=(N * N, N * N))
        return sp.vstack([right - eye, down - eye]).tocsr()


def gradient_operator(N: int) -> GradientOperator:
    return GradientOperator(N)


@dataclass
class ConvergenceTrace:
    objective: list[float] = field(default_factory=list)
    tv_value: list[float] = field(default_factory=list)
    split_residual: list[float] = field(default_factory=list)
    data_residual: list[float] = field(default_factory=list)
    rel_change: list[float] = field(default_factory=list)
    fixed_point_residual: list[float] = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.objective)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "objective", "tv", "split_residual", "data_residual", "rel_change", "fixed_point_residual"])
            rows = zip(self.objective, self.tv_value, self.split_residual, self.data_residual, self.rel_change,
                       self.fixed_point_residual)
            for i, row in enumerate(rows):
                w.writerow([i + 1, *(repr(float(v)) for v in row)])


class TvDivergence(RuntimeError):
    def __init__(self, message: str, trace: ConvergenceTrace):
        super().__init__(message)
        self.trace = trace


def _shrink(v: np.ndarray, thresh: float, flavor: TvFlavor, n2: int) -> np.ndarray:
    if flavor is TvFlavor.ANISOTROPIC:
        return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)
    h, w = v[:n2], v[n2:]
    mag = np.sqrt(h * h + w * w)
    scale = np.maximum(mag - thresh, 0.0) / np.where(mag > 0, mag, 1.0)
    return np.concatenate([h * scale, w * scale])


def _tv_norm(d: np.ndarray, flavor: TvFlavor, n2: int) -> float:
    if flavor is TvFlavor.ANISOTROPIC:
        return float(np.abs(d).sum())
    return float(np.sqrt(d[:n2] ** 2 + d[n2:] ** 2).sum())


def _cg(apply_A, b: np.ndarray, x0: np.ndarray, iters: int, rtol: float = 1e-10) -> np.ndarray:
    x = x0.copy()
    r = b - apply_A(x)
    p = r.copy()
    rs = r @ r
    stop = (rtol * np.linalg.norm(b)) ** 2
    for _ in range(iters):
        if rs <= stop:
            break
        Ap = apply_A(p)
        alpha = rs / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = r @ r
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x


class _DirectSolver:
    """Exact solve of ``(beta Theta^T Theta + mu A^T A) x = r``.

    ``Theta^T Theta`` is a periodic Laplacian, diagonal under the 2-D DFT but
    singular on constants. The constant mode is lifted by ``c e e^T`` (``e`` the
    unit constant vector), which is taken back out as one extra rank of the
    Woodbury update alongside ``mu A^T A``.
    """

    def __init__(self, A: np.ndarray, N: int, beta: float, mu: float):
        self.N = N
        k = np.arange(N)
        lap = 4 - 2 * np.cos(2 * np.pi * k / N)[:, None] - 2 * np.cos(2 * np.pi * k / N)[None, :]
        c = 8.0 * beta
        d = beta * lap
        d[0, 0] = c
        self.d = d[:, : N // 2 + 1]
        e = np.full((1, N * N), 1.0 / N)
        self.U = np.vstack([A, e])
        self.Z = self._dinv_rows(self.U)
        cinv = np.full(self.U.shape[0], 1.0 / mu)
        cinv[-1] = -1.0 / c
        S = self.U @ self.Z.T
        S[np.diag_indices_from(S)] += cinv
        self.lu = sla.lu_factor(S, check_finite=False)

    def _dinv_rows(self, rows: np.ndarray) -> np.ndarray:
        N = self.N
        f = np.fft.rfft2(rows.reshape(-1, N, N))
        return np.fft.irfft2(f / self.d, s=(N, N)).reshape(rows.shape[0], N * N)

    def __call__(self, r: np.ndarray) -> np.ndarray:
        t = self._dinv_rows(r[None, :])[0]
        s = sla.lu_solve(self.lu, self.U @ t, check_finite=False)
        return t - self.Z.T @ s


def tv_reconstruct(basis: BasisSet, y: MeasurementVector, config: TvSolverConfig | None = None) -> tuple[np.ndarray, ConvergenceTrace]:
    """Reconstruct an image from measurements by TV minimization.

    The basis is rescaled internally by its RMS row norm so that the default
    penalties behave the same for +-1, [-1, 1] and identity bases.

    Returns the clamped ``N x N`` image and the per-iteration trace. Raises
    ``TvDivergence`` (carrying the trace) if the iterates stop being finite.
    """
    cfg = config or TvSolverConfig()
    Phi = basis.patterns
    vals = np.asarray(y.values, dtype=np.float64)
    if vals.size != Phi.shape[0]:
        raise ValueError(f"basis has {Phi.shape[0]} patterns but {vals.size} measurements were given")
    N = basis.side
    n2 = N * N
    theta = GradientOperator(N)

    scale = np.sqrt((Phi * Phi).sum() / Phi.shape[0])
    A = Phi / scale
    b = vals / scale
    mu, beta = cfg.mu, cfg.beta

    if cfg.x_solver == "direct":
        solve = _DirectSolver(A, N, beta, mu)
    else:
        def normal_op(v):
            return beta * theta.gram(v) + mu * (A.T @ (A @ v))

        def solve(rhs, x0):
            return _cg(normal_op, rhs, x0, cfg.max_inner_iters)

    x = A.T @ b
    nu = np.zeros(2 * n2)
    lam = np.zeros(b.size)
    trace = ConvergenceTrace()
    dx = theta(x)
    ax = A @ x
    for _ in range(cfg.max_outer_iters):
        z = _shrink(dx - nu / beta, 1.0 / beta, cfg.tv_flavor, n2)
        rhs = theta.adjoint(beta * z + nu) + A.T @ (mu * b + lam)
        x_new = solve(rhs) if cfg.x_solver == "direct" else solve(rhs, x)

        dx_new = theta(x_new)
        ax_new = A @ x_new
        r_split = dx_new - z
        r_data = ax_new - b
        objective = _tv_norm(z, cfg.tv_flavor, n2) - nu @ r_split + 0.5 * beta * (r_split @ r_split) - lam @ r_data + 0.5 * mu * (r_data @ r_data)
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-12)
        trace.objective.append(float(objective))
        trace.tv_value.append(_tv_norm(dx_new, cfg.tv_flavor, n2))
        trace.split_residual.append(float(np.linalg.norm(r_split)))
        trace.data_residual.append(float(np.linalg.norm(r_data) / max(np.linalg.norm(b), 1e-300)))
        trace.rel_change.append(float(change))
        if not (np.isfinite(objective) and np.all(np.isfinite(x_new))):
            raise TvDivergence("TV solver produced non-finite iterates", trace)

        d_th, d_a = dx_new - dx, ax_new - ax
        # multiplier steps are beta * r_split and mu * r_data
        trace.fixed_point_residual.append(float(
            beta * (d_th @ d_th) + mu * (d_a @ d_a) + beta * (r_split @ r_split) + mu * (r_data @ r_data)))
        nu = nu - beta * r_split
        lam = lam - mu * r_data
        x, dx, ax = x_new, dx_new, ax_new
        if change < cfg.tol:
            trace.converged = True
            break
    return np.clip(x.reshape(N, N), 0.0, 1.0), trace
