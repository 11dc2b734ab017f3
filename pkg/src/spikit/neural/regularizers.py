"""Pattern-matrix penalties. ``W`` holds one pattern per row (P x N^2)."""

from __future__ import annotations

import numpy as np


def binary_regularizer(W: np.ndarray, grad: bool = True):
    """``mean((1 - w^2)^2)``: zero exactly when every entry is +-1."""
    W = np.asarray(W, dtype=np.float64)
    d = 1.0 - W * W
    value = float(np.mean(d * d))
    if not grad:
        return value, None
    return value, (-4.0 / W.size) * W * d


def ortho_regularizer(W: np.ndarray, grad: bool = True):
    """Mean absolute off-diagonal entry of the Gram matrix of unit-norm rows.

    ``(1/P^2) sum_{i != j} |<w_i, w_j>| / (|w_i| |w_j|)``. The diagonal is 1 by
    construction and is left out so rounding there cannot leak into the value
    or the subgradient. Rows must be non-zero.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("W must be a 2-D pattern matrix")
    P = W.shape[0]
    norms = np.linalg.norm(W, axis=1)
    if np.any(norms == 0):
        raise ValueError("ortho regularizer is undefined for an all-zero pattern")
    U = W / norms[:, None]
    G = U @ U.T
    np.fill_diagonal(G, 0.0)
    value = float(np.abs(G).sum() / P**2)
    if not grad:
        return value, None
    S = np.sign(G) / P**2
    gU = 2.0 * (S @ U)
    # project out the radial component: d(w/|w|) = (I - u u^T) / |w|
    gW = (gU - (gU * U).sum(axis=1, keepdims=True) * U) / norms[:, None]
    return value, gW


def ortho_signs(W: np.ndarray) -> np.ndarray:
    """Signs of the off-diagonal Gram entries: the branches of ``ortho_regularizer``."""
    W = np.asarray(W, dtype=np.float64)
    U = W / np.linalg.norm(W, axis=1)[:, None]
    G = U @ U.T
    np.fill_diagonal(G, 0.0)
    return np.sign(G)
