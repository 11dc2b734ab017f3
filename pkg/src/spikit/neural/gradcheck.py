"""Central finite-difference checks for layers and penalty functions."""

from __future__ import annotations

import numpy as np

from spikit.neural.layers import BatchNorm, Layer

DEFAULT_STEP = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-5}


def _masks(cache):
    return [c for c in cache if isinstance(c, np.ndarray) and c.dtype == bool]


def _abs_err(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    if analytic.size == 0:
        return 0.0, 0.0
    return float(np.abs(analytic - numeric).max()), float(np.abs(numeric).max())


def _pick(rng, size: int, limit: int) -> np.ndarray:
    return np.arange(size) if size <= limit else rng.choice(size, limit, replace=False)


def check_layer(layer: Layer, x: np.ndarray, train: bool = True, rng=None, max_coords: int = 24,
                step: float | None = None) -> dict[str, float]:
    """Relative error of every gradient the layer produces against central differences.

    The probe loss is ``sum(out * R)`` for a fixed random ``R``. Coordinates
    whose +-step probes flip an activation mask are skipped (the loss has a
    kink there). Errors are max-abs differences divided by the largest gradient
    magnitude anywhere in the layer (input and parameters together), so a
    near-cancelling single entry is judged against the layer's gradient scale
    rather than against float32 rounding noise. Returns
    ``{"input": err, "<param>": err, ...}``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    dtype = x.dtype
    h = step if step is not None else DEFAULT_STEP[np.dtype(dtype)]
    saved_stats = isinstance(layer, BatchNorm) and layer.update_stats
    if isinstance(layer, BatchNorm):
        layer.update_stats = False
    try:
        out, cache = layer.forward(x, train)
        R = rng.standard_normal(out.shape)
        gin, pgrads = layer.backward(cache, R.astype(dtype))
        base_masks = _masks(cache)

        def probe(tensor, flat_index):
            flat = tensor.reshape(-1)
            orig = flat[flat_index]
            vals, masks, points = [], [], []
            for sign in (1, -1):
                flat[flat_index] = orig + sign * h
                points.append(float(flat[flat_index]))  # the step actually stored
                o, c = layer.forward(x, train)
                vals.append(float(np.sum(o.astype(np.float64) * R)))
                masks.append(_masks(c))
            flat[flat_index] = orig
            kink = any(not np.array_equal(a, b) for a, b in zip(*masks)) or (
                base_masks and any(not np.array_equal(a, b) for a, b in zip(base_masks, masks[0])))
            return (vals[0] - vals[1]) / (points[0] - points[1]), kink

        def compare(tensor, analytic):
            idx = _pick(rng, tensor.size, max_coords)
            a, n = [], []
            for k in idx:
                num, kink = probe(tensor, k)
                if kink:
                    continue
                a.append(analytic.reshape(-1)[k])
                n.append(num)
            err, peak = _abs_err(np.array(a), np.array(n))
            return err, max(peak, float(np.abs(analytic).max()) if analytic.size else 0.0)

        raw = {"input": compare(x, gin)}
        for name, g in pgrads.items():
            raw[name] = compare(layer.params[name], g)
        scale = max(max(p for _, p in raw.values()), 1e-12)
        return {k: e / scale for k, (e, _) in raw.items()}
    finally:
        if isinstance(layer, BatchNorm):
            layer.update_stats = saved_stats


def check_function(fn, W: np.ndarray, rng=None, max_coords: int = 24, step: float | None = None,
                   kinks=None) -> float:
    """Relative error of ``fn(W) -> (value, grad)`` against central differences.

    ``kinks(W)`` may return an array of branch indicators (for example the
    signs inside an absolute value); coordinates whose +-step probes change it
    are skipped.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    h = step if step is not None else DEFAULT_STEP[np.dtype(W.dtype)]
    _, grad = fn(W)
    flat = W.reshape(-1)
    a, n = [], []
    for k in _pick(rng, W.size, max_coords):
        orig = flat[k]
        flat[k] = orig + h
        hi = float(flat[k])
        up = fn(W)[0]
        branch_hi = kinks(W) if kinks is not None else None
        flat[k] = orig - h
        lo = float(flat[k])
        down = fn(W)[0]
        branch_lo = kinks(W) if kinks is not None else None
        flat[k] = orig
        if kinks is not None and not np.array_equal(branch_hi, branch_lo):
            continue
        a.append(grad.reshape(-1)[k])
        n.append((up - down) / (hi - lo))
    err, peak = _abs_err(np.array(a), np.array(n))
    return err / max(peak, float(np.abs(grad).max()), 1e-12)
