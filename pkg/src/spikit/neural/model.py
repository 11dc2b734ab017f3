"""Sequential container with explicit caches and a stale-cache guard."""

from __future__ import annotations

import itertools
import json
import struct
from dataclasses import dataclass

import numpy as np

from spikit.neural import layers as L

CHECKPOINT_MAGIC = b"DCAN1"
_ids = itertools.count()


class StaleCacheError(RuntimeError):
    pass


@dataclass
class ForwardCache:
    model_id: int
    version: int
    train: bool
    layer_caches: list


class Sequential:
    """Ordered layer stack. ``version`` is bumped on every parameter change so a
    backward pass can refuse caches produced before the change."""

    def __init__(self, layers, input_shape: tuple):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.model_id = next(_ids)
        self.version = 0
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                layer.check_input(np.zeros((1,) + shape, dtype=np.float32))
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from None
            shape = layer.output_shape(shape)
        self.output_shape = shape

    def bump(self) -> None:
        self.version += 1

    def forward(self, x: np.ndarray, train: bool = False, upto: int | None = None, start: int = 0):
        """Run layers ``start .. upto-1``. Returns ``(out, cache)``."""
        stop = len(self.layers) if upto is None else upto
        caches = []
        for i in range(start, stop):
            layer = self.layers[i]
            try:
                layer.check_input(x)
            except ValueError as exc:
                raise ValueError(f"layer {i} ({layer.kind}): {exc}") from None
            x, c = layer.forward(x, train)
            caches.append((i, c))
        return x, ForwardCache(self.model_id, self.version, train, caches)

    def backward(self, cache: ForwardCache, grad_out: np.ndarray, need_input_grad: bool = True):
        """Returns ``(param_grads, grad_in)``; ``param_grads[i]`` is a dict for layer ``i``.

        Frozen layers (``trainable = False``) contribute no parameter gradients.
        """
        if cache.model_id != self.model_id or cache.version != self.version:
            raise StaleCacheError("cache was produced before the last parameter update")
        grads: dict[int, dict] = {}
        g = grad_out
        entries = cache.layer_caches
        def wants(i):
            return self.layers[i].trainable and bool(self.layers[i].params)

        # without an input gradient, layers below the lowest trainable one can be skipped
        stop = 0
        if not need_input_grad:
            stop = next((k for k, (i, _) in enumerate(entries) if wants(i)), len(entries))
        for k in range(len(entries) - 1, stop - 1, -1):
            i, c = entries[k]
            g, pg = self.layers[i].backward(c, g, need_param_grads=wants(i))
            if pg:
                grads[i] = pg
        return grads, (g if need_input_grad else None)

    def predict(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        outs = [self.forward(x[s : s + batch_size], train=False)[0] for s in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0,) + self.output_shape, dtype=np.float32)

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield f"{i}.{name}", layer, name, arr

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            for name, arr in layer.buffers.items():
                yield f"{i}.{name}", layer, name, arr

    def parameter_count(self) -> int:
        return sum(a.size for *_, a in self.named_params())

    def spec(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.spec() for l in self.layers]}


def layer_from_spec(s: dict) -> L.Layer:
    kind = s["type"]
    if kind == "dense":
        return L.Dense(s["in_dim"], s["out_dim"], s["activation"], s["use_bias"])
    if kind == "batchnorm":
        return L.BatchNorm(s["features"], s["momentum"], s["epsilon"])
    if kind == "reshape":
        return L.Reshape(s["shape"])
    if kind == "flatten":
        return L.Flatten()
    if kind == "relu":
        return L.ReLU()
    if kind == "conv2d":
        return L.Conv2D(s["kh"], s["kw"], s["in_channels"], s["filters"], s["activation"])
    raise ValueError(f"unknown layer type {kind!r}")


def save_checkpoint(path, model: Sequential, extra: dict | None = None) -> None:
    """``DCAN1`` magic, u32 manifest length, UTF-8 JSON manifest, then
    little-endian float32 tensors in manifest order."""
    tensors = [(n, a) for n, _, _, a in model.named_params()] + [(n, a) for n, _, _, a in model.named_buffers()]
    manifest = {
        "model": model.spec(),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, a in tensors:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Sequential, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint")
        (n,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(n).decode("utf-8"))
        payload = fh.read()
    spec = manifest["model"]
    model = Sequential([layer_from_spec(s) for s in spec["layers"]], tuple(spec["input_shape"]))
    slots = {n: (layer, name, kind) for kind, it in (("p", model.named_params()), ("b", model.named_buffers()))
             for n, layer, name, _ in it}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if offset + 4 * count > len(payload):
            raise ValueError(f"{path}: truncated checkpoint")
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
        layer, name, kind = slots[entry["name"]]
        (layer.params if kind == "p" else layer.buffers)[name] = arr
    if offset != len(payload):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return model, manifest["extra"]
