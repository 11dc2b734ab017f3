"""Image ingestion, deterministic train/test splitting and synthetic phantoms."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from spikit.imaging import load_image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".pgm"}
ARCHIVE_MAGIC = b"SPIA1\n"


def checksum(image: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(image, dtype="<f8").tobytes()).hexdigest()[:16]


def resize_bilinear(image: np.ndarray, N: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment; identity at the same size."""
    h, w = image.shape
    if (h, w) == (N, N):
        return image.copy()

    def coords(src, dst):
        c = (np.arange(dst) + 0.5) * src / dst - 0.5
        c = np.clip(c, 0, src - 1)
        i0 = np.floor(c).astype(int)
        i1 = np.minimum(i0 + 1, src - 1)
        return i0, i1, c - i0

    r0, r1, fr = coords(h, N)
    c0, c1, fc = coords(w, N)
    top = image[r0][:, c0] * (1 - fc) + image[r0][:, c1] * fc
    bot = image[r1][:, c0] * (1 - fc) + image[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


@dataclass
class DatasetManifest:
    source: str
    image_count: int
    side: int
    split_ratio: float
    seed: int
    train_files: list[str] = field(default_factory=list)
    test_files: list[str] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)
    grayscale: str = "ITU-R BT.601 luma"
    resampling: str = "bilinear"

    def __post_init__(self):
        if not 0 < self.split_ratio < 1:
            raise ValueError("split ratio must be in (0, 1)")

    def to_text(self) -> str:
        lines = [
            f"source = {self.source}",
            f"image_count = {self.image_count}",
            f"side = {self.side}",
            f"split_ratio = {self.split_ratio}",
            f"seed = {self.seed}",
            f"grayscale = {self.grayscale}",
            f"resampling = {self.resampling}",
            f"train_count = {len(self.train_files)}",
            f"test_count = {len(self.test_files)}",
        ]
        for split, names in (("train", self.train_files), ("test", self.test_files)):
            for name in names:
                lines.append(f"{split} {name} {self.checksums[name]}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text())


def load_folder(folder, N: int = 64) -> tuple[list[str], np.ndarray]:
    """Every decodable PNG/PGM in ``folder`` (sorted by name) as N x N grayscale."""
    folder = Path(folder)
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    names, images = [], []
    for p in files:
        try:
            img = load_image(p)
        except Exception as exc:  # PIL raises a zoo of types for corrupt files
            log.warning("skipping %s: %s", p.name, exc)
            continue
        names.append(p.name)
        images.append(np.clip(resize_bilinear(img, N), 0.0, 1.0))
    if not images:
        raise ValueError(f"no decodable images in {folder}")
    return names, np.stack(images)


def ingest(folder, N: int = 64, seed: int = 0, split_ratio: float = 0.9):
    """Load every PNG/PGM in ``folder``, convert to N x N grayscale in [0, 1] and split.

    The split shuffles the sorted filename list with ``seed``, so it does not
    depend on directory listing order. Undecodable files are skipped.

    Returns ``(train, test, manifest)`` where ``train``/``test`` are float64
    arrays of shape ``(count, N, N)``.
    """
    names, stack = load_folder(folder, N)
    images = dict(zip(names, stack))
    order = np.random.default_rng(seed).permutation(len(names))
    n_train = int(round(split_ratio * len(names)))
    train_names = [names[i] for i in order[:n_train]]
    test_names = [names[i] for i in order[n_train:]]
    manifest = DatasetManifest(
        source=str(folder),
        image_count=len(names),
        side=N,
        split_ratio=split_ratio,
        seed=seed,
        train_files=train_names,
        test_files=test_names,
        checksums={n: checksum(images[n]) for n in names},
    )
    stack_of = lambda ns: np.stack([images[n] for n in ns]) if ns else np.zeros((0, N, N))  # noqa: E731
    return stack_of(train_names), stack_of(test_names), manifest


# --- photographic crops ---------------------------------------------------------

# everyday-photo sample images shipped with scikit-image, scikit-learn and matplotlib
PHOTO_SOURCES = (
    "astronaut", "camera", "chelsea", "coffee", "coins", "rocket", "clock",
    "brick", "grass", "gravel", "china", "flower", "grace_hopper",
)
_LUMA = np.array([0.299, 0.587, 0.114])


def _photo(name: str) -> np.ndarray:
    if name in ("china", "flower"):
        from sklearn.datasets import load_sample_image

        arr = load_sample_image(f"{name}.jpg")
    elif name == "grace_hopper":
        import matplotlib.cbook

        from PIL import Image as PILImage

        with PILImage.open(matplotlib.cbook.get_sample_data("grace_hopper.jpg")) as im:
            arr = np.asarray(im.convert("RGB"))
    else:
        import skimage.data

        arr = getattr(skimage.data, name)()
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., :3] @ _LUMA
    return arr / 255.0


def photo_crops(count: int, N: int = 64, seed: int = 0, split: str = "train", holdout: float = 0.3,
                crop_range: tuple[int, int] = (80, 128), sources=PHOTO_SOURCES) -> np.ndarray:
    """Random square crops of sample photographs, resized to N x N.

    A stand-in for small natural-image collections when none is on disk. Each
    source image is cut at ``1 - holdout`` of its width: ``"train"`` crops come
    from the left part (with random horizontal flips), ``"test"`` crops from the
    right part, so the two splits never share pixels. Sources are visited
    round-robin. Needs scikit-image and scikit-learn.
    """
    if split not in ("train", "test"):
        raise ValueError("split must be 'train' or 'test'")
    if count < 1 or not 0 < holdout < 1:
        raise ValueError("need count >= 1 and holdout in (0, 1)")
    photos = [_photo(n) for n in sources]
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    out = np.empty((count, N, N))
    for i in range(count):
        img = photos[i % len(photos)]
        cut = int(round((1 - holdout) * img.shape[1]))
        region = img[:, :cut] if split == "train" else img[:, cut:]
        side = int(rng.integers(crop_range[0], crop_range[1] + 1))
        side = min(side, *region.shape)
        r = int(rng.integers(0, region.shape[0] - side + 1))
        c = int(rng.integers(0, region.shape[1] - side + 1))
        crop = region[r : r + side, c : c + side]
        if split == "train" and rng.random() < 0.5:
            crop = crop[:, ::-1]
        out[i] = np.clip(resize_bilinear(crop, N), 0.0, 1.0)
    return out


# --- synthetic phantoms -------------------------------------------------------


def _rectangles(rng, N: int) -> np.ndarray:
    img = np.full((N, N), rng.uniform(0.0, 0.4))
    for _ in range(rng.integers(2, 7)):
        h, w = rng.integers(max(2, N // 8), max(3, N // 2) + 1, size=2)
        r, c = rng.integers(0, N - h + 1), rng.integers(0, N - w + 1)
        img[r : r + h, c : c + w] = rng.uniform(0.1, 1.0)
    return img


def _ellipses(rng, N: int, img: np.ndarray) -> np.ndarray:
    m, n = np.mgrid[0:N, 0:N] + 0.5
    for _ in range(rng.integers(1, 4)):
        cr, cc = rng.uniform(0.2 * N, 0.8 * N, size=2)
        ar, ac = rng.uniform(0.08 * N, 0.3 * N, size=2)
        inside = ((m - cr) / ar) ** 2 + ((n - cc) / ac) ** 2 <= 1.0
        img[inside] = rng.uniform(0.0, 1.0)
    return img


def _texture(rng, N: int) -> np.ndarray:
    m, n = np.mgrid[0:N, 0:N] / N
    tex = np.zeros((N, N))
    for _ in range(rng.integers(1, 4)):
        fu, fv = rng.integers(-3, 4, size=2)
        tex += rng.uniform(0.3, 1.0) * np.cos(2 * np.pi * (fu * m + fv * n) + rng.uniform(0, 2 * np.pi))
    tex -= tex.min()
    return tex / tex.max() if tex.max() > 0 else tex


def synth_phantoms(count: int, N: int = 64, seed: int = 0, family: str = "mixed") -> np.ndarray:
    """Random piecewise-constant scenes, optionally with low-frequency texture.

    ``family`` is ``"rectangles"`` (rectangles only), ``"textured"`` (rectangles
    and ellipses blended with sinusoidal texture) or ``"mixed"`` (each image
    picks one of the two). Returns a ``(count, N, N)`` float64 array in [0, 1].
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if family not in ("rectangles", "textured", "mixed"):
        raise ValueError(f"unknown phantom family {family!r}")
    rng = np.random.default_rng(seed)
    out = np.empty((count, N, N))
    for i in range(count):
        kind = family if family != "mixed" else ("rectangles", "textured")[rng.integers(0, 2)]
        img = _rectangles(rng, N)
        if kind == "textured":
            img = _ellipses(rng, N, img)
            w = rng.uniform(0.2, 0.5)
            img = (1 - w) * img + w * _texture(rng, N)
        out[i] = np.clip(img, 0.0, 1.0)
    return out


# --- flat binary cache ---------------------------------------------------------


def save_archive(path, images: np.ndarray) -> None:
    """``SPIA1`` header, ``count N`` line, then little-endian float32 pixels."""
    images = np.asarray(images)
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(f"{images.shape[0]} {images.shape[1]}\n".encode("ascii"))
        fh.write(images.astype("<f4").tobytes())


def load_archive(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.readline() != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: not an image archive")
        count, N = (int(t) for t in fh.readline().split())
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count * N * N:
        raise ValueError(f"{path}: truncated archive")
    return data.reshape(count, N, N).astype(np.float64)
