"""Procedural grayscale benchmark images and the structural-density score.

Four content classes are generated from a seed. Each one is a cheap stand-in
for a family of real inputs: sparse text, dense rib-like structure, uniform
noise and a textured landscape. The density score (edge fraction times
block-wise orientation coherence) ranks them in the same order as their
observed LLC pressure. Uniform noise has the most edges but almost no
coherent structure, so it scores lowest.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .anyres import AspectRatio
from .errors import ConfigurationError

MIN_GENERATE_PX = 64
EDGE_THRESHOLD = 0.1
BLOCK = 16


class ContentClass(enum.Enum):
    DOCUMENT = "document"
    XRAY = "xray"
    CRYPTO_NOISE = "crypto-noise"
    NATURE = "nature"

    @classmethod
    def parse(cls, text) -> "ContentClass":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "-")
        aliases = {"x-ray": "xray", "noise": "crypto-noise", "cryptonoise": "crypto-noise",
                   "doc": "document"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            choices = ", ".join(c.value for c in cls)
            raise ConfigurationError(f"unknown content class {text!r} ({choices})") from None


@dataclass(frozen=True, eq=False)
class PixelBuffer:
    """Row-major grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ConfigurationError(f"pixel buffer must be a non-empty 2-D array, got {px.shape}")
        if not np.all((px >= 0.0) & (px <= 1.0)):
            raise ConfigurationError("pixel intensities must lie in [0, 1]")
        px = px.copy() if px is self.pixels else px
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width_px(self) -> int:
        return self.pixels.shape[1]

    @property
    def height_px(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, PixelBuffer):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))

    def to_pgm(self) -> bytes:
        """Binary PGM (P5, maxval 255)."""
        data = np.rint(self.pixels * 255.0).astype(np.uint8)
        header = f"P5\n{self.width_px} {self.height_px}\n255\n".encode("ascii")
        return header + data.tobytes()

    def write_pgm(self, path) -> None:
        Path(path).write_bytes(self.to_pgm())


@dataclass(frozen=True)
class ImageSpec:
    content: ContentClass
    aspect: AspectRatio
    seed: int

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass(frozen=True)
class DensityReport:
    edge_density: float
    orientation_coherence: float
    density: float


# generators ----------------------------------------------------------------

def _grid(w, h):
    u = (np.arange(w, dtype=np.float64) - w / 2) / (w / 2)
    v = (np.arange(h, dtype=np.float64) - h / 2) / (h / 2)
    return u[None, :], v[:, None]


def _document(w, h, rng):
    img = np.full((h, w), 0.95)
    mx = int(w * rng.uniform(0.01, 0.02))
    my = int(h * rng.uniform(0.01, 0.02))
    # half the pages are full; the rest stop somewhere down the page
    fill = 1.0 if rng.random() < 0.5 else rng.uniform(0.3, 1.0)
    bottom = my + int((h - 2 * my) * fill)
    ink = rng.uniform(0.45, 0.55)
    y = my
    line_w = w - 2 * mx
    while y + 4 <= bottom:
        # one text line: two ink rows then two blank rows
        lengths = rng.integers(80, 200, size=line_w // 80 + 2)
        gaps = rng.integers(2, 4, size=lengths.size)
        x = mx
        for ln, gp in zip(lengths, gaps):
            if x >= w - mx:
                break
            x2 = min(x + int(ln), w - mx)
            img[y:y + 2, x:x2] = ink
            x = x2 + int(gp)
        y += 4
        if rng.random() < 0.05:
            y += 4  # paragraph break
    return img


def _xray(w, h, rng):
    u, v = _grid(w, h)
    img = np.full((h, w), 0.04)
    for side in (-1.0, 1.0):
        cx = side * rng.uniform(0.40, 0.48)
        cy = rng.uniform(-0.10, 0.05)
        ax = rng.uniform(0.30, 0.36)
        ay = rng.uniform(0.60, 0.75)
        r2 = ((u - cx) / ax) ** 2 + ((v - cy) / ay) ** 2
        img += 0.12 * np.clip(1.0 - r2, 0.0, 1.0)
    period = 4.0 * rng.uniform(0.96, 1.04)
    bend = rng.uniform(0.08, 0.15) * h
    rows = np.arange(h, dtype=np.float64)[:, None]
    phase = (rows + bend * u ** 2) * (2 * np.pi / period) + rng.uniform(0, 2 * np.pi)
    img += 0.42 * (1.0 + np.sin(phase))
    img *= 1.0 - 0.075 * (u ** 2 + v ** 2)
    return np.clip(img, 0.0, 1.0)


def _crypto_noise(w, h, rng):
    return rng.random((h, w))


def _nature(w, h, rng):
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)[:, None]
    sky = 0.8 - 0.25 * rows / h
    horizon = np.full(w, h * rng.uniform(0.02, 0.06))
    for _ in range(int(rng.integers(1, 3))):
        horizon += h * rng.uniform(0.02, 0.05) * np.sin(
            2 * np.pi * rng.uniform(0.5, 2.0) * cols / w + rng.uniform(0, 2 * np.pi))
    ground = rows > horizon[None, :]
    # fine swaying blade texture with speckle below the silhouette
    period = 4.0 * rng.uniform(0.96, 1.04)
    sway = 0.5 * np.sin(rows / h * 2 * np.pi * rng.uniform(1.0, 3.0) + rng.uniform(0, 2 * np.pi))
    phase = (cols[None, :] + sway) * (2 * np.pi / period) + rng.uniform(0, 2 * np.pi)
    texture = 0.45 * (1.0 + np.sin(phase)) + 0.02 * rng.standard_normal((h, w))
    img = np.where(ground, 0.05 + texture * (0.85 + 0.15 * rows / h), sky)
    return np.clip(img, 0.0, 1.0)


_GENERATORS = {
    ContentClass.DOCUMENT: _document,
    ContentClass.XRAY: _xray,
    ContentClass.CRYPTO_NOISE: _crypto_noise,
    ContentClass.NATURE: _nature,
}


def generate(spec: ImageSpec) -> PixelBuffer:
    w, h = spec.aspect.width_px, spec.aspect.height_px
    if w < MIN_GENERATE_PX or h < MIN_GENERATE_PX:
        raise ConfigurationError(
            f"image must be at least {MIN_GENERATE_PX}x{MIN_GENERATE_PX}, got {w}x{h}")
    rng = np.random.default_rng(int(spec.seed))
    return PixelBuffer(_GENERATORS[spec.content](w, h, rng))


# density metric ------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _density_kernel(px, tau2, block):
    h, w = px.shape
    bh = (h + block - 1) // block
    bw = (w + block - 1) // block
    cnt = np.zeros((bh, bw))
    cos_sum = np.zeros((bh, bw))
    sin_sum = np.zeros((bh, bw))
    n_edge = 0
    for i in range(h):
        for j in range(w):
            # central differences, one-sided at the border
            if i == 0:
                gy = px[1, j] - px[0, j]
            elif i == h - 1:
                gy = px[h - 1, j] - px[h - 2, j]
            else:
                gy = (px[i + 1, j] - px[i - 1, j]) * 0.5
            if j == 0:
                gx = px[i, 1] - px[i, 0]
            elif j == w - 1:
                gx = px[i, w - 1] - px[i, w - 2]
            else:
                gx = (px[i, j + 1] - px[i, j - 1]) * 0.5
            m2 = gx * gx + gy * gy
            if m2 > tau2:
                n_edge += 1
                bi = i // block
                bj = j // block
                cnt[bi, bj] += 1.0
                cos_sum[bi, bj] += (gx * gx - gy * gy) / m2
                sin_sum[bi, bj] += 2.0 * gx * gy / m2
    total = 0.0
    for bi in range(bh):
        for bj in range(bw):
            if cnt[bi, bj] > 0:
                total += np.sqrt(cos_sum[bi, bj] ** 2 + sin_sum[bi, bj] ** 2) / cnt[bi, bj]
    return n_edge, total / (bh * bw)


def structural_density(img, edge_threshold: float = EDGE_THRESHOLD) -> DensityReport:
    """Edge fraction times mean 16x16-block orientation coherence.

    Gradients are central differences. Coherence per block is the resultant
    length of the doubled-angle unit vectors of its edge pixels, so gradients
    on the two sides of a stroke reinforce instead of cancelling. Blocks with
    no edges contribute zero; partial blocks at the border count as blocks.
    """
    px = img.pixels if isinstance(img, PixelBuffer) else np.asarray(img, dtype=np.float64)
    if px.ndim != 2 or px.shape[0] < 3 or px.shape[1] < 3:
        raise ConfigurationError(f"density needs at least a 3x3 image, got {px.shape}")
    px = np.ascontiguousarray(px, dtype=np.float64)
    n_edge, coherence = _density_kernel(px, float(edge_threshold) ** 2, BLOCK)
    edge_density = n_edge / px.size
    coherence = min(max(float(coherence), 0.0), 1.0)
    density = min(max(edge_density * coherence, 0.0), 1.0)
    return DensityReport(float(edge_density), coherence, density)


@lru_cache(maxsize=8192)
def _cached_density(content: ContentClass, width: int, height: int, seed: int) -> DensityReport:
    return structural_density(generate(ImageSpec(content, AspectRatio(width, height), seed)))


def density_for(spec: ImageSpec) -> DensityReport:
    """Generate and score ``spec``, memoised per process (both steps are pure)."""
    return _cached_density(spec.content, spec.aspect.width_px, spec.aspect.height_px, int(spec.seed))


def build_dataset(classes: Sequence[tuple[ContentClass, AspectRatio]], per_class: int,
                  seed: int = 0) -> list[tuple[ImageSpec, DensityReport]]:
    if per_class < 1:
        raise ConfigurationError("per_class must be >= 1")
    out = []
    for class_index, (content, aspect) in enumerate(classes):
        for i in range(per_class):
            spec = ImageSpec(ContentClass.parse(content), aspect,
                             int(seed) + class_index * per_class + i)
            out.append((spec, density_for(spec)))
    return out


MANIFEST_HEADER = ("class", "width", "height", "seed", "edge_density", "coherence", "density")


def manifest_csv(dataset: Iterable[tuple[ImageSpec, DensityReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for spec, rep in dataset:
        writer.writerow([spec.content.value, spec.aspect.width_px, spec.aspect.height_px, spec.seed,
                         repr(rep.edge_density), repr(rep.orientation_coherence), repr(rep.density)])
    return buf.getvalue()


class StructuralDensity(TransformerMixin, BaseEstimator):
    """Transformer from 2-D grayscale arrays to ``[edge, coherence, density]`` rows."""

    def __init__(self, edge_threshold=EDGE_THRESHOLD):
        self.edge_threshold = edge_threshold

    def fit(self, X, y=None):
        if not 0 < self.edge_threshold < 1:
            raise ConfigurationError("edge_threshold must lie in (0, 1)")
        return self

    def transform(self, X):
        rows = []
        for img in X:
            rep = structural_density(img, self.edge_threshold)
            rows.append((rep.edge_density, rep.orientation_coherence, rep.density))
        return np.asarray(rows, dtype=np.float64).reshape(-1, 3)
