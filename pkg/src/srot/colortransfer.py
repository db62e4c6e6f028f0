"""Color transfer through semi-relaxed optimal transport.

Both images are quantized with k-means in RGB space (values scaled to
``[0, 1]``); the centroid histograms become the marginals, pairwise Euclidean
centroid distances the cost, and each source centroid is replaced by the
plan-weighted average of the reference centroids.
"""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfigurationError, SemiRelaxedProblem, SrotError
from .metrics import as_matrix
from .solvers import SolverOptions, solve

__all__ = [
    "RGBImage",
    "QuantizedImage",
    "TransferResult",
    "PPMError",
    "encode_ppm",
    "decode_ppm",
    "read_ppm",
    "write_ppm",
    "kmeans_quantize",
    "build_cost",
    "barycentric_project",
    "recolor",
    "synth_three_color",
    "color_transfer",
]


class PPMError(SrotError, ValueError):
    """Malformed or unsupported PPM data."""


@dataclass(eq=False)
class RGBImage:
    """8-bit RGB image; ``pixels`` has shape ``(height, width, 3)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ConfigurationError("pixels must have shape (height, width, 3)")
        if px.dtype != np.uint8:
            if np.any((px < 0) | (px > 255)) or np.any(px != np.round(px)):
                raise ConfigurationError("pixel values must be integers in [0, 255]")
            px = px.astype(np.uint8)
        self.pixels = np.ascontiguousarray(px)

    @classmethod
    def from_buffer(cls, width, height, buffer):
        data = np.frombuffer(bytes(buffer), dtype=np.uint8)
        if data.size != 3 * width * height:
            raise ConfigurationError("buffer length must be 3 * width * height")
        return cls(data.reshape(height, width, 3).copy())

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def buffer(self) -> bytes:
        return self.pixels.tobytes()

    def __eq__(self, other):
        return isinstance(other, RGBImage) and np.array_equal(self.pixels, other.pixels)


_HEADER = re.compile(rb"P6((?:\s|#[^\n\r]*[\n\r])+)")
_TOKEN = re.compile(rb"(\d+)((?:\s|#[^\n\r]*[\n\r])+)")


def encode_ppm(img: RGBImage) -> bytes:
    return b"P6\n%d %d\n255\n" % (img.width, img.height) + img.buffer


def decode_ppm(data: bytes) -> RGBImage:
    """Parse binary PPM (P6) with maxval 255.

    Comments are allowed between header fields only.  Exactly one whitespace
    byte separates the maxval from the raster, so a ``#`` right after it is
    pixel data, and the raster must be exactly ``3 * width * height`` bytes.
    """
    match = _HEADER.match(data)
    if match is None:
        raise PPMError("not a binary PPM (missing P6 magic)")
    pos = match.end()
    values = []
    for idx in range(3):
        if idx < 2:
            tok = _TOKEN.match(data, pos)
            if tok is None:
                raise PPMError("malformed PPM header")
            values.append(int(tok.group(1)))
            pos = tok.end()
        else:
            tok = re.compile(rb"(\d+)(\s)").match(data, pos)
            if tok is None:
                raise PPMError("maxval must be followed by a single whitespace byte")
            values.append(int(tok.group(1)))
            pos = tok.end()
    width, height, maxval = values
    if maxval != 255:
        raise PPMError(f"only maxval 255 is supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise PPMError("image dimensions must be positive")
    raster = data[pos:]
    if len(raster) != 3 * width * height:
        raise PPMError(
            f"raster has {len(raster)} bytes, expected {3 * width * height}")
    return RGBImage.from_buffer(width, height, raster)


def read_ppm(path) -> RGBImage:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(img: RGBImage, path):
    Path(path).write_bytes(encode_ppm(img))


@dataclass(eq=False)
class QuantizedImage:
    """Palette, per-pixel palette index and palette histogram of an image.

    ``assignment`` is in row-major pixel order.  ``k_reduced`` records that
    fewer clusters than requested were used because the image has fewer
    distinct colors.
    """

    centroids: np.ndarray
    assignment: np.ndarray
    histogram: np.ndarray
    width: int
    height: int
    distortion: float = 0.0
    k_reduced: bool = False

    @property
    def k(self):
        return self.centroids.shape[0]


def _sq_dists(X, centers):
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeanspp(X, w, k, rng):
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.choice(X.shape[0], p=w / w.sum())]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for c in range(1, k):
        p = w * d2
        total = p.sum()
        idx = rng.choice(X.shape[0], p=p / total) if total > 0 else int(np.argmax(w))
        centers[c] = X[idx]
        d2 = np.minimum(d2, ((X - centers[c]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, w, centers, max_iters):
    labels = None
    for _ in range(max_iters):
        d2 = _sq_dists(X, centers)
        new_labels = np.argmin(d2, axis=1)
        k = centers.shape[0]
        mass = np.bincount(new_labels, weights=w, minlength=k)
        for c in np.flatnonzero(mass == 0):
            # re-seed an empty cluster at the point farthest from its centroid
            far = int(np.argmax(d2[np.arange(X.shape[0]), new_labels]))
            new_labels[far] = c
            d2[far] = 0.0
            mass = np.bincount(new_labels, weights=w, minlength=k)
        if labels is not None and np.array_equal(labels, new_labels):
            break
        labels = new_labels
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, w[:, None] * X)
        centers = sums / mass[:, None]
        # a cluster holding one distinct color sits exactly on it
        single = np.bincount(labels, minlength=k) == 1
        centers[single] = X[np.flatnonzero(single[labels])][np.argsort(
            labels[single[labels]])]
    d2 = _sq_dists(X, centers)
    labels = np.argmin(d2, axis=1)
    distortion = float(w @ d2[np.arange(X.shape[0]), labels])
    return centers, labels, distortion


def kmeans_quantize(img: RGBImage, k, seed=0, max_iters=100, n_init=4) -> QuantizedImage:
    """Quantize ``img`` into ``k`` colors with Lloyd's algorithm.

    k-means++ seeding, ``n_init`` restarts (best distortion kept), empty
    clusters re-seeded at the farthest point.  Work is done on the distinct
    colors weighted by their pixel counts, so the result depends only on
    ``(img, k, seed)``.
    """
    if k < 1:
        raise ConfigurationError("k must be at least 1")
    X_all = img.pixels.reshape(-1, 3).astype(np.float64) / 255.0
    if X_all.shape[0] == 0:
        raise ConfigurationError("image is empty")
    colors, inverse, counts = np.unique(X_all, axis=0, return_inverse=True,
                                        return_counts=True)
    inverse = inverse.ravel()
    w = counts.astype(np.float64)
    reduced = k > colors.shape[0]
    if reduced:
        warnings.warn(f"image has only {colors.shape[0]} distinct colors; "
                      f"reducing k from {k}", RuntimeWarning, stacklevel=2)
        k = colors.shape[0]
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        centers = _kmeanspp(colors, w, k, rng)
        result = _lloyd(colors, w, centers, max_iters)
        if best is None or result[2] < best[2]:
            best = result
    centers, labels, distortion = best
    assignment = labels[inverse]
    hist = np.bincount(assignment, minlength=k).astype(np.float64)
    return QuantizedImage(centroids=np.clip(centers, 0.0, 1.0), assignment=assignment,
                          histogram=hist / hist.sum(), width=img.width,
                          height=img.height, distortion=distortion, k_reduced=reduced)


def build_cost(src: QuantizedImage, ref: QuantizedImage) -> np.ndarray:
    """Euclidean distances between source and reference centroids (m x n)."""
    x = np.asarray(getattr(src, "centroids", src), dtype=np.float64)
    y = np.asarray(getattr(ref, "centroids", ref), dtype=np.float64)
    return np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=2))


def barycentric_project(t, ref_centroids, src_centroids=None, return_starved=False):
    """New source colors ``sum_j T_ij y_j / sum_j T_ij``, clamped to ``[0, 1]``.

    Rows with zero mass keep their original color (``src_centroids``; black
    when not given).  With ``return_starved=True`` the boolean mask of such
    rows is returned as well.
    """
    T = as_matrix(t)
    Y = np.asarray(ref_centroids, dtype=np.float64)
    mass = T.sum(axis=1)
    starved = mass <= 0
    out = np.zeros((T.shape[0], Y.shape[1]))
    if src_centroids is not None:
        out[:] = np.asarray(src_centroids, dtype=np.float64)
    ok = ~starved
    out[ok] = (T[ok] @ Y) / mass[ok, None]
    out = np.clip(out, 0.0, 1.0)
    return (out, starved) if return_starved else out


def recolor(src: QuantizedImage, new_centroids) -> RGBImage:
    """Paint every pixel with its cluster's new color (8-bit, round half up)."""
    c = np.asarray(new_centroids, dtype=np.float64)
    if c.shape != src.centroids.shape:
        raise ConfigurationError("new centroids must match the source palette shape")
    palette = np.clip(np.floor(c * 255.0 + 0.5), 0, 255).astype(np.uint8)
    return RGBImage(palette[src.assignment].reshape(src.height, src.width, 3))


SYNTH_SOURCE_COLORS = ((230, 200, 40), (40, 190, 200), (170, 60, 170))
SYNTH_REFERENCE_COLORS = ((200, 30, 30), (40, 160, 60), (30, 60, 200))


def synth_three_color(width=10, height=10):
    """Two images of three flat color bands.

    The source shares are 10/30/60 percent and the reference shares 60/30/10
    percent of the pixels, so exact quantization with ``k=3`` gives histograms
    ``(0.1, 0.3, 0.6)`` and ``(0.6, 0.3, 0.1)`` up to palette order.
    ``width * height`` must be a multiple of 10.
    """
    total = width * height
    if total % 10:
        raise ConfigurationError("width * height must be a multiple of 10")

    def bands(colors, shares):
        flat = np.repeat(np.array(colors, dtype=np.uint8),
                         [total * s // 10 for s in shares], axis=0)
        return RGBImage(flat.reshape(height, width, 3))

    return (bands(SYNTH_SOURCE_COLORS, (1, 3, 6)),
            bands(SYNTH_REFERENCE_COLORS, (6, 3, 1)))


@dataclass(eq=False)
class TransferResult:
    image: RGBImage
    source: QuantizedImage
    reference: QuantizedImage
    problem: SemiRelaxedProblem
    solution: object
    centroids: np.ndarray
    starved_rows: np.ndarray
    snapshots: dict = field(default_factory=dict)


def color_transfer(src_img: RGBImage, ref_img: RGBImage, k, lam, opts: SolverOptions = None,
                   seed=0, snapshot_epochs=(), lp_plan=None) -> TransferResult:
    """Quantize both images, solve the semi-relaxed problem and recolor the source.

    ``snapshots`` maps each requested epoch to the recolored image at that
    point of the run.
    """
    opts = opts or SolverOptions()
    src = kmeans_quantize(src_img, k, seed=seed)
    ref = kmeans_quantize(ref_img, k, seed=seed)
    problem = SemiRelaxedProblem(build_cost(src, ref), src.histogram, ref.histogram, lam)
    sol = solve(problem, opts, snapshot_epochs=snapshot_epochs, lp_plan=lp_plan)
    new, starved = barycentric_project(sol.plan, ref.centroids, src.centroids,
                                       return_starved=True)
    snaps = {e: recolor(src, barycentric_project(T, ref.centroids, src.centroids))
             for e, T in sorted(sol.snapshots.items())}
    return TransferResult(image=recolor(src, new), source=src, reference=ref,
                          problem=problem, solution=sol, centroids=new,
                          starved_rows=starved, snapshots=snaps)
