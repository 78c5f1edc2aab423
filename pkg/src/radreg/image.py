"""Grayscale images on the square domain [-a, a]^2.

Geometry convention used throughout the package: an n x n image covers the
square [-a, a]^2 (default a = 1).  Pixel (i, j) is centered at

    x_j = -a + (j + 0.5) * (2a / n),   y_i = -a + (i + 0.5) * (2a / n),

so row index i runs along +y and column index j along +x.  Row 0 is the
bottom of the physical domain; file I/O flips rows so that image files keep
their usual top-down orientation.  Intensities are stored as float64 and are
nominally in [0, 1]; additive noise may leave that range and is never
clamped.

Sampling between pixel centers is bilinear with zero padding: the pixel grid
is conceptually surrounded by zeros, so the interpolant is continuous,
tapers to zero within one pixel outside the pixel-center hull, and vanishes
beyond it.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage


@dataclass(frozen=True)
class Image:
    """Square grayscale image with physical extent.

    Attributes
    ----------
    pixels : (n, n) float64 array, marked read-only after construction.
    extent : half-width a of the physical domain [-a, a]^2.
    """

    pixels: np.ndarray
    extent: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(f"image must be square 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image intensities must be finite")
        if not self.extent > 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "pixels", arr)

    @property
    def n(self) -> int:
        return self.pixels.shape[0]

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.extent / self.n

    def centers_1d(self) -> np.ndarray:
        """Pixel-center coordinates along one axis (shared by x and y)."""
        h = self.pixel_size
        return -self.extent + (np.arange(self.n) + 0.5) * h

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) physical coordinates of all pixel centers, shape (n, n)."""
        c = self.centers_1d()
        return np.meshgrid(c, c, indexing="xy")


def sample_bilinear(img: Image, points: np.ndarray) -> np.ndarray:
    """Evaluate the zero-padded bilinear interpolant at physical points.

    points : (..., 2) array of (x, y) coordinates.  Returns an array of the
    leading shape.  Points at pixel centers return that pixel's value
    exactly; points beyond one pixel outside the center hull return 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    vals, _ = _interp_with_grad(img, pts, want_grad=False)
    return vals


def sample_gradient(img: Image, points: np.ndarray) -> np.ndarray:
    """Gradient of the zero-padded bilinear interpolant, shape (..., 2).

    This is the exact (cell-wise) derivative of the interpolant evaluated by
    sample_bilinear, not a finite-difference approximation of the underlying
    image, so objective functions built on sample_bilinear differentiate
    exactly.  On cell boundaries the cell on the +x/+y side is used.
    """
    pts = np.asarray(points, dtype=np.float64)
    _, grad = _interp_with_grad(img, pts, want_grad=True)
    return grad


def sample_with_gradient(img: Image, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interpolant value and gradient in one pass (shapes (...), (..., 2))."""
    pts = np.asarray(points, dtype=np.float64)
    return _interp_with_grad(img, pts, want_grad=True)


def _interp_with_grad(img: Image, pts: np.ndarray, want_grad: bool):
    if pts.shape[-1] != 2:
        raise ValueError(f"points must have trailing dimension 2, got {pts.shape}")
    n = img.n
    h = img.pixel_size
    a = img.extent
    # fractional pixel coordinates: pixel center j sits at fx = j
    fx = (pts[..., 0] + a) / h - 0.5
    fy = (pts[..., 1] + a) / h - 0.5
    # snap coordinates a rounding error away from a pixel center onto it, so
    # identity warps reproduce the image bit-for-bit
    rx = np.round(fx)
    ry = np.round(fy)
    fx = np.where(np.abs(fx - rx) < 1e-9, rx, fx)
    fy = np.where(np.abs(fy - ry) < 1e-9, ry, fy)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    tx = fx - x0
    ty = fy - y0

    def read(iy, ix):
        valid = (iy >= 0) & (iy < n) & (ix >= 0) & (ix < n)
        v = img.pixels[np.clip(iy, 0, n - 1), np.clip(ix, 0, n - 1)]
        return np.where(valid, v, 0.0)

    v00 = read(y0, x0)
    v01 = read(y0, x0 + 1)
    v10 = read(y0 + 1, x0)
    v11 = read(y0 + 1, x0 + 1)

    vals = (v00 * (1 - tx) * (1 - ty) + v01 * tx * (1 - ty)
            + v10 * (1 - tx) * ty + v11 * tx * ty)
    if not want_grad:
        return vals, None
    gx = ((v01 - v00) * (1 - ty) + (v11 - v10) * ty) / h
    gy = ((v10 - v00) * (1 - tx) + (v11 - v01) * tx) / h
    return vals, np.stack([gx, gy], axis=-1)


def warp(img: Image, displacement: np.ndarray) -> Image:
    """Backward-warp an image by a per-pixel displacement field.

    displacement : (n, n, 2) array giving (u_x, u_y) at every pixel center.
    The output at pixel center x takes the value img(x + u(x)), so image
    content appears moved by -u.  Out-of-domain lookups read zero.
    """
    disp = np.asarray(displacement, dtype=np.float64)
    n = img.n
    if disp.shape != (n, n, 2):
        raise ValueError(f"displacement must have shape {(n, n, 2)}, got {disp.shape}")
    X, Y = img.grid()
    pts = np.stack([X + disp[..., 0], Y + disp[..., 1]], axis=-1)
    return Image(sample_bilinear(img, pts), img.extent)


# Modified Shepp-Logan ellipse table (value, semi-axis a, semi-axis b,
# center x, center y, rotation in degrees).  The modified intensities give
# usable tissue contrast; the plain variant is nearly flat inside the skull.
_SHEPP_LOGAN = np.array([
    [1.00, 0.6900, 0.9200,  0.00,  0.0000,   0.0],
    [-0.80, 0.6624, 0.8740,  0.00, -0.0184,   0.0],
    [-0.20, 0.1100, 0.3100,  0.22,  0.0000, -18.0],
    [-0.20, 0.1600, 0.4100, -0.22,  0.0000,  18.0],
    [0.10, 0.2100, 0.2500,  0.00,  0.3500,   0.0],
    [0.10, 0.0460, 0.0460,  0.00,  0.1000,   0.0],
    [0.10, 0.0460, 0.0460,  0.00, -0.1000,   0.0],
    [0.10, 0.0460, 0.0230, -0.08, -0.6050,   0.0],
    [0.10, 0.0230, 0.0230,  0.00, -0.6060,   0.0],
    [0.10, 0.0230, 0.0460,  0.06, -0.6050,   0.0],
])


def _ellipse_sum(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for val, ea, eb, cx, cy, deg in _SHEPP_LOGAN:
        phi = np.deg2rad(deg)
        dx = x - cx
        dy = y - cy
        xr = dx * np.cos(phi) + dy * np.sin(phi)
        yr = -dx * np.sin(phi) + dy * np.cos(phi)
        out += np.where((xr / ea) ** 2 + (yr / eb) ** 2 <= 1.0, val, 0.0)
    return out


def shepp_logan(n: int, extent: float = 1.0, supersample: int = 4) -> Image:
    """Rasterize the Shepp-Logan head phantom at n x n, clamped to [0, 1].

    Pixel values are area averages over supersample^2 subsamples, not point
    samples.  Point sampling leaves single-pixel jumps at ellipse borders
    that the bilinear image model cannot represent, which puts an avoidable
    floor under every warp round-trip; averaged edges keep synthetic
    ground-truth pipelines accurate to interpolation error.
    """
    if n < 16:
        raise ValueError(f"phantom size must be at least 16, got {n}")
    if supersample < 1:
        raise ValueError("supersample must be at least 1")
    m = n * supersample
    h = 2.0 / m
    c = -1.0 + (np.arange(m) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="xy")
    vals = np.clip(_ellipse_sum(X, Y), 0.0, 1.0)
    coarse = vals.reshape(n, supersample, n, supersample).mean(axis=(1, 3))
    return Image(coarse, extent)


def disk_phantom(n: int, radius: float = 0.5, center: tuple[float, float] = (0.0, 0.0),
                 extent: float = 1.0, supersample: int = 8) -> Image:
    """Anti-aliased disk indicator: pixel value = covered area fraction.

    Supersampling keeps the rasterization error well below the projector
    discretization error, which test oracles based on analytic line
    integrals rely on.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if supersample < 1:
        raise ValueError("supersample must be at least 1")
    m = n * supersample
    h = 2.0 * extent / m
    c = -extent + (np.arange(m) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="xy")
    fine = ((X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius ** 2).astype(np.float64)
    coarse = fine.reshape(n, supersample, n, supersample).mean(axis=(1, 3))
    return Image(coarse, extent)


@dataclass(frozen=True)
class NoiseSpec:
    """Additive zero-mean Gaussian noise: stddev in intensity units."""

    stddev: float
    seed: int = 0

    def __post_init__(self):
        if self.stddev < 0:
            raise ValueError(f"stddev must be nonnegative, got {self.stddev}")


def add_noise(img: Image, spec: NoiseSpec) -> Image:
    """Add i.i.d. Gaussian noise.  Values are not clamped to [0, 1]."""
    if spec.stddev == 0.0:
        return Image(img.pixels, img.extent)
    rng = np.random.default_rng(spec.seed)
    noisy = img.pixels + spec.stddev * rng.standard_normal(img.pixels.shape)
    return Image(noisy, img.extent)


# ---------------------------------------------------------------------------
# File I/O.  PNG and PGM hold quantized data (8- or 16-bit, rescaled to
# [0, 1] on load); CSV rasters round-trip float64 exactly and are the
# authoritative on-disk form whenever unclamped values matter.
# ---------------------------------------------------------------------------

def write_image(img: Image, path: str | Path, bit_depth: int = 16) -> None:
    """Write to .png, .pgm, or .csv, chosen by suffix.

    PNG/PGM clamp to [0, 1] and quantize to the requested bit depth.
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        write_csv_raster(img, path)
        return
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    maxval = (1 << bit_depth) - 1
    quant = np.rint(np.clip(img.pixels, 0.0, 1.0) * maxval)
    rows = np.flipud(quant)  # file row 0 is the top of the domain
    if suffix == ".pgm":
        _write_pgm(rows, maxval, path)
    elif suffix == ".png":
        if bit_depth == 8:
            pil = _PILImage.fromarray(rows.astype(np.uint8), mode="L")
        else:
            pil = _PILImage.fromarray(rows.astype(np.uint32), mode="I").convert("I;16")
        pil.save(path)
    else:
        raise ValueError(f"unsupported image suffix {suffix!r}")


def read_image(path: str | Path, extent: float = 1.0) -> Image:
    """Read .png, .pgm, or .csv; quantized formats rescale to [0, 1]."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".csv":
        return read_csv_raster(path)  # extent comes from the header
    if suffix == ".pgm":
        rows, maxval = _read_pgm(path)
    elif suffix == ".png":
        pil = _PILImage.open(path)
        if pil.mode == "I;16":
            rows = np.asarray(pil, dtype=np.float64)
            maxval = 65535
        elif pil.mode in ("I", "I;16B"):
            rows = np.asarray(pil.convert("I"), dtype=np.float64)
            maxval = 65535
        else:
            rows = np.asarray(pil.convert("L"), dtype=np.float64)
            maxval = 255
    else:
        raise ValueError(f"unsupported image suffix {suffix!r}")
    return Image(np.flipud(rows / maxval), extent)


def _write_pgm(rows: np.ndarray, maxval: int, path: Path) -> None:
    n_rows, n_cols = rows.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{n_cols} {n_rows}\n{maxval}\n".encode("ascii"))
        if maxval < 256:
            f.write(rows.astype(np.uint8).tobytes())
        else:
            f.write(rows.astype(">u2").tobytes())  # PGM 16-bit is big-endian


def _read_pgm(path: Path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM file: {path}")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval < 256:
        arr = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=pos)
    else:
        arr = np.frombuffer(data, dtype=">u2", count=width * height, offset=pos)
    return arr.reshape(height, width).astype(np.float64), maxval


def write_csv_raster(img: Image, path: str | Path) -> None:
    """Exact float64 raster dump: header row, then one CSV row per image row.

    Rows are written bottom-up (storage order), not display order.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", img.n, "extent", repr(float(img.extent))])
    for row in img.pixels:
        writer.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv_raster(path: str | Path, extent: float | None = None) -> Image:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        n = int(header[1])
        file_extent = float(header[3])
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows, dtype=np.float64)
    if arr.shape != (n, n):
        raise ValueError(f"csv raster shape {arr.shape} does not match header n={n}")
    return Image(arr, file_extent if extent is None else extent)
