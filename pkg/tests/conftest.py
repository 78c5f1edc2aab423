"""Shared test fixtures and image builders."""

import numpy as np

from radreg.image import Image


def gaussian_mixture(n: int, extent: float = 1.0) -> Image:
    """Smooth, band-limited test image: three Gaussian bumps, clipped to [0,1].

    Smoothness matters for oracle tests: bilinear interpolation error is
    O(h^2) on these, so warping round trips and finite-difference gradient
    checks are not polluted by edge aliasing.
    """
    h = 2.0 * extent / n
    c = -extent + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="xy")

    def bump(cx, cy, s, a):
        return a * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2.0 * s * s))

    px = bump(-0.25, 0.1, 0.30, 0.8) + bump(0.3, -0.2, 0.22, 0.6) + bump(0.1, 0.4, 0.18, 0.5)
    return Image(np.clip(px, 0.0, 1.0), extent)


def random_smooth_pair(n: int, seed: int, shift_px: float = 1.5) -> tuple[Image, Image]:
    """A smooth reference and a smoothly deformed template for gradient tests."""
    ref = gaussian_mixture(n)
    h = 2.0 / n
    c = -1.0 + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(c, c, indexing="xy")
    rng = np.random.default_rng(seed)
    ax, ay = rng.uniform(-shift_px, shift_px, size=2) * h
    disp = np.stack([ax * np.cos(np.pi * Y / 2), ay * np.cos(np.pi * X / 2)], axis=-1)
    from radreg.image import warp
    return ref, warp(ref, disp)
