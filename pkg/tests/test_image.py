"""Tests for images, interpolation, warping, phantoms, noise, and file I/O."""

import numpy as np
import pytest

from conftest import gaussian_mixture
from radreg.image import (Image, NoiseSpec, add_noise, disk_phantom, read_csv_raster,
                          read_image, sample_bilinear, sample_gradient,
                          sample_with_gradient, shepp_logan, warp,
                          write_csv_raster, write_image)


class TestImageType:
    def test_grid_geometry(self):
        """Pixel centers are symmetric about the origin with spacing 2a/n."""
        img = Image(np.zeros((8, 8)), extent=1.0)
        assert img.n == 8
        assert img.pixel_size == pytest.approx(0.25)
        c = img.centers_1d()
        assert c[0] == pytest.approx(-1.0 + 0.125)
        assert np.allclose(c, -c[::-1])
        print("✓ pixel grid is origin-symmetric with half-pixel offset")

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            Image(np.zeros((4, 5)))
        with pytest.raises(ValueError):
            Image(np.zeros(16))
        print("✓ non-square pixel arrays are rejected")


class TestSampleBilinear:
    def test_constant_image(self):
        """Interpolation reproduces constants at any interior point."""
        img = Image(np.full((16, 16), 0.7))
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.85, 0.85, size=(50, 2))
        vals = sample_bilinear(img, pts)
        assert np.allclose(vals, 0.7, atol=1e-14)
        print("✓ constant image samples to the constant")

    def test_nodal_exactness(self):
        """A point exactly at a pixel center returns that pixel's value."""
        rng = np.random.default_rng(1)
        img = Image(rng.random((12, 12)))
        c = img.centers_1d()
        for i, j in [(0, 0), (3, 7), (11, 11), (5, 2)]:
            v = sample_bilinear(img, np.array([[c[j], c[i]]]))
            assert v[0] == pytest.approx(img.pixels[i, j], abs=1e-14)
        print("✓ sampling at pixel centers is exact")

    def test_outside_reads_zero(self):
        img = Image(np.ones((8, 8)))
        v = sample_bilinear(img, np.array([[2.0, 2.0], [-3.0, 0.0]]))
        assert np.all(v == 0.0)
        print("✓ points outside the domain read zero")

    def test_linearity_in_intensities(self):
        """sample(aF + bG, x) == a sample(F,x) + b sample(G,x)."""
        rng = np.random.default_rng(2)
        F = rng.random((16, 16))
        G = rng.random((16, 16))
        pts = rng.uniform(-1.2, 1.2, size=(200, 2))
        a, b = 1.7, -0.4
        lhs = sample_bilinear(Image(a * F + b * G), pts)
        rhs = a * sample_bilinear(Image(F), pts) + b * sample_bilinear(Image(G), pts)
        assert np.allclose(lhs, rhs, atol=1e-13)
        print("✓ interpolation is linear in image intensities")


class TestSampleGradient:
    def test_matches_finite_differences(self):
        """The interpolant's gradient matches central differences of itself."""
        img = gaussian_mixture(32)
        rng = np.random.default_rng(3)
        # keep probes strictly inside interpolation cells so the FD stencil
        # does not straddle a gradient discontinuity
        h_px = img.pixel_size
        base = rng.integers(4, 27, size=(40, 2))
        frac = rng.uniform(0.25, 0.75, size=(40, 2))
        c0 = img.centers_1d()[0]
        pts = c0 + (base + frac) * h_px
        grad = sample_gradient(img, pts)
        eps = 1e-7
        for k in range(2):
            e = np.zeros(2)
            e[k] = eps
            fd = (sample_bilinear(img, pts + e) - sample_bilinear(img, pts - e)) / (2 * eps)
            assert np.allclose(grad[:, k], fd, rtol=1e-6, atol=1e-9)
        print("✓ interpolant gradient matches finite differences")

    def test_value_gradient_agree(self):
        img = gaussian_mixture(24)
        rng = np.random.default_rng(4)
        pts = rng.uniform(-0.9, 0.9, size=(30, 2))
        v1 = sample_bilinear(img, pts)
        g1 = sample_gradient(img, pts)
        v2, g2 = sample_with_gradient(img, pts)
        assert np.array_equal(v1, v2) and np.array_equal(g1, g2)
        print("✓ combined sampler agrees with the separate ones")


class TestWarp:
    def test_zero_field_is_identity(self):
        rng = np.random.default_rng(5)
        img = Image(rng.random((20, 20)))
        out = warp(img, np.zeros((20, 20, 2)))
        assert np.array_equal(out.pixels, img.pixels)
        print("✓ zero displacement reproduces the image exactly")

    def test_constant_shift_matches_analytic_resampling(self):
        """Backward warp by constant t samples the image at x + t."""
        n = 64
        h = 2.0 / n
        c = -1.0 + (np.arange(n) + 0.5) * h
        X, Y = np.meshgrid(c, c, indexing="xy")
        img = Image(np.exp(-(X**2 + Y**2) / (2 * 0.3**2)))
        t = np.array([3.0 * h, -2.0 * h])
        out = warp(img, np.broadcast_to(t, (n, n, 2)).copy())
        expected = np.exp(-(((X + t[0]) ** 2) + ((Y + t[1]) ** 2)) / (2 * 0.3**2))
        interior = (np.abs(X + t[0]) < 0.9) & (np.abs(Y + t[1]) < 0.9)
        assert np.abs(out.pixels - expected)[interior].max() < 2e-3
        print("✓ constant-shift warp matches the analytic resampling")

    def test_translated_disk(self):
        """Warping a centered disk by constant t recenters it at -t."""
        n = 64
        h = 2.0 / n
        t = np.array([4 * h, 0.0])
        disk = disk_phantom(n)
        moved = warp(disk, np.broadcast_to(t, (n, n, 2)).copy())
        expected = disk_phantom(n, center=(-t[0], -t[1]))
        d = moved.pixels - expected.pixels
        assert np.sqrt(np.mean(d * d)) < 0.05
        print("✓ disk translation convention: backward sampling moves it by -t")

    def test_huge_displacement_blanks_image(self):
        img = Image(np.ones((16, 16)))
        out = warp(img, np.full((16, 16, 2), 5.0))
        assert np.all(out.pixels == 0.0)
        print("✓ displacing everything outside the domain yields zeros")

    def test_shape_and_finiteness(self):
        rng = np.random.default_rng(6)
        img = Image(rng.random((24, 24)))
        for _ in range(5):
            disp = rng.normal(scale=0.3, size=(24, 24, 2))
            out = warp(img, disp)
            assert out.pixels.shape == (24, 24)
            assert np.all(np.isfinite(out.pixels))
        with pytest.raises(ValueError):
            warp(img, np.zeros((24, 24)))
        print("✓ warp preserves dimensions and never emits non-finite values")


class TestSheppLogan:
    def test_range_and_background(self):
        img = shepp_logan(128)
        assert img.pixels.max() == pytest.approx(1.0)
        assert img.pixels.min() == 0.0
        assert img.pixels[0, 0] == 0.0 and img.pixels[-1, -1] == 0.0
        print("✓ phantom intensities live in [0, 1] with zero background")

    def test_center_value(self):
        """Pixels near the origin carry the summed intensity of the two
        covering ellipses (1.0 outer head, -0.8 inner), i.e. exactly 0.2."""
        img = shepp_logan(128)
        assert np.allclose(img.pixels[63:65, 63:65], 0.2, atol=1e-12)
        print("✓ center intensity equals the analytic ellipse sum 0.2")

    def test_block_average_consistency(self):
        """Halving the resolution matches 2x2 block averaging within 0.05."""
        a = shepp_logan(64).pixels
        b = shepp_logan(128).pixels.reshape(64, 2, 64, 2).mean(axis=(1, 3))
        assert np.abs(a - b).mean() < 0.05
        print("✓ multiresolution renders agree under block averaging")

    def test_minimum_size(self):
        with pytest.raises(ValueError):
            shepp_logan(8)
        print("✓ sizes below 16 are rejected")


class TestDiskPhantom:
    def test_area(self):
        """Antialiased disk mass approximates pi r^2."""
        n = 128
        img = disk_phantom(n, radius=0.5)
        area = img.pixels.sum() * (2.0 / n) ** 2
        assert area == pytest.approx(np.pi * 0.25, rel=1e-3)
        print("✓ disk area matches pi r^2")


class TestNoise:
    def test_zero_stddev_is_identity(self):
        img = gaussian_mixture(32)
        out = add_noise(img, NoiseSpec(stddev=0.0, seed=7))
        assert np.array_equal(out.pixels, img.pixels)
        print("✓ zero-stddev noise leaves the image untouched")

    def test_sample_variance_window(self):
        """stddev 0.05 at n=128: the 16384-sample variance sits in the
        chi-square window [0.0023, 0.0027]."""
        img = shepp_logan(128)
        out = add_noise(img, NoiseSpec(stddev=0.05, seed=11))
        v = np.var(out.pixels - img.pixels)
        assert 0.0023 <= v <= 0.0027
        print(f"✓ sample variance {v:.5f} within the chi-square window")

    def test_determinism_and_independence(self):
        img = gaussian_mixture(32)
        a = add_noise(img, NoiseSpec(stddev=0.1, seed=3))
        b = add_noise(img, NoiseSpec(stddev=0.1, seed=3))
        c = add_noise(img, NoiseSpec(stddev=0.1, seed=4))
        assert np.array_equal(a.pixels, b.pixels)
        assert not np.array_equal(a.pixels, c.pixels)
        print("✓ same seed is bit-identical, different seed differs")

    def test_values_not_clamped(self):
        img = Image(np.zeros((32, 32)))
        out = add_noise(img, NoiseSpec(stddev=0.3, seed=5))
        assert out.pixels.min() < 0.0
        print("✓ noisy values may leave [0, 1]")


class TestImageIO:
    def test_csv_round_trip_is_exact(self, tmp_path):
        img = gaussian_mixture(24)
        p = tmp_path / "img.csv"
        write_csv_raster(img, p)
        back = read_csv_raster(p)
        assert np.array_equal(back.pixels, img.pixels)
        assert back.extent == img.extent
        print("✓ CSV raster round trip is bit-exact")

    def test_png_round_trip(self, tmp_path):
        img = gaussian_mixture(24)
        p = tmp_path / "img.png"
        write_image(img, p)
        back = read_image(p)
        assert back.n == 24
        assert np.abs(back.pixels - img.pixels).max() < 1.0 / 65534
        print("✓ 16-bit PNG round trip is within one quantization step")

    def test_pgm_round_trip(self, tmp_path):
        img = gaussian_mixture(16)
        p = tmp_path / "img.pgm"
        write_image(img, p)
        back = read_image(p)
        assert np.abs(back.pixels - img.pixels).max() < 1.0 / 65534
        print("✓ PGM round trip is within one quantization step")
