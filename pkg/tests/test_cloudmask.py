from fractions import Fraction

import numpy as np
import pytest

from lulcseg.cloudmask import (
    Histogram,
    QaBitSpec,
    build_histogram,
    cloud_mask_otsu,
    cloud_mask_qa,
    otsu_threshold,
)
from lulcseg.errors import BitOutOfRange, DegenerateHistogram
from lulcseg.raster import CLOUD_CLASS, Raster


def exhaustive_otsu(counts):
    """Lowest t maximising w0*w1*(mu0 - mu1)^2, in exact rationals."""
    counts = [int(c) for c in counts]
    total = sum(counts)
    best_t, best = None, Fraction(-1)
    n0 = s0 = 0
    s_total = sum(i * c for i, c in enumerate(counts))
    for t in range(len(counts) - 1):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            var = Fraction(0)
        else:
            mu0 = Fraction(s0, n0)
            mu1 = Fraction(s_total - s0, n1)
            var = Fraction(n0, total) * Fraction(n1, total) * (mu0 - mu1) ** 2
        if var > best:
            best_t, best = t, var
    return best_t


def random_histogram(rng, nbins):
    kind = rng.integers(4)
    h = np.zeros(nbins, dtype=np.int64)
    if kind == 0:
        h[:] = rng.integers(0, 1000, size=nbins)
    elif kind == 1:
        idx = rng.choice(nbins, size=int(rng.integers(2, 12)), replace=False)
        h[idx] = rng.integers(1, 50, size=idx.size)
    elif kind == 2:
        for _ in range(2):
            mu, sd = rng.uniform(0, nbins), rng.uniform(1, nbins / 8)
            v = np.clip(np.rint(rng.normal(mu, sd, size=int(rng.integers(100, 5000)))), 0, nbins - 1).astype(np.int64)
            h += np.bincount(v, minlength=nbins)
    else:
        # symmetric populations provoke exact ties
        a, b = sorted(rng.choice(nbins, size=2, replace=False))
        h[a] = h[b] = int(rng.integers(1, 100))
    if np.count_nonzero(h) < 2:
        h[0] += 1
        h[-1] += 1
    return Histogram(h)


class TestOtsuThreshold:
    def test_two_spikes_lowest_tie(self):
        h = np.zeros(256, np.int64)
        h[10] = h[200] = 50
        assert otsu_threshold(Histogram(h)) == 10

    def test_single_spike(self):
        h = np.zeros(256, np.int64)
        h[128] = 100
        with pytest.raises(DegenerateHistogram):
            otsu_threshold(Histogram(h))

    def test_exhaustive_8bit(self, rng):
        for _ in range(100):
            h = random_histogram(rng, 256)
            assert otsu_threshold(h) == exhaustive_otsu(h.bin_counts)

    def test_scale_invariance(self, rng):
        for _ in range(30):
            h = random_histogram(rng, 256)
            k = int(rng.integers(2, 1000))
            assert otsu_threshold(Histogram(h.bin_counts * k)) == otsu_threshold(h)

    def test_two_population_bracket(self, rng):
        for _ in range(50):
            a, b = sorted(rng.choice(256, size=2, replace=False))
            h = np.zeros(256, np.int64)
            h[a], h[b] = rng.integers(1, 1000, size=2)
            assert a <= otsu_threshold(Histogram(h)) < b


class TestOtsuMask:
    def test_bimodal_plane(self):
        plane = np.full((1, 8, 8), 20, np.uint8)
        plane[0, :, 4:] = 230
        m = cloud_mask_otsu(Raster.from_array(plane), 0)
        assert m.flags[:, 4:].all() and not m.flags[:, :4].any()
        labels = m.to_label_map().labels
        assert set(np.unique(labels)) == {0, CLOUD_CLASS}

    def test_all_nodata(self):
        r = Raster.from_array(np.zeros((1, 4, 4), np.uint8), nodata=0)
        with pytest.raises(DegenerateHistogram):
            cloud_mask_otsu(r, 0)

    def test_nodata_never_cloud(self, rng):
        plane = rng.integers(1, 256, size=(1, 16, 16)).astype(np.uint8)
        plane[0, :, :3] = 0
        m = cloud_mask_otsu(Raster.from_array(plane, nodata=0), 0)
        assert not m.flags[:, :3].any()

    def test_random_bimodal_oracle(self, rng):
        for _ in range(10):
            plane = np.where(rng.random((32, 32)) < 0.2, rng.normal(220, 10, (32, 32)), rng.normal(70, 20, (32, 32)))
            plane = np.clip(np.rint(plane), 0, 255).astype(np.uint8)
            t = exhaustive_otsu(np.bincount(plane.ravel(), minlength=256))
            m = cloud_mask_otsu(Raster.from_array(plane[None]), 0)
            np.testing.assert_array_equal(m.flags, plane > t)

    def test_uint16_histogram_size(self, rng):
        plane = rng.integers(0, 65536, size=(10, 10)).astype(np.uint16)
        assert build_histogram(plane).bin_counts.size == 65536


class TestQaMask:
    def test_only_cloud_bit(self):
        m = cloud_mask_qa(np.array([[1 << 4]], np.uint16), QaBitSpec(cloud_bit=4, confidence_bits=None))
        assert m.flags[0, 0]

    def test_zero_word(self):
        assert not cloud_mask_qa(np.zeros((1, 1), np.uint16)).flags.any()

    def test_word_2800(self):
        assert 2800 == 0b101011110000
        m = cloud_mask_qa(np.array([[2800]], np.uint16), QaBitSpec(4, (5, 6), 3))
        assert m.flags[0, 0]

    def test_low_confidence(self):
        # bit 4 set, confidence bits 5-6 = 01
        assert not cloud_mask_qa(np.array([[0b0110000]], np.uint16)).flags.any()

    def test_bit_decomposition_oracle(self, rng):
        words = rng.integers(0, 65536, size=(20, 20)).astype(np.uint16)
        spec = QaBitSpec(4, (5, 6), 2)
        expected = np.array(
            [[bool((int(w) >> 4) & 1) and ((int(w) >> 5) & 3) >= 2 for w in row] for row in words]
        )
        np.testing.assert_array_equal(cloud_mask_qa(words, spec).flags, expected)

    def test_pixelwise(self, rng):
        words = rng.integers(0, 65536, size=(12, 12)).astype(np.uint16)
        perm = rng.permutation(words.size)
        a = cloud_mask_qa(words).flags.ravel()[perm]
        b = cloud_mask_qa(words.ravel()[perm].reshape(words.shape)).flags.ravel()
        np.testing.assert_array_equal(a, b)

    def test_bit_beyond_width(self):
        with pytest.raises(BitOutOfRange):
            cloud_mask_qa(np.zeros((2, 2), np.uint8), QaBitSpec(cloud_bit=9, confidence_bits=None))
