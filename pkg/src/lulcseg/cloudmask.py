"""Cloud labels from a blue-band Otsu split or from quality-assessment bits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import BitOutOfRange, DegenerateHistogram, DimensionMismatch
from .raster import CLOUD_CLASS, NALCMS_PALETTE, LabelMap, Raster, extract_band

# near-ties in the float screen are re-ranked with exact integer arithmetic
_SCREEN_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.bin_counts, dtype=np.int64)
        if counts.ndim != 1 or (counts < 0).any():
            raise ValueError("histogram counts must be a 1-D array of non-negative integers")
        object.__setattr__(self, "bin_counts", counts)

    @property
    def total(self) -> int:
        return int(self.bin_counts.sum())


def build_histogram(plane: np.ndarray, nodata: int | None = None) -> Histogram:
    """Count sample values of a uint8/uint16 plane, skipping ``nodata``."""
    plane = np.asarray(plane)
    nbins = 256 if plane.dtype == np.uint8 else 65536
    valid = None if nodata is None else plane != nodata
    return Histogram(kernels.histogram(plane, nbins, valid))


def otsu_threshold(hist: Histogram) -> int:
    """Threshold t maximising the between-class variance of {<= t} vs {> t}.

    Ties go to the lowest t. All thresholds are screened in float64 and the
    candidates within a relative 1e-9 of the best are compared exactly.
    """
    counts = hist.bin_counts
    if np.count_nonzero(counts) < 2:
        raise DegenerateHistogram("need at least two populated histogram bins")
    values = np.arange(counts.size, dtype=np.int64)
    n0 = np.cumsum(counts).astype(np.float64)[:-1]
    s0 = np.cumsum(counts * values).astype(np.float64)[:-1]
    n_total = float(counts.sum())
    s_total = float((counts * values).sum())
    n1 = n_total - n0
    s1 = s_total - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        d = s0 * n1 - s1 * n0
        score = np.where((n0 > 0) & (n1 > 0), d * d / (n0 * n1), 0.0)
    best = score.max()
    candidates = np.flatnonzero(score >= best * (1.0 - _SCREEN_RTOL))
    if candidates.size == 1:
        return int(candidates[0])
    # exact rational comparison, cumulative sums carried as Python ints
    c = [int(v) for v in counts]
    cum_n = np.cumsum(counts, dtype=object)
    cum_s = np.cumsum([c[i] * i for i in range(len(c))], dtype=object)
    N, S = int(cum_n[-1]), int(cum_s[-1])
    best_t, best_num, best_den = None, 0, 1
    for t in candidates.tolist():
        a, b = int(cum_n[t]), int(cum_s[t])
        num = (b * (N - a) - (S - b) * a) ** 2
        den = a * (N - a)
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return int(best_t)


@dataclass(frozen=True, eq=False)
class CloudMask:
    flags: np.ndarray
    threshold: int | None = None

    @property
    def height(self) -> int:
        return self.flags.shape[0]

    @property
    def width(self) -> int:
        return self.flags.shape[1]

    def to_label_map(self) -> LabelMap:
        """Label raster with 0 = clear and 16 = cloud on the NALCMS legend."""
        labels = np.where(self.flags, CLOUD_CLASS, 0).astype(np.uint8)
        return LabelMap(labels, NALCMS_PALETTE)


def cloud_mask_otsu(raster: Raster, blue_band: int) -> CloudMask:
    plane = extract_band(raster, blue_band)
    hist = build_histogram(plane, raster.header.nodata)
    t = otsu_threshold(hist)
    flags = plane > t
    if raster.header.nodata is not None:
        flags &= plane != raster.header.nodata
    return CloudMask(np.ascontiguousarray(flags), t)


@dataclass(frozen=True)
class QaBitSpec:
    """Which bits of a QA word flag cloud. Defaults follow the Landsat 8
    Collection-1 BQA layout: bit 4 cloud, bits 5-6 cloud confidence."""

    cloud_bit: int = 4
    confidence_bits: tuple[int, int] | None = (5, 6)
    confidence_min: int = 3

    def __post_init__(self):
        if self.cloud_bit < 0:
            raise BitOutOfRange(f"cloud bit must be >= 0, got {self.cloud_bit}")
        if self.confidence_bits is not None:
            lo, hi = self.confidence_bits
            if not 0 <= lo < hi:
                raise BitOutOfRange(f"confidence bits need 0 <= low < high, got {self.confidence_bits}")

    def check_width(self, bit_width: int) -> None:
        top = self.cloud_bit if self.confidence_bits is None else max(self.cloud_bit, self.confidence_bits[1])
        if top >= bit_width:
            raise BitOutOfRange(f"bit {top} does not exist in a {bit_width}-bit QA word")


def cloud_mask_qa(qa_band: np.ndarray, spec: QaBitSpec = QaBitSpec()) -> CloudMask:
    qa = np.asarray(qa_band)
    if qa.ndim != 2:
        raise DimensionMismatch(f"QA band must be 2-D, got shape {qa.shape}")
    spec.check_width(qa.dtype.itemsize * 8)
    words = qa.astype(np.uint32)
    flags = ((words >> spec.cloud_bit) & 1).astype(bool)
    if spec.confidence_bits is not None:
        lo, hi = spec.confidence_bits
        conf = (words >> lo) & ((1 << (hi - lo + 1)) - 1)
        flags &= conf >= spec.confidence_min
    return CloudMask(flags)
