"""Band-sequential raster and label-map files.

A raster ``scene.bsq`` is the raw little-endian payload laid out
band-major (band, row, column); ``scene.bsq.json`` next to it holds the
header::

    {"width": 448, "height": 448, "bands": 4, "dtype": "u8",
     "nodata": 0, "band_names": ["blue", "green", "red", "nir"]}

Label maps use the same layout with ``bands == 1`` and an extra
``palette`` list of ``{"id", "name", "color"}`` objects.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BandOutOfRange,
    DimensionMismatch,
    IoFailure,
    MissingHeader,
    PayloadSizeMismatch,
    SampleOutOfRange,
    UnsupportedDtype,
)

DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2")}


def dtype_code(dtype) -> str:
    dtype = np.dtype(dtype)
    for code, dt in DTYPES.items():
        if dt == dtype.newbyteorder("<"):
            return code
    raise UnsupportedDtype(f"unsupported sample type {dtype}; expected uint8 or uint16")


def dtype_max(code: str) -> int:
    return int(np.iinfo(DTYPES[code]).max)


@dataclass(frozen=True)
class RasterHeader:
    width: int
    height: int
    bands: int
    dtype: str = "u8"
    nodata: int | None = None
    band_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise UnsupportedDtype(f"dtype must be one of {sorted(DTYPES)}, got {self.dtype!r}")
        if min(self.width, self.height, self.bands) < 1:
            raise DimensionMismatch(
                f"raster dimensions must be >= 1, got {self.width}x{self.height}x{self.bands}"
            )
        if self.nodata is not None and not 0 <= self.nodata <= dtype_max(self.dtype):
            raise SampleOutOfRange(f"nodata value {self.nodata} not representable as {self.dtype}")
        if self.band_names is not None:
            object.__setattr__(self, "band_names", tuple(self.band_names))
            if len(self.band_names) != self.bands:
                raise DimensionMismatch(
                    f"{len(self.band_names)} band names for {self.bands} bands"
                )

    @property
    def sample_count(self) -> int:
        return self.width * self.height * self.bands

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "bands": self.bands,
            "dtype": self.dtype,
            "nodata": self.nodata,
            "band_names": list(self.band_names) if self.band_names is not None else None,
        }


@dataclass(frozen=True, eq=False)
class Raster:
    """Multi-band image; ``samples`` has shape (bands, height, width)."""

    header: RasterHeader
    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples)
        h = self.header
        if arr.shape != (h.bands, h.height, h.width):
            raise DimensionMismatch(
                f"samples shape {arr.shape} does not match header {(h.bands, h.height, h.width)}"
            )
        if arr.dtype != DTYPES[h.dtype]:
            arr = arr.astype(DTYPES[h.dtype])
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    @classmethod
    def from_array(cls, samples, nodata=None, band_names=None) -> "Raster":
        arr = np.asarray(samples)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise DimensionMismatch(f"expected (bands, height, width) array, got shape {arr.shape}")
        header = RasterHeader(
            width=arr.shape[2],
            height=arr.shape[1],
            bands=arr.shape[0],
            dtype=dtype_code(arr.dtype),
            nodata=nodata,
            band_names=band_names,
        )
        return cls(header, arr)

    @property
    def width(self) -> int:
        return self.header.width

    @property
    def height(self) -> int:
        return self.header.height

    @property
    def bands(self) -> int:
        return self.header.bands

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.samples, other.samples)

    __hash__ = None


@dataclass(frozen=True)
class PaletteEntry:
    id: int
    name: str
    color: tuple[int, int, int]


@dataclass(frozen=True)
class ClassPalette:
    entries: tuple[PaletteEntry, ...]

    def __post_init__(self):
        entries = tuple(
            e if isinstance(e, PaletteEntry) else PaletteEntry(int(e[0]), str(e[1]), tuple(e[2]))
            for e in self.entries
        )
        object.__setattr__(self, "entries", entries)
        if [e.id for e in entries] != list(range(len(entries))):
            raise ValueError("palette class ids must be contiguous from 0")
        if not entries or entries[0].name != "No data":
            raise ValueError('palette class 0 must be "No data"')
        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ValueError("palette class names must be unique")

    def __len__(self):
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def to_json(self) -> list[dict]:
        return [{"id": e.id, "name": e.name, "color": list(e.color)} for e in self.entries]

    @classmethod
    def from_json(cls, items) -> "ClassPalette":
        return cls(tuple(PaletteEntry(int(d["id"]), str(d["name"]), tuple(d["color"])) for d in items))

    @classmethod
    def generic(cls, num_classes: int) -> "ClassPalette":
        rng = np.random.default_rng(num_classes)
        colors = rng.integers(0, 256, size=(num_classes, 3))
        entries = [PaletteEntry(0, "No data", (0, 0, 0))]
        entries += [PaletteEntry(i, f"class_{i}", tuple(int(v) for v in colors[i])) for i in range(1, num_classes)]
        return cls(tuple(entries))


# NALCMS land-cover legend as used for the Manitoba mosaics, plus the added cloud class.
NALCMS_PALETTE = ClassPalette(
    (
        PaletteEntry(0, "No data", (0, 0, 0)),
        PaletteEntry(1, "Temperate or sub-polar needleleaf forest", (0, 61, 0)),
        PaletteEntry(2, "Sub-polar taiga needleleaf forest", (148, 156, 112)),
        PaletteEntry(3, "Temperate or sub-polar broadleaf deciduous forest", (20, 140, 61)),
        PaletteEntry(4, "Mixed forest", (92, 117, 43)),
        PaletteEntry(5, "Temperate or sub-polar shrubland", (179, 138, 51)),
        PaletteEntry(6, "Temperate or sub-polar grassland", (225, 207, 138)),
        PaletteEntry(7, "Sub-polar or polar shrubland-lichen-moss", (156, 117, 84)),
        PaletteEntry(8, "Sub-polar or polar grassland-lichen-moss", (186, 212, 143)),
        PaletteEntry(9, "Sub-polar or polar barren-lichen-moss", (64, 138, 112)),
        PaletteEntry(10, "Wetland", (107, 163, 138)),
        PaletteEntry(11, "Cropland", (230, 174, 102)),
        PaletteEntry(12, "Barren land", (168, 171, 174)),
        PaletteEntry(13, "Urban and built-up", (220, 33, 38)),
        PaletteEntry(14, "Water", (76, 112, 163)),
        PaletteEntry(15, "Snow and ice", (255, 250, 255)),
        PaletteEntry(16, "Cloud", (250, 250, 200)),
    )
)
CLOUD_CLASS = 16


def palette_for(num_classes: int) -> ClassPalette:
    if num_classes == len(NALCMS_PALETTE):
        return NALCMS_PALETTE
    return ClassPalette.generic(num_classes)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Single-band class-ID grid with its legend."""

    labels: np.ndarray
    palette: ClassPalette = field(default=NALCMS_PALETTE)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise DimensionMismatch(f"label map must be 2-D, got shape {arr.shape}")
        if arr.dtype.kind not in "ui":
            raise UnsupportedDtype(f"labels must be integers, got {arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() >= len(self.palette)):
            raise SampleOutOfRange(
                f"labels span [{arr.min()}, {arr.max()}] but the palette has {len(self.palette)} classes"
            )
        arr = np.ascontiguousarray(arr.astype(np.uint8 if len(self.palette) <= 256 else np.uint16))
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def num_classes(self) -> int:
        return len(self.palette)

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.palette == other.palette and np.array_equal(self.labels, other.labels)

    __hash__ = None


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _read(path):
    path = Path(path)
    side = _sidecar(path)
    if not side.is_file():
        raise MissingHeader(f"no sidecar header at {side}")
    try:
        meta = json.loads(side.read_text())
    except (OSError, ValueError) as exc:
        raise MissingHeader(f"cannot parse header {side}: {exc}") from exc
    if not isinstance(meta, dict):
        raise MissingHeader(f"header {side} is not a JSON object")
    try:
        header = RasterHeader(
            width=int(meta["width"]),
            height=int(meta["height"]),
            bands=int(meta["bands"]),
            dtype=meta["dtype"],
            nodata=meta.get("nodata"),
            band_names=meta.get("band_names"),
        )
    except KeyError as exc:
        raise MissingHeader(f"header {side} lacks key {exc}") from exc
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    itemsize = DTYPES[header.dtype].itemsize
    expected = header.sample_count * itemsize
    if len(payload) != expected:
        raise PayloadSizeMismatch(f"{path}: header implies {expected} bytes, payload has {len(payload)}")
    samples = np.frombuffer(payload, dtype=DTYPES[header.dtype]).reshape(
        header.bands, header.height, header.width
    )
    return header, samples, meta


def load_raster(path) -> Raster:
    header, samples, _ = _read(path)
    return Raster(header, samples)


def _write(path, samples, meta):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(np.ascontiguousarray(samples).tobytes())
        os.replace(tmp, path)
        _sidecar(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def save_raster(raster: Raster, path) -> None:
    _write(path, raster.samples.astype(DTYPES[raster.header.dtype]), raster.header.to_json())


def load_label_map(path) -> LabelMap:
    header, samples, meta = _read(path)
    if header.bands != 1:
        raise DimensionMismatch(f"label map {path} has {header.bands} bands, expected 1")
    if "palette" in meta:
        palette = ClassPalette.from_json(meta["palette"])
    elif samples.max() < len(NALCMS_PALETTE):
        palette = NALCMS_PALETTE
    else:
        palette = ClassPalette.generic(int(samples.max()) + 1)
    return LabelMap(samples[0], palette)


def save_label_map(labels: LabelMap, path) -> None:
    code = "u8" if labels.labels.dtype == np.uint8 else "u16"
    header = RasterHeader(width=labels.width, height=labels.height, bands=1, dtype=code, nodata=0)
    meta = header.to_json()
    meta["palette"] = labels.palette.to_json()
    _write(path, labels.labels[None], meta)


def extract_band(raster: Raster, band_index: int) -> np.ndarray:
    """Return band ``band_index`` as a (height, width) read-only view."""
    if not 0 <= band_index < raster.bands:
        raise BandOutOfRange(f"band {band_index} requested from a {raster.bands}-band raster")
    return raster.samples[band_index]
