"""Cutting mosaics into square tiles and putting predictions back together.

``stride == tile_size`` gives the regular disjoint grid; ``stride ==
tile_size // 2`` gives the shifted grid with half-tile overlap. Tile ids are
row-major positions in the full grid, so filtered tile sets keep stable ids.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    CoverageGap,
    CoverageGapWarning,
    DimensionMismatch,
    EmptyTileSet,
    InvalidZoomFraction,
    IoFailure,
    MissingHeader,
    TileLargerThanMosaic,
)
from .raster import LabelMap, Raster, load_raster, save_label_map, save_raster

TRAIN = "train"
VALIDATION = "validation"


@dataclass(frozen=True, eq=False)
class Tile:
    """An aligned image/label patch. ``image`` is (bands, T, T)."""

    tile_id: int
    origin_row: int
    origin_col: int
    image: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.image.shape[1:] != self.labels.shape:
            raise DimensionMismatch(
                f"tile {self.tile_id}: image {self.image.shape} and labels {self.labels.shape} disagree"
            )

    @property
    def size(self) -> int:
        return self.labels.shape[0]


@dataclass
class TileSet:
    tiles: list[Tile]
    tile_size: int
    stride: int
    source_dims: tuple[int, int]
    dtype: str = "u8"

    def __len__(self):
        return len(self.tiles)

    def __iter__(self):
        return iter(self.tiles)

    def by_id(self) -> dict[int, Tile]:
        return {t.tile_id: t for t in self.tiles}


@dataclass
class SplitManifest:
    assignments: dict[int, str]
    ratio: float
    seed: int
    strata: dict[int, int] = field(default_factory=dict)

    def ids(self, split: str) -> list[int]:
        return sorted(i for i, s in self.assignments.items() if s == split)

    @property
    def train_ids(self) -> list[int]:
        return self.ids(TRAIN)

    @property
    def validation_ids(self) -> list[int]:
        return self.ids(VALIDATION)

    def to_json(self) -> dict:
        return {
            "ratio": self.ratio,
            "seed": self.seed,
            "assignments": {str(k): v for k, v in sorted(self.assignments.items())},
            "strata": {str(k): v for k, v in sorted(self.strata.items())},
        }

    @classmethod
    def from_json(cls, data) -> "SplitManifest":
        return cls(
            assignments={int(k): v for k, v in data["assignments"].items()},
            ratio=float(data["ratio"]),
            seed=int(data["seed"]),
            strata={int(k): int(v) for k, v in data.get("strata", {}).items()},
        )


def grid_positions(length: int, tile_size: int, stride: int) -> list[int]:
    if length < tile_size:
        return []
    return list(range(0, length - tile_size + 1, stride))


def tile_count(height: int, width: int, tile_size: int, stride: int) -> int:
    """Closed-form number of grid tiles for an H x W mosaic."""
    if height < tile_size or width < tile_size:
        return 0
    return ((height - tile_size) // stride + 1) * ((width - tile_size) // stride + 1)


def tile_mosaic(
    raster: Raster,
    labels: LabelMap,
    tile_size: int,
    stride: int,
    min_valid_fraction: float = 0.0,
) -> TileSet:
    """Crop every grid tile whose labels are at least ``min_valid_fraction`` non-zero."""
    if (raster.height, raster.width) != (labels.height, labels.width):
        raise DimensionMismatch(
            f"raster is {raster.height}x{raster.width} but labels are {labels.height}x{labels.width}"
        )
    if tile_size < 1 or stride < 1:
        raise ValueError("tile_size and stride must be >= 1")
    if tile_size > min(raster.height, raster.width):
        raise TileLargerThanMosaic(
            f"tile size {tile_size} exceeds mosaic {raster.height}x{raster.width}"
        )
    rows = grid_positions(raster.height, tile_size, stride)
    cols = grid_positions(raster.width, tile_size, stride)
    tiles = []
    tid = 0
    for r in rows:
        for c in cols:
            lab = labels.labels[r:r + tile_size, c:c + tile_size]
            if min_valid_fraction <= 0 or np.count_nonzero(lab) >= min_valid_fraction * lab.size:
                img = raster.samples[:, r:r + tile_size, c:c + tile_size]
                tiles.append(Tile(tid, r, c, img, lab))
            tid += 1
    return TileSet(tiles, tile_size, stride, (raster.height, raster.width), raster.header.dtype)


def dominant_class(labels: np.ndarray) -> int:
    """Most frequent class in a patch; ties go to the lowest class id."""
    return int(np.argmax(np.bincount(labels.ravel())))


def stratified_split(tileset: TileSet, ratio: float, seed: int) -> SplitManifest:
    """Assign tiles to train/validation, stratified by dominant class.

    ``ratio`` is the training fraction. Before sampling validation tiles, a
    small set of tiles is pinned to training so that every class present in
    the tile set appears in at least one training tile (a class seen in a
    single tile forces that tile into training).
    """
    if len(tileset) == 0:
        raise EmptyTileSet("cannot split an empty tile set")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    ids = [t.tile_id for t in tileset]
    presence = {t.tile_id: set(np.unique(t.labels).tolist()) for t in tileset}
    strata = {t.tile_id: dominant_class(t.labels) for t in tileset}

    holders: dict[int, list[int]] = {}
    for tid in ids:
        for c in presence[tid]:
            holders.setdefault(c, []).append(tid)
    pinned: set[int] = set()
    # rarest classes first so a single pinned tile can cover several of them
    for c in sorted(holders, key=lambda k: (len(holders[k]), k)):
        if any(t in pinned for t in holders[c]):
            continue
        pinned.add(holders[c][int(rng.integers(len(holders[c])))])

    assignments = {tid: TRAIN for tid in ids}
    for stratum in sorted(set(strata.values())):
        members = [tid for tid in ids if strata[tid] == stratum]
        n_val = int(round((1.0 - ratio) * len(members)))
        candidates = [tid for tid in members if tid not in pinned]
        order = rng.permutation(len(candidates))
        for k in order[:n_val]:
            assignments[candidates[k]] = VALIDATION
    return SplitManifest(assignments, ratio, seed, strata)


@dataclass(frozen=True)
class TransformSpec:
    """Geometric augmentation: zoom-crop, then ``rotation`` x 90 deg, then flips."""

    rotation: int = 0
    hflip: bool = False
    vflip: bool = False
    zoom: float | None = None

    def __post_init__(self):
        if self.rotation not in (0, 1, 2, 3):
            raise ValueError(f"rotation must be a multiple of 90 deg given as 0..3, got {self.rotation}")
        if self.zoom is not None and not 0.7 <= self.zoom < 1.0:
            raise InvalidZoomFraction(f"zoom fraction must lie in [0.7, 1.0), got {self.zoom}")

    @classmethod
    def random(cls, rng: np.random.Generator, zoom_probability: float = 0.5) -> "TransformSpec":
        rotation = int(rng.integers(4))
        hflip = bool(rng.integers(2))
        vflip = bool(rng.integers(2))
        zoom = float(rng.uniform(0.7, 1.0)) if rng.random() < zoom_probability else None
        return cls(rotation, hflip, vflip, zoom)

    def inverse(self) -> "TransformSpec":
        if self.zoom is not None:
            raise ValueError("zoom cropping is not invertible")
        # a single flip conjugates the rotation into its inverse
        if self.hflip != self.vflip:
            return TransformSpec(self.rotation, self.hflip, self.vflip)
        return TransformSpec((-self.rotation) % 4, self.hflip, self.vflip)


def _resize_nearest(arr, size):
    h, w = arr.shape[-2:]
    ys = np.minimum(((np.arange(size) + 0.5) * h / size).astype(np.int64), h - 1)
    xs = np.minimum(((np.arange(size) + 0.5) * w / size).astype(np.int64), w - 1)
    return arr[..., ys[:, None], xs[None, :]]


def _resize_bilinear(arr, size):
    h, w = arr.shape[-2:]

    def axis(n):
        src = np.clip((np.arange(size) + 0.5) * n / size - 0.5, 0, n - 1)
        lo = np.floor(src).astype(np.int64)
        hi = np.minimum(lo + 1, n - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h)
    x0, x1, fx = axis(w)
    a = arr.astype(np.float64)
    top = a[..., y0, :] * (1 - fy)[:, None] + a[..., y1, :] * fy[:, None]
    out = top[..., x0] * (1 - fx) + top[..., x1] * fx
    return out


def _geometric(arr, spec):
    out = np.rot90(arr, spec.rotation, axes=(-2, -1)) if spec.rotation else arr
    if spec.hflip:
        out = out[..., :, ::-1]
    if spec.vflip:
        out = out[..., ::-1, :]
    return out


def apply_transform(tile: Tile, spec: TransformSpec, seed: int = 0) -> Tile:
    """Apply ``spec`` identically to image and labels; ``seed`` places the zoom window."""
    image, labels = tile.image, tile.labels
    size = tile.size
    if spec.zoom is not None:
        win = max(1, int(round(spec.zoom * size)))
        rng = np.random.default_rng(seed)
        r = int(rng.integers(size - win + 1))
        c = int(rng.integers(size - win + 1))
        crop_img = image[:, r:r + win, c:c + win]
        info = np.iinfo(image.dtype)
        image = np.clip(np.rint(_resize_bilinear(crop_img, size)), info.min, info.max).astype(image.dtype)
        labels = _resize_nearest(labels[r:r + win, c:c + win], size)
    image = np.ascontiguousarray(_geometric(image, spec))
    labels = np.ascontiguousarray(_geometric(labels, spec))
    return Tile(tile.tile_id, tile.origin_row, tile.origin_col, image, labels)


def stitch(
    tiles,
    source_dims: tuple[int, int],
    num_classes: int | None = None,
    strict: bool = False,
) -> np.ndarray:
    """Assemble label tiles into a (H, W) map.

    ``tiles`` is a TileSet or an iterable of ``(origin_row, origin_col, labels)``.
    Every tile votes for its label at each pixel it covers; a pixel takes the
    class with the most votes, ties going to the lowest class id, so the
    result does not depend on tile order. Uncovered pixels stay class 0 and
    trigger a ``CoverageGapWarning`` (or ``CoverageGap`` when ``strict``).
    """
    if isinstance(tiles, TileSet):
        items = [(t.origin_row, t.origin_col, t.labels) for t in tiles]
    else:
        items = [(int(r), int(c), np.asarray(lab)) for r, c, lab in tiles]
    height, width = source_dims
    if num_classes is None:
        num_classes = max((int(lab.max()) for _, _, lab in items), default=0) + 1
    votes = np.zeros((num_classes, height, width), dtype=np.int32)
    for r, c, lab in items:
        if r < 0 or c < 0 or r + lab.shape[0] > height or c + lab.shape[1] > width:
            raise DimensionMismatch(
                f"tile at ({r}, {c}) of size {lab.shape} falls outside {height}x{width}"
            )
        kernels.vote_accumulate(votes, lab, r, c)
    out = np.argmax(votes, axis=0).astype(np.uint8 if num_classes <= 256 else np.uint16)
    covered = votes.any(axis=0)
    if not covered.all():
        missing = int(covered.size - np.count_nonzero(covered))
        msg = f"{missing} of {covered.size} pixels are not covered by any tile"
        if strict:
            raise CoverageGap(msg)
        warnings.warn(msg, CoverageGapWarning, stacklevel=2)
    return out


def write_tile_store(tileset: TileSet, directory, manifest: SplitManifest | None = None, palette=None) -> Path:
    """Write ``manifest.json`` plus one image and one label file per tile."""
    directory = Path(directory)
    assignments = manifest.assignments if manifest is not None else {}
    records = []
    for t in tileset:
        stem = f"tile_{t.tile_id:06d}"
        save_raster(Raster.from_array(t.image), directory / f"{stem}.bsq")
        if palette is not None:
            save_label_map(LabelMap(t.labels, palette), directory / f"{stem}_labels.bsq")
        else:
            save_raster(Raster.from_array(t.labels[None]), directory / f"{stem}_labels.bsq")
        records.append(
            {"id": t.tile_id, "row": t.origin_row, "col": t.origin_col, "split": assignments.get(t.tile_id)}
        )
    meta = {
        "tile_size": tileset.tile_size,
        "stride": tileset.stride,
        "source_dims": list(tileset.source_dims),
        "dtype": tileset.dtype,
        "tiles": records,
    }
    try:
        (directory / "manifest.json").write_text(json.dumps(meta, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write tile manifest in {directory}: {exc}") from exc
    return directory / "manifest.json"


def read_tile_store(directory) -> tuple[TileSet, SplitManifest | None]:
    directory = Path(directory)
    path = directory / "manifest.json"
    if not path.is_file():
        raise MissingHeader(f"no tile manifest at {path}")
    meta = json.loads(path.read_text())
    tiles = []
    assignments = {}
    for rec in meta["tiles"]:
        stem = f"tile_{rec['id']:06d}"
        image = load_raster(directory / f"{stem}.bsq").samples
        labels = load_raster(directory / f"{stem}_labels.bsq").samples[0]
        tiles.append(Tile(rec["id"], rec["row"], rec["col"], image, labels))
        if rec.get("split"):
            assignments[rec["id"]] = rec["split"]
    tileset = TileSet(tiles, meta["tile_size"], meta["stride"], tuple(meta["source_dims"]), meta.get("dtype", "u8"))
    manifest = SplitManifest(assignments, float("nan"), -1) if assignments else None
    return tileset, manifest
