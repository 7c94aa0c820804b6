"""Synthetic mosaics for the demo and for tests.

``make_scene`` draws a Voronoi land-cover map with a no-data strip and
bright cloud blobs; ``make_fine_structure`` draws thin lines and small
blobs that need fine spatial detail to classify.
"""

from __future__ import annotations

import numpy as np

from .raster import ClassPalette, LabelMap, PaletteEntry, Raster


def demo_palette(num_land: int) -> ClassPalette:
    names = ["No data"] + [f"land_{i}" for i in range(1, num_land + 1)] + ["Cloud"]
    rng = np.random.default_rng(len(names))
    colors = rng.integers(0, 256, size=(len(names), 3))
    return ClassPalette(tuple(PaletteEntry(i, n, tuple(int(v) for v in colors[i])) for i, n in enumerate(names)))


def _voronoi(height, width, cell_size, rng):
    """Cell index per pixel for one jittered seed point per grid cell.

    The nearest seed always lies in the 3x3 block neighbourhood, so only
    nine candidates are checked per pixel.
    """
    gh, gw = -(-height // cell_size), -(-width // cell_size)
    pts = (np.stack(np.mgrid[0:gh, 0:gw], axis=-1) + rng.uniform(0, 1, size=(gh, gw, 2))) * cell_size
    yy, xx = np.mgrid[0:height, 0:width]
    by, bx = yy // cell_size, xx // cell_size
    best = np.full((height, width), np.inf)
    owner = np.zeros((height, width), dtype=np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            cy, cx = by + dy, bx + dx
            ok = (cy >= 0) & (cy < gh) & (cx >= 0) & (cx < gw)
            cy, cx = np.clip(cy, 0, gh - 1), np.clip(cx, 0, gw - 1)
            p = pts[cy, cx]
            d = np.where(ok, (yy - p[..., 0]) ** 2 + (xx - p[..., 1]) ** 2, np.inf)
            closer = d < best
            best[closer] = d[closer]
            owner[closer] = (cy * gw + cx)[closer]
    return owner, gh * gw


def make_scene(height=192, width=192, bands=4, num_land=4, seed=0, cloud_cover=0.06, cell_size=24):
    """Return (raster, labels, cloud_truth) for a synthetic uint8 mosaic.

    Labels hold 0 (no data, a zero-valued strip on the left edge) and land
    classes 1..num_land; clouds are painted into the raster only, and
    ``cloud_truth`` marks where they are. Band 0 plays the blue band.
    """
    rng = np.random.default_rng(seed)
    owner, n_cells = _voronoi(height, width, cell_size, rng)
    cell_class = rng.integers(1, num_land + 1, size=n_cells)
    labels = cell_class[owner]
    nodata_cols = max(1, width // 16)
    labels[:, :nodata_cols] = 0

    signatures = rng.uniform(40, 150, size=(num_land + 1, bands))
    # land is dark in the blue band, which is what makes clouds separable there
    signatures[:, 0] = rng.uniform(40, 90, size=num_land + 1)
    img = signatures[labels].transpose(2, 0, 1)
    img = img + rng.normal(0, 8, size=img.shape)

    clouds = np.zeros((height, width), dtype=bool)
    yy, xx = np.mgrid[0:height, 0:width]
    while clouds.mean() < cloud_cover:
        cy, cx = rng.uniform(0, [height, width])
        r = rng.uniform(4, max(5, min(height, width) / 10))
        clouds |= (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
    clouds[:, :nodata_cols] = False
    img[:, clouds] = rng.normal(235, 6, size=(bands, int(clouds.sum())))

    img = np.clip(np.rint(img), 1, 255).astype(np.uint8)
    img[:, labels == 0] = 0
    raster = Raster.from_array(img, nodata=0, band_names=[f"b{i}" for i in range(bands)])
    palette = demo_palette(num_land)
    return raster, LabelMap(labels.astype(np.uint8), palette), clouds


def make_fine_structure(n_tiles, size=64, bands=3, seed=0, noise=40.0):
    """Tiles of background (class 1), 1-px lines (class 2) and 3x3 blobs (class 3).

    Lines and blobs share one spectral signature, so telling them apart
    takes spatial context; noise is heavy enough that single pixels are
    ambiguous. Returns (images uint8 (N, bands, S, S), labels (N, S, S)).
    """
    rng = np.random.default_rng(seed)
    images = np.empty((n_tiles, bands, size, size), dtype=np.uint8)
    labels = np.empty((n_tiles, size, size), dtype=np.uint8)
    bg = np.full(bands, 70.0)
    fg = np.full(bands, 150.0)
    for k in range(n_tiles):
        lab = np.ones((size, size), dtype=np.uint8)
        for _ in range(rng.integers(3, 6)):
            if rng.random() < 0.5:
                lab[int(rng.integers(size)), :] = 2
            else:
                lab[:, int(rng.integers(size))] = 2
        for _ in range(rng.integers(6, 12)):
            y, x = rng.integers(1, size - 1, size=2)
            lab[y - 1:y + 2, x - 1:x + 2] = 3
        mean = np.where((lab > 1)[None], fg[:, None, None], bg[:, None, None])
        img = mean + rng.normal(0, noise, size=mean.shape)
        images[k] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        labels[k] = lab
    return images, labels
