"""Acceptance suite: one test per criterion, each with its own oracle.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary ends
with one PASS/FAIL line per criterion.
"""

import itertools
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest
from gradcheck import probe

from lulcseg import metrics
from lulcseg.autodiff import functional as F
from lulcseg.cloudmask import Histogram, otsu_threshold
from lulcseg.raster import ClassPalette, LabelMap, Raster
from lulcseg.segnet import DESK_WIDTHS, OUTPUT_STRIDES, VGG16_WIDTHS, ModelConfig, bottleneck_dims, build_model, forward, param_count
from lulcseg.synthetic import make_fine_structure, make_scene
from lulcseg.tiling import SplitManifest, Tile, TileSet, grid_positions, stitch, tile_count, tile_mosaic
from lulcseg.trainer import TrainConfig, evaluate_tiles, train

# Published Landsat 8 per-class scores in percent: (class, CSI, precision, recall, F1).
LANDSAT8_SCORES = [
    ("No data", 99.99, 99.99, 99.99, 99.99),
    ("Temperate or sub-polar needleleaf forest", 76.21, 84.65, 88.44, 86.5),
    ("Sub-polar taiga needleleaf forest", 41.62, 67.21, 52.22, 58.77),
    ("Temperate or sub-polar broadleaf forest", 71.37, 83.11, 83.48, 83.29),
    ("Mixed forest", 56.03, 74.1, 69.67, 71.82),
    ("Temperate or sub-polar shrubland", 48.61, 70.48, 61.04, 65.42),
    ("Temperate or sub-polar grassland", 81.44, 90.12, 89.43, 89.77),
    ("Sub-polar or polar shrubland-lichen-moss", 17.62, 54.06, 20.73, 29.97),
    ("Sub-polar or polar grassland-lichen-moss", 21.25, 59.3, 24.87, 35.04),
    ("Sub-polar or polar barren-lichen-moss", 37.27, 66.13, 46.07, 54.31),
    ("Wetland", 75.76, 85.78, 86.64, 86.21),
    ("Cropland", 93.12, 95.77, 97.11, 96.44),
    ("Barren land", 70.79, 84.13, 81.7, 82.9),
    ("Urban and built-up", 57.79, 74.52, 72.01, 73.24),
    ("Water", 88.25, 95.04, 92.51, 93.76),
    ("Snow and ice", 69.57, 86.6, 77.96, 82.05),
    ("Cloud", 91.51, 94.81, 96.33, 95.56),
]


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def _elapsed_under(start, limit, record_property, what):
    took = time.perf_counter() - start
    record_property("detail", f"{what} took {took:.1f}s (limit {limit}s)")
    assert took < limit, f"{what} took {took:.1f}s, limit {limit}s"


@pytest.mark.criterion(1, "gradient integrity (finite differences, float64)")
def test_gradient_integrity(rng, record_property):
    start = time.perf_counter()
    worst = {}

    for d in (1, 2, 4):
        spec = F.ConvSpec(3, 4, 3, 1, d, d)
        x, w, b = rng.normal(size=(2, 3, 10, 10)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
        r = rng.normal(size=(2, 4, *spec.output_dims(10, 10)))
        gx, gw, gb = F.conv2d_backward(r, x, w, spec)
        worst[f"conv d={d}"] = probe(lambda: float((F.conv2d_forward(x, w, b, spec) * r).sum()), [x, w, b], [gx, gw, gb], rng, 25)

    spec = F.ConvSpec(3, 2, 2, 2)
    x, w, b = rng.normal(size=(2, 3, 5, 5)), rng.normal(size=(3, 2, 2, 2)), rng.normal(size=2)
    r = rng.normal(size=(2, 2, 10, 10))
    gx, gw, gb = F.conv_transpose2d_backward(r, x, w, spec)
    worst["transposed conv"] = probe(
        lambda: float((F.conv_transpose2d_forward(x, w, b, spec) * r).sum()), [x, w, b], [gx, gw, gb], rng, 25
    )

    for stride, pad, d in ((2, (0, 0, 0, 0), 1), (1, (0, 2, 0, 2), 2)):
        # distinct values 0.01 apart keep every window's argmax fixed under the probe step
        x = rng.permutation(np.arange(2 * 3 * 8 * 8, dtype=np.float64)).reshape(2, 3, 8, 8) * 0.01
        out, idx = F.maxpool2d_forward(x, 2, stride, pad, d)
        r = rng.normal(size=out.shape)
        gx = F.maxpool2d_backward(r, idx, x.shape)
        worst[f"maxpool s={stride} d={d}"] = probe(
            lambda: float((F.maxpool2d_forward(x, 2, stride, pad, d)[0] * r).sum()), [x], [gx], rng, 25
        )

    logits = rng.normal(size=(2, 5, 4, 4))
    t = rng.integers(0, 5, size=(2, 4, 4))
    _, g = F.softmax_cross_entropy(logits, t)
    worst["softmax CE"] = probe(lambda: F.softmax_cross_entropy(logits, t)[0], [logits], [g], rng, 25)

    record_property("detail", "max rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-4, worst
    _elapsed_under(start, 120, record_property, "gradient checks")


@pytest.mark.criterion(2, "F1/CSI recomputed from published precision/recall within 0.005")
def test_metric_identities_against_published(record_property):
    start = time.perf_counter()
    f1_miss, csi_miss, consistent = {}, {}, 0
    for name, csi, p, r, f1 in LANDSAT8_SCORES:
        f1_miss[name] = 100 * metrics.f1_from(p / 100, r / 100) - f1
        csi_miss[name] = 100 * metrics.csi_from(p / 100, r / 100) - csi
        # is the printed CSI reachable from some (P, R) inside their rounding intervals?
        corners = [100 * metrics.csi_from((p + a) / 100, (r + b) / 100) for a in (-0.005, 0.005) for b in (-0.005, 0.005)]
        consistent += min(corners) - 0.005 <= csi <= max(corners) + 0.005
    bad = {k: round(v, 4) for k, v in {**{f"F1 {k}": v for k, v in f1_miss.items()},
                                        **{f"CSI {k}": v for k, v in csi_miss.items()}}.items() if abs(v) > 0.005}
    record_property(
        "detail",
        f"max |dF1| {max(map(abs, f1_miss.values())):.4f}, max |dCSI| {max(map(abs, csi_miss.values())):.4f}; "
        f"{len(bad)} rows outside 0.005; {consistent}/17 CSI values consistent with rounded P,R",
    )
    assert round(100 * metrics.f1_from(0.9577, 0.9711), 2) == 96.44
    assert round(100 * metrics.csi_from(0.9504, 0.9251), 2) == 88.25
    assert not bad, f"recomputed values outside +-0.005: {bad}"
    assert time.perf_counter() - start < 1.0


def _naive(pred, truth, c):
    p, t = pred.ravel().tolist(), truth.ravel().tolist()
    res = {"oa": sum(a == b for a, b in zip(p, t)) / len(t), "precision": [], "recall": [], "f1": [], "csi": []}
    for k in range(c):
        tp = fp = fn = 0
        for a, b in zip(p, t):
            tp += a == k and b == k
            fp += a == k and b != k
            fn += a != k and b == k
        prec = tp / (tp + fp) if tp + fp else np.nan
        rec = tp / (tp + fn) if tp + fn else np.nan
        if tp + fp + fn == 0:
            f1 = np.nan
        else:
            f1 = 0.0 if tp == 0 else 2 * prec * rec / (prec + rec)
        res["precision"].append(prec)
        res["recall"].append(rec)
        res["f1"].append(f1)
        res["csi"].append(tp / (tp + fp + fn) if tp + fp + fn else np.nan)
    return res


@pytest.mark.criterion(3, "confusion-matrix metrics equal naive per-pixel counting")
def test_metric_oracle(rng, record_property):
    start = time.perf_counter()
    for _ in range(200):
        skew = rng.dirichlet(np.ones(17) * 0.5)
        truth = rng.choice(17, size=(32, 32), p=skew)
        pred = np.where(rng.random((32, 32)) < 0.6, truth, rng.integers(0, 17, size=(32, 32)))
        cm = metrics.confusion(pred, truth, 17)
        pc = metrics.per_class(cm)
        ref = _naive(pred, truth, 17)
        assert metrics.overall_accuracy(cm) == ref["oa"]
        for name in ("precision", "recall", "f1", "csi"):
            np.testing.assert_array_equal(pc.metric(name), np.array(ref[name]))
    _elapsed_under(start, 30, record_property, "200 map pairs")


def _exhaustive_otsu_8bit(counts):
    counts = [int(c) for c in counts]
    n = sum(counts)
    s = sum(i * c for i, c in enumerate(counts))
    best_t, best = None, Fraction(-1)
    n0 = s0 = 0
    for t in range(len(counts) - 1):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = n - n0
        var = Fraction(0) if n0 == 0 or n1 == 0 else Fraction(n0 * n1, n * n) * (Fraction(s0, n0) - Fraction(s - s0, n1)) ** 2
        if var > best:
            best_t, best = t, var
    return best_t


def _exhaustive_otsu_int(counts):
    # w0*w1*(mu0-mu1)^2 = (s0*n1 - s1*n0)^2 / (N^2 n0 n1); compare by cross-multiplication
    counts = [int(c) for c in counts]
    n = sum(counts)
    s = sum(i * c for i, c in enumerate(counts))
    best_t, best_num, best_den = None, -1, 1
    for t, (n0, s0) in enumerate(zip(itertools.accumulate(counts), itertools.accumulate(i * c for i, c in enumerate(counts)))):
        if t == len(counts) - 1:
            break
        n1, s1 = n - n0, s - s0
        num, den = ((s0 * n1 - s1 * n0) ** 2, n0 * n1) if n0 and n1 else (0, 1)
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    return best_t


def _random_histogram(rng, nbins):
    kind = rng.integers(4)
    h = np.zeros(nbins, dtype=np.int64)
    if kind == 0:
        h[:] = rng.integers(0, 500, size=nbins)
    elif kind == 1:
        idx = rng.choice(nbins, size=int(rng.integers(2, 10)), replace=False)
        h[idx] = rng.integers(1, 40, size=idx.size)
    elif kind == 2:
        for _ in range(int(rng.integers(2, 4))):
            v = rng.normal(rng.uniform(0, nbins), rng.uniform(1, nbins / 8), size=int(rng.integers(100, 20000)))
            h += np.bincount(np.clip(np.rint(v), 0, nbins - 1).astype(np.int64), minlength=nbins)
    else:
        a, b = sorted(rng.choice(nbins, size=2, replace=False))
        h[a] = h[b] = int(rng.integers(1, 100))
    if np.count_nonzero(h) < 2:
        h[0] += 1
        h[-1] += 1
    return h


@pytest.mark.criterion(4, "Otsu threshold equals exhaustive between-class-variance argmax")
def test_otsu_equivalence(rng, record_property):
    start = time.perf_counter()
    for _ in range(500):
        h = _random_histogram(rng, 256)
        assert otsu_threshold(Histogram(h)) == _exhaustive_otsu_8bit(h)
    for _ in range(50):
        h = _random_histogram(rng, 65536)
        assert otsu_threshold(Histogram(h)) == _exhaustive_otsu_int(h)
    _elapsed_under(start, 60, record_property, "550 histograms")


@pytest.mark.criterion(5, "tiling counts, disjoint round-trip and shifted/regular ratio")
def test_tiling_algebra(rng, record_property):
    start = time.perf_counter()
    for _ in range(200):
        t = int(rng.integers(1, 64))
        s = int(rng.integers(1, 64))
        h, w = (int(v) for v in rng.integers(t, 300, size=2))
        enumerated = sum(1 for _ in itertools.product(range(0, h - t + 1, s), range(0, w - t + 1, s)))
        assert tile_count(h, w, t, s) == enumerated
        assert len(grid_positions(h, t, s)) * len(grid_positions(w, t, s)) == enumerated
    for _ in range(20):
        t = int(rng.integers(4, 40))
        h, w = t * int(rng.integers(1, 6)), t * int(rng.integers(1, 6))
        raster = Raster.from_array(rng.integers(0, 256, size=(2, h, w)).astype(np.uint8))
        labels = LabelMap(rng.integers(0, 9, size=(h, w)).astype(np.uint8), ClassPalette.generic(9))
        ts = tile_mosaic(raster, labels, t, t)
        assert len(ts) == tile_count(h, w, t, t)
        assert stitch(ts, (h, w), 9).tobytes() == labels.labels.tobytes()
    side = 100 * 224
    ratio = Fraction(tile_count(side, side, 224, 112), tile_count(side, side, 224, 224))
    record_property("detail", f"shifted/regular at k=100: {float(ratio)}")
    assert ratio == Fraction(39601, 10000)
    _elapsed_under(start, 60, record_property, "tiling checks")


@pytest.mark.criterion(6, "bottleneck = 224/OS and logits (B,C,224,224) for every OS")
def test_architecture_shape_sweep(rng, record_property):
    start = time.perf_counter()
    x = rng.random((2, 4, 224, 224)).astype(np.float32)
    for os in OUTPUT_STRIDES:
        model = build_model(ModelConfig(17, 4, DESK_WIDTHS, output_stride=os, tile_size=224), seed=0)
        assert bottleneck_dims(model) == (224 // os, 224 // os)
        assert forward(model, x).data.shape == (2, 17, 224, 224)
    _elapsed_under(start, 60, record_property, "five strides")


@pytest.mark.criterion(7, "plain U-Net decoder has >= 2.5x the parameters of the modified decoder")
def test_parameter_ratio(record_property):
    start = time.perf_counter()
    ratios = {}
    for os in OUTPUT_STRIDES:
        counts = {
            v: param_count(build_model(ModelConfig(17, 3, VGG16_WIDTHS, decoder_variant=v, output_stride=os)))["decoder"]
            for v in ("plain_unet", "modified_unet")
        }
        ratios[os] = counts["plain_unet"] / counts["modified_unet"]
    record_property("detail", "plain/modified decoder params " + ", ".join(f"OS{k} {v:.2f}" for k, v in ratios.items()))
    assert min(ratios.values()) >= 2.5
    assert time.perf_counter() - start < 10


@pytest.mark.criterion(8, "overfit 8 five-class 64x64 tiles to >= 99% training OA within 300 epochs")
def test_overfit_capacity(record_property):
    start = time.perf_counter()
    tiles = []
    for k in range(8):
        raster, labels, _ = make_scene(64, 64, bands=3, num_land=4, seed=k, cloud_cover=0.0, cell_size=20)
        tiles.append(Tile(k, 0, 0, raster.samples, labels.labels))
    assert set(np.unique(np.stack([t.labels for t in tiles])).tolist()) == {0, 1, 2, 3, 4}
    ts = TileSet(tiles, 64, 64, (64, 64))
    manifest = SplitManifest({k: "train" for k in range(8)}, 1.0, 0)
    model = build_model(ModelConfig(5, 3, DESK_WIDTHS, output_stride=4, tile_size=64), seed=0)
    res = train(model, ts, manifest, TrainConfig(phases=((1e-3, 300),), batch_size=4, transform_enabled=False))
    losses = np.array(res.history.column("loss"))
    train_oa = np.array(res.history.column("train_oa"))
    final_oa = evaluate_tiles(res.model, tiles, "u8")
    first = int(np.argmax(train_oa >= 0.99)) + 1 if (train_oa >= 0.99).any() else None
    # per-epoch noise is averaged out by comparing consecutive 20-epoch block means
    blocks = losses.reshape(-1, 20).mean(axis=1)
    rises = [(i + 1, float(blocks[i]), float(blocks[i + 1])) for i in range(len(blocks) - 1) if blocks[i + 1] > blocks[i]]
    record_property(
        "detail",
        f"train OA {final_oa:.4f} (first >= 0.99 at epoch {first}), final loss {losses[-1]:.2e}, "
        f"block-mean rises {len(rises)}",
    )
    assert final_oa >= 0.99 and first is not None
    assert not rises, f"20-epoch block mean loss increased: {rises}"
    _elapsed_under(start, 600, record_property, "overfit run")


@pytest.mark.criterion(9, "fine-structure validation OA at OS=4 >= OS=32 (soft, tolerance 0 pp)")
def test_output_stride_trend(record_property):
    start = time.perf_counter()
    images, labels = make_fine_structure(32, size=64, seed=0)
    tiles = [Tile(i, 0, 0, images[i], labels[i]) for i in range(32)]
    ts = TileSet(tiles, 64, 64, (64, 64))
    manifest = SplitManifest({i: "train" if i < 24 else "validation" for i in range(32)}, 0.75, 0)
    val = tiles[24:]
    oa = {}
    for os in (4, 32):
        model = build_model(ModelConfig(4, 3, DESK_WIDTHS, output_stride=os, tile_size=64), seed=0)
        res = train(model, ts, manifest, TrainConfig(phases=((1e-3, 40), (1e-4, 20)), batch_size=4, seed=0))
        oa[os] = evaluate_tiles(res.model, val, "u8")
    diff = 100 * (oa[4] - oa[32])
    record_property("detail", f"validation OA OS4 {100 * oa[4]:.2f}% vs OS32 {100 * oa[32]:.2f}% ({diff:+.2f} pp)")
    assert oa[4] >= oa[32]
    _elapsed_under(start, 1800, record_property, "two training runs")


@pytest.mark.criterion(10, "demo --seed 7 twice gives byte-identical summaries and checkpoints")
def test_end_to_end_determinism(tmp_path, record_property):
    start = time.perf_counter()
    for run in ("a", "b"):
        subprocess.run(
            [sys.executable, "-m", "lulcseg.cli", "demo", "--seed", "7", "--out", str(tmp_path / run)],
            check=True, capture_output=True, text=True,
        )
    artifacts = ["eval/summary.json", "eval/per_class.csv", "train/final.ckpt", "train/best.ckpt", "prediction.bsq"]
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in artifacts]
    record_property("detail", f"{sum(same)}/{len(artifacts)} artifacts identical")
    assert all(same), dict(zip(artifacts, same))
    _elapsed_under(start, 600, record_property, "two demo runs")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
