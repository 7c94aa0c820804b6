import dataclasses

import numpy as np
import pytest

from lulcseg.errors import ChannelMismatch, EmptyTrainingSplit, LabelOutOfRange, NumericFailure
from lulcseg.raster import Raster
from lulcseg.segnet import ModelConfig, build_model, forward, load_checkpoint
from lulcseg.tiling import SplitManifest, Tile, TileSet
from lulcseg.trainer import TrainConfig, evaluate_tiles, normalize, predict_raster, train

TINY = (4, 8, 8, 8, 8)


def _tileset(rng, n=6, size=16, bands=2, classes=3):
    tiles = [
        Tile(i, 0, 0, rng.integers(0, 256, size=(bands, size, size)).astype(np.uint8),
             rng.integers(0, classes, size=(size, size)).astype(np.uint8))
        for i in range(n)
    ]
    return TileSet(tiles, size, size, (size, size))


def _manifest(n, n_val=1):
    return SplitManifest({i: ("validation" if i < n_val else "train") for i in range(n)}, 0.8, 0)


@pytest.fixture
def setup(rng):
    ts = _tileset(rng)
    cfg = ModelConfig(3, 2, TINY, output_stride=4, tile_size=16)
    return ts, _manifest(len(ts)), cfg


def _strip_time(history):
    return [dataclasses.replace(r, seconds=0.0) for r in history.records]


class TestSchedule:
    def test_phase_lrs(self, setup):
        ts, man, cfg = setup
        res = train(build_model(cfg), ts, man, TrainConfig(phases=((1e-4, 2), (1e-5, 2)), batch_size=2))
        assert res.history.column("lr") == [1e-4, 1e-4, 1e-5, 1e-5]
        assert res.history.column("phase") == [0, 0, 1, 1]
        assert res.history.column("epoch") == [1, 2, 3, 4]

    def test_bad_phase(self):
        with pytest.raises(ValueError):
            TrainConfig(phases=((1e-4, 0),))


class TestDeterminism:
    def test_identical_history(self, setup):
        ts, man, cfg = setup
        tc = TrainConfig(phases=((1e-3, 3),), batch_size=2, seed=9)
        a = train(build_model(cfg, seed=1), ts, man, tc)
        b = train(build_model(cfg, seed=1), ts, man, tc)
        assert _strip_time(a.history) == _strip_time(b.history)
        for k in a.model.params:
            assert a.model.params[k].data.tobytes() == b.model.params[k].data.tobytes()

    def test_shuffle_changes_order(self, rng):
        ts = _tileset(rng, n=12, size=16)
        cfg = ModelConfig(3, 2, TINY, output_stride=4, tile_size=16)
        res = train(build_model(cfg), ts, _manifest(12, 0), TrainConfig(phases=((1e-3, 20),), batch_size=3, transform_enabled=False))
        orders = [r.order for r in res.history.records]
        train_ids = tuple(range(12))
        assert all(sorted(o) == list(train_ids) for o in orders)
        assert sum(o != train_ids for o in orders) >= 0.95 * len(orders)


class TestOutputs:
    def test_files_written(self, setup, tmp_path):
        ts, man, cfg = setup
        res = train(build_model(cfg), ts, man, TrainConfig(phases=((1e-3, 2),), batch_size=3), out_dir=tmp_path)
        assert {p.name for p in tmp_path.iterdir()} >= {"final.ckpt", "best.ckpt", "history.csv"}
        lines = (tmp_path / "history.csv").read_text().splitlines()
        assert lines[0].startswith("epoch,phase,lr,loss") and len(lines) == 3
        best = load_checkpoint(tmp_path / "best.ckpt", expected=cfg)
        val = [t for t in ts if t.tile_id in man.validation_ids]
        assert evaluate_tiles(best, val, "u8") == pytest.approx(res.best_val_oa, abs=1e-6)

    def test_checkpoint_round_trip_oa(self, setup, tmp_path):
        ts, man, cfg = setup
        res = train(build_model(cfg), ts, man, TrainConfig(phases=((1e-3, 2),), batch_size=3), out_dir=tmp_path)
        back = load_checkpoint(tmp_path / "final.ckpt")
        assert evaluate_tiles(back, list(ts), "u8") == pytest.approx(evaluate_tiles(res.model, list(ts), "u8"), abs=1e-6)


class TestErrors:
    def test_empty_training(self, setup):
        ts, _, cfg = setup
        man = SplitManifest({t.tile_id: "validation" for t in ts}, 0.5, 0)
        with pytest.raises(EmptyTrainingSplit):
            train(build_model(cfg), ts, man, TrainConfig(phases=((1e-3, 1),)))

    def test_label_out_of_range(self, rng):
        ts = _tileset(rng, classes=5)
        with pytest.raises(LabelOutOfRange):
            train(build_model(ModelConfig(3, 2, TINY, tile_size=16)), ts, _manifest(6), TrainConfig(phases=((1e-3, 1),)))

    def test_channel_mismatch(self, setup):
        ts, man, _ = setup
        with pytest.raises(ChannelMismatch):
            train(build_model(ModelConfig(3, 4, TINY, tile_size=16)), ts, man, TrainConfig(phases=((1e-3, 1),)))

    def test_non_finite_loss(self, setup):
        ts, man, cfg = setup
        model = build_model(cfg)
        model.params["head.bias"].data[:] = np.nan
        with pytest.raises(NumericFailure):
            train(model, ts, man, TrainConfig(phases=((1e-3, 1),)))


class TestPredictRaster:
    @pytest.fixture
    def model(self):
        return build_model(ModelConfig(4, 3, TINY, output_stride=8, tile_size=224), seed=2)

    def test_single_tile(self, model, rng):
        r = Raster.from_array(rng.integers(0, 256, size=(3, 224, 224)).astype(np.uint8))
        expected = np.argmax(forward(model, normalize(r.samples[None], "u8")).data[0], axis=0)
        np.testing.assert_array_equal(predict_raster(model, r).labels, expected)

    def test_four_tiles(self, model, rng):
        r = Raster.from_array(rng.integers(0, 256, size=(3, 448, 448)).astype(np.uint8))
        out = predict_raster(model, r).labels
        for y in (0, 224):
            for x in (0, 224):
                patch = normalize(r.samples[None, :, y:y + 224, x:x + 224], "u8")
                np.testing.assert_array_equal(out[y:y + 224, x:x + 224], np.argmax(forward(model, patch).data[0], axis=0))

    def test_ragged_extent_and_determinism(self, rng):
        model = build_model(ModelConfig(4, 3, TINY, output_stride=4, tile_size=16))
        r = Raster.from_array(rng.integers(0, 256, size=(3, 37, 21)).astype(np.uint8))
        a = predict_raster(model, r)
        assert (a.height, a.width) == (37, 21)
        assert predict_raster(model, r) == a

    def test_channel_mismatch(self, model, rng):
        with pytest.raises(ChannelMismatch):
            predict_raster(model, Raster.from_array(np.zeros((2, 224, 224), np.uint8)))
