"""Training loop and full-raster prediction."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .autodiff import Adam
from .autodiff.tensor import Tensor, softmax_cross_entropy
from .errors import ChannelMismatch, EmptyTrainingSplit, LabelOutOfRange, NumericFailure
from .raster import DTYPES, LabelMap, Raster, palette_for
from .segnet import Model, forward, save_checkpoint
from .tiling import SplitManifest, TileSet, TransformSpec, apply_transform, stitch


@dataclass(frozen=True)
class TrainConfig:
    phases: tuple[tuple[float, int], ...] = ((1e-4, 30), (1e-5, 30))
    batch_size: int = 8
    seed: int = 0
    transform_enabled: bool = True
    checkpoint_every: int = 0
    ignore_class: int | None = None

    def __post_init__(self):
        phases = tuple((float(lr), int(ep)) for lr, ep in self.phases)
        object.__setattr__(self, "phases", phases)
        if not phases or any(lr <= 0 or ep < 1 for lr, ep in phases):
            raise ValueError(f"every phase needs lr > 0 and epochs >= 1, got {phases}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def total_epochs(self) -> int:
        return sum(ep for _, ep in self.phases)


@dataclass
class EpochRecord:
    epoch: int
    phase: int
    lr: float
    loss: float
    train_oa: float
    val_oa: float
    seconds: float
    order: tuple[int, ...] = ()


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "phase", "lr", "loss", "train_oa", "val_oa", "seconds"])
        for r in self.records:
            writer.writerow([r.epoch, r.phase, repr(r.lr), f"{r.loss:.8f}", f"{r.train_oa:.6f}", f"{r.val_oa:.6f}", f"{r.seconds:.3f}"])
        return buf.getvalue()


@dataclass
class TrainResult:
    model: Model
    history: TrainHistory
    best_state: dict
    best_val_oa: float
    best_epoch: int


def normalize(images: np.ndarray, dtype_code: str) -> np.ndarray:
    """Scale integer samples to [0, 1] float32."""
    return images.astype(np.float32) / np.float32(np.iinfo(DTYPES[dtype_code]).max)


def predict_batch(model: Model, images: np.ndarray) -> np.ndarray:
    """Per-pixel argmax (ties to the lowest class id) for a float NCHW batch."""
    logits = forward(model, Tensor(images)).data
    return np.argmax(logits, axis=1)


def _predict_tiles(model, tiles, dtype_code, batch_size):
    out = []
    for k in range(0, len(tiles), batch_size):
        chunk = tiles[k:k + batch_size]
        out.extend(predict_batch(model, normalize(np.stack([t.image for t in chunk]), dtype_code)))
    return out


def evaluate_tiles(model: Model, tiles, dtype_code: str, batch_size: int = 8) -> float:
    """Pooled overall accuracy of the model on the given tiles."""
    if not tiles:
        return float("nan")
    cm = None
    for t, pred in zip(tiles, _predict_tiles(model, tiles, dtype_code, batch_size)):
        m = metrics.confusion(pred, t.labels, model.config.num_classes)
        cm = m if cm is None else cm + m
    return metrics.overall_accuracy(cm)


def train(
    model: Model,
    tileset: TileSet,
    manifest: SplitManifest,
    config: TrainConfig,
    out_dir=None,
    log=None,
) -> TrainResult:
    """Run the phase schedule, reshuffling training tiles every epoch.

    Writes ``final.ckpt``, ``best.ckpt`` and ``history.csv`` to ``out_dir``
    when given. With a fixed seed the result is reproducible.
    """
    by_id = tileset.by_id()
    train_tiles = [by_id[i] for i in manifest.train_ids if i in by_id]
    val_tiles = [by_id[i] for i in manifest.validation_ids if i in by_id]
    if not train_tiles:
        raise EmptyTrainingSplit("the split manifest assigns no tiles to training")
    n_classes = model.config.num_classes
    for t in train_tiles + val_tiles:
        if t.labels.max() >= n_classes:
            raise LabelOutOfRange(f"tile {t.tile_id} has label {t.labels.max()} but the model has {n_classes} classes")
        if t.image.shape[0] != model.config.input_channels:
            raise ChannelMismatch(f"tile {t.tile_id} has {t.image.shape[0]} bands, model expects {model.config.input_channels}")

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.params, lr=config.phases[0][0])
    history = TrainHistory()
    best_state, best_oa, best_epoch = None, -1.0, 0
    out_dir = Path(out_dir) if out_dir is not None else None
    epoch = 0
    for phase, (lr, n_epochs) in enumerate(config.phases):
        optimizer.lr = lr
        for _ in range(n_epochs):
            epoch += 1
            start = time.perf_counter()
            order = rng.permutation(len(train_tiles))
            loss_sum, pixel_count, correct = 0.0, 0, 0
            for b in range(0, len(order), config.batch_size):
                batch = [train_tiles[k] for k in order[b:b + config.batch_size]]
                if config.transform_enabled:
                    batch = [apply_transform(t, TransformSpec.random(rng), int(rng.integers(2**31))) for t in batch]
                images = normalize(np.stack([t.image for t in batch]), tileset.dtype)
                targets = np.stack([t.labels for t in batch]).astype(np.int64)
                optimizer.zero_grad()
                logits = forward(model, Tensor(images))
                loss = softmax_cross_entropy(logits, targets, config.ignore_class)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericFailure(f"non-finite loss at epoch {epoch}")
                loss.backward()
                optimizer.step()
                loss_sum += value * targets.size
                pixel_count += targets.size
                correct += int((np.argmax(logits.data, axis=1) == targets).sum())
            val_oa = evaluate_tiles(model, val_tiles, tileset.dtype, config.batch_size)
            rec = EpochRecord(
                epoch, phase, lr, loss_sum / pixel_count, correct / pixel_count, val_oa, time.perf_counter() - start,
                tuple(train_tiles[k].tile_id for k in order),
            )
            history.records.append(rec)
            score = val_oa if val_oa == val_oa else rec.train_oa
            if score > best_oa:
                best_oa, best_epoch = score, epoch
                best_state = {k: v.copy() for k, v in model.state_dict().items()}
            if log is not None:
                log(f"epoch {epoch:4d} phase {phase} lr {lr:.1e} loss {rec.loss:.4f} "
                    f"train_oa {rec.train_oa:.4f} val_oa {val_oa:.4f}")
            if out_dir is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"epoch_{epoch:04d}.ckpt", {"epoch": epoch})
    if out_dir is not None:
        save_checkpoint(model, out_dir / "final.ckpt", {"epoch": epoch})
        best_model = Model(model.config, {k: Tensor(v) for k, v in best_state.items()}, model.stages)
        save_checkpoint(best_model, out_dir / "best.ckpt", {"epoch": best_epoch, "score": best_oa})
        (out_dir / "history.csv").write_text(history.to_csv())
    return TrainResult(model, history, best_state, best_oa, best_epoch)


def predict_raster(model: Model, raster: Raster, batch_size: int = 8) -> LabelMap:
    """Label every pixel of ``raster``.

    The raster is reflect-padded up to a multiple of the tile size, cut into
    disjoint tiles, classified, stitched and cropped back.
    """
    cfg = model.config
    if raster.bands != cfg.input_channels:
        raise ChannelMismatch(f"raster has {raster.bands} bands, model expects {cfg.input_channels}")
    size = cfg.tile_size
    h, w = raster.height, raster.width
    ph, pw = (-h) % size, (-w) % size
    samples = raster.samples
    if ph or pw:
        mode = "reflect" if min(h, w) > 1 else "edge"
        samples = np.pad(samples, ((0, 0), (0, ph), (0, pw)), mode=mode)
    H, W = samples.shape[1:]
    origins = [(r, c) for r in range(0, H, size) for c in range(0, W, size)]
    preds = []
    for k in range(0, len(origins), batch_size):
        chunk = origins[k:k + batch_size]
        batch = np.stack([samples[:, r:r + size, c:c + size] for r, c in chunk])
        preds.extend(predict_batch(model, normalize(batch, raster.header.dtype)))
    full = stitch([(r, c, p) for (r, c), p in zip(origins, preds)], (H, W), cfg.num_classes, strict=True)
    return LabelMap(full[:h, :w], palette_for(cfg.num_classes))
