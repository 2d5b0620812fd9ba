"""Training loop, evaluation and Top-m metrics."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import RunConfig
from .dataset import DatasetSplit, RecordingManifest, Sample, load_volumes, scan_dataset
from .model import HyperMVModel
from .numerics import AdamState, Tape, adam_step, backward, lr_schedule
from .numerics import functional as F
from .numerics.tensor import Tensor

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


def topk_accuracy(logits: np.ndarray, labels: Sequence[int], ks: Iterable[int] = (1, 3, 5)) -> dict[int, float]:
    """Fraction of rows whose label ranks among the k largest logits.

    Rank counts classes with a larger logit plus equal-logit classes with a
    smaller index, so ties go to the smaller class index.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or len(labels) != len(logits):
        raise ValueError(f"logits {logits.shape} vs {len(labels)} labels")
    C = logits.shape[1]
    if len(labels) and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label outside [0, {C})")
    if len(labels) == 0:
        return {k: 0.0 for k in ks}
    true = logits[np.arange(len(labels)), labels][:, None]
    idx = np.arange(C)[None, :]
    rank = ((logits > true) | ((logits == true) & (idx < labels[:, None]))).sum(axis=1)
    return {k: float(np.mean(rank < k)) for k in ks}


class VolumeCache:
    """Rendered, normalised (V, T, Y, X) volumes per recording, loaded once."""

    def __init__(self, root: str | Path, manifests: Sequence[RecordingManifest], T: int):
        self.root = Path(root)
        self.T = T
        self.manifests = {m.recording_id: m for m in manifests}
        self._vols: dict[str, np.ndarray] = {}

    def get(self, sample: Sample) -> np.ndarray:
        vol = self._vols.get(sample.recording_id)
        if vol is None:
            vol = load_volumes(self.manifests[sample.recording_id], self.root, self.T)
            self._vols[sample.recording_id] = vol
        return vol[list(sample.views)]

    def preload(self, samples: Iterable[Sample], workers: int = 1) -> None:
        """Render every recording the samples touch. Rendering is pure, so the
        worker count does not change the result."""
        ids = sorted({s.recording_id for s in samples} - set(self._vols))

        def load(rid):
            return load_volumes(self.manifests[rid], self.root, self.T)

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                vols = list(pool.map(load, ids))
        else:
            vols = [load(r) for r in ids]
        self._vols.update(zip(ids, vols))


def expand_single_view(samples: Sequence[Sample]) -> list[Sample]:
    return [Sample(s.recording_id, (v,), s.label) for s in samples for v in s.views]


def prepare_samples(samples: Sequence[Sample], config: RunConfig) -> list[Sample]:
    if config.variant == "single-view-baseline":
        return expand_single_view(samples)
    return list(samples)


def predict(model: HyperMVModel, inputs: Sequence[np.ndarray], batch_size: int = 32) -> np.ndarray:
    out = []
    for i in range(0, len(inputs), batch_size):
        out.append(model.forward(inputs[i:i + batch_size]).data)
    if not out:
        return np.zeros((0, model.num_classes))
    return np.concatenate(out).astype(np.float64)


def evaluate_model(
    model: HyperMVModel, samples: Sequence[Sample], cache: VolumeCache, batch_size: int = 32
) -> dict:
    samples = prepare_samples(samples, model.config)
    labels = [s.label for s in samples]
    logits = predict(model, [cache.get(s) for s in samples], batch_size)
    acc = topk_accuracy(logits, labels)
    loss = float(F.cross_entropy(Tensor(logits), labels).data) if samples else float("nan")
    return {"n": len(samples), "loss": loss, "top1": acc[1], "top3": acc[3], "top5": acc[5]}


@dataclass
class TrainResult:
    checkpoint: Path
    metrics: list[dict]
    model: HyperMVModel
    best_epoch: int


def train(
    config: RunConfig,
    split: DatasetSplit,
    data_root: str | Path,
    out_dir: str | Path,
    manifests: Sequence[RecordingManifest] | None = None,
    cache: VolumeCache | None = None,
    on_epoch: Callable[[dict], None] | None = None,
    workers: int = 1,
) -> TrainResult:
    """Fit a model on ``split.train`` and keep the best-validation checkpoint
    (highest Top-1, ties to lower validation loss).

    Writes ``metrics.jsonl`` (one JSON object per epoch), ``model.hmv`` and
    ``model.json`` into ``out_dir``. Without validation samples the last
    epoch is kept.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cache is None:
        manifests = list(manifests) if manifests is not None else scan_dataset(data_root)
        cache = VolumeCache(data_root, manifests, config.T)
    all_manifests = list(cache.manifests.values())
    if not all_manifests:
        raise ValueError(f"no recordings under {data_root}")
    num_classes = max(m.label for m in all_manifests) + 1
    cache.preload(list(split.train) + list(split.val), workers)
    train_samples = prepare_samples(split.train, config)
    if not train_samples:
        raise ValueError("empty training partition")
    views = len(train_samples[0].views)
    model = HyperMVModel(config, num_classes, views)
    params = model.trainable()
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 2])
    inputs = [cache.get(s) for s in train_samples]
    labels = np.array([s.label for s in train_samples])

    metrics: list[dict] = []
    best, best_epoch = (-math.inf, -math.inf), 0
    best_state = model.state_dict()
    with open(out / "metrics.jsonl", "w", encoding="utf-8") as log_fh:
        for epoch in range(config.epochs):
            state.lr = lr_schedule(epoch, config.lr, config.gamma, config.decay_step)
            order = rng.permutation(len(train_samples))
            total_loss = 0.0
            correct = 0
            for b in range(0, len(order), config.batch_size):
                idx = order[b:b + config.batch_size]
                where = f"epoch {epoch + 1}, batch {b // config.batch_size}"
                try:
                    with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
                        logits = model.forward([inputs[i] for i in idx])
                        loss = F.cross_entropy(logits, labels[idx])
                except FloatingPointError as exc:
                    raise DivergenceError(f"{exc} at {where}") from exc
                value = float(loss.data)
                if not math.isfinite(value):
                    raise DivergenceError(f"non-finite loss {value} at {where}")
                grads = backward(tape, loss, list(params.values()))
                adam_step(params, dict(zip(params, grads)), state)
                total_loss += value * len(idx)
                correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
            record = {
                "epoch": epoch + 1,
                "lr": state.lr,
                "train_loss": total_loss / len(order),
                "train_top1": correct / len(order),
            }
            if split.val:
                val = evaluate_model(model, split.val, cache)
                record["val_loss"] = val["loss"]
                record["val_top1"] = val["top1"]
                score = (val["top1"], -val["loss"])
            else:
                score = (epoch, 0.0)
            if score > best:
                best, best_epoch = score, epoch + 1
                best_state = model.state_dict()
            metrics.append(record)
            log_fh.write(json.dumps(record) + "\n")
            log_fh.flush()
            log.info("epoch %d %s", epoch + 1, record)
            if on_epoch is not None:
                on_epoch(record)
    model.load_state_dict(best_state)
    ckpt = model.save(out)
    return TrainResult(ckpt, metrics, model, best_epoch)


def evaluate(checkpoint: str | Path, split: DatasetSplit, partition: str, data_root: str | Path) -> dict:
    model = HyperMVModel.load(checkpoint)
    cache = VolumeCache(data_root, scan_dataset(data_root), model.config.T)
    return evaluate_model(model, split.partition(partition), cache)
