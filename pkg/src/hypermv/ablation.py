"""Ablation grid: train one model per (grid cell, seed), report test Top-1."""

from __future__ import annotations

import itertools
import json
import tempfile
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import RunConfig
from .dataset import DatasetSplit, scan_dataset
from .training import VolumeCache, evaluate_model, train

FULL_GRID = {
    "strategy": ["rule", "knn", "both"],
    "attention": [True, False],
    "L": [1, 2, 3, 4, 5],
    "k": [2, 3, 4, 5, 6],
}


def grid_cells(grid: Mapping[str, Sequence]) -> list[dict]:
    """Cartesian product of the grid axes, in key order."""
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def run_ablation(
    base: RunConfig,
    grid: Mapping[str, Sequence],
    seeds: Sequence[int],
    split: DatasetSplit,
    data_root: str | Path,
    cache: VolumeCache | None = None,
    out_dir: str | Path | None = None,
    partition: str = "test",
    on_run: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Every grid axis must name a RunConfig field. Returns one row per cell
    with the per-seed Top-1 list, its mean and (population) std."""
    for key in grid:
        if key not in base.to_json():
            raise ValueError(f"grid axis {key!r} is not a run-config field")
    if not seeds:
        raise ValueError("need at least one seed")
    cache = cache or VolumeCache(data_root, scan_dataset(data_root), base.T)
    caches = {cache.T: cache}  # a T axis needs one cache per window count
    rows = []
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(out_dir) if out_dir is not None else Path(tmp)
        for ci, cell in enumerate(grid_cells(grid)):
            scores = []
            for seed in seeds:
                cfg = base.with_(seed=seed, **cell)
                c = caches.setdefault(cfg.T, VolumeCache(data_root, list(cache.manifests.values()), cfg.T))
                res = train(cfg, split, data_root, root / f"cell{ci:03d}_seed{seed}", cache=c)
                top1 = evaluate_model(res.model, split.partition(partition), c)["top1"]
                scores.append(top1)
                if on_run is not None:
                    on_run({**cell, "seed": seed, "top1": top1})
            rows.append({
                **cell,
                "seeds": list(seeds),
                "top1": scores,
                "top1_mean": float(np.mean(scores)),
                "top1_std": float(np.std(scores)),
            })
    return rows


def format_table(rows: Sequence[dict], fmt: str = "text") -> str:
    if fmt == "json":
        return json.dumps(list(rows), indent=1)
    if fmt != "text":
        raise ValueError(f"unknown table format {fmt!r}")
    if not rows:
        return ""
    keys = [k for k in rows[0] if k not in ("seeds", "top1", "top1_mean", "top1_std")]
    header = keys + ["top1 (mean +- std)", "n"]
    body = [
        [str(r[k]) for k in keys] + [f"{r['top1_mean']:.4f} +- {r['top1_std']:.4f}", str(len(r["top1"]))]
        for r in rows
    ]
    widths = [max(len(line[i]) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() for line in [header] + body]
    return "\n".join(lines)
