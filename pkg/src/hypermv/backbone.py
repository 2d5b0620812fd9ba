"""Shared convolutional feature extractor.

Every (view, window) event frame goes through the same stack of
3x3 / stride-2 convolutions with ReLU, followed by global average pooling,
giving one embedding row per frame. Rows are ordered view-major:
``row = v * T + (t - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .events import FrameVolume, normalize_volume
from .numerics import functional as F
from .numerics.tensor import DimensionError, Tensor


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, ...] = (8, 16, 32, 64)
    kernel: int = 3
    stride: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise ValueError("backbone needs at least one block")

    @property
    def blocks(self) -> int:
        return len(self.channels)

    @property
    def dim(self) -> int:
        return self.channels[-1]

    @property
    def padding(self) -> int:
        return self.kernel // 2

    def output_size(self, size: int) -> int:
        for _ in self.channels:
            size = (size + 2 * self.padding - self.kernel) // self.stride + 1
        return size


def init_backbone(cfg: BackboneConfig, seed: int, dtype=np.float64) -> dict[str, Tensor]:
    """Kaiming-uniform kernels (bound sqrt(6 / fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    cin = 1
    for i, cout in enumerate(cfg.channels):
        fan_in = cin * cfg.kernel * cfg.kernel
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(cout, cin, cfg.kernel, cfg.kernel))
        params[f"backbone.conv{i}.weight"] = Tensor(w, requires_grad=True, dtype=dtype)
        params[f"backbone.conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True, dtype=dtype)
        cin = cout
    return params


def embed_frames(frames: Tensor, cfg: BackboneConfig, params: Mapping[str, Tensor]) -> Tensor:
    """(B, Y, X) frames -> (B, d) embeddings."""
    if frames.ndim != 3:
        raise DimensionError(f"expected (frames, Y, X), got {frames.shape}")
    B, Y, X = frames.shape
    if min(cfg.output_size(Y), cfg.output_size(X)) < 1:
        raise DimensionError(f"{X}x{Y} frames too small for {cfg.blocks} stride-{cfg.stride} blocks")
    h = F.reshape(frames, (B, 1, Y, X))
    for i in range(cfg.blocks):
        h = F.conv2d(
            h,
            params[f"backbone.conv{i}.weight"],
            params[f"backbone.conv{i}.bias"],
            stride=cfg.stride,
            padding=cfg.padding,
        )
        h = F.relu(h)
    return F.global_avg_pool(h)


def stack_volumes(volumes: Sequence[FrameVolume | np.ndarray], normalize: bool = True) -> np.ndarray:
    """V volumes -> (V*T, Y, X) array in vertex order."""
    arrays = []
    for vol in volumes:
        arr = normalize_volume(vol) if normalize else np.asarray(getattr(vol, "frames", vol), dtype=np.float64)
        arrays.append(arr)
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"views disagree on (T, Y, X): {sorted(shapes)}")
    return np.concatenate(arrays, axis=0)


def extract(
    volumes: Sequence[FrameVolume | np.ndarray],
    cfg: BackboneConfig,
    params: Mapping[str, Tensor],
    normalize: bool = True,
) -> Tensor:
    """Embedding matrix of shape (V*T, d) for one multi-view recording."""
    frames = stack_volumes(volumes, normalize=normalize)
    dtype = params["backbone.conv0.weight"].dtype
    return embed_frames(Tensor(frames, dtype=dtype), cfg, params)
