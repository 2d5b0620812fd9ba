"""The end-to-end classifier: shared backbone, hypergraph (or baseline)
fusion, readout and linear head, for every model variant."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import hypergraph as hg
from .backbone import embed_frames, init_backbone
from .config import RunConfig
from .events import ViewStream, normalize_volume, render_volume
from .numerics import functional as F
from .numerics.checkpoint import load_params, save_params
from .numerics.tensor import DimensionError, Tensor

GRAPH_VARIANTS = ("hypermv", "hypermv-gnn")


@dataclass
class ForwardTrace:
    """Per-sample structures from the last forward pass (for inspection)."""

    incidences: list = field(default_factory=list)
    omegas: list = field(default_factory=list)
    embeddings: list = field(default_factory=list)


def _glorot(rng, shape, dtype) -> Tensor:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, dtype=dtype)


class HyperMVModel:
    """Parameters plus forward pass for one run configuration.

    ``views`` is the number of views the model is trained on; inputs with a
    different view count (held-out single views in cross-view evaluation)
    reuse the trained attention weights averaged per window (see
    :func:`hypergraph.transfer_matrix`).
    """

    def __init__(self, config: RunConfig, num_classes: int, views: int):
        if num_classes < 2:
            raise ValueError("need at least 2 classes")
        self.config = config
        self.num_classes = num_classes
        self.views = 1 if config.variant == "single-view-baseline" else views
        self.dtype = np.dtype(config.dtype)
        self.params: dict[str, Tensor] = {}
        self._init_params()

    # ------------------------------------------------------------------ params
    def _init_params(self) -> None:
        cfg = self.config
        d = cfg.backbone.dim
        self.params.update(init_backbone(cfg.backbone, cfg.seed, dtype=self.dtype))
        rng = np.random.default_rng([cfg.seed, 1])
        if cfg.variant in GRAPH_VARIANTS:
            for layer in range(cfg.L):
                self.params[f"prop.theta{layer}"] = _glorot(rng, (d, d), self.dtype)
            if cfg.attention:
                edges = self._train_edges()
                self.params["attn.we"] = Tensor(np.ones(len(edges)), requires_grad=True, dtype=self.dtype)
                self.params["attn.wv"] = Tensor(np.ones(self.N), requires_grad=True, dtype=self.dtype)
        head_in = d * self.views if cfg.variant == "multi-view-baseline" else d
        self.params["head.weight"] = _glorot(rng, (head_in, self.num_classes), self.dtype)
        self.params["head.bias"] = Tensor(np.zeros(self.num_classes), requires_grad=True, dtype=self.dtype)

    @property
    def N(self) -> int:
        return self.views * self.config.T

    def _edges_for(self, X: np.ndarray, V: int) -> list[hg.Hyperedge]:
        cfg = self.config
        return hg.build_edges(X, V, cfg.T, cfg.k, cfg.strategy, graph=cfg.variant == "hypermv-gnn")

    def _train_edges(self) -> list[hg.Hyperedge]:
        # KNN edge groups depend only on the centre vertex, so any X will do
        return self._edges_for(np.zeros((self.N, 1)), self.views)

    def trainable(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.params.items() if p.requires_grad}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.astype(np.float64) for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data = state[k].astype(self.dtype)

    # ----------------------------------------------------------------- forward
    def _attention(self, edges: list[hg.Hyperedge], V: int):
        if not self.config.attention:
            return None, None
        we, wv = self.params["attn.we"], self.params["attn.wv"]
        T = self.config.T
        if V == self.views and len(edges) == we.shape[0]:
            return we, wv
        src_e = [hg.edge_group(e, T) for e in self._train_edges()]
        dst_e = [hg.edge_group(e, T) for e in edges]
        Ae = Tensor(hg.transfer_matrix(src_e, dst_e), dtype=self.dtype)
        Av = Tensor(hg.transfer_matrix([(i % T,) for i in range(self.N)], [(i % T,) for i in range(V * T)]), dtype=self.dtype)
        we_new = F.reshape(F.matmul(Ae, F.reshape(we, (-1, 1))), (len(edges),))
        wv_new = F.reshape(F.matmul(Av, F.reshape(wv, (-1, 1))), (V * T,))
        return we_new, wv_new

    def fuse(self, X: Tensor, V: int, trace: ForwardTrace | None = None) -> Tensor:
        """Vertex embeddings (V*T, d) of one sample -> graph embedding."""
        cfg = self.config
        T = cfg.T
        if cfg.variant == "single-view-baseline":
            return F.mean(X, axis=0)
        if cfg.variant == "multi-view-baseline":
            feats = hg.baseline_features(X, V, T)
            if V != self.views:
                d = X.shape[1]
                pooled = F.mean(F.reshape(feats, (V, d)), axis=0)
                feats = F.concat([pooled] * self.views)
            return feats
        edges = self._edges_for(X.data, V)
        inc = hg.build_incidence(edges, V * T)
        we, wv = self._attention(edges, V)
        thetas = [self.params[f"prop.theta{l}"] for l in range(cfg.L)]
        XL = hg.propagate(X, inc, hg.PropagationParams(thetas, we, wv))
        xg, omega = hg.readout(XL, weighted=cfg.attention)
        if trace is not None:
            trace.incidences.append(inc)
            trace.omegas.append(omega)
        return xg

    def forward(self, inputs: Sequence[np.ndarray], trace: ForwardTrace | None = None) -> Tensor:
        """Batch of (V_i, T, Y, X) normalised frame volumes -> (B, C) logits."""
        if not inputs:
            raise ValueError("empty batch")
        T = self.config.T
        shapes = {np.shape(x)[1:] for x in inputs}
        if len(shapes) != 1:
            raise DimensionError(f"inputs disagree on (T, Y, X): {sorted(shapes)}")
        _, Tin, Y, X = np.shape(inputs[0])
        if Tin != T:
            raise DimensionError(f"inputs have {Tin} windows, config T={T}")
        views = [int(np.shape(x)[0]) for x in inputs]
        frames = np.concatenate([np.asarray(x).reshape(-1, Y, X) for x in inputs])
        emb = embed_frames(Tensor(frames, dtype=self.dtype), self.config.backbone, self.params)
        feats = []
        start = 0
        for V in views:
            Xs = F.index(emb, slice(start, start + V * T))
            start += V * T
            if trace is not None:
                trace.embeddings.append(np.array(Xs.data))
            feats.append(self.fuse(Xs, V, trace))
        G = F.stack(feats)
        return hg.classify(G, self.params["head.weight"], self.params["head.bias"])

    # ---------------------------------------------------------------- storage
    def save(self, folder: str | Path, name: str = "model") -> Path:
        folder = Path(folder)
        folder.mkdir(parents=True, exist_ok=True)
        save_params(self.state_dict(), folder / f"{name}.hmv")
        meta = {"config": self.config.to_json(), "num_classes": self.num_classes, "views": self.views}
        (folder / f"{name}.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
        return folder / f"{name}.hmv"

    @classmethod
    def load(cls, checkpoint: str | Path) -> "HyperMVModel":
        """Load ``<name>.hmv`` with its ``<name>.json`` sidecar."""
        checkpoint = Path(checkpoint)
        meta = json.loads(checkpoint.with_suffix(".json").read_text(encoding="utf-8"))
        model = cls(RunConfig.from_json(meta["config"]), meta["num_classes"], meta["views"])
        model.load_state_dict(load_params(checkpoint))
        return model


def recording_volumes(streams: Sequence[ViewStream], T: int) -> np.ndarray:
    """Segment, render and normalise each view: (V, T, Y, X)."""
    return np.stack([normalize_volume(render_volume(s, T)) for s in streams])


def forward_pass(streams: Sequence[ViewStream], model: HyperMVModel) -> Tensor:
    """Logits (C,) for one recording given as its per-view event streams."""
    vols = recording_volumes(streams, model.config.T)
    return F.reshape(model.forward([vols]), (model.num_classes,))
