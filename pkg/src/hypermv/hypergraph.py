"""Multi-view hypergraph construction, vertex-attention propagation, weighted
readout and the classification heads.

Vertices are the (view, window) embeddings; vertex ``(v, t)`` (``t`` is
1-based) has flat index ``v * T + t - 1``, matching the embedding rows.
Hyperedge columns of the incidence matrix follow edge-list order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .numerics import functional as F
from .numerics.tensor import DimensionError, Tensor, as_tensor

STRATEGIES = ("rule", "knn", "both")


class StructureError(ValueError):
    """Hypergraph cannot be propagated over (e.g. an isolated vertex)."""


class VertexId(NamedTuple):
    v: int
    t: int

    def flat(self, T: int) -> int:
        return self.v * T + self.t - 1

    @classmethod
    def from_flat(cls, i: int, T: int) -> "VertexId":
        return cls(i // T, i % T + 1)


@dataclass(frozen=True)
class Hyperedge:
    """A set of vertex flat indices.

    ``kind`` is ``time`` (key = view), ``view`` (key = window, 1-based),
    ``knn`` (key = centre flat index) or ``pair`` (key = ``(a, b)``; the
    ``origin`` says which pairwise rule produced it).
    """

    kind: str
    key: object
    members: tuple[int, ...]
    origin: str = ""

    def __post_init__(self):
        if len(set(self.members)) != len(self.members):
            raise ValueError(f"repeated member in {self.members}")

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, i) -> bool:
        return i in self.members


def build_rule_hyperedges(V: int, T: int) -> list[Hyperedge]:
    """One time-consistent edge per view, then one view-consistent edge per
    window; edges that would hold a single vertex are left out."""
    if V < 1 or T < 1:
        raise ValueError(f"need V, T >= 1, got V={V}, T={T}")
    edges = []
    if T >= 2:
        for v in range(V):
            edges.append(Hyperedge("time", v, tuple(v * T + t for t in range(T))))
    if V >= 2:
        for t in range(T):
            edges.append(Hyperedge("view", t + 1, tuple(v * T + t for v in range(V))))
    return edges


def pairwise_sq_distances(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return (diff * diff).sum(axis=-1)


def nearest_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """(N, k) indices of each row's k nearest other rows, by Euclidean
    distance, ties to the smaller index."""
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    N = X.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= N:
        raise ValueError(f"k={k} needs more than {k} vertices, have {N}")
    if not np.isfinite(X).all():
        raise FloatingPointError("non-finite embeddings, cannot rank neighbours")
    d2 = pairwise_sq_distances(X)
    np.fill_diagonal(d2, np.inf)
    order = np.lexsort((np.broadcast_to(np.arange(N), (N, N)), d2), axis=1)
    return order[:, :k]


def build_knn_hyperedges(X, k: int) -> list[Hyperedge]:
    """One edge per vertex: the vertex plus its k nearest neighbours."""
    nbrs = nearest_neighbors(X, k)
    return [
        Hyperedge("knn", i, (i,) + tuple(int(j) for j in row)) for i, row in enumerate(nbrs)
    ]


def _graph_rule_pairs(V: int, T: int) -> list[Hyperedge]:
    edges = []
    for v in range(V):
        for t in range(T - 1):
            a = v * T + t
            edges.append(Hyperedge("pair", (a, a + 1), (a, a + 1), "time"))
    for t in range(T):
        for v in range(V):
            for w in range(v + 1, V):
                a, b = v * T + t, w * T + t
                edges.append(Hyperedge("pair", (a, b), (a, b), "view"))
    return edges


def _graph_knn_pairs(X, k: int) -> list[Hyperedge]:
    return [
        Hyperedge("pair", (i, int(j)), (i, int(j)), "knn")
        for i, row in enumerate(nearest_neighbors(X, k))
        for j in row
    ]


def build_graph_edges(X, k: int, V: int, T: int) -> list[Hyperedge]:
    """Pairwise edges for the graph variant: temporal neighbours within a
    view, all view pairs at one window, then k nearest-neighbour pairs per
    vertex."""
    return _graph_rule_pairs(V, T) + _graph_knn_pairs(X, k)


def build_edges(X, V: int, T: int, k: int, strategy: str = "both", graph: bool = False) -> list[Hyperedge]:
    """Edge list for a construction strategy (``rule``, ``knn``, ``both``).

    KNN edges are skipped when there are not more than k vertices.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown construction strategy {strategy!r}")
    use_knn = strategy in ("knn", "both") and V * T > k
    edges = []
    if strategy in ("rule", "both"):
        edges += _graph_rule_pairs(V, T) if graph else build_rule_hyperedges(V, T)
    if use_knn:
        edges += _graph_knn_pairs(X, k) if graph else build_knn_hyperedges(X, k)
    return edges


@dataclass(frozen=True, eq=False)
class IncidenceStructure:
    H: np.ndarray  # (N, M), 0/1
    dv: np.ndarray  # (N,) vertex degrees
    de: np.ndarray  # (M,) hyperedge degrees
    edges: tuple[Hyperedge, ...] = ()

    @property
    def N(self) -> int:
        return self.H.shape[0]

    @property
    def M(self) -> int:
        return self.H.shape[1]


def build_incidence(edges: Sequence[Hyperedge], N: int) -> IncidenceStructure:
    H = np.zeros((N, len(edges)))
    for j, e in enumerate(edges):
        for i in e.members:
            if not 0 <= i < N:
                raise ValueError(f"edge {j} member {i} outside [0, {N})")
            H[i, j] = 1.0
    return IncidenceStructure(H, H.sum(axis=1), H.sum(axis=0), tuple(edges))


@dataclass
class PropagationParams:
    """Per-layer ``thetas``; ``we`` (M,) and ``wv`` (N,) are the hyperedge and
    vertex attention weights, shared across layers. ``None`` means all-ones."""

    thetas: list[Tensor]
    we: Tensor | None = None
    wv: Tensor | None = None

    @property
    def layers(self) -> int:
        return len(self.thetas)


def _degree_scalings(inc: IncidenceStructure):
    if np.any(inc.dv <= 0):
        isolated = np.flatnonzero(inc.dv <= 0).tolist()
        raise StructureError(f"isolated vertices {isolated} (zero degree)")
    if np.any(inc.de <= 0):
        raise StructureError("empty hyperedge")
    return 1.0 / np.sqrt(inc.dv), 1.0 / inc.de


def propagate(X, inc: IncidenceStructure, params: PropagationParams) -> Tensor:
    """Apply ``L`` layers of

        X <- act(Dv^-1/2 H We De^-1 H^T Wv Dv^-1/2 X Theta)

    with ReLU between layers and no activation after the last.
    """
    X = as_tensor(X)
    N, M = inc.H.shape
    if X.shape[0] != N:
        raise DimensionError(f"{X.shape[0]} feature rows for {N} vertices")
    if params.layers < 1:
        raise ValueError("need at least one propagation layer")
    dv_is, de_inv = _degree_scalings(inc)
    dt = X.dtype
    H = Tensor(inc.H, dtype=dt)
    Ht = Tensor(inc.H.T, dtype=dt)
    if params.wv is None:
        vscale = Tensor((dv_is)[:, None], dtype=dt)
    else:
        if params.wv.shape != (N,):
            raise DimensionError(f"wv has shape {params.wv.shape}, need ({N},)")
        vscale = F.reshape(F.mul(params.wv, Tensor(dv_is, dtype=dt)), (N, 1))
    if params.we is None:
        escale = Tensor(de_inv[:, None], dtype=dt)
    else:
        if params.we.shape != (M,):
            raise DimensionError(f"we has shape {params.we.shape}, need ({M},)")
        escale = F.reshape(F.mul(params.we, Tensor(de_inv, dtype=dt)), (M, 1))
    outer = Tensor(dv_is[:, None], dtype=dt)
    for layer, theta in enumerate(params.thetas):
        if X.shape[1] != theta.shape[0]:
            raise DimensionError(f"layer {layer}: features {X.shape} vs theta {theta.shape}")
        Z = F.mul(F.matmul(X, theta), vscale)
        E = F.mul(F.matmul(Ht, Z), escale)
        X = F.mul(F.matmul(H, E), outer)
        if layer < params.layers - 1:
            X = F.relu(X)
    return X


def propagation_operator(inc: IncidenceStructure, we=None, wv=None) -> np.ndarray:
    """Dense N x N matrix ``Dv^-1/2 H We De^-1 H^T Wv Dv^-1/2``."""
    dv_is, de_inv = _degree_scalings(inc)
    we = np.ones(inc.M) if we is None else np.asarray(getattr(we, "data", we))
    wv = np.ones(inc.N) if wv is None else np.asarray(getattr(wv, "data", wv))
    left = dv_is[:, None] * inc.H * (we * de_inv)[None, :]
    right = inc.H.T * (wv * dv_is)[None, :]
    return left @ right


def readout(X, weighted: bool = True) -> tuple[Tensor, np.ndarray]:
    """Graph embedding ``sum_i w_i x_i`` with ``w_i`` proportional to the L1
    norm of row i; uniform weights if every row is zero or ``weighted`` is off.

    Returns the embedding (d,) and the weights as a plain array.
    """
    X = as_tensor(X)
    N = X.shape[0]
    norms = F.sum(F.abs(X), axis=1)
    total = float(norms.data.sum())
    if not weighted or total == 0.0:
        omega = Tensor(np.full(N, 1.0 / N), dtype=X.dtype)
    else:
        omega = F.div(norms, F.sum(norms))
    xg = F.reshape(F.matmul(F.reshape(omega, (1, N)), X), (X.shape[1],))
    return xg, np.array(omega.data)


def classify(xg, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine head: (d,) or (B, d) -> logits."""
    xg = as_tensor(xg)
    single = xg.ndim == 1
    h = F.reshape(xg, (1, -1)) if single else xg
    if h.shape[1] != weight.shape[0]:
        raise DimensionError(f"head expects {weight.shape[0]} features, got {h.shape[1]}")
    out = F.matmul(h, weight)
    if bias is not None:
        out = F.add(out, bias)
    return F.reshape(out, (weight.shape[1],)) if single else out


def baseline_features(X, V: int, T: int) -> Tensor:
    """Temporal mean per view, views concatenated: (V*T, d) -> (V*d,)."""
    X = as_tensor(X)
    if X.shape[0] != V * T:
        raise DimensionError(f"{X.shape[0]} rows, expected V*T = {V * T}")
    d = X.shape[1]
    per_view = F.mean(F.reshape(X, (V, T, d)), axis=1)
    return F.reshape(per_view, (V * d,))


def baseline_forward(X, V: int, T: int, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Multi-view concatenation baseline: no propagation, no attention."""
    return classify(baseline_features(X, V, T), weight, bias)


def edge_group(edge: Hyperedge, T: int) -> tuple:
    """Grouping key used to carry trained attention weights over to a vertex
    layout with a different number of views: same edge family, same window."""
    if edge.kind == "time":
        return ("time",)
    if edge.kind == "view":
        return ("view", edge.key)
    if edge.kind == "knn":
        return ("knn", edge.key % T)
    a = edge.members[0]
    return ("pair", edge.origin, a % T)


def transfer_matrix(src_keys: Sequence[tuple], dst_keys: Sequence[tuple]) -> np.ndarray:
    """Row-stochastic (len(dst), len(src)) matrix averaging the source
    entries that share each destination key (all sources when none match)."""
    groups: dict[tuple, list[int]] = {}
    for j, key in enumerate(src_keys):
        groups.setdefault(key, []).append(j)
    A = np.zeros((len(dst_keys), len(src_keys)))
    for i, key in enumerate(dst_keys):
        hit = groups.get(key, range(len(src_keys)))
        if len(hit):
            A[i, list(hit)] = 1.0 / len(hit)
    return A


def describe(inc: IncidenceStructure, T: int) -> dict:
    """JSON-ready summary of a hypergraph."""
    return {
        "N": inc.N,
        "M": inc.M,
        "H_shape": list(inc.H.shape),
        "dv": inc.dv.astype(int).tolist(),
        "de": inc.de.astype(int).tolist(),
        "edges": [
            {
                "kind": e.kind if not e.origin else f"{e.kind}:{e.origin}",
                "key": list(e.key) if isinstance(e.key, tuple) else e.key,
                "members": [list(VertexId.from_flat(i, T)) for i in e.members],
            }
            for e in inc.edges
        ],
    }
