"""Independent reference implementations used across the test suite."""

import numpy as np

from hypermv.hypergraph import Hyperedge


def random_hypergraph(rng, N_max=20, M_max=12):
    """Edges (cardinality >= 2) covering every vertex at least once."""
    N = int(rng.integers(2, N_max + 1))
    M = int(rng.integers(1, M_max + 1))
    members = [set(rng.choice(N, size=int(rng.integers(2, N + 1)), replace=False).tolist()) for _ in range(M)]
    for i in range(N):
        if not any(i in m for m in members):
            members[int(rng.integers(M))].add(i)
    return N, [Hyperedge("knn", j, tuple(sorted(m))) for j, m in enumerate(members)]


def naive_propagate(X, edges, N, thetas, we=None, wv=None):
    """Vertex -> hyperedge -> vertex message passing with explicit loops."""
    M = len(edges)
    we = np.ones(M) if we is None else we
    wv = np.ones(N) if wv is None else wv
    dv = np.zeros(N)
    for e in edges:
        for i in e.members:
            dv[i] += 1
    X = np.array(X, dtype=float)
    for layer, theta in enumerate(thetas):
        Y = X @ theta
        msgs = []
        for e in edges:
            acc = np.zeros(Y.shape[1])
            for i in e.members:
                acc += wv[i] * Y[i] / np.sqrt(dv[i])
            msgs.append(acc / len(e.members))
        out = np.zeros_like(Y)
        for i in range(N):
            for j, e in enumerate(edges):
                if i in e.members:
                    out[i] += we[j] * msgs[j]
            out[i] /= np.sqrt(dv[i])
        X = np.maximum(out, 0) if layer < len(thetas) - 1 else out
    return X


def vanilla_hgnn(X, H, thetas):
    """Dense Dv^-1/2 H De^-1 H^T Dv^-1/2 X Theta with plain diagonal matrices."""
    Dv = np.diag(H.sum(axis=1) ** -0.5)
    De = np.diag(1.0 / H.sum(axis=0))
    G = Dv @ H @ De @ H.T @ Dv
    for layer, theta in enumerate(thetas):
        X = G @ X @ theta
        if layer < len(thetas) - 1:
            X = np.maximum(X, 0)
    return X


def brute_force_neighbors(X, k):
    """k nearest other rows per row via a full sort of (distance, index)."""
    X = np.asarray(X, dtype=float)
    out = []
    for i in range(len(X)):
        cands = sorted(
            (float(np.sqrt(((X[i] - X[j]) ** 2).sum())), j) for j in range(len(X)) if j != i
        )
        out.append([j for _, j in cands[:k]])
    return out


def naive_volume(stream, T):
    """Per-event accumulation with an explicit interval scan per window."""
    vol = np.zeros((T, stream.height, stream.width), dtype=np.int64)
    span = stream.t_end - stream.t_begin
    for e in stream.events():
        if span == 0:
            w = 0
        else:
            w = None
            for k in range(T):
                lo = stream.t_begin + span * k / T
                hi = stream.t_begin + span * (k + 1) / T
                if lo <= e.t < hi or (k == T - 1 and e.t == hi):
                    w = k
                    break
        vol[w, e.y, e.x] += e.p
    return vol
