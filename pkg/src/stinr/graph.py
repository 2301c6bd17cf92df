"""k-NN spot graph, GCN normalization, and embedding smoothness diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DataError


@dataclass(frozen=True)
class CellGraph:
    """k-NN graph over spots; k counts the spot itself.

    neighbor_ids[i] lists i first, then the k-1 nearest other spots by
    Euclidean distance (ties broken by lower index). norm_adj is the
    symmetric self-loop-normalized adjacency D^-1/2 (A+I) D^-1/2 built on
    the symmetrized union of the directed k-NN links.
    """

    n: int
    k: int
    neighbor_ids: np.ndarray
    norm_adj: sp.csr_matrix

    def neighbor_sets(self) -> sp.csr_matrix:
        """Symmetrized 0/1 adjacency without self-loops."""
        adj = _directed_adjacency(self.neighbor_ids)
        sym = adj.maximum(adj.T)
        sym.setdiag(0)
        sym.eliminate_zeros()
        return sym.tocsr()

    def write_edge_list(self, path) -> None:
        """Dump norm_adj as 'i j weight' lines for inspection."""
        coo = self.norm_adj.tocoo()
        with open(path, "w") as fh:
            for i, j, w in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i} {j} {w:.9g}\n")


def _directed_adjacency(neighbor_ids: np.ndarray) -> sp.csr_matrix:
    n, k = neighbor_ids.shape
    rows = np.repeat(np.arange(n), k)
    cols = neighbor_ids.ravel()
    data = np.ones(n * k)
    adj = sp.coo_matrix((data, (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.data[:] = 1.0
    return adj.tocsr()


def build_knn(coords: np.ndarray, k: int) -> CellGraph:
    """Exact k-NN by Euclidean distance; self always first, ties by lower index."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if not np.isfinite(coords).all():
        raise DataError("non-finite coordinates")
    if not 1 <= k <= n:
        raise DataError(f"k={k} out of range for n={n}")

    sq = (coords**2).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * coords @ coords.T
    np.maximum(d2, 0.0, out=d2)
    # exclude self from the candidate ranking; self is prepended below
    np.fill_diagonal(d2, np.inf)
    neighbor_ids = np.empty((n, k), dtype=np.int64)
    neighbor_ids[:, 0] = np.arange(n)
    if k > 1:
        # stable sort leaves equal distances in index order (tie rule)
        order = np.argsort(d2, axis=1, kind="stable")
        neighbor_ids[:, 1:] = order[:, : k - 1]
    graph = CellGraph(n=n, k=k, neighbor_ids=neighbor_ids, norm_adj=None)
    norm = normalized_adjacency(graph)
    return CellGraph(n=n, k=k, neighbor_ids=neighbor_ids, norm_adj=norm)


def normalized_adjacency(graph: CellGraph) -> sp.csr_matrix:
    """D^-1/2 (A_sym + I) D^-1/2 over the symmetrized 0/1 k-NN adjacency."""
    # directed links already carry self-loops (self is its own neighbor)
    adj = _directed_adjacency(graph.neighbor_ids)
    sym = adj.maximum(adj.T).tocsr()
    sym.data[:] = 1.0
    deg = np.asarray(sym.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return (d @ sym @ d).tocsr()


def graph_total_variation(
    graph: CellGraph, Z: np.ndarray, squared: bool = True
) -> tuple[np.ndarray, float]:
    """Aggregate edge-wise embedding variation per vertex.

    per_vertex[i] = sum over neighbors j != i of ||Z[i]-Z[j]||^2
    (or the unsquared norm with squared=False). Neighborhoods come from the
    symmetrized edge set, so every edge contributes to both endpoints.
    """
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] != graph.n:
        raise DataError(f"Z has {Z.shape[0]} rows for {graph.n} spots")
    sym = graph.neighbor_sets().tocoo()
    diff = Z[sym.row] - Z[sym.col]
    edge_val = (diff**2).sum(axis=1)
    if not squared:
        edge_val = np.sqrt(edge_val)
    per_vertex = np.zeros(graph.n)
    np.add.at(per_vertex, sym.row, edge_val)
    return per_vertex, float(per_vertex.sum())


def channelwise_variance(Z: np.ndarray) -> np.ndarray:
    """Population variance of every embedding channel."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[0] < 2:
        raise DataError("channelwise_variance needs at least 2 rows")
    return Z.var(axis=0)
