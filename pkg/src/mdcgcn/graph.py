"""Face-adjacency graphs, their aggregation operators and block-diagonal batches."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, ShapeError

SYMMETRIC = "symmetric"
NEIGHBOR_SUM = "sum"
OPERATORS = (SYMMETRIC, NEIGHBOR_SUM)


@dataclass(frozen=True, eq=False)
class SparseOp:
    """Square CSR matrix used as the graph aggregation operator."""

    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def n(self):
        return self.indptr.shape[0] - 1

    @property
    def nnz(self):
        return self.indices.shape[0]

    def matmul(self, x):
        if x.shape[0] != self.n:
            raise ShapeError(f"operator has {self.n} nodes but features have {x.shape[0]} rows")
        return kernels.csr_spmm(self.indptr, self.indices, self.data, x)

    def transpose(self):
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        return csr_from_coo(self.indices, rows, self.data, self.n)

    def todense(self):
        out = np.zeros((self.n, self.n))
        rows = np.repeat(np.arange(self.n), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def row(self, i):
        s, e = self.indptr[i], self.indptr[i + 1]
        return self.indices[s:e], self.data[s:e]


def csr_from_coo(rows, cols, vals, n):
    """Build a CSR operator with entries sorted by ``(row, col)``."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.lexsort((cols, rows))
    counts = np.bincount(rows, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return SparseOp(indptr, cols[order], np.asarray(vals, dtype=np.float64)[order])


@dataclass(frozen=True, eq=False)
class FaceGraph:
    """One node per mesh face, one undirected edge per interior mesh edge.

    ``edges`` are ``(i, j)`` pairs with ``i < j``, sorted.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray = None
    labels: object = None
    name: str = ""

    def degrees(self):
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges.reshape(-1), 1)
        return deg


def mesh_to_graph(mesh, edge_table, features=None, labels=None):
    ef = edge_table.edge_faces
    interior = ef[:, 1] >= 0
    pairs = np.sort(ef[interior], axis=1)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    if features is not None:
        features = np.asarray(features)
        if features.shape[0] != mesh.num_faces:
            raise ShapeError(f"{features.shape[0]} feature rows for {mesh.num_faces} faces")
    return FaceGraph(mesh.num_faces, pairs, features, labels, mesh.name)


def normalized_operator(graph, kind=SYMMETRIC):
    """Aggregation weights for a graph.

    ``symmetric``: ``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree of ``A + I``.
    ``sum``: the plain adjacency ``A`` (unweighted neighbor sum, no self term).
    """
    n = graph.num_nodes
    i, j = graph.edges[:, 0], graph.edges[:, 1]
    if kind == NEIGHBOR_SUM:
        rows = np.concatenate([i, j])
        cols = np.concatenate([j, i])
        return csr_from_coo(rows, cols, np.ones(rows.shape[0]), n)
    if kind != SYMMETRIC:
        raise ConfigError(f"unknown operator kind {kind!r}; expected one of {OPERATORS}")
    loops = np.arange(n)
    rows = np.concatenate([i, j, loops])
    cols = np.concatenate([j, i, loops])
    deg = np.bincount(rows, minlength=n).astype(np.float64)
    # one rounding per weight: 1/sqrt(d_i d_j) is exact for the square degree products of small cases
    return csr_from_coo(rows, cols, 1.0 / np.sqrt(deg[rows] * deg[cols]), n)


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """Disjoint union of graphs.

    ``offsets`` has ``G + 1`` entries; graph ``g`` owns node rows
    ``offsets[g]:offsets[g + 1]``. ``labels`` holds one class id per graph
    (classification) or one per node (segmentation).
    """

    features: np.ndarray
    offsets: np.ndarray
    op: SparseOp
    labels: np.ndarray = None
    names: tuple = ()

    @property
    def num_graphs(self):
        return self.offsets.shape[0] - 1

    @property
    def num_nodes(self):
        return int(self.offsets[-1])

    def ranges(self):
        return [(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.offsets[1:])]


def batch_graphs(graphs, kind=SYMMETRIC, ops=None):
    """Block-diagonal batch. ``ops`` may supply precomputed per-graph operators."""
    if not graphs:
        raise ShapeError("cannot batch an empty list of graphs")
    widths = {None if g.features is None else g.features.shape[1] for g in graphs}
    if len(widths) != 1:
        raise ShapeError(f"graphs have mismatched feature widths {sorted(widths, key=str)}")
    if ops is None:
        ops = [normalized_operator(g, kind) for g in graphs]
    sizes = np.array([g.num_nodes for g in graphs], dtype=np.int64)
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])

    indptr = [np.zeros(1, dtype=np.int64)]
    nnz = 0
    for op in ops:
        indptr.append(op.indptr[1:] + nnz)
        nnz += op.nnz
    indices = np.concatenate([op.indices + off for op, off in zip(ops, offsets[:-1])])
    data = np.concatenate([op.data for op in ops])
    op = SparseOp(np.concatenate(indptr), indices, data)

    features = None
    if widths != {None}:
        features = np.concatenate([g.features for g in graphs], axis=0)
    labels = None
    if all(g.labels is not None for g in graphs):
        per_node = [np.ndim(g.labels) > 0 for g in graphs]
        if all(per_node):
            labels = np.concatenate([np.asarray(g.labels, dtype=np.int64) for g in graphs])
        elif not any(per_node):
            labels = np.array([int(g.labels) for g in graphs], dtype=np.int64)
        else:
            raise ShapeError("cannot mix graph-level and node-level labels in one batch")
    return GraphBatch(features, offsets, op, labels, tuple(g.name for g in graphs))


def unbatch(batch, node_values=None):
    """Split per-node rows (default: the batch features) back into per-graph arrays."""
    values = batch.features if node_values is None else node_values
    return [values[a:b] for a, b in batch.ranges()]
