"""Typed social graphs with monthly edge validity, and per-node statistics
(degree, degree centrality, triangles, PageRank, HITS, articulation
points) on a monthly slice."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp

PERSON = "person"
COMPANY = "company"

# Edge types whose semantics carry no direction; they contribute both
# directions to the directed simple collapse used by PageRank/HITS.
UNDIRECTED_EDGE_TYPES = frozenset({"marriage"})

NODE_STAT_COLUMNS = [
    "degree", "degree_centrality", "triangle_count", "pagerank",
    "hits_authority", "hits_hub", "is_articulation_point",
]


@dataclass
class SocialGraph:
    """Heterogeneous directed multigraph with optional per-edge validity.

    ``valid_from``/``valid_to`` are 1-based month indices; 0 means
    unbounded on that side (a static edge has 0 on both).
    """

    node_ids: np.ndarray          # object/str array, unique
    node_kinds: np.ndarray        # "person" | "company", same length
    src: np.ndarray               # int indices into node_ids
    dst: np.ndarray
    edge_type: np.ndarray         # str array
    valid_from: np.ndarray        # int, 0 = no lower bound
    valid_to: np.ndarray          # int, 0 = no upper bound
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=object)
        self.node_kinds = np.asarray(self.node_kinds, dtype=object)
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.edge_type = np.asarray(self.edge_type, dtype=object)
        self.valid_from = np.asarray(self.valid_from, dtype=np.int64)
        self.valid_to = np.asarray(self.valid_to, dtype=np.int64)
        n = self.n_nodes
        if len(set(self.node_ids)) != n:
            raise ValueError("node ids must be unique")
        for arr in (self.src, self.dst):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise ValueError("edge endpoint out of range")
        both = (self.valid_from > 0) & (self.valid_to > 0)
        if np.any(self.valid_from[both] > self.valid_to[both]):
            raise ValueError("valid_from must be <= valid_to")
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def index_of(self, node_id) -> int:
        return self._index[node_id]

    # -- slicing ---------------------------------------------------------

    def slice(self, month: int) -> "SocialGraph":
        """Edges whose validity interval contains ``month``; static edges
        (no bounds) are always retained. Node set unchanged."""
        if month < 1:
            raise ValueError("month must be >= 1")
        keep = ((self.valid_from == 0) | (self.valid_from <= month)) & \
               ((self.valid_to == 0) | (month <= self.valid_to))
        return SocialGraph(self.node_ids, self.node_kinds,
                           self.src[keep], self.dst[keep],
                           self.edge_type[keep],
                           self.valid_from[keep], self.valid_to[keep])

    # -- simple projections ---------------------------------------------

    def undirected_pairs(self) -> np.ndarray:
        """Unique undirected pairs (i < j), self-loops dropped."""
        if self.n_edges == 0:
            return np.empty((0, 2), dtype=np.int64)
        a = np.minimum(self.src, self.dst)
        b = np.maximum(self.src, self.dst)
        keep = a != b
        pairs = np.stack([a[keep], b[keep]], axis=1)
        return np.unique(pairs, axis=0)

    def directed_pairs(self) -> np.ndarray:
        """Unique directed pairs, undirected edge types expanded to both
        directions, self-loops dropped."""
        if self.n_edges == 0:
            return np.empty((0, 2), dtype=np.int64)
        undirected = np.isin(self.edge_type.astype(str), list(UNDIRECTED_EDGE_TYPES))
        src = np.concatenate([self.src, self.dst[undirected]])
        dst = np.concatenate([self.dst, self.src[undirected]])
        keep = src != dst
        pairs = np.stack([src[keep], dst[keep]], axis=1)
        return np.unique(pairs, axis=0)

    def adjacency(self) -> sp.csr_matrix:
        """Undirected simple adjacency (0/1, symmetric, no diagonal)."""
        pairs = self.undirected_pairs()
        n = self.n_nodes
        if pairs.size == 0:
            return sp.csr_matrix((n, n), dtype=np.float64)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        data = np.ones(rows.size)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """CSR-style (indptr, indices) over the undirected simple
        projection; deterministic, sorted."""
        adj = self.adjacency()
        return adj.indptr.copy(), adj.indices.astype(np.int64)

    # -- CSV interface ---------------------------------------------------

    def to_csv(self, path) -> None:
        df = pd.DataFrame({
            "src": self.node_ids[self.src],
            "dst": self.node_ids[self.dst],
            "edge_type": self.edge_type,
            "valid_from": np.where(self.valid_from == 0, "", self.valid_from.astype(str)),
            "valid_to": np.where(self.valid_to == 0, "", self.valid_to.astype(str)),
        })
        df.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, node_ids, node_kinds) -> "SocialGraph":
        df = pd.read_csv(path, dtype={"src": str, "dst": str, "edge_type": str},
                         keep_default_na=False)
        index = {nid: i for i, nid in enumerate(node_ids)}
        try:
            src = np.array([index[s] for s in df["src"]], dtype=np.int64)
            dst = np.array([index[d] for d in df["dst"]], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"edge endpoint {e} not among the given nodes") from None

        def months(col):
            vals = df[col].replace("", "0")
            return vals.astype(float).astype(np.int64).to_numpy()

        return cls(np.asarray(node_ids, dtype=object), np.asarray(node_kinds, dtype=object),
                   src, dst, df["edge_type"].to_numpy(dtype=object),
                   months("valid_from"), months("valid_to"))


# -- statistics ----------------------------------------------------------

def pagerank(graph: SocialGraph, damping: float = 0.85,
             tol: float = 1e-8, max_iter: int = 200) -> np.ndarray:
    """PageRank by power iteration on the directed simple collapse.

    Dangling mass is redistributed uniformly. L1-normalized; warns when
    max_iter is reached without the successive-iterate L1 distance
    dropping below tol.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must be in (0, 1)")
    n = graph.n_nodes
    if n == 0:
        return np.empty(0)
    pairs = graph.directed_pairs()
    src, dst = pairs[:, 0], pairs[:, 1]
    out_deg = np.bincount(src, minlength=n).astype(float)
    dangling = out_deg == 0
    weights = 1.0 / np.where(dangling, 1.0, out_deg)
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        contrib = np.bincount(dst, weights=r[src] * weights[src], minlength=n)
        dangling_mass = r[dangling].sum()
        r_new = (1.0 - damping) / n + damping * (contrib + dangling_mass / n)
        delta = np.abs(r_new - r).sum()
        r = r_new
        if delta < tol:
            break
    else:
        warnings.warn("pagerank did not converge within max_iter", RuntimeWarning)
    return r / r.sum()


def hits(graph: SocialGraph, tol: float = 1e-8,
         max_iter: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """HITS authority and hub scores on the directed simple collapse.

    Vectors are unit Euclidean norm; a zero-edge graph yields all-zero
    scores.
    """
    n = graph.n_nodes
    if n == 0:
        return np.empty(0), np.empty(0)
    pairs = graph.directed_pairs()
    if pairs.size == 0:
        return np.zeros(n), np.zeros(n)
    src, dst = pairs[:, 0], pairs[:, 1]
    hub = np.full(n, 1.0 / np.sqrt(n))
    auth = np.zeros(n)
    for _ in range(max_iter):
        auth_new = np.bincount(dst, weights=hub[src], minlength=n)
        auth_new /= np.linalg.norm(auth_new)
        hub_new = np.bincount(src, weights=auth_new[dst], minlength=n)
        hub_new /= np.linalg.norm(hub_new)
        delta = np.abs(auth_new - auth).sum() + np.abs(hub_new - hub).sum()
        auth, hub = auth_new, hub_new
        if delta < tol:
            break
    else:
        warnings.warn("hits did not converge within max_iter", RuntimeWarning)
    return auth, hub


def triangle_counts(graph: SocialGraph) -> np.ndarray:
    """Per-node triangle membership counts on the undirected simple
    projection (closed triads containing the node)."""
    adj = graph.adjacency()
    if adj.nnz == 0:
        return np.zeros(graph.n_nodes, dtype=np.int64)
    paths2 = (adj @ adj).multiply(adj)
    return np.asarray(paths2.sum(axis=1)).ravel().astype(np.int64) // 2


def articulation_points(graph: SocialGraph) -> set:
    """Node ids whose removal increases the number of connected
    components of the undirected simple projection (iterative Tarjan)."""
    n = graph.n_nodes
    indptr, indices = graph.neighbors()
    disc = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    is_ap = np.zeros(n, dtype=bool)
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        root_children = 0
        # stack entries: (node, parent, next-neighbor cursor)
        stack = [(root, -1, indptr[root])]
        disc[root] = low[root] = timer
        timer += 1
        while stack:
            u, parent, cursor = stack[-1]
            if cursor < indptr[u + 1]:
                stack[-1] = (u, parent, cursor + 1)
                v = int(indices[cursor])
                if v == parent:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = timer
                    timer += 1
                    if u == root:
                        root_children += 1
                    stack.append((v, u, indptr[v]))
                else:
                    low[u] = min(low[u], disc[v])
            else:
                stack.pop()
                if parent != -1:
                    low[parent] = min(low[parent], low[u])
                    if parent != root and low[u] >= disc[parent]:
                        is_ap[parent] = True
        if root_children >= 2:
            is_ap[root] = True
    return {graph.node_ids[i] for i in np.flatnonzero(is_ap)}


def node_stats(graph: SocialGraph, damping: float = 0.85,
               tol: float = 1e-8, max_iter: int = 100_000) -> pd.DataFrame:
    """One row per node: degree, degree centrality, triangles, PageRank,
    HITS authority/hub and an articulation-point indicator.

    Degree-family statistics use the undirected simple projection;
    PageRank and HITS use the directed simple collapse.
    """
    n = graph.n_nodes
    adj = graph.adjacency()
    degree = np.asarray(adj.sum(axis=1)).ravel().astype(np.int64)
    centrality = degree / (n - 1) if n >= 2 else np.zeros(n)
    auth, hub = hits(graph, tol=tol, max_iter=max_iter)
    aps = articulation_points(graph)
    return pd.DataFrame({
        "degree": degree,
        "degree_centrality": centrality,
        "triangle_count": triangle_counts(graph),
        "pagerank": pagerank(graph, damping=damping, tol=tol, max_iter=max_iter),
        "hits_authority": auth,
        "hits_hub": hub,
        "is_articulation_point": np.array([nid in aps for nid in graph.node_ids]),
    }, index=pd.Index(graph.node_ids, name="node_id"))


def node_stats_csv(graph: SocialGraph, month: int, path) -> None:
    """Write the node-stats table for one monthly slice, keyed by
    (node_id, month)."""
    stats = node_stats(graph.slice(month)).reset_index()
    stats.insert(1, "month", month)
    stats.to_csv(path, index=False)
