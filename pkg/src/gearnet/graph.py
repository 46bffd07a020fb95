"""Relational residue graphs, view augmentations and line graphs."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import angle_bins, angles_at

_KNN_ROW_BLOCK = 512


@dataclass(frozen=True)
class GraphConfig:
    d_seq: int = 3
    d_radius: float = 10.0
    k: int = 10
    d_long: int = 5
    num_angle_bins: int = 8

    def __post_init__(self):
        if self.d_seq < 1 or self.k < 1 or self.d_long < 0 or self.num_angle_bins < 1:
            raise ValueError(f"invalid graph config {self}")
        if not self.d_radius > 0:
            raise ValueError("d_radius must be positive")

    @property
    def num_relations(self):
        return 2 * self.d_seq + 1

    @property
    def radius_relation(self):
        return 2 * self.d_seq - 1

    @property
    def knn_relation(self):
        return 2 * self.d_seq

    def sequential_relation(self, offset):
        return offset + self.d_seq - 1


@dataclass(eq=False)
class ResidueGraph:
    """Directed multigraph; ``edges`` rows are ``(src, dst, relation)``.

    ``positions`` holds each node's index in the uncropped chain and is
    what sequential offsets and ``|i - j|`` features refer to.
    """

    coords: np.ndarray
    residue_types: np.ndarray
    edges: np.ndarray
    num_relations: int
    positions: np.ndarray = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        self.residue_types = np.asarray(self.residue_types, dtype=np.int64)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        if self.positions is None:
            self.positions = np.arange(len(self.coords), dtype=np.int64)
        else:
            self.positions = np.asarray(self.positions, dtype=np.int64)

    @property
    def n(self):
        return len(self.coords)

    @property
    def m(self):
        return len(self.edges)

    def edge_set(self):
        return set(map(tuple, self.edges.tolist()))

    def copy(self):
        return ResidueGraph(self.coords.copy(), self.residue_types.copy(), self.edges.copy(),
                            self.num_relations, self.positions.copy())

    def with_edges(self, edges):
        return ResidueGraph(self.coords, self.residue_types, edges, self.num_relations, self.positions)

    def with_residue_types(self, residue_types):
        return ResidueGraph(self.coords, residue_types, self.edges, self.num_relations, self.positions)

    def __eq__(self, other):
        if not isinstance(other, ResidueGraph):
            return NotImplemented
        return (self.num_relations == other.num_relations
                and np.array_equal(self.coords, other.coords)
                and np.array_equal(self.residue_types, other.residue_types)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.edges, other.edges))


@dataclass(eq=False)
class LineGraph:
    """Graph over the non-self-loop edges of a :class:`ResidueGraph`.

    ``edge_of_node[v]`` is the residue-graph edge behind line-graph node
    ``v``; ``node_of_edge`` is its inverse with -1 for self-loops.
    ``edges`` rows are ``(src node, dst node, angle bin)``.
    """

    node_of_edge: np.ndarray
    edge_of_node: np.ndarray
    edges: np.ndarray
    num_relations: int

    @property
    def num_nodes(self):
        return len(self.edge_of_node)


def _sort_edges(edges):
    if len(edges) == 0:
        return edges.reshape(0, 3)
    return edges[np.lexsort((edges[:, 2], edges[:, 1], edges[:, 0]))]


def _row_distances(coords, rows):
    diff = coords[rows][:, None, :] - coords[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _sequential_edges(n, cfg):
    parts = []
    for d in range(-(cfg.d_seq - 1), cfg.d_seq):
        i = np.arange(max(0, -d), min(n, n - d))
        if len(i):
            parts.append(np.stack([i, i + d, np.full_like(i, cfg.sequential_relation(d))], axis=1))
    return np.concatenate(parts) if parts else np.zeros((0, 3), dtype=np.int64)


def _radius_edges(coords, cfg):
    n = len(coords)
    if n < 2:
        return np.zeros((0, 3), dtype=np.int64)
    # kd-tree for candidates, exact distances decide
    pairs = cKDTree(coords).query_pairs(cfg.d_radius * (1 + 1e-9), output_type="ndarray")
    if len(pairs) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    diff = coords[pairs[:, 0]] - coords[pairs[:, 1]]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    keep = (dist < cfg.d_radius) & (np.abs(pairs[:, 0] - pairs[:, 1]) >= cfg.d_long)
    a, b = pairs[keep, 0], pairs[keep, 1]
    rel = np.full(2 * len(a), cfg.radius_relation)
    return np.stack([np.concatenate([a, b]), np.concatenate([b, a]), rel], axis=1)


def _knn_edges(coords, cfg):
    n = len(coords)
    idx = np.arange(n)
    parts = []
    for lo in range(0, n, _KNN_ROW_BLOCK):
        rows = idx[lo:lo + _KNN_ROW_BLOCK]
        dist = _row_distances(coords, rows)
        sep = np.abs(rows[:, None] - idx[None, :])
        dist[(sep < cfg.d_long) | (sep == 0)] = np.inf
        # stable sort: equal distances keep the smaller residue index first
        order = np.argsort(dist, axis=1, kind="stable")[:, :cfg.k]
        chosen = np.isfinite(np.take_along_axis(dist, order, axis=1))
        dst = np.repeat(rows, order.shape[1]).reshape(order.shape)
        parts.append(np.stack([order[chosen], dst[chosen]], axis=1))
    pairs = np.concatenate(parts) if parts else np.zeros((0, 2), dtype=np.int64)
    return np.concatenate([pairs, np.full((len(pairs), 1), cfg.knn_relation)], axis=1)


def build_graph(structure, cfg=GraphConfig()):
    """Sequential, radius and KNN edges over alpha carbons.

    KNN edges point from each neighbor to the node whose neighborhood it is
    in (``j -> i``), so incoming edges are what gets aggregated.
    """
    coords = np.asarray(structure.coords, dtype=np.float64)
    n = len(coords)
    edges = np.concatenate([
        _sequential_edges(n, cfg),
        _radius_edges(coords, cfg),
        _knn_edges(coords, cfg),
    ]).astype(np.int64)
    return ResidueGraph(coords, structure.residue_types, _sort_edges(edges), cfg.num_relations)


# ---------------------------------------------------------------- augmentation

def induced_subgraph(g, keep):
    """Subgraph on the sorted node indices ``keep``, renumbered 0..len-1."""
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    new_index = np.full(g.n, -1, dtype=np.int64)
    new_index[keep] = np.arange(len(keep))
    src, dst = new_index[g.edges[:, 0]], new_index[g.edges[:, 1]]
    mask = (src >= 0) & (dst >= 0)
    edges = np.stack([src[mask], dst[mask], g.edges[mask, 2]], axis=1)
    return ResidueGraph(g.coords[keep], g.residue_types[keep], edges, g.num_relations,
                        g.positions[keep])


def pack_graphs(graphs):
    """Disjoint union of ``graphs`` and the graph index of every node.

    Node indices and chain positions are offset per graph, so no edge,
    line-graph edge or ``|i - j|`` feature ever spans two proteins.
    """
    if not graphs:
        raise ValueError("pack_graphs needs at least one graph")
    R = graphs[0].num_relations
    if any(g.num_relations != R for g in graphs):
        raise ValueError("packed graphs must share a relation count")
    edges, positions, node_offset, pos_offset = [], [], 0, 0
    for g in graphs:
        edges.append(g.edges + np.array([node_offset, node_offset, 0]))
        positions.append(g.positions + pos_offset)
        node_offset += g.n
        pos_offset += int(g.positions.max()) + 1
    packed = ResidueGraph(np.concatenate([g.coords for g in graphs]),
                          np.concatenate([g.residue_types for g in graphs]),
                          np.concatenate(edges), R, np.concatenate(positions))
    graph_index = np.repeat(np.arange(len(graphs)), [g.n for g in graphs])
    return packed, graph_index


def crop_subsequence(g, rng, length=50):
    if length < 1:
        raise ValueError("length must be >= 1")
    if g.n <= length:
        return g.copy()
    start = int(rng.integers(0, g.n - length + 1))
    return induced_subgraph(g, np.arange(start, start + length))


def crop_subspace(g, rng, radius=15.0):
    if not radius > 0:
        raise ValueError("radius must be positive")
    center = int(rng.integers(0, g.n))
    diff = g.coords - g.coords[center]
    keep = np.sqrt(np.sum(diff * diff, axis=-1)) <= radius
    keep[center] = True
    return induced_subgraph(g, np.flatnonzero(keep))


def mask_edges(g, rng, rate=0.15):
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    keep = rng.random(g.m) >= rate
    return g.with_edges(g.edges[keep])


def remove_edges(g, edge_indices):
    keep = np.ones(g.m, dtype=bool)
    keep[np.asarray(edge_indices, dtype=np.int64)] = False
    return g.with_edges(g.edges[keep])


# ---------------------------------------------------------------- line graph

def build_line_graph(g, cfg=GraphConfig()):
    """Line graph linking ``(i, j)`` to ``(j, k)`` whenever ``i != k``.

    Relations are the bin of the interior angle at ``j``.  Self-loops have
    no direction and are left out.  Coincident residues (zero-length leg)
    fall into bin 0.
    """
    num_bins = cfg.num_angle_bins if isinstance(cfg, GraphConfig) else int(cfg)
    src, dst = g.edges[:, 0], g.edges[:, 1]
    edge_of_node = np.flatnonzero(src != dst)
    node_of_edge = np.full(g.m, -1, dtype=np.int64)
    node_of_edge[edge_of_node] = np.arange(len(edge_of_node))
    s, t = src[edge_of_node], dst[edge_of_node]

    by_src = np.argsort(s, kind="stable")
    sorted_src = s[by_src]
    start = np.searchsorted(sorted_src, t, side="left")
    counts = np.searchsorted(sorted_src, t, side="right") - start
    e1 = np.repeat(np.arange(len(s)), counts)
    offsets = np.arange(len(e1)) - np.repeat(np.cumsum(counts) - counts, counts)
    e2 = by_src[np.repeat(start, counts) + offsets]
    keep = s[e1] != t[e2]
    e1, e2 = e1[keep], e2[keep]

    theta, ok = angles_at(g.coords[s[e1]], g.coords[t[e1]], g.coords[t[e2]])
    bins = np.zeros(len(e1), dtype=np.int64)
    if np.any(ok):
        bins[ok] = angle_bins(theta[ok], num_bins)
    edges = np.stack([e1, e2, bins], axis=1).astype(np.int64).reshape(-1, 3)
    return LineGraph(node_of_edge, edge_of_node.astype(np.int64), edges, num_bins)


# ---------------------------------------------------------------- checks and cache

def check_graph(g, cfg=GraphConfig()):
    """Raise ``AssertionError`` if ``g`` breaks a ResidueGraph invariant."""
    assert g.num_relations == cfg.num_relations
    assert len(g.residue_types) == g.n == len(g.positions)
    e = g.edges
    if len(e) == 0:
        return
    i, j, r = e[:, 0], e[:, 1], e[:, 2]
    assert np.all((i >= 0) & (i < g.n) & (j >= 0) & (j < g.n)), "node index out of range"
    assert np.all((r >= 0) & (r < g.num_relations)), "relation out of range"
    sep = g.positions[j] - g.positions[i]
    seq = r < cfg.radius_relation
    assert np.all(sep[seq] == r[seq] - (cfg.d_seq - 1)), "sequential offset mismatch"
    assert np.all(np.abs(sep[~seq]) >= cfg.d_long), "spatial edge below d_long"
    rad = r == cfg.radius_relation
    diff = g.coords[i[rad]] - g.coords[j[rad]]
    assert np.all(np.sqrt(np.sum(diff * diff, axis=-1)) < cfg.d_radius), "radius edge too long"
    assert len({tuple(x) for x in e.tolist()}) == len(e), "duplicate edge"


def graph_to_tensors(g, prefix=""):
    return {
        prefix + "edges": g.edges.astype(np.float64),
        prefix + "coords": g.coords,
        prefix + "residue_types": g.residue_types.astype(np.float64),
        prefix + "positions": g.positions.astype(np.float64),
    }


def graph_from_tensors(tensors, cfg=GraphConfig(), prefix=""):
    coords = tensors[prefix + "coords"]
    return ResidueGraph(coords, tensors[prefix + "residue_types"].astype(np.int64),
                        tensors[prefix + "edges"].astype(np.int64).reshape(-1, 3),
                        cfg.num_relations, tensors[prefix + "positions"].astype(np.int64))
