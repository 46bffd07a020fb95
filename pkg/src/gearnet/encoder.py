"""GearNet and GearNet-Edge encoders."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .errors import VersionMismatch
from .graph import GraphConfig, build_line_graph, pack_graphs
from .nn import batch_norm, init_batch_norm, init_linear, linear
from .struct_io import NUM_RESIDUE_TYPES, UNKNOWN


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 6
    hidden_dim: int = 32
    edge_hidden_dim: int = None
    use_edge_mp: bool = True
    input_projection: bool = True
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1:
            raise ValueError(f"invalid encoder config {self}")
        if self.edge_hidden_dim is None:
            object.__setattr__(self, "edge_hidden_dim", self.hidden_dim)
        if self.edge_hidden_dim < 1 or not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"invalid encoder config {self}")

    @property
    def output_dim(self):
        return self.num_layers * self.hidden_dim


@dataclass
class EncoderOutput:
    node_repr: ag.Tensor  # n x (num_layers * hidden_dim)
    graph_repr: ag.Tensor  # (num_layers * hidden_dim,), one row per protein from forward_batch


@dataclass
class GraphPlan:
    """Features and sparse operators of one graph, reusable across forward
    passes with different parameters."""

    graph: object
    node_features: np.ndarray
    node_op: object
    line_graph: object = None
    line_op: object = None
    message_op: object = None
    self_agg: np.ndarray = None
    num_self_edges: int = 0
    edge_features: np.ndarray = None


def edge_feature_dim(num_relations):
    return 2 * NUM_RESIDUE_TYPES + num_relations + 2


def node_features(residue_types):
    f = np.zeros((len(residue_types), NUM_RESIDUE_TYPES))
    f[np.arange(len(residue_types)), residue_types] = 1.0
    return f


def featurize(g):
    """One-hot node features and ``Cat(f_i, f_j, onehot(r), |i-j|, dist)``
    edge features."""
    f = node_features(g.residue_types)
    src, dst, rel = g.edges[:, 0], g.edges[:, 1], g.edges[:, 2]
    rel_onehot = np.zeros((g.m, g.num_relations))
    rel_onehot[np.arange(g.m), rel] = 1.0
    seq_dist = np.abs(g.positions[src] - g.positions[dst]).astype(np.float64)
    diff = g.coords[src] - g.coords[dst]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    edge = np.concatenate([f[src], f[dst], rel_onehot, seq_dist[:, None], dist[:, None]], axis=1)
    return f, edge


def mask_residue_types(residue_types, index):
    out = np.array(residue_types, dtype=np.int64)
    out[np.asarray(index, dtype=np.int64)] = UNKNOWN
    return out


def aggregation_matrix(src, dst, rel, num_sources, num_targets, num_relations):
    """Sparse operator ``A`` with ``A[dst * R + rel, src] += 1`` per edge, so
    ``A @ h`` holds every per-relation neighbor sum in row ``i * R + r``."""
    rows = np.asarray(dst, dtype=np.int64) * num_relations + np.asarray(rel, dtype=np.int64)
    return sp.csr_matrix((np.ones(len(rows)), (rows, np.asarray(src, dtype=np.int64))),
                         shape=(num_targets * num_relations, num_sources))


def relational_update(ctx, agg, num_targets, num_relations, prefix, kernel="rel"):
    """``ReLU(BN(sum_r W_r agg_r))`` from per-relation sums stacked as rows
    ``i * R + r``; reshaping lets one matmul apply every kernel."""
    d = agg.shape[1]
    agg = ag.reshape(agg, (num_targets, num_relations * d))
    weights = ag.concat([ctx.params[f"{prefix}.{kernel}{r}.W"] for r in range(num_relations)], axis=0)
    return ag.relu(batch_norm(ctx, ag.matmul(agg, weights), prefix + ".bn"))


def relational_conv_layer(ctx, h, g, prefix):
    """``u_i = ReLU(BN(sum_r W_r sum_{j in N_r(i)} h_j))``."""
    op = aggregation_matrix(g.edges[:, 0], g.edges[:, 1], g.edges[:, 2], g.n, g.n, g.num_relations)
    return relational_update(ctx, ag.spmm(op, h), g.n, g.num_relations, prefix)


def edge_mp_layer(ctx, m_prev, lg, prefix, op=None):
    """One round of message passing on the line graph (rows of ``m_prev``
    are line-graph nodes)."""
    if op is None:
        op = aggregation_matrix(lg.edges[:, 0], lg.edges[:, 1], lg.edges[:, 2],
                                lg.num_nodes, lg.num_nodes, lg.num_relations)
    return relational_update(ctx, ag.spmm(op, m_prev), lg.num_nodes, lg.num_relations,
                             prefix, kernel="bin")


class GearNet:
    """Relational graph encoder; GearNet-Edge when ``cfg.use_edge_mp``.

    Kernels for relation ``r`` of layer ``l`` (1-based) are stored as
    ``layer{l}.rel{r}.W`` and, for the line graph, ``edge_layer{l}.bin{a}.W``.
    The line graph leaves out self-loops, so their message never leaves
    the raw edge feature; ``self_fc{l}.W`` projects it in place of
    ``edge_fc{l}.W``.
    """

    def __init__(self, cfg=EncoderConfig(), graph_cfg=GraphConfig()):
        self.cfg = cfg
        self.graph_cfg = graph_cfg

    @property
    def output_dim(self):
        return self.cfg.output_dim

    def _layer_input_dim(self, l):
        if l == 1 and not self.cfg.input_projection:
            return NUM_RESIDUE_TYPES
        return self.cfg.hidden_dim

    def param_shapes(self):
        """Exact ``name -> shape`` of every tensor the encoder owns."""
        cfg, R = self.cfg, self.graph_cfg.num_relations
        A, H, E = self.graph_cfg.num_angle_bins, cfg.hidden_dim, cfg.edge_hidden_dim
        f_edge = edge_feature_dim(R)
        shapes = {}

        def bn(prefix, dim):
            for s in ("scale", "shift", "mean", "var"):
                shapes[f"{prefix}.{s}"] = (dim,)

        if cfg.input_projection:
            shapes["input_proj.W"] = (NUM_RESIDUE_TYPES, H)
            bn("input_proj.bn", H)
        for l in range(1, cfg.num_layers + 1):
            d_in = self._layer_input_dim(l)
            if cfg.use_edge_mp:
                e_in = f_edge if l == 1 else E
                for a in range(A):
                    shapes[f"edge_layer{l}.bin{a}.W"] = (e_in, E)
                bn(f"edge_layer{l}.bn", E)
                shapes[f"edge_fc{l}.W"] = (E, d_in)
                shapes[f"self_fc{l}.W"] = (f_edge, d_in)
            for r in range(R):
                shapes[f"layer{l}.rel{r}.W"] = (d_in, H)
            bn(f"layer{l}.bn", H)
        return shapes

    def init_params(self, store, rng):
        cfg, R, A = self.cfg, self.graph_cfg.num_relations, self.graph_cfg.num_angle_bins
        H, E = cfg.hidden_dim, cfg.edge_hidden_dim
        f_edge = edge_feature_dim(R)
        if cfg.input_projection:
            init_linear(store, "input_proj", NUM_RESIDUE_TYPES, H, rng, bias=False)
            init_batch_norm(store, "input_proj.bn", H)
        for l in range(1, cfg.num_layers + 1):
            d_in = self._layer_input_dim(l)
            if cfg.use_edge_mp:
                e_in = f_edge if l == 1 else E
                for a in range(A):
                    init_linear(store, f"edge_layer{l}.bin{a}", e_in, E, rng, bias=False)
                init_batch_norm(store, f"edge_layer{l}.bn", E)
                init_linear(store, f"edge_fc{l}", E, d_in, rng, bias=False)
                init_linear(store, f"self_fc{l}", f_edge, d_in, rng, bias=False)
            for r in range(R):
                init_linear(store, f"layer{l}.rel{r}", d_in, H, rng, bias=False)
            init_batch_norm(store, f"layer{l}.bn", H)
        return store

    def check_params(self, store):
        for name, shape in self.param_shapes().items():
            if name not in store:
                raise VersionMismatch(f"checkpoint lacks encoder tensor {name!r}")
            if store[name].shape != shape:
                raise VersionMismatch(
                    f"encoder tensor {name!r} has shape {store[name].shape}, config expects {shape}")

    def prepare(self, g, line_graph=None):
        """Every parameter-independent quantity ``forward`` needs for ``g``."""
        R = g.num_relations
        f_node, f_edge = featurize(g)
        src, dst, rel = g.edges[:, 0], g.edges[:, 1], g.edges[:, 2]
        plan = GraphPlan(g, f_node, aggregation_matrix(src, dst, rel, g.n, g.n, R))
        if self.cfg.use_edge_mp:
            lg = line_graph if line_graph is not None else build_line_graph(g, self.graph_cfg)
            plan.line_graph = lg
            plan.line_op = aggregation_matrix(lg.edges[:, 0], lg.edges[:, 1], lg.edges[:, 2],
                                              lg.num_nodes, lg.num_nodes, lg.num_relations)
            e = lg.edge_of_node
            # routes each line-graph node's message to the residue it points at
            plan.message_op = aggregation_matrix(np.arange(len(e)), dst[e], rel[e], len(e), g.n, R)
            self_edges = np.flatnonzero(lg.node_of_edge < 0)
            plan.num_self_edges = len(self_edges)
            plan.self_agg = np.asarray(
                aggregation_matrix(np.arange(len(self_edges)), dst[self_edges], rel[self_edges],
                                   len(self_edges), g.n, R) @ f_edge[self_edges])
            plan.edge_features = f_edge[e]
        return plan

    def forward(self, ctx, g, line_graph=None, plan=None):
        """Per-node and sum-pooled representations of ``g``; pass ``plan``
        (from :meth:`prepare`) to skip the graph preprocessing."""
        if plan is None:
            plan = self.prepare(g, line_graph)
        cfg, g, R = self.cfg, plan.graph, plan.graph.num_relations
        h = ag.Tensor(plan.node_features)
        if cfg.input_projection:
            h = batch_norm(ctx, linear(ctx, h, "input_proj", bias=False), "input_proj.bn")
        if cfg.use_edge_mp:
            m_state = ag.Tensor(plan.edge_features)
            self_agg = ag.Tensor(plan.self_agg)

        hiddens = []
        for l in range(1, cfg.num_layers + 1):
            agg = ag.spmm(plan.node_op, h)
            if cfg.use_edge_mp:
                m_state = edge_mp_layer(ctx, m_state, plan.line_graph, f"edge_layer{l}", plan.line_op)
                agg = agg + ag.spmm(plan.message_op, linear(ctx, m_state, f"edge_fc{l}", bias=False))
                if plan.num_self_edges:
                    agg = agg + ag.matmul(self_agg, ctx.params[f"self_fc{l}.W"])
            u = relational_update(ctx, agg, g.n, R, f"layer{l}")
            u = ag.dropout(u, cfg.dropout, ctx.rng, ctx.train)
            h = h + u if u.shape == h.shape else u
            hiddens.append(h)

        node_repr = ag.concat(hiddens, axis=-1)
        return EncoderOutput(node_repr, ag.sum(node_repr, axis=0))

    def forward_batch(self, ctx, graphs):
        """One pass over the disjoint union of ``graphs``, so train-mode
        batch statistics span every residue of the minibatch. ``graph_repr``
        is ``len(graphs) x output_dim``, one sum-pooled row per protein."""
        packed, graph_index = pack_graphs(graphs)
        out = self.forward(ctx, packed)
        return EncoderOutput(out.node_repr, ag.scatter_sum(out.node_repr, graph_index, len(graphs)))
