"""Self-supervised objectives: Multiview Contrast and four masked
self-prediction tasks (residue type, distance, angle, dihedral)."""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import NoAdjacentPairs, NoEdges, NoTriplets, ZeroNormEmbedding
from .geometry import angle_bins, angles_at, dihedrals
from .graph import build_line_graph, crop_subsequence, crop_subspace, mask_edges, remove_edges
from .encoder import mask_residue_types
from .nn import Context, commit_bn_updates, init_mlp, mlp
from .runtime import parallel_map, rng_stream
from .struct_io import NUM_RESIDUE_TYPES

METHODS = ("multiview_contrast", "residue_type", "distance", "angle", "dihedral")


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    projection_dim: int = 128
    crop_length: int = 50
    crop_radius: float = 15.0
    mask_rate: float = 0.15
    batch_size: int = 96

    def __post_init__(self):
        if not self.temperature > 0 or self.projection_dim < 1 or self.crop_length < 1:
            raise ValueError(f"invalid contrastive config {self}")


@dataclass(frozen=True)
class SelfPredConfig:
    num_masked_residues: int = 512
    num_distance_pairs: int = 256
    num_angle_triplets: int = 512
    num_dihedral_quadruples: int = 512
    random_dihedral: bool = False

    def __post_init__(self):
        if min(self.num_masked_residues, self.num_distance_pairs,
               self.num_angle_triplets, self.num_dihedral_quadruples) < 1:
            raise ValueError(f"invalid self-prediction config {self}")


# ---------------------------------------------------------------- views

CROPS = ("subsequence", "subspace")
NOISES = ("identity", "mask")


def sample_view(g, rng, cfg=ContrastiveConfig(), crop=None, noise=None):
    """Random crop followed by random noise; ``crop`` / ``noise`` force a
    choice instead of drawing it."""
    if crop is None:
        crop = CROPS[int(rng.integers(2))]
    if noise is None:
        noise = NOISES[int(rng.integers(2))]
    if crop == "subsequence":
        view = crop_subsequence(g, rng, cfg.crop_length)
    elif crop == "subspace":
        view = crop_subspace(g, rng, cfg.crop_radius)
    else:
        raise ValueError(f"unknown crop {crop!r}")
    if noise == "mask":
        view = mask_edges(view, rng, cfg.mask_rate)
    elif noise != "identity":
        raise ValueError(f"unknown noise {noise!r}")
    return view


def sample_views(g, rng, cfg=ContrastiveConfig(), crop=None, noise=None):
    return (sample_view(g, rng, cfg, crop, noise), sample_view(g, rng, cfg, crop, noise))


def _partners(num_views):
    return np.arange(num_views) ^ 1


def info_nce_loss(z, temperature=0.07):
    """InfoNCE over ``2B`` projected views; rows ``2b`` and ``2b + 1`` are the
    two views of protein ``b``.

    For a positive pair ``(x, y)`` the loss is
    ``-sim(x, y)/tau + log sum_{k != x} exp(sim(y, k)/tau)`` with cosine
    similarities; the result averages ``L_{x,y}`` and ``L_{y,x}`` over all
    pairs.
    """
    z = ag.as_tensor(z)
    num = z.shape[0]
    if num < 2 or num % 2:
        raise ValueError("info_nce_loss needs an even number (>= 2) of views")
    if np.any(np.sqrt(np.sum(z.data * z.data, axis=1)) == 0.0):
        raise ZeroNormEmbedding("zero-norm embedding")
    zn = ag.l2_normalize(z)
    sim = ag.mul(ag.matmul(zn, ag.transpose(zn)), 1.0 / temperature)
    rows = np.arange(num)
    partner = _partners(num)
    # row y, every column except its partner x
    mask = np.ones((num, num), dtype=bool)
    mask[rows, partner] = False
    per_view = ag.sub(ag.logsumexp(sim, mask), ag.take(sim, rows, partner))
    return ag.mean(per_view)


def retrieval_accuracy(z):
    """Fraction of views whose most similar other view is their partner."""
    z = np.asarray(z.data if isinstance(z, ag.Tensor) else z)
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    sim = zn @ zn.T
    np.fill_diagonal(sim, -np.inf)
    return float(np.mean(np.argmax(sim, axis=1) == _partners(len(z))))


# ---------------------------------------------------------------- candidates

def _non_self_edges(g):
    return np.flatnonzero(g.edges[:, 0] != g.edges[:, 1])


def angle_candidates(g, lg=None):
    """Adjacent edge pairs ``(i, j), (j, k)`` with ``i != k`` and both legs
    non-degenerate, as residue-graph edge index arrays ``(e1, e2)``."""
    if lg is None:
        lg = build_line_graph(g)
    e1 = lg.edge_of_node[lg.edges[:, 0]]
    e2 = lg.edge_of_node[lg.edges[:, 1]]
    x = g.coords
    _, ok = angles_at(x[g.edges[e1, 0]], x[g.edges[e1, 1]], x[g.edges[e2, 1]])
    return e1[ok], e2[ok]


def dihedral_candidates(g, lg=None):
    """Consecutive edge triplets ``(i, j), (j, k), (k, t)`` with ``i != k``
    and ``j != t`` and non-collinear ``(i, j, k)`` / ``(j, k, t)``."""
    if lg is None:
        lg = build_line_graph(g)
    a, b = lg.edges[:, 0], lg.edges[:, 1]
    by_src = np.argsort(a, kind="stable")
    sorted_src = a[by_src]
    start = np.searchsorted(sorted_src, b, side="left")
    counts = np.searchsorted(sorted_src, b, side="right") - start
    first = np.repeat(np.arange(len(a)), counts)
    offsets = np.arange(len(first)) - np.repeat(np.cumsum(counts) - counts, counts)
    second = by_src[np.repeat(start, counts) + offsets]
    n1 = lg.edge_of_node[a[first]]
    n2 = lg.edge_of_node[b[first]]
    n3 = lg.edge_of_node[b[second]]
    e = g.edges
    x = g.coords
    _, ok = dihedrals(x[e[n1, 0]], x[e[n1, 1]], x[e[n2, 1]], x[e[n3, 1]])
    return n1[ok], n2[ok], n3[ok]


# ---------------------------------------------------------------- model

class PretrainModel:
    """An encoder plus the head its pretraining method needs.

    Heads are two-layer MLPs whose hidden width equals their input width;
    the contrastive projection head is ``D -> D -> projection_dim``.
    """

    def __init__(self, method, encoder, contrastive=ContrastiveConfig(), selfpred=SelfPredConfig()):
        if method not in METHODS:
            raise ValueError(f"unknown pretraining method {method!r}; valid methods: {', '.join(METHODS)}")
        self.method = method
        self.encoder = encoder
        self.contrastive = contrastive
        self.selfpred = selfpred

    def head_dims(self):
        d = self.encoder.output_dim
        return {
            "multiview_contrast": ("projection_head", [d, d, self.contrastive.projection_dim]),
            "residue_type": ("residue_head", [d, d, NUM_RESIDUE_TYPES]),
            "distance": ("distance_head", [2 * d, 2 * d, 1]),
            "angle": ("angle_head", [3 * d, 3 * d, self.encoder.graph_cfg.num_angle_bins]),
            "dihedral": ("dihedral_head", [4 * d, 4 * d, self.encoder.graph_cfg.num_angle_bins]),
        }[self.method]

    def init_params(self, store, rng):
        if not any(name.startswith("layer1.") for name in store.params):
            self.encoder.init_params(store, rng)
        prefix, dims = self.head_dims()
        init_mlp(store, prefix, dims, rng)
        return store

    def head(self, ctx, x):
        prefix, dims = self.head_dims()
        return mlp(ctx, x, prefix, len(dims) - 1)


def _cat_rows(node_repr, *index_arrays):
    return ag.concat([ag.gather(node_repr, idx) for idx in index_arrays], axis=-1)


@dataclass
class Sample:
    """The random, parameter-independent part of one loss evaluation: the
    encoded view(s), which residues the head reads, and the targets."""

    method: str
    plans: list
    index: tuple = ()
    targets: np.ndarray = None


def sample_residue_type(model, g, rng, line_graph=None):
    k = min(model.selfpred.num_masked_residues, g.n)
    masked = np.sort(rng.choice(g.n, size=k, replace=False))
    view = g.with_residue_types(mask_residue_types(g.residue_types, masked))
    return Sample("residue_type", [model.encoder.prepare(view, line_graph)], (masked,),
                  g.residue_types[masked])


def sample_distance(model, g, rng):
    candidates = _non_self_edges(g)
    if len(candidates) == 0:
        raise NoEdges("no non-self-loop edges to sample")
    k = min(model.selfpred.num_distance_pairs, len(candidates))
    chosen = np.sort(rng.choice(candidates, size=k, replace=False))
    i, j = g.edges[chosen, 0], g.edges[chosen, 1]
    diff = g.coords[i] - g.coords[j]
    target = np.sqrt(np.sum(diff * diff, axis=-1))
    return Sample("distance", [model.encoder.prepare(remove_edges(g, chosen))], (i, j), target)


def sample_angle(model, g, rng, candidates=None):
    e1, e2 = candidates if candidates is not None else angle_candidates(g)
    if len(e1) == 0:
        raise NoAdjacentPairs("no adjacent edge pairs")
    k = min(model.selfpred.num_angle_triplets, len(e1))
    pick = np.sort(rng.choice(len(e1), size=k, replace=False))
    e1, e2 = e1[pick], e2[pick]
    i, j, kk = g.edges[e1, 0], g.edges[e1, 1], g.edges[e2, 1]
    theta, _ = angles_at(g.coords[i], g.coords[j], g.coords[kk])
    targets = angle_bins(theta, model.encoder.graph_cfg.num_angle_bins)
    view = remove_edges(g, np.union1d(e1, e2))
    return Sample("angle", [model.encoder.prepare(view)], (i, j, kk), targets)


def _random_quadruples(g, rng, count):
    if g.n < 4:
        raise NoTriplets("random dihedrals need at least four residues")
    quads = []
    for _ in range(count * 20):
        q = rng.choice(g.n, size=4, replace=False)
        _, ok = dihedrals(*(g.coords[v] for v in q))
        if ok:
            quads.append(q)
            if len(quads) == count:
                break
    if not quads:
        raise NoTriplets("no non-degenerate random quadruples")
    return np.array(quads).T


def sample_dihedral(model, g, rng, candidates=None):
    cfg = model.selfpred
    if cfg.random_dihedral:
        i, j, kk, t = _random_quadruples(g, rng, cfg.num_dihedral_quadruples)
        view = g
    else:
        n1, n2, n3 = candidates if candidates is not None else dihedral_candidates(g)
        if len(n1) == 0:
            raise NoTriplets("no consecutive edge triplets")
        k = min(cfg.num_dihedral_quadruples, len(n1))
        pick = np.sort(rng.choice(len(n1), size=k, replace=False))
        n1, n2, n3 = n1[pick], n2[pick], n3[pick]
        i, j, kk, t = g.edges[n1, 0], g.edges[n1, 1], g.edges[n2, 1], g.edges[n3, 1]
        view = remove_edges(g, np.union1d(np.union1d(n1, n2), n3))
    theta, _ = dihedrals(g.coords[i], g.coords[j], g.coords[kk], g.coords[t])
    targets = angle_bins(theta, model.encoder.graph_cfg.num_angle_bins)
    return Sample("dihedral", [model.encoder.prepare(view)], (i, j, kk, t), targets)


def sample_contrastive(model, graphs, rng):
    """Two views of every protein in ``graphs``, in order."""
    plans = [model.encoder.prepare(view)
             for g in graphs for view in sample_views(g, rng, model.contrastive)]
    return Sample("multiview_contrast", plans)


def sample_loss(ctx, model, sample):
    """Loss of ``sample`` under the parameters in ``ctx``; returns
    ``(loss, extras)`` where extras are predictions and targets (or the
    projected embeddings for the contrastive objective)."""
    enc = model.encoder
    if sample.method == "multiview_contrast":
        z = model.head(ctx, ag.concat([ag.reshape(enc.forward(ctx, None, plan=p).graph_repr, (1, -1))
                                       for p in sample.plans], axis=0))
        return info_nce_loss(z, model.contrastive.temperature), z.data
    out = enc.forward(ctx, None, plan=sample.plans[0])
    if sample.method == "residue_type":
        logits = model.head(ctx, ag.gather(out.node_repr, sample.index[0]))
        return ag.cross_entropy(logits, sample.targets), (logits.data, sample.targets)
    if sample.method == "distance":
        k = len(sample.targets)
        pred = ag.reshape(model.head(ctx, _cat_rows(out.node_repr, *sample.index)), (k,))
        return ag.mse(pred, sample.targets), (pred.data, sample.targets)
    logits = model.head(ctx, _cat_rows(out.node_repr, *sample.index))
    return ag.cross_entropy(logits, sample.targets), (logits.data, sample.targets)


def loss_residue_type(ctx, model, g, rng, line_graph=None):
    """Masked residue-type prediction; returns ``(loss, (logits, targets))``."""
    return sample_loss(ctx, model, sample_residue_type(model, g, rng, line_graph))


def loss_distance(ctx, model, g, rng):
    """Distance regression on removed edges; ``(loss, (pred, target))``."""
    return sample_loss(ctx, model, sample_distance(model, g, rng))


def loss_angle(ctx, model, g, rng, candidates=None):
    return sample_loss(ctx, model, sample_angle(model, g, rng, candidates))


def loss_dihedral(ctx, model, g, rng, candidates=None):
    return sample_loss(ctx, model, sample_dihedral(model, g, rng, candidates))


def contrastive_batch_loss(ctx, model, graphs, rng):
    """Two views per protein, encoded separately; returns ``(loss, z)``."""
    return sample_loss(ctx, model, sample_contrastive(model, graphs, rng))


class CandidateCache:
    """Per-protein angle/dihedral candidate lists (pure functions of the
    graph) and, for fixed-sample runs, each protein's frozen sample."""

    def __init__(self):
        self._angle = {}
        self._dihedral = {}
        self.samples = {}

    def angle(self, key, g):
        if key not in self._angle:
            self._angle[key] = angle_candidates(g)
        return self._angle[key]

    def dihedral(self, key, g):
        if key not in self._dihedral:
            self._dihedral[key] = dihedral_candidates(g)
        return self._dihedral[key]


def draw_sample(model, g, rng, key=None, cache=None):
    """Self-prediction sample for one protein under ``model.method``."""
    method = model.method
    if method == "residue_type":
        return sample_residue_type(model, g, rng)
    if method == "distance":
        return sample_distance(model, g, rng)
    if method == "angle":
        cand = cache.angle(key, g) if cache is not None else None
        return sample_angle(model, g, rng, cand)
    if method == "dihedral":
        cand = None
        if cache is not None and not model.selfpred.random_dihedral:
            cand = cache.dihedral(key, g)
        return sample_dihedral(model, g, rng, cand)
    raise ValueError(f"{method} is a batch-level objective")


def protein_loss(ctx, model, g, rng, key=None, cache=None):
    """Self-prediction loss for one protein under ``model.method``."""
    return sample_loss(ctx, model, draw_sample(model, g, rng, key, cache))


# ---------------------------------------------------------------- training

def sample_rng(seed, step, slot, idx, fixed_samples=False):
    """Masking stream for one protein in one step. With ``fixed_samples``
    protein ``idx`` sees the same masked sample at every step."""
    if fixed_samples:
        return rng_stream(seed, "masking", 0, idx)
    return rng_stream(seed, "masking", step, slot)


def _self_prediction_step(model, store, graphs, batch, seed, step, cache, fixed_samples=False):
    def run(item):
        slot, idx = item
        tape = ag.Tape()
        bound = store.bind(tape)
        ctx = Context(bound, train=True, rng=rng_stream(seed, "dropout", step, slot))
        if fixed_samples:
            sample = cache.samples.get(idx)
            if sample is None:
                sample = draw_sample(model, graphs[idx], sample_rng(seed, step, slot, idx, True), idx, cache)
                cache.samples[idx] = sample
        else:
            sample = draw_sample(model, graphs[idx], sample_rng(seed, step, slot, idx), idx, cache)
        loss, _ = sample_loss(ctx, model, sample)
        grads = tape.backward(loss)
        return float(loss.data), {name: grads.of(t) for name, t in bound.watched.items()}, ctx.bn_updates

    results = parallel_map(run, list(enumerate(batch)))
    scale = 1.0 / len(batch)
    for _, grads, bn_updates in results:
        store.add_grads({k: scale * v for k, v in grads.items()})
        commit_bn_updates(store, bn_updates)
    return float(np.mean([r[0] for r in results]))


def _contrastive_step(model, store, graphs, batch, seed, step):
    tape = ag.Tape()
    bound = store.bind(tape)
    ctx = Context(bound, train=True, rng=rng_stream(seed, "dropout", step))
    loss, _ = contrastive_batch_loss(ctx, model, [graphs[i] for i in batch],
                                     rng_stream(seed, "graph-aug", step))
    store.accumulate(bound, tape.backward(loss))
    commit_bn_updates(store, ctx.bn_updates)
    return float(loss.data)


def batch_schedule(num_items, batch_size, steps, seed):
    """Epoch-wise shuffled minibatches, ``steps`` of them."""
    batch_size = min(batch_size, num_items)
    out, epoch = [], 0
    while len(out) < steps:
        order = rng_stream(seed, "shuffling", epoch).permutation(num_items)
        for lo in range(0, num_items - batch_size + 1, batch_size):
            out.append(order[lo:lo + batch_size])
            if len(out) == steps:
                break
        epoch += 1
    return out


def pretrain(model, store, graphs, optimizer, steps, batch_size, seed, callback=None,
             fixed_samples=False):
    """Run ``steps`` optimizer updates; returns ``[(step, loss), ...]``.

    ``fixed_samples`` freezes each protein's masked residues / removed
    edges for the whole run (see :func:`sample_rng`).
    """
    if not graphs:
        raise ValueError("pretraining needs at least one protein")
    if model.method == "multiview_contrast" and min(batch_size, len(graphs)) < 2:
        raise ValueError("multiview contrast needs a batch of at least two proteins")
    cache = CandidateCache()
    trace = []
    for step, batch in enumerate(batch_schedule(len(graphs), batch_size, steps, seed), 1):
        if model.method == "multiview_contrast":
            loss = _contrastive_step(model, store, graphs, batch, seed, step)
        else:
            loss = _self_prediction_step(model, store, graphs, batch, seed, step, cache,
                                        fixed_samples)
        optimizer.step(store)
        trace.append((step, loss))
        if callback is not None:
            callback(step, loss)
    return trace


def masked_residue_accuracy(model, store, graphs, seed, train_mode=True):
    """Accuracy of the residue head on freshly masked residues."""
    hits = total = 0
    for idx, g in enumerate(graphs):
        ctx = Context(store.bind(None), train=train_mode)
        _, (logits, targets) = loss_residue_type(ctx, model, g, rng_stream(seed, "masking", 0, idx))
        hits += int(np.sum(np.argmax(logits, axis=1) == targets))
        total += len(targets)
    return hits / total
