"""Downstream heads, the fine-tuning loop, and evaluation metrics."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import BadTarget, EmptyDataset, NoPositives, SchemaError, ShapeMismatch
from .nn import Context, commit_bn_updates, init_mlp, mlp
from .runtime import rng_stream

TASK_KINDS = ("multilabel", "multiclass")
THRESHOLDS = np.round(np.arange(101) / 100.0, 2)


# ---------------------------------------------------------------- tables

@dataclass
class PredictionTable:
    """Scores in [0, 1] and 0/1 truth for P proteins by T terms."""

    scores: np.ndarray
    truth: np.ndarray

    def __post_init__(self):
        self.scores = np.array(self.scores, dtype=np.float64, ndmin=2)
        self.truth = np.array(self.truth, ndmin=2)
        if self.scores.shape != self.truth.shape:
            raise ShapeMismatch(f"scores {self.scores.shape} vs truth {self.truth.shape}")
        if not np.all(np.isfinite(self.scores)) or np.any((self.scores < 0) | (self.scores > 1)):
            raise ValueError("scores must be finite and lie in [0, 1]")
        if not np.all((self.truth == 0) | (self.truth == 1)):
            raise ValueError("truth must be 0/1")
        self.truth = self.truth.astype(np.uint8)

    @property
    def shape(self):
        return self.scores.shape


def format_prediction_table(pt):
    """Text form: ``P T`` header, P score rows, then P truth rows."""
    p, t = pt.shape
    lines = [f"{p} {t}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in pt.scores]
    lines += [" ".join(str(int(v)) for v in row) for row in pt.truth]
    return "\n".join(lines) + "\n"


def parse_prediction_table(text):
    rows = [line.split() for line in text.splitlines() if line.strip()]
    if not rows or len(rows[0]) != 2:
        raise SchemaError("prediction table must start with a 'proteins terms' header", 1)
    try:
        p, t = int(rows[0][0]), int(rows[0][1])
    except ValueError:
        raise SchemaError("non-integer prediction table header", 1) from None
    if p < 1 or t < 1:
        raise SchemaError(f"prediction table header needs positive sizes, got {p} {t}", 1)
    if len(rows) != 1 + 2 * p:
        raise SchemaError(f"expected {2 * p} rows after the header, got {len(rows) - 1}", len(rows))
    for lineno, row in enumerate(rows[1:], 2):
        if len(row) != t:
            raise SchemaError(f"expected {t} columns, got {len(row)}", lineno)
    try:
        scores = np.array([[float(v) for v in row] for row in rows[1:1 + p]])
        truth = np.array([[int(v) for v in row] for row in rows[1 + p:]])
    except ValueError as exc:
        raise SchemaError(f"bad number in prediction table: {exc}") from None
    return PredictionTable(scores, truth)


def read_prediction_table(path):
    with open(path, encoding="utf-8") as fh:
        return parse_prediction_table(fh.read())


def write_prediction_table(pt, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_prediction_table(pt))


# ---------------------------------------------------------------- metrics

def fmax(pt, thresholds=THRESHOLDS):
    """Protein-centric maximum F-measure over a threshold grid.

    Precision at ``t`` averages over proteins with at least one score
    ``>= t``; recall averages over every protein that has a true term.
    Proteins without any true term are left out (recall is undefined for
    them). F is 0 where no protein makes a prediction.
    """
    scores, truth = pt.scores, pt.truth.astype(bool)
    annotated = truth.any(axis=1)
    scores, truth = scores[annotated], truth[annotated]
    if len(scores) == 0:
        return 0.0
    num_true = truth.sum(axis=1)
    best = 0.0
    for t in thresholds:
        pred = scores >= t
        num_pred = pred.sum(axis=1)
        hits = (pred & truth).sum(axis=1)
        covered = num_pred > 0
        if not covered.any():
            continue
        # fsum makes the averages independent of protein order
        precision = math.fsum(hits[covered] / num_pred[covered]) / int(covered.sum())
        recall = math.fsum(hits / num_true) / len(num_true)
        if precision + recall > 0:
            best = max(best, 2 * precision * recall / (precision + recall))
    return float(best)


def aupr_pair(pt):
    """Micro-averaged average precision over all protein-term pairs, with
    equal scores handled as one step of the sweep."""
    scores, truth = pt.scores.ravel(), pt.truth.ravel().astype(np.int64)
    total = int(truth.sum())
    if total == 0:
        raise NoPositives("aupr_pair needs at least one positive pair")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], truth[order]
    tp = np.cumsum(y)
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp_at = tp[ends]
    precision = tp_at / (ends + 1.0)
    recall = tp_at / total
    gain = np.diff(np.r_[0.0, recall])
    return float(np.sum(gain * precision))


def accuracy(logits, labels):
    """Fraction of rows whose argmax (lowest index on ties) equals the label."""
    logits = np.asarray(logits)
    labels = np.asarray(labels).reshape(-1)
    if logits.ndim != 2 or len(logits) != len(labels) or len(labels) == 0:
        raise ShapeMismatch(f"logits {logits.shape} vs labels {labels.shape}")
    return float(np.mean(np.argmax(logits, axis=1) == labels))


# ---------------------------------------------------------------- heads

class TaskHead:
    """Three-layer MLP on the pooled protein representation; hidden widths
    equal the encoder output width."""

    def __init__(self, input_dim, num_outputs, kind="multilabel", prefix="task_head"):
        if kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {kind!r}; expected one of {TASK_KINDS}")
        if num_outputs < 1:
            raise ValueError("a task head needs at least one output")
        self.input_dim = input_dim
        self.num_outputs = num_outputs
        self.kind = kind
        self.prefix = prefix

    @property
    def dims(self):
        return [self.input_dim, self.input_dim, self.input_dim, self.num_outputs]

    def init_params(self, store, rng):
        init_mlp(store, self.prefix, self.dims, rng)
        return store

    def __call__(self, ctx, x):
        return mlp(ctx, x, self.prefix, 3)

    def loss(self, logits, target):
        if self.kind == "multilabel":
            return ag.binary_cross_entropy_with_logits(logits, np.asarray(target, dtype=np.float64))
        return ag.cross_entropy(logits, np.asarray(target, dtype=np.int64))

    def predictions(self, logits):
        """Per-term probabilities (multilabel) or raw logits (multiclass)."""
        return ag.sigmoid(logits) if self.kind == "multilabel" else logits


def task_target(record, head):
    """Training target of one record: the bit vector (multilabel) or the
    index of its single set bit (multiclass)."""
    labels = record.labels
    if labels is None:
        raise BadTarget(f"record {record.structure.id!r} has no labels")
    if len(labels) != head.num_outputs:
        raise ShapeMismatch(f"record {record.structure.id!r} has {len(labels)} labels, "
                            f"head has {head.num_outputs} outputs")
    if head.kind == "multilabel":
        return labels.astype(np.float64)[None, :]
    if int(labels.sum()) != 1:
        raise BadTarget(f"multiclass record {record.structure.id!r} needs exactly one set label")
    return np.array([int(np.argmax(labels))])


def predict(encoder, head, store, graphs):
    """Head outputs for each graph (eval-mode normalization)."""
    rows = []
    for g in graphs:
        ctx = Context(store.bind(None), train=False)
        out = encoder.forward(ctx, g)
        rows.append(head.predictions(head(ctx, ag.reshape(out.graph_repr, (1, -1))).data)[0])
    return np.array(rows)


def evaluate(encoder, head, store, graphs, records, metric=None):
    """``{"metric": name, "value": v}`` for a labelled set."""
    outputs = predict(encoder, head, store, graphs)
    truth = np.array([r.labels for r in records])
    if metric is None:
        metric = "fmax" if head.kind == "multilabel" else "accuracy"
    if metric == "accuracy":
        if head.kind == "multilabel":
            raise ValueError("accuracy applies to multiclass heads")
        value = accuracy(outputs, [int(task_target(r, head)[0]) for r in records])
    elif metric in ("fmax", "aupr"):
        if head.kind != "multilabel":
            raise ValueError(f"{metric} applies to multilabel heads")
        pt = PredictionTable(outputs, truth)
        value = fmax(pt) if metric == "fmax" else aupr_pair(pt)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    return {"metric": metric, "value": value}


# ---------------------------------------------------------------- training

@dataclass
class TrainLog:
    steps: list = field(default_factory=list)    # (step, loss)
    epochs: list = field(default_factory=list)   # dicts: epoch, loss, metric, value
    best_epoch: int = 0
    best_value: float = None
    best_store: object = None

    def to_rows(self):
        return [(e["epoch"], e["loss"], e["metric"], e["value"]) for e in self.epochs]


def _task_step(encoder, head, store, graphs, targets, batch, seed, step):
    """Accumulate the gradient of one minibatch. The batch is packed into
    one graph (see :meth:`GearNet.forward_batch`), in index order so the
    result depends only on which proteins were drawn."""
    batch = sorted(int(k) for k in batch)
    tape = ag.Tape()
    bound = store.bind(tape)
    ctx = Context(bound, train=True, rng=rng_stream(seed, "dropout", step))
    out = encoder.forward_batch(ctx, [graphs[k] for k in batch])
    loss = head.loss(head(ctx, out.graph_repr), np.concatenate([targets[k] for k in batch]))
    grads = tape.backward(loss)
    store.add_grads({name: grads.of(t) for name, t in bound.watched.items()})
    commit_bn_updates(store, ctx.bn_updates)
    return float(loss.data)


def train_task(encoder, head, store, graphs, records, optimizer, epochs, batch_size, seed,
               valid=None, metric=None, callback=None):
    """Fine-tune ``store`` (encoder + head) on labelled graphs.

    ``valid`` is an optional ``(graphs, records)`` pair used after every
    epoch; the store with the best validation value is kept in
    ``log.best_store``. Without a validation set the final epoch wins.
    """
    if not graphs:
        raise EmptyDataset("no training proteins")
    if len(graphs) != len(records):
        raise ShapeMismatch(f"{len(graphs)} graphs vs {len(records)} records")
    targets = [task_target(r, head) for r in records]
    if valid is not None and not valid[0]:
        valid = None
    batch_size = max(1, min(batch_size, len(graphs)))
    log = TrainLog()
    step = 0
    for epoch in range(1, epochs + 1):
        order = rng_stream(seed, "shuffling", epoch).permutation(len(graphs))
        losses = []
        for lo in range(0, len(order), batch_size):
            step += 1
            loss = _task_step(encoder, head, store, graphs, targets, order[lo:lo + batch_size], seed, step)
            optimizer.step(store)
            losses.append(loss)
            log.steps.append((step, loss))
            if callback is not None:
                callback(step, loss)
        entry = {"epoch": epoch, "loss": math.fsum(losses) / len(losses), "metric": None, "value": None}
        if valid is not None:
            result = evaluate(encoder, head, store, valid[0], valid[1], metric)
            entry["metric"], entry["value"] = result["metric"], result["value"]
            improved = log.best_value is None or result["value"] > log.best_value
        else:
            improved = True
        if improved:
            log.best_epoch, log.best_value, log.best_store = epoch, entry["value"], store.copy()
        log.epochs.append(entry)
    return log
