"""Parameters, layer helpers and optimizers on top of :mod:`gearnet.autograd`."""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import UninitializedParams

BUFFER_SUFFIXES = (".mean", ".var")


class ParameterStore:
    """Named learnable tensors, their gradient accumulators, and the
    non-learnable batch-norm running statistics (``buffers``)."""

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def __contains__(self, name):
        return name in self.params or name in self.buffers

    def __getitem__(self, name):
        if name in self.params:
            return self.params[name]
        if name in self.buffers:
            return self.buffers[name]
        raise UninitializedParams(f"no parameter named {name!r}")

    def add(self, name, value):
        if name in self:
            raise ValueError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        if name.endswith(BUFFER_SUFFIXES):
            self.buffers[name] = value
        else:
            self.params[name] = value
            self.grads[name] = np.zeros_like(value)

    def names(self):
        return list(self.params)

    def num_parameters(self):
        return int(np.sum([p.size for p in self.params.values()]))

    def bind(self, tape=None):
        return BoundParams(self, tape)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, bound, grads, scale=1.0):
        """Add the gradients of every parameter ``bound`` handed out."""
        for name, t in bound.watched.items():
            if t in grads:
                self.grads[name] += scale * grads.of(t)

    def add_grads(self, grads):
        for name, g in grads.items():
            self.grads[name] += g

    def state_dict(self):
        return {**self.params, **self.buffers}

    @classmethod
    def from_state_dict(cls, tensors):
        store = cls()
        for name, value in tensors.items():
            store.add(name, value)
        return store

    def load_state_dict(self, tensors):
        """Overwrite values in place; names and shapes must match exactly."""
        mine = self.state_dict()
        if set(mine) != set(tensors):
            missing, extra = sorted(set(mine) - set(tensors)), sorted(set(tensors) - set(mine))
            raise ValueError(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, value in tensors.items():
            if mine[name].shape != np.shape(value):
                raise ValueError(f"{name}: shape {np.shape(value)} does not match {mine[name].shape}")
        for name, value in tensors.items():
            mine[name][...] = value

    def copy(self):
        other = ParameterStore.from_state_dict({k: v.copy() for k, v in self.state_dict().items()})
        for k, g in self.grads.items():
            other.grads[k] = g.copy()
        return other


class BoundParams:
    """Read-only view of a store whose learnable entries become tape leaves
    on first access."""

    def __init__(self, store, tape=None):
        self.store = store
        self.tape = tape
        self.watched = {}

    def __getitem__(self, name):
        t = self.watched.get(name)
        if t is None:
            if name not in self.store.params:
                raise UninitializedParams(f"no parameter named {name!r}")
            value = self.store.params[name]
            t = self.tape.watch(value, name) if self.tape is not None else ag.Tensor(value, name=name)
            self.watched[name] = t
        return t

    def buffer(self, name):
        if name not in self.store.buffers:
            raise UninitializedParams(f"no buffer named {name!r}")
        return self.store.buffers[name]


@dataclass
class Context:
    """State threaded through one forward pass.

    Batch-norm running statistics are not mutated during the pass; the
    train-mode updates land in ``bn_updates`` and are committed by the
    caller, in a fixed order, with :func:`commit_bn_updates`.
    """

    params: BoundParams
    train: bool = True
    rng: np.random.Generator = None
    bn_updates: dict = field(default_factory=dict)


def commit_bn_updates(store, updates):
    for prefix, (mean_, var) in updates.items():
        store.buffers[prefix + ".mean"][...] = mean_
        store.buffers[prefix + ".var"][...] = var


# ---------------------------------------------------------------- init

def glorot_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_linear(store, prefix, fan_in, fan_out, rng, bias=True):
    store.add(prefix + ".W", glorot_uniform(rng, fan_in, fan_out))
    if bias:
        store.add(prefix + ".b", np.zeros(fan_out))


def init_batch_norm(store, prefix, dim):
    store.add(prefix + ".scale", np.ones(dim))
    store.add(prefix + ".shift", np.zeros(dim))
    store.add(prefix + ".mean", np.zeros(dim))
    store.add(prefix + ".var", np.ones(dim))


def init_mlp(store, prefix, dims, rng):
    """``dims = [in, hidden..., out]``; layers named ``{prefix}.fc{k}``."""
    for k, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        init_linear(store, f"{prefix}.fc{k}", a, b, rng)


# ---------------------------------------------------------------- layers

def linear(ctx, x, prefix, bias=True):
    y = ag.matmul(x, ctx.params[prefix + ".W"])
    if bias:
        y = ag.add(y, ctx.params[prefix + ".b"])
    return y


def batch_norm(ctx, x, prefix, eps=1e-5, momentum=0.1):
    P = ctx.params
    y, stats = ag.batch_norm(x, P[prefix + ".scale"], P[prefix + ".shift"],
                             P.buffer(prefix + ".mean"), P.buffer(prefix + ".var"),
                             train=ctx.train, eps=eps, momentum=momentum)
    if stats is not None:
        ctx.bn_updates[prefix] = stats
    return y


def mlp(ctx, x, prefix, num_layers):
    for k in range(num_layers):
        x = linear(ctx, x, f"{prefix}.fc{k}")
        if k < num_layers - 1:
            x = ag.relu(x)
    return x


# ---------------------------------------------------------------- optimizers

class SGD:
    def __init__(self, lr):
        self.lr = lr

    def step(self, store):
        for name, p in store.params.items():
            p -= self.lr * store.grads[name]
        store.zero_grad()


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, store):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, p in store.params.items():
            g = store.grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        store.zero_grad()


def make_optimizer(kind, lr, **hyper):
    if kind == "sgd":
        return SGD(lr)
    if kind == "adam":
        return Adam(lr, **hyper)
    raise ValueError(f"unknown optimizer {kind!r} (expected 'sgd' or 'adam')")


def optimizer_step(optimizer, store):
    optimizer.step(store)
