"""Dueling fully connected Q-network with explicit forward/backward passes.

Every weight and bias lives in one contiguous float64 vector; the per-layer
arrays are views into it. That keeps target syncs, snapshots, optimizer
steps and checkpoint I/O single array operations.
"""
from __future__ import annotations

import numpy as np

from .exceptions import ShapeError, TrainingDivergenceError


def _layout(n_inputs, hidden, n_actions):
    shapes = []
    fan_in = n_inputs
    for i, width in enumerate(hidden):
        shapes += [(f"W{i}", (fan_in, width)), (f"b{i}", (width,))]
        fan_in = width
    shapes += [("Wv", (fan_in, 1)), ("bv", (1,)),
               ("Wa", (fan_in, n_actions)), ("ba", (n_actions,))]
    return shapes


class QNetwork:
    """ReLU trunk followed by a value head and an advantage head.

    Q(s, a) = V(s) + A(s, a) - mean_a A(s, a)
    """

    def __init__(self, n_inputs, hidden=(128, 128), n_actions=9, rng=None,
                 flat=None, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.n_inputs = int(n_inputs)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_actions = int(n_actions)
        self.layout = _layout(self.n_inputs, self.hidden, self.n_actions)
        size = sum(int(np.prod(shape)) for _, shape in self.layout)
        if flat is None:
            self.flat = np.zeros(size, dtype=self.dtype)
            self._bind()
            if rng is not None:
                self.init_params(rng)
        else:
            flat = np.array(flat, dtype=self.dtype)
            if flat.shape != (size,):
                raise ShapeError(f"expected {size} parameters, got {flat.shape}")
            self.flat = flat
            self._bind()

    def _bind(self):
        self.params = self.split(self.flat)

    def split(self, flat):
        """Per-layer views into a flat vector laid out like the parameters."""
        views = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            views[name] = flat[offset:offset + n].reshape(shape)
            offset += n
        return views

    def _grad_views(self, buf):
        cached = getattr(self, "_grad_cache", None)
        if cached is None or cached[0] is not buf:
            cached = (buf, self.split(buf))
            self._grad_cache = cached
        return cached[1]

    @property
    def layer_shapes(self):
        return [(name, tuple(shape)) for name, shape in self.layout]

    def init_params(self, rng: np.random.Generator):
        """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        for name, shape in self.layout:
            fan_in = shape[0] if name.startswith("W") else self._fan_in_of(name)
            bound = 1.0 / np.sqrt(fan_in)
            self.params[name][...] = rng.uniform(-bound, bound, size=shape)

    def _fan_in_of(self, bias_name):
        return dict(self.layout)["W" + bias_name[1:]][0]

    def copy(self) -> QNetwork:
        return QNetwork(self.n_inputs, self.hidden, self.n_actions,
                        flat=self.flat, dtype=self.dtype)

    def load_flat(self, flat):
        self.flat[...] = flat

    def _check_input(self, X):
        X = np.asarray(X, dtype=self.dtype)
        if X.shape[-1] != self.n_inputs or X.ndim not in (1, 2):
            raise ShapeError(
                f"network expects inputs of width {self.n_inputs}, got shape {X.shape}")
        return X

    def forward(self, X) -> np.ndarray:
        """Q-values, shape (9,) for one state or (batch, 9) for a batch."""
        X = self._check_input(X)
        p = self.params
        h = X
        for i in range(len(self.hidden)):
            h = h @ p[f"W{i}"] + p[f"b{i}"]
            np.maximum(h, 0.0, out=h)
        adv = h @ p["Wa"] + p["ba"]
        value = h @ p["Wv"] + p["bv"]
        adv -= adv.sum(axis=-1, keepdims=True) * (1.0 / self.n_actions)
        return value + adv

    __call__ = forward

    def forward_with_cache(self, X):
        X = np.atleast_2d(self._check_input(X))
        p = self.params
        acts = [X]
        h = X
        for i in range(len(self.hidden)):
            h = np.maximum(h @ p[f"W{i}"] + p[f"b{i}"], 0.0)
            acts.append(h)
        adv = h @ p["Wa"] + p["ba"]
        value = h @ p["Wv"] + p["bv"]
        adv -= adv.sum(axis=1, keepdims=True) * (1.0 / self.n_actions)
        return value + adv, acts

    def backward(self, acts, dQ, out=None) -> np.ndarray:
        """Gradient of sum(dQ * Q) with respect to the flat parameter vector.

        ``out`` may be a preallocated flat buffer to write the gradient into.
        """
        p = self.params
        if out is None:
            grad = np.empty_like(self.flat)
            gp = self.split(grad)
        else:
            grad = out
            gp = self._grad_views(out)
        dQ = np.atleast_2d(dQ)
        dV = dQ.sum(axis=1, keepdims=True)
        dA = dQ - dV * (1.0 / self.n_actions)
        h = acts[-1]
        hT = np.ascontiguousarray(h.T)
        gp["Wv"][...] = hT @ dV
        gp["bv"][...] = dV.sum(axis=0)
        gp["Wa"][...] = hT @ dA
        gp["ba"][...] = dA.sum(axis=0)
        dh = dV @ p["Wv"].T + dA @ p["Wa"].T
        for i in reversed(range(len(self.hidden))):
            dz = dh * (acts[i + 1] > 0.0)
            # a contiguous transpose is much faster than a strided one in BLAS
            gp[f"W{i}"][...] = np.ascontiguousarray(acts[i].T) @ dz
            gp[f"b{i}"][...] = dz.sum(axis=0)
            if i:
                dh = dz @ p[f"W{i}"].T
        return grad


def loss_and_gradients(net: QNetwork, states, actions, targets, out=None):
    """Mean squared TD error over the batch and its flat gradient.

    Only the taken action's Q-value receives gradient; targets are constants.
    """
    actions = np.asarray(actions, dtype=np.intp)
    targets = np.asarray(targets, dtype=net.dtype)
    if len(actions) != len(targets):
        raise ShapeError("actions and targets must have the same length")
    q, acts = net.forward_with_cache(states)
    rows = np.arange(len(actions))
    err = q[rows, actions] - targets
    loss = float(np.mean(err * err))
    dQ = np.zeros_like(q)
    dQ[rows, actions] = 2.0 * err / len(actions)
    return loss, net.backward(acts, dQ, out=out)


def double_dqn_targets(online: QNetwork, target: QNetwork, rewards, next_states,
                       dones, gamma: float) -> np.ndarray:
    """r + gamma * Q_target(s', argmax_a Q_online(s', a)), cut at terminals."""
    rewards = np.asarray(rewards, dtype=online.dtype)
    next_states = np.atleast_2d(next_states)
    best = np.argmax(online.forward(next_states), axis=1)
    q_next = target.forward(next_states)[np.arange(len(best)), best]
    return rewards + gamma * q_next * (1.0 - np.asarray(dones, dtype=online.dtype))


def double_dqn_target(online, target, transition, gamma) -> float:
    """Scalar version of :func:`double_dqn_targets` for one transition."""
    if transition.done:
        return float(transition.r)
    y = double_dqn_targets(online, target, [transition.r], [transition.s_next],
                           [False], gamma)
    return float(y[0])


class Adam:
    def __init__(self, size, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8,
                 dtype=np.float64):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """In-place update of ``params``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        m, v = self.m, self.v
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * np.square(grad)
        step = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        denom = np.sqrt(v)
        denom += self.eps
        np.divide(m, denom, out=denom)
        denom *= step
        params -= denom
        if self.t % 64 == 0:
            # moments of zero-gradient weights decay towards subnormal floats,
            # which make every later step several times slower
            m[np.abs(m) < 1e-30] = 0.0
            v[v < 1e-30] = 0.0


def apply_update(net: QNetwork, grad: np.ndarray, opt: Adam, lr=None) -> QNetwork:
    if grad.shape != net.flat.shape:
        raise ShapeError(f"gradient shape {grad.shape} != params {net.flat.shape}")
    if not np.all(np.isfinite(grad)):
        bad = [name for name, view in net.split(grad).items()
               if not np.all(np.isfinite(view))]
        raise TrainingDivergenceError(
            "non-finite gradient", {"arrays": bad, "optimizer_step": opt.t})
    if lr is not None:
        opt.lr = lr
    opt.step(net.flat, grad)
    return net

