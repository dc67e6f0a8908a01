"""Feed-forward lifting networks with hand-written reverse mode and Adam.

ReLU hidden layers, identity output layer. No learning framework: the
gradients here feed the joint surrogate training and must match finite
differences exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from deeepc.errors import DimensionMismatch


@dataclass
class LiftingNetwork:
    """Weights are (out, in) matrices; biases are vectors. Hidden ReLU."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise DimensionMismatch("weights and biases must pair up")
        for i in range(1, len(self.weights)):
            if self.weights[i].shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionMismatch(f"layer {i} input dim does not chain")
        for W, b in zip(self.weights, self.biases):
            if b.shape != (W.shape[0],):
                raise DimensionMismatch("bias shape must match layer output dim")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [W.shape[0] for W in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def set_params(self, params: list[np.ndarray]) -> None:
        n = len(self.weights)
        if len(params) != 2 * n:
            raise DimensionMismatch("parameter list length mismatch")
        self.weights = [np.asarray(params[2 * i], dtype=float) for i in range(n)]
        self.biases = [np.asarray(params[2 * i + 1], dtype=float) for i in range(n)]

    def copy(self) -> "LiftingNetwork":
        return LiftingNetwork(
            [W.copy() for W in self.weights], [b.copy() for b in self.biases], self.seed
        )


def init_network(in_dim: int, hidden: tuple[int, ...], out_dim: int, seed: int = 42) -> LiftingNetwork:
    """Glorot-uniform weights, zero biases, seeded for reproducibility."""
    rng = np.random.default_rng(seed)
    dims = [in_dim, *hidden, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return LiftingNetwork(weights, biases, seed)


def forward(net: LiftingNetwork, X: np.ndarray) -> np.ndarray:
    """Row-wise evaluation of a (batch, in_dim) matrix."""
    return forward_cached(net, X)[0]


def forward_cached(net: LiftingNetwork, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != net.in_dim:
        raise DimensionMismatch(f"input has {X.shape[1]} columns, expected {net.in_dim}")
    activations = [X]
    h = X
    n_layers = len(net.weights)
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        pre = h @ W.T + b
        h = np.maximum(pre, 0.0) if i < n_layers - 1 else pre
        activations.append(h)
    return h, activations


def backward(
    net: LiftingNetwork, upstream: np.ndarray, cache: list[np.ndarray]
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of <upstream, forward(X)> w.r.t. params and input.

    cache comes from forward_cached on the same X. ReLU subgradient at 0
    is taken as 0. Returns param grads interleaved [dW0, db0, dW1, ...].
    """
    delta = np.atleast_2d(np.asarray(upstream, dtype=float))
    if delta.shape != cache[-1].shape:
        raise DimensionMismatch("upstream gradient shape mismatch")
    grads: list[np.ndarray] = []
    n_layers = len(net.weights)
    for i in range(n_layers - 1, -1, -1):
        h_in = cache[i]
        if i < n_layers - 1:
            # post-activation of a hidden layer: kill gradient where ReLU output is 0
            delta = delta * (cache[i + 1] > 0.0)
        dW = delta.T @ h_in
        db = delta.sum(axis=0)
        grads.insert(0, db)
        grads.insert(0, dW)
        delta = delta @ net.weights[i]
    return grads, delta


def backward_from_input(
    net: LiftingNetwork, X: np.ndarray, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Convenience wrapper: run forward then reverse mode in one call."""
    _, cache = forward_cached(net, X)
    return backward(net, upstream, cache)


@dataclass
class AdamState:
    """Bias-corrected Adam moments for a list of parameter arrays."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params])


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float
) -> list[np.ndarray]:
    """One Adam update; mutates state, returns new parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatch("params/grads/state lengths differ")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        m_hat = state.m[i] / (1 - b1**t)
        v_hat = state.v[i] / (1 - b2**t)
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out


MAGIC = "deeepc-net-v1"


def save_network(path: str, net: LiftingNetwork) -> None:
    """Flat binary file: one JSON header line, then raw float64 parameters."""
    header = {"magic": MAGIC, "dims": net.dims, "activation": "relu", "seed": net.seed}
    flat = np.concatenate([p.ravel() for p in net.params()])
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(flat.astype("<f8").tobytes())


def load_network(path: str) -> LiftingNetwork:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("magic") != MAGIC:
            raise ValueError(f"not a {MAGIC} file: {path}")
        flat = np.frombuffer(fh.read(), dtype="<f8")
    dims = header["dims"]
    weights, biases, off = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = flat[off : off + fan_out * fan_in].reshape(fan_out, fan_in).copy()
        off += fan_out * fan_in
        b = flat[off : off + fan_out].copy()
        off += fan_out
        weights.append(W)
        biases.append(b)
    if off != flat.size:
        raise ValueError("trailing bytes in network file")
    return LiftingNetwork(weights, biases, header["seed"])


@dataclass
class IdentityLifting:
    """Drop-in stand-in for a LiftingNetwork that maps x -> x.

    Used by the convex baseline controller where z := y and v := u.
    """

    dim: int
    seed: int = 0

    @property
    def in_dim(self) -> int:
        return self.dim

    @property
    def out_dim(self) -> int:
        return self.dim


def apply_lifting(net, X: np.ndarray) -> np.ndarray:
    if isinstance(net, IdentityLifting):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != net.dim:
            raise DimensionMismatch(f"input has {X.shape[1]} columns, expected {net.dim}")
        return X.copy()
    return forward(net, X)
