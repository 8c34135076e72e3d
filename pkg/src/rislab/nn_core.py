"""Small numpy neural-network substrate with hand-written gradients.

Everything runs in float64. Layers cache what their backward pass needs on
``forward`` and raise :class:`StateError` if ``backward`` is called first.
Parameters are exposed as ``{name: ndarray}`` dicts so that optimizers,
soft updates and checkpoints can treat every model the same way.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional

import numpy as np

Params = Dict[str, np.ndarray]

ACTIVATIONS = ("identity", "relu", "tanh")


class DimensionError(ValueError):
    """Input shape does not match the layer."""


class StateError(RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class ConfigError(ValueError):
    """Invalid hyperparameter combination."""


class NumericError(FloatingPointError):
    """A NaN or infinite value reached an update."""


class FormatError(ValueError):
    """Malformed binary file.

    Parameters
    ----------
    message : str
        What went wrong.
    offset : int
        Byte offset at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _activate(z, activation):
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "tanh":
        return np.tanh(z)
    raise ConfigError(f"unknown activation {activation!r}")


def _activation_grad(z, y, activation):
    if activation == "identity":
        return np.ones_like(z)
    if activation == "relu":
        return (z > 0.0).astype(z.dtype)
    return 1.0 - y * y


class Dense:
    """Affine layer ``activation(W x + b)`` with ``W`` of shape (out, in).

    Accepts a single vector or a batch of row vectors (N, in).
    """

    def __init__(self, n_in: int, n_out: int, activation: str = "identity",
                 rng: Optional[np.random.Generator] = None):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        rng = np.random.default_rng() if rng is None else rng
        self.W = uniform_init(rng, (n_out, n_in), n_in)
        self.b = uniform_init(rng, (n_out,), n_in)
        self.activation = activation
        self.grad_W = np.zeros_like(self.W)
        self.grad_b = np.zeros_like(self.b)
        self._cache = None

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_in:
            raise DimensionError(
                f"expected input dim {self.n_in}, got {x.shape[-1]}")
        z = x @ self.W.T + self.b
        y = _activate(z, self.activation)
        self._cache = (x, z, y)
        return y

    def backward(self, grad_out: np.ndarray):
        """Return ``(grad_W, grad_b, grad_x)`` for the cached input.

        The parameter gradients are also stored on the layer.
        """
        if self._cache is None:
            raise StateError("Dense.backward called before forward")
        x, z, y = self._cache
        grad_z = np.asarray(grad_out, dtype=np.float64) * _activation_grad(
            z, y, self.activation)
        if x.ndim == 1:
            grad_W = np.outer(grad_z, x)
            grad_b = grad_z.copy()
        else:
            gz2 = grad_z.reshape(-1, self.n_out)
            grad_W = gz2.T @ x.reshape(-1, self.n_in)
            grad_b = gz2.sum(axis=0)
        grad_x = grad_z @ self.W
        self.grad_W, self.grad_b = grad_W, grad_b
        return grad_W, grad_b, grad_x

    def params(self) -> Params:
        return {"W": self.W, "b": self.b}

    def grads(self) -> Params:
        return {"W": self.grad_W, "b": self.grad_b}


def dense_forward(layer: Dense, x):
    return layer.forward(x)


def dense_backward(layer: Dense, upstream_grad):
    return layer.backward(upstream_grad)


class MLP:
    """Stack of :class:`Dense` layers, relu between hidden layers."""

    def __init__(self, sizes: Iterable[int], out_activation: str = "identity",
                 rng: Optional[np.random.Generator] = None,
                 hidden_activation: str = "relu"):
        sizes = list(sizes)
        if len(sizes) < 2:
            raise ConfigError("an MLP needs at least input and output sizes")
        rng = np.random.default_rng() if rng is None else rng
        self.layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            act = out_activation if last else hidden_activation
            self.layers.append(Dense(n_in, n_out, act, rng))

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad_out):
        """Backpropagate and return the gradient w.r.t. the network input."""
        g = grad_out
        for layer in reversed(self.layers):
            _, _, g = layer.backward(g)
        return g

    def params(self) -> Params:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"l{i}.W"] = layer.W
            out[f"l{i}.b"] = layer.b
        return out

    def grads(self) -> Params:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"l{i}.W"] = layer.grad_W
            out[f"l{i}.b"] = layer.grad_b
        return out

    def copy(self) -> "MLP":
        clone = object.__new__(MLP)
        clone.layers = []
        for layer in self.layers:
            new = object.__new__(Dense)
            new.W = layer.W.copy()
            new.b = layer.b.copy()
            new.activation = layer.activation
            new.grad_W = np.zeros_like(new.W)
            new.grad_b = np.zeros_like(new.b)
            new._cache = None
            clone.layers.append(new)
        return clone


# -- layer normalization ----------------------------------------------------

def layernorm_forward(x, gain, bias, eps: float = 1e-5):
    """Normalize ``x`` over its last axis, then apply ``gain`` and ``bias``.

    Returns ``(y, cache)``; ``cache`` feeds :func:`layernorm_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layernorm_backward(grad_out, cache):
    """Return ``(grad_x, grad_gain, grad_bias)``."""
    xhat, inv, gain = cache
    n = xhat.shape[-1]
    red = tuple(range(grad_out.ndim - 1))
    grad_gain = (grad_out * xhat).sum(axis=red)
    grad_bias = grad_out.sum(axis=red)
    gx = grad_out * gain
    grad_x = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).sum(axis=-1, keepdims=True))
    return grad_x, grad_gain, grad_bias


class LayerNorm:
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = np.ones(dim)
        self.bias = np.zeros(dim)
        self.eps = eps
        self.grad_gain = np.zeros(dim)
        self.grad_bias = np.zeros(dim)
        self._cache = None

    def forward(self, x):
        y, self._cache = layernorm_forward(x, self.gain, self.bias, self.eps)
        return y

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("LayerNorm.backward called before forward")
        gx, self.grad_gain, self.grad_bias = layernorm_backward(
            grad_out, self._cache)
        return gx

    def params(self) -> Params:
        return {"gain": self.gain, "bias": self.bias}

    def grads(self) -> Params:
        return {"gain": self.grad_gain, "bias": self.grad_bias}


# -- attention --------------------------------------------------------------

def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class MultiHeadSelfAttention:
    """Multi-head scaled dot-product self-attention without biases.

    Token matrices are (T, D) or batched (B, T, D); each token is a row, so
    ``Q = X W_q^T`` and a single token maps to ``W_o W_v x``.
    """

    def __init__(self, dim: int, heads: int,
                 rng: Optional[np.random.Generator] = None):
        if heads < 1 or dim % heads:
            raise ConfigError(
                f"model dim {dim} is not divisible by {heads} heads")
        rng = np.random.default_rng() if rng is None else rng
        self.dim = dim
        self.heads = heads
        self.W_q = uniform_init(rng, (dim, dim), dim)
        self.W_k = uniform_init(rng, (dim, dim), dim)
        self.W_v = uniform_init(rng, (dim, dim), dim)
        self.W_o = uniform_init(rng, (dim, dim), dim)
        self._grads = {k: np.zeros((dim, dim)) for k in self.params()}
        self._cache = None
        self.last_weights = None

    def _split(self, Z):
        B, T, _ = Z.shape
        dh = self.dim // self.heads
        return Z.reshape(B, T, self.heads, dh).transpose(0, 2, 1, 3)

    def _merge(self, Z):
        B, H, T, dh = Z.shape
        return Z.transpose(0, 2, 1, 3).reshape(B, T, H * dh)

    def forward(self, X):
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        if single:
            X = X[None]
        if X.shape[-1] != self.dim:
            raise DimensionError(
                f"expected token dim {self.dim}, got {X.shape[-1]}")
        dh = self.dim // self.heads
        Q = self._split(X @ self.W_q.T)
        K = self._split(X @ self.W_k.T)
        V = self._split(X @ self.W_v.T)
        A = softmax(Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dh))
        C = self._merge(A @ V)
        Y = C @ self.W_o.T
        self._cache = (X, Q, K, V, A, C, single)
        self.last_weights = A[0] if single else A
        return Y[0] if single else Y

    def backward(self, grad_out):
        if self._cache is None:
            raise StateError("attention backward called before forward")
        X, Q, K, V, A, C, single = self._cache
        dY = np.asarray(grad_out, dtype=np.float64)
        if single:
            dY = dY[None]
        dh = self.dim // self.heads
        flat = lambda Z: Z.reshape(-1, Z.shape[-1])  # noqa: E731
        g = self._grads
        g["W_o"] = flat(dY).T @ flat(C)
        dC = self._split(dY @ self.W_o)
        dA = dC @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dC
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) / np.sqrt(dh)
        dQ = self._merge(dS @ K)
        dK = self._merge(dS.transpose(0, 1, 3, 2) @ Q)
        dV = self._merge(dV)
        g["W_q"] = flat(dQ).T @ flat(X)
        g["W_k"] = flat(dK).T @ flat(X)
        g["W_v"] = flat(dV).T @ flat(X)
        dX = dQ @ self.W_q + dK @ self.W_k + dV @ self.W_v
        return dX[0] if single else dX

    def params(self) -> Params:
        return {"W_q": self.W_q, "W_k": self.W_k, "W_v": self.W_v,
                "W_o": self.W_o}

    def grads(self) -> Params:
        return dict(self._grads)


def self_attention_forward(X, attn: MultiHeadSelfAttention):
    return attn.forward(X)


# -- optimizers -------------------------------------------------------------

@dataclass
class OptimState:
    """Adam / AdamW hyperparameters plus per-parameter moment buffers."""

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("adam", "adamw"):
            raise ConfigError(f"unknown optimizer kind {self.kind!r}")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("betas must lie in [0, 1)")


def optimizer_step(params: Params, grads: Params, state: OptimState,
                   names: Optional[Iterable[str]] = None) -> Params:
    """Apply one Adam/AdamW update in place and return ``params``.

    Only ``names`` are updated when given (used to freeze tensors). Any
    non-finite gradient aborts the step before anything is modified.

    Adam folds ``weight_decay`` into the gradient (L2); AdamW applies it
    directly to the weights, decoupled from the adaptive scaling.
    """
    names = list(params) if names is None else list(names)
    for name in names:
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient for {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in names:
        p = params[name]
        g = grads[name]
        if state.kind == "adam" and state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        if m.shape != p.shape:
            raise DimensionError(f"moment buffer shape mismatch for {name!r}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.kind == "adamw" and state.weight_decay:
            p -= state.lr * state.weight_decay * p
        p -= update
    return params


# -- gradient checking ------------------------------------------------------

def numerical_gradient(f: Callable[[], float], param: np.ndarray,
                       h: float = 1e-6) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. ``param``, perturbed in place."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = param[idx]
        param[idx] = old + h
        fp = f()
        param[idx] = old - h
        fm = f()
        param[idx] = old
        grad[idx] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_check(f: Callable[[], float], params, analytic_grads,
                      h: float = 1e-6, floor: float = 1e-5) -> float:
    """Largest per-coordinate relative error between analytic and numeric
    gradients.

    Parameters
    ----------
    f : callable
        Zero-argument function that reads ``params`` and returns a scalar.
    params : ndarray or sequence of ndarray
        Arrays perturbed in place (restored afterwards).
    analytic_grads : ndarray or sequence of ndarray
        Gradients matching ``params``.
    h : float
        Central-difference step.
    floor : float
        Lower bound on the denominator ``max(|a|, |n|)`` so that
        coordinates with (near) zero gradient are compared absolutely.
    """
    if isinstance(params, np.ndarray):
        params, analytic_grads = [params], [analytic_grads]
    worst = 0.0
    for p, a in zip(params, analytic_grads):
        n = numerical_gradient(f, p, h)
        a = np.asarray(a, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom, initial=0.0)))
    return worst


# -- RBL1 checkpoints -------------------------------------------------------

CHECKPOINT_MAGIC = b"RBL1"


def save_checkpoint(path, tensors: Params) -> None:
    """Write tensors as little-endian RBL1 records.

    Each record is ``u32 name_len, name (utf-8), u32 rows, u32 cols``
    followed by ``rows*cols`` float64 values in row-major order. Vectors
    are stored as a single row.
    """
    chunks = [CHECKPOINT_MAGIC]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim == 1:
            arr = arr[None, :]
        elif arr.ndim != 2:
            arr = arr.reshape(arr.shape[0], -1)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<II", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path) -> Params:
    """Read an RBL1 file into ``{name: (rows, cols) array}``."""
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    out = {}
    pos = 4
    while pos < len(data):
        if pos + 4 > len(data):
            raise FormatError("truncated record header", pos)
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if pos + n + 8 > len(data):
            raise FormatError("truncated record header", pos)
        name = data[pos:pos + n].decode("utf-8")
        pos += n
        rows, cols = struct.unpack_from("<II", data, pos)
        pos += 8
        nbytes = 8 * rows * cols
        if pos + nbytes > len(data):
            raise FormatError(f"truncated data for tensor {name!r}", pos)
        out[name] = np.frombuffer(data, "<f8", rows * cols, pos).reshape(
            rows, cols).astype(np.float64)
        pos += nbytes
    return out


def assign_params(target: Params, loaded: Params) -> None:
    """Copy loaded checkpoint tensors into existing parameter arrays."""
    for name, arr in target.items():
        if name not in loaded:
            raise FormatError(f"checkpoint lacks tensor {name!r}", 0)
        src = loaded[name]
        if src.size != arr.size:
            raise DimensionError(f"shape mismatch for tensor {name!r}")
        arr[...] = src.reshape(arr.shape)
