"""Univariate ReLU MLPs with exact backpropagation, and Adam.

A :class:`ShapeNetwork` holds ``n_nets`` independent MLPs with a common
architecture ``[1, h_1, ..., h_L, C]``.  GNAN needs one such network per
feature; stacking them lets a single batched ``matmul`` evaluate all of them
at once, which matters when there are hundreds of features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .exceptions import ContractError, NumericError

SERIAL_VERSION = 1


INITS = ("uniform", "kaiming")


def init_layer(rng, n_nets, fan_in, fan_out, init="uniform", dtype=np.float64):
    """Weights and biases for one dense layer of every network in a bank.

    ``"uniform"`` draws weights and biases from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    ``"kaiming"`` draws weights from ``U(-sqrt(6/fan_in), sqrt(6/fan_in))`` and zeroes biases.
    """
    if init == "kaiming":
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(n_nets, fan_in, fan_out))
        b = np.zeros((n_nets, 1, fan_out))
    elif init == "uniform":
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(n_nets, fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=(n_nets, 1, fan_out))
    else:
        raise ContractError(f"unknown init {init!r}; expected one of {INITS}")
    return w.astype(dtype), b.astype(dtype)


class ShapeNetwork:
    """A bank of independent univariate MLPs ``R -> R^C``.

    Hidden layers use ReLU followed by inverted dropout; the output layer is
    linear.  Dropout is never applied to the scalar input or to the output.

    Parameters
    ----------
    layer_dims : sequence of int
        ``[1, h_1, ..., h_L, C]``.
    n_nets : int, default=1
        Number of independent networks in the bank.
    dropout : float, default=0.0
        Drop probability for hidden activations in train mode.
    rng : numpy.random.Generator, optional
        Initialization stream.
    init : {"uniform", "kaiming"}, default="uniform"
        See :func:`init_layer`.
    dtype : numpy dtype, default=float64
    """

    def __init__(self, layer_dims: Sequence[int], n_nets: int = 1, dropout: float = 0.0,
                 rng: Optional[np.random.Generator] = None, init: str = "uniform", dtype=np.float64):
        layer_dims = tuple(int(h) for h in layer_dims)
        if len(layer_dims) < 2 or layer_dims[0] != 1 or min(layer_dims) < 1:
            raise ContractError(f"layer_dims must look like [1, ..., C], got {layer_dims}")
        if not 0.0 <= dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {dropout}")
        if n_nets < 1:
            raise ContractError("n_nets must be >= 1")
        self.layer_dims = layer_dims
        self.n_nets = int(n_nets)
        self.dropout = float(dropout)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(0) if rng is None else rng
        layers = [init_layer(rng, self.n_nets, a, b, init, self.dtype) for a, b in zip(layer_dims[:-1], layer_dims[1:])]
        self.weights = [w for w, _ in layers]
        self.biases = [b for _, b in layers]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> List[np.ndarray]:
        """Parameter arrays in a fixed order: ``W_0, b_0, W_1, b_1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def _as_input(self, x):
        a = np.asarray(x, dtype=self.dtype)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim == 1:
            a = np.broadcast_to(a, (self.n_nets, a.shape[0]))
        if a.ndim != 2 or a.shape[0] != self.n_nets:
            raise ContractError(f"input must be scalar, (n,) or ({self.n_nets}, n); got shape {np.shape(x)}")
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite input to shape network")
        return a

    def forward(self, x, train: bool = False, rng: Optional[np.random.Generator] = None):
        """Evaluate every network in the bank.

        Parameters
        ----------
        x : scalar, array of shape (n,) or (n_nets, n)
            A 1-D input is fed to every network.
        train : bool
            Draw dropout masks from ``rng`` when true.

        Returns
        -------
        out : ndarray of shape (n_nets, n, C)
        cache : dict
            Activations and dropout masks for :meth:`backward`.
        """
        a = self._as_input(x)[:, :, None]
        use_dropout = train and self.dropout > 0.0
        if use_dropout and rng is None:
            raise ContractError("train-mode forward with dropout needs an rng")
        keep = 1.0 - self.dropout
        layers = []
        last = self.n_layers - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = np.matmul(a, w) + b
            mask = None
            if l < last:
                h = np.maximum(z, 0.0)
                if use_dropout:
                    mask = (rng.random(z.shape) < keep).astype(self.dtype) / keep
                    h = h * mask
            else:
                h = z
            layers.append((a, z, mask))
            a = h
        cache = {"net": id(self), "layers": layers, "shape": a.shape}
        return a, cache

    def __call__(self, x) -> np.ndarray:
        """Eval-mode outputs of shape (n_nets, n, C)."""
        return self.forward(x)[0]

    def backward(self, cache, upstream):
        """Backpropagate ``upstream`` (same shape as the forward output).

        Returns
        -------
        grads : list of ndarray
            Gradients aligned with :meth:`parameters`.
        dx : ndarray of shape (n_nets, n)
            Gradient with respect to the inputs.
        """
        if cache.get("net") != id(self):
            raise ContractError("forward cache belongs to a different network")
        g = np.asarray(upstream, dtype=self.dtype)
        if g.shape != cache["shape"]:
            raise ContractError(f"upstream gradient shape {g.shape} != output shape {cache['shape']}")
        layers = cache["layers"]
        grads = [None] * (2 * self.n_layers)
        for l in range(self.n_layers - 1, -1, -1):
            a_in, _, _ = layers[l]
            grads[2 * l] = np.matmul(a_in.transpose(0, 2, 1), g)
            grads[2 * l + 1] = g.sum(axis=1, keepdims=True)
            g = np.matmul(g, self.weights[l].transpose(0, 2, 1))
            if l > 0:
                _, z_prev, mask_prev = layers[l - 1]
                g = g * (z_prev > 0)
                if mask_prev is not None:
                    g = g * mask_prev
        return grads, g[:, :, 0]

    def eval_one(self, index: int, x: float) -> np.ndarray:
        """Eval-mode output of network ``index`` at scalar ``x``, shape (C,).

        A layer-by-layer loop independent of the batched :meth:`forward`.
        """
        x = float(x)
        if not np.isfinite(x):
            raise NumericError("non-finite input to shape network")
        a = np.array([x], dtype=self.dtype)
        last = self.n_layers - 1
        for l in range(self.n_layers):
            z = a @ self.weights[l][index] + self.biases[l][index, 0]
            a = np.maximum(z, 0.0) if l < last else z
        return a

    def copy(self) -> "ShapeNetwork":
        new = object.__new__(ShapeNetwork)
        new.layer_dims = self.layer_dims
        new.n_nets = self.n_nets
        new.dropout = self.dropout
        new.dtype = self.dtype
        new.weights = [w.copy() for w in self.weights]
        new.biases = [b.copy() for b in self.biases]
        return new

    def select(self, index: int) -> "ShapeNetwork":
        """A single-network bank holding network ``index`` (shares no memory)."""
        new = self.copy()
        new.n_nets = 1
        new.weights = [w[index:index + 1].copy() for w in self.weights]
        new.biases = [b[index:index + 1].copy() for b in self.biases]
        return new

    def to_dict(self) -> dict:
        return {
            "version": SERIAL_VERSION,
            "layer_dims": list(self.layer_dims),
            "n_nets": self.n_nets,
            "dropout": self.dropout,
            "dtype": self.dtype.name,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b[:, 0, :].tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeNetwork":
        if d.get("version") != SERIAL_VERSION:
            raise ContractError(f"unsupported shape-network version {d.get('version')!r}")
        net = cls(d["layer_dims"], n_nets=d["n_nets"], dropout=d["dropout"], dtype=d.get("dtype", "float64"))
        for l, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            w = np.asarray(w, dtype=net.dtype)
            b = np.asarray(b, dtype=net.dtype)[:, None, :]
            if w.shape != net.weights[l].shape or b.shape != net.biases[l].shape:
                raise ContractError(f"layer {l}: stored shapes {w.shape}, {b.shape} do not match layer_dims")
            net.weights[l] = w
            net.biases[l] = b
        return net


@dataclass
class AdamState:
    """Moment buffers and hyperparameters for :func:`adam_step`.

    ``weight_decay`` is classic L2: ``weight_decay * p`` is added to the
    gradient before the moment updates.
    """

    m: List[np.ndarray]
    v: List[np.ndarray]
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], learning_rate=1e-3, weight_decay=0.0, **kw):
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params],
                   learning_rate=learning_rate, weight_decay=weight_decay, **kw)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractError("params, grads and optimizer state have different lengths")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ContractError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state
