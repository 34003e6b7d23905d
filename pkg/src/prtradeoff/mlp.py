"""Fully connected ReLU networks with hand-written reverse mode and Adam.

Weights are stored as ``(fan_in, fan_out)`` matrices so a batch ``x`` of
shape ``(batch, fan_in)`` maps through ``x @ W + b``. ReLU follows every
affine layer except the last.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prtradeoff.errors import ContractViolationError, InvalidParameterError
from prtradeoff.rng import make_rng


@dataclass(frozen=True)
class MlpArch:
    input_dim: int
    hidden: int = 16
    n_layers: int = 7
    output_dim: int = 1

    def __post_init__(self):
        if min(self.input_dim, self.hidden, self.n_layers, self.output_dim) < 1:
            raise InvalidParameterError(f"invalid architecture {self}")

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [self.hidden] * (self.n_layers - 1) + [self.output_dim]


GENERATOR_ARCH = MlpArch(input_dim=1)
DISCRIMINATOR_ARCH = MlpArch(input_dim=2)


@dataclass(frozen=True)
class MlpParams:
    """Layer weights and biases; also used to carry parameter gradients."""

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        if len(ws) == 0 or len(ws) != len(bs):
            raise InvalidParameterError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InvalidParameterError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and ws[i - 1].shape[1] != w.shape[0]:
                raise InvalidParameterError(f"layer {i} does not chain with layer {i - 1}")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def arrays(self) -> list[np.ndarray]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        arrays = list(arrays)
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))

    def map(self, fn, *others: "MlpParams") -> "MlpParams":
        """Apply ``fn`` array-wise across this and ``others``."""
        return MlpParams.from_arrays(
            fn(*arrs) for arrs in zip(self.arrays, *(o.arrays for o in others))
        )

    def zeros_like(self) -> "MlpParams":
        return self.map(np.zeros_like)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])

    def with_flat(self, vec) -> "MlpParams":
        out, k = [], 0
        for a in self.arrays:
            out.append(np.asarray(vec[k : k + a.size], dtype=np.float64).reshape(a.shape))
            k += a.size
        return MlpParams.from_arrays(out)

    def to_dict(self) -> dict:
        return {
            "layers": [
                {"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(self.weights, self.biases)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpParams":
        layers = d["layers"]
        return cls(
            tuple(np.array(l["weight"], dtype=np.float64).reshape(len(l["weight"]), -1) for l in layers),
            tuple(np.array(l["bias"], dtype=np.float64) for l in layers),
        )


def init_mlp(arch: MlpArch, seed: int) -> MlpParams:
    """He initialisation: ``W ~ N(0, 2 / fan_in)``, zero biases."""
    rng = make_rng(seed)
    dims = arch.dims
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        ws.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
        bs.append(np.zeros(fan_out))
    return MlpParams(tuple(ws), tuple(bs))


@dataclass(frozen=True)
class ForwardCache:
    params: MlpParams
    inputs: tuple  # input to each layer
    pre: tuple  # pre-activation of each layer


def mlp_forward(p: MlpParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate the network on a batch of shape ``(batch, input_dim)``."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.ndim != 2 or h.shape[1] != p.input_dim:
        raise InvalidParameterError(f"expected input of width {p.input_dim}, got shape {np.shape(x)}")
    inputs, pre = [], []
    last = p.n_layers - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
    return h, ForwardCache(p, tuple(inputs), tuple(pre))


def mlp_backward(p: MlpParams, cache: ForwardCache, grad_out) -> tuple[MlpParams, np.ndarray]:
    """Gradients of ``sum(output * grad_out)`` w.r.t. the parameters and the input.

    ``cache`` must come from ``mlp_forward`` on this very ``p``; a cache
    produced by another parameter object is rejected.
    """
    if cache.params is not p:
        raise ContractViolationError("forward cache belongs to different parameters")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None] if p.output_dim == 1 else g[None, :]
    if g.shape != cache.pre[-1].shape:
        raise InvalidParameterError(f"grad_out shape {g.shape} != output shape {cache.pre[-1].shape}")
    dws, dbs = [None] * p.n_layers, [None] * p.n_layers
    for i in range(p.n_layers - 1, -1, -1):
        dws[i] = cache.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ p.weights[i].T
        if i > 0:
            g = g * (cache.pre[i - 1] > 0)
    return MlpParams(tuple(dws), tuple(dbs)), g


def mlp_apply(p: MlpParams, x) -> np.ndarray:
    return mlp_forward(p, x)[0]


@dataclass(frozen=True)
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0


def adam_init(params: MlpParams) -> AdamState:
    z = params.zeros_like()
    return AdamState(z, z, 0)


def adam_step(
    state: AdamState,
    params: MlpParams,
    grads: MlpParams,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.9,
    eps: float = 1e-8,
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    for a, g, m in zip(params.arrays, grads.arrays, state.m.arrays):
        if a.shape != g.shape or a.shape != m.shape:
            raise InvalidParameterError(f"shape mismatch {a.shape} / {g.shape} / {m.shape}")
    t = state.step + 1
    m = state.m.map(lambda m_, g: beta1 * m_ + (1.0 - beta1) * g, grads)
    v = state.v.map(lambda v_, g: beta2 * v_ + (1.0 - beta2) * g * g, grads)
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    new = params.map(lambda p_, m_, v_: p_ - lr * (m_ / c1) / (np.sqrt(v_ / c2) + eps), m, v)
    return new, AdamState(m, v, t)
