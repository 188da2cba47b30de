"""Dense MLPs with hand-written backprop, Adam, and finite-difference checks.

Parameters live in one flat float64 buffer; per-layer weights and biases are
views into it, so optimizers and Polyak averaging work on the flat vector.
Weights are stored as ``(fan_in, fan_out)`` so a layer is ``h @ W + b``.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class NonFiniteError(ArithmeticError):
    """A tensor that must be finite contained inf or nan."""

    def __init__(self, name: str, detail: str = ""):
        self.tensor = name
        msg = f"non-finite values in {name}"
        super().__init__(f"{msg}: {detail}" if detail else msg)


def check_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(name)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if min((self.input_dim, self.output_dim, *self.hidden)) < 1:
            raise ValueError(f"all layer widths must be >= 1: {self}")
        if self.hidden_activation != "relu" or self.output_activation != "identity":
            raise ValueError("only relu hidden layers and identity outputs are supported")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def shapes(self) -> list[tuple[tuple[int, int], tuple[int]]]:
        w = self.widths
        return [((w[i], w[i + 1]), (w[i + 1],)) for i in range(len(w) - 1)]

    @property
    def size(self) -> int:
        return sum(a * b + b for (a, b), _ in self.shapes)

    def to_json(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden), "output_dim": self.output_dim,
                "hidden_activation": self.hidden_activation, "output_activation": self.output_activation}

    @classmethod
    def from_json(cls, d: dict) -> "MlpSpec":
        return cls(int(d["input_dim"]), tuple(d["hidden"]), int(d["output_dim"]),
                   d.get("hidden_activation", "relu"), d.get("output_activation", "identity"))


@dataclass
class ParamStore:
    """Flat parameter vector plus per-layer ``(W, b)`` views into it."""

    spec: MlpSpec
    flat: np.ndarray
    layers: list[tuple[np.ndarray, np.ndarray]] = field(init=False, repr=False)

    def __post_init__(self):
        self.flat = np.ascontiguousarray(self.flat, dtype=np.float64)
        if self.flat.shape != (self.spec.size,):
            raise ValueError(f"expected {self.spec.size} parameters, got {self.flat.shape}")
        self.layers = []
        off = 0
        for wshape, bshape in self.spec.shapes:
            n = wshape[0] * wshape[1]
            W = self.flat[off:off + n].reshape(wshape)
            off += n
            b = self.flat[off:off + bshape[0]]
            off += bshape[0]
            self.layers.append((W, b))

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "ParamStore":
        return cls(spec, np.zeros(spec.size))

    @classmethod
    def from_layers(cls, spec: MlpSpec, layers) -> "ParamStore":
        return cls(spec, np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in layers]))

    def copy(self) -> "ParamStore":
        return ParamStore(self.spec, self.flat.copy())

    def flatten(self) -> np.ndarray:
        return self.flat.copy()

    @classmethod
    def unflatten(cls, spec: MlpSpec, flat: np.ndarray) -> "ParamStore":
        return cls(spec, np.array(flat, dtype=np.float64, copy=True))


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamStore:
    """Glorot-uniform weights, zero biases."""
    params = ParamStore.zeros(spec)
    for W, _ in params.layers:
        fan_in, fan_out = W.shape
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # input to each layer
    pre: list[np.ndarray]  # pre-activation of each layer


def mlp_forward(spec: MlpSpec, params: ParamStore, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected input batch of shape (n, {spec.input_dim}), got {x.shape}")
    inputs, pre = [], []
    h = x
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        inputs.append(h)
        z = h @ W + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
    return h, MlpCache(inputs, pre)


def mlp_backward(
    spec: MlpSpec, params: ParamStore, cache: MlpCache, grad_out: np.ndarray
) -> tuple[ParamStore, np.ndarray]:
    """Reverse-mode gradients of ``sum(grad_out * forward(x))``.

    Returns the parameter gradient (same layout as ``params``) and the
    gradient with respect to the input batch.
    """
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise ValueError(f"output gradient shape {g.shape} != output shape {cache.pre[-1].shape}")
    grads = ParamStore.zeros(spec)
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        W, _ = params.layers[i]
        if i != last:
            g = g * (cache.pre[i] > 0.0)
        gW, gb = grads.layers[i]
        np.matmul(cache.inputs[i].T, g, out=gW)
        gb[...] = g.sum(axis=0)
        g = g @ W.T
    return grads, g


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: ParamStore | np.ndarray, lr: float = 3e-4, **kw) -> "AdamState":
        n = params.flat.size if isinstance(params, ParamStore) else np.size(params)
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(state: AdamState, params, grads):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` are both :class:`ParamStore` or both arrays.
    Returns ``(new_params, new_state)``; the inputs are not modified.
    Raises :class:`NonFiniteError` instead of applying a non-finite gradient.
    """
    is_store = isinstance(params, ParamStore)
    p = params.flat if is_store else np.asarray(params, dtype=np.float64)
    g = grads.flat if isinstance(grads, ParamStore) else np.asarray(grads, dtype=np.float64)
    if p.shape != g.shape or p.shape != state.m.shape:
        raise ValueError(f"shape mismatch: params {p.shape}, grads {g.shape}, moments {state.m.shape}")
    check_finite("gradient", g)
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new_p = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
    if is_store:
        return ParamStore(params.spec, new_p), new_state
    return new_p, new_state


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat_x, flat_g = x.reshape(-1), g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        fp = f(x)
        flat_x[i] = orig - h
        fm = f(x)
        flat_x[i] = orig
        flat_g[i] = (fp - fm) / (2.0 * h)
    return g


def gradient_check(
    function: Callable[[np.ndarray], tuple[float, np.ndarray]], point: np.ndarray, h: float = 1e-5
) -> float:
    """Max relative error between ``function``'s analytic gradient and central differences.

    ``function(x)`` must return ``(value, gradient)``. The per-coordinate
    error is ``|ga - gn| / max(1e-8, |ga| + |gn|)``.
    """
    point = np.array(point, dtype=np.float64)
    _, analytic = function(point.copy())
    numeric = numeric_gradient(lambda x: float(function(x)[0]), point, h)
    if point.size == 0:
        return 0.0
    return float(relative_errors(analytic, numeric).max())


def encode_array(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def decode_array(text: str, size: int | None = None) -> np.ndarray:
    arr = np.frombuffer(base64.b64decode(text.encode("ascii"), validate=True), dtype="<f8").astype(np.float64)
    if size is not None and arr.size != size:
        raise ValueError(f"expected {size} values, decoded {arr.size}")
    return arr


def params_to_json(params: ParamStore) -> dict:
    """Bit-exact JSON form: spec metadata plus base64 little-endian float64."""
    return {"spec": params.spec.to_json(), "dtype": "<f8", "encoding": "base64",
            "data": encode_array(params.flat)}


def params_from_json(doc: dict) -> ParamStore:
    if doc.get("dtype") != "<f8" or doc.get("encoding") != "base64":
        raise ValueError("unsupported parameter encoding")
    spec = MlpSpec.from_json(doc["spec"])
    return ParamStore(spec, decode_array(doc["data"], spec.size))
