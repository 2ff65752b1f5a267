"""Multilayer perceptrons on flat parameter vectors.

Parameters of a network live in one flat float64 array.  Layout is
layer-major; within a layer the weight matrix of shape ``(n_out, n_in)``
comes first (row-major), followed by the ``n_out`` biases.  Federated
averaging, soft target updates and checkpoints all operate on this raw
array, so none of them needs to know the architecture.

Forward and backward passes accept a single vector or a batch (rows are
samples).  Parameter gradients of a batch are summed over rows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("linear", "relu", "tanh", "sigmoid")
BLOB_MAGIC = b"AEROFDV1"


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        object.__setattr__(self, "activations", tuple(self.activations))
        validate_spec(self)

    @classmethod
    def build(cls, n_in, hidden, n_out, hidden_act="tanh", out_act="linear"):
        sizes = (n_in, *hidden, n_out)
        acts = (hidden_act,) * len(hidden) + (out_act,)
        return cls(sizes, acts)

    @property
    def n_in(self):
        return self.layer_sizes[0]

    @property
    def n_out(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        return _layout(self)[-1]


def validate_spec(spec):
    sizes, acts = spec.layer_sizes, spec.activations
    if len(sizes) < 2:
        raise ConfigError(f"an MLP needs at least 2 layers, got {len(sizes)}")
    if any(n < 1 for n in sizes):
        raise ConfigError(f"layer sizes must be positive, got {sizes}")
    if len(acts) != len(sizes) - 1:
        raise ConfigError(
            f"need {len(sizes) - 1} activations for {len(sizes)} layers, got {len(acts)}"
        )
    bad = [a for a in acts if a not in ACTIVATIONS]
    if bad:
        raise ConfigError(f"unknown activation(s) {bad}; choose from {ACTIVATIONS}")


@lru_cache(maxsize=None)
def _layout(spec):
    # (w_start, b_start, n_in, n_out) per layer, then the total length
    out, pos = [], 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        out.append((pos, pos + n_in * n_out, n_in, n_out))
        pos += n_in * n_out + n_out
    return tuple(out), pos


def param_count(spec):
    return _layout(spec)[1]


def unpack(spec, params):
    """Return ``[(W, b), ...]`` as views into ``params``."""
    layers, total = _layout(spec)
    if params.shape != (total,):
        raise ShapeError(f"expected {total} parameters, got shape {params.shape}")
    return [
        (params[w0:b0].reshape(n_out, n_in), params[b0:b0 + n_out])
        for w0, b0, n_in, n_out in layers
    ]


def mlp_init(spec, seed):
    """Glorot-uniform weights, zero biases."""
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    params = np.zeros(param_count(spec))
    for W, _ in unpack(spec, params):
        n_out, n_in = W.shape
        limit = np.sqrt(6.0 / (n_in + n_out))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
    return params


def _activate(name, z):
    if name == "linear":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    # numerically safe logistic
    return np.exp(-np.logaddexp(0.0, -z))


def _activation_grad(name, z, a):
    if name == "linear":
        return np.ones_like(a)
    if name == "relu":
        return (z > 0).astype(a.dtype)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def _as_batch(x, n, what):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != n:
        raise ShapeError(f"{what}: expected trailing dimension {n}, got shape {x.shape}")
    return xb, single


def forward_trace(spec, params, x):
    """Run the net on a batch, keeping pre-activations and activations.

    Returns ``(zs, acts)`` where ``acts[0]`` is the input batch.
    """
    xb, _ = _as_batch(x, spec.n_in, "mlp input")
    zs, acts = [], [xb]
    a = xb
    for (W, b), name in zip(unpack(spec, params), spec.activations):
        z = a @ W.T + b
        a = _activate(name, z)
        zs.append(z)
        acts.append(a)
    return zs, acts


def mlp_forward(spec, params, x):
    x = np.asarray(x, dtype=float)
    _, acts = forward_trace(spec, params, x)
    out = acts[-1]
    return out[0] if x.ndim == 1 else out


def mlp_backward(spec, params, x, upstream, trace=None):
    """Reverse-mode gradients of ``sum(output * upstream)``.

    ``trace`` may be passed from a previous :func:`forward_trace` call on
    the same inputs to skip the recomputation.

    Returns ``(param_grad, input_grad)``; ``input_grad`` has the shape of ``x``.
    """
    x = np.asarray(x, dtype=float)
    zs, acts = trace if trace is not None else forward_trace(spec, params, x)
    g, _ = _as_batch(upstream, spec.n_out, "upstream gradient")
    if g.shape[0] != acts[0].shape[0]:
        raise ShapeError(f"batch mismatch: input {acts[0].shape[0]} rows, upstream {g.shape[0]}")

    layers = unpack(spec, params)
    grad = np.zeros_like(params)
    grads = unpack(spec, grad)
    for i in range(len(layers) - 1, -1, -1):
        g = g * _activation_grad(spec.activations[i], zs[i], acts[i + 1])
        dW, db = grads[i]
        dW[...] = g.T @ acts[i]
        db[...] = g.sum(axis=0)
        g = g @ layers[i][0]
    return grad, (g[0] if x.ndim == 1 else g)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.epsilon <= 0:
            raise ConfigError(f"Adam epsilon must be positive, got {self.epsilon}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")

    @classmethod
    def zeros(cls, n, lr=1e-3, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, lr, beta1, beta2, epsilon)


def adam_step(params, grads, state):
    """One bias-corrected Adam update.  Inputs are left untouched."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ShapeError(
            f"adam_step shapes differ: params {params.shape}, grads {grads.shape}, "
            f"state {state.first_moment.shape}"
        )
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError(f"non-finite gradient at index {bad[0]}", index=int(bad[0]))

    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
    m_hat = m / (1 - state.beta1 ** t)
    v_hat = v / (1 - state.beta2 ** t)
    new_params = params - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, replace(state, first_moment=m, second_moment=v, step_count=t)


def clip_by_global_norm(grads, max_norm=10.0):
    norm = float(np.linalg.norm(grads))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def soft_update(target, source, tau):
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must lie in [0, 1], got {tau}")
    target = np.asarray(target, dtype=float)
    source = np.asarray(source, dtype=float)
    if target.shape != source.shape:
        raise ShapeError(f"soft_update shapes differ: {target.shape} vs {source.shape}")
    if tau == 1.0:
        return source.copy()
    if tau == 0.0:
        return target.copy()
    mixed = target + tau * (source - target)
    # rounding may step an ulp outside the segment; clamp back onto it
    return np.clip(mixed, np.minimum(target, source), np.maximum(target, source))


def hard_copy_every_c(step, c, target, source):
    """Periodic hard target sync: the source on multiples of ``c``."""
    if c < 1:
        raise ConfigError(f"copy period must be >= 1, got {c}")
    return np.array(source, dtype=float) if step % c == 0 else target


# -- serialization --------------------------------------------------------

def params_to_blob(params):
    params = np.ascontiguousarray(params, dtype="<f8")
    return BLOB_MAGIC + struct.pack("<I", params.size) + params.tobytes()


def params_from_blob(blob):
    if blob[:8] != BLOB_MAGIC:
        raise ValueError("not a parameter blob (bad magic)")
    (n,) = struct.unpack("<I", blob[8:12])
    body = blob[12:]
    if len(body) != 8 * n:
        raise ValueError(f"blob declares {n} values but carries {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").astype(float)


def params_to_text(params):
    return "".join(f"{float(v)!r}\n" for v in params)


def params_from_text(text):
    return np.array([float(line) for line in text.split()], dtype=float)


def save_params(path, params):
    Path(path).write_bytes(params_to_blob(params))


def load_params(path):
    return params_from_blob(Path(path).read_bytes())


def spec_to_dict(spec):
    return {"layer_sizes": list(spec.layer_sizes), "activations": list(spec.activations)}


def spec_from_dict(d):
    return MlpSpec(tuple(d["layer_sizes"]), tuple(d["activations"]))


@dataclass
class Net:
    """A network plus its optimizer state; the mutable training unit."""

    spec: MlpSpec
    params: np.ndarray
    adam: AdamState = field(default=None)

    @classmethod
    def create(cls, spec, seed, lr=1e-3):
        params = mlp_init(spec, seed)
        return cls(spec, params, AdamState.zeros(params.size, lr=lr))

    def __call__(self, x):
        return mlp_forward(self.spec, self.params, x)

    def apply_grad(self, grad, max_norm=10.0):
        self.params, self.adam = adam_step(self.params, clip_by_global_norm(grad, max_norm), self.adam)

    def copy(self):
        return Net(self.spec, self.params.copy(), replace(
            self.adam,
            first_moment=self.adam.first_moment.copy(),
            second_moment=self.adam.second_moment.copy(),
        ))
