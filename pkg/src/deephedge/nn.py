"""Minimal dense-network engine: sigmoid MLPs, reverse-mode gradients,
Adam, and Polyak-averaged target copies.

Everything is plain numpy in float64. The engine covers exactly what the
hedging networks need; it is not a general autodiff system.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit


class ShapeMismatchError(ValueError):
    """Raised when tensors do not chain with the declared layer sizes."""


class NonFiniteGradientError(FloatingPointError):
    """Raised by the optimizer instead of silently absorbing NaN/inf."""


@dataclass
class MlpParams:
    """Weights of a feedforward net; weights[l] has shape (out_l, in_l)."""

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "sigmoid"
    output_activation: str = "identity"

    def copy(self) -> "MlpParams":
        return MlpParams(list(self.layer_sizes),
                         [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         self.activation, self.output_activation)

    def tensors(self):
        """Weights then biases, a fixed flat order shared with AdamState."""
        return self.weights + self.biases


@dataclass
class MlpGrads:
    """Parameter gradients, same layout as MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def tensors(self):
        return self.weights + self.biases


@dataclass
class AdamState:
    """Adam moment buffers; lr is the only knob the experiments vary."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_mlp(layer_sizes, seed: int, zero_output_layer: bool = True) -> MlpParams:
    """Glorot-uniform hidden layers with a recorded seed.

    The output layer starts at zero by default so nets wrapped with skip
    connections begin exactly at their reference policy/value.
    """
    if len(layer_sizes) < 2:
        raise ShapeMismatchError("need at least input and output sizes")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    last = len(layer_sizes) - 2
    for l in range(len(layer_sizes) - 1):
        n_in, n_out = layer_sizes[l], layer_sizes[l + 1]
        if zero_output_layer and l == last:
            w = np.zeros((n_out, n_in))
        else:
            bound = np.sqrt(6.0 / (n_in + n_out))
            w = rng.uniform(-bound, bound, size=(n_out, n_in))
        weights.append(w)
        biases.append(np.zeros(n_out))
    return MlpParams(list(layer_sizes), weights, biases)


def init_adam(params: MlpParams, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    buf = lambda: [np.zeros_like(t) for t in params.tensors()]
    return AdamState(m=buf(), v=buf(), lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def _sigmoid(z):
    # expit is overflow-safe at both tails
    return expit(z)


def _check_batch(params: MlpParams, batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=float)
    if batch.ndim != 2 or batch.shape[1] != params.layer_sizes[0]:
        raise ShapeMismatchError(
            f"batch shape {batch.shape} does not match input size {params.layer_sizes[0]}")
    return batch


def forward_cached(params: MlpParams, batch: np.ndarray):
    """Forward pass keeping per-layer activations for a later backward."""
    if params.activation != "sigmoid" or params.output_activation != "identity":
        raise ValueError("engine supports sigmoid hidden / identity output only")
    h = _check_batch(params, batch)
    acts = [h]
    n_layers = len(params.weights)
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = z if l == n_layers - 1 else _sigmoid(z)
        acts.append(h)
    return h, acts


def forward(params: MlpParams, batch: np.ndarray) -> np.ndarray:
    """Deterministic forward pass, (n, d_in) -> (n, d_out)."""
    out, _ = forward_cached(params, batch)
    return out


def backward_from_cache(params: MlpParams, acts, upstream: np.ndarray):
    """Reverse-mode pass from stored activations.

    Returns (MlpGrads, input_grad) where input_grad is upstream contracted
    all the way back to the batch, shape (n, d_in).
    """
    upstream = np.asarray(upstream, dtype=float)
    if upstream.shape != (acts[0].shape[0], params.layer_sizes[-1]):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} does not match output size")
    n_layers = len(params.weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers
    delta = upstream
    for l in range(n_layers - 1, -1, -1):
        d_w[l] = delta.T @ acts[l]
        d_b[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l]
        if l > 0:
            a = acts[l]  # sigmoid output: derivative a(1-a)
            delta = delta * (a * (1.0 - a))
    return MlpGrads(d_w, d_b), delta


def backward(params: MlpParams, batch: np.ndarray, upstream: np.ndarray):
    """Convenience wrapper: forward for caches, then reverse-mode."""
    _, acts = forward_cached(params, batch)
    return backward_from_cache(params, acts, upstream)


def grad_norm(grads: MlpGrads) -> float:
    return float(np.sqrt(sum(float(np.sum(t * t)) for t in grads.tensors())))


def clip_grads(grads: MlpGrads, max_norm: float):
    """Scale gradients to max_norm if they exceed it; returns (grads, clipped)."""
    norm = grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, False
    scale = max_norm / norm
    for t in grads.tensors():
        t *= scale
    return grads, True


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState):
    """In-place bias-corrected Adam update; returns (params, state)."""
    p_tensors = params.tensors()
    g_tensors = grads.tensors()
    if len(p_tensors) != len(g_tensors):
        raise ShapeMismatchError("gradient layout does not match parameters")
    for g in g_tensors:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError("non-finite gradient in Adam step")
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step_count
    bc2 = 1.0 - b2 ** state.step_count
    for p, g, m, v in zip(p_tensors, g_tensors, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} vs param {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def soft_update(target: MlpParams, online: MlpParams, tau: float) -> MlpParams:
    """Polyak update target <- tau * online + (1 - tau) * target, in place."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if target.layer_sizes != online.layer_sizes:
        raise ShapeMismatchError("target and online nets differ in shape")
    for t, o in zip(target.tensors(), online.tensors()):
        t *= 1.0 - tau
        t += tau * o
    return target


# ---------------------------------------------------------------------------
# Checkpoint serialization: a keyed JSON tree with base64 float64 tensors.
# Little-endian bytes round-trip bit-exactly.
# ---------------------------------------------------------------------------

def _encode(obj):
    if isinstance(obj, np.ndarray):
        arr = np.ascontiguousarray(obj, dtype="<f8")
        return {"__tensor__": True, "shape": list(arr.shape),
                "data": base64.b64encode(arr.tobytes()).decode("ascii")}
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, MlpParams):
        return {"__mlp__": True,
                "layer_sizes": list(obj.layer_sizes),
                "weights": [_encode(w) for w in obj.weights],
                "biases": [_encode(b) for b in obj.biases],
                "activation": obj.activation,
                "output_activation": obj.output_activation}
    if isinstance(obj, AdamState):
        return {"__adam__": True,
                "m": [_encode(t) for t in obj.m], "v": [_encode(t) for t in obj.v],
                "step_count": obj.step_count, "lr": obj.lr,
                "beta1": obj.beta1, "beta2": obj.beta2, "eps": obj.eps}
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if obj.get("__tensor__"):
            raw = base64.b64decode(obj["data"])
            return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).copy()
        if obj.get("__mlp__"):
            return MlpParams(list(obj["layer_sizes"]),
                             [_decode(w) for w in obj["weights"]],
                             [_decode(b) for b in obj["biases"]],
                             obj["activation"], obj["output_activation"])
        if obj.get("__adam__"):
            return AdamState(m=[_decode(t) for t in obj["m"]],
                             v=[_decode(t) for t in obj["v"]],
                             step_count=obj["step_count"], lr=obj["lr"],
                             beta1=obj["beta1"], beta2=obj["beta2"], eps=obj["eps"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def save_tree(tree: dict, file_path) -> None:
    """Serialize a dict of tensors/nets/optimizer states to keyed JSON."""
    with open(file_path, "w") as f:
        json.dump(_encode(tree), f, sort_keys=True)


def load_tree(file_path) -> dict:
    with open(file_path) as f:
        return _decode(json.load(f))
