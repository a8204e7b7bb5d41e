"""RBM layers and exact forward/reverse propagation through a stack.

A layer couples h_{k-1} (previous, "visible" side) to h_k (next, "hidden"
side) through the bilinear energy  h_k' W h_{k-1} + a' h_k + b' h_{k-1}.
Classification propagates a clamped input upward through the forward Bayes
conditionals; generation clamps the output and propagates downward through
the backward conditionals. Pair distributions are indexed little-endian with
h_k in the low bits: pair index = idx(h_k) + 2**n * idx(h_{k-1}).

Energies are handled in log space (softplus / logsumexp) so large weights
never overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import jsonio
from .errors import CapacityError, SchemaError
from .states import (
    MAX_DIM,
    BinaryState,
    Distribution,
    OutputVector,
    delta_distribution,
    state_matrix,
)

MODEL_FORMAT_VERSION = 1

CLASSIFICATION = "classification"
GENERATION = "generation"


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


@dataclass
class RbmLayer:
    """One layer's weights: square coupling W plus biases a (h_k) and b (h_{k-1})."""

    W: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        n = a.size
        if W.shape != (n, n) or b.shape != (n,):
            raise ValueError(
                f"layer shapes must be W:(n,n), a:(n,), b:(n,); got {W.shape}, {a.shape}, {b.shape}"
            )
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        for arr in (W, a, b):
            arr.setflags(write=False)
        self.W, self.a, self.b = W, a, b

    @property
    def n(self) -> int:
        return self.a.size

    def transposed(self) -> "RbmLayer":
        """The layer with the two sides swapped: (W, a, b) -> (W', b, a)."""
        return RbmLayer(self.W.T.copy(), self.b.copy(), self.a.copy())


@dataclass
class RbmStack:
    """Ordered stack of N same-width layers; layer k connects h_{k-1} to h_k."""

    layers: list[RbmLayer]
    seed: int | None = None
    training: dict | None = None

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a stack needs at least one layer")
        n = self.layers[0].n
        if any(layer.n != n for layer in self.layers):
            raise ValueError("all layers must share the same width")

    @property
    def n(self) -> int:
        return self.layers[0].n

    @property
    def depth(self) -> int:
        return len(self.layers)


@dataclass
class ConditionedFlow:
    """Per-layer distributions produced by propagating one conditioning value.

    ``dists[k]`` is the layer-k distribution for k = 0..N in both directions.
    The boundary entry (k=0 for classification, k=N for generation) is the
    clamp seed; generation seeds at a real-valued y use the product-Bernoulli
    extension of the clamp delta (they coincide for binary y).
    """

    direction: str
    conditioning: BinaryState | OutputVector
    dists: list[Distribution] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.dists) - 1

    def terminal(self) -> Distribution:
        """q_N for classification, q~_0 for generation."""
        return self.dists[-1] if self.direction == CLASSIFICATION else self.dists[0]


def joint_distribution(layer: RbmLayer) -> Distribution:
    """Exact joint over (h_k, h_{k-1}) pairs; log partition recorded in log_norm."""
    n = layer.n
    if 2 * n > MAX_DIM:
        raise CapacityError(f"pair space needs 2n={2*n} bits, cap is {MAX_DIM}")
    S = state_matrix(n)
    energy = S @ layer.W @ S.T + (S @ layer.a)[:, None] + (S @ layer.b)[None, :]
    log_z = float(logsumexp(energy))
    # pair index = idx(h_k) + 2**n * idx(h_{k-1}): h_k varies fastest => 'F' order
    probs = np.exp(energy - log_z).flatten(order="F")
    return Distribution(probs, log_norm=log_z)


def _factorized_conditional(logits: np.ndarray) -> Distribution:
    """Product-Bernoulli distribution with per-component logits, normalized exactly."""
    S = state_matrix(logits.size)
    log_norm = float(_softplus(logits).sum())
    logp = S @ logits - log_norm
    return Distribution(np.exp(logp - logsumexp(logp)), log_norm=log_norm)


def forward_conditional(layer: RbmLayer, h_prev: BinaryState) -> Distribution:
    """t_k(h_k | h_{k-1}): Bernoulli per component with logits W h_prev + a."""
    return _factorized_conditional(layer.W @ h_prev.as_array() + layer.a)


def backward_conditional(layer: RbmLayer, h_next) -> Distribution:
    """t_k(h_{k-1} | h_k): Bernoulli per component with logits W' h_next + b.

    h_next may be a BinaryState, an OutputVector, or a real array: the bilinear
    energy extends continuously in the clamped value, which is what makes the
    output derivative (and hence poisoning analysis) well defined.
    """
    h = h_next.as_array() if hasattr(h_next, "as_array") else np.asarray(h_next, float)
    return _factorized_conditional(layer.W.T @ h + layer.b)


def log_forward_transfer(layer: RbmLayer) -> np.ndarray:
    """Matrix log t(h_k=i | h_{k-1}=j) over all state pairs, column-normalized."""
    S = state_matrix(layer.n)
    Z = layer.W @ S.T + layer.a[:, None]
    return S @ Z - _softplus(Z).sum(axis=0)[None, :]


def log_backward_transfer(layer: RbmLayer) -> np.ndarray:
    """Matrix log t(h_{k-1}=j | h_k=i), indexed [j, i]."""
    S = state_matrix(layer.n)
    Z = layer.W.T @ S.T + layer.b[:, None]
    return S @ Z - _softplus(Z).sum(axis=0)[None, :]


def bernoulli_seed(y, n: int) -> Distribution:
    """Product-Bernoulli distribution with mean y; the delta clamp for binary y.

    Components outside [0, 1] (poison overshoot) saturate at the boundary,
    since a Bernoulli mean cannot leave the unit interval.
    """
    yv = y.as_array() if hasattr(y, "as_array") else np.asarray(y, float)
    yv = np.clip(yv, 0.0, 1.0)
    S = state_matrix(n)
    probs = np.prod(S * yv + (1 - S) * (1 - yv), axis=1)
    total = probs.sum()
    return Distribution(probs / total, log_norm=float(np.log(total)) if total != 1.0 else 0.0)


def classify_propagate(stack: RbmStack, x: BinaryState) -> ConditionedFlow:
    """q_0 = delta at x; q_k = sum_h' t_k(.|h') q_{k-1}(h') for k = 1..N."""
    if x.n != stack.n:
        raise ValueError(f"input has {x.n} bits, stack expects {stack.n}")
    dists = [delta_distribution(x)]
    for layer in stack.layers:
        F = np.exp(log_forward_transfer(layer))
        dists.append(Distribution(F @ dists[-1].probs, log_norm=0.0))
    return ConditionedFlow(CLASSIFICATION, x, dists)


def generate_propagate(stack: RbmStack, y) -> ConditionedFlow:
    """Clamp the output at y and propagate down through backward conditionals.

    The step off the clamp evaluates the layer-N backward conditional directly
    at y (continuous in y); the remaining steps are exact mixtures.
    """
    cond = y if isinstance(y, OutputVector) else OutputVector(tuple(float(v) for v in y))
    if cond.n != stack.n:
        raise ValueError(f"output has {cond.n} components, stack expects {stack.n}")
    dists = [backward_conditional(stack.layers[-1], cond)]
    for layer in stack.layers[-2::-1]:
        G = np.exp(log_backward_transfer(layer))
        dists.append(Distribution(G @ dists[-1].probs, log_norm=0.0))
    dists.reverse()
    dists.append(bernoulli_seed(cond, stack.n))
    return ConditionedFlow(GENERATION, cond, dists)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------

_MODEL_FIELDS = {"format_version", "n", "N", "layers", "seed", "training"}
_MODEL_OPTIONAL = {"config_hash", "tool_version"}


def model_to_json(stack: RbmStack, config_hash: str | None = None,
                  tool_version: str | None = None) -> str:
    """Serialize a stack to the versioned model document (17-digit floats)."""
    n = stack.n
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "n": n,
        "N": stack.depth,
        "layers": [
            {
                "W": [float(v) for v in layer.W.reshape(-1)],  # row-major
                "a": [float(v) for v in layer.a],
                "b": [float(v) for v in layer.b],
            }
            for layer in stack.layers
        ],
        "seed": stack.seed,
        "training": stack.training,
    }
    if config_hash is not None:
        doc["config_hash"] = config_hash
    if tool_version is not None:
        doc["tool_version"] = tool_version
    return jsonio.dumps(doc)


def _expect(doc: dict, key: str, types, path: str):
    if key not in doc:
        raise SchemaError("missing required field", path=f"{path}{key}")
    if not isinstance(doc[key], types):
        raise SchemaError(
            f"expected {'/'.join(t.__name__ for t in types)}", path=f"{path}{key}"
        )
    return doc[key]


def _float_list(raw, length: int, path: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != length:
        raise SchemaError(f"expected a list of {length} numbers", path=path)
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise SchemaError("expected numeric entries", path=path)
    return np.array(raw, dtype=float)


def model_from_json(text: str) -> RbmStack:
    try:
        doc = jsonio.loads(text)
    except ValueError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("model document must be a JSON object")
    unknown = set(doc) - _MODEL_FIELDS - _MODEL_OPTIONAL
    if unknown:
        raise SchemaError("unknown field", path=sorted(unknown)[0])
    version = _expect(doc, "format_version", (int,), "")
    if version != MODEL_FORMAT_VERSION:
        raise SchemaError(
            f"unsupported version {version}, expected {MODEL_FORMAT_VERSION}",
            path="format_version",
        )
    n = _expect(doc, "n", (int,), "")
    depth = _expect(doc, "N", (int,), "")
    raw_layers = _expect(doc, "layers", (list,), "")
    if len(raw_layers) != depth:
        raise SchemaError(f"expected {depth} layers, found {len(raw_layers)}", path="layers")
    layers = []
    for k, raw in enumerate(raw_layers):
        path = f"layers[{k}]."
        if not isinstance(raw, dict):
            raise SchemaError("layer must be an object", path=f"layers[{k}]")
        if set(raw) != {"W", "a", "b"}:
            raise SchemaError("layer must have exactly the fields W, a, b", path=f"layers[{k}]")
        W = _float_list(raw["W"], n * n, path + "W").reshape(n, n)
        a = _float_list(raw["a"], n, path + "a")
        b = _float_list(raw["b"], n, path + "b")
        layers.append(RbmLayer(W, a, b))
    seed = doc.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise SchemaError("seed must be an integer or null", path="seed")
    training = doc.get("training")
    if training is not None and not isinstance(training, dict):
        raise SchemaError("training must be an object or null", path="training")
    return RbmStack(layers, seed=seed, training=training)


def save_model(stack: RbmStack, path, config_hash: str | None = None,
               tool_version: str | None = None) -> None:
    Path(path).write_text(model_to_json(stack, config_hash, tool_version))


def load_model(path) -> RbmStack:
    return model_from_json(Path(path).read_text())
