"""Layerwise training of a stack against the mutual-information KL objective.

Each layer k is fit, with every other layer frozen, to the pair target

    r_k(h_k, h_{k-1}) = sum_{(x,y)} p(x,y) * qgen_k(h_k|y) * qcls_{k-1}(h_{k-1}|x)

by minimizing D_KL(r_k || t_k) over the layer's weights. The target does not
depend on layer k's own weights, so it is recomputed once per layer visit per
sweep. Gradients are exact (moment matching of an exponential family), so
plain descent with backtracking halving is enough and keeps runs auditable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import jsonio, rbm
from .errors import SchemaError, TrainingDivergedError
from .states import BinaryState, Dataset, Distribution, OutputVector, state_matrix

MAX_HALVINGS = 40

# tolerance for the weight-sum check when reading dataset files
LOAD_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1.0
    max_sweeps: int = 200
    inner_steps: int = 10
    tol: float = 1e-10
    seed: int = 0
    init_scale: float = 1.5

    def __post_init__(self):
        if self.learning_rate <= 0 or self.tol <= 0 or self.init_scale <= 0:
            raise ValueError("learning_rate, tol and init_scale must be positive")
        if self.max_sweeps < 1 or self.inner_steps < 1:
            raise ValueError("max_sweeps and inner_steps must be at least 1")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "max_sweeps": self.max_sweeps,
            "inner_steps": self.inner_steps,
            "tol": self.tol,
            "seed": self.seed,
            "init_scale": self.init_scale,
        }


@dataclass
class LayerTarget:
    """Normalized pair distribution a layer is trained towards."""

    joint: Distribution  # over (h_k, h_{k-1}) pairs, dim 4**n

    @property
    def n(self) -> int:
        return self.joint.n // 2

    def as_matrix(self) -> np.ndarray:
        """[i, j] = r(h_k = i, h_{k-1} = j)."""
        d = 2**self.n
        return self.joint.probs.reshape(d, d, order="F")


def assemble_joint(dataset: Dataset) -> Dataset:
    """The empirical joint p(x, y): duplicate pairs merged, order preserved."""
    if len(dataset) == 0:
        raise ValueError("cannot assemble a joint from an empty dataset")
    merged: dict[tuple, float] = {}
    order: list[tuple[BinaryState, OutputVector]] = []
    for x, y, w in dataset.items():
        key = (x.bits, y.components)
        if key not in merged:
            merged[key] = 0.0
            order.append((x, y))
        merged[key] += w
    weights = np.array([merged[(x.bits, y.components)] for x, y in order])
    return Dataset(n=dataset.n, pairs=order, weights=weights)


def _pair_targets(layers: list[rbm.RbmLayer], joint: Dataset) -> list[np.ndarray]:
    """Target matrices for every k = 1..N in one pass (flows shared per x, y)."""
    n = joint.n
    depth = len(layers)
    stack = rbm.RbmStack(layers)
    cls_flows: dict[tuple, list[np.ndarray]] = {}
    gen_flows: dict[tuple, list[np.ndarray]] = {}
    targets = [np.zeros((2**n, 2**n)) for _ in range(depth)]
    for x, y, w in joint.items():
        if x.bits not in cls_flows:
            cls_flows[x.bits] = [d.probs for d in rbm.classify_propagate(stack, x).dists]
        if y.components not in gen_flows:
            gen_flows[y.components] = [d.probs for d in rbm.generate_propagate(stack, y).dists]
        cf, gf = cls_flows[x.bits], gen_flows[y.components]
        for k in range(1, depth + 1):
            targets[k - 1] += w * np.outer(gf[k], cf[k - 1])
    return [t / t.sum() for t in targets]


def layer_target(stack: rbm.RbmStack, k: int, joint: Dataset) -> LayerTarget:
    """r_k marginalized over the dataset; k runs 1..N."""
    if not 1 <= k <= stack.depth:
        raise ValueError(f"layer index {k} outside 1..{stack.depth}")
    matrix = _pair_targets(list(stack.layers), joint)[k - 1]
    return LayerTarget(Distribution(matrix.flatten(order="F")))


def _layer_log_joint(layer: rbm.RbmLayer) -> np.ndarray:
    """log t_k over the pair matrix [i, j] = (h_k, h_{k-1})."""
    S = state_matrix(layer.n)
    energy = S @ layer.W @ S.T + (S @ layer.a)[:, None] + (S @ layer.b)[None, :]
    return energy - logsumexp(energy)


def layer_objective(layer: rbm.RbmLayer, target: LayerTarget) -> float:
    """D_KL(target || layer joint); the per-layer training objective."""
    r = target.as_matrix()
    logt = _layer_log_joint(layer)
    mask = r > 0
    return float(np.sum(r[mask] * (np.log(r[mask]) - logt[mask])))


def _pair_moments(P: np.ndarray, n: int):
    S = state_matrix(n)
    return S.T @ P @ S, S.T @ P.sum(axis=1), S.T @ P.sum(axis=0)


def kl_gradient(layer: rbm.RbmLayer, target: LayerTarget):
    """Exact gradient of D_KL(target || t_k): model moments minus target moments."""
    n = layer.n
    P_model = np.exp(_layer_log_joint(layer))
    Ehh_t, Eh_t, Ehp_t = _pair_moments(P_model, n)
    Ehh_r, Eh_r, Ehp_r = _pair_moments(target.as_matrix(), n)
    return Ehh_t - Ehh_r, Eh_t - Eh_r, Ehp_t - Ehp_r


def _descend(layer: rbm.RbmLayer, target: LayerTarget, config: TrainingConfig) -> rbm.RbmLayer:
    """inner_steps accepted-or-stationary descent steps with backtracking halving."""
    for _ in range(config.inner_steps):
        obj = layer_objective(layer, target)
        dW, da, db = kl_gradient(layer, target)
        step = config.learning_rate
        accepted = None
        for _ in range(MAX_HALVINGS):
            candidate = rbm.RbmLayer(layer.W - step * dW, layer.a - step * da,
                                     layer.b - step * db)
            if layer_objective(candidate, target) <= obj:
                accepted = candidate
                break
            step /= 2
        if accepted is None:
            break  # stationary within halving resolution
        layer = accepted
    return layer


def train_layerwise(n: int, depth: int, dataset: Dataset,
                    config: TrainingConfig) -> tuple[rbm.RbmStack, list[float]]:
    """Sweep k = 1..N until a full sweep improves the summed objective < tol.

    Returns the trained stack and the objective trace: entry 0 is the
    pre-training total, entry s the total after sweep s. Deterministic in
    (seed, config, dataset).
    """
    if dataset.n != n:
        raise ValueError(f"dataset is {dataset.n}-dimensional, expected {n}")
    joint = assemble_joint(dataset)
    rng = np.random.default_rng(config.seed)
    s = config.init_scale
    layers = [
        rbm.RbmLayer(rng.uniform(-s, s, (n, n)), rng.uniform(-s, s, n),
                     rng.uniform(-s, s, n))
        for _ in range(depth)
    ]

    def total_objective() -> float:
        mats = _pair_targets(layers, joint)
        return sum(
            layer_objective(layer, LayerTarget(Distribution(m.flatten(order="F"))))
            for layer, m in zip(layers, mats)
        )

    trace = [total_objective()]
    if not np.isfinite(trace[0]):
        raise TrainingDivergedError(0)
    for sweep in range(1, config.max_sweeps + 1):
        for k in range(1, depth + 1):
            target = layer_target(rbm.RbmStack(layers), k, joint)
            layers[k - 1] = _descend(layers[k - 1], target, config)
        total = total_objective()
        if not np.isfinite(total):
            raise TrainingDivergedError(sweep)
        trace.append(total)
        if trace[-2] - trace[-1] < config.tol:
            break
    stack = rbm.RbmStack(
        layers,
        seed=config.seed,
        training={"objective_final": float(trace[-1]), "sweeps": len(trace) - 1},
    )
    return stack, trace


# ---------------------------------------------------------------------------
# toy tasks
# ---------------------------------------------------------------------------

def make_task(name: str, n: int, seed: int = 0) -> Dataset:
    """Built-in desk-scale tasks: copy, parity, or a random teacher's labels."""
    xs = [BinaryState.from_index(n, i) for i in range(2**n)]
    if name == "copy":
        pairs = [(x, OutputVector.from_state(x)) for x in xs]
    elif name == "parity":
        pairs = []
        for x in xs:
            label = [0.0] * n
            label[0] = float(sum(x.bits) % 2)
            pairs.append((x, OutputVector(tuple(label))))
    elif name == "teacher":
        rng = np.random.default_rng(seed)
        layers = [
            rbm.RbmLayer(rng.uniform(-1.5, 1.5, (n, n)), rng.uniform(-1.5, 1.5, n),
                         rng.uniform(-1.5, 1.5, n))
            for _ in range(2)
        ]
        teacher = rbm.RbmStack(layers, seed=seed)
        pairs = []
        for x in xs:
            q = rbm.classify_propagate(teacher, x).dists[-1]
            best = BinaryState.from_index(n, int(np.argmax(q.probs)))
            pairs.append((x, OutputVector.from_state(best)))
    else:
        raise ValueError(f"unknown task {name!r}; choose copy, parity or teacher")
    return Dataset(n=n, pairs=pairs, weights=np.full(len(pairs), 1.0 / len(pairs)))


# ---------------------------------------------------------------------------
# dataset files (one JSON record per line)
# ---------------------------------------------------------------------------

def dataset_to_lines(dataset: Dataset) -> str:
    return "".join(
        jsonio.dumps_compact(
            {"x": list(x.bits), "y": list(y.components), "w": w}
        ) + "\n"
        for x, y, w in dataset.items()
    )


def dataset_from_lines(text: str) -> Dataset:
    pairs: list[tuple[BinaryState, OutputVector]] = []
    weights: list[float] = []
    n = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = jsonio.loads(line)
        except ValueError as exc:
            raise SchemaError(f"line {lineno} is not valid JSON: {exc}") from exc
        if not isinstance(rec, dict) or set(rec) != {"x", "y", "w"}:
            raise SchemaError("record must have exactly the fields x, y, w",
                              path=f"line {lineno}")
        try:
            x = BinaryState(tuple(int(v) for v in rec["x"]))
            y = OutputVector(tuple(float(v) for v in rec["y"]))
        except (TypeError, ValueError) as exc:
            raise SchemaError(str(exc), path=f"line {lineno}") from exc
        if not isinstance(rec["w"], (int, float)) or isinstance(rec["w"], bool):
            raise SchemaError("w must be a number", path=f"line {lineno}")
        if n is None:
            n = x.n
        pairs.append((x, y))
        weights.append(float(rec["w"]))
    if not pairs:
        raise SchemaError("dataset file contains no records")
    w = np.array(weights)
    if w.min() < 0 or abs(w.sum() - 1.0) > LOAD_WEIGHT_TOL:
        raise SchemaError(
            f"weights must be nonnegative and sum to 1 within {LOAD_WEIGHT_TOL}; "
            f"got sum {w.sum()!r}"
        )
    return Dataset(n=n, pairs=pairs, weights=w / w.sum())


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dataset_to_lines(dataset))


def load_dataset(path) -> Dataset:
    return dataset_from_lines(Path(path).read_text())
