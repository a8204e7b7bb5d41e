"""Fisher information of the generated distribution and output poisoning.

The sensitivity of generation to the clamped output y is the FIM of
qgen_0(.|y) under perturbations of y. Two independent estimators are
provided: the chain rule (analytic clamp-side Jacobian pushed through the
per-layer stability matrices, then contracted with the operator covariance)
and a score oracle (direct finite differences of log qgen_0 in y). The top
FIM eigenvector, scaled to a max-norm budget below 0.5, is a perturbation
that rounding cannot see but that moves the generated distribution the most:
the strongest imperceptible poison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rbm
from .couplings import CouplingVector, OperatorBasis, flow_trace
from .errors import NoUnstableDirectionError
from .rbm import GENERATION, RbmStack
from .stability import stability_matrix
from .states import Dataset, Distribution, OutputVector, kl_divergence

CHAIN_RULE = "chain-rule"
SCORE_ORACLE = "score-oracle"

# a FIM whose top eigenvalue falls below this is treated as numerically zero
ZERO_FIM_TOL = 1e-12

# eigenvalue gap below which the top eigenspace is treated as degenerate
DEGENERACY_TOL = 1e-9


def last_layer_couplings(stack: RbmStack, y) -> tuple[CouplingVector, np.ndarray]:
    """Clamp-side couplings and their exact Jacobian in y.

    The layer-N backward conditional at y has the factorized energy
    -sum_j ((y' W_N)_j + b_N_j) h_j, so only singleton couplings are nonzero
    and the Jacobian rows are -W_N columns. No finite differences involved.
    """
    yv = y.as_array() if hasattr(y, "as_array") else np.asarray(y, dtype=float)
    basis = OperatorBasis.complete_basis(stack.n)
    W = stack.layers[-1].W
    b = stack.layers[-1].b
    logits = W.T @ yv + b
    g = np.zeros(basis.size)
    jac = np.zeros((basis.size, stack.n))
    for row, subset in enumerate(basis.subsets):
        if len(subset) == 1:
            j = subset[0]
            g[row] = -logits[j]
            jac[row, :] = -W[:, j]
    return CouplingVector(basis, g), jac


def coupling_jacobian(stack: RbmStack, y, fd_step: float = 1e-4) -> np.ndarray:
    """d (deepest couplings) / d y via the chain rule along the actual flow.

    Multiplies the generation stability matrices T~(1) ... T~(N-1), each
    evaluated at the flow's own couplings, into the analytic clamp-side
    Jacobian. For N = 1 the product is empty and the clamp Jacobian is exact.
    """
    cv_last, jac_last = last_layer_couplings(stack, y)
    if stack.depth == 1:
        return jac_last
    flow = flow_trace(stack, _as_output(y, stack.n), GENERATION, cv_last.basis)
    by_layer = dict(zip(flow.layer_indices, flow.couplings))
    product = np.eye(cv_last.basis.size)
    for k in range(1, stack.depth):
        sm = stability_matrix(stack, k, by_layer[k], GENERATION, fd_step)
        product = product @ sm.matrix
    return product @ jac_last


def operator_covariance(dist: Distribution, basis: OperatorBasis) -> np.ndarray:
    """Cov[O_alpha, O_alpha'] under dist by exact enumeration; symmetric PSD."""
    if basis.n != dist.n:
        raise ValueError(f"basis over {basis.n} bits, distribution over {dist.n}")
    M = basis.operator_matrix()
    mu = M.T @ dist.probs
    C = M.T @ (dist.probs[:, None] * M) - np.outer(mu, mu)
    return 0.5 * (C + C.T)


@dataclass
class FimResult:
    """Symmetrized FIM with its eigen-decomposition (descending eigenvalues)."""

    y: OutputVector
    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # orthonormal columns matching eigenvalues
    method: str
    warning: str | None = None

    @property
    def top_eigenvalue(self) -> float:
        return float(self.eigenvalues[0])


def _as_output(y, n: int) -> OutputVector:
    if isinstance(y, OutputVector):
        return y
    return OutputVector(tuple(float(v) for v in y))


def _finish(y: OutputVector, F: np.ndarray, method: str) -> FimResult:
    asym = float(np.abs(F - F.T).max())
    scale = max(float(np.abs(F).max()), 1e-300)
    warning = None
    if asym / scale > 1e-6:
        warning = f"asymmetry {asym:.3e} (relative {asym / scale:.3e}) before symmetrization"
    F = 0.5 * (F + F.T)
    evals, evecs = np.linalg.eigh(F)
    order = np.argsort(evals)[::-1]
    return FimResult(y, F, evals[order], evecs[:, order], method, warning)


def fim(stack: RbmStack, y, method: str = CHAIN_RULE,
        fd_step: float = 1e-4) -> FimResult:
    """FIM of qgen_0(.|y) with respect to y, by either estimator.

    chain-rule: F = J' C J with J the coupling Jacobian and C the operator
    covariance of the generated distribution. score-oracle: F_ij =
    E[s_i s_j] with scores s_i(x) = d log qgen_0(x|y) / d y_i from central
    differences; an independent check of the same object.
    """
    yv = _as_output(y, stack.n)
    if method == CHAIN_RULE:
        J = coupling_jacobian(stack, yv, fd_step)
        q0 = rbm.generate_propagate(stack, yv).dists[0]
        C = operator_covariance(q0, OperatorBasis.complete_basis(stack.n))
        return _finish(yv, J.T @ C @ J, method)
    if method == SCORE_ORACLE:
        base = yv.as_array()
        n = stack.n
        scores = np.zeros((2**n, n))
        for i in range(n):
            up, dn = base.copy(), base.copy()
            up[i] += fd_step
            dn[i] -= fd_step
            log_up = np.log(rbm.generate_propagate(stack, up).dists[0].probs)
            log_dn = np.log(rbm.generate_propagate(stack, dn).dists[0].probs)
            scores[:, i] = (log_up - log_dn) / (2.0 * fd_step)
        q0 = rbm.generate_propagate(stack, yv).dists[0]
        F = scores.T @ (q0.probs[:, None] * scores)
        return _finish(yv, F, method)
    raise ValueError(f"unknown FIM method {method!r}")


@dataclass
class PoisonVector:
    """Budget-scaled top-eigenvector perturbation of one output."""

    delta_y: np.ndarray
    budget: float
    source_eigenvalue: float

    def __post_init__(self):
        d = np.asarray(self.delta_y, dtype=float)
        if d.size == 0 or np.abs(d).max() == 0.0:
            raise ValueError("a poison must be nonzero")
        if abs(np.abs(d).max() - self.budget) > 1e-12:
            raise ValueError("poison max-norm must equal the budget")
        d = d.copy()
        d.setflags(write=False)
        self.delta_y = d


def strongest_poison(fim_result: FimResult, budget: float) -> PoisonVector:
    """budget * v / max-norm(v) along the top FIM eigenvector.

    The sign is fixed so the first nonzero component is positive. If the top
    eigenvalue is degenerate within 1e-9, the candidate in the top eigenspace
    maximizing the predicted quadratic response of the budget-scaled vector
    (v'Fv after max-norm normalization) is chosen: max-norm scaling breaks
    the tie even though the raw Rayleigh quotients coincide.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    evals = fim_result.eigenvalues
    if evals[0] < ZERO_FIM_TOL:
        raise NoUnstableDirectionError(
            f"FIM is numerically zero (top eigenvalue {evals[0]:.3e}); "
            "no poison direction is available for this output"
        )
    group = np.nonzero(evals >= evals[0] - DEGENERACY_TOL)[0]
    best_v, best_response = None, -np.inf
    F = fim_result.matrix
    for idx in group:
        v = fim_result.eigenvectors[:, idx]
        u = v / np.abs(v).max()
        response = float(u @ F @ u)
        if response > best_response:
            best_v, best_response = u, response
    first = np.nonzero(np.abs(best_v) > 1e-12)[0][0]
    if best_v[first] < 0:
        best_v = -best_v
    return PoisonVector(budget * best_v, budget, float(evals[0]))


@dataclass
class PoisonRecord:
    """Per-output poisoning outcome for the report."""

    y: OutputVector
    delta_y: np.ndarray | None
    top_eigenvalue: float
    kl_discrepancy: float
    decode_ok: bool
    poisoned: bool

    def to_doc(self) -> dict:
        return {
            "y": [float(v) for v in self.y.components],
            "delta_y": None if self.delta_y is None else [float(v) for v in self.delta_y],
            "top_eigenvalue": self.top_eigenvalue,
            "kl_discrepancy": self.kl_discrepancy,
            "decode_ok": self.decode_ok,
            "poisoned": self.poisoned,
        }


@dataclass
class PoisonReport:
    budget: float
    method: str
    fd_step: float
    records: list[PoisonRecord]

    @property
    def any_poisoned(self) -> bool:
        return any(r.poisoned for r in self.records)

    def to_doc(self) -> dict:
        return {
            "budget": self.budget,
            "method": self.method,
            "fd_step": self.fd_step,
            "entries": [r.to_doc() for r in self.records],
        }


def poison_dataset(stack: RbmStack, dataset: Dataset, budget: float,
                   method: str = CHAIN_RULE,
                   fd_step: float = 1e-4) -> tuple[Dataset, PoisonReport]:
    """Poison every distinct label of a clean dataset within the budget.

    Labels whose FIM is numerically zero pass through unpoisoned and are
    flagged. Componentwise rounding of every emitted label is checked to
    recover the clean label (guaranteed for budget < 0.5). The report
    quantifies each label's generation discrepancy as
    KL(qgen_0(.|y) || qgen_0(.|y+dy)).
    """
    if not 0 <= budget < 0.5:
        raise ValueError("budget must lie in [0, 0.5) so decodes stay unambiguous")
    for _, y, _ in dataset.items():
        if not y.is_clean:
            raise ValueError(f"poisoning expects clean binary labels, got {y.components}")
    per_label: dict[tuple, tuple[OutputVector, PoisonRecord]] = {}
    for _, y, _ in dataset.items():
        if y.components in per_label:
            continue
        if budget == 0.0:
            per_label[y.components] = (y, PoisonRecord(y, None, 0.0, 0.0, True, False))
            continue
        result = fim(stack, y, method=method, fd_step=fd_step)
        try:
            poison = strongest_poison(result, budget)
        except NoUnstableDirectionError:
            per_label[y.components] = (
                y, PoisonRecord(y, None, result.top_eigenvalue, 0.0, True, False)
            )
            continue
        emitted = OutputVector(tuple(y.as_array() + poison.delta_y))
        decode_ok = emitted.rounded().bits == tuple(int(v) for v in y.components)
        if not decode_ok:
            raise AssertionError(
                f"decode invariance violated for y={y.components} at budget {budget}"
            )
        discrepancy = kl_divergence(
            rbm.generate_propagate(stack, y).dists[0],
            rbm.generate_propagate(stack, emitted).dists[0],
        )
        per_label[y.components] = (
            emitted,
            PoisonRecord(y, poison.delta_y, poison.source_eigenvalue,
                         discrepancy, decode_ok, True),
        )
    pairs = [(x, per_label[y.components][0]) for x, y, _ in dataset.items()]
    records = [rec for _, rec in per_label.values()]
    poisoned = Dataset(n=dataset.n, pairs=pairs, weights=dataset.weights.copy())
    return poisoned, PoisonReport(budget, method, fd_step, records)
