"""Per-layer stability matrices of the coupling flow and relevance analysis.

One layer's transfer, read in coupling coordinates, is a smooth map
g_in -> g_out between complete-basis coupling vectors. Its Jacobian is the
layer's stability matrix, estimated here by central finite differences with
exact function evaluations. Eigenvalue moduli above one would mark relevant
(unstable) directions; singular values measure direction-dependent gain, and
the ordered product of the per-layer matrices is the cumulative sensitivity
that a clamp perturbation inherits by the time it reaches the far end.

Matrices are evaluated along the actual flow, not at an assumed fixed point:
shallow stacks may never converge, and the honest object is the Jacobian
where the flow actually is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rbm
from .couplings import (
    CouplingVector,
    FixedPointVerdict,
    FlowTrace,
    OperatorBasis,
    extract_couplings,
    flow_trace,
    reconstruct_distribution,
)
from .errors import PositivityError
from .rbm import CLASSIFICATION, GENERATION, RbmStack
from .states import Distribution


def layer_map(stack: RbmStack, k: int, g_in: CouplingVector, direction: str) -> CouplingVector:
    """Apply layer k's transfer to the distribution encoded by g_in.

    Classification maps the layer-(k-1) couplings to layer-k couplings;
    generation maps layer-k couplings to layer-(k-1) couplings.
    """
    if not g_in.basis.complete:
        raise ValueError("layer_map requires a complete operator basis")
    if not 1 <= k <= stack.depth:
        raise ValueError(f"layer index {k} outside 1..{stack.depth}")
    layer = stack.layers[k - 1]
    dist = reconstruct_distribution(g_in)
    if direction == CLASSIFICATION:
        transfer = np.exp(rbm.log_forward_transfer(layer))
    elif direction == GENERATION:
        transfer = np.exp(rbm.log_backward_transfer(layer))
    else:
        raise ValueError(f"unknown direction {direction!r}")
    out = transfer @ dist.probs
    return extract_couplings(Distribution(out / out.sum()), g_in.basis)


@dataclass
class StabilityMatrix:
    """Finite-difference Jacobian of one layer's coupling map.

    Entry (alpha, beta) estimates d g_out_alpha / d g_in_beta at ``at``.
    """

    layer_index: int
    direction: str
    matrix: np.ndarray
    fd_step: float
    at: CouplingVector

    def eigenvalues(self) -> np.ndarray:
        """Complex eigenvalues sorted by descending modulus (map is not symmetric)."""
        ev = np.linalg.eigvals(self.matrix)
        return ev[np.argsort(-np.abs(ev), kind="stable")]

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def spectral_radius(self) -> float:
        return float(np.abs(np.linalg.eigvals(self.matrix)).max())


def stability_matrix(stack: RbmStack, k: int, g_at: CouplingVector, direction: str,
                     fd_step: float = 1e-4) -> StabilityMatrix:
    """Central differences column by column: second-order accurate, deterministic."""
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    m = g_at.basis.size
    matrix = np.empty((m, m))
    for beta in range(m):
        gp = g_at.g.copy()
        gm = g_at.g.copy()
        gp[beta] += fd_step
        gm[beta] -= fd_step
        try:
            out_p = layer_map(stack, k, CouplingVector(g_at.basis, gp), direction)
            out_m = layer_map(stack, k, CouplingVector(g_at.basis, gm), direction)
        except PositivityError as exc:
            raise PositivityError(
                f"stability column beta={beta} (layer {k}, {direction}): {exc}"
            ) from exc
        column = (out_p.g - out_m.g) / (2.0 * fd_step)
        if not np.all(np.isfinite(column)):
            raise PositivityError(
                f"stability column beta={beta} (layer {k}, {direction}) is not finite"
            )
        matrix[:, beta] = column
    return StabilityMatrix(k, direction, matrix, fd_step, g_at)


@dataclass
class RelevanceReport:
    """Spectra of every along-flow stability matrix plus cumulative gain.

    ``has_relevant`` is True when some eigenvalue modulus exceeds 1 + tol_eig.
    ``cumulative_top_singular`` is the top singular value of the ordered
    product of the matrices (identity when the stack has a single layer);
    for generation this is the overall sensitivity of the deepest couplings
    to the clamp-side couplings.
    """

    direction: str
    fd_step: float
    tol_eig: float
    matrices: list[StabilityMatrix]
    has_relevant: bool
    max_eigenvalue_modulus: float
    cumulative_top_singular: float
    fixed_point_matrix: StabilityMatrix | None = None

    def to_doc(self) -> dict:
        layers = []
        for sm in self.matrices:
            ev = sm.eigenvalues()
            layers.append({
                "layer_index": sm.layer_index,
                "eigenvalues": [[float(v.real), float(v.imag)] for v in ev],
                "singular_values": [float(s) for s in sm.singular_values()],
            })
        return {
            "direction": self.direction,
            "fd_step": self.fd_step,
            "tol_eig": self.tol_eig,
            "has_relevant": self.has_relevant,
            "max_eigenvalue_modulus": self.max_eigenvalue_modulus,
            "cumulative_top_singular": self.cumulative_top_singular,
            "layers": layers,
        }


def _flow_matrices(stack: RbmStack, flow: FlowTrace, fd_step: float) -> list[StabilityMatrix]:
    """Stability matrices at every interior step, ordered as the chain-rule product.

    Classification: T(k) at g(k-1) for k = 2..N, product T(N) ... T(2).
    Generation: T~(k) at g~(k) for k = N-1..1, product T~(1) ... T~(N-1).
    Returned in product order (leftmost factor first).
    """
    by_layer = dict(zip(flow.layer_indices, flow.couplings))
    mats = []
    if flow.direction == CLASSIFICATION:
        for k in range(stack.depth, 1, -1):
            mats.append(stability_matrix(stack, k, by_layer[k - 1], CLASSIFICATION, fd_step))
    else:
        for k in range(1, stack.depth):
            mats.append(stability_matrix(stack, k, by_layer[k], GENERATION, fd_step))
    return mats


def relevance_report(stack: RbmStack, flow: FlowTrace, fd_step: float = 1e-4,
                     tol_eig: float = 1e-6,
                     verdict: FixedPointVerdict | None = None) -> RelevanceReport:
    """Estimate all along-flow stability matrices and classify their spectra."""
    if not flow.basis.complete:
        raise ValueError("relevance analysis requires a complete operator basis")
    if flow.basis.n != stack.n or len(flow.couplings) != stack.depth:
        raise ValueError("flow trace does not match the stack")
    mats = _flow_matrices(stack, flow, fd_step)
    m = flow.basis.size
    product = np.eye(m)
    max_mod = 0.0
    for sm in mats:
        product = product @ sm.matrix
        max_mod = max(max_mod, sm.spectral_radius())
    top_singular = float(np.linalg.svd(product, compute_uv=False)[0]) if m else 0.0
    fp_matrix = None
    if verdict is not None and verdict.converged:
        # the deepest map, re-evaluated at the settled couplings g*
        k_star = stack.depth if flow.direction == CLASSIFICATION else 1
        fp_matrix = stability_matrix(stack, k_star, verdict.fixed_couplings,
                                     flow.direction, fd_step)
    return RelevanceReport(
        direction=flow.direction,
        fd_step=fd_step,
        tol_eig=tol_eig,
        matrices=mats,
        has_relevant=bool(max_mod > 1.0 + tol_eig),
        max_eigenvalue_modulus=max_mod,
        cumulative_top_singular=top_singular,
        fixed_point_matrix=fp_matrix,
    )


def cumulative_jacobian_product(stack: RbmStack, y, fd_step: float = 1e-4,
                                basis: OperatorBasis | None = None) -> np.ndarray:
    """Ordered product T~(1) ... T~(N-1) along the generation flow at y.

    This is the matrix that multiplies the clamp-side coupling sensitivity in
    the chain rule; identity for a single-layer stack.
    """
    basis = basis if basis is not None else OperatorBasis.complete_basis(stack.n)
    flow = flow_trace(stack, y, GENERATION, basis)
    mats = _flow_matrices(stack, flow, fd_step)
    product = np.eye(basis.size)
    for sm in mats:
        product = product @ sm.matrix
    return product
