"""Effective-Hamiltonian couplings, coupling flows, and fixed-point detection.

A strictly positive distribution q over n bits defines an energy
E(h) = -log q(h), unique up to an additive constant. Expanding E over the
monomial operators O_S(h) = prod_{i in S} h_i (nonempty S) gives the coupling
vector g: q(h) proportional to exp(-sum_S g_S O_S(h)). The constant
(empty-set) term is gauge: it lands in the normalizer and is never stored.

For the complete basis the expansion is exact and computed by Mobius
inversion over the subset lattice in O(n 2**n); truncated bases fall back to
a least-squares fit and are flagged approximate everywhere downstream.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.special import logsumexp

from . import rbm
from .errors import PositivityError
from .jsonio import fmt17
from .rbm import CLASSIFICATION, GENERATION, RbmStack
from .states import BinaryState, Distribution, OutputVector, state_matrix


@dataclass(frozen=True)
class OperatorBasis:
    """Ordered family of monomial operators indexed by nonempty subsets."""

    n: int
    subsets: tuple[tuple[int, ...], ...]
    complete: bool

    @classmethod
    def complete_basis(cls, n: int) -> "OperatorBasis":
        """All 2**n - 1 nonempty subsets, sorted by (size, lexicographic)."""
        subs = tuple(
            comb for size in range(1, n + 1) for comb in combinations(range(n), size)
        )
        return cls(n=n, subsets=subs, complete=True)

    @classmethod
    def truncated(cls, n: int, subsets) -> "OperatorBasis":
        """A validated subfamily; extraction with it is approximate."""
        seen = set()
        for s in subsets:
            t = tuple(sorted(s))
            if not t or t in seen or any(i < 0 or i >= n for i in t) or len(set(t)) != len(t):
                raise ValueError(f"invalid or duplicate subset {s!r} for n={n}")
            seen.add(t)
        subs = tuple(sorted(seen, key=lambda t: (len(t), t)))
        return cls(n=n, subsets=subs, complete=len(subs) == 2**n - 1)

    @property
    def size(self) -> int:
        return len(self.subsets)

    def masks(self) -> list[int]:
        return [sum(1 << i for i in s) for s in self.subsets]

    def operator_matrix(self) -> np.ndarray:
        """(2**n, size) 0/1 matrix M[h, alpha] = O_alpha(h)."""
        S = state_matrix(self.n)
        M = np.ones((2**self.n, self.size))
        for col, subset in enumerate(self.subsets):
            for i in subset:
                M[:, col] *= S[:, i]
        return M

    def labels(self) -> list[str]:
        """Column names like g{0} and g{0,2} used in CSV exports."""
        return ["g{" + ",".join(str(i) for i in s) + "}" for s in self.subsets]


@dataclass
class CouplingVector:
    """Coefficients g_alpha of one distribution's effective Hamiltonian."""

    basis: OperatorBasis
    g: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.g, dtype=float)
        if g.shape != (self.basis.size,):
            raise ValueError(f"expected {self.basis.size} couplings, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("couplings must be finite")
        g = g.copy()
        g.setflags(write=False)
        self.g = g

    def max_norm(self) -> float:
        return float(np.abs(self.g).max()) if self.g.size else 0.0


def _mobius(values: np.ndarray, n: int) -> np.ndarray:
    """Subset Mobius transform: out[S] = sum_{T subset S} (-1)^{|S|-|T|} values[T]."""
    out = values.copy()
    idx = np.arange(2**n)
    for i in range(n):
        has = (idx >> i) & 1 == 1
        out[idx[has]] -= out[idx[has] ^ (1 << i)]
    return out


def _zeta(values: np.ndarray, n: int) -> np.ndarray:
    """Subset sums: out[S] = sum_{T subset S} values[T] (inverse of _mobius)."""
    out = values.copy()
    idx = np.arange(2**n)
    for i in range(n):
        has = (idx >> i) & 1 == 1
        out[idx[has]] += out[idx[has] ^ (1 << i)]
    return out


def extract_couplings(dist: Distribution, basis: OperatorBasis) -> CouplingVector:
    """Couplings of dist's effective Hamiltonian (exact for a complete basis).

    The energy is E = -log probs; its multilinear coefficients come from
    Mobius inversion over indicator states (every binary state is the
    indicator of its support). Truncated bases use least squares on E with an
    explicit constant column absorbing the gauge term.
    """
    if basis.n != dist.n:
        raise ValueError(f"basis is over {basis.n} bits, distribution over {dist.n}")
    if not dist.strictly_positive:
        raise PositivityError("cannot take -log of a zero probability")
    energy = -np.log(dist.probs)
    if basis.complete:
        coeffs = _mobius(energy, basis.n)
        g = coeffs[basis.masks()]
    else:
        design = np.hstack([np.ones((dist.dim, 1)), basis.operator_matrix()])
        sol, *_ = np.linalg.lstsq(design, energy, rcond=None)
        g = sol[1:]
    return CouplingVector(basis, g)


def reconstruct_distribution(cv: CouplingVector) -> Distribution:
    """probs(h) = exp(-sum_S g_S O_S(h)) / Z, computed in log space."""
    n = cv.basis.n
    coeffs = np.zeros(2**n)
    coeffs[cv.basis.masks()] = cv.g
    energy = _zeta(coeffs, n)
    logp = -energy - logsumexp(-energy)
    log_z = float(logsumexp(-energy))
    return Distribution(np.exp(logp), log_norm=log_z)


@dataclass
class FlowTrace:
    """Couplings of the interior distributions along one propagation.

    ``layer_indices`` lists the layer index k of each entry in flow order:
    k = 1..N for classification, k = N-1..0 for generation. ``deltas[i]`` is
    the max-norm change from entry i to entry i+1.
    """

    direction: str
    conditioning: BinaryState | OutputVector
    basis: OperatorBasis
    layer_indices: list[int]
    couplings: list[CouplingVector]
    deltas: np.ndarray

    @property
    def approximate(self) -> bool:
        return not self.basis.complete


def flow_trace(stack: RbmStack, conditioning, direction: str,
               basis: OperatorBasis | None = None) -> FlowTrace:
    """Propagate, then extract couplings of every interior distribution."""
    basis = basis if basis is not None else OperatorBasis.complete_basis(stack.n)
    if direction == CLASSIFICATION:
        if not isinstance(conditioning, BinaryState):
            raise ValueError("classification flows are conditioned on a BinaryState")
        flow = rbm.classify_propagate(stack, conditioning)
        layer_indices = list(range(1, stack.depth + 1))
        dists = [flow.dists[k] for k in layer_indices]
    elif direction == GENERATION:
        flow = rbm.generate_propagate(stack, conditioning)
        layer_indices = list(range(stack.depth - 1, -1, -1))
        dists = [flow.dists[k] for k in layer_indices]
    else:
        raise ValueError(f"unknown direction {direction!r}")
    coupling_list = [extract_couplings(d, basis) for d in dists]
    deltas = np.array([
        float(np.abs(b.g - a.g).max()) if a.g.size else 0.0
        for a, b in zip(coupling_list, coupling_list[1:])
    ])
    return FlowTrace(direction, flow.conditioning, basis, layer_indices,
                     coupling_list, deltas)


@dataclass
class FixedPointVerdict:
    """Whether the tail of a coupling flow has stopped moving."""

    converged: bool
    tail_delta: float
    fixed_couplings: CouplingVector | None
    tol: float
    window: int


def detect_fixed_point(trace: FlowTrace, tol: float = 1e-3,
                       window: int = 2) -> FixedPointVerdict:
    """Converged iff every one of the last `window` steps moved less than tol."""
    if window < 1:
        raise ValueError("window must be at least 1")
    if window > trace.deltas.size:
        raise ValueError(
            f"window {window} exceeds the {trace.deltas.size} steps in the trace"
        )
    tail = float(trace.deltas[-window:].max())
    converged = tail < tol
    return FixedPointVerdict(
        converged=converged,
        tail_delta=tail,
        fixed_couplings=trace.couplings[-1] if converged else None,
        tol=tol,
        window=window,
    )


def flow_trace_to_csv(trace: FlowTrace) -> str:
    """Tabular export: layer_index, one column per basis subset, delta."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["layer_index"] + trace.basis.labels() + ["delta"])
    for i, (k, cv) in enumerate(zip(trace.layer_indices, trace.couplings)):
        delta = fmt17(float(trace.deltas[i - 1])) if i > 0 else ""
        writer.writerow([k] + [fmt17(v) for v in cv.g] + [delta])
    return buf.getvalue()
