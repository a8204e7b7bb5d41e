"""Binary state spaces, exact dense distributions, and KL divergence.

Every module in this package works on the same substrate: length-n binary
vectors indexed little-endian (bit 0 is least significant), dense probability
vectors over all 2**n states, and natural-log KL. The hard cap n <= 16 keeps
dense pair distributions (4**n entries) within desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, InfiniteDivergenceError

MAX_DIM = 16

# tolerance for "sums to one" checks on constructed distributions / weights
NORM_TOL = 1e-12


def state_matrix(n: int) -> np.ndarray:
    """(2**n, n) matrix whose row i holds the bits of state index i."""
    if not 0 <= n <= MAX_DIM:
        raise CapacityError(f"dimension {n} outside supported range 0..{MAX_DIM}")
    idx = np.arange(2**n)
    return ((idx[:, None] >> np.arange(n)[None, :]) & 1).astype(float)


@dataclass(frozen=True)
class BinaryState:
    """An ordered vector of n bits, bijective with its little-endian index."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError(f"bits must be 0 or 1, got {self.bits}")

    @classmethod
    def from_index(cls, n: int, index: int) -> "BinaryState":
        if not 0 <= index < 2**n:
            raise ValueError(f"index {index} out of range for n={n}")
        return cls(tuple((index >> j) & 1 for j in range(n)))

    @property
    def index(self) -> int:
        return sum(b << j for j, b in enumerate(self.bits))

    @property
    def n(self) -> int:
        return len(self.bits)

    def as_array(self) -> np.ndarray:
        return np.array(self.bits, dtype=float)

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)


def enumerate_states(n: int) -> list[BinaryState]:
    """All 2**n states in ascending little-endian index order.

    n = 0 yields the single empty state.
    """
    if n < 0 or n > MAX_DIM:
        raise CapacityError(
            f"cannot enumerate {n}-bit states: supported range is 0..{MAX_DIM}"
        )
    return [BinaryState.from_index(n, i) for i in range(2**n)]


@dataclass
class Distribution:
    """Exact dense probability vector over all 2**n binary states.

    ``log_norm`` records the log of whatever normalizer was absorbed when the
    distribution was built (partition function, product of softplus terms, or
    0.0 when the input was already normalized).
    """

    probs: np.ndarray
    log_norm: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0 or (p.size & (p.size - 1)) != 0:
            raise ValueError(f"probs length must be a power of two, got {p.size}")
        if not np.all(np.isfinite(p)):
            raise ValueError("probs must be finite")
        if p.min() < 0:
            raise ValueError(f"negative probability {p.min()!r}")
        if abs(p.sum() - 1.0) > NORM_TOL:
            raise ValueError(f"probs sum to {p.sum()!r}, not 1 within {NORM_TOL}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def dim(self) -> int:
        return self.probs.size

    @property
    def n(self) -> int:
        return self.dim.bit_length() - 1

    @property
    def strictly_positive(self) -> bool:
        return bool(self.probs.min() > 0)


def delta_distribution(s: BinaryState) -> Distribution:
    """Point mass at s (the clamped boundary condition of a flow)."""
    p = np.zeros(2 ** s.n)
    p[s.index] = 1.0
    return Distribution(p, log_norm=0.0)


def kl_divergence(p1: Distribution, p2: Distribution) -> float:
    """KL divergence sum(p1 * log(p1/p2)) in nats, with 0*log(0/q) = 0."""
    if p1.dim != p2.dim:
        raise ValueError(f"dimension mismatch: {p1.dim} vs {p2.dim}")
    a, b = p1.probs, p2.probs
    support = a > 0
    if np.any(b[support] == 0):
        raise InfiniteDivergenceError(
            "p1 has mass on a state where p2 is exactly zero"
        )
    s = a[support]
    return float(np.sum(s * (np.log(s) - np.log(b[support]))))


@dataclass(frozen=True)
class OutputVector:
    """Soft label vector. Clean labels are exactly 0/1 per component.

    Components live in the open interval (-0.5, 1.5): the range on which
    componentwise rounding is an unambiguous decode. Clean labels occupy
    [0, 1]; poisoned labels may overshoot by less than the poison budget.
    """

    components: tuple[float, ...]

    def __post_init__(self):
        c = np.array(self.components, dtype=float)
        if not np.all(np.isfinite(c)):
            raise ValueError("components must be finite")
        if c.size and (c.min() <= -0.5 or c.max() >= 1.5):
            raise ValueError(
                f"components must lie in (-0.5, 1.5) for unambiguous decode, got {self.components}"
            )
        object.__setattr__(self, "components", tuple(float(v) for v in c))

    @classmethod
    def from_state(cls, s: BinaryState) -> "OutputVector":
        return cls(tuple(float(b) for b in s.bits))

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def is_clean(self) -> bool:
        return all(v in (0.0, 1.0) for v in self.components)

    def rounded(self) -> BinaryState:
        """Componentwise rounding decode back to a binary state."""
        return BinaryState(tuple(int(round(v)) for v in self.components))

    def as_array(self) -> np.ndarray:
        return np.array(self.components, dtype=float)


@dataclass
class Dataset:
    """Weighted list of (input state, output label) pairs.

    Weights are the empirical joint p(x, y); they must be nonnegative and sum
    to one.
    """

    n: int
    pairs: list[tuple[BinaryState, OutputVector]]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("a dataset needs at least one pair")
        if self.weights is None:
            w = np.full(len(self.pairs), 1.0 / len(self.pairs))
        else:
            w = np.asarray(self.weights, dtype=float)
        if w.size != len(self.pairs):
            raise ValueError("one weight per pair required")
        if w.min() < 0 or abs(w.sum() - 1.0) > NORM_TOL:
            raise ValueError(
                f"weights must be nonnegative and sum to 1 within {NORM_TOL}"
            )
        for x, y in self.pairs:
            if x.n != self.n or y.n != self.n:
                raise ValueError(
                    f"pair dimensions ({x.n}, {y.n}) do not match dataset n={self.n}"
                )
        w = w.copy()
        w.setflags(write=False)
        self.weights = w

    def items(self):
        """Iterate (x, y, weight) triples in record order."""
        for (x, y), w in zip(self.pairs, self.weights):
            yield x, y, float(w)

    def __len__(self):
        return len(self.pairs)
