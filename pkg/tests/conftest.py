"""Shared fixtures and independent brute-force oracles.

The oracles here deliberately avoid the package's vectorized code paths:
conditionals come from explicit enumeration of the pair joint followed by
Bayes division, and propagation sums over every hidden configuration with
itertools.product. They exist to check the library, so they must not share
its shortcuts.
"""

import itertools

import numpy as np
import pytest

from cloneguard import BinaryState, RbmLayer, RbmStack


def all_bit_vectors(n):
    """All 2**n bit vectors in little-endian index order, as float arrays."""
    return [np.array([(i >> j) & 1 for j in range(n)], dtype=float)
            for i in range(2**n)]


def brute_forward_matrix(layer):
    """t(h_k = i | h_{k-1} = j) by enumerating the joint and dividing."""
    n = layer.n
    vecs = all_bit_vectors(n)
    joint = np.zeros((2**n, 2**n))
    for i, h in enumerate(vecs):
        for j, hp in enumerate(vecs):
            joint[i, j] = np.exp(h @ layer.W @ hp + layer.a @ h + layer.b @ hp)
    return joint / joint.sum(axis=0, keepdims=True)


def brute_backward_matrix(layer):
    """t(h_{k-1} = j | h_k = i), returned indexed [j, i]."""
    n = layer.n
    vecs = all_bit_vectors(n)
    joint = np.zeros((2**n, 2**n))
    for i, h in enumerate(vecs):
        for j, hp in enumerate(vecs):
            joint[i, j] = np.exp(h @ layer.W @ hp + layer.a @ h + layer.b @ hp)
    return (joint / joint.sum(axis=1, keepdims=True)).T


def brute_classify_terminal(stack, x):
    """q_N(.|x) by summing over every hidden configuration."""
    n = stack.n
    mats = [brute_forward_matrix(layer) for layer in stack.layers]
    out = np.zeros(2**n)
    for final in range(2**n):
        for hidden in itertools.product(range(2**n), repeat=stack.depth - 1):
            path = (x.index,) + hidden + (final,)
            p = 1.0
            for k, F in enumerate(mats):
                p *= F[path[k + 1], path[k]]
            out[final] += p
    return out


def brute_generate_terminal(stack, y_state):
    """qgen_0(.|y) for a binary clamp, summing over every hidden configuration."""
    n = stack.n
    mats = [brute_backward_matrix(layer) for layer in stack.layers]
    out = np.zeros(2**n)
    for final in range(2**n):
        for hidden in itertools.product(range(2**n), repeat=stack.depth - 1):
            path = (y_state.index,) + hidden + (final,)
            p = 1.0
            for step, B in enumerate(reversed(mats)):
                p *= B[path[step + 1], path[step]]
            out[final] += p
    return out


def random_layer(rng, n, scale=1.0):
    return RbmLayer(rng.uniform(-scale, scale, (n, n)),
                    rng.uniform(-scale, scale, n),
                    rng.uniform(-scale, scale, n))


def random_stack(rng, n, depth, scale=1.0):
    return RbmStack([random_layer(rng, n, scale) for _ in range(depth)])


def random_positive_probs(rng, dim, floor=0.05):
    """Strictly positive normalized vector bounded away from zero."""
    raw = rng.uniform(floor, 1.0, dim)
    return raw / raw.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20240 + 1)


def states(n):
    return [BinaryState.from_index(n, i) for i in range(2**n)]
