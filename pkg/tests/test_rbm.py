import numpy as np
import pytest
from scipy.special import expit

from cloneguard import (
    BinaryState,
    OutputVector,
    RbmLayer,
    RbmStack,
    SchemaError,
    backward_conditional,
    classify_propagate,
    forward_conditional,
    generate_propagate,
    joint_distribution,
)
from cloneguard.rbm import load_model, model_from_json, model_to_json, save_model
from conftest import (
    brute_classify_terminal,
    brute_generate_terminal,
    random_stack,
    states,
)


def zero_layer(n):
    return RbmLayer(np.zeros((n, n)), np.zeros(n), np.zeros(n))


def zero_stack(n, depth):
    return RbmStack([zero_layer(n) for _ in range(depth)])


class TestJoint:
    def test_zero_params_uniform(self):
        d = joint_distribution(zero_layer(1))
        assert np.allclose(d.probs, 0.25)

    def test_bias_example(self):
        layer = RbmLayer(np.zeros((1, 1)), np.zeros(1), np.array([np.log(3.0)]))
        d = joint_distribution(layer)
        # pair order (h_k, h_prev) = (0,0), (1,0), (0,1), (1,1)
        assert np.allclose(d.probs, [1 / 8, 1 / 8, 3 / 8, 3 / 8], atol=1e-15)

    def test_transpose_symmetry(self, rng):
        layer = RbmLayer(rng.uniform(-1, 1, (2, 2)), rng.uniform(-1, 1, 2),
                         rng.uniform(-1, 1, 2))
        d = joint_distribution(layer)
        dt = joint_distribution(layer.transposed())
        m = d.probs.reshape(4, 4, order="F")
        mt = dt.probs.reshape(4, 4, order="F")
        assert np.allclose(m, mt.T, atol=1e-15)

    def test_log_norm_matches_partition(self):
        layer = RbmLayer(np.zeros((1, 1)), np.zeros(1), np.array([np.log(3.0)]))
        assert joint_distribution(layer).log_norm == pytest.approx(np.log(8.0))


class TestConditionals:
    def test_zero_params_uniform(self):
        assert np.allclose(forward_conditional(zero_layer(2), BinaryState((1, 0))).probs, 0.25)
        assert np.allclose(backward_conditional(zero_layer(2), BinaryState((1, 1))).probs, 0.25)

    def test_forward_logistic_example(self):
        layer = RbmLayer(np.array([[2.0]]), np.array([-1.0]), np.array([0.0]))
        d = forward_conditional(layer, BinaryState((1,)))
        assert d.probs[1] == pytest.approx(expit(1.0), abs=1e-12)
        assert d.probs[1] == pytest.approx(0.731059, abs=1e-6)

    def test_backward_logistic_example(self):
        layer = RbmLayer(np.array([[2.0]]), np.array([0.0]), np.array([0.0]))
        d = backward_conditional(layer, BinaryState((1,)))
        assert d.probs[1] == pytest.approx(expit(2.0), abs=1e-12)
        assert d.probs[1] == pytest.approx(0.880797, abs=1e-6)

    def test_backward_interpolated_clamp(self):
        layer = RbmLayer(np.array([[2.0]]), np.array([0.0]), np.array([0.0]))
        d = backward_conditional(layer, OutputVector((0.5,)))
        assert d.probs[1] == pytest.approx(expit(1.0), abs=1e-12)

    def test_forward_matches_bayes_on_joint(self, rng):
        """For any h_prev the factorized conditional equals enumeration + Bayes."""
        from conftest import brute_forward_matrix, random_layer
        layer = random_layer(rng, 2, scale=1.3)
        F = brute_forward_matrix(layer)
        for j, h_prev in enumerate(states(2)):
            assert np.allclose(forward_conditional(layer, h_prev).probs, F[:, j],
                               atol=1e-13)

    def test_normalized_for_random_layers(self, rng):
        from conftest import random_layer
        for _ in range(5):
            layer = random_layer(rng, 3, scale=2.0)
            d = forward_conditional(layer, BinaryState((1, 0, 1)))
            assert abs(d.probs.sum() - 1.0) < 1e-12
            assert d.strictly_positive

    def test_large_weights_no_overflow(self):
        layer = RbmLayer(np.full((2, 2), 400.0), np.zeros(2), np.zeros(2))
        d = forward_conditional(layer, BinaryState((1, 1)))
        assert np.isfinite(d.probs).all()
        assert abs(d.probs.sum() - 1.0) < 1e-12


class TestClassifyPropagate:
    def test_single_layer_reduction(self, rng):
        from conftest import random_layer
        layer = random_layer(rng, 2)
        stack = RbmStack([layer])
        x = BinaryState((0, 1))
        flow = classify_propagate(stack, x)
        assert np.allclose(flow.dists[1].probs,
                           forward_conditional(layer, x).probs, atol=1e-15)

    def test_zero_stack_uniform(self):
        flow = classify_propagate(zero_stack(2, 3), BinaryState((1, 1)))
        assert np.allclose(flow.dists[-1].probs, 0.25)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(4):
            stack = random_stack(rng, 2, 2, scale=1.2)
            for x in states(2):
                expected = brute_classify_terminal(stack, x)
                got = classify_propagate(stack, x).dists[-1].probs
                assert np.abs(got - expected).max() < 1e-12

    def test_boundary_is_delta_and_interior_positive(self, rng):
        stack = random_stack(rng, 2, 3)
        x = BinaryState((1, 0))
        flow = classify_propagate(stack, x)
        assert flow.dists[0].probs[x.index] == 1.0
        for k in range(1, 4):
            assert flow.dists[k].strictly_positive
            assert abs(flow.dists[k].probs.sum() - 1.0) < 1e-12


class TestGeneratePropagate:
    def test_single_layer_reduction(self, rng):
        from conftest import random_layer
        layer = random_layer(rng, 2)
        stack = RbmStack([layer])
        y = OutputVector((1.0, 0.0))
        flow = generate_propagate(stack, y)
        assert np.allclose(flow.dists[0].probs,
                           backward_conditional(layer, y).probs, atol=1e-15)

    def test_zero_stack_uniform(self):
        flow = generate_propagate(zero_stack(2, 2), OutputVector((0.3, 0.9)))
        assert np.allclose(flow.dists[0].probs, 0.25)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(13)
        for _ in range(3):
            stack = random_stack(rng, 2, 3, scale=1.1)
            for y in states(2):
                expected = brute_generate_terminal(stack, y)
                got = generate_propagate(stack, OutputVector.from_state(y)).dists[0].probs
                assert np.abs(got - expected).max() < 1e-12

    def test_binary_clamp_consistent_with_extension(self, rng):
        """A binary y fed as reals gives the same flow as the exact clamp."""
        stack = random_stack(rng, 2, 3)
        exact = generate_propagate(stack, BinaryState((1, 0)))
        extended = generate_propagate(stack, OutputVector((1.0, 0.0)))
        for a, b in zip(exact.dists, extended.dists):
            assert np.allclose(a.probs, b.probs, atol=1e-15)

    def test_seed_entry_is_clamp(self, rng):
        stack = random_stack(rng, 2, 2)
        flow = generate_propagate(stack, OutputVector((1.0, 1.0)))
        assert flow.dists[2].probs[3] == 1.0


class TestModelFiles:
    def test_roundtrip_bit_exact(self, rng):
        stack = random_stack(rng, 3, 2)
        stack.seed = 42
        stack.training = {"objective_final": 0.125, "sweeps": 17}
        text = model_to_json(stack)
        loaded = model_from_json(text)
        for a, b in zip(stack.layers, loaded.layers):
            assert np.array_equal(a.W, b.W)
            assert np.array_equal(a.a, b.a)
            assert np.array_equal(a.b, b.b)
        assert loaded.seed == 42
        assert loaded.training == {"objective_final": 0.125, "sweeps": 17}
        assert model_to_json(loaded) == text

    def test_file_roundtrip(self, rng, tmp_path):
        stack = random_stack(rng, 2, 2)
        path = tmp_path / "model.json"
        save_model(stack, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.layers[0].W, stack.layers[0].W)

    def test_truncated_file_schema_error(self, rng):
        text = model_to_json(random_stack(rng, 2, 2))
        with pytest.raises(SchemaError):
            model_from_json(text[: len(text) // 2])

    def test_version_mismatch(self, rng):
        text = model_to_json(random_stack(rng, 1, 1)).replace(
            '"format_version": 1', '"format_version": 99')
        with pytest.raises(SchemaError, match="format_version"):
            model_from_json(text)

    def test_unknown_field_rejected(self, rng):
        text = model_to_json(random_stack(rng, 1, 1)).replace(
            '"seed"', '"sneaky": 1,\n  "seed"')
        with pytest.raises(SchemaError, match="sneaky"):
            model_from_json(text)

    def test_field_path_in_error(self, rng):
        text = model_to_json(random_stack(rng, 2, 1)).replace(
            '"a": [', '"a": ["x", ', 1)
        with pytest.raises(SchemaError, match=r"layers\[0\]"):
            model_from_json(text)


class TestStackValidation:
    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            RbmStack([zero_layer(2), zero_layer(3)])

    def test_empty(self):
        with pytest.raises(ValueError):
            RbmStack([])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            RbmLayer(np.array([[np.inf]]), np.zeros(1), np.zeros(1))
