"""Acceptance suite: one test per acceptance criterion, desk scale throughout.

Run with `pytest tests/test_acceptance.py -v -s` to see one PASS/FAIL line per
criterion.

Criteria 7 and 8 are split into a premise test and a substance test. Both
premises demand an eigenvalue modulus (spectral radius) of a coupling-flow
stability matrix strictly above one. On this package's exact flows that is
unattainable: every layer transfer is a strictly positive linear map on
distributions, which contracts the Hilbert projective metric (Birkhoff), and
the coupling chart is a global isometry onto the log-probability oscillation
seminorm, so every stability matrix has all eigenvalue moduli below one at
any finite weight scale (finite-difference noise adds only ~1e-10). The two
premise tests are therefore expected to FAIL and are kept failing on purpose
as an honest record; the substance tests demonstrate the intended behavior
(depth amplification and an effective, detectable, validity-preserving
poisoning defence) via singular-value gain, which genuinely exceeds one.
"""

import filecmp
import json

import numpy as np
import pytest

from cloneguard import (
    AttackConfig,
    CouplingVector,
    Dataset,
    Distribution,
    OperatorBasis,
    OutputVector,
    RbmLayer,
    RbmStack,
    TrainingConfig,
    attack_experiment,
    classify_propagate,
    extract_couplings,
    fim,
    flow_trace,
    generate_propagate,
    kl_divergence,
    kl_gradient,
    make_task,
    poison_dataset,
    reconstruct_distribution,
    relevance_report,
    train_layerwise,
)
from cloneguard.cli import main as cli_main
from cloneguard.cloning import decode, engineer_sensitive_victim
from cloneguard.errors import CloneGuardError
from cloneguard.poisoning import CHAIN_RULE, SCORE_ORACLE
from cloneguard.training import LayerTarget, layer_objective
from conftest import (
    brute_classify_terminal,
    brute_generate_terminal,
    random_layer,
    random_positive_probs,
    random_stack,
    states,
)


class criterion:
    """Prints one PASS/FAIL line per criterion (visible with -s)."""

    def __init__(self, number, title):
        self.label = f"criterion {number}: {title}"

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        print(f"\n[{'PASS' if exc_type is None else 'FAIL'}] {self.label}")
        return False


def test_criterion_01_coupling_round_trip():
    """extract/reconstruct are mutual inverses to 1e-10 on 100 seeded cases."""
    with criterion(1, "coupling round-trip within 1e-10"):
        case = 0
        for n in (1, 2, 3, 4):
            basis = OperatorBasis.complete_basis(n)
            for seed in range(25):
                rng = np.random.default_rng(1000 * n + seed)
                d = Distribution(random_positive_probs(rng, 2**n, floor=0.02))
                back = reconstruct_distribution(extract_couplings(d, basis))
                assert np.abs(back.probs - d.probs).max() <= 1e-10
                g = CouplingVector(basis, rng.uniform(-2.0, 2.0, basis.size))
                again = extract_couplings(reconstruct_distribution(g), basis)
                assert np.abs(again.g - g.g).max() <= 1e-10
                case += 1
        assert case == 100


def test_criterion_02_propagation_matches_brute_force():
    """Both propagation directions match full hidden-configuration sums to 1e-12."""
    with criterion(2, "propagation vs brute-force marginalization within 1e-12"):
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            n = int(rng.integers(1, 4))
            depth = int(rng.integers(1, 4))
            stack = random_stack(rng, n, depth, scale=1.2)
            for x in states(n):
                expected = brute_classify_terminal(stack, x)
                got = classify_propagate(stack, x).dists[-1].probs
                assert np.abs(got - expected).max() <= 1e-12
            for y in states(n):
                expected = brute_generate_terminal(stack, y)
                got = generate_propagate(stack, OutputVector.from_state(y)).dists[0].probs
                assert np.abs(got - expected).max() <= 1e-12


def test_criterion_03_gradient_exactness():
    """Analytic layerwise gradient vs central differences, 20 instances, 1e-6."""
    with criterion(3, "KL gradient matches finite differences to 1e-6"):
        step = 1e-5
        for seed in range(20):
            rng = np.random.default_rng(300 + seed)
            n = 2
            layer = random_layer(rng, n, scale=1.0)
            raw = rng.uniform(0.05, 1.0, (2**n, 2**n))
            target = LayerTarget(Distribution((raw / raw.sum()).flatten(order="F")))
            dW, da, db = kl_gradient(layer, target)
            analytic = np.concatenate([dW.reshape(-1), da, db])
            theta = np.concatenate([layer.W.reshape(-1), layer.a, layer.b])
            numeric = np.empty_like(theta)
            for idx in range(theta.size):
                up, dn = theta.copy(), theta.copy()
                up[idx] += step
                dn[idx] -= step
                lu = RbmLayer(up[:n * n].reshape(n, n), up[n * n:n * n + n], up[-n:])
                ld = RbmLayer(dn[:n * n].reshape(n, n), dn[n * n:n * n + n], dn[-n:])
                numeric[idx] = (layer_objective(lu, target)
                                - layer_objective(ld, target)) / (2 * step)
            rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic)
            assert rel <= 1e-6


def test_criterion_04_trainer_competence():
    """Copy task (n=2, N=2): >= 0.9 decode accuracy within 500 sweeps, 4 of 5 seeds."""
    with criterion(4, "trainer reaches 0.9 decode accuracy on copy (4/5 seeds)"):
        task = make_task("copy", 2)
        passed = 0
        for seed in range(5):
            config = TrainingConfig(seed=seed, max_sweeps=500)
            stack, trace = train_layerwise(2, 2, task, config)
            assert len(trace) - 1 <= 500
            hits = [decode(stack, x).bits == x.bits for x in states(2)]
            if np.mean(hits) >= 0.9:
                passed += 1
        assert passed >= 4


def test_criterion_05_fim_cross_validation():
    """Chain-rule vs score-oracle FIM within 1e-3; N=1 closed form to 1e-8."""
    with criterion(5, "FIM chain rule vs score oracle (1e-3) and closed form (1e-8)"):
        n = 3
        y = OutputVector((1.0, 0.0, 1.0))
        for depth in (2, 3, 4):
            for seed in range(5):
                rng = np.random.default_rng(500 + 10 * depth + seed)
                stack = random_stack(rng, n, depth, scale=1.0)
                chain = fim(stack, y, CHAIN_RULE).matrix
                oracle = fim(stack, y, SCORE_ORACLE).matrix
                rel = np.linalg.norm(chain - oracle) / np.linalg.norm(oracle)
                assert rel <= 1e-3
        from scipy.special import expit
        for seed in range(5):
            rng = np.random.default_rng(550 + seed)
            stack = random_stack(rng, n, 1, scale=1.0)
            W, b = stack.layers[0].W, stack.layers[0].b
            p = expit(W.T @ y.as_array() + b)
            closed = W @ np.diag(p * (1 - p)) @ W.T
            for method in (CHAIN_RULE, SCORE_ORACLE):
                assert np.abs(fim(stack, y, method).matrix - closed).max() <= 1e-8


def test_criterion_06_quadratic_kl_response():
    """KL(q_y || q_{y+eps v}) fits 0.5 eps^2 v'Fv within 5%, 10 directions."""
    with criterion(6, "quadratic KL response matches 0.5 v'Fv within 5%"):
        rng = np.random.default_rng(600)
        stack = random_stack(rng, 3, 3, scale=1.0)
        y = OutputVector((1.0, 0.0, 0.0))
        F = fim(stack, y, CHAIN_RULE).matrix
        base = generate_propagate(stack, y).dists[0]
        for _ in range(10):
            v = rng.uniform(-1.0, 1.0, 3)
            v /= np.abs(v).max()
            predicted = 0.5 * v @ F @ v
            for eps in (1e-2, 5e-3, 2.5e-3):
                moved = generate_propagate(stack, y.as_array() + eps * v).dists[0]
                coeff = kl_divergence(base, moved) / eps**2
                assert abs(coeff - predicted) / predicted <= 0.05


def _amplifying_layer(n=3, scale=16.0):
    """Cyclic-shift coupling with a half-strength diagonal: each bit drives the
    next one around a ring at near-critical strength, a structure whose
    stability matrices are strongly non-normal (large gain, rotating modes)."""
    W = scale * (np.roll(np.eye(n), 1, axis=1) + 0.5 * np.eye(n))
    return RbmLayer(W, np.zeros(n), np.zeros(n))


def test_criterion_07_spectral_radius_premise():
    """Constructed stack with generation spectral radius > 1.1: expected to FAIL.

    Strictly positive transfers contract the coupling space (see the module
    docstring), so no identical-layer stack at any finite scale has a
    stability eigenvalue above one; the assertion documents the best value
    the construction family actually attains (one plus ~1e-10 at most).
    """
    with criterion(7, "premise: constructed spectral radius > 1.1 (expected FAIL)"):
        y = OutputVector((1.0, 0.0, 0.0))
        best = 0.0
        for scale in (4.0, 8.0, 12.0, 16.0, 20.0):
            stack = RbmStack([_amplifying_layer(scale=scale)] * 5)
            trace = flow_trace(stack, y, "generation")
            report = relevance_report(stack, trace)
            best = max(best, report.max_eigenvalue_modulus)
        assert best > 1.1, (
            f"no constructed stack reached spectral radius 1.1: best {best!r}; "
            "exact positive transfers contract the coupling map, so eigenvalue "
            "moduli cannot exceed one"
        )


def test_criterion_07_depth_amplification():
    """Cumulative Jacobian top singular value grows strictly over N in 2..5.

    The constructed family's per-layer stability matrices have top singular
    value well above 1.1 (the attainable reading of an unstable layer), and
    the ordered product amplifies with depth.
    """
    with criterion(7, "depth amplification: cumulative singular gain grows N=2..5"):
        layer = _amplifying_layer()
        y = OutputVector((1.0, 0.0, 0.0))
        tops = {}
        max_layer_gain = 0.0
        for depth in (2, 3, 4, 5):
            stack = RbmStack([layer] * depth)
            trace = flow_trace(stack, y, "generation")
            report = relevance_report(stack, trace)
            tops[depth] = report.cumulative_top_singular
            for sm in report.matrices:
                max_layer_gain = max(max_layer_gain, float(sm.singular_values()[0]))
        assert max_layer_gain > 1.1
        for depth in (2, 3, 4):
            assert tops[depth + 1] > tops[depth], f"no growth at N={depth + 1}: {tops}"


def _victim_base():
    """Asymmetric ring coupling whose scaled versions decode the identity map
    while amplifying generation perturbations."""
    W = np.array([[0.3, 1.0], [0.8, 0.4]])
    a = -W @ np.ones(2) / 2
    b = -W.T @ np.ones(2) / 2
    return RbmStack([RbmLayer(W, a, b)] * 2)


def _victim_task():
    xs = states(2)
    return Dataset(n=2, pairs=[(x, OutputVector.from_state(x)) for x in xs])


@pytest.fixture(scope="module")
def defence_experiment():
    """Engineered victim (singular gain > 1.1) plus the paired attack outcome."""
    victim, scale, diagnostics = engineer_sensitive_victim(
        _victim_base(), _victim_task(), scales=(2.0, 4.0, 6.0, 8.0, 10.0, 12.0),
        gain_threshold=1.1, criterion="singular")
    task = _victim_task()
    config = AttackConfig(n=2, depth=2, trainer=TrainingConfig(max_sweeps=200),
                          budget=0.05, seeds=(0, 1, 2, 3, 4))
    report = attack_experiment(victim, task, config)
    poisoned, poison_report = poison_dataset(victim, task, budget=0.05)
    return {
        "victim": victim,
        "scale": scale,
        "diagnostics": diagnostics,
        "task": task,
        "report": report,
        "poisoned": poisoned,
        "poison_report": poison_report,
    }


def test_criterion_08_eigenvalue_flag_premise():
    """Victim engineering via the relevance flag: expected to FAIL.

    The flag requires an eigenvalue modulus above 1 + 1e-6, which exact
    positive transfers never produce (the scan reports the best modulus it
    saw). The singular-gain route used by the substance test is the
    operational replacement.
    """
    with criterion(8, "premise: relevance flags eigenvalue > 1 (expected FAIL)"):
        try:
            engineer_sensitive_victim(
                _victim_base(), _victim_task(),
                scales=(2.0, 4.0, 6.0, 8.0, 10.0, 12.0),
                gain_threshold=1.0 + 1e-6, criterion="eigenvalue")
        except CloneGuardError as exc:
            raise AssertionError(
                f"no scale made the eigenvalue relevance flag fire: {exc}"
            ) from exc


def test_criterion_08_defence_efficacy(defence_experiment):
    """Poisoned clones misclassify strictly more than clean ones on every paired
    seed, and the corrupted fit is detectable through the training residual."""
    with criterion(8, "defence efficacy: poisoned > clean misclassification, 5 seeds"):
        assert defence_experiment["diagnostics"]["max_singular"] > 1.1
        report = defence_experiment["report"]
        assert report.poisoning_available
        clean = {r.seed: r for r in report.condition_runs("clean")}
        pois = {r.seed: r for r in report.condition_runs("poisoned")}
        assert sorted(clean) == sorted(pois) == [0, 1, 2, 3, 4]
        for seed in clean:
            assert (pois[seed].comparison.misclassification
                    > clean[seed].comparison.misclassification), (
                f"seed {seed}: poisoned misclassification not strictly higher")
        detect = report.detectability()
        assert detect["paired_seeds"] == 5
        assert detect["residual_higher_all_seeds"]


def test_criterion_09_validity_preservation(defence_experiment):
    """Every poisoned label rounds back to its clean label (100% decode)."""
    with criterion(9, "validity: rounding recovers every clean label"):
        task = defence_experiment["task"]
        poisoned = defence_experiment["poisoned"]
        count = 0
        for (x, y_clean, _), (x2, y_pois, _) in zip(task.items(), poisoned.items()):
            assert x.bits == x2.bits
            assert y_pois.rounded().bits == y_clean.rounded().bits
            if y_pois.components != y_clean.components:
                count += 1
        assert all(r.decode_ok for r in defence_experiment["poison_report"].records)
        assert count > 0  # the poison actually moved the labels it could move


def test_criterion_10_pipeline_determinism(tmp_path):
    """Rerunning the full pipeline from one config is byte-identical."""
    with criterion(10, "pipeline reruns are byte-identical"):
        config = {
            "task": {"name": "copy", "n": 2, "seed": 0},
            "architecture": {"N": 2},
            "trainer": {"max_sweeps": 40, "seed": 0},
            "poison_budget": 0.05,
            "attack_seeds": [0, 1],
        }
        config_path = tmp_path / "experiment.json"
        config_path.write_text(json.dumps(config))
        dirs = [tmp_path / "run_a", tmp_path / "run_b"]
        for out_dir in dirs:
            code = cli_main(["pipeline", "--config", str(config_path),
                             "--out-dir", str(out_dir)])
            assert code == 0
        names_a = sorted(p.name for p in dirs[0].iterdir())
        names_b = sorted(p.name for p in dirs[1].iterdir())
        assert names_a == names_b
        for name in names_a:
            assert filecmp.cmp(dirs[0] / name, dirs[1] / name, shallow=False), (
                f"artifact {name} differs between reruns")
