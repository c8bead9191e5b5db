import math
from unittest.mock import patch

import numpy as np
import pytest
from pydantic import ValidationError

from qnn_bench.circuit import Circuit, ParamVector, build_qnn, h_gate, model_expectation, pair_gate
from qnn_bench.data import encode_samples
from qnn_bench.metrics import accuracy
from qnn_bench.models import GradEngine, InvalidArgumentError, PauliKind, StepFlag
from qnn_bench.qml import (
    LabeledCircuitInput,
    SuperpositionBatch,
    batch_loss_and_gradient,
    build_superposition_batch,
    grad_analytic,
    grad_finite_diff,
    grad_hadamard_test,
    hadamard_test_p0,
    init_params,
    loss_batch,
    loss_single,
    sgd_step_paper,
    sgd_step_plain,
    superposition_gap,
)
from qnn_bench.statevec import StateVector, apply_h, basis_state, bits_of_index

# exp(iθ XX) on |00>: <Z_1> = cos 2θ
SINUSOID = Circuit(n_qubits=2, gates=(pair_gate(PauliKind.X, 0, 1, slot=0),), n_params=1)


def sample_of(bits: str, label: int) -> LabeledCircuitInput:
    return LabeledCircuitInput(input_state=basis_state(len(bits), bits), label=label)


def random_dim2_sample(rng) -> LabeledCircuitInput:
    bits = "".join(str(b) for b in bits_of_index(int(rng.integers(16)), 4)) + "1"
    return sample_of(bits, int(rng.choice([1, -1])))


def dim2_samples(indices_and_labels):
    return [
        sample_of("".join(str(b) for b in bits_of_index(index, 4)) + "1", label)
        for index, label in indices_and_labels
    ]


class TestLabeledCircuitInput:

    def test_rejects_superposition(self):
        with pytest.raises(ValidationError):
            LabeledCircuitInput(input_state=apply_h(basis_state(1, "0"), 0), label=1)

    def test_rejects_non_binary_label(self):
        with pytest.raises(ValidationError):
            sample_of("01", 0)

    def test_basis_index(self):
        assert sample_of("101", -1).basis_index == 5


class TestLoss:

    def test_perfect_prediction(self):
        assert loss_single(Circuit(n_qubits=1), ParamVector(thetas=[]), sample_of("0", 1)) == 0

    def test_random_prediction(self):
        circuit = Circuit(n_qubits=1, gates=(h_gate(0),))
        assert loss_single(circuit, ParamVector(thetas=[]), sample_of("0", 1)) == 1

    def test_wrong_prediction(self):
        assert loss_single(Circuit(n_qubits=1), ParamVector(thetas=[]), sample_of("0", -1)) == 2

    def test_loss_range(self, rng):
        circuit, readout = build_qnn(2)
        for _ in range(50):
            params = init_params(8, int(rng.integers(1 << 30)))
            assert 0 <= loss_single(circuit, params, random_dim2_sample(rng), readout) <= 2


class TestInitParams:

    def test_range_and_determinism(self):
        params = init_params(32, 7)
        assert params.thetas.shape == (32,)
        assert ((params.thetas >= 0) & (params.thetas < 2 * math.pi)).all()
        np.testing.assert_array_equal(params.thetas, init_params(32, 7).thetas)
        assert not np.array_equal(params.thetas, init_params(32, 8).thetas)


class TestAnalyticGradient:

    def test_matches_finite_differences(self, rng):
        circuit, readout = build_qnn(2)
        for _ in range(50):
            params = ParamVector(thetas=rng.uniform(-math.pi, math.pi, size=8))
            sample = random_dim2_sample(rng)
            analytic = grad_analytic(circuit, params, sample, readout)
            numeric = grad_finite_diff(circuit, params, sample, 1e-5, readout)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_matches_finite_differences_with_y_readout(self, rng):
        circuit, readout = build_qnn(2)
        params = ParamVector(thetas=rng.uniform(-math.pi, math.pi, size=8))
        sample = random_dim2_sample(rng)
        analytic = grad_analytic(circuit, params, sample, readout, PauliKind.Y)
        numeric = grad_finite_diff(circuit, params, sample, 1e-5, readout, PauliKind.Y)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-6, atol=1e-8)

    def test_generator_commuting_with_observable(self):
        circuit = Circuit(n_qubits=2, gates=(h_gate(0), pair_gate(PauliKind.Z, 0, 1, slot=0)), n_params=1)
        grad = grad_analytic(circuit, ParamVector(thetas=[0.7]), sample_of("01", 1), readout=1)
        assert abs(grad[0]) < 1e-12

    def test_vanishes_at_loss_extremum(self):
        circuit, readout = build_qnn(2)
        params = ParamVector(thetas=np.zeros(8))
        for label in (1, -1):
            sample = sample_of("01101", label)
            assert loss_single(circuit, params, sample, readout) == pytest.approx(1 - label)
            np.testing.assert_allclose(grad_analytic(circuit, params, sample, readout), 0, atol=1e-12)
            np.testing.assert_allclose(grad_finite_diff(circuit, params, sample, 1e-5, readout), 0, atol=1e-8)

    def test_sinusoid_closed_form(self):
        for theta in (-1.3, 0.2, 0.9, 2.5):
            params = ParamVector(thetas=[theta])
            sample = sample_of("00", 1)
            assert loss_single(SINUSOID, params, sample) == pytest.approx(1 - math.cos(2 * theta))
            assert grad_analytic(SINUSOID, params, sample)[0] == pytest.approx(2 * math.sin(2 * theta))
            assert grad_finite_diff(SINUSOID, params, sample)[0] == pytest.approx(2 * math.sin(2 * theta), abs=1e-8)


class TestFiniteDifference:

    def test_parameter_free_circuit(self):
        circuit = Circuit(n_qubits=2, gates=(h_gate(1), pair_gate(PauliKind.X, 0, 1, angle=0.3)), n_params=2)
        grad = grad_finite_diff(circuit, ParamVector(thetas=[0.1, 0.2]), sample_of("01", 1))
        np.testing.assert_array_equal(grad, [0, 0])

    def test_step_sizes_agree(self, rng):
        circuit, readout = build_qnn(2)
        params = ParamVector(thetas=rng.uniform(0, 2 * math.pi, size=8))
        sample = random_dim2_sample(rng)
        coarse = grad_finite_diff(circuit, params, sample, 1e-4, readout)
        fine = grad_finite_diff(circuit, params, sample, 1e-5, readout)
        np.testing.assert_allclose(coarse, fine, atol=1e-5)

    def test_step_must_be_positive(self):
        with pytest.raises(InvalidArgumentError):
            grad_finite_diff(SINUSOID, ParamVector(thetas=[0.1]), sample_of("00", 1), eps=0)


class TestHadamardTest:

    def test_identity_gives_one_half(self, rng):
        psi = StateVector(n_qubits=3, amps=basis_state(3, "011").amps)
        assert hadamard_test_p0(psi, psi.clone()) == pytest.approx(0.5, abs=1e-15)

    def test_probability_tracks_imaginary_part(self):
        psi = basis_state(1, "0")
        u_psi = StateVector(n_qubits=1, amps=[1j, 0])
        assert hadamard_test_p0(psi, u_psi) == pytest.approx(0.0, abs=1e-15)

    def test_close_to_analytic_at_many_shots(self):
        rng = np.random.default_rng(3)
        circuit, readout = build_qnn(2)
        params = ParamVector(thetas=rng.uniform(0, 2 * math.pi, size=8))
        sample = random_dim2_sample(rng)
        shots = 10 ** 6
        analytic = grad_analytic(circuit, params, sample, readout)
        for k in range(8):
            estimate = grad_hadamard_test(circuit, params, sample, k, shots, 100 + k, readout)
            assert estimate == pytest.approx(analytic[k], abs=4 * 2 / math.sqrt(shots))

    def test_mean_over_seeds_is_consistent(self):
        rng = np.random.default_rng(11)
        circuit, readout = build_qnn(2)
        params = ParamVector(thetas=rng.uniform(0, 2 * math.pi, size=8))
        sample = random_dim2_sample(rng)
        shots, n_seeds = 10 ** 5, 10
        analytic = grad_analytic(circuit, params, sample, readout)
        for k in range(8):
            estimates = [grad_hadamard_test(circuit, params, sample, k, shots, seed, readout) for seed in range(n_seeds)]
            standard_error = 2 / math.sqrt(shots * n_seeds)
            assert np.mean(estimates) == pytest.approx(analytic[k], abs=4 * standard_error)

    def test_same_seed_same_estimate(self):
        circuit, readout = build_qnn(2)
        params = init_params(8, 5)
        sample = sample_of("10011", -1)
        first = grad_hadamard_test(circuit, params, sample, 3, 1000, 42, readout)
        assert first == grad_hadamard_test(circuit, params, sample, 3, 1000, 42, readout)

    def test_needs_shots(self):
        with pytest.raises(InvalidArgumentError):
            grad_hadamard_test(SINUSOID, ParamVector(thetas=[0.1]), sample_of("00", 1), 0, 0, 1)

    def test_parameter_index_in_range(self):
        with pytest.raises(InvalidArgumentError):
            grad_hadamard_test(SINUSOID, ParamVector(thetas=[0.1]), sample_of("00", 1), 1, 10, 1)


class TestBatchGradient:

    def test_analytic_batch_is_mean_of_samples(self, rng):
        circuit, readout = build_qnn(2)
        params = init_params(8, 3)
        samples = [random_dim2_sample(rng) for _ in range(5)]
        loss, grad = batch_loss_and_gradient(circuit, params, samples, readout=readout)
        assert loss == pytest.approx(np.mean([loss_single(circuit, params, s, readout) for s in samples]))
        np.testing.assert_allclose(
            grad, np.mean([grad_analytic(circuit, params, s, readout) for s in samples], axis=0), atol=1e-12
        )

    def test_finite_difference_engine(self, rng):
        circuit, readout = build_qnn(2)
        params = init_params(8, 4)
        samples = [random_dim2_sample(rng) for _ in range(3)]
        _, analytic = batch_loss_and_gradient(circuit, params, samples, GradEngine.analytic, readout)
        _, numeric = batch_loss_and_gradient(circuit, params, samples, GradEngine.finite_diff, readout)
        np.testing.assert_allclose(analytic, numeric, atol=1e-8)

    def test_hadamard_engine_is_reproducible(self, rng):
        circuit, readout = build_qnn(2)
        params = init_params(8, 4)
        samples = [random_dim2_sample(rng) for _ in range(2)]

        def run():
            return batch_loss_and_gradient(
                circuit, params, samples, GradEngine.hadamard_test, readout,
                shots=500, seed_sequence=np.random.SeedSequence(9),
            )

        np.testing.assert_array_equal(run()[1], run()[1])

    def test_hadamard_engine_needs_shots(self):
        circuit, readout = build_qnn(2)
        with pytest.raises(InvalidArgumentError):
            batch_loss_and_gradient(
                circuit, init_params(8, 1), [sample_of("00001", 1)], GradEngine.hadamard_test, readout
            )

    def test_empty_batch(self):
        circuit, _ = build_qnn(2)
        with pytest.raises(InvalidArgumentError):
            batch_loss_and_gradient(circuit, init_params(8, 1), [])


class TestUpdateRules:

    def test_loss_scaled_rule_substitution(self):
        step = sgd_step_paper(ParamVector(thetas=[1.0, 1.0]), np.array([0.0, 1.0]), 0.5, 0.1)
        np.testing.assert_allclose(step.params.thetas, [1.0, 0.95])
        assert not step.skipped

    def test_loss_scaled_rule_zero_loss_is_identity(self):
        params = ParamVector(thetas=[0.3, -2.0])
        step = sgd_step_paper(params, np.array([0.4, 0.1]), 0.0, 0.1)
        np.testing.assert_array_equal(step.params.thetas, params.thetas)

    @patch("qnn_bench.qml.logging")
    def test_loss_scaled_rule_skips_vanishing_gradient(self, mock_logging):
        params = ParamVector(thetas=[0.3, -2.0])
        step = sgd_step_paper(params, np.zeros(2), 0.7, 0.1)
        assert step.flag == StepFlag.vanishing_gradient
        assert step.skipped
        np.testing.assert_array_equal(step.params.thetas, params.thetas)
        mock_logging.warning.assert_called_once()

    def test_loss_scaled_rule_needs_positive_rate(self):
        with pytest.raises(InvalidArgumentError):
            sgd_step_paper(ParamVector(thetas=[0.0]), np.array([1.0]), 0.5, 0.0)

    def test_plain_rule(self):
        np.testing.assert_allclose(sgd_step_plain(ParamVector(thetas=[0.0]), np.array([2.0]), 0.1).thetas, [-0.2])
        np.testing.assert_array_equal(sgd_step_plain(ParamVector(thetas=[0.5]), np.zeros(1), 0.1).thetas, [0.5])

    def test_gradient_shape_must_match(self):
        with pytest.raises(InvalidArgumentError):
            sgd_step_plain(ParamVector(thetas=[0.0, 1.0]), np.zeros(3), 0.1)

    def test_plain_rule_converges_on_sinusoid(self):
        params = ParamVector(thetas=[1.0])
        sample = sample_of("00", 1)
        for _ in range(500):
            params = sgd_step_plain(params, grad_analytic(SINUSOID, params, sample), 0.1)
        theta = params.thetas[0]
        assert abs(theta - round(theta / math.pi) * math.pi) < 1e-3

    def test_qnn_learns_pixel_zero(self, synthetic_split):
        circuit, readout = build_qnn(2)
        samples = encode_samples(synthetic_split.train)
        labels = [s.label for s in samples]
        accuracies = []
        for seed in range(1, 6):
            params = init_params(circuit.n_params, seed)
            for _ in range(200):
                _, grad = batch_loss_and_gradient(circuit, params, samples, readout=readout, observable=PauliKind.Y)
                params = sgd_step_plain(params, grad, 0.1)
            outputs = [model_expectation(circuit, params, s.input_state, readout, PauliKind.Y) for s in samples]
            accuracies.append(accuracy(outputs, labels))
        assert np.mean(accuracies) >= 0.95


class TestSuperpositionBatch:

    def test_singletons(self):
        batch = build_superposition_batch([sample_of("011", 1), sample_of("101", -1)])
        np.testing.assert_array_equal(batch.plus_state.amps, basis_state(3, "011").amps)

    def test_equal_amplitudes(self):
        batch = build_superposition_batch([sample_of("011", 1), sample_of("111", 1), sample_of("001", -1)])
        assert batch.plus_state.amps[3] == pytest.approx(1 / math.sqrt(2))
        assert batch.plus_state.amps[7] == pytest.approx(1 / math.sqrt(2))
        for state in (batch.plus_state, batch.minus_state):
            assert state.norm() == pytest.approx(1, abs=1e-12)

    def test_empty_class(self):
        with pytest.raises(InvalidArgumentError):
            build_superposition_batch([sample_of("011", 1)])

    def test_duplicate_within_class(self):
        with pytest.raises(InvalidArgumentError):
            build_superposition_batch([sample_of("011", 1), sample_of("011", 1), sample_of("001", -1)])

    def test_overlapping_supports_rejected(self):
        state = basis_state(2, "01")
        with pytest.raises(ValidationError):
            SuperpositionBatch(plus_state=state, minus_state=state.clone())

    def test_singleton_batch_loss(self, rng):
        circuit, readout = build_qnn(2)
        params = init_params(8, 2)
        plus, minus = dim2_samples([(5, 1), (10, -1)])
        e_plus = model_expectation(circuit, params, plus.input_state, readout)
        e_minus = model_expectation(circuit, params, minus.input_state, readout)
        batch = build_superposition_batch([plus, minus])
        assert loss_batch(circuit, params, batch, readout) == pytest.approx(1 - 0.5 * (e_plus - e_minus), abs=1e-12)

    @patch("qnn_bench.qml.model_expectation")
    def test_perfect_classifier(self, mock_model_expectation):
        mock_model_expectation.side_effect = [1.0, -1.0]
        circuit, readout = build_qnn(2)
        batch = build_superposition_batch(dim2_samples([(5, 1), (10, -1)]))
        assert loss_batch(circuit, init_params(8, 1), batch, readout) == 0

    def test_gap_vanishes_without_data_mixing(self):
        circuit, readout = build_qnn(2)
        thetas = init_params(8, 6).thetas.copy()
        thetas[:4] = 0.0
        samples = dim2_samples([(1, 1), (7, 1), (8, -1), (14, -1)])
        assert abs(superposition_gap(circuit, ParamVector(thetas=thetas), samples, readout)) < 1e-12

    def test_gap_is_nonzero_in_general(self):
        circuit, readout = build_qnn(2)
        samples = dim2_samples([(1, 1), (7, 1), (8, -1)])
        assert abs(superposition_gap(circuit, init_params(8, 6), samples, readout)) > 1e-6

    def test_gap_cancels_for_complementary_classes(self):
        # 14 and 8 are the bit complements of 1 and 7; the Z readout is complement-symmetric
        circuit, readout = build_qnn(2)
        samples = dim2_samples([(1, 1), (7, 1), (14, -1), (8, -1)])
        assert abs(superposition_gap(circuit, init_params(8, 6), samples, readout)) < 1e-12
