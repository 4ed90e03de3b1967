"""Statevector kernels, observables, shot sampling and the dense oracle."""

import math

import numpy as np
import pytest

from qclearn.circuits import Circuit, Gate, GateSet, sample_random_circuit
from qclearn.errors import IndexOutOfRange, TooManyQubits
from qclearn.simulator import (
    CX_MATRIX,
    H_MATRIX,
    StateVector,
    apply_gate,
    dense_unitary_oracle,
    expectations,
    label_circuits,
    rescale,
    run_circuit,
    sample_measurements,
    simulate_batch,
    z_signs,
)


def random_state(n, rng):
    amps = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return StateVector(amps / np.linalg.norm(amps), n)


def oracle_expectations(c, pair):
    psi = dense_unitary_oracle(c)[:, 0]
    probs = np.abs(psi) ** 2
    n = c.n_qubits
    bits = np.array([[(x >> (n - 1 - i)) & 1 for i in range(n)] for x in range(2**n)])
    raw_z = probs @ (1 - 2 * bits)
    i, j = pair
    raw_zz = probs @ ((1 - 2 * bits[:, i]) * (1 - 2 * bits[:, j]))
    return raw_z, raw_zz


BELL = Circuit.from_layers(["HT", "CX"])


# ═══════════════════════════════════════════════════════════════════
# Gate kernels
# ═══════════════════════════════════════════════════════════════════


class TestApplyGate:
    def test_initial_state(self):
        s = StateVector.zero(3)
        assert s.amplitudes[0] == 1 and np.count_nonzero(s.amplitudes) == 1

    def test_hadamard_on_zero(self):
        s = apply_gate(StateVector.zero(1), Gate.H, 0)
        assert np.allclose(s.amplitudes, [1 / math.sqrt(2)] * 2, atol=1e-15)

    def test_cx_on_10(self):
        s = StateVector(np.array([0, 0, 1, 0], dtype=np.complex128), 2)
        apply_gate(s, Gate.CX_CONTROL, (0, 1))
        assert np.allclose(s.amplitudes, [0, 0, 0, 1])

    def test_t_phase(self):
        s = apply_gate(StateVector.zero(1), Gate.H, 0)
        apply_gate(s, Gate.T, 0)
        expected = np.array([1, np.exp(1j * math.pi / 4)]) / math.sqrt(2)
        assert np.allclose(s.amplitudes, expected, atol=1e-15)

    def test_qubit_zero_is_msb(self):
        s = StateVector.zero(3)
        apply_gate(s, Gate.H, 0)
        assert np.count_nonzero(np.abs(s.amplitudes) > 1e-12) == 2
        assert abs(s.amplitudes[4]) > 0.7

    def test_matches_matrices(self):
        rng = np.random.default_rng(1)
        s = random_state(2, rng)
        ref = CX_MATRIX @ s.amplitudes
        apply_gate(s, Gate.CX_CONTROL, (0, 1))
        assert np.allclose(s.amplitudes, ref, atol=1e-14)
        s = random_state(1, rng)
        ref = H_MATRIX @ s.amplitudes
        apply_gate(s, Gate.H, 0)
        assert np.allclose(s.amplitudes, ref, atol=1e-14)

    def test_index_errors(self):
        with pytest.raises(IndexOutOfRange):
            apply_gate(StateVector.zero(2), Gate.H, 2)
        with pytest.raises(IndexOutOfRange):
            apply_gate(StateVector.zero(2), Gate.CX_CONTROL, (1, 1))

    @pytest.mark.parametrize("gate,repeat,qubits", [(Gate.H, 2, 1), (Gate.CX_CONTROL, 2, (2, 0)),
                                                    (Gate.T, 8, 3)])
    def test_identities_preserve_expectations(self, gate, repeat, qubits):
        rng = np.random.default_rng(7)
        for _ in range(20):
            s = random_state(4, rng)
            before = expectations(s).z
            for _ in range(repeat):
                apply_gate(s, gate, qubits)
            assert np.max(np.abs(expectations(s).z - before)) < 1e-12

    def test_norm_preserved(self):
        for i in range(50):
            s = run_circuit(sample_random_circuit(6, 8, seed=3, index=i))
            assert abs(s.norm() - 1) < 1e-12


# ═══════════════════════════════════════════════════════════════════
# Circuits and expectations
# ═══════════════════════════════════════════════════════════════════


class TestRunCircuit:
    def test_hh_is_identity(self):
        s = run_circuit(Circuit.from_layers(["H", "H"]))
        assert np.allclose(s.amplitudes, [1, 0], atol=1e-15)

    def test_bell(self):
        s = run_circuit(BELL)
        assert np.allclose(s.amplitudes, np.array([1, 0, 0, 1]) / math.sqrt(2), atol=1e-15)

    def test_too_many_qubits(self):
        c = Circuit(np.full((1, 25), Gate.T, dtype=np.int8))
        with pytest.raises(TooManyQubits):
            run_circuit(c)

    def test_identity_gate(self):
        c = Circuit.from_layers(["IH", "HI"], GateSet.S_STAR)
        assert np.allclose(np.abs(run_circuit(c).amplitudes) ** 2, 0.25)


class TestExpectations:
    def test_zero_state(self):
        assert expectations(StateVector.zero(1)).z[0] == 0

    def test_one_state(self):
        s = StateVector(np.array([0, 1], dtype=np.complex128), 1)
        assert expectations(s).z[0] == 1

    def test_bell(self):
        rec = expectations(run_circuit(BELL), want_zz=(0, 1))
        assert np.allclose(rec.z, [0.5, 0.5], atol=1e-15)
        assert abs(rec.z12) < 1e-15 and abs(rec.raw_ZZ - 1) < 1e-15

    def test_rescale_relation(self):
        rec = expectations(run_circuit(sample_random_circuit(4, 6, seed=1)), want_zz=(1, 3))
        assert np.array_equal(rec.z, 1 - (rec.raw_Z + 1) / 2)
        assert rec.z12 == 1 - (rec.raw_ZZ + 1) / 2

    def test_product_rule_without_cx(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            kinds = rng.choice([Gate.T, Gate.H], size=(5, 4)).astype(np.int8)
            s = run_circuit(Circuit(kinds))
            rec = expectations(s, want_zz=(0, 2))
            assert abs(rec.raw_ZZ - rec.raw_Z[0] * rec.raw_Z[2]) < 1e-10

    def test_sign_table(self):
        t = z_signs(2)
        assert t.tolist() == [[1, 1], [1, -1], [-1, 1], [-1, -1]]

    def test_zz_index_error(self):
        with pytest.raises(IndexOutOfRange):
            expectations(StateVector.zero(2), want_zz=(0, 2))


# ═══════════════════════════════════════════════════════════════════
# Dense oracle
# ═══════════════════════════════════════════════════════════════════


class TestOracle:
    def test_h_matrix(self):
        assert np.allclose(dense_unitary_oracle(Circuit.from_layers(["H"])), H_MATRIX, atol=1e-15)

    def test_cx_matrix(self):
        assert np.array_equal(dense_unitary_oracle(Circuit.from_layers(["CX"])), CX_MATRIX)

    def test_unitary(self):
        for i in range(100):
            c = sample_random_circuit(1 + i % 4, 5, seed=8, index=i)
            u = dense_unitary_oracle(c)
            assert np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < 1e-12

    def test_limit(self):
        with pytest.raises(TooManyQubits):
            dense_unitary_oracle(Circuit(np.full((1, 7), Gate.T, dtype=np.int8)))

    @pytest.mark.parametrize("n,p", [(2, 4), (3, 5), (4, 5), (5, 4), (6, 4)])
    def test_statevector_matches_oracle(self, n, p):
        for i in range(100):
            c = sample_random_circuit(n, p, seed=100 + n, index=i)
            pair = (i % n, (i + 1) % n)
            raw_z, raw_zz = oracle_expectations(c, pair)
            rec = expectations(run_circuit(c), want_zz=pair)
            assert np.max(np.abs(rec.raw_Z - raw_z)) < 1e-10
            assert abs(rec.raw_ZZ - raw_zz) < 1e-10


# ═══════════════════════════════════════════════════════════════════
# Batched labelling
# ═══════════════════════════════════════════════════════════════════


class TestBatch:
    @pytest.mark.parametrize("n,p,gs", [(1, 3, GateSet.S), (3, 5, GateSet.S), (5, 6, GateSet.S_STAR)])
    def test_batch_equals_single(self, n, p, gs):
        circuits = [sample_random_circuit(n, p, gs, seed=4, index=i) for i in range(200)]
        psi = simulate_batch(np.stack([c.kinds for c in circuits]))
        for k, c in enumerate(circuits):
            assert np.max(np.abs(psi[k] - run_circuit(c).amplitudes)) < 1e-13

    def test_label_circuits(self):
        circuits = [sample_random_circuit(4, 5, seed=2, index=i) for i in range(64)]
        raw_z, raw_zz = label_circuits(circuits, pair=(1, 2), chunk_amplitudes=64)
        for k, c in enumerate(circuits):
            rec = expectations(run_circuit(c), want_zz=(1, 2))
            assert np.max(np.abs(raw_z[k] - rec.raw_Z)) < 1e-12
            assert abs(raw_zz[k] - rec.raw_ZZ) < 1e-12


# ═══════════════════════════════════════════════════════════════════
# Shot sampling
# ═══════════════════════════════════════════════════════════════════


class TestSampling:
    def test_zero_state(self):
        est = sample_measurements(StateVector.zero(4), 100, seed=1)
        assert np.all(est.z_tilde == 0)

    def test_grid(self):
        s = run_circuit(sample_random_circuit(4, 6, seed=1, index=2))
        est = sample_measurements(s, 32, seed=5)
        assert np.all(np.isclose(est.z_tilde * 32, np.round(est.z_tilde * 32)))

    def test_deterministic(self):
        s = run_circuit(BELL)
        a = sample_measurements(s, 50, seed=9, index=3).z_tilde
        b = sample_measurements(s, 50, seed=9, index=3).z_tilde
        assert np.array_equal(a, b)

    def test_shared_shots(self):
        # Bell outcomes are 00 or 11, so both bits agree in every shot
        est = sample_measurements(run_circuit(BELL), 1000, seed=2, keep_shots=True)
        assert set(np.unique(est.shots).tolist()) <= {0, 3}
        assert est.z_tilde[0] == est.z_tilde[1]

    def test_bell_large_sample(self):
        est = sample_measurements(run_circuit(BELL), 10**6, seed=3)
        assert abs(est.z_tilde[0] - 0.5) < 0.0025

    def test_sorted_and_direct_paths_agree_in_distribution(self):
        s = run_circuit(sample_random_circuit(3, 6, seed=1, index=5))
        z = expectations(s).z
        small = np.mean([sample_measurements(s, 1000, seed=k).z_tilde for k in range(40)], axis=0)
        large = sample_measurements(s, 40_000, seed=99).z_tilde
        assert np.max(np.abs(small - z)) < 5 * math.sqrt(0.25 / 40_000) + 1e-9
        assert np.max(np.abs(large - z)) < 5 * math.sqrt(0.25 / 40_000) + 1e-9

    @pytest.mark.parametrize("n_measure", [8, 32, 2048])
    def test_mean_converges(self, n_measure):
        s = run_circuit(sample_random_circuit(4, 7, seed=6, index=1))
        z = expectations(s).z
        mean = np.mean([sample_measurements(s, n_measure, seed=k).z_tilde for k in range(200)], axis=0)
        bound = 5 * np.sqrt(z * (1 - z) / (200 * n_measure)) + 1e-9
        assert np.all(np.abs(mean - z) <= bound)

    def test_rejects_zero_shots(self):
        with pytest.raises(ValueError):
            sample_measurements(StateVector.zero(1), 0, seed=0)


class TestDistribution:
    @staticmethod
    def z1_values(p, seed=0, count=5000):
        circuits = [sample_random_circuit(3, p, seed=seed, index=i) for i in range(count)]
        return rescale(label_circuits(circuits)[0][:, 0])

    def test_spread_shrinks_with_depth(self):
        spread = [self.z1_values(p).std() for p in (3, 5, 10, 20)]
        assert all(a > b for a, b in zip(spread, spread[1:]))

    def test_deep_limit_is_haar_like(self):
        # z_1 of a Haar-random 3-qubit state is Beta(4, 4): std 1/6
        assert abs(self.z1_values(60, count=3000).std() - 1 / 6) < 0.01

    def test_shallow_circuits_spike_at_half(self):
        z = self.z1_values(5)
        assert np.mean(np.isclose(z, 0.5)) > 0.5
        assert np.mean(z < 0.1) > 0.2
