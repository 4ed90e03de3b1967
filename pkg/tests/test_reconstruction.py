"""Two-outcome reconstruction from Z expectations and BV decoding."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qclearn.circuits import Circuit, build_bv_circuit
from qclearn.errors import InconsistentInput, LengthMismatch
from qclearn.reconstruction import decode_bv, forward_expectations, reconstruct, state_provider
from qclearn.simulator import label_circuits, rescale, run_circuit


def support_of(state, cutoff=1e-10):
    n = state.n_qubits
    probs = state.probabilities()
    return {format(x, f"0{n}b"): float(probs[x]) for x in np.flatnonzero(probs > cutoff)}


def unordered(res):
    return {"".join(map(str, res.a)): res.p_a, "".join(map(str, res.b)): res.p_b}


# ═══════════════════════════════════════════════════════════════════
# Worked examples
# ═══════════════════════════════════════════════════════════════════


class TestExamples:
    def test_deterministic_output(self):
        res = reconstruct([1.0, -1.0, 1.0])
        assert res.a == res.b == (0, 1, 0) and res.support() == {"010": 1.0}

    def test_unequal_pair(self):
        z, zz = forward_expectations([1, 0, 1], [0, 0, 0], 0.3)
        res = reconstruct(z, zz)
        assert res.a == (1, 0, 1) and res.b == (0, 0, 0)
        assert abs(res.p_a - 0.3) < 1e-15 and res.zz_queries == []

    def test_first_interior_gets_bit_one(self):
        z, zz = forward_expectations([0, 1], [1, 0], 0.8)
        res = reconstruct(z, zz)
        assert res.a == (1, 0) and abs(res.p_a - 0.2) < 1e-15

    def test_half_needs_zz(self):
        z, zz = forward_expectations([0, 0, 1], [1, 1, 0], 0.5)
        res = reconstruct(z, zz)
        assert res.a == (1, 1, 0) and res.b == (0, 0, 1)
        assert res.zz_queries == [(1, 0), (2, 0)]

    def test_half_without_zz(self):
        z, _ = forward_expectations([0, 1], [1, 0], 0.5)
        with pytest.raises(InconsistentInput):
            reconstruct(z)

    def test_inconsistent(self):
        with pytest.raises(InconsistentInput):
            reconstruct([0.2, 0.5])
        with pytest.raises(InconsistentInput):
            reconstruct([1.5])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            forward_expectations([0, 1], [1], 0.5)

    def test_snapping_noisy_values(self):
        z, zz = forward_expectations([1, 0, 1, 1], [0, 0, 0, 1], 0.3)
        noisy = np.asarray(z) + np.array([0.03, -0.04, 0.05, -0.02])
        res = reconstruct(noisy, zz, snap=True)
        assert res.a == (1, 0, 1, 1) and res.b == (0, 0, 0, 1)

    def test_snapped_zz(self):
        z, zz = forward_expectations([0, 1], [1, 0], 0.5)
        res = reconstruct(z, lambda i, j: 0.9 * zz(i, j), snap=True)
        assert res.a == (1, 0)


# ═══════════════════════════════════════════════════════════════════
# Roundtrip property
# ═══════════════════════════════════════════════════════════════════


bitstrings = st.integers(1, 10).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 1), min_size=n, max_size=n),
                        st.lists(st.integers(0, 1), min_size=n, max_size=n)))


class TestRoundtrip:
    def test_200_random(self):
        rng = np.random.default_rng(0)
        for trial in range(200):
            n = int(rng.integers(1, 12))
            a = rng.integers(0, 2, n)
            b = a.copy()
            b[rng.choice(n, int(rng.integers(1, n + 1)), replace=False)] ^= 1
            p_a = 0.5 if trial % 8 == 0 else float(rng.uniform(1e-3, 1 - 1e-3))
            z, zz = forward_expectations(a, b, p_a)
            res = reconstruct(z, zz)
            got, want = unordered(res), {"".join(map(str, a)): p_a, "".join(map(str, b)): 1 - p_a}
            assert got.keys() == want.keys()
            assert max(abs(got[k] - want[k]) for k in want) < 1e-12
            first = next(i for i in range(n) if a[i] != b[i])
            assert res.a[first] == 1 and res.b[first] == 0
            if p_a != 0.5:
                assert res.zz_queries == []
            else:
                assert all(abs(z[i]) < 1e-12 for i, _ in res.zz_queries)

    @settings(max_examples=200, deadline=None)
    @given(bitstrings, st.floats(0.001, 0.999))
    def test_property(self, ab, p_a):
        a, b = ab
        z, zz = forward_expectations(a, b, p_a)
        res = reconstruct(z, zz)
        if a == b:
            assert res.support() == {"".join(map(str, a)): 1.0}
        else:
            want = {"".join(map(str, a)): p_a, "".join(map(str, b)): 1 - p_a}
            got = unordered(res)
            assert got.keys() == want.keys()
            assert max(abs(got[k] - want[k]) for k in want) < 1e-12


# ═══════════════════════════════════════════════════════════════════
# Consistency with simulated circuits
# ═══════════════════════════════════════════════════════════════════


class TestSimulatedStates:
    @pytest.mark.parametrize("layers", [
        ["HTT", "CXT", "TCX"],  # GHZ: H then a CX chain
        ["HT", "CX", "TT"],
        ["HTT", "CTX", "TTT"],
        ["THT", "TCX", "TTT"],
        ["HTT", "TTT"],
        ["TTT"],
        ["HHT", "HHT"],
    ])
    def test_matches_statevector(self, layers):
        state = run_circuit(Circuit.from_layers(layers))
        want = support_of(state)
        assert len(want) <= 2
        raw, zz = state_provider(state)
        got = reconstruct(raw, zz).support()
        assert got.keys() == want.keys()
        assert all(abs(got[k] - want[k]) < 1e-10 for k in want)

    @pytest.mark.parametrize("n,w", [(4, "010"), (5, "1011"), (6, "00000"), (8, "1000001")])
    def test_bv_states(self, n, w):
        state = run_circuit(build_bv_circuit(n, w))
        raw, zz = state_provider(state)
        res = reconstruct(raw, zz)
        data = {k[:-1] for k in res.support()}
        assert data == {w}


# ═══════════════════════════════════════════════════════════════════
# BV decoding
# ═══════════════════════════════════════════════════════════════════


class TestDecodeBV:
    def test_three_bit_secret(self):
        raw, _ = label_circuits([build_bv_circuit(4, "010")])
        assert decode_bv(rescale(raw[0])[:3]) == (0, 1, 0)

    def test_all_zero(self):
        assert decode_bv(np.zeros(7)) == (0,) * 7

    def test_threshold(self):
        assert decode_bv([0.49, 0.51, 0.9], threshold=0.5) == (0, 1, 1)
        assert decode_bv([0.49, 0.51, 0.9], threshold=0.6) == (0, 0, 1)

    def test_exhaustive(self):
        for n in range(2, 11):
            for k in range(4):
                for ones in itertools.combinations(range(n - 1), k):
                    w = tuple(int(i in ones) for i in range(n - 1))
                    raw, _ = label_circuits([build_bv_circuit(n, w)])
                    assert decode_bv(rescale(raw[0])[: n - 1]) == w
