"""Exact statevector simulation and Pauli-Z observables.

Amplitude ordering: basis index ``x = sum_i x_i * 2**(N-1-i)``, so qubit 0
is the most significant bit. All arithmetic is complex128 / float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuits import Circuit, Gate, measurement_rng
from .errors import IndexOutOfRange, TooManyQubits

__all__ = [
    "StateVector",
    "ExpectationRecord",
    "MeasurementEstimate",
    "apply_gate",
    "run_circuit",
    "expectations",
    "sample_measurements",
    "sample_from_probabilities",
    "dense_unitary_oracle",
    "simulate_batch",
    "label_circuits",
    "MAX_QUBITS",
]

MAX_QUBITS = 24
ORACLE_MAX_QUBITS = 6

_SQRT_HALF = 1.0 / math.sqrt(2.0)
_T_PHASE = complex(math.cos(math.pi / 4), math.sin(math.pi / 4))

H_MATRIX = np.array([[1, 1], [1, -1]], dtype=np.complex128) * _SQRT_HALF
T_MATRIX = np.array([[1, 0], [0, _T_PHASE]], dtype=np.complex128)
I_MATRIX = np.eye(2, dtype=np.complex128)
CX_MATRIX = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128)


@dataclass
class StateVector:
    amplitudes: np.ndarray
    n_qubits: int

    @classmethod
    def zero(cls, n_qubits: int) -> "StateVector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[0] = 1.0
        return cls(amps, n_qubits)

    def probabilities(self) -> np.ndarray:
        a = self.amplitudes
        return a.real * a.real + a.imag * a.imag

    def norm(self) -> float:
        return float(self.probabilities().sum())


@dataclass
class ExpectationRecord:
    raw_Z: np.ndarray
    z: np.ndarray
    raw_ZZ: float | None = None
    z12: float | None = None
    pair: tuple[int, int] | None = None


@dataclass
class MeasurementEstimate:
    n_measure: int
    z_tilde: np.ndarray
    shots: np.ndarray | None = field(default=None, repr=False)


def rescale(raw: np.ndarray | float) -> np.ndarray | float:
    """Map a Pauli expectation in [-1, 1] onto [0, 1] (1 means bit value 1)."""
    return 1.0 - (raw + 1.0) / 2.0


def _check_qubit(q: int, n: int) -> None:
    if not 0 <= q < n:
        raise IndexOutOfRange(f"qubit {q} outside [0, {n})")


def apply_gate(state: StateVector, gate: Gate, qubits: int | Sequence[int]) -> StateVector:
    """Apply one gate in place.

    Single-qubit gates take a qubit index; CX takes ``(control, target)``.
    Each amplitude pair is touched once via a strided view.
    """
    n = state.n_qubits
    psi = state.amplitudes
    if gate in (Gate.CX_CONTROL, Gate.CX_TARGET):
        control, target = qubits
        _check_qubit(control, n)
        _check_qubit(target, n)
        if control == target:
            raise IndexOutOfRange("CX control and target must differ")
        view = psi.reshape((2,) * n)
        hi = [slice(None)] * n
        hi[control] = 1
        lo = list(hi)
        hi[target] = 1
        lo[target] = 0
        hi, lo = tuple(hi), tuple(lo)
        tmp = view[lo].copy()
        view[lo] = view[hi]
        view[hi] = tmp
        return state
    q = int(qubits if np.isscalar(qubits) else qubits[0])
    _check_qubit(q, n)
    view = psi.reshape(2**q, 2, 2 ** (n - q - 1))
    if gate == Gate.H:
        a = view[:, 0, :].copy()
        b = view[:, 1, :]
        view[:, 0, :] += b
        view[:, 0, :] *= _SQRT_HALF
        b *= -1.0
        b += a
        b *= _SQRT_HALF
    elif gate == Gate.T:
        view[:, 1, :] *= _T_PHASE
    elif gate != Gate.I:
        raise ValueError(f"unsupported gate {gate!r}")
    return state


def run_circuit(c: Circuit, max_qubits: int = MAX_QUBITS) -> StateVector:
    if c.n_qubits > max_qubits:
        raise TooManyQubits(f"{c.n_qubits} qubits exceeds the simulator limit {max_qubits}")
    state = StateVector.zero(c.n_qubits)
    for layer in c.layers:
        for q, g in enumerate(layer.gates):
            if g in (Gate.T, Gate.H):
                apply_gate(state, g, q)
        if layer.cx_pair is not None:
            apply_gate(state, Gate.CX_CONTROL, layer.cx_pair)
    return state


_SIGN_CACHE: dict[int, np.ndarray] = {}


def z_signs(n: int) -> np.ndarray:
    """``(2**n, n)`` table of ``1 - 2 x_i`` for every basis state."""
    if n not in _SIGN_CACHE:
        x = np.arange(2**n)[:, None]
        bits = (x >> (n - 1 - np.arange(n))[None, :]) & 1
        _SIGN_CACHE[n] = 1.0 - 2.0 * bits
    return _SIGN_CACHE[n]


def expectations(state: StateVector, want_zz: tuple[int, int] | None = None) -> ExpectationRecord:
    probs = state.probabilities()
    signs = z_signs(state.n_qubits)
    raw_z = probs @ signs
    rec = ExpectationRecord(raw_Z=raw_z, z=rescale(raw_z))
    if want_zz is not None:
        i, j = want_zz
        _check_qubit(i, state.n_qubits)
        _check_qubit(j, state.n_qubits)
        raw_zz = float(probs @ (signs[:, i] * signs[:, j]))
        rec.raw_ZZ = raw_zz
        rec.z12 = float(rescale(raw_zz))
        rec.pair = (i, j)
    return rec


def _draw_outcomes(probs: np.ndarray, n_measure: int, rng: np.random.Generator) -> np.ndarray:
    # inverse-CDF; sorted uniforms let searchsorted walk the CDF once
    cdf = np.cumsum(probs)
    u = rng.random(n_measure) * cdf[-1]
    if n_measure > 1024:
        u.sort()
    outcomes = np.searchsorted(cdf, u, side="right")
    np.minimum(outcomes, probs.size - 1, out=outcomes)
    return outcomes


def _bit_frequencies(outcomes: np.ndarray, n: int) -> np.ndarray:
    bits = (outcomes[:, None] >> (n - 1 - np.arange(n))[None, :]) & 1
    return bits.sum(axis=0) / outcomes.size


def sample_from_probabilities(probs: np.ndarray, n_qubits: int, n_measure: int, seed: int,
                              index: int = 0) -> np.ndarray:
    """Shot estimate ``z~`` from a probability vector (one shared shot set)."""
    if n_measure < 1:
        raise ValueError("n_measure must be >= 1")
    outcomes = _draw_outcomes(probs, n_measure, measurement_rng(seed, index))
    return _bit_frequencies(outcomes, n_qubits)


def sample_measurements(state: StateVector, n_measure: int, seed: int, index: int = 0,
                        keep_shots: bool = False) -> MeasurementEstimate:
    """Draw ``n_measure`` computational-basis shots and average each bit.

    Every qubit's estimate comes from the same set of bitstrings.
    """
    if n_measure < 1:
        raise ValueError("n_measure must be >= 1")
    outcomes = _draw_outcomes(state.probabilities(), n_measure, measurement_rng(seed, index))
    z_tilde = _bit_frequencies(outcomes, state.n_qubits)
    return MeasurementEstimate(n_measure, z_tilde, outcomes if keep_shots else None)


_P0 = np.array([[1, 0], [0, 0]], dtype=np.complex128)
_P1 = np.array([[0, 0], [0, 1]], dtype=np.complex128)
_X = np.array([[0, 1], [1, 0]], dtype=np.complex128)


def _kron_all(factors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for f in factors:
        out = np.kron(out, f)
    return out


def dense_unitary_oracle(c: Circuit) -> np.ndarray:
    """Full ``2**N x 2**N`` circuit unitary from explicit Kronecker products.

    A CX layer is ``kron(.., P0 @ control, .., I @ target, ..) +
    kron(.., P1 @ control, .., X @ target, ..)`` with the layer's single-qubit
    gates in the remaining slots.
    """
    n = c.n_qubits
    if n > ORACLE_MAX_QUBITS:
        raise TooManyQubits(f"dense oracle supports at most {ORACLE_MAX_QUBITS} qubits")
    single = {Gate.I: I_MATRIX, Gate.T: T_MATRIX, Gate.H: H_MATRIX}
    u = np.eye(2**n, dtype=np.complex128)
    for layer in c.layers:
        if layer.cx_pair is None:
            lu = _kron_all([single[g] for g in layer.gates])
        else:
            control, target = layer.cx_pair
            branches = []
            for proj, flip in ((_P0, I_MATRIX), (_P1, _X)):
                factors = []
                for q, g in enumerate(layer.gates):
                    factors.append(proj if q == control else flip if q == target else single[g])
                branches.append(_kron_all(factors))
            lu = branches[0] + branches[1]
        u = lu @ u
    return u


# -- batched simulation used for dataset labelling ---------------------------

def simulate_batch(kinds: np.ndarray, max_qubits: int = MAX_QUBITS) -> np.ndarray:
    """Simulate ``B`` same-size circuits at once.

    ``kinds`` has shape ``(B, P, N)``. Returns the ``(B, 2**N)`` amplitudes.
    Gate choice differs per circuit, so each (layer, qubit) slot applies H
    and T to the subsets of circuits that hold them, and CX is applied per
    distinct (control, target) group.
    """
    b, p, n = kinds.shape
    if n > max_qubits:
        raise TooManyQubits(f"{n} qubits exceeds the simulator limit {max_qubits}")
    psi = np.zeros((b, 2**n), dtype=np.complex128)
    psi[:, 0] = 1.0
    for layer in range(p):
        row = kinds[:, layer, :]
        for q in range(n):
            view = psi.reshape(b, 2**q, 2, 2 ** (n - q - 1))
            col = row[:, q]
            h_idx = np.flatnonzero(col == Gate.H)
            if h_idx.size:
                sub = view[h_idx]
                a0 = sub[:, :, 0, :]
                a1 = sub[:, :, 1, :]
                out = np.empty_like(sub)
                np.add(a0, a1, out=out[:, :, 0, :])
                np.subtract(a0, a1, out=out[:, :, 1, :])
                out *= _SQRT_HALF
                view[h_idx] = out
            t_idx = np.flatnonzero(col == Gate.T)
            if t_idx.size:
                view[t_idx, :, 1, :] *= _T_PHASE
        ctrl_rows, ctrl_q = np.nonzero(row == Gate.CX_CONTROL)
        if ctrl_rows.size:
            targ_q = np.argmax(row[ctrl_rows] == Gate.CX_TARGET, axis=1)
            keys = ctrl_q * n + targ_q
            for key in np.unique(keys):
                idx = ctrl_rows[keys == key]
                control, target = divmod(int(key), n)
                view = psi.reshape((b,) + (2,) * n)
                lo = [idx] + [slice(None)] * n
                lo[1 + control] = 1
                hi = list(lo)
                lo[1 + target] = 0
                hi[1 + target] = 1
                lo, hi = tuple(lo), tuple(hi)
                tmp = view[lo]
                view[lo] = view[hi]
                view[hi] = tmp
    return psi


def label_circuits(circuits: Sequence[Circuit], pair: tuple[int, int] | None = None,
                   chunk_amplitudes: int = 1 << 22) -> tuple[np.ndarray, np.ndarray | None]:
    """Raw ``<Z_i>`` for every circuit (and ``<Z_i Z_j>`` when ``pair`` is given).

    Returns ``(raw_z, raw_zz)`` with shapes ``(B, N)`` and ``(B,)``.
    """
    if not circuits:
        return np.zeros((0, 0)), None
    n = circuits[0].n_qubits
    kinds = np.stack([c.kinds for c in circuits])
    signs = z_signs(n)
    chunk = max(1, chunk_amplitudes // 2**n)
    raw_z = np.empty((len(circuits), n))
    raw_zz = np.empty(len(circuits)) if pair is not None else None
    zz_sign = signs[:, pair[0]] * signs[:, pair[1]] if pair is not None else None
    for start in range(0, len(circuits), chunk):
        psi = simulate_batch(kinds[start:start + chunk])
        probs = psi.real**2 + psi.imag**2
        raw_z[start:start + chunk] = probs @ signs
        if raw_zz is not None:
            raw_zz[start:start + chunk] = probs @ zz_sign
    return raw_z, raw_zz
