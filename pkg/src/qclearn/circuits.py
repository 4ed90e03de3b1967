"""Constrained random circuits over {T, H, CX} (optionally with I).

A circuit is stored as a ``(P, N)`` array of gate kinds, layer-major, so
that row ``p`` is the layer applied at time step ``p`` and column ``q`` is
qubit ``q``. Qubit 0 is the first row of the one-hot encoding. Every qubit
receives exactly one gate per layer and a layer holds at most one CX.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    DegeneratePair,
    EnsembleTooLarge,
    IndexOutOfRange,
    InvalidCircuit,
    InvalidSecret,
    MalformedEncoding,
)

__all__ = [
    "GateSet",
    "Gate",
    "Layer",
    "Circuit",
    "CircuitEncoding",
    "encode_one_hot",
    "encode_batch",
    "decode_one_hot",
    "count_circuits",
    "layer_count",
    "sample_random_circuit",
    "circuit_rng",
    "measurement_rng",
    "enumerate_circuits",
    "swap_qubit_rows",
    "swap_qubit_pair",
    "build_bv_circuit",
    "bv_depth",
]

ENUMERATION_LIMIT = 10**6


class GateSet(enum.Enum):
    S = 0
    S_STAR = 1

    @property
    def channel_count(self) -> int:
        return 4 if self is GateSet.S else 5

    @property
    def single_qubit_kinds(self) -> tuple["Gate", ...]:
        if self is GateSet.S:
            return (Gate.T, Gate.H)
        return (Gate.I, Gate.T, Gate.H)

    @classmethod
    def parse(cls, name: "str | GateSet") -> "GateSet":
        if isinstance(name, GateSet):
            return name
        key = name.strip().lower().replace("-", "_").replace("*", "_star")
        if key in ("s",):
            return cls.S
        if key in ("s_star", "sstar"):
            return cls.S_STAR
        raise ValueError(f"unknown gate set {name!r}")

    @property
    def cli_name(self) -> str:
        return "s" if self is GateSet.S else "s-star"


class Gate(enum.IntEnum):
    """Gate kinds. The integer value is the S_star channel / byte code."""

    I = 0  # noqa: E741
    T = 1
    H = 2
    CX_CONTROL = 3
    CX_TARGET = 4

    def code(self, gate_set: GateSet) -> int:
        """Channel index (and serialization byte) under ``gate_set``."""
        if gate_set is GateSet.S:
            if self is Gate.I:
                raise InvalidCircuit("identity gate is not part of gate set S")
            return int(self) - 1
        return int(self)


# kind -> channel lookup tables; -1 marks kinds that do not exist in the set
_KIND_TO_CODE = {
    GateSet.S: np.array([-1, 0, 1, 2, 3], dtype=np.int8),
    GateSet.S_STAR: np.array([0, 1, 2, 3, 4], dtype=np.int8),
}
_CODE_TO_KIND = {
    GateSet.S: np.array([1, 2, 3, 4], dtype=np.int8),
    GateSet.S_STAR: np.array([0, 1, 2, 3, 4], dtype=np.int8),
}


@dataclass(frozen=True)
class Layer:
    gates: tuple[Gate, ...]
    cx_pair: tuple[int, int] | None = None


def _validate_kinds(kinds: np.ndarray, gate_set: GateSet) -> None:
    if kinds.ndim != 2 or kinds.shape[0] < 1 or kinds.shape[1] < 1:
        raise InvalidCircuit(f"gate array must be (P>=1, N>=1), got {kinds.shape}")
    if kinds.min() < 0 or kinds.max() > 4:
        raise InvalidCircuit("unknown gate kind")
    if gate_set is GateSet.S and np.any(kinds == Gate.I):
        raise InvalidCircuit("identity gate is not part of gate set S")
    n_ctrl = np.count_nonzero(kinds == Gate.CX_CONTROL, axis=1)
    n_targ = np.count_nonzero(kinds == Gate.CX_TARGET, axis=1)
    bad = (n_ctrl > 1) | (n_targ > 1) | (n_ctrl != n_targ)
    if np.any(bad):
        layer = int(np.flatnonzero(bad)[0])
        raise InvalidCircuit(f"layer {layer} violates the one-CX-per-layer constraint")


class Circuit:
    """Immutable N-qubit, P-layer circuit.

    ``kinds`` has shape ``(P, N)``; entry ``[p, q]`` is the :class:`Gate`
    acting on qubit ``q`` in layer ``p``.
    """

    __slots__ = ("_kinds", "gate_set", "__dict__")

    def __init__(self, kinds: np.ndarray | Sequence[Sequence[int]], gate_set: GateSet = GateSet.S,
                 *, validate: bool = True):
        arr = np.array(kinds, dtype=np.int8, copy=True)
        if validate:
            _validate_kinds(arr, gate_set)
        arr.setflags(write=False)
        self._kinds = arr
        self.gate_set = gate_set

    @classmethod
    def from_layers(cls, layers: Sequence[Sequence[Gate | str]], gate_set: GateSet = GateSet.S) -> "Circuit":
        """Build from a list of layers, each a per-qubit list of gates or names.

        Names accept ``"I"``, ``"T"``, ``"H"``, ``"C"`` (control) and ``"X"``
        (target): ``Circuit.from_layers(["HT", "CX"])``.
        """
        alias = {"I": Gate.I, "T": Gate.T, "H": Gate.H, "C": Gate.CX_CONTROL, "X": Gate.CX_TARGET}
        rows = []
        for layer in layers:
            rows.append([g if isinstance(g, Gate) else alias[g] for g in layer])
        return cls(rows, gate_set)

    @property
    def kinds(self) -> np.ndarray:
        return self._kinds

    @property
    def n_qubits(self) -> int:
        return self._kinds.shape[1]

    @property
    def depth(self) -> int:
        return self._kinds.shape[0]

    @cached_property
    def layers(self) -> tuple[Layer, ...]:
        out = []
        for row in self._kinds:
            gates = tuple(Gate(int(k)) for k in row)
            ctrl = np.flatnonzero(row == Gate.CX_CONTROL)
            pair = (int(ctrl[0]), int(np.flatnonzero(row == Gate.CX_TARGET)[0])) if ctrl.size else None
            out.append(Layer(gates, pair))
        return tuple(out)

    def codes(self) -> np.ndarray:
        """Gate codes under this circuit's gate set, shape ``(P, N)``."""
        return _KIND_TO_CODE[self.gate_set][self._kinds]

    def to_bytes(self) -> bytes:
        header = b"QC" + struct.pack("<BHH", self.gate_set.value, self.n_qubits, self.depth)
        return header + self.codes().astype(np.uint8).tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Circuit":
        circuit, used = cls.read_bytes(data, 0)
        if used != len(data):
            raise InvalidCircuit("trailing bytes after circuit record")
        return circuit

    @classmethod
    def read_bytes(cls, data: bytes | memoryview, offset: int) -> tuple["Circuit", int]:
        """Parse one serialized circuit at ``offset``; return it and the next offset."""
        if bytes(data[offset:offset + 2]) != b"QC":
            raise InvalidCircuit("bad circuit magic")
        gs_id, n, p = struct.unpack_from("<BHH", data, offset + 2)
        try:
            gate_set = GateSet(gs_id)
        except ValueError:
            raise InvalidCircuit(f"unknown gate-set id {gs_id}") from None
        start = offset + 7
        end = start + n * p
        if end > len(data):
            raise InvalidCircuit("truncated circuit record")
        codes = np.frombuffer(data, dtype=np.uint8, count=n * p, offset=start).reshape(p, n)
        if codes.max(initial=0) >= gate_set.channel_count:
            raise InvalidCircuit("gate code out of range")
        return cls(_CODE_TO_KIND[gate_set][codes], gate_set), end

    @cached_property
    def digest(self) -> int:
        """64-bit hash of the canonical byte serialization."""
        return int.from_bytes(hashlib.blake2b(self.to_bytes(), digest_size=8).digest(), "little")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Circuit):
            return NotImplemented
        return self.gate_set is other.gate_set and np.array_equal(self._kinds, other._kinds)

    def __hash__(self) -> int:
        return self.digest

    def __repr__(self) -> str:
        letters = "ITHCX"
        rows = ["".join(letters[k] for k in self._kinds[:, q]) for q in range(self.n_qubits)]
        return f"Circuit({self.gate_set.name}, N={self.n_qubits}, P={self.depth}, rows={rows})"


@dataclass(frozen=True, eq=False)
class CircuitEncoding:
    """Binary ``N x P x C`` one-hot tensor."""

    data: np.ndarray
    gate_set: GateSet

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != self.gate_set.channel_count:
            raise MalformedEncoding(
                f"expected shape (N, P, {self.gate_set.channel_count}), got {self.data.shape}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CircuitEncoding):
            return NotImplemented
        return self.gate_set is other.gate_set and np.array_equal(self.data, other.data)

    @property
    def n_qubits(self) -> int:
        return self.data.shape[0]

    @property
    def depth(self) -> int:
        return self.data.shape[1]


def encode_one_hot(circuit: Circuit) -> CircuitEncoding:
    eye = np.eye(circuit.gate_set.channel_count, dtype=np.uint8)
    return CircuitEncoding(eye[circuit.codes().T], circuit.gate_set)


def encode_batch(circuits: Sequence[Circuit], dtype=np.uint8) -> np.ndarray:
    """Stack one-hot encodings into a ``(B, N, P, C)`` array.

    All circuits must share size and gate set.
    """
    if not circuits:
        raise ValueError("empty circuit batch")
    gs = circuits[0].gate_set
    codes = np.stack([c.codes() for c in circuits])  # (B, P, N)
    eye = np.eye(gs.channel_count, dtype=dtype)
    return eye[codes.transpose(0, 2, 1)]


def decode_one_hot(enc: CircuitEncoding) -> Circuit:
    data = np.asarray(enc.data)
    if not np.all((data == 0) | (data == 1)) or not np.all(data.sum(axis=2) == 1):
        raise MalformedEncoding("every (qubit, layer) fiber must be one-hot")
    codes = data.argmax(axis=2).T  # (P, N)
    kinds = _CODE_TO_KIND[enc.gate_set][codes]
    try:
        return Circuit(kinds, enc.gate_set)
    except InvalidCircuit as exc:
        raise MalformedEncoding(str(exc)) from None


def layer_count(n: int, gate_set: GateSet = GateSet.S) -> int:
    """Number of valid single layers on ``n`` qubits."""
    b = len(gate_set.single_qubit_kinds)
    no_cx = b**n
    with_cx = 2 * math.comb(n, 2) * b ** (n - 2) if n >= 2 else 0
    return no_cx + with_cx


def count_circuits(n: int, p: int, gate_set: GateSet = GateSet.S) -> int:
    """Exact size of the constrained ensemble, summed over the CX count ``m``."""
    if n < 1 or p < 1:
        raise ValueError("need N >= 1 and P >= 1")
    b = len(gate_set.single_qubit_kinds)
    pairs = math.comb(n, 2)
    return sum(
        b ** (n * p - 2 * m) * math.comb(p, m) * 2**m * pairs**m
        for m in range(p + 1)
        if pairs or m == 0
    )


def circuit_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based substream for circuit ``index`` of stream ``seed``.

    Philox-4x64 keyed by ``seed`` (low word) and ``index`` (high word); the
    counter starts at zero. Stable for any numpy that ships Philox.
    """
    key = (int(index) & 0xFFFFFFFFFFFFFFFF) << 64 | (int(seed) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


def measurement_rng(seed: int, index: int) -> np.random.Generator:
    """Shot-sampling substream for record ``index``.

    Same key as :func:`circuit_rng` but the counter starts at ``2**192``, so
    it never overlaps the circuit draws of the same ``(seed, index)``.
    """
    key = (int(index) & 0xFFFFFFFFFFFFFFFF) << 64 | (int(seed) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, 1]))


def _sample_kinds(rng: np.random.Generator, n: int, p: int, gate_set: GateSet) -> np.ndarray:
    singles = np.array(gate_set.single_qubit_kinds, dtype=np.int8)
    b = singles.size
    ordered_pairs = n * (n - 1)
    # probability that a uniformly drawn layer contains a CX
    p_cx = ordered_pairs / (b * b + ordered_pairs) if n >= 2 else 0.0
    kinds = singles[rng.integers(0, b, size=(p, n))]
    has_cx = rng.random(p) < p_cx
    for layer in np.flatnonzero(has_cx):
        pair = int(rng.integers(0, ordered_pairs))
        control, rest = divmod(pair, n - 1)
        target = rest if rest < control else rest + 1
        kinds[layer, control] = Gate.CX_CONTROL
        kinds[layer, target] = Gate.CX_TARGET
    return kinds


def sample_random_circuit(n: int, p: int, gate_set: GateSet = GateSet.S, seed: int = 0,
                          index: int = 0) -> Circuit:
    """Draw one circuit uniformly from the constrained ensemble.

    Layers are independent and each is uniform over :func:`layer_count`
    configurations, which makes the whole circuit uniform over
    :func:`count_circuits`. The result is a pure function of ``(seed, index)``.
    """
    if n < 1 or p < 1:
        raise ValueError("need N >= 1 and P >= 1")
    kinds = _sample_kinds(circuit_rng(seed, index), n, p, gate_set)
    return Circuit(kinds, gate_set, validate=False)


def _all_layers(n: int, gate_set: GateSet) -> list[np.ndarray]:
    singles = gate_set.single_qubit_kinds
    layers = [np.array(combo, dtype=np.int8) for combo in itertools.product(singles, repeat=n)]
    for control, target in itertools.permutations(range(n), 2):
        others = [q for q in range(n) if q not in (control, target)]
        for combo in itertools.product(singles, repeat=len(others)):
            row = np.empty(n, dtype=np.int8)
            row[others] = combo
            row[control] = Gate.CX_CONTROL
            row[target] = Gate.CX_TARGET
            layers.append(row)
    return layers


def enumerate_circuits(n: int, p: int, gate_set: GateSet = GateSet.S) -> list[Circuit]:
    total = count_circuits(n, p, gate_set)
    if total > ENUMERATION_LIMIT:
        raise EnsembleTooLarge(f"{total} circuits exceeds the enumeration limit {ENUMERATION_LIMIT}")
    layers = _all_layers(n, gate_set)
    return [Circuit(np.stack(combo), gate_set, validate=False)
            for combo in itertools.product(layers, repeat=p)]


def iter_layers(n: int, gate_set: GateSet = GateSet.S) -> Iterator[np.ndarray]:
    yield from _all_layers(n, gate_set)


def _check_row(i: int, n: int) -> None:
    if not 0 <= i < n:
        raise IndexOutOfRange(f"qubit index {i} outside [0, {n})")


def swap_qubit_rows(c: Circuit | CircuitEncoding, i: int, j: int) -> Circuit | CircuitEncoding:
    """Exchange qubits ``i`` and ``j``. CX roles move with their rows."""
    n = c.n_qubits
    _check_row(i, n)
    _check_row(j, n)
    if isinstance(c, Circuit):
        kinds = c.kinds.copy()
        kinds[:, [i, j]] = kinds[:, [j, i]]
        return Circuit(kinds, c.gate_set, validate=False)
    data = c.data.copy()
    data[[i, j]] = data[[j, i]]
    return CircuitEncoding(data, c.gate_set)


def pair_permutation(n: int, i: int, j: int) -> np.ndarray:
    """Row order that brings qubits ``(i, j)`` to rows ``(0, 1)``.

    Built as two transpositions, ``0 <-> i`` then ``1 <-> j'`` where ``j'``
    is where ``j`` ended up after the first one. Entry ``r`` of the result is
    the source row placed at row ``r``.
    """
    _check_row(i, n)
    _check_row(j, n)
    if i == j:
        raise DegeneratePair(f"pair ({i}, {j}) must name two distinct qubits")
    order = np.arange(n)
    order[[0, i]] = order[[i, 0]]
    jj = int(np.flatnonzero(order == j)[0])
    order[[1, jj]] = order[[jj, 1]]
    return order


def swap_qubit_pair(c: Circuit | CircuitEncoding, i: int, j: int) -> Circuit | CircuitEncoding:
    """Double row exchange ``(0, 1) <-> (i, j)``.

    Undone by applying it again when ``{i, j}`` and ``{0, 1}`` are disjoint or
    equal; in general the inverse is :func:`pair_permutation`'s inverse.
    """
    order = pair_permutation(c.n_qubits, i, j)
    if isinstance(c, Circuit):
        return Circuit(c.kinds[:, order], c.gate_set, validate=False)
    return CircuitEncoding(c.data[order].copy(), c.gate_set)


def bv_depth(secret: Sequence[int]) -> int:
    return 6 + int(sum(secret))


def build_bv_circuit(n: int, secret: Sequence[int] | str) -> Circuit:
    """Bernstein-Vazirani circuit for ``secret`` using only T, H and CX.

    Row ``n - 1`` is the ancilla. It receives H and then four T gates
    (``T**4 = Z``) to reach ``|->``, acts as CX target once per set bit, and
    ends with a dangling T. Data qubit ``i`` with the ``a``-th set bit
    (``a = 1..k``) gets H at layer ``4 + a``, CX control at ``5 + a`` and H
    at ``6 + a`` (1-based layers); all other slots hold T, which leaves
    ``|0>`` and ``|1>`` unchanged up to a phase.
    """
    if isinstance(secret, str):
        if set(secret) - {"0", "1"}:
            raise InvalidSecret(f"secret {secret!r} is not a bit string")
        bits = [int(ch) for ch in secret]
    else:
        bits = [int(b) for b in secret]
    if n < 2:
        raise InvalidSecret("BV circuits need at least two qubits")
    if len(bits) != n - 1 or any(b not in (0, 1) for b in bits):
        raise InvalidSecret(f"secret must be a bit string of length {n - 1}")
    ones = [q for q, b in enumerate(bits) if b]
    depth = 6 + len(ones)
    kinds = np.full((depth, n), Gate.T, dtype=np.int8)
    ancilla = n - 1
    kinds[0, ancilla] = Gate.H
    for a, q in enumerate(ones, start=1):
        # 0-based layer indices of the 1-based schedule in the docstring
        kinds[3 + a, q] = Gate.H
        kinds[4 + a, q] = Gate.CX_CONTROL
        kinds[4 + a, ancilla] = Gate.CX_TARGET
        kinds[5 + a, q] = Gate.H
    return Circuit(kinds, GateSet.S)
