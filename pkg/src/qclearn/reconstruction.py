"""Recover a two-outcome output distribution from Pauli-Z expectations.

If a circuit's output is supported on at most two bitstrings ``a`` and
``b``, then ``<Z_i> = p_a (1 - 2 a_i) + p_b (1 - 2 b_i)``. Qubits are read
in order: ``<Z_i> = +1`` fixes ``a_i = b_i = 0``, ``-1`` fixes both to 1,
and the first value strictly inside ``(-1, 1)`` sets ``a_i = 1, b_i = 0``
and ``p_a = (1 - <Z_i>) / 2``. Every later interior qubit either repeats or
negates that first value; when ``p_a = 1/2`` both look like 0 and the sign
of ``<Z_i Z_j>`` against the first interior qubit ``j`` decides.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InconsistentInput, LengthMismatch
from .simulator import StateVector, expectations

ZZProvider = Callable[[int, int], float]


@dataclass
class TwoOutcomeResult:
    a: tuple[int, ...]
    b: tuple[int, ...]
    p_a: float
    zz_queries: list[tuple[int, int]] = field(default_factory=list)

    @property
    def p_b(self) -> float:
        return 1.0 - self.p_a

    def support(self) -> dict[str, float]:
        """Bitstring -> probability, merging ``a`` and ``b`` when equal."""
        sa, sb = "".join(map(str, self.a)), "".join(map(str, self.b))
        if sa == sb:
            return {sa: 1.0}
        return {sa: self.p_a, sb: self.p_b}


def _nearest(value: float, candidates: Sequence[float]) -> float:
    return min(candidates, key=lambda c: abs(value - c))


def reconstruct(z_raw: Sequence[float], zz_provider: ZZProvider | None = None, tol: float = 1e-6,
                snap: bool = False, snap_tol: float = 0.1) -> TwoOutcomeResult:
    """Rebuild ``(a, b, p_a)`` from raw expectations ``<Z_i>`` in [-1, 1].

    ``zz_provider(i, j)`` is called only for qubits whose partner values
    are indistinguishable, i.e. when ``p_a = 1/2``. With ``snap`` (meant for
    network predictions) every value is first moved to the nearest value the
    algorithm can accept at that point: ``+-1`` within ``snap_tol`` before
    the first interior qubit, and the closest of ``+-1, +-<Z_j>`` after it.
    """
    z = np.asarray(z_raw, dtype=np.float64)
    n = z.size
    a = [0] * n
    b = [0] * n
    p_a = 1.0
    first: int | None = None
    z_first = 0.0
    queries: list[tuple[int, int]] = []
    for i in range(n):
        zi = float(z[i])
        if snap:
            if first is None:
                if abs(zi - 1.0) <= snap_tol:
                    zi = 1.0
                elif abs(zi + 1.0) <= snap_tol:
                    zi = -1.0
            else:
                zi = _nearest(zi, (1.0, -1.0, z_first, -z_first))
        if abs(zi - 1.0) <= tol:
            continue
        if abs(zi + 1.0) <= tol:
            a[i] = b[i] = 1
            continue
        if not -1.0 < zi < 1.0:
            raise InconsistentInput(f"<Z_{i}> = {zi} lies outside [-1, 1]")
        if first is None:
            first, z_first = i, zi
            a[i], b[i] = 1, 0
            p_a = (1.0 - zi) / 2.0
            continue
        if abs(z_first) > tol:
            # unequal probabilities: the two orientations give +-<Z_j>
            if abs(zi - z_first) <= tol:
                a[i], b[i] = 1, 0
            elif abs(zi + z_first) <= tol:
                a[i], b[i] = 0, 1
            else:
                raise InconsistentInput(
                    f"<Z_{i}> = {zi} matches neither +-<Z_{first}> = +-{z_first}")
            continue
        if abs(zi) > tol:
            raise InconsistentInput(f"<Z_{i}> = {zi} should vanish when p_a = 1/2")
        if zz_provider is None:
            raise InconsistentInput("equal-probability case needs <Z_i Z_j> values")
        queries.append((i, first))
        zz = float(zz_provider(i, first))
        if snap:
            zz = _nearest(zz, (1.0, -1.0))
        if abs(zz - 1.0) <= tol:
            a[i], b[i] = 1, 0
        elif abs(zz + 1.0) <= tol:
            a[i], b[i] = 0, 1
        else:
            raise InconsistentInput(f"<Z_{i} Z_{first}> = {zz} is not +-1")
    return TwoOutcomeResult(tuple(a), tuple(b), p_a, queries)


def forward_expectations(a: Sequence[int], b: Sequence[int], p_a: float
                         ) -> tuple[np.ndarray, ZZProvider]:
    """Expectations of the two-outcome distribution ``{a: p_a, b: 1 - p_a}``."""
    if len(a) != len(b):
        raise LengthMismatch(f"bitstrings of length {len(a)} and {len(b)}")
    if not 0.0 <= p_a <= 1.0:
        raise ValueError("p_a must lie in [0, 1]")
    sa = 1.0 - 2.0 * np.asarray(a, dtype=np.float64)
    sb = 1.0 - 2.0 * np.asarray(b, dtype=np.float64)
    p_b = 1.0 - p_a
    z = p_a * sa + p_b * sb

    def zz(i: int, j: int) -> float:
        return float(p_a * sa[i] * sa[j] + p_b * sb[i] * sb[j])

    return z, zz


def state_provider(state: StateVector) -> tuple[np.ndarray, ZZProvider]:
    """Exact ``<Z_i>`` of a simulated state plus an on-demand ``<Z_i Z_j>``."""
    raw = expectations(state).raw_Z

    def zz(i: int, j: int) -> float:
        return float(expectations(state, want_zz=(i, j)).raw_ZZ)

    return raw, zz


def decode_bv(z_pred: Sequence[float], threshold: float = 0.5) -> tuple[int, ...]:
    """Secret bits from rescaled predictions of the data qubits: ``w_i = z_i > threshold``."""
    return tuple(int(v > threshold) for v in np.asarray(z_pred, dtype=np.float64))
