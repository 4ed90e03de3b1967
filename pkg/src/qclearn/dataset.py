"""Labelled circuit datasets: generation, deduplication and the QCML file.

File layout (little-endian)::

    b"QCML" | u32 version | u32 len | header JSON
    per record: circuit bytes | u8 label count | f64 labels
    u32 CRC-32 of everything above

The header JSON holds gate set, N, P, label kind, ``n_measure``, seeds and
the record count. Serialization is deterministic: the same arguments always
produce the same bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .circuits import (
    Circuit,
    GateSet,
    _CODE_TO_KIND,
    _KIND_TO_CODE,
    _sample_kinds,
    circuit_rng,
    count_circuits,
    swap_qubit_pair,
)
from .errors import CorruptDataset, EmptyDataset, EnsembleExhausted, OverlapDetected, ShapeMismatch
from .simulator import label_circuits, rescale, sample_from_probabilities, simulate_batch

MAGIC = b"QCML"
FORMAT_VERSION = 1
LABEL_KINDS = ("exact-z", "exact-z12", "noisy-z")


class CircuitIndex:
    """Set of circuits keyed by a 64-bit digest, confirmed by full bytes."""

    def __init__(self):
        self._buckets: dict[int, list[bytes]] = {}
        self._size = 0

    @staticmethod
    def digest(raw: bytes) -> int:
        return int.from_bytes(hashlib.blake2b(raw, digest_size=8).digest(), "little")

    def add(self, raw: bytes) -> bool:
        """Insert; return ``False`` when an identical circuit is already present."""
        bucket = self._buckets.setdefault(self.digest(raw), [])
        if raw in bucket:
            return False
        bucket.append(raw)
        self._size += 1
        return True

    def __contains__(self, raw: bytes) -> bool:
        return raw in self._buckets.get(self.digest(raw), ())

    def __len__(self) -> int:
        return self._size


@dataclass
class Dataset:
    header: dict
    kinds: np.ndarray  # (n, P, N) gate kinds
    labels: np.ndarray  # (n, k) float64

    def __post_init__(self):
        self.kinds = np.ascontiguousarray(self.kinds, dtype=np.int8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.labels.ndim == 1:
            self.labels = self.labels[:, None]
        if self.kinds.shape[0] != self.labels.shape[0]:
            raise ShapeMismatch("kinds and labels disagree on the record count")
        self.header["count"] = int(self.kinds.shape[0])

    def __len__(self) -> int:
        return self.kinds.shape[0]

    @property
    def gate_set(self) -> GateSet:
        return GateSet[self.header["gate_set"]]

    @property
    def n_qubits(self) -> int:
        return int(self.header["n_qubits"])

    @property
    def depth(self) -> int:
        return int(self.header["depth"])

    @property
    def label_kind(self) -> str:
        return self.header["label_kind"]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def circuit(self, i: int) -> Circuit:
        return Circuit(self.kinds[i], self.gate_set, validate=False)

    def circuits(self) -> list[Circuit]:
        return [self.circuit(i) for i in range(len(self))]

    def circuit_bytes(self, i: int) -> bytes:
        return self.circuit(i).to_bytes()

    def encodings(self, rows: np.ndarray | None = None) -> np.ndarray:
        """One-hot ``(n, N, P, C)`` uint8 tensor of all (or selected) records."""
        kinds = self.kinds if rows is None else self.kinds[rows]
        codes = _KIND_TO_CODE[self.gate_set][kinds]
        eye = np.eye(self.gate_set.channel_count, dtype=np.uint8)
        return eye[codes.transpose(0, 2, 1)]

    def subset(self, rows: Sequence[int] | np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(dict(self.header), self.kinds[rows], self.labels[rows])

    def select_outputs(self, columns: Sequence[int]) -> "Dataset":
        """Keep only the given label columns (e.g. ``[0]`` for a z_1 model)."""
        header = dict(self.header)
        header["label_columns"] = [int(c) for c in columns]
        return Dataset(header, self.kinds, self.labels[:, list(columns)])

    # -- persistence ----------------------------------------------------------

    def to_bytes(self) -> bytes:
        n, p, nq = self.kinds.shape if len(self) else (0, self.depth, self.n_qubits)
        k = self.n_labels
        blob = json.dumps(self.header, sort_keys=True).encode("utf-8")
        rec = _record_dtype(nq, p, k)
        recs = np.zeros(n, dtype=rec)
        recs["head"] = np.frombuffer(_circuit_head(self.gate_set, nq, p), dtype=np.uint8)
        recs["codes"] = _KIND_TO_CODE[self.gate_set][self.kinds].reshape(n, p * nq)
        recs["nlab"] = k
        recs["labels"] = self.labels
        body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(blob)) + blob + recs.tobytes()
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Dataset":
        if len(data) < 16 or data[:4] != MAGIC:
            raise CorruptDataset("not a QCML dataset")
        body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
        if zlib.crc32(body) != crc:
            raise CorruptDataset("checksum mismatch (truncated or corrupted file)")
        version, blob_len = struct.unpack_from("<II", body, 4)
        if version != FORMAT_VERSION:
            raise CorruptDataset(f"dataset format {version}, expected {FORMAT_VERSION}")
        header = json.loads(body[12:12 + blob_len].decode("utf-8"))
        gs = GateSet[header["gate_set"]]
        nq, p, n = int(header["n_qubits"]), int(header["depth"]), int(header["count"])
        k = int(header["n_labels"])
        rec = _record_dtype(nq, p, k)
        payload = body[12 + blob_len:]
        if len(payload) != n * rec.itemsize:
            raise CorruptDataset("record section length does not match the header")
        recs = np.frombuffer(payload, dtype=rec, count=n)
        head = np.frombuffer(_circuit_head(gs, nq, p), dtype=np.uint8)
        if n and (not np.all(recs["head"] == head) or not np.all(recs["nlab"] == k)):
            raise CorruptDataset("record geometry differs from the header")
        codes = recs["codes"].reshape(n, p, nq)
        if n and codes.max() >= gs.channel_count:
            raise CorruptDataset("gate code out of range")
        kinds = _CODE_TO_KIND[gs][codes]
        return cls(header, kinds, np.array(recs["labels"], dtype=np.float64).reshape(n, k))

    def save(self, path: str | os.PathLike) -> Path:
        self.header["n_labels"] = self.n_labels
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Dataset":
        return cls.from_bytes(Path(path).read_bytes())

    def export_jsonl(self, path: str | os.PathLike) -> Path:
        """JSON-lines mirror: header line, then one object per record."""
        path = Path(path)
        letters = "ITHCX"
        with path.open("w") as fh:
            fh.write(json.dumps({"header": self.header}, sort_keys=True) + "\n")
            for i in range(len(self)):
                rows = ["".join(letters[g] for g in self.kinds[i, :, q]) for q in range(self.n_qubits)]
                fh.write(json.dumps({"circuit": self.circuit_bytes(i).hex(), "rows": rows,
                                     "labels": self.labels[i].tolist()}) + "\n")
        return path


def _circuit_head(gs: GateSet, n: int, p: int) -> bytes:
    return b"QC" + struct.pack("<BHH", gs.value, n, p)


def _record_dtype(n: int, p: int, k: int) -> np.dtype:
    return np.dtype([("head", "u1", (7,)), ("codes", "u1", (n * p,)), ("nlab", "u1"),
                     ("labels", "<f8", (k,))])


# -- generation ---------------------------------------------------------------

def sample_unique_kinds(n: int, p: int, gate_set: GateSet, count: int, seed: int,
                        start_index: int = 0, exclude: CircuitIndex | None = None) -> np.ndarray:
    """``count`` distinct circuits, drawing indices ``start_index, start_index+1, ...``.

    Duplicates (and circuits already in ``exclude``) are skipped and the next
    index is drawn instead.
    """
    total = count_circuits(n, p, gate_set)
    available = total - (len(exclude) if exclude is not None else 0)
    if count > available:
        raise EnsembleExhausted(
            f"requested {count} distinct circuits but the (N={n}, P={p}, {gate_set.name}) "
            f"ensemble holds only {available}")
    seen = CircuitIndex()
    out = np.empty((count, p, n), dtype=np.int8)
    codes = _KIND_TO_CODE[gate_set]
    head = _circuit_head(gate_set, n, p)
    filled = 0
    index = start_index
    while filled < count:
        kinds = _sample_kinds(circuit_rng(seed, index), n, p, gate_set)
        index += 1
        raw = head + codes[kinds].astype(np.uint8).tobytes()
        if exclude is not None and raw in exclude:
            continue
        if seen.add(raw):
            out[filled] = kinds
            filled += 1
    return out


def _labels_for(kinds: np.ndarray, label_kind: str, pair: tuple[int, int], n_measure: int | None,
                noise_seed: int | None, threads: int = 1, chunk: int = 4096) -> np.ndarray:
    n_records, _, nq = kinds.shape

    def work(start: int) -> np.ndarray:
        block = kinds[start:start + chunk]
        if label_kind == "noisy-z":
            psi = simulate_batch(block)
            probs = psi.real**2 + psi.imag**2
            return np.stack([
                sample_from_probabilities(probs[r], nq, n_measure, noise_seed, start + r)
                for r in range(block.shape[0])])
        circuits = [Circuit(kk, validate=False) for kk in block]
        raw_z, raw_zz = label_circuits(circuits, pair if label_kind == "exact-z12" else None)
        if label_kind == "exact-z12":
            return rescale(raw_zz)[:, None]
        return rescale(raw_z)

    starts = list(range(0, n_records, chunk))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = list(pool.map(work, starts))
    else:
        blocks = [work(s) for s in starts]
    if not blocks:
        width = 1 if label_kind == "exact-z12" else nq
        return np.zeros((0, width))
    # rounding can leave an exact label a few ulps outside [0, 1]
    return np.clip(np.concatenate(blocks, axis=0), 0.0, 1.0)


def generate_dataset(n: int, p: int, gate_set: GateSet | str = GateSet.S, count: int = 1000,
                     label_kind: str = "exact-z", seed: int = 0, out: str | os.PathLike | None = None,
                     n_measure: int | None = None, pair: tuple[int, int] = (0, 1),
                     threads: int = 1, start_index: int = 0,
                     exclude: CircuitIndex | None = None) -> Dataset:
    """Sample ``count`` distinct circuits and label them by exact simulation.

    ``label_kind`` is ``exact-z`` (all N rescaled single-qubit values),
    ``exact-z12`` (the rescaled two-qubit value of ``pair``) or ``noisy-z``
    (shot estimates from ``n_measure`` simulated measurements, drawn from the
    measurement stream of ``seed``).
    """
    gate_set = GateSet.parse(gate_set)
    if label_kind not in LABEL_KINDS:
        raise ValueError(f"label kind must be one of {LABEL_KINDS}")
    if label_kind == "noisy-z" and (n_measure is None or n_measure < 1):
        raise ValueError("noisy-z labels need n_measure >= 1")
    if label_kind == "exact-z12":
        if n < 2:
            raise ValueError("two-qubit labels need N >= 2")
        swap_qubit_pair(Circuit(np.full((1, n), 1, dtype=np.int8)), *pair)  # validates the pair
    kinds = sample_unique_kinds(n, p, gate_set, count, seed, start_index, exclude)
    labels = _labels_for(kinds, label_kind, pair, n_measure, seed, threads)
    header = {
        "gate_set": gate_set.name,
        "n_qubits": n,
        "depth": p,
        "label_kind": label_kind,
        "n_measure": n_measure if label_kind == "noisy-z" else None,
        "seed": int(seed),
        "start_index": int(start_index),
        "pair": list(pair) if label_kind == "exact-z12" else None,
        "n_labels": int(labels.shape[1]),
    }
    ds = Dataset(header, kinds, labels)
    if out is not None:
        ds.save(out)
    return ds


def make_noisy_dataset(exact: Dataset, n_measure: int, seed: int, threads: int = 1) -> Dataset:
    """Replace labels by shot-noise estimates ``z~_i`` from ``n_measure`` shots."""
    if exact.label_kind not in ("exact-z", "noisy-z"):
        raise ValueError("noisy labels are defined for single-qubit datasets")
    labels = _labels_for(exact.kinds, "noisy-z", (0, 1), n_measure, seed, threads)
    header = dict(exact.header)
    header.update(label_kind="noisy-z", n_measure=int(n_measure), noise_seed=int(seed),
                  n_labels=int(labels.shape[1]))
    header.pop("label_columns", None)
    return Dataset(header, exact.kinds.copy(), labels)


def relabel_exact(ds: Dataset, threads: int = 1) -> np.ndarray:
    """Re-simulate every record and return exact labels in ``ds``'s layout."""
    kind = "exact-z12" if ds.label_kind == "exact-z12" else "exact-z"
    pair = tuple(ds.header.get("pair") or (0, 1))
    labels = _labels_for(ds.kinds, kind, pair, None, None, threads)
    cols = ds.header.get("label_columns")
    return labels[:, cols] if cols is not None else labels


def split_dataset(ds: Dataset, n_first: int) -> tuple[Dataset, Dataset]:
    """Positional split; records are distinct so the halves are disjoint."""
    if not 0 <= n_first <= len(ds):
        raise ValueError("split point outside the dataset")
    return ds.subset(np.arange(n_first)), ds.subset(np.arange(n_first, len(ds)))


@dataclass
class SplitCheck:
    train: Dataset
    test: Dataset
    removed: int = 0
    overlaps: list[int] = field(default_factory=list)


def disjoint_split(train: Dataset, test: Dataset, repair: bool = False) -> SplitCheck:
    """Verify that no test circuit appears in the training set.

    In strict mode any overlap raises :class:`OverlapDetected`; with
    ``repair`` the colliding test records are dropped instead.
    """
    if (train.n_qubits, train.depth, train.gate_set) != (test.n_qubits, test.depth, test.gate_set):
        raise ShapeMismatch("train and test datasets have different circuit geometry")
    index = CircuitIndex()
    for i in range(len(train)):
        index.add(train.circuit_bytes(i))
    overlaps = [i for i in range(len(test)) if test.circuit_bytes(i) in index]
    if overlaps and not repair:
        raise OverlapDetected(f"{len(overlaps)} test circuits also appear in the training set")
    if overlaps:
        keep = np.setdiff1d(np.arange(len(test)), overlaps)
        test = test.subset(keep)
    return SplitCheck(train, test, len(overlaps), overlaps)


def index_of(datasets: Iterable[Dataset]) -> CircuitIndex:
    idx = CircuitIndex()
    for ds in datasets:
        for i in range(len(ds)):
            idx.add(ds.circuit_bytes(i))
    return idx


def require_nonempty(ds: Dataset) -> None:
    if len(ds) == 0:
        raise EmptyDataset("dataset has no records")
