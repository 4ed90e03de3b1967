"""Coefficient of determination, swapped-row inference and size extrapolation."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .circuits import Circuit, encode_batch, pair_permutation
from .dataset import Dataset, require_nonempty
from .errors import ConfigMismatch, IndexOutOfRange, ShapeMismatch
from .nn.checkpoint import ModelCheckpoint
from .nn.model import ScalableCNN


def r2_score(y: np.ndarray, y_hat: np.ndarray) -> float:
    """``1 - SS_res / SS_tot`` with the mean pooled over every sample and output."""
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape:
        raise ShapeMismatch(f"targets {y.shape} and predictions {y_hat.shape} differ")
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else -np.inf
    return 1.0 - ss_res / ss_tot


def _as_model(m: ModelCheckpoint | ScalableCNN) -> ScalableCNN:
    return m.model() if isinstance(m, ModelCheckpoint) else m


@dataclass
class EvalReport:
    r2: float
    n_test: int
    n_outputs: int
    residuals: list[dict]
    targets: np.ndarray = field(repr=False)
    predictions: np.ndarray = field(repr=False)
    histogram: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"r2": self.r2, "n_test": self.n_test, "n_outputs": self.n_outputs,
               "residuals": self.residuals}
        if self.histogram is not None:
            out["histogram"] = self.histogram
        out.update(self.extra)
        return out

    def scatter_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["record", "output", "target", "prediction"])
        for i in range(self.targets.shape[0]):
            for k in range(self.targets.shape[1]):
                w.writerow([i, k, repr(float(self.targets[i, k])), repr(float(self.predictions[i, k]))])
        return buf.getvalue()

    def write(self, json_path: str | Path, scatter_path: str | Path | None = None) -> None:
        Path(json_path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")
        if scatter_path is not None:
            Path(scatter_path).write_text(self.scatter_csv())


def residual_stats(y: np.ndarray, y_hat: np.ndarray) -> list[dict]:
    res = y_hat - y
    return [{"output": k, "mean": float(res[:, k].mean()), "std": float(res[:, k].std()),
             "rmse": float(np.sqrt(np.mean(res[:, k] ** 2))),
             "max_abs": float(np.abs(res[:, k]).max())} for k in range(res.shape[1])]


def target_histogram(y: np.ndarray, bins: int = 20) -> dict:
    counts, edges = np.histogram(y, bins=bins, range=(0.0, 1.0))
    return {"counts": counts.tolist(), "edges": edges.tolist()}


def _column_for(ds: Dataset, qubit: int) -> int:
    cols = ds.header.get("label_columns")
    if cols is None:
        return qubit
    if qubit not in cols:
        raise IndexOutOfRange(f"dataset does not hold a label for qubit {qubit}")
    return cols.index(qubit)


def swapped_encodings(ds: Dataset, order: np.ndarray) -> np.ndarray:
    """One-hot inputs with qubit rows taken in ``order`` (row r <- qubit order[r])."""
    return Dataset(dict(ds.header), ds.kinds[:, :, order], ds.labels).encodings()


def row_swap_order(n: int, i: int, j: int = 0) -> np.ndarray:
    if not (0 <= i < n and 0 <= j < n):
        raise IndexOutOfRange(f"row index outside [0, {n})")
    order = np.arange(n)
    order[[i, j]] = order[[j, i]]
    return order


def predict_dataset(model: ModelCheckpoint | ScalableCNN, ds: Dataset, qubit: int | None = None,
                    pair: tuple[int, int] | None = None, all_qubits: bool = False,
                    batch_size: int = 256, dtype=None) -> tuple[np.ndarray, np.ndarray]:
    """Targets and predictions, shape ``(n, k)``.

    Multi-output models predict every qubit at once. A single-output model
    predicts the value tied to row 0 (row pair (0, 1) for two-qubit data);
    ``qubit`` or ``pair`` moves other qubits into those rows first, and
    ``all_qubits`` repeats that for every qubit.
    """
    model = _as_model(model)
    require_nonempty(ds)
    cfg = model.config
    n = ds.n_qubits
    if not cfg.scalable:
        if cfg.n_outputs != n:
            raise ConfigMismatch(f"model predicts {cfg.n_outputs} qubits, dataset has N={n}")
        if qubit is not None or pair is not None or all_qubits:
            raise ConfigMismatch("row swaps apply to single-output models only")
        y_hat = model.predict(ds.encodings(), batch_size, dtype)
        return ds.labels, y_hat

    if ds.label_kind == "exact-z12":
        stored = tuple(ds.header.get("pair") or (0, 1))
        want = tuple(pair) if pair is not None else stored
        if want != stored:
            raise IndexOutOfRange(f"dataset holds labels for pair {stored}, not {want}")
        order = pair_permutation(n, *want)
        return ds.labels[:, :1], model.predict(swapped_encodings(ds, order), batch_size, dtype)

    qubits = list(range(n)) if all_qubits else [0 if qubit is None else int(qubit)]
    ys, preds = [], []
    for q in qubits:
        col = _column_for(ds, q)
        x = ds.encodings() if q == 0 else swapped_encodings(ds, row_swap_order(n, q))
        ys.append(ds.labels[:, col])
        preds.append(model.predict(x, batch_size, dtype)[:, 0])
    return np.stack(ys, axis=1), np.stack(preds, axis=1)


def evaluate_r2(model: ModelCheckpoint | ScalableCNN, ds: Dataset, qubit: int | None = None,
                pair: tuple[int, int] | None = None, all_qubits: bool = False,
                batch_size: int = 256, dtype=None, histogram_bins: int | None = None) -> EvalReport:
    y, y_hat = predict_dataset(model, ds, qubit, pair, all_qubits, batch_size, dtype)
    report = EvalReport(r2_score(y, y_hat), int(y.shape[0]), int(y.shape[1]), residual_stats(y, y_hat),
                        y, y_hat)
    if histogram_bins:
        report.histogram = target_histogram(y, histogram_bins)
    report.extra = {"n_qubits": ds.n_qubits, "depth": ds.depth, "label_kind": ds.label_kind}
    return report


@dataclass
class ExtrapolationRow:
    n_qubits: int
    depth: int
    r2: float
    n_test: int


def extrapolate_eval(model: ModelCheckpoint | ScalableCNN, datasets: Sequence[Dataset],
                     qubit: int | None = None, all_qubits: bool = False,
                     dtype=None) -> list[ExtrapolationRow]:
    """One :func:`evaluate_r2` per dataset, typically at growing N."""
    model = _as_model(model)
    if not model.config.scalable:
        raise ConfigMismatch("extrapolation needs a single-output checkpoint")
    rows = []
    for ds in datasets:
        rep = evaluate_r2(model, ds, qubit=qubit, all_qubits=all_qubits, dtype=dtype)
        rows.append(ExtrapolationRow(ds.n_qubits, ds.depth, rep.r2, rep.n_test))
    return rows


def extrapolation_csv(rows: Sequence[ExtrapolationRow], trained_n: int | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["trained_n", "n_qubits", "depth", "r2", "n_test"])
    for r in rows:
        w.writerow(["" if trained_n is None else trained_n, r.n_qubits, r.depth, repr(r.r2), r.n_test])
    return buf.getvalue()


def predict_all_rows(model: ModelCheckpoint | ScalableCNN, circuit: Circuit,
                     qubits: Sequence[int] | None = None, batch_size: int = 16,
                     dtype=None) -> np.ndarray:
    """Single-output predictions of ``z_q`` for each qubit ``q`` of one circuit.

    Qubit ``q`` is moved into row 0 by a row exchange. Exchanges that give
    the same input tensor (e.g. two identical idle rows) are run only once.
    """
    model = _as_model(model)
    if not model.config.scalable:
        raise ConfigMismatch("row-swap inference needs a single-output checkpoint")
    n = circuit.n_qubits
    qubits = list(range(n)) if qubits is None else [int(q) for q in qubits]
    base = encode_batch([circuit])[0]
    row_bytes = [base[r].tobytes() for r in range(n)]
    unique: dict[int, int] = {}
    inputs: list[int] = []  # qubit whose swap realises each unique input
    which = np.empty(len(qubits), dtype=np.int64)
    for k, q in enumerate(qubits):
        if not 0 <= q < n:
            raise IndexOutOfRange(f"qubit {q} outside [0, {n})")
        # swapping two identical rows leaves the input unchanged
        key = -1 if row_bytes[q] == row_bytes[0] else q
        if key not in unique:
            unique[key] = len(inputs)
            inputs.append(q)
        which[k] = unique[key]
    preds = np.empty(len(inputs))
    for start in range(0, len(inputs), batch_size):
        chunk = inputs[start:start + batch_size]
        x = np.stack([base[row_swap_order(n, q)] for q in chunk])
        preds[start:start + len(chunk)] = model.predict(x, batch_size, dtype)[:, 0]
    return preds[which]
