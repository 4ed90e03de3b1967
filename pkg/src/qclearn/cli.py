"""``qclearn`` command line: datasets, training, evaluation and BV emulation.

Every command writes a ``<output>.manifest.json`` next to its primary
output. Failures print a JSON error object on stderr and exit with 2 (usage),
3 (data) or 4 (numeric).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .circuits import GateSet, build_bv_circuit, count_circuits
from .dataset import Dataset, disjoint_split, generate_dataset, make_noisy_dataset
from .errors import QCLearnError
from .evaluation import evaluate_r2, extrapolate_eval, extrapolation_csv, predict_all_rows, r2_score
from .nn.checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .nn.model import ModelConfig
from .reconstruction import decode_bv, reconstruct
from .training import TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("QCLEARN_THREADS")
    return max(1, int(env)) if env and env.isdigit() else 1


def write_manifest(primary: Path, args: argparse.Namespace, inputs: Sequence[Path],
                   outputs: Sequence[Path], started: float, extra: dict | None = None) -> Path:
    argd = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "arguments": argd,
        "version": __version__,
        "seeds": {k: v for k, v in argd.items() if "seed" in k},
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs if p.exists()},
        "duration_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        manifest.update(extra)
    path = primary.with_name(primary.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _plots():
    # matplotlib is imported only when figures are requested
    from . import plotting
    return plotting


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    pair = tuple(args.pair) if args.pair else (0, 1)
    ds = generate_dataset(args.qubits, args.depth, args.gate_set, args.count, args.labels, args.seed,
                          out, n_measure=args.measure, pair=pair, threads=_threads(args),
                          start_index=args.start_index)
    outputs = [out]
    if args.jsonl:
        outputs.append(ds.export_jsonl(out.with_suffix(".jsonl")))
    write_manifest(out, args, [], outputs, t0, {"records": len(ds)})
    _emit({"out": str(out), "records": len(ds), "ensemble_size": str(count_circuits(
        args.qubits, args.depth, GateSet.parse(args.gate_set)))})
    return EXIT_OK


def cmd_noisy(args) -> int:
    t0 = time.perf_counter()
    src, out = Path(args.data), Path(args.out)
    exact = Dataset.load(src)
    noisy = make_noisy_dataset(exact, args.measure, args.seed, threads=_threads(args))
    noisy.save(out)
    r2 = r2_score(exact.labels, noisy.labels) if exact.label_kind == "exact-z" else None
    write_manifest(out, args, [src], [out], t0, {"r2_vs_exact": r2})
    _emit({"out": str(out), "records": len(noisy), "r2_vs_exact": r2})
    return EXIT_OK


def _model_config(args, ds: Dataset) -> ModelConfig:
    n_out = ds.n_labels
    return ModelConfig(n_conv=args.conv_layers, filters=args.filters,
                       dense_sizes=tuple(args.dense), n_outputs=n_out,
                       gate_channels=ds.gate_set.channel_count, dtype=args.dtype)


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    src, out = Path(args.data), Path(args.out)
    ds = Dataset.load(src)
    if args.outputs == "single" and ds.n_labels > 1:
        ds = ds.select_outputs([args.qubit])
    elif args.outputs == "multi" and ds.n_labels != ds.n_qubits:
        raise UsageError("multi-output training needs one label per qubit")
    inputs = [src]
    init = None
    extra = {}
    if args.init:
        init_path = Path(args.init)
        init = load_checkpoint(init_path)
        inputs.append(init_path)
        extra["transfer_source_sha256"] = _sha256(init_path)
    cfg = None if init is not None else _model_config(args, ds)
    tc = TrainConfig(batch_size=args.batch_size, max_epochs=args.epochs, val_fraction=args.val_fraction,
                     patience=args.patience, seed=args.seed, lr=args.lr, lr_patience=args.lr_patience,
                     max_steps=args.max_steps, allow_any_batch=args.allow_any_batch)

    def log(rec):
        if args.verbose:
            print(json.dumps(rec.__dict__), file=sys.stderr, flush=True)

    result = train(ds, tc, cfg, init=init, log=log)
    meta = dict(result.metadata)
    meta["dataset_sha256"] = _sha256(src)
    if args.init:
        meta["init_sha256"] = extra["transfer_source_sha256"]
    save_checkpoint(result.model, out, meta)
    curve = out.with_suffix(".loss.csv")
    result.write_curve(curve)
    outputs = [out, curve]
    if not args.no_plots:
        rows = result.history
        outputs.append(_plots().loss_curve_plot([r.epoch for r in rows], [r.train_loss for r in rows],
                                                [r.val_loss for r in rows], out.with_suffix(".loss.png")))
    write_manifest(out, args, inputs, outputs, t0, extra)
    _emit({"out": str(out), "epochs": len(result.history), "steps": result.steps,
           "best_epoch": result.best_epoch, "best_val_loss": result.best_val_loss})
    return EXIT_OK


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    ck_path, src, out = Path(args.checkpoint), Path(args.data), Path(args.out)
    ds = Dataset.load(src)
    ckpt = load_checkpoint(ck_path, n_qubits=ds.n_qubits)
    pair = tuple(args.pair) if args.pair else None
    rep = evaluate_r2(ckpt, ds, qubit=args.qubit, pair=pair, all_qubits=args.all_qubits,
                      dtype=args.dtype, histogram_bins=args.histogram)
    scatter = out.with_suffix(".scatter.csv")
    rep.write(out, scatter)
    outputs = [out, scatter]
    if not args.no_plots:
        outputs.append(_plots().scatter_plot(rep.targets, rep.predictions, out.with_suffix(".scatter.png"),
                                             rep.r2, f"N={ds.n_qubits}, P={ds.depth}"))
    write_manifest(out, args, [ck_path, src], outputs, t0)
    _emit({"out": str(out), "r2": rep.r2, "n_test": rep.n_test})
    return EXIT_OK


def cmd_extrapolate(args) -> int:
    t0 = time.perf_counter()
    ck_path, out = Path(args.checkpoint), Path(args.out)
    ckpt = load_checkpoint(ck_path)
    sources = [Path(p) for p in args.data]
    datasets = sorted((Dataset.load(p) for p in sources), key=lambda d: (d.n_qubits, d.depth))
    rows = extrapolate_eval(ckpt, datasets, qubit=args.qubit, all_qubits=args.all_qubits,
                            dtype=args.dtype)
    trained_n = ckpt.metadata.get("n_qubits")
    out.write_text(extrapolation_csv(rows, trained_n))
    outputs = [out]
    if not args.no_plots:
        outputs.append(_plots().r2_vs_n_plot([(r.n_qubits, r.r2) for r in rows],
                                             out.with_suffix(".png"), trained_n))
    write_manifest(out, args, [ck_path, *sources], outputs, t0)
    _emit({"out": str(out), "rows": [r.__dict__ for r in rows]})
    return EXIT_OK


def _planted_secret(n: int, bits: int, seed: int) -> list[int]:
    rng = np.random.default_rng([seed, n, bits])
    secret = [0] * (n - 1)
    for q in rng.choice(n - 1, size=bits, replace=False):
        secret[int(q)] = 1
    return secret


def cmd_bv(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    n = args.qubits
    if args.secret is not None:
        secret = [int(ch) for ch in args.secret]
    else:
        if not 0 <= args.secret_bits <= min(3, n - 1):
            raise UsageError("--secret-bits must lie in [0, 3] and below N")
        secret = _planted_secret(n, args.secret_bits, args.seed)
    circuit = build_bv_circuit(n, secret)
    inputs = []
    if args.checkpoint:
        ck_path = Path(args.checkpoint)
        inputs.append(ck_path)
        ckpt = load_checkpoint(ck_path)
        z = predict_all_rows(ckpt, circuit, range(n - 1), dtype=args.dtype)
        source = "network"
    else:
        from .simulator import expectations, run_circuit
        z = expectations(run_circuit(circuit)).z[: n - 1]
        source = "simulator"
    decoded = decode_bv(z, args.threshold)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["qubit", "z_pred", "secret_bit", "decoded_bit"])
    for q in range(n - 1):
        w.writerow([q, repr(float(z[q])), secret[q], decoded[q]])
    out.write_text(buf.getvalue())
    planted = [q for q, b in enumerate(secret) if b]
    found = [q for q, b in enumerate(decoded) if b]
    summary = {"n_qubits": n, "depth": circuit.depth, "source": source, "planted": planted,
               "decoded": found, "correct": list(decoded) == secret}
    summary_path = out.with_suffix(".json")
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs = [out, summary_path]
    if not args.no_plots:
        outputs.append(_plots().bv_profile_plot(z, out.with_suffix(".png"), planted))
    write_manifest(out, args, inputs, outputs, t0)
    _emit(summary)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    t0 = time.perf_counter()
    src, out = Path(args.input), Path(args.out)
    payload = json.loads(src.read_text())
    if args.rescaled:
        z_raw = [1.0 - 2.0 * v for v in payload["z"]]
    else:
        z_raw = payload["z"]
    zz_table = {tuple(int(t) for t in k.split(",")): float(v) for k, v in payload.get("zz", {}).items()}

    def zz(i, j):
        if (i, j) in zz_table:
            return zz_table[(i, j)]
        if (j, i) in zz_table:
            return zz_table[(j, i)]
        raise QCLearnError(f"input lacks <Z_{i} Z_{j}>")

    res = reconstruct(z_raw, zz, tol=args.tol, snap=args.snap)
    result = {"a": "".join(map(str, res.a)), "b": "".join(map(str, res.b)), "p_a": res.p_a,
              "p_b": res.p_b, "zz_queries": [list(q) for q in res.zz_queries]}
    out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    write_manifest(out, args, [src], [out], t0)
    _emit(result)
    return EXIT_OK


def cmd_histogram(args) -> int:
    t0 = time.perf_counter()
    out = Path(args.out)
    samples = {}
    rows = []
    for p in args.depths:
        ds = generate_dataset(args.qubits, p, args.gate_set, args.count, "exact-z", args.seed,
                              threads=_threads(args))
        z1 = ds.labels[:, args.qubit]
        samples[f"P = {p}"] = z1
        counts, edges = np.histogram(z1, bins=args.bins, range=(0.0, 1.0))
        central = float(np.mean((z1 >= 0.4) & (z1 <= 0.6)))
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            rows.append([p, repr(float(lo)), repr(float(hi)), int(c)])
        rows.append([p, "central_fraction_0.4_0.6", "", repr(central)])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["depth", "bin_lo", "bin_hi", "count"])
    w.writerows(rows)
    out.write_text(buf.getvalue())
    outputs = [out]
    if not args.no_plots:
        outputs.append(_plots().histogram_plot(samples, out.with_suffix(".png"), args.bins,
                                               f"$z_{{{args.qubit + 1}}}$"))
    write_manifest(out, args, [], outputs, t0)
    _emit({"out": str(out)})
    return EXIT_OK


def cmd_split_check(args) -> int:
    t0 = time.perf_counter()
    tr_path, te_path = Path(args.train), Path(args.test)
    res = disjoint_split(Dataset.load(tr_path), Dataset.load(te_path), repair=args.out is not None)
    outputs = []
    primary = te_path
    if args.out:
        primary = Path(args.out)
        res.test.save(primary)
        outputs.append(primary)
    write_manifest(primary, args, [tr_path, te_path], outputs, t0, {"removed": res.removed})
    _emit({"removed": res.removed, "test_records": len(res.test)})
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qclearn", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, plots=True, threads=False):
        if plots:
            p.add_argument("--no-plots", action="store_true", help="skip PNG figures")
        if threads:
            p.add_argument("--threads", type=int, default=None,
                           help="worker threads (falls back to QCLEARN_THREADS)")

    g = sub.add_parser("generate", help="sample distinct circuits and label them")
    g.add_argument("--qubits", type=int, required=True)
    g.add_argument("--depth", type=int, required=True)
    g.add_argument("--gate-set", choices=["s", "s-star"], default="s")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--labels", choices=["exact-z", "exact-z12", "noisy-z"], default="exact-z")
    g.add_argument("--measure", type=int, default=None, help="shots per circuit for noisy-z")
    g.add_argument("--pair", type=int, nargs=2, default=None, help="qubit pair for exact-z12")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start-index", type=int, default=0)
    g.add_argument("--jsonl", action="store_true", help="also write a JSON-lines mirror")
    g.add_argument("--out", required=True)
    common(g, plots=False, threads=True)
    g.set_defaults(func=cmd_generate)

    nz = sub.add_parser("noisy", help="replace exact labels by shot estimates")
    nz.add_argument("--data", required=True)
    nz.add_argument("--measure", type=int, required=True)
    nz.add_argument("--seed", type=int, default=0)
    nz.add_argument("--out", required=True)
    common(nz, plots=False, threads=True)
    nz.set_defaults(func=cmd_noisy)

    t = sub.add_parser("train", help="fit a network to a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--init", default=None, help="checkpoint to start from (transfer learning)")
    t.add_argument("--outputs", choices=["auto", "single", "multi"], default="auto",
                   help="single keeps only --qubit's label")
    t.add_argument("--qubit", type=int, default=0)
    t.add_argument("--conv-layers", type=int, default=10)
    t.add_argument("--filters", type=int, default=32)
    t.add_argument("--dense", type=int, nargs="+", default=[128, 64, 32])
    t.add_argument("--dtype", choices=["float64", "float32"], default="float64")
    t.add_argument("--batch-size", type=int, default=256)
    t.add_argument("--allow-any-batch", action="store_true")
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=10)
    t.add_argument("--val-fraction", type=float, default=0.05)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--lr-patience", type=int, default=None)
    t.add_argument("--max-steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--verbose", action="store_true", help="log every epoch to stderr")
    common(t, threads=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="R^2 of a checkpoint on a test set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="report JSON; scatter CSV/PNG go alongside")
    e.add_argument("--qubit", type=int, default=None, help="swap this qubit into row 0 first")
    e.add_argument("--pair", type=int, nargs=2, default=None)
    e.add_argument("--all-qubits", action="store_true")
    e.add_argument("--histogram", type=int, default=None, metavar="BINS")
    e.add_argument("--dtype", choices=["float64", "float32"], default=None)
    common(e)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extrapolate", help="R^2 of a single-output checkpoint across sizes")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", nargs="+", required=True)
    x.add_argument("--out", required=True, help="CSV of R^2 vs N")
    x.add_argument("--qubit", type=int, default=None)
    x.add_argument("--all-qubits", action="store_true")
    x.add_argument("--dtype", choices=["float64", "float32"], default=None)
    common(x)
    x.set_defaults(func=cmd_extrapolate)

    b = sub.add_parser("bv", help="Bernstein-Vazirani emulation")
    b.add_argument("--qubits", type=int, required=True)
    b.add_argument("--secret", default=None, help="explicit bit string of length N-1")
    b.add_argument("--secret-bits", type=int, default=1, help="plant this many random set bits")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--checkpoint", default=None, help="omit to use exact simulation (small N)")
    b.add_argument("--threshold", type=float, default=0.5)
    b.add_argument("--dtype", choices=["float64", "float32"], default=None)
    b.add_argument("--out", required=True, help="per-qubit CSV; summary JSON goes alongside")
    common(b)
    b.set_defaults(func=cmd_bv)

    r = sub.add_parser("reconstruct", help="two-outcome reconstruction from a JSON input")
    r.add_argument("--input", required=True, help='{"z": [...], "zz": {"i,j": value}}')
    r.add_argument("--rescaled", action="store_true", help="z values are rescaled to [0, 1]")
    r.add_argument("--tol", type=float, default=1e-6)
    r.add_argument("--snap", action="store_true", help="snap noisy values before dispatch")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_reconstruct)

    h = sub.add_parser("histogram", help="distribution of a rescaled z_i across depths")
    h.add_argument("--qubits", type=int, default=3)
    h.add_argument("--depths", type=int, nargs="+", default=[5, 20])
    h.add_argument("--gate-set", choices=["s", "s-star"], default="s")
    h.add_argument("--count", type=int, default=5000)
    h.add_argument("--qubit", type=int, default=0)
    h.add_argument("--bins", type=int, default=20)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--out", required=True)
    common(h, threads=True)
    h.set_defaults(func=cmd_histogram)

    s = sub.add_parser("split-check", help="verify (or repair) train/test disjointness")
    s.add_argument("--train", required=True)
    s.add_argument("--test", required=True)
    s.add_argument("--out", default=None, help="write the repaired test set here")
    s.set_defaults(func=cmd_split_check)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except QCLearnError as exc:
        failure, code = exc, exc.exit_code
    except (UsageError, ValueError, KeyError) as exc:
        failure, code = exc, EXIT_USAGE
    except FloatingPointError as exc:
        failure, code = exc, EXIT_NUMERIC
    except OSError as exc:
        failure, code = exc, EXIT_DATA
    err = {"error": type(failure).__name__, "message": str(failure), "exit_code": code,
           "command": args.command}
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
