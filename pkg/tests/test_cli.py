"""Command line: outputs, manifests, determinism and exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from qclearn.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from qclearn.dataset import Dataset
from qclearn.evaluation import predict_dataset
from qclearn.nn.checkpoint import load_checkpoint

TINY = ["--conv-layers", "2", "--filters", "4", "--dense", "8", "--batch-size", "16",
        "--allow-any-batch", "--epochs", "2", "--no-plots"]


def run(*argv):
    return main([str(a) for a in argv])


def manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text())


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("generate", "--qubits", 3, "--depth", 3, "--count", 60, "--seed", 4,
               "--out", d / "train.qcd") == EXIT_OK
    assert run("generate", "--qubits", 3, "--depth", 3, "--count", 30, "--seed", 5,
               "--out", d / "test.qcd") == EXIT_OK
    assert run("train", "--data", d / "train.qcd", "--out", d / "multi.qcnn", *TINY) == EXIT_OK
    assert run("train", "--data", d / "train.qcd", "--outputs", "single", "--out", d / "single.qcnn",
               *TINY) == EXIT_OK
    return d


# ═══════════════════════════════════════════════════════════════════
# generate / noisy
# ═══════════════════════════════════════════════════════════════════


class TestGenerate:
    def test_record_count(self, tmp_path, capsys):
        out = tmp_path / "d.qcd"
        assert run("generate", "--qubits", 3, "--depth", 5, "--count", 1000, "--out", out) == EXIT_OK
        ds = Dataset.load(out)
        assert len(ds) == 1000 and ds.labels.shape == (1000, 3)
        printed = json.loads(capsys.readouterr().out)
        assert printed["records"] == 1000 and printed["ensemble_size"] == "3200000"

    def test_identical_bytes(self, tmp_path):
        for name in ("a", "b"):
            assert run("generate", "--qubits", 3, "--depth", 4, "--count", 50, "--seed", 9,
                       "--out", tmp_path / f"{name}.qcd") == EXIT_OK
        assert (tmp_path / "a.qcd").read_bytes() == (tmp_path / "b.qcd").read_bytes()

    def test_threads_do_not_change_bytes(self, tmp_path, monkeypatch):
        assert run("generate", "--qubits", 3, "--depth", 4, "--count", 50, "--threads", 3,
                   "--out", tmp_path / "a.qcd") == EXIT_OK
        monkeypatch.setenv("QCLEARN_THREADS", "2")
        assert run("generate", "--qubits", 3, "--depth", 4, "--count", 50,
                   "--out", tmp_path / "b.qcd") == EXIT_OK
        assert (tmp_path / "a.qcd").read_bytes() == (tmp_path / "b.qcd").read_bytes()

    def test_exhausted_ensemble(self, tmp_path, capsys):
        code = run("generate", "--qubits", 2, "--depth", 1, "--count", 7, "--out", tmp_path / "x.qcd")
        assert code == EXIT_DATA
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "EnsembleExhausted" and err["exit_code"] == EXIT_DATA

    def test_manifest(self, tmp_path):
        out = tmp_path / "d.qcd"
        run("generate", "--qubits", 2, "--depth", 2, "--count", 10, "--seed", 3, "--jsonl", "--out", out)
        m = manifest(out)
        assert m["command"] == "generate" and m["seeds"] == {"seed": 3}
        assert m["arguments"]["count"] == 10 and m["records"] == 10
        assert set(m["outputs"]) == {str(out), str(out.with_suffix(".jsonl"))}
        assert all(len(h) == 64 for h in m["outputs"].values())

    def test_z12_labels(self, tmp_path):
        out = tmp_path / "d.qcd"
        assert run("generate", "--qubits", 3, "--depth", 3, "--count", 20, "--labels", "exact-z12",
                   "--pair", 0, 2, "--out", out) == EXIT_OK
        ds = Dataset.load(out)
        assert ds.label_kind == "exact-z12" and ds.labels.shape == (20, 1)

    def test_noisy(self, workdir, tmp_path, capsys):
        out = tmp_path / "n.qcd"
        assert run("noisy", "--data", workdir / "train.qcd", "--measure", 16, "--seed", 1,
                   "--out", out) == EXIT_OK
        noisy = Dataset.load(out)
        assert noisy.label_kind == "noisy-z"
        assert np.all(np.isclose(noisy.labels * 16, np.round(noisy.labels * 16)))
        assert json.loads(capsys.readouterr().out)["r2_vs_exact"] < 1.0


class TestUsage:
    def test_unknown_command(self):
        assert run("frobnicate") == EXIT_USAGE

    def test_missing_flag(self):
        assert run("generate", "--qubits", 3) == EXIT_USAGE

    def test_bad_choice(self, tmp_path):
        assert run("generate", "--qubits", 3, "--depth", 2, "--count", 3, "--gate-set", "clifford",
                   "--out", tmp_path / "x") == EXIT_USAGE

    def test_missing_file(self, tmp_path, capsys):
        assert run("noisy", "--data", tmp_path / "none.qcd", "--measure", 4,
                   "--out", tmp_path / "o.qcd") == EXIT_DATA
        assert json.loads(capsys.readouterr().err)["command"] == "noisy"

    def test_corrupt_file(self, tmp_path):
        bad = tmp_path / "bad.qcd"
        bad.write_bytes(b"not a dataset")
        assert run("noisy", "--data", bad, "--measure", 4, "--out", tmp_path / "o.qcd") == EXIT_DATA

    def test_console_script(self):
        res = subprocess.run([sys.executable, "-m", "qclearn.cli", "--version"], capture_output=True,
                             text=True)
        assert res.returncode == 0 and res.stdout.strip()


# ═══════════════════════════════════════════════════════════════════
# train / eval / extrapolate
# ═══════════════════════════════════════════════════════════════════


class TestTrain:
    def test_outputs(self, workdir):
        ck = load_checkpoint(workdir / "multi.qcnn")
        assert ck.config.n_outputs == 3
        assert load_checkpoint(workdir / "single.qcnn").config.n_outputs == 1
        curve = (workdir / "multi.loss.csv").read_text().splitlines()
        assert len(curve) == 3
        m = manifest(workdir / "multi.qcnn")
        assert str(workdir / "train.qcd") in m["inputs"]

    def test_reproducible(self, workdir, tmp_path):
        out = tmp_path / "again.qcnn"
        assert run("train", "--data", workdir / "train.qcd", "--out", out, *TINY) == EXIT_OK
        a, b = load_checkpoint(workdir / "multi.qcnn"), load_checkpoint(out)
        assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)

    def test_transfer_records_source(self, workdir, tmp_path):
        out = tmp_path / "warm.qcnn"
        assert run("generate", "--qubits", 3, "--depth", 4, "--count", 40, "--out",
                   tmp_path / "p4.qcd") == EXIT_OK
        assert run("train", "--data", tmp_path / "p4.qcd", "--init", workdir / "multi.qcnn",
                   "--out", out, "--batch-size", 16, "--allow-any-batch", "--epochs", 1,
                   "--no-plots") == EXIT_OK
        src = manifest(out)["transfer_source_sha256"]
        assert src == manifest(workdir / "multi.qcnn")["outputs"][str(workdir / "multi.qcnn")]
        assert load_checkpoint(out).metadata["init_sha256"] == src

    def test_batch_outside_range(self, workdir, tmp_path):
        assert run("train", "--data", workdir / "train.qcd", "--out", tmp_path / "x.qcnn",
                   "--batch-size", 16, "--no-plots") == EXIT_USAGE

    def test_loss_plot(self, workdir, tmp_path):
        out = tmp_path / "p.qcnn"
        args = [a for a in TINY if a != "--no-plots"]
        assert run("train", "--data", workdir / "train.qcd", "--out", out, *args) == EXIT_OK
        assert out.with_suffix(".loss.png").stat().st_size > 0


class TestEval:
    def test_perfect_fixture(self, workdir, tmp_path, capsys):
        ds = Dataset.load(workdir / "test.qcd")
        _, y_hat = predict_dataset(load_checkpoint(workdir / "multi.qcnn"), ds)
        Dataset(ds.header, ds.kinds, np.asarray(y_hat, dtype=np.float64)).save(tmp_path / "fit.qcd")
        out = tmp_path / "r.json"
        assert run("eval", "--checkpoint", workdir / "multi.qcnn", "--data", tmp_path / "fit.qcd",
                   "--out", out) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["r2"] == 1.0
        assert json.loads(capsys.readouterr().out.splitlines()[-1])["r2"] == 1.0
        assert out.with_suffix(".scatter.png").stat().st_size > 0
        scatter = out.with_suffix(".scatter.csv").read_text().splitlines()
        assert len(scatter) == 1 + 30 * 3

    def test_no_plots(self, workdir, tmp_path):
        out = tmp_path / "r.json"
        assert run("eval", "--checkpoint", workdir / "single.qcnn", "--data", workdir / "test.qcd",
                   "--all-qubits", "--histogram", 10, "--no-plots", "--out", out) == EXIT_OK
        report = json.loads(out.read_text())
        assert report["n_test"] == 30 and report["n_outputs"] == 3
        assert not out.with_suffix(".scatter.png").exists()

    def test_multi_output_size_mismatch(self, workdir, tmp_path):
        run("generate", "--qubits", 4, "--depth", 3, "--count", 10, "--out", tmp_path / "n4.qcd")
        code = run("eval", "--checkpoint", workdir / "multi.qcnn", "--data", tmp_path / "n4.qcd",
                   "--no-plots", "--out", tmp_path / "r.json")
        assert code == EXIT_DATA

    def test_extrapolate(self, workdir, tmp_path):
        paths = []
        for n in (2, 4, 5):
            p = tmp_path / f"n{n}.qcd"
            run("generate", "--qubits", n, "--depth", 3, "--count", 15, "--seed", n, "--out", p)
            paths.append(p)
        out = tmp_path / "x.csv"
        assert run("extrapolate", "--checkpoint", workdir / "single.qcnn", "--data", *paths,
                   "--out", out) == EXIT_OK
        lines = out.read_text().splitlines()
        assert len(lines) == 4 and [ln.split(",")[1] for ln in lines[1:]] == ["2", "4", "5"]
        assert out.with_suffix(".png").stat().st_size > 0


# ═══════════════════════════════════════════════════════════════════
# bv / reconstruct / histogram / split-check
# ═══════════════════════════════════════════════════════════════════


class TestBV:
    def test_simulator_decodes(self, tmp_path, capsys):
        out = tmp_path / "bv.csv"
        assert run("bv", "--qubits", 4, "--secret", "010", "--out", out) == EXIT_OK
        summary = json.loads(out.with_suffix(".json").read_text())
        assert summary["correct"] and summary["planted"] == [1] and summary["source"] == "simulator"
        assert out.with_suffix(".png").exists()
        rows = out.read_text().splitlines()
        assert rows[0] == "qubit,z_pred,secret_bit,decoded_bit" and len(rows) == 4

    def test_planted_secret_is_seeded(self, tmp_path):
        picks = []
        for name in ("a", "b"):
            out = tmp_path / f"{name}.csv"
            run("bv", "--qubits", 9, "--secret-bits", 2, "--seed", 5, "--no-plots", "--out", out)
            picks.append(json.loads(out.with_suffix(".json").read_text())["planted"])
        assert picks[0] == picks[1] and len(picks[0]) == 2

    def test_network_source(self, workdir, tmp_path):
        out = tmp_path / "bv.csv"
        assert run("bv", "--qubits", 12, "--secret-bits", 1, "--checkpoint", workdir / "single.qcnn",
                   "--no-plots", "--out", out) == EXIT_OK
        summary = json.loads(out.with_suffix(".json").read_text())
        assert summary["source"] == "network" and summary["depth"] == 7

    def test_bad_secret(self, tmp_path):
        assert run("bv", "--qubits", 4, "--secret", "01", "--out", tmp_path / "x.csv") == EXIT_DATA
        assert run("bv", "--qubits", 4, "--secret-bits", 5, "--out", tmp_path / "x.csv") == EXIT_USAGE


class TestReconstruct:
    def test_roundtrip(self, tmp_path):
        src = tmp_path / "in.json"
        src.write_text(json.dumps({"z": [0.0, 0.0, 1.0], "zz": {"1,0": 1.0, "2,0": 0.0}}))
        out = tmp_path / "out.json"
        assert run("reconstruct", "--input", src, "--out", out) == EXIT_OK
        res = json.loads(out.read_text())
        assert {res["a"], res["b"]} == {"000", "110"} and res["p_a"] == 0.5
        assert manifest(out)["inputs"][str(src)]

    def test_rescaled(self, tmp_path):
        src = tmp_path / "in.json"
        src.write_text(json.dumps({"z": [1.0, 0.0]}))
        assert run("reconstruct", "--input", src, "--rescaled", "--out", tmp_path / "o.json") == EXIT_OK
        assert json.loads((tmp_path / "o.json").read_text())["a"] == "10"

    def test_inconsistent_is_numeric_failure(self, tmp_path, capsys):
        src = tmp_path / "in.json"
        src.write_text(json.dumps({"z": [0.2, 0.5]}))
        assert run("reconstruct", "--input", src, "--out", tmp_path / "o.json") == EXIT_NUMERIC
        assert json.loads(capsys.readouterr().err)["exit_code"] == EXIT_NUMERIC


class TestHistogram:
    def test_csv_and_plot(self, tmp_path):
        out = tmp_path / "h.csv"
        assert run("histogram", "--depths", 5, 20, "--count", 300, "--bins", 10, "--out", out) == EXIT_OK
        lines = out.read_text().splitlines()
        assert len(lines) == 1 + 2 * 11
        assert sum(int(ln.split(",")[3]) for ln in lines[1:12] if "central" not in ln) == 300
        assert out.with_suffix(".png").stat().st_size > 0


class TestSplitCheck:
    def test_overlap_repair(self, tmp_path, capsys):
        run("generate", "--qubits", 2, "--depth", 2, "--count", 30, "--seed", 1, "--out", tmp_path / "a.qcd")
        run("generate", "--qubits", 2, "--depth", 2, "--count", 30, "--seed", 2, "--out", tmp_path / "b.qcd")
        capsys.readouterr()
        code = run("split-check", "--train", tmp_path / "a.qcd", "--test", tmp_path / "b.qcd",
                   "--out", tmp_path / "c.qcd")
        assert code == EXIT_OK
        removed = json.loads(capsys.readouterr().out)["removed"]
        assert removed > 0 and len(Dataset.load(tmp_path / "c.qcd")) == 30 - removed
        assert run("split-check", "--train", tmp_path / "a.qcd", "--test", tmp_path / "c.qcd") == EXIT_OK
