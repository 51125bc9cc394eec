"""CLI behavior: subcommands, exit codes, experiment artifacts, determinism."""

import json
import subprocess
import sys

import numpy as np
import pytest

from epk import cli, data


BLOB_SPEC = {
    "means": [[1.0, 4.0], [4.0, 1.0], [5.0, 5.0]],
    "std": 1.0,
    "per_class_count": 12,
    "dim": 5,
    "seed": 3,
}

TRAIN_CFG = {
    "model": {"layers": [5, 8, 3], "activation": "relu", "head": "log_softmax"},
    "epsilon": 0.2,
    "steps": 20,
    "seed": 7,
}


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def write_queries(path, n=5, dim=5, seed=11):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, dim)) + np.array([3.0, 3.0] + [0.0] * (dim - 2))
    with open(path, "w") as fh:
        fh.write(",".join(f"x{j}" for j in range(dim)) + "\n")
        for row in pts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return str(path)


@pytest.fixture()
def workdir(tmp_path):
    spec = write_json(tmp_path / "blobs.json", BLOB_SPEC)
    cfg = write_json(tmp_path / "train.json", TRAIN_CFG)
    blobs = str(tmp_path / "blobs.csv")
    traj = str(tmp_path / "run.traj")
    assert cli.main(["data", "gen-blobs", "--spec", spec, "--out", blobs]) == 0
    assert cli.main(["train", "--config", cfg, "--data", blobs, "--out", traj]) == 0
    queries = write_queries(tmp_path / "queries.csv")
    return tmp_path, blobs, traj, queries


def read_header(path):
    with open(path) as fh:
        return fh.readline().strip().split(",")


class TestSubcommands:
    def test_compare_schema(self, workdir):
        tmp, blobs, traj, queries = workdir
        out = str(tmp / "cmp.csv")
        assert cli.main(
            ["compare", "--traj", traj, "--data", blobs, "--inputs", queries, "--steps", "20", "--out", out]
        ) == 0
        header = read_header(out)
        assert header == [
            "point", "model_0", "model_1", "model_2",
            "kernel_0", "kernel_1", "kernel_2", "max_abs_err",
        ]
        assert sum(1 for _ in open(out)) == 6

    def test_predict_methods(self, workdir):
        tmp, blobs, traj, queries = workdir
        for method in ("epk", "dpk", "ntk0", "ntkN"):
            out = str(tmp / f"pred_{method}.csv")
            code = cli.main(
                ["predict", "--traj", traj, "--data", blobs, "--inputs", queries,
                 "--method", method, "--steps", "5", "--out", out]
            )
            assert code == 0
            assert read_header(out) == ["point", "kernel_0", "kernel_1", "kernel_2"]

    def test_align_contrib_pathdiag_gram_gp(self, workdir):
        tmp, blobs, traj, queries = workdir
        assert cli.main(["align", "--traj", traj, "--data", blobs, "--inputs", queries,
                         "--steps", "10", "--out", str(tmp / "align.csv")]) == 0
        assert read_header(tmp / "align.csv")[:4] == ["step", "epk_dpk_gap", "epk_ntk0_gap", "epk_ntkN_gap"]
        assert cli.main(["contrib", "--traj", traj, "--data", blobs, "--inputs", queries,
                         "--point", "1", "--steps", "10", "--out", str(tmp / "contrib.csv")]) == 0
        assert read_header(tmp / "contrib.csv") == [
            "train_index", "label", "distance", "contrib_0", "contrib_1", "contrib_2"]
        assert cli.main(["pathdiag", "--traj", traj, "--data", blobs,
                         "--resolution", "5", "--out", str(tmp / "pd.csv")]) == 0
        assert cli.main(["gram", "--traj", traj, "--data", blobs, "--points", queries,
                         "--steps", "4", "--out", str(tmp / "gram.npy")]) == 0
        blocks = np.load(tmp / "gram.npy")
        assert blocks.shape == (5, 5, 3, 3)
        assert cli.main(["gp", "--traj", traj, "--data", blobs, "--grid", "0:6:3,0:6:3",
                         "--steps", "3", "--train-per-class", "5", "--mc-samples", "100",
                         "--out", str(tmp / "field.csv")]) == 0
        header = read_header(tmp / "field.csv")
        assert header[:3] == ["x0", "x1", "kernel_self"]
        assert "total_variance" in header and "mc_std_0" in header
        meta = json.loads((tmp / "field.csv.meta.json").read_text())
        assert meta["targets"] == "onehot"

    def test_mnist_subcommand(self, workdir, tmp_path):
        tmp, *_ = workdir
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(40, 28, 28), dtype=np.uint8)
        labels = np.repeat(np.arange(4, dtype=np.uint8), 10)
        data.write_idx_images(tmp_path / "i.idx", images)
        data.write_idx_labels(tmp_path / "l.idx", labels)
        out = str(tmp_path / "mnist.csv")
        assert cli.main(["data", "mnist", "--images", str(tmp_path / "i.idx"),
                         "--labels", str(tmp_path / "l.idx"), "--per-class", "5",
                         "--downsample", "14", "--out", out]) == 0
        ds = data.load_csv(out)
        assert ds.n_samples == 20 and ds.input_dim == 196


class TestExitCodes:
    def test_validation_error_is_2(self, workdir, tmp_path):
        tmp, blobs, traj, queries = workdir
        bad = write_json(tmp_path / "bad.json", {**TRAIN_CFG, "bogus": 1})
        assert cli.main(["train", "--config", bad, "--data", blobs, "--out", str(tmp / "x.traj")]) == 2

    def test_io_error_is_4(self, workdir):
        tmp, blobs, traj, queries = workdir
        assert cli.main(["compare", "--traj", str(tmp / "missing.traj"), "--data", blobs,
                         "--inputs", queries, "--out", str(tmp / "o.csv")]) == 4

    def test_format_error_is_4(self, workdir):
        tmp, blobs, traj, queries = workdir
        bad = tmp / "corrupt.traj"
        bad.write_bytes(b"NOPE" + b"\x00" * 40)
        assert cli.main(["compare", "--traj", str(bad), "--data", blobs,
                         "--inputs", queries, "--out", str(tmp / "o.csv")]) == 4

    def test_fingerprint_mismatch_is_2(self, workdir, tmp_path):
        tmp, blobs, traj, queries = workdir
        other_spec = dict(BLOB_SPEC, seed=99)
        spec = write_json(tmp_path / "other.json", other_spec)
        other = str(tmp_path / "other.csv")
        assert cli.main(["data", "gen-blobs", "--spec", spec, "--out", other]) == 0
        assert cli.main(["compare", "--traj", traj, "--data", other,
                         "--inputs", queries, "--steps", "2", "--out", str(tmp / "o.csv")]) == 2


class TestExperiment:
    def _config(self, steps=15):
        return {
            "model": {"layers": [5, 8, 3], "activation": "relu", "head": "log_softmax"},
            "data": {"type": "blobs", "spec": BLOB_SPEC},
            "epsilon": 0.2,
            "steps": steps,
            "seed": 7,
            "integration_steps": [1, 10, 50],
            "test_points": {"mode": "blobs", "count": 8, "seed": 99},
            "grid": "0:6:3,0:6:3",
            "mc_samples": 200,
            "gp_train_per_class": 5,
            "pathdiag_resolution": 5,
        }

    def test_full_artifact_set(self, tmp_path):
        cfg = write_json(tmp_path / "exp.json", self._config())
        out = tmp_path / "run"
        assert cli.main(["experiment", "--config", cfg, "--out-dir", str(out)]) == 0
        names = {p.name for p in out.iterdir()}
        expected = {
            "trajectory.traj", "test_points.csv", "manifest.json", "align.csv",
            "contrib.csv", "pathdiag.csv", "field.csv",
        }
        assert expected <= names
        for T in (1, 10, 50):
            assert f"compare_T{T}.csv" in names and f"preds_T{T}.csv" in names
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["results"]["dataset_fingerprint"]
        errs = [manifest["results"][f"max_abs_err_T{T}"] for T in (1, 10, 50)]
        assert errs[0] > errs[1] > errs[2]
        assert "total" in manifest["stages"]

    def test_rerun_reproduces_bytes(self, tmp_path):
        cfg = write_json(tmp_path / "exp.json", self._config(steps=8))
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["experiment", "--config", cfg, "--out-dir", str(a)]) == 0
        assert cli.main(["experiment", "--config", cfg, "--out-dir", str(b)]) == 0
        for f in sorted(a.iterdir()):
            if f.name == "manifest.json":  # carries wall-clock timings
                continue
            assert f.read_bytes() == (b / f.name).read_bytes(), f.name

    def test_zero_steps_rejected_without_artifacts(self, tmp_path):
        cfg = write_json(tmp_path / "exp.json", self._config(steps=0))
        out = tmp_path / "empty"
        assert cli.main(["experiment", "--config", cfg, "--out-dir", str(out)]) == 2
        assert not out.exists() or not any(p.name != "manifest.json" for p in out.iterdir())

    def test_unknown_keys_rejected(self, tmp_path):
        cfg = write_json(tmp_path / "exp.json", {**self._config(), "mystery": 1})
        assert cli.main(["experiment", "--config", cfg, "--out-dir", str(tmp_path / "x")]) == 2


def test_console_script_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "epk.cli", "--help"], capture_output=True, text=True
    )
    assert proc.returncode == 0
    assert "experiment" in proc.stdout
