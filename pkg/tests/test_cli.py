import csv
import io
import json

import numpy as np
import pytest

from mambarate.cli import main
from mambarate.data import write_embedding, write_manifest
from mambarate.rbf import centers, encode


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_config(root, emb_dir, manifest, **train):
    cfg = {
        "seed": 5,
        "data": {"embedding_dir": str(emb_dir), "manifest": str(manifest), "split": [0.75, 0.25]},
        "model": {"d_model": 8, "d_state": 4, "expand": 2, "head_dim": 8, "num_blocks": 1, "mlp_hidden": 8},
        "train": {"max_epochs": 3, **train},
        "output": "run",
    }
    path = root / "config.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture
def trained(tmp_path, corpus, capsys):
    emb_dir, manifest, ids = corpus
    config = write_config(tmp_path, emb_dir, manifest)
    code, out, _ = run(capsys, "train", config)
    assert code == 0, out
    return tmp_path / "run", emb_dir, manifest, ids


class TestTrain:
    def test_artifacts(self, trained):
        out, *_ = trained
        for name in ("checkpoint.mrc", "train_log.csv", "split.json"):
            assert (out / name).is_file()
        rows = list(csv.reader(open(out / "train_log.csv", newline="")))
        assert rows[0] == ["epoch", "train_loss", "val_loss", "lr", "stopped"]
        assert len(rows) == 4
        split = json.loads((out / "split.json").read_text())
        assert len(split["train"]) == 9 and len(split["val"]) == 3

    def test_rerun_is_byte_identical(self, trained, capsys, tmp_path):
        out, *_ = trained
        first_log = (out / "train_log.csv").read_bytes()
        first_ckpt = (out / "checkpoint.mrc").read_bytes()
        assert run(capsys, "train", tmp_path / "config.json")[0] == 0
        assert (out / "train_log.csv").read_bytes() == first_log
        assert (out / "checkpoint.mrc").read_bytes() == first_ckpt

    def test_missing_manifest(self, tmp_path, corpus, capsys):
        emb_dir, _, _ = corpus
        config = write_config(tmp_path, emb_dir, tmp_path / "nope.csv")
        code, _, err = run(capsys, "train", config)
        assert code == 3
        assert "nope.csv" in err

    def test_unknown_config_key(self, tmp_path, corpus, capsys):
        emb_dir, manifest, _ = corpus
        config = write_config(tmp_path, emb_dir, manifest, warmup=3)
        code, _, err = run(capsys, "train", config)
        assert code == 2 and "warmup" in err

    def test_empty_validation_split(self, tmp_path, corpus, capsys):
        emb_dir, manifest, _ = corpus
        config = write_config(tmp_path, emb_dir, manifest)
        raw = json.loads(config.read_text())
        raw["data"]["split"] = [1.0, 0.0]
        config.write_text(json.dumps(raw))
        assert run(capsys, "train", config)[0] == 2


class TestPredict:
    def test_scores_in_range_and_stable(self, trained, capsys):
        out, emb_dir, _, ids = trained
        files = [emb_dir / f"{u}.emb" for u in ids[:3]]
        code, text, _ = run(capsys, "predict", out / "checkpoint.mrc", *files)
        assert code == 0
        rows = list(csv.DictReader(io.StringIO(text)))
        assert [r["utterance_id"] for r in rows] == ids[:3]
        grid = set(centers().tolist())
        assert all(float(r["predicted_mos"]) in grid for r in rows)
        assert run(capsys, "predict", out / "checkpoint.mrc", *files)[1] == text

    def test_directory_and_output_file(self, trained, capsys, tmp_path):
        out, emb_dir, _, ids = trained
        dest = tmp_path / "pred.csv"
        assert run(capsys, "predict", out / "checkpoint.mrc", emb_dir, "-o", dest)[0] == 0
        assert len(dest.read_text().splitlines()) == len(ids) + 1

    def test_wrong_dimension(self, trained, capsys, tmp_path):
        out, *_ = trained
        bad = tmp_path / "wide.emb"
        write_embedding(bad, np.zeros((4, 9), dtype=np.float32))
        code, _, err = run(capsys, "predict", out / "checkpoint.mrc", bad)
        assert code == 5 and "9" in err

    def test_corrupt_embedding(self, trained, capsys, tmp_path):
        out, *_ = trained
        bad = tmp_path / "x.emb"
        bad.write_bytes(b"EMB0" + b"\0" * 12)
        assert run(capsys, "predict", out / "checkpoint.mrc", bad)[0] == 3


def write_predictions(path, scores):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["utterance_id", "predicted_mos"])
        for k, v in scores.items():
            w.writerow([k, v])


class TestEvaluate:
    @pytest.fixture
    def files(self, tmp_path):
        rows = [
            ("a", "S1", 16000, "L1", 1.0), ("a", "S1", 16000, "L2", 2.0), ("a", "S1", 16000, "L3", 4.0),
            ("b", "S1", 16000, "L1", 3.0),
            ("c", "S2", 16000, "L1", 4.0),
            ("d", "S2", 16000, "L1", 5.0),
        ]
        manifest = tmp_path / "m.csv"
        write_manifest(manifest, rows)
        preds = tmp_path / "p.csv"
        write_predictions(preds, {"a": 2.0, "b": 3.0, "c": 4.5, "d": 4.5})
        return preds, manifest

    def test_table(self, files, capsys, tmp_path):
        preds, manifest = files
        code, out, _ = run(capsys, "evaluate", preds, manifest, "--csv", tmp_path / "r.csv")
        assert code == 0
        lines = out.splitlines()
        assert [line.split()[0] for line in lines] == ["metric", "MSE", "LCC", "SRCC", "KTAU", "n"]
        assert lines[-1].split() == ["n", "4", "2"]
        # mean refs a=7/3; system means: S1 pred 2.5 ref 8/3, S2 pred 4.5 ref 4.5
        mse_sys = ((2.5 - 8 / 3) ** 2 + 0) / 2
        assert lines[1].split()[-1] == f"{mse_sys:.3f}"
        assert (tmp_path / "r.csv").read_text().startswith("level,n,mse,lcc,srcc,ktau\n")

    def test_median_differs(self, files, capsys):
        preds, manifest = files
        mean_out = run(capsys, "evaluate", preds, manifest)[1]
        median_out = run(capsys, "evaluate", preds, manifest, "--aggregation", "median")[1]
        # a's median is 2.0, equal to its prediction
        assert mean_out != median_out

    def test_unknown_utterance(self, files, capsys, tmp_path):
        _, manifest = files
        preds = tmp_path / "p2.csv"
        write_predictions(preds, {"a": 2.0, "zzz": 3.0})
        code, _, err = run(capsys, "evaluate", preds, manifest)
        assert code == 6 and "zzz" in err

    def test_missing_file(self, files, capsys, tmp_path):
        _, manifest = files
        assert run(capsys, "evaluate", tmp_path / "none.csv", manifest)[0] == 3


class TestCodec:
    def test_encode(self, capsys):
        code, out, _ = run(capsys, "codec", "encode", "3.0")
        assert code == 0
        vals = np.array([float(v) for v in out.split()])
        np.testing.assert_allclose(vals, encode(3.0), atol=5e-10)

    def test_decode(self, capsys):
        vec = ",".join(f"{v:.9f}" for v in encode(5.0))
        assert run(capsys, "codec", "decode", vec)[1] == "5.000000000\n"

    def test_out_of_range(self, capsys):
        assert run(capsys, "codec", "encode", "6")[0] == 7

    def test_decode_wrong_length(self, capsys):
        assert run(capsys, "codec", "decode", "0.1 0.2")[0] == 7


def test_inspect(trained, capsys):
    out, emb_dir, _, ids = trained
    code, text, _ = run(capsys, "inspect", emb_dir / f"{ids[0]}.emb", out / "checkpoint.mrc")
    assert code == 0
    assert "EMB1 dim=8" in text and "ok" in text
    assert "checkpoint epoch=" in text


def test_inspect_missing(capsys, tmp_path):
    assert run(capsys, "inspect", tmp_path / "nothing")[0] == 3
