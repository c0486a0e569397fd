import json

import numpy as np
import pytest

from ctpe.cli import EXIT_CONFIG, EXIT_DATA, main, parse_position
from ctpe.config import read_config
from ctpe.corpus import read_store
from ctpe.encoder import init_encoder, load_checkpoint
from ctpe.errors import ConfigError

from conftest import PIPELINE_TRAIN, run_cli_pipeline, write_jsonl


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    return run_cli_pipeline(tmp_path_factory.mktemp("pipe"), seed=4)


class TestConfigFile:
    def test_keys_and_comments(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("# comment\nBatch-Size = 16\n; other\n\nmargin=0.2\n")
        assert read_config(path) == {"batch_size": "16", "margin": "0.2"}

    def test_errors(self, tmp_path):
        (tmp_path / "bad.cfg").write_text("a = 1\nno equals\n")
        with pytest.raises(ConfigError, match=":2:"):
            read_config(tmp_path / "bad.cfg")
        with pytest.raises(ConfigError):
            read_config(tmp_path / "missing.cfg")

    def test_parse_position(self):
        assert parse_position("0.2") == 0.2 and parse_position("20%") == 0.2
        for bad in ("1.5", "0", "x"):
            with pytest.raises(ConfigError):
                parse_position(bad)


class TestPipeline:
    def test_artifacts_and_manifests(self, pipeline):
        for role in ("corpus.bin", "model.ckpt", "emb.bin", "run.txt", "report.txt"):
            path = pipeline[role]
            assert path.exists()
            manifest = json.loads(path.with_name(path.name + ".manifest.json").read_text())
            assert manifest["seed"] == 4
            assert all(len(v["sha256"]) == 64 for v in manifest["outputs"].values())
        assert json.loads(pipeline["report.txt"].with_suffix(".json").read_text())["queries"] == 4

    def test_train_log_and_meta(self, pipeline):
        log = pipeline["model.ckpt"].with_name("model.ckpt.log").read_text().splitlines()
        assert log[0] == "epoch mean_loss seconds" and [x.split()[0] for x in log[1:]] == ["1", "2"]
        twin, meta = load_checkpoint(pipeline["model.ckpt"])
        assert meta["backend"] == "random" and len(meta["epoch_losses"]) == 2
        assert twin.n_f == 4

    def test_run_covers_test_queries(self, pipeline):
        store = read_store(pipeline["corpus.bin"])
        lines = pipeline["run.txt"].read_text().splitlines()
        assert {line.split()[0] for line in lines} == set(store.ids("test"))
        # Full ranking by default: every candidate appears for every query.
        assert len(lines) == len(store.ids("test")) * len(store.ids("candidate"))

    def test_rerun_identical(self, pipeline, tmp_path):
        again = run_cli_pipeline(tmp_path, seed=4)
        for role in ("raw.jsonl", "corpus.bin", "model.ckpt", "emb.bin", "run.txt", "report.txt"):
            assert pipeline[role].read_bytes() == again[role].read_bytes(), role

    def test_topn_only_changes_prf(self, pipeline, tmp_path):
        reports = {}
        for n in (5, 20):
            out = tmp_path / f"r{n}.txt"
            assert run("evaluate", pipeline["run.txt"], "--corpus", pipeline["corpus.bin"], "--topn", n, "-o", out) == 0
            reports[n] = json.loads(out.with_suffix(".json").read_text())["mean"]
        for m in ("MAP", "NDCG", "bpref"):
            assert reports[5][m] == reports[20][m]

    def test_zero_epochs_is_initial_encoder(self, pipeline, tmp_path):
        out = tmp_path / "zero.ckpt"
        args = [a if a != "2" else "0" for a in PIPELINE_TRAIN]
        assert run("train", pipeline["corpus.bin"], "-o", out, *args, "--seed", 9) == 0
        twin, meta = load_checkpoint(out)
        assert twin.fingerprint() == init_encoder(8, 20, (1, 2, 3, 5), 4, seed=9).fingerprint()
        assert meta["epoch_losses"] == []

    def test_baselines(self, pipeline, tmp_path):
        assert run("retrieve", pipeline["corpus.bin"], "--baseline", "tfidf", "-o", tmp_path / "t.run") == 0
        assert run("retrieve", pipeline["corpus.bin"], "--baseline", "avg", "--dim", 8, "--depth", 3, "-o", tmp_path / "a.run") == 0
        per_query = {}
        for line in (tmp_path / "a.run").read_text().splitlines():
            per_query.setdefault(line.split()[0], []).append(line)
        assert all(len(v) == 3 for v in per_query.values())

    def test_config_file_overridden_by_flag(self, pipeline, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("topn = 3\ncutoff = 5\n")
        out = tmp_path / "r.txt"
        assert run("evaluate", pipeline["run.txt"], "--corpus", pipeline["corpus.bin"], "--config", cfg, "--topn", 7, "-o", out) == 0
        obj = json.loads(out.with_suffix(".json").read_text())
        assert obj["topn"] == 7 and obj["ndcg_bpref_cutoff"] == 5


class TestExitCodes:
    def test_bad_json_line(self, tmp_path, capsys):
        raw = write_jsonl(tmp_path / "raw.jsonl", [{"id": "a", "parts": {"t": "x", "b": "y"}}, "{nope"])
        assert run("preprocess", raw, "-o", tmp_path / "c.bin") == EXIT_DATA
        assert "2" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert run("preprocess", tmp_path / "none.jsonl", "-o", tmp_path / "c.bin") == EXIT_DATA

    def test_pretrained_needs_vectors(self, pipeline, tmp_path):
        assert run("train", pipeline["corpus.bin"], "-o", tmp_path / "m", "--backend", "pretrained") == EXIT_CONFIG

    def test_unknown_config_key(self, pipeline, tmp_path):
        (tmp_path / "c.cfg").write_text("momentum = 0.9\n")
        assert run("evaluate", pipeline["run.txt"], "--corpus", pipeline["corpus.bin"], "--config", tmp_path / "c.cfg", "-o", tmp_path / "r") == EXIT_CONFIG

    def test_bad_config_value(self, pipeline, tmp_path):
        (tmp_path / "c.cfg").write_text("topn = many\n")
        assert run("evaluate", pipeline["run.txt"], "--corpus", pipeline["corpus.bin"], "--config", tmp_path / "c.cfg", "-o", tmp_path / "r") == EXIT_CONFIG

    def test_embed_with_foreign_vectors(self, pipeline, tmp_path):
        vec = tmp_path / "v.txt"
        vec.write_text("2 8\n" + "".join(f"w{i} " + " ".join(["0.1"] * 8) + "\n" for i in range(2)))
        assert run("embed", pipeline["corpus.bin"], "--checkpoint", pipeline["model.ckpt"], "--vectors", vec, "-o", tmp_path / "e") == EXIT_DATA

    def test_store_from_other_checkpoint(self, pipeline, tmp_path):
        other = tmp_path / "other.ckpt"
        assert run("train", pipeline["corpus.bin"], "-o", other, *PIPELINE_TRAIN, "--seed", 99) == 0
        code = run("retrieve", pipeline["corpus.bin"], "--store", pipeline["emb.bin"], "--checkpoint", other, "-o", tmp_path / "r")
        assert code == EXIT_DATA


class TestSweep:
    def test_five_rows(self, pipeline, tmp_path):
        out = tmp_path / "sweep"
        assert run("sweep-pos", pipeline["corpus.bin"], "-o", out, *PIPELINE_TRAIN, "--seed", 1) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert len(summary) == 5
        for row in summary.values():
            assert set(row["means"]) == {"P", "R", "F1", "MAP", "NDCG", "bpref"}
            assert all(np.isfinite(v) for v in row["means"].values())
        lines = (out / "summary.txt").read_text().splitlines()
        labels = [line.split()[0] for line in lines[1:]]
        assert labels == ["20%", "40%", "60%", "80%", "m"]
        assert (out / "manifest.json").exists()
