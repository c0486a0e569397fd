import json

import numpy as np
import pytest

from ctpe.corpus import SegmentationSpec, load_corpus
from ctpe.embedding import Vocabulary, random_table


def write_jsonl(path, rows, header=None):
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps(header) + "\n")
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


@pytest.fixture
def tiny_raw(tmp_path):
    """Six documents on two themes; d5 and d6 are queries."""
    rows = [
        {"id": "d1", "parts": {"title": "Graph search", "abstract": "Graph nodes and edges for search."}},
        {"id": "d2", "parts": {"title": "Graph ranking", "abstract": "Edges between graph nodes rank pages."}},
        {"id": "d3", "parts": {"title": "Protein folding", "abstract": "Protein chains fold into structures."}},
        {"id": "d4", "parts": {"title": "Protein design", "abstract": "Designed protein structures and chains."}},
        {
            "id": "d5",
            "parts": {"title": "Graph walks", "abstract": "Random walks on graph edges."},
            "split": "test",
            "groundtruth": ["d1", "d2"],
        },
        {
            "id": "d6",
            "parts": {"title": "Protein chains", "abstract": "Folding of protein chains."},
            "split": "test",
            "groundtruth": ["d3", "d4"],
        },
    ]
    return write_jsonl(tmp_path / "raw.jsonl", rows, {"part_order": ["title", "abstract"]})


@pytest.fixture
def tiny_store(tiny_raw):
    return load_corpus(tiny_raw, SegmentationSpec(), 200)


@pytest.fixture
def tiny_table(tiny_store):
    return random_table(Vocabulary.from_store(tiny_store), 6, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def micro_problem(rng, dim=3, l=5, n_f=2, n_docs=4, vocab_size=12):
    """A random twin encoder plus encoded pairs small enough for finite differences."""
    from ctpe.corpus import CoupledPair
    from ctpe.embedding import EmbeddingTable, embed_pairs
    from ctpe.encoder import init_encoder

    vocab = Vocabulary([f"w{i}" for i in range(vocab_size)])
    table = EmbeddingTable(vocab, rng.normal(size=(vocab_size, dim)))
    pairs = []
    for i in range(n_docs):
        nf, nb = rng.integers(5, l + 3, size=2)
        pairs.append(
            CoupledPair(
                f"d{i}",
                tuple(vocab.tokens[j] for j in rng.integers(vocab_size, size=nf)),
                tuple(vocab.tokens[j] for j in rng.integers(vocab_size, size=nb)),
            )
        )
    twin = init_encoder(dim, l, (1, 2, 3, 5), n_f, seed=int(rng.integers(1 << 30)))
    for block in twin.former.blocks + twin.latter.blocks:
        block.bias[:] = rng.normal(scale=0.1, size=block.bias.shape)
    data, skipped = embed_pairs(pairs, table, l, min_len=5)
    assert not skipped
    return twin, data


PIPELINE_TRAIN = ["--l-max", "20", "--l", "20", "--n-f", "4", "--dim", "8", "--batch-size", "8", "--epochs", "2"]


def run_cli_pipeline(workdir, seed=0, synth=("--topics", "2", "--docs-per-topic", "20", "--test-per-topic", "2")):
    """synth -> preprocess -> train -> embed -> retrieve -> evaluate through the CLI.

    Returns the artifact paths by role; fails the test on any non-zero exit.
    """
    from ctpe.cli import main

    workdir.mkdir(parents=True, exist_ok=True)
    p = {name: workdir / name for name in ("raw.jsonl", "qrels.txt", "corpus.bin", "model.ckpt", "emb.bin", "run.txt", "report.txt")}
    s = ["--seed", str(seed)]
    steps = [
        ["synth", "-o", p["raw.jsonl"], "--qrels", p["qrels.txt"], *synth],
        ["preprocess", p["raw.jsonl"], "-o", p["corpus.bin"], "--l-max", "20"],
        ["train", p["corpus.bin"], "-o", p["model.ckpt"], *PIPELINE_TRAIN],
        ["embed", p["corpus.bin"], "--checkpoint", p["model.ckpt"], "-o", p["emb.bin"]],
        ["retrieve", p["corpus.bin"], "--store", p["emb.bin"], "--checkpoint", p["model.ckpt"], "-o", p["run.txt"]],
        ["evaluate", p["run.txt"], "--corpus", p["corpus.bin"], "--qrels", p["qrels.txt"], "-o", p["report.txt"]],
    ]
    for argv in steps:
        code = main([str(a) for a in argv] + s)
        assert code == 0, f"{argv[0]} exited with {code}"
    return p


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion, after the run."""
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
