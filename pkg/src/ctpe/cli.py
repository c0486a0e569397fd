"""Command-line interface: ``ctpe <command> ...``.

Commands mirror the pipeline stages (synth, preprocess, train, embed,
retrieve, evaluate) plus ``sweep-pos``, which retrains and evaluates the same
corpus at several segmentation positions. Every command writes its outputs
and a ``*.manifest.json`` describing them.

Options can also come from a ``key = value`` file given with ``--config``;
flags given on the command line win over the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import read_config
from .errors import ConfigError, DataError

logger = logging.getLogger("ctpe")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
DEFAULT_SEED = 0
DEFAULT_POSITIONS = (0.2, 0.4, 0.6, 0.8)

# Keys a config file may set, with the type used to parse them.
CONFIG_KEYS = {
    "seed": int,
    "threads": int,
    "l_max": int,
    "l": int,
    "margin": float,
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "patience": int,
    "sampling": str,
    "n_s": str,
    "n_f": int,
    "tfidf_k": int,
    "dim": int,
    "backend": str,
    "vectors": str,
    "topn": int,
    "cutoff": int,
    "depth": int,
    "segment": str,
    "boundary": str,
    "part_order": str,
}
TRAIN_KEYS = ("l", "margin", "lr", "batch_size", "epochs", "patience", "sampling", "n_s", "n_f", "tfidf_k")


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    inputs: dict[str, dict] = field(default_factory=dict)
    outputs: dict[str, dict] = field(default_factory=dict)
    fingerprints: dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0

    def add_input(self, role: str, path) -> None:
        self.inputs[role] = {"path": str(path), "sha256": file_digest(path)}

    def add_output(self, role: str, path) -> None:
        self.outputs[role] = {"path": str(path), "sha256": file_digest(path)}

    def write(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def manifest_path(output) -> Path:
    output = Path(output)
    return output / "manifest.json" if output.is_dir() else output.with_name(output.name + ".manifest.json")


# ---------------------------------------------------------------------------
# Settings: defaults < config file < flags
# ---------------------------------------------------------------------------


def merged_settings(args) -> dict:
    values: dict = {}
    if args.config:
        for key, raw in read_config(args.config).items():
            if key not in CONFIG_KEYS:
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            try:
                values[key] = CONFIG_KEYS[key](raw)
            except ValueError:
                raise ConfigError(f"{args.config}: bad value for {key}: {raw!r}") from None
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    values.setdefault("seed", DEFAULT_SEED)
    return values


def train_config(settings: dict, l_max: int):
    from .trainer import TrainConfig

    mapping = {k: settings[k] for k in TRAIN_KEYS if k in settings}
    mapping["seed"] = settings["seed"]
    mapping["l_max"] = l_max
    return TrainConfig.from_mapping(mapping)


def segmentation_spec(settings: dict):
    from .corpus import SegmentationSpec

    seg = str(settings.get("segment", "meaningful")).strip()
    if seg == "meaningful":
        boundary = settings.get("boundary", 1)
        if isinstance(boundary, str) and boundary.isdigit():
            boundary = int(boundary)
        try:
            return SegmentationSpec(mode="meaningful", boundary=boundary)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return SegmentationSpec.at_percent(parse_position(seg))


def parse_position(text: str) -> float:
    text = text.strip()
    try:
        value = float(text[:-1]) / 100 if text.endswith("%") else float(text)
    except ValueError:
        raise ConfigError(f"segmentation position must be 'meaningful', a fraction or a percentage, got {text!r}") from None
    if not 0.0 < value < 1.0:
        raise ConfigError(f"segmentation position must lie strictly between 0 and 1, got {text!r}")
    return value


def load_table(settings: dict, store):
    """Word vectors for ``store``: a pretrained file or a seeded random table."""
    from .embedding import load_pretrained
    from .pipeline import corpus_random_table

    backend = settings.get("backend", "random")
    if backend == "pretrained":
        if not settings.get("vectors"):
            raise ConfigError("--backend pretrained needs --vectors")
        return load_pretrained(settings["vectors"], settings.get("dim"))
    if backend != "random":
        raise ConfigError(f"backend must be 'random' or 'pretrained', got {backend!r}")
    if settings.get("vectors"):
        return load_pretrained(settings["vectors"], settings.get("dim"))
    dim = settings.get("dim", 100)
    if dim < 1:
        raise ConfigError("dim must be >= 1")
    return corpus_random_table(store, dim, settings["seed"])


def read_corpus(path, settings: dict | None = None):
    """A processed corpus, re-cut when ``l_max`` or the segmentation is overridden."""
    from .corpus import read_store, resegment

    store = read_store(path)
    if settings is None:
        return store
    if "segment" in settings or "boundary" in settings or "l_max" in settings:
        spec = segmentation_spec(settings) if ("segment" in settings or "boundary" in settings) else store.segmentation
        store = resegment(store, spec, settings.get("l_max", store.l_max))
    return store


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args, settings, manifest: RunManifest) -> None:
    from .synthetic import SyntheticSpec, generate_files, spec_to_json

    kwargs = {"seed": settings["seed"]}
    for name in ("topics", "vocab_per_topic", "shared_vocab", "docs_per_topic", "test_per_topic", "noise", "title_noise", "zipf"):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = value
    for name in ("f_len", "b_len"):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = parse_range(value)
    try:
        spec = SyntheticSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    generate_files(spec, args.output, args.qrels)
    manifest.config.update(spec_to_json(spec))
    manifest.add_output("corpus", args.output)
    manifest.add_output("qrels", args.qrels)


def parse_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.replace(":", ",").split(","))
    except ValueError:
        raise ConfigError(f"expected a range 'lo,hi', got {text!r}") from None
    return lo, hi


def cmd_preprocess(args, settings, manifest: RunManifest) -> None:
    from .corpus import dump_store, load_corpus

    order = [p.strip() for p in settings["part_order"].split(",")] if settings.get("part_order") else None
    spec = segmentation_spec(settings)
    l_max = settings.get("l_max", 200)
    if l_max < 1:
        raise ConfigError("l_max must be >= 1")
    manifest.add_input("raw", args.raw)
    store = load_corpus(args.raw, spec, l_max, order)
    dump_store(store, args.output)
    manifest.config.update(
        {"segmentation": spec.to_json(), "l_max": l_max, "part_order": list(store.part_order)}
    )
    manifest.fingerprints["documents"] = str(len(store.documents))
    manifest.fingerprints["dropped"] = str(len(store.dropped))
    manifest.add_output("corpus", args.output)
    print(f"{len(store.pairs)} pairs ({len(store.dropped)} dropped) -> {args.output}")


def cmd_train(args, settings, manifest: RunManifest) -> None:
    from .embedding import save_table
    from .encoder import save_checkpoint
    from .trainer import train

    manifest.add_input("corpus", args.corpus)
    store = read_corpus(args.corpus, settings)
    config = train_config(settings, store.l_max)
    table = load_table(settings, store)
    out = Path(args.output)
    log_path = out.with_name(out.name + ".log")
    vectors = settings.get("vectors")
    if vectors:
        manifest.add_input("vectors", vectors)
    else:
        vectors = str(out.with_name(out.name + ".vectors.txt"))
        save_table(table, vectors)
        manifest.add_output("vectors", vectors)

    with log_path.open("w", encoding="utf-8", newline="\n") as log:
        log.write("epoch mean_loss seconds\n")

        def on_epoch(epoch: int, loss: float, seconds: float) -> None:
            log.write(f"{epoch} {loss!r} {seconds:.3f}\n")
            log.flush()

        twin, report = train(store, table, config, on_epoch)
    meta = {
        "train_config": config.to_mapping(),
        "table_fingerprint": table.fingerprint(),
        # Relative to the checkpoint, so a moved run directory still resolves it.
        "vectors": os.path.relpath(vectors, out.parent),
        "backend": settings.get("backend", "random"),
        "epoch_losses": report.epoch_losses,
        "stopped_epoch": report.stopped_epoch,
        "best_epoch": report.best_epoch,
        "stop_reason": report.stop_reason,
        "skipped": report.skipped,
    }
    save_checkpoint(twin, out, meta)
    manifest.config.update(config.to_mapping())
    manifest.fingerprints.update({"encoder": twin.fingerprint(), "table": table.fingerprint()})
    manifest.add_output("checkpoint", out)
    manifest.add_output("log", log_path)
    final = f"{report.epoch_losses[-1]:.6f}" if report.epoch_losses else "n/a"
    print(f"trained {report.stopped_epoch} epoch(s) ({report.stop_reason}); final loss {final} -> {out}")


def _checkpoint_table(args, settings, meta: dict, store):
    from .embedding import load_pretrained
    from .errors import FingerprintMismatch

    vectors = settings.get("vectors")
    if not vectors and meta.get("vectors"):
        vectors = str(Path(args.checkpoint).parent / meta["vectors"])
    if not vectors:
        raise ConfigError("no word vectors: pass --vectors")
    table = load_pretrained(vectors)
    expected = meta.get("table_fingerprint")
    if expected is not None and table.fingerprint() != expected:
        raise FingerprintMismatch(
            f"vectors {vectors} (fingerprint {table.fingerprint()}) differ from the ones the checkpoint "
            f"was trained with ({expected})"
        )
    return vectors, table


def cmd_embed(args, settings, manifest: RunManifest) -> None:
    from .encoder import load_checkpoint
    from .representation import embed_corpus, save_store

    manifest.add_input("corpus", args.corpus)
    manifest.add_input("checkpoint", args.checkpoint)
    store = read_corpus(args.corpus, settings)
    twin, meta = load_checkpoint(args.checkpoint)
    vectors, table = _checkpoint_table(args, settings, meta, store)
    manifest.add_input("vectors", vectors)
    emb = embed_corpus(twin, table, store)
    save_store(emb, args.output)
    manifest.fingerprints.update({"encoder": emb.encoder_fingerprint, "table": emb.table_fingerprint})
    manifest.add_output("embeddings", args.output)
    print(f"{len(emb)} documents embedded ({len(emb.skipped)} skipped) -> {args.output}")


def cmd_retrieve(args, settings, manifest: RunManifest) -> None:
    from .errors import FingerprintMismatch
    from .pipeline import retrieve_baseline, retrieve_pairs
    from .representation import load_store
    from .retrieval import write_run

    manifest.add_input("corpus", args.corpus)
    store = read_corpus(args.corpus, settings)
    depth = settings.get("depth")
    if depth is not None and depth < 1:
        raise ConfigError("depth must be >= 1")
    if args.baseline:
        if args.store:
            raise ConfigError("--baseline and --store are mutually exclusive")
        table = load_table(settings, store) if args.baseline == "avg" else None
        if settings.get("vectors"):
            manifest.add_input("vectors", settings["vectors"])
        ranked = retrieve_baseline(store, args.baseline, table, depth)
        manifest.config["baseline"] = args.baseline
    else:
        if not args.store:
            raise ConfigError("retrieve needs --store or --baseline")
        manifest.add_input("embeddings", args.store)
        emb = load_store(args.store)
        if args.checkpoint:
            from .encoder import load_checkpoint

            manifest.add_input("checkpoint", args.checkpoint)
            twin, _ = load_checkpoint(args.checkpoint)
            if twin.fingerprint() != emb.encoder_fingerprint:
                raise FingerprintMismatch(
                    f"store {args.store} was built by encoder {emb.encoder_fingerprint}, "
                    f"checkpoint is {twin.fingerprint()}"
                )
        ranked = retrieve_pairs(emb, store, depth)
    write_run(ranked, args.output)
    manifest.config["depth"] = depth if depth is not None else "full"
    manifest.add_output("run", args.output)
    print(f"{len(ranked)} queries ranked -> {args.output}")


def cmd_evaluate(args, settings, manifest: RunManifest) -> None:
    from .evaluation import Judgments, evaluate_run, read_qrels, read_run

    manifest.add_input("run", args.run)
    if args.qrels:
        manifest.add_input("qrels", args.qrels)
        relevant = read_qrels(args.qrels)
    elif args.corpus:
        relevant = None
    else:
        raise ConfigError("evaluate needs --qrels or --corpus for the ground truth")
    pool = None
    if args.corpus:
        manifest.add_input("corpus", args.corpus)
        store = read_corpus(args.corpus)
        pool = frozenset(store.ids("candidate"))
        if relevant is None:
            relevant = store.groundtruth()
    n = settings.get("topn", 20)
    cutoff = settings.get("cutoff")
    if n < 1 or (cutoff is not None and cutoff < 1):
        raise ConfigError("--topn and --cutoff must be >= 1")
    report = evaluate_run(read_run(args.run), Judgments(dict(relevant), pool), n, cutoff)
    out = Path(args.output)
    json_path = Path(args.json) if args.json else out.with_suffix(".json")
    out.write_text(report.to_text(), encoding="utf-8")
    json_path.write_text(report.to_json(), encoding="utf-8")
    manifest.config.update({"topn": n, "cutoff": cutoff if cutoff is not None else "full"})
    manifest.add_output("report", out)
    manifest.add_output("report_json", json_path)
    sys.stdout.write(report.to_text())


def sweep_table(rows: list[tuple[str, dict]]) -> str:
    from .evaluation import METRICS

    width = max([8] + [len(label) for label, _ in rows])
    lines = ["pos".ljust(width) + "".join(m.rjust(9) for m in METRICS)]
    for label, means in rows:
        lines.append(label.ljust(width) + "".join(f"{means[m]:9.4f}" for m in METRICS))
    return "\n".join(lines) + "\n"


def cmd_sweep_pos(args, settings, manifest: RunManifest) -> None:
    from .corpus import SegmentationSpec, resegment
    from .embedding import save_table
    from .pipeline import evaluate_lists, judgments_for, retrieve_pairs
    from .representation import embed_corpus
    from .retrieval import write_run
    from .trainer import train

    manifest.add_input("corpus", args.corpus)
    base = read_corpus(args.corpus)
    l_max = settings.get("l_max", base.l_max)
    config = train_config(settings, l_max)
    n = settings.get("topn", 20)
    cutoff = settings.get("cutoff")
    positions = [parse_position(p) for p in args.positions.split(",")] if args.positions else list(DEFAULT_POSITIONS)
    specs = [SegmentationSpec.at_percent(p) for p in positions]
    if not args.no_meaningful and len(base.part_order) > 1:
        boundary = settings.get("boundary", 1)
        specs.append(SegmentationSpec(boundary=int(boundary) if str(boundary).isdigit() else boundary))

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    # One table for every row, so rows differ only in the cut position.
    table = load_table(settings, base)
    if not settings.get("vectors"):
        save_table(table, outdir / "vectors.txt")
        manifest.add_output("vectors", outdir / "vectors.txt")
    rows, summary = [], {}
    for spec in specs:
        name = "meaningful" if spec.mode == "meaningful" else f"pos{round(spec.percent * 100):02d}"
        label = "m" if spec.mode == "meaningful" else spec.label()
        store = resegment(base, spec, l_max)
        twin, report = train(store, table, config)
        emb = embed_corpus(twin, table, store)
        ranked = retrieve_pairs(emb, store)
        metrics = evaluate_lists(ranked, judgments_for(store), n, cutoff)
        run_path, rep_path = outdir / f"{name}.run", outdir / f"{name}.report.txt"
        write_run(ranked, run_path)
        rep_path.write_text(metrics.to_text(), encoding="utf-8")
        manifest.add_output(f"{name}.run", run_path)
        manifest.add_output(f"{name}.report", rep_path)
        rows.append((label, metrics.means))
        summary[label] = {
            "segmentation": spec.to_json(),
            "means": metrics.means,
            "stopped_epoch": report.stopped_epoch,
            "best_epoch": report.best_epoch,
            "pairs": len(store.pairs),
        }
        logger.info("%s: MAP %.4f", label, metrics.means["MAP"])
    text = sweep_table(rows)
    (outdir / "summary.txt").write_text(text, encoding="utf-8")
    (outdir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    manifest.add_output("summary", outdir / "summary.txt")
    manifest.add_output("summary_json", outdir / "summary.json")
    manifest.config.update(config.to_mapping())
    manifest.config.update({"topn": n, "cutoff": cutoff if cutoff is not None else "full"})
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--seed", type=int, help=f"random seed (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def _train_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--l-max", dest="l_max", type=int, help="maximum tokens kept per side")
    g.add_argument("--l", dest="l", type=int, help="encoder input length (default 200)")
    g.add_argument("--margin", type=float, help="hinge margin M (default 0.1)")
    g.add_argument("--lr", type=float, help="Adam learning rate (default 0.001)")
    g.add_argument("--batch-size", dest="batch_size", type=int, help="default 200")
    g.add_argument("--epochs", type=int, help="maximum epochs; 0 keeps the initial encoder (default 100)")
    g.add_argument("--patience", type=int, help="epochs without improvement before stopping (default 10)")
    g.add_argument("--sampling", choices=("uniform", "tfidf"), help="negative sampling mode")
    g.add_argument("--n-s", dest="n_s", help="the four kernel widths, e.g. 1,2,3,5")
    g.add_argument("--n-f", dest="n_f", type=int, help="filters per width (default 1024)")
    g.add_argument("--tfidf-k", dest="tfidf_k", type=int, help="neighbour pool size for tfidf sampling")


def _vector_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("word vectors")
    g.add_argument("--backend", choices=("random", "pretrained"), help="word vector source (default random)")
    g.add_argument("--vectors", help="word2vec-style text file")
    g.add_argument("--dim", type=int, help="dimension of random vectors (default 100)")


def _segment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--segment", help="'meaningful' (default) or a position such as 0.2 or 20%%")
    p.add_argument("--boundary", help="first latter-side part, as an index or a name (default 1)")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ctpe", description="Coupled text pair embedding pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic topic corpus")
    p.add_argument("-o", "--output", required=True, help="raw corpus file to write")
    p.add_argument("--qrels", required=True, help="qrels file to write")
    p.add_argument("--topics", type=int)
    p.add_argument("--vocab-per-topic", dest="vocab_per_topic", type=int)
    p.add_argument("--shared-vocab", dest="shared_vocab", type=int)
    p.add_argument("--docs-per-topic", dest="docs_per_topic", type=int)
    p.add_argument("--test-per-topic", dest="test_per_topic", type=int)
    p.add_argument("--f-len", dest="f_len", help="title length range lo,hi")
    p.add_argument("--b-len", dest="b_len", help="abstract length range lo,hi")
    p.add_argument("--noise", type=float, help="fraction of off-topic tokens")
    p.add_argument("--title-noise", dest="title_noise", type=float)
    p.add_argument("--zipf", type=float, help="Zipf exponent of word frequencies")

    p = sub.add_parser("preprocess", parents=[common], help="tokenize and segment a raw corpus")
    p.add_argument("raw")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--part-order", dest="part_order", help="comma-separated part names")
    p.add_argument("--l-max", dest="l_max", type=int, help="maximum tokens kept per side (default 200)")
    _segment_flags(p)

    p = sub.add_parser("train", parents=[common], help="train a twin encoder")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True, help="checkpoint to write")
    _train_flags(p)
    _vector_flags(p)
    _segment_flags(p)

    p = sub.add_parser("embed", parents=[common], help="embed every document with a checkpoint")
    p.add_argument("corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vectors", help="word vectors (default: the file recorded in the checkpoint)")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("retrieve", parents=[common], help="rank candidates for every test document")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True, help="run file to write")
    p.add_argument("--store", help="embedding store from 'embed'")
    p.add_argument("--checkpoint", help="verify the store against this checkpoint")
    p.add_argument("--baseline", choices=("avg", "tfidf"), help="single-vector cosine baseline instead")
    p.add_argument("--depth", type=int, help="ranked list length (default: all candidates)")
    _vector_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="score a run file")
    p.add_argument("run")
    p.add_argument("-o", "--output", required=True, help="text report to write")
    p.add_argument("--json", help="JSON report (default: output with .json suffix)")
    p.add_argument("--qrels")
    p.add_argument("--corpus", help="processed corpus: ground truth and candidate pool")
    p.add_argument("--topn", type=int, help="N for P/R/F1 (default 20)")
    p.add_argument("--cutoff", type=int, help="rank cutoff for NDCG and bpref (default: full ranking)")

    p = sub.add_parser("sweep-pos", parents=[common], help="compare segmentation positions")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--positions", help="comma-separated positions (default 0.2,0.4,0.6,0.8)")
    p.add_argument("--no-meaningful", dest="no_meaningful", action="store_true", help="skip the part-seam row")
    p.add_argument("--boundary", help="part seam for the meaningful row (default 1)")
    p.add_argument("--topn", type=int)
    p.add_argument("--cutoff", type=int)
    _train_flags(p)
    _vector_flags(p)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "embed": cmd_embed,
    "retrieve": cmd_retrieve,
    "evaluate": cmd_evaluate,
    "sweep-pos": cmd_sweep_pos,
}


def _cap_threads(n: int | None) -> None:
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be >= 1")
    # Only effective before numpy loads its BLAS, i.e. when run as a program.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    started = time.perf_counter()
    try:
        settings = merged_settings(args)
        _cap_threads(settings.get("threads"))
        manifest = RunManifest(args.command, {}, settings.get("seed"))
        manifest.config.update({k: v for k, v in settings.items() if k != "threads"})
        COMMANDS[args.command](args, settings, manifest)
        manifest.seconds = round(time.perf_counter() - started, 3)
        manifest.write(manifest_path(args.output))
    except ConfigError as exc:
        print(f"ctpe: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"ctpe: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping onto the internal exit code
        logger.debug("internal error", exc_info=True)
        print(f"ctpe: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK
