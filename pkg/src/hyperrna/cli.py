"""Command line: preprocess, split, train, sample, eval.

Exit codes: 0 success (per-item failures may have been logged), 1 usage
error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import ModelCheckpoint, atomic_write, load, save
from .errors import DataError, DimensionMismatch, HyperRNAError, IdMismatch
from .featurize import graph_from_backbones, read_graph, write_graph
from .metrics import kabsch_align, lddt, mean_sem, perplexity, recovery
from .model import HyperRNAModel, ModelConfig
from .optim import AdamState
from .structure_io import (
    ChainKind,
    backbones_from_pdb,
    parse_fasta,
    read_backbones,
    write_backbones,
    write_fasta,
)
from .training import DatasetSplit, TrainConfig, cluster_split, log_to_csv, train

log = logging.getLogger("hyperrna")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path: Path, command: str, config: dict, inputs: list[str], seed, started: str) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "seed": seed,
        "version": __version__,
        "started": started,
        "finished": _now(),
    }
    atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- preprocess


def cmd_preprocess(args) -> int:
    started = _now()
    pdb_dir = _need(Path(args.pdb_dir), "PDB directory")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(p for p in pdb_dir.iterdir() if p.suffix.lower() in (".pdb", ".ent"))
    ok, failures, fasta = [], [], []
    for path in files:
        name = path.stem
        try:
            backbones = backbones_from_pdb(path.read_text())
            if not any(bb.kind is ChainKind.RNA for bb in backbones):
                raise DataError("no RNA chain")
            graph = graph_from_backbones(backbones, k=args.knn, num_rbf=args.rbf_bins, name=name)
        except (HyperRNAError, ValueError, UnicodeDecodeError) as exc:
            log.warning("skipping %s: %s", path.name, exc)
            failures.append(f"{path.name}\t{exc}")
            continue
        atomic_write(out / f"{name}.graph", write_graph(graph))
        atomic_write(out / f"{name}.bb", write_backbones(backbones))
        fasta.append((name, graph.rna_sequence))
        ok.append(path.name)
    atomic_write(out / "sequences.fasta", write_fasta(fasta))
    atomic_write(out / "failures.tsv", "".join(f + "\n" for f in failures))
    write_manifest(out / "manifest.json", "preprocess", {"knn": args.knn, "rbf_bins": args.rbf_bins},
                   [str(pdb_dir)], None, started)
    log.info("preprocessed %d structures, %d failures", len(ok), len(failures))
    if not ok:
        raise DataError(f"no structure in {pdb_dir} could be processed")
    return EXIT_OK


# ---------------------------------------------------------------- split


def _parse_ratios(text: str) -> tuple[float, float, float]:
    try:
        parts = [float(x) for x in text.split(":")]
    except ValueError:
        raise UsageError(f"bad --ratios {text!r}; expected e.g. 8:1:1") from None
    if len(parts) != 3 or sum(parts) <= 0 or min(parts) < 0:
        raise UsageError(f"bad --ratios {text!r}; expected three non-negative numbers")
    total = sum(parts)
    return tuple(p / total for p in parts)


def cmd_split(args) -> int:
    started = _now()
    ratios = _parse_ratios(args.ratios)
    records = parse_fasta(_need(Path(args.fasta), "FASTA file").read_text(), alphabet="rna")
    try:
        split = cluster_split(records, args.threshold, ratios, seed=args.seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out)
    atomic_write(out, split.to_text())
    write_manifest(out.with_name(out.name + ".manifest.json"), "split",
                   {"threshold": args.threshold, "ratios": args.ratios}, [args.fasta], args.seed, started)
    log.info("split %d sequences: %d/%d/%d", len(records), len(split.train), len(split.val), len(split.test))
    return EXIT_OK


# ---------------------------------------------------------------- train


def _load_graphs(graph_dir: Path, ids):
    out = []
    for i in ids:
        path = graph_dir / f"{i}.graph"
        if not path.exists():
            raise DataError(f"graph cache missing for {i!r}: {path}")
        out.append((i, read_graph(path.read_text())))
    return out


def _rna_coords(backbones) -> np.ndarray:
    return np.concatenate([bb.atoms for bb in backbones if bb.kind is ChainKind.RNA]).reshape(-1, 3)


def cmd_train(args) -> int:
    started = _now()
    graph_dir = _need(Path(args.graphs), "graph directory")
    split = DatasetSplit.from_text(_need(Path(args.split), "split file").read_text())
    overrides = {"epochs": args.epochs, "lr": args.lr, "seed": args.seed, "knn": args.knn,
                 "conv": args.conv, "lambda_str": args.lambda_str}
    if args.mean_seq_loss:
        overrides["mean_seq_loss"] = True
    base = _need(Path(args.config), "config file").read_text() if args.config else ""
    try:
        config = TrainConfig.from_text(base, **overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad configuration: {exc}") from None
    train_set = _load_graphs(graph_dir, split.train)
    val_set = _load_graphs(graph_dir, split.val)

    pred = None
    if args.pred_coords:
        pred_dir = _need(Path(args.pred_coords), "predicted coordinate directory")
        pred = {}
        for sid, _ in train_set:
            p = pred_dir / f"{sid}.bb"
            if p.exists():
                true_c = _rna_coords(read_backbones((graph_dir / f"{sid}.bb").read_text()))
                pred[sid] = (true_c, _rna_coords(read_backbones(p.read_text())))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not train_set:
        raise DataError("training split is empty")
    model = HyperRNAModel(config.model_config(), seed=config.seed)
    for _, g in train_set + val_set:
        model.check_graph(g)
    if config.epochs == 0:
        ckpt = ModelCheckpoint(model.params, AdamState(lr=config.lr),
                               {"model": model.config.to_dict(), "train": vars(config).copy(),
                                "best_epoch": 0, "epochs_run": 0})
        logs = []
    else:
        ckpt, _, logs = train(train_set, config, val_set, pred_coords=pred, model=model)
    save(out / "checkpoint.ckpt", ckpt)
    atomic_write(out / "train_log.csv", log_to_csv(logs))
    atomic_write(out / "config.txt", config.to_text())
    write_manifest(out / "manifest.json", "train", vars(config).copy(),
                   [str(graph_dir), args.split] + ([args.config] if args.config else []), config.seed, started)
    return EXIT_OK


# ---------------------------------------------------------------- sample


def model_from_checkpoint(path: Path) -> HyperRNAModel:
    ckpt = load(_need(path, "checkpoint"))
    config = ModelConfig.from_dict(ckpt.meta.get("model", {}))
    return HyperRNAModel(config, ckpt.params)


def cmd_sample(args) -> int:
    started = _now()
    if not args.temperature > 0:
        raise UsageError("--temperature must be positive")
    if args.num_seqs < 1:
        raise UsageError("--num-seqs must be at least 1")
    model = model_from_checkpoint(Path(args.checkpoint))
    gpath = _need(Path(args.graph), "graph file")
    graph = read_graph(gpath.read_text())
    name = graph.name or gpath.stem
    model.check_graph(graph)
    seqs = model.sample(graph, tau=args.temperature, seed=args.seed, num=args.num_seqs)
    text = write_fasta((f"{name}_s{i}", s) for i, s in enumerate(seqs, start=1))
    if args.out:
        out = Path(args.out)
        atomic_write(out, text)
        write_manifest(out.with_name(out.name + ".manifest.json"), "sample",
                       {"temperature": args.temperature, "num_seqs": args.num_seqs},
                       [args.checkpoint, args.graph], args.seed, started)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- eval


_SAMPLE_SUFFIX = re.compile(r"_s\d+$")


def _resolve_truth(pred_id: str, truth: dict) -> str | None:
    if pred_id in truth:
        return pred_id
    base = _SAMPLE_SUFFIX.sub("", pred_id)
    return base if base in truth else None


def _fmt(x: float) -> str:
    return "" if x is None else f"{x:.6f}"


def cmd_eval(args) -> int:
    started = _now()
    preds = parse_fasta(_need(Path(args.pred_fasta), "predicted FASTA").read_text())
    truth = dict(parse_fasta(_need(Path(args.true_fasta), "true FASTA").read_text()))
    pairs = [(pid, _resolve_truth(pid, truth)) for pid, _ in preds]
    missing = sorted(pid for pid, tid in pairs if tid is None)
    if missing:
        raise IdMismatch(f"no ground truth for: {', '.join(missing)}")
    if bool(args.pred_coords) != bool(args.true_coords):
        raise UsageError("--pred-coords and --true-coords must be given together")
    if bool(args.checkpoint) != bool(args.graphs):
        raise UsageError("--checkpoint and --graphs must be given together")

    use_coords = bool(args.pred_coords)
    if use_coords:
        pdir = _need(Path(args.pred_coords), "predicted coordinate directory")
        tdir = _need(Path(args.true_coords), "true coordinate directory")
        missing = []
        for pid, tid in pairs:
            if not ((pdir / f"{pid}.bb").exists() or (pdir / f"{tid}.bb").exists()):
                missing.append(f"{pid} (predicted)")
            if not (tdir / f"{tid}.bb").exists():
                missing.append(f"{tid} (true)")
        if missing:
            raise IdMismatch(f"coordinates missing for: {', '.join(sorted(set(missing)))}")

    model = model_from_checkpoint(Path(args.checkpoint)) if args.checkpoint else None
    logits_cache: dict[str, np.ndarray] = {}

    rows = []
    for (pid, pseq), (_, tid) in zip(preds, pairs):
        tseq = truth[tid]
        row = {"id": pid, "recovery": recovery(tseq, pseq), "perplexity": None, "rmsd": None, "lddt": None}
        if model is not None:
            if tid not in logits_cache:
                graph = read_graph(_need(Path(args.graphs) / f"{tid}.graph", "graph").read_text())
                model.check_graph(graph)
                logits_cache[tid] = model.teacher_forced_logits(graph, tseq).values
            row["perplexity"] = perplexity(logits_cache[tid], tseq)
        if use_coords:
            ppath = pdir / f"{pid}.bb"
            if not ppath.exists():
                ppath = pdir / f"{tid}.bb"
            pbb = read_backbones(ppath.read_text())
            tbb = read_backbones((tdir / f"{tid}.bb").read_text())
            pc, tc = _rna_coords(pbb), _rna_coords(tbb)
            if pc.shape != tc.shape:
                raise DataError(f"{pid}: predicted coordinates {pc.shape} vs true {tc.shape}")
            row["rmsd"] = kabsch_align(pc, tc).rmsd
            row["lddt"] = lddt(tc.reshape(-1, 3, 3)[:, 1], pc.reshape(-1, 3, 3)[:, 1])
        rows.append(row)

    cols = ["id", "recovery", "perplexity", "rmsd", "lddt"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join([r["id"]] + [_fmt(r[c]) for c in cols[1:]]))
    summary = ["summary"]
    for c in cols[1:]:
        vals = [r[c] for r in rows if r[c] is not None]
        if not vals:
            summary.append("")
            continue
        m, s = mean_sem(vals)
        summary.append(f"{m:.6f}±{s:.6f}")
    lines.append(",".join(summary))
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        atomic_write(out, text)
        inputs = [args.pred_fasta, args.true_fasta] + [p for p in (args.pred_coords, args.true_coords) if p]
        write_manifest(out.with_name(out.name + ".manifest.json"), "eval", {}, inputs, None, started)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hyperrna", description="Hypergraph RNA inverse folding pipeline.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="PDB files -> cached feature graphs")
    p.add_argument("--pdb-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--knn", type=int, default=16)
    p.add_argument("--rbf-bins", type=int, default=24)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="cluster sequences and assign train/val/test")
    p.add_argument("--fasta", required=True)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--ratios", default="8:1:1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="teacher-forced training")
    p.add_argument("--graphs", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--knn", type=int)
    p.add_argument("--conv", choices=["row", "symmetric"])
    p.add_argument("--lambda-str", type=float)
    p.add_argument("--pred-coords")
    p.add_argument("--mean-seq-loss", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="sample sequences for one structure")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--num-seqs", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score predicted sequences (and structures)")
    p.add_argument("--pred-fasta", required=True)
    p.add_argument("--true-fasta", required=True)
    p.add_argument("--pred-coords")
    p.add_argument("--true-coords")
    p.add_argument("--checkpoint")
    p.add_argument("--graphs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"hyperrna {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionMismatch, IdMismatch, HyperRNAError) as exc:
        print(f"hyperrna {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"hyperrna {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
