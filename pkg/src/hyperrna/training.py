"""Losses, sequence-identity splitting and the teacher-forced training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import tensor as F
from .checkpoint import ModelCheckpoint
from .decoder import encode_sequence
from .errors import EmptyInput, LengthMismatch, NonFiniteLoss, ShapeMismatch
from .featurize import GeometricGraph
from .model import HyperRNAModel, ModelConfig
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- losses


def sequence_loss(true_seq: str, logits, mean: bool = False) -> Tensor:
    """Cross-entropy of one-hot truth against softmax(logits), summed over positions."""
    logits = F.as_tensor(logits)
    if logits.ndim != 2 or logits.shape[0] != len(true_seq):
        raise LengthMismatch(f"{len(true_seq)} bases vs logits of shape {logits.shape}")
    onehot = np.eye(logits.shape[1])[encode_sequence(true_seq)]
    nll = F.neg(F.sum(F.mul(F.log_softmax(logits, axis=-1), onehot)))
    return F.mul(nll, 1.0 / len(true_seq)) if mean else nll


def structure_loss(true_coords, pred_coords) -> Tensor:
    """Mean squared error over every coordinate component."""
    t, p = F.as_tensor(true_coords), F.as_tensor(pred_coords)
    if t.shape != p.shape:
        raise ShapeMismatch(f"true coordinates {t.shape} vs predicted {p.shape}")
    d = F.sub(p, t)
    return F.mean(F.mul(d, d))


def total_loss(seq_part, str_part=None, lambda_str: float = 1.0) -> tuple[Tensor, bool]:
    """Return (loss, structure_term_present)."""
    seq_part = F.as_tensor(seq_part)
    if str_part is None or lambda_str == 0.0:
        return seq_part, str_part is not None
    return F.add(seq_part, F.mul(str_part, lambda_str)), True


# ---------------------------------------------------------------- splitting


def alignment_identity(a: str, b: str) -> float:
    """Global alignment identity with match=1, mismatch=0, gap=0.

    With free gaps the optimal score is the longest common subsequence;
    it is normalised by the shorter length.
    """
    if not a or not b:
        return 0.0
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for ca in a:
        cur = [0]
        for j, cb in enumerate(b):
            cur.append(prev[j] + 1 if ca == cb else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1] / len(b)


@dataclass
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    cluster: dict[str, int]
    representative: dict[int, str] = field(default_factory=dict)

    def split_of(self, item: str) -> str:
        for name in ("train", "val", "test"):
            if item in getattr(self, name):
                return name
        raise KeyError(item)

    def to_text(self) -> str:
        lines = ["id\tcluster\tsplit"]
        for name in ("train", "val", "test"):
            for item in getattr(self, name):
                lines.append(f"{item}\t{self.cluster[item]}\t{name}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "DatasetSplit":
        out = {"train": [], "val": [], "test": []}
        cluster = {}
        for line in text.splitlines()[1:]:
            if not line.strip():
                continue
            item, cid, name = line.split("\t")
            out[name].append(item)
            cluster[item] = int(cid)
        return cls(out["train"], out["val"], out["test"], cluster)


def cluster_sequences(records: Sequence[tuple[str, str]], threshold: float = 0.8) -> tuple[dict[str, int], dict[int, str]]:
    """Greedy incremental clustering, longest sequences first."""
    order = sorted(range(len(records)), key=lambda i: (-len(records[i][1]), i))
    reps: list[tuple[int, str]] = []
    assignment: dict[str, int] = {}
    rep_ids: dict[int, str] = {}
    for i in order:
        item, seq = records[i]
        for cid, rep_seq in reps:
            if alignment_identity(seq, rep_seq) >= threshold:
                assignment[item] = cid
                break
        else:
            cid = len(reps)
            reps.append((cid, seq))
            rep_ids[cid] = item
            assignment[item] = cid
    return assignment, rep_ids


def cluster_split(records: Sequence[tuple[str, str]], identity_threshold: float = 0.8,
                  ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Cluster by identity, then hand whole clusters to train/val/test.

    Clusters are visited in a seeded random order and each goes to the
    split currently furthest below its target size.
    """
    if not records:
        raise EmptyInput("no sequences to split")
    ids = [r[0] for r in records]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate sequence ids: {', '.join(dup)}")
    ratios = np.asarray(ratios, dtype=np.float64)
    if len(ratios) != 3 or np.any(ratios < 0) or not math.isclose(ratios.sum(), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {list(ratios)}")
    assignment, reps = cluster_sequences(records, identity_threshold)
    members: dict[int, list[str]] = {}
    for item in ids:
        members.setdefault(assignment[item], []).append(item)
    cluster_ids = sorted(members)
    rng = np.random.default_rng(seed)
    rng.shuffle(cluster_ids)
    target = ratios * len(ids)
    counts = np.zeros(3)
    buckets: list[list[str]] = [[], [], []]
    for cid in cluster_ids:
        slot = int(np.argmax(target - counts))
        buckets[slot].extend(members[cid])
        counts[slot] += len(members[cid])
    return DatasetSplit(buckets[0], buckets[1], buckets[2], assignment, reps)


# ---------------------------------------------------------------- training


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-4
    dropout: float = 0.1
    encoder_layers: int = 3
    decoder_layers: int = 3
    d_e: int = 128
    d_v: int = 16
    edge_scalar: int = 32
    edge_vector: int = 1
    knn: int = 16
    rbf_bins: int = 24
    heads: int = 3
    attn_layers: int = 1
    seed: int = 0
    batch_size: int = 1
    lambda_str: float = 1.0
    mean_seq_loss: bool = False
    conv: str = "row"
    vector_attention: bool = True
    mask_attn_knn: bool = False

    def __post_init__(self):
        for name in ("epochs", "encoder_layers", "decoder_layers", "batch_size", "attn_layers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr < 0 or not 0 <= self.dropout < 1:
            raise ValueError("lr must be >= 0 and dropout in [0, 1)")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 (one structure per step) is supported")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_e=self.d_e, d_v=self.d_v, edge_scalar=self.edge_scalar, heads=self.heads,
            attn_layers=self.attn_layers, encoder_layers=self.encoder_layers,
            decoder_layers=self.decoder_layers, dropout=self.dropout, conv=self.conv,
            vector_attention=self.vector_attention, mask_attn_knn=self.mask_attn_knn,
            num_rbf=self.rbf_bins,
        )

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "TrainConfig":
        values: dict = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line without '=': {line!r}")
            values[key.strip()] = value.strip()
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        out = {}
        for key, value in values.items():
            default = getattr(cls, key)
            if isinstance(default, bool):
                out[key] = value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
            else:
                out[key] = type(default)(value)
        return cls(**out)


@dataclass
class EpochLog:
    epoch: int
    train_ce: float
    val_ce: float
    val_recovery: float
    wall_seconds: float


def teacher_forced_recovery(logits: np.ndarray, seq: str) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == encode_sequence(seq)))


def evaluate(model: HyperRNAModel, graphs: Sequence[tuple[str, GeometricGraph]]) -> tuple[float, float]:
    """Mean per-position CE and teacher-forced argmax recovery, position-weighted."""
    if not graphs:
        return float("nan"), float("nan")
    ce, hits, total = 0.0, 0.0, 0
    for _, g in graphs:
        logits = model.teacher_forced_logits(g).values
        seq = g.rna_sequence
        ce += sequence_loss(seq, logits).item()
        hits += teacher_forced_recovery(logits, seq) * len(seq)
        total += len(seq)
    return ce / total, hits / total


def train(
    train_set: Sequence[tuple[str, GeometricGraph]],
    config: TrainConfig,
    val_set: Sequence[tuple[str, GeometricGraph]] = (),
    pred_coords: dict[str, tuple[np.ndarray, np.ndarray]] | None = None,
    model: HyperRNAModel | None = None,
    on_epoch=None,
):
    """Teacher-forced training, one structure per Adam step.

    ``pred_coords`` optionally maps structure id to (true, predicted)
    coordinate arrays; when present the structure term joins the loss as a
    constant offset. ``on_epoch(entry, model)`` runs after every epoch and
    may return True to stop early. Returns (best checkpoint, last model,
    epoch logs).
    """
    if not train_set:
        raise EmptyInput("training split is empty")
    model = model or HyperRNAModel(config.model_config(), seed=config.seed)
    adam = AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed + 1)
    logs: list[EpochLog] = []
    best_val = math.inf
    best_values = {k: p.values.copy() for k, p in model.params.items()}
    best_epoch = 0
    start = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_set))
        ce_sum, n_pos = 0.0, 0
        for idx in order:
            sid, graph = train_set[idx]
            seq = graph.rna_sequence
            with Tape() as tape:
                logits = model.teacher_forced_logits(graph, train=True, rng=rng)
                seq_part = sequence_loss(seq, logits, mean=config.mean_seq_loss)
                str_part = None
                if pred_coords and sid in pred_coords:
                    true_c, pred_c = pred_coords[sid]
                    str_part = structure_loss(true_c, pred_c)
                loss, _ = total_loss(seq_part, str_part, config.lambda_str)
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteLoss(sid, value)
            tape.backward(loss)
            grads = {name: p.grad for name, p in model.params.items()}
            adam_step(model.params, grads, adam)
            for p in model.params.values():
                p.grad = None
            ce = seq_part.item() * (len(seq) if config.mean_seq_loss else 1.0)
            ce_sum += ce
            n_pos += len(seq)
        val_ce, val_rec = evaluate(model, val_set)
        entry = EpochLog(epoch, ce_sum / n_pos, val_ce, val_rec, time.perf_counter() - start)
        logs.append(entry)
        log.info("epoch %d train_ce %.4f val_ce %.4f val_rec %.3f", epoch, entry.train_ce, val_ce, val_rec)
        score = val_ce if val_set else entry.train_ce
        if score < best_val:
            best_val = score
            best_epoch = epoch
            best_values = {k: p.values.copy() for k, p in model.params.items()}
        if on_epoch is not None and on_epoch(entry, model):
            break

    best_params = {k: Tensor(v, requires_grad=True, name=k) for k, v in best_values.items()}
    meta = {
        "model": model.config.to_dict(),
        "train": asdict(config),
        "best_epoch": best_epoch,
        "epochs_run": len(logs),
    }
    return ModelCheckpoint(best_params, adam, meta), model, logs


def log_to_csv(logs: Sequence[EpochLog], include_wall: bool = True) -> str:
    cols = ["epoch", "train_ce", "val_ce", "val_recovery"] + (["wall_seconds"] if include_wall else [])
    lines = [",".join(cols)]
    for e in logs:
        row = [str(e.epoch), f"{e.train_ce:.6f}", f"{e.val_ce:.6f}", f"{e.val_recovery:.6f}"]
        if include_wall:
            row.append(f"{e.wall_seconds:.3f}")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
