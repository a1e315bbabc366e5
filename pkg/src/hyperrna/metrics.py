"""Evaluation metrics: recovery, Kabsch RMSD, lDDT, perplexity, diversity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .decoder import encode_sequence
from .errors import DegenerateConfiguration, LengthMismatch, TooFewPoints, TooFewSamples

LDDT_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    rmsd: float

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return np.asarray(coords) @ self.rotation.T + self.translation


def recovery(true_seq: str, pred_seq: str) -> float:
    if len(true_seq) != len(pred_seq):
        raise LengthMismatch(f"sequences of length {len(true_seq)} and {len(pred_seq)}")
    if not true_seq:
        raise LengthMismatch("empty sequences")
    return sum(a == b for a, b in zip(true_seq, pred_seq)) / len(true_seq)


def kabsch_align(P, Q) -> AlignmentResult:
    """Least-squares rigid superposition of P onto Q (both n x 3)."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape or P.ndim != 2 or P.shape[1] != 3:
        raise LengthMismatch(f"coordinate arrays {P.shape} and {Q.shape} differ")
    if len(P) < 3:
        raise TooFewPoints(f"need at least 3 points, got {len(P)}")
    p0, q0 = P.mean(axis=0), Q.mean(axis=0)
    Pc, Qc = P - p0, Q - q0
    H = Pc.T @ Qc
    U, S, Vt = np.linalg.svd(H)
    scale = max(S[0], 1.0)
    if S[1] <= 1e-10 * scale:
        raise DegenerateConfiguration("points are collinear or coincident; rotation is not determined")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = Vt.T @ D @ U.T
    t = q0 - R @ p0
    resid = Pc @ R.T - Qc
    rmsd = math.sqrt(float(np.mean(np.sum(resid * resid, axis=1))))
    return AlignmentResult(R, t, rmsd)


def rmsd(P, Q) -> float:
    return kabsch_align(P, Q).rmsd


def lddt(reference, model, inclusion_radius: float = 15.0, thresholds=LDDT_THRESHOLDS,
         min_separation: int = 2) -> float:
    """Superposition-free local distance difference test on one bead per residue.

    Pairs (i, j) with |i - j| >= ``min_separation`` whose reference distance
    is below the inclusion radius are scored; a pair counts as preserved at
    threshold c when the model distance differs by less than c. Returns NaN
    if no pair qualifies.
    """
    ref = np.asarray(reference, dtype=np.float64)
    mod = np.asarray(model, dtype=np.float64)
    if ref.shape != mod.shape:
        raise LengthMismatch(f"reference {ref.shape} and model {mod.shape} differ")
    n = len(ref)
    d_ref = np.linalg.norm(ref[:, None] - ref[None], axis=-1)
    d_mod = np.linalg.norm(mod[:, None] - mod[None], axis=-1)
    i, j = np.triu_indices(n, k=min_separation)
    keep = d_ref[i, j] < inclusion_radius
    if not keep.any():
        return float("nan")
    diff = np.abs(d_ref[i, j] - d_mod[i, j])[keep]
    return float(np.mean([np.mean(diff < c) for c in thresholds]))


def perplexity(logits, true_seq: str) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or len(logits) != len(true_seq):
        raise LengthMismatch(f"{len(true_seq)} bases vs logits {logits.shape}")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = encode_sequence(true_seq)
    return math.exp(-float(np.mean(logp[np.arange(len(idx)), idx])))


def sequence_diversity(samples: Sequence[str]) -> float:
    """Mean normalised Hamming distance over unordered pairs."""
    if len(samples) < 2:
        raise TooFewSamples("need at least two samples")
    lengths = {len(s) for s in samples}
    if len(lengths) != 1:
        raise LengthMismatch(f"samples have differing lengths {sorted(lengths)}")
    return float(np.mean([1.0 - recovery(a, b) for a, b in combinations(samples, 2)]))


def mean_sem(values: Sequence[float]) -> tuple[float, float]:
    """Mean and standard error of the mean (sample std, ddof=1)."""
    x = np.asarray([v for v in values if not math.isnan(v)], dtype=np.float64)
    if len(x) == 0:
        return float("nan"), float("nan")
    if len(x) == 1:
        return float(x[0]), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))
