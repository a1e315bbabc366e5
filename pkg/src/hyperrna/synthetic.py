"""Synthetic hairpin backbones for smoke tests and desk-scale learning checks.

Each chain is an idealised helical hairpin: a 5' strand climbing a helix,
a short loop, and a 3' strand paired back down the opposite face. Strand
sequences are complementary (with occasional G-U wobble). The glycosidic
nitrogen sits closer to C4' for pyrimidines than for purines and is tilted
differently for A/G and C/U, so the geometry carries partial sequence
information the way real backbones do.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .structure_io import ChainKind, CoarseBackbone, write_pdb

RISE = 2.8
TWIST = math.radians(32.7)
RADIUS = 8.9
_PAIR = {"A": "U", "U": "A", "G": "C", "C": "G"}
_N_DIST = {"A": 3.75, "G": 3.75, "C": 3.3, "U": 3.3}
_N_TILT = {"A": 0.35, "G": -0.35, "C": 0.35, "U": -0.35}


def _rotate(v, axis, angle):
    axis = axis / np.linalg.norm(axis)
    return (
        v * math.cos(angle)
        + np.cross(axis, v) * math.sin(angle)
        + axis * np.dot(axis, v) * (1 - math.cos(angle))
    )


def hairpin_sequence(length: int, rng: np.random.Generator, loop: int = 4) -> str:
    stem = (length - loop) // 2
    loop = length - 2 * stem
    five = "".join(rng.choice(list("ACGU"), size=stem))
    loop_seq = "".join(rng.choice(list("ACGU"), size=loop))
    three = []
    for c in reversed(five):
        partner = _PAIR[c]
        if c == "G" and rng.random() < 0.15:
            partner = "U"
        three.append(partner)
    return five + loop_seq + "".join(three)


def _center_trace(length: int, stem: int) -> np.ndarray:
    loop = length - 2 * stem
    pts = []
    for i in range(stem):
        a = i * TWIST
        pts.append([RADIUS * math.cos(a), RADIUS * math.sin(a), i * RISE])
    top = (stem - 1) * RISE
    a0 = (stem - 1) * TWIST
    a1 = a0 + math.pi
    for j in range(loop):
        f = (j + 1) / (loop + 1)
        a = a0 + f * (a1 - a0)
        pts.append([RADIUS * math.cos(a), RADIUS * math.sin(a), top + 4.0 * math.sin(math.pi * f)])
    for i in reversed(range(stem)):
        a = i * TWIST + math.pi
        pts.append([RADIUS * math.cos(a), RADIUS * math.sin(a), i * RISE])
    return np.array(pts)


def synthetic_rna(length: int, rng: np.random.Generator, noise: float = 0.2, chain_id: str = "A",
                  sequence: str | None = None, loop: int = 4) -> CoarseBackbone:
    if length < loop + 2:
        raise ValueError(f"hairpin of length {length} needs at least {loop + 2} residues")
    seq = sequence or hairpin_sequence(length, rng, loop)
    stem = (length - loop) // 2
    c = _center_trace(length, stem)
    atoms = np.zeros((length, 3, 3))
    for i in range(length):
        prev_c = c[i - 1] if i > 0 else c[i] - (c[i + 1] - c[i])
        next_c = c[i + 1] if i < length - 1 else c[i] + (c[i] - c[i - 1])
        tangent = next_c - prev_c
        tangent /= np.linalg.norm(tangent)
        inward = -np.array([c[i, 0], c[i, 1], 0.0])
        inward -= np.dot(inward, tangent) * tangent
        inward /= np.linalg.norm(inward)
        side = np.cross(tangent, inward)
        p_dir = -0.7 * tangent + 0.5 * side - 0.2 * inward
        n_dir = _rotate(inward, tangent, _N_TILT[seq[i]])
        atoms[i, 0] = c[i] + 3.9 * p_dir / np.linalg.norm(p_dir)
        atoms[i, 1] = c[i]
        atoms[i, 2] = c[i] + _N_DIST[seq[i]] * n_dir
    atoms += rng.normal(0.0, noise, atoms.shape)
    # random rigid placement
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    R = quaternion_matrix(q)
    atoms = atoms @ R.T + rng.uniform(-20, 20, 3)
    return CoarseBackbone(chain_id, ChainKind.RNA, atoms, seq, list(range(1, length + 1)))


def synthetic_protein(length: int, rng: np.random.Generator, origin=(0.0, 0.0, 0.0), chain_id: str = "P") -> CoarseBackbone:
    """An ideal alpha helix (N, CA, C beads) with random residue letters."""
    letters = "ACDEFGHIKLMNPQRSTVWY"
    seq = "".join(rng.choice(list(letters), size=length))
    atoms = np.zeros((length, 3, 3))
    for i in range(length):
        for j, (r, dphi, dz) in enumerate(((1.55, -0.45, -0.9), (2.3, 0.0, 0.0), (1.65, 0.45, 0.9))):
            a = math.radians(100.0) * i + dphi
            atoms[i, j] = [r * math.cos(a), r * math.sin(a), 1.5 * i + dz]
    atoms += np.asarray(origin) + rng.normal(0.0, 0.05, atoms.shape)
    return CoarseBackbone(chain_id, ChainKind.PROTEIN, atoms, seq, list(range(1, length + 1)))


def quaternion_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    return quaternion_matrix(rng.normal(size=4))


def synthetic_corpus(count: int, rng: np.random.Generator, min_len: int = 15, max_len: int = 40,
                     noise: float = 0.2) -> list[tuple[str, CoarseBackbone]]:
    return [
        (f"syn{i:03d}", synthetic_rna(int(rng.integers(min_len, max_len + 1)), rng, noise))
        for i in range(count)
    ]


def write_corpus(directory, corpus) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, bb in corpus:
        path = directory / f"{name}.pdb"
        path.write_text(write_pdb([bb] if isinstance(bb, CoarseBackbone) else bb))
        paths.append(path)
    return paths
