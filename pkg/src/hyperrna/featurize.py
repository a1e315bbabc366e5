"""kNN graph construction and geometric node/edge features.

Node scalar features are laid out as five consecutive blocks::

    forward RBF | backward RBF | C4'->N RBF | C4'->P RBF | token

Vector features (16 channels of 3-vectors) are built from the same four
backbone unit vectors, the raw ones first, then scaled by the sine/cosine
of the local backbone torsion and by the cosine of the backbone bend.
All of them rotate with the structure; all scalars are rigid-motion
invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateGraph, DegenerateTorsion
from .structure_io import ChainKind, CoarseBackbone

D_MIN, D_MAX = 0.0, 20.0
TOKEN_WIDTH = 32
EDGE_RBF = 32
NUM_BLOCKS = 5
BLOCK_NAMES = ("forward_rbf", "backward_rbf", "c4_n_rbf", "c4_p_rbf", "token")


def knn_graph(positions: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``min(k, n-1)`` nearest other nodes, per node.

    Directed: row i lists the neighbours of i, nearest first, ties going
    to the lower index.
    """
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if n < 2:
        raise DegenerateGraph(f"kNN graph needs at least 2 nodes, got {n}")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    k = min(k, n - 1)
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def adjacency_matrix(neighbors: np.ndarray) -> np.ndarray:
    n = len(neighbors)
    A = np.zeros((n, n))
    A[np.repeat(np.arange(n), neighbors.shape[1]), neighbors.reshape(-1)] = 1.0
    return A


def rbf_centers(count: int, d_min: float = D_MIN, d_max: float = D_MAX) -> np.ndarray:
    return np.linspace(d_min, d_max, count)


def rbf_expand(distance, centers: np.ndarray, width: float | None = None) -> np.ndarray:
    """Gaussian radial basis expansion; output has a trailing axis of len(centers).

    Distances are clamped to the center range first. The default width is
    the center spacing.
    """
    centers = np.asarray(centers, dtype=np.float64)
    if width is None:
        width = (centers[-1] - centers[0]) / max(len(centers) - 1, 1) or 1.0
    if width <= 0:
        raise ValueError("RBF width must be positive")
    d = np.clip(np.asarray(distance, dtype=np.float64), centers[0], centers[-1])
    return np.exp(-((d[..., None] - centers) ** 2) / (2.0 * width**2))


def _unit(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)


def backbone_unit_vectors(backbone: CoarseBackbone) -> dict[str, np.ndarray]:
    """Forward/reverse chain directions and bead directions from the center bead."""
    x = backbone.atoms
    c = x[:, 1]
    n = len(c)
    forward = np.zeros((n, 3))
    reverse = np.zeros((n, 3))
    if n > 1:
        forward[:-1] = _unit(c[1:] - c[:-1])
        reverse[1:] = _unit(c[:-1] - c[1:])
    return {
        "forward": forward,
        "reverse": reverse,
        "to_P": _unit(x[:, 0] - c),
        "to_N": _unit(x[:, 2] - c),
    }


def dihedral(p1, p2, p3, p4) -> float:
    """Signed torsion in (-pi, pi], right-handed about the p2->p3 axis."""
    p1, p2, p3, p4 = (np.asarray(p, dtype=np.float64) for p in (p1, p2, p3, p4))
    b1, b2, b3 = p2 - p1, p3 - p2, p4 - p3
    if min(np.linalg.norm(b1), np.linalg.norm(b2), np.linalg.norm(b3)) < 1e-9:
        raise DegenerateTorsion("consecutive torsion points coincide")
    n1 = np.cross(b1, b2)
    n2 = np.cross(b2, b3)
    if np.linalg.norm(n1) < 1e-12 or np.linalg.norm(n2) < 1e-12:
        raise DegenerateTorsion("collinear torsion points")
    y = np.dot(b2 / np.linalg.norm(b2), np.cross(n1, n2))
    x = np.dot(n1, n2)
    angle = math.atan2(y, x)
    return math.pi if angle <= -math.pi else angle


def _chain_torsions(backbone: CoarseBackbone) -> tuple[np.ndarray, np.ndarray]:
    """(sin, cos) of torsion (C_{i-1}, P_i, C_i, P_{i+1}); zero at termini or degeneracy."""
    x = backbone.atoms
    n = len(x)
    sin = np.zeros(n)
    cos = np.zeros(n)
    for i in range(1, n - 1):
        try:
            t = dihedral(x[i - 1, 1], x[i, 0], x[i, 1], x[i + 1, 0])
        except DegenerateTorsion:
            continue
        sin[i], cos[i] = math.sin(t), math.cos(t)
    return sin, cos


@dataclass
class GeometricGraph:
    """Featurised kNN graph over all residues (RNA chains first)."""

    name: str
    adjacency: np.ndarray  # (n, k) int
    scalar_features: np.ndarray  # (n, d_e)
    vector_features: np.ndarray  # (n, d_v, 3)
    edge_scalar: np.ndarray  # (n*k, 32)
    edge_vector: np.ndarray  # (n*k, 1, 3)
    node_kind: np.ndarray  # (n,) 0 = RNA, 1 = protein
    sequence: str  # one letter per node
    chain_ids: list[str] = field(default_factory=list)
    residue_ids: list[int] = field(default_factory=list)
    block_widths: tuple[int, ...] = (24, 24, 24, 24, TOKEN_WIDTH)

    @property
    def n(self) -> int:
        return len(self.adjacency)

    @property
    def k(self) -> int:
        return self.adjacency.shape[1]

    @property
    def d_e(self) -> int:
        return self.scalar_features.shape[1]

    @property
    def d_v(self) -> int:
        return self.vector_features.shape[1]

    @property
    def rna_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.node_kind == 0)

    @property
    def rna_sequence(self) -> str:
        return "".join(self.sequence[i] for i in self.rna_nodes)

    def scalar_blocks(self) -> list[np.ndarray]:
        bounds = np.cumsum(self.block_widths)[:-1]
        return np.split(self.scalar_features, bounds, axis=1)

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """(source, neighbour) node index for every edge row."""
        src = np.repeat(np.arange(self.n), self.k)
        return src, self.adjacency.reshape(-1)


def _token_block(kind: ChainKind, length: int) -> np.ndarray:
    tok = np.zeros((length, TOKEN_WIDTH))
    base = 0 if kind is ChainKind.RNA else 2
    tok[np.arange(length), base + np.arange(length) % 2] = 1.0
    return tok


def _chain_features(bb: CoarseBackbone, centers: np.ndarray, width: float, d_v: int):
    x = bb.atoms
    c = x[:, 1]
    n = len(c)
    units = backbone_unit_vectors(bb)

    fwd_d = np.zeros(n)
    bwd_d = np.zeros(n)
    has_fwd = np.zeros(n, dtype=bool)
    has_bwd = np.zeros(n, dtype=bool)
    if n > 1:
        step = np.linalg.norm(c[1:] - c[:-1], axis=1)
        fwd_d[:-1], has_fwd[:-1] = step, True
        bwd_d[1:], has_bwd[1:] = step, True
    blocks = [
        rbf_expand(fwd_d, centers, width) * has_fwd[:, None],
        rbf_expand(bwd_d, centers, width) * has_bwd[:, None],
        rbf_expand(np.linalg.norm(x[:, 2] - c, axis=1), centers, width),
        rbf_expand(np.linalg.norm(x[:, 0] - c, axis=1), centers, width),
        _token_block(bb.kind, n),
    ]

    base = np.stack([units["forward"], units["reverse"], units["to_P"], units["to_N"]], axis=1)
    sin, cos = _chain_torsions(bb)
    bend = np.einsum("ij,ij->i", units["forward"], units["reverse"])
    # forward and reverse point away from node i, so the bend cosine is -f.r
    bend_cos = -bend
    families = [base, base * sin[:, None, None], base * cos[:, None, None], base * bend_cos[:, None, None]]
    vec = np.concatenate(families, axis=1)
    if vec.shape[1] >= d_v:
        vec = vec[:, :d_v]
    else:
        vec = np.concatenate([vec, np.zeros((n, d_v - vec.shape[1], 3))], axis=1)
    return np.concatenate(blocks, axis=1), vec


def build_features(
    rna: CoarseBackbone | Sequence[CoarseBackbone],
    protein: CoarseBackbone | Sequence[CoarseBackbone] | None = None,
    k: int = 16,
    num_rbf: int = 24,
    d_v: int = 16,
    name: str = "",
) -> GeometricGraph:
    """Featurise one complex: RNA chains first (file order), then protein chains."""
    rna_chains = [rna] if isinstance(rna, CoarseBackbone) else list(rna)
    if protein is None:
        prot_chains = []
    else:
        prot_chains = [protein] if isinstance(protein, CoarseBackbone) else list(protein)
    if not rna_chains:
        raise DegenerateGraph("at least one RNA chain is required")
    if any(bb.kind is not ChainKind.RNA for bb in rna_chains):
        raise ValueError("rna argument contains a non-RNA chain")
    if any(bb.kind is not ChainKind.PROTEIN for bb in prot_chains):
        raise ValueError("protein argument contains a non-protein chain")

    centers = rbf_centers(num_rbf)
    width = (D_MAX - D_MIN) / max(num_rbf - 1, 1)
    scal, vec, kinds, chain_ids, res_ids, letters, pos = [], [], [], [], [], [], []
    for bb in rna_chains + prot_chains:
        s, v = _chain_features(bb, centers, width, d_v)
        scal.append(s)
        vec.append(v)
        kinds.append(np.full(len(bb), 0 if bb.kind is ChainKind.RNA else 1))
        chain_ids += [bb.chain_id] * len(bb)
        res_ids += list(bb.residue_ids)
        letters.append(bb.sequence)
        pos.append(bb.center)

    pos = np.concatenate(pos)
    adjacency = knn_graph(pos, k)
    n, kk = adjacency.shape
    src = np.repeat(np.arange(n), kk)
    dst = adjacency.reshape(-1)
    disp = pos[dst] - pos[src]
    dist = np.linalg.norm(disp, axis=1)
    edge_centers = rbf_centers(EDGE_RBF)
    edge_scalar = rbf_expand(dist, edge_centers)
    edge_vector = _unit(disp)[:, None, :]

    return GeometricGraph(
        name=name,
        adjacency=adjacency,
        scalar_features=np.concatenate(scal),
        vector_features=np.concatenate(vec),
        edge_scalar=edge_scalar,
        edge_vector=edge_vector,
        node_kind=np.concatenate(kinds),
        sequence="".join(letters),
        chain_ids=chain_ids,
        residue_ids=res_ids,
        block_widths=(num_rbf,) * 4 + (TOKEN_WIDTH,),
    )


def graph_from_backbones(backbones: Sequence[CoarseBackbone], **kwargs) -> GeometricGraph:
    rna = [bb for bb in backbones if bb.kind is ChainKind.RNA]
    prot = [bb for bb in backbones if bb.kind is ChainKind.PROTEIN]
    return build_features(rna, prot or None, **kwargs)


# ---------------------------------------------------------------- cache format


def _fmt(row) -> str:
    return " ".join(f"{v:.6f}" for v in row)


def write_graph(g: GeometricGraph) -> str:
    widths = ",".join(str(w) for w in g.block_widths)
    lines = [f"#graph {g.name or '-'} n={g.n} k={g.k} d_e={g.d_e} d_v={g.d_v} blocks={widths}", "#nodes"]
    for i in range(g.n):
        lines.append(f"{i} {int(g.node_kind[i])} {g.chain_ids[i] or '-'} {g.residue_ids[i]} {g.sequence[i]}")
    lines.append("#adjacency")
    lines += [" ".join(str(j) for j in row) for row in g.adjacency]
    lines.append("#scalar")
    lines += [_fmt(row) for row in g.scalar_features]
    lines.append("#vector")
    lines += [_fmt(row.reshape(-1)) for row in g.vector_features]
    lines.append("#edges")
    src, dst = g.edge_index()
    for e in range(len(src)):
        lines.append(f"{src[e]} {dst[e]} {_fmt(g.edge_scalar[e])} {_fmt(g.edge_vector[e, 0])}")
    return "\n".join(lines) + "\n"


def read_graph(text: str) -> GeometricGraph:
    sections: dict[str, list[str]] = {}
    header = None
    current = None
    for line in text.splitlines():
        if line.startswith("#graph"):
            header = line.split()
            continue
        if line.startswith("#"):
            current = line[1:].strip()
            sections[current] = []
        elif line.strip() and current is not None:
            sections[current].append(line)
    if header is None:
        raise ValueError("missing #graph header")
    meta = dict(field.split("=", 1) for field in header[2:])
    n, k, d_v = int(meta["n"]), int(meta["k"]), int(meta["d_v"])
    widths = tuple(int(w) for w in meta["blocks"].split(","))

    nodes = [ln.split() for ln in sections["nodes"]]
    node_kind = np.array([int(r[1]) for r in nodes])
    chain_ids = ["" if r[2] == "-" else r[2] for r in nodes]
    residue_ids = [int(r[3]) for r in nodes]
    sequence = "".join(r[4] for r in nodes)
    adjacency = np.array([[int(v) for v in ln.split()] for ln in sections["adjacency"]], dtype=np.intp)
    scalar = np.array([[float(v) for v in ln.split()] for ln in sections["scalar"]])
    vector = np.array([[float(v) for v in ln.split()] for ln in sections["vector"]]).reshape(n, d_v, 3)
    edges = np.array([[float(v) for v in ln.split()] for ln in sections["edges"]])
    if adjacency.shape != (n, k) or len(edges) != n * k:
        raise ValueError("graph cache sections disagree with header sizes")
    return GeometricGraph(
        name="" if header[1] == "-" else header[1],
        adjacency=adjacency,
        scalar_features=scalar,
        vector_features=vector,
        edge_scalar=edges[:, 2:-3],
        edge_vector=edges[:, -3:].reshape(-1, 1, 3),
        node_kind=node_kind,
        sequence=sequence,
        chain_ids=chain_ids,
        residue_ids=residue_ids,
        block_widths=widths,
    )
