"""PDB/FASTA input and reduction to 3-bead coarse-grained backbones.

RNA residues keep P, C4' and the glycosidic nitrogen (N9 for purines, N1
for pyrimidines); protein residues keep N, CA and C. The middle bead is the
one used for graph construction.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import EmptyBackbone, EmptyStructure, InvalidAlphabet, MalformedCoordinate


class UnknownResidue(UserWarning):
    """A residue name outside the standard nucleotide/amino-acid vocabulary."""


class ChainKind(str, enum.Enum):
    RNA = "RNA"
    PROTEIN = "Protein"


RNA_RESIDUES = {
    "A": "A", "C": "C", "G": "G", "U": "U",
    "RA": "A", "RC": "C", "RG": "G", "RU": "U",
    "ADE": "A", "CYT": "C", "GUA": "G", "URA": "U",
}
PURINES = {"A", "G"}

AMINO_ACIDS = {
    "ALA": "A", "ARG": "R", "ASN": "N", "ASP": "D", "CYS": "C",
    "GLN": "Q", "GLU": "E", "GLY": "G", "HIS": "H", "ILE": "I",
    "LEU": "L", "LYS": "K", "MET": "M", "PHE": "F", "PRO": "P",
    "SER": "S", "THR": "T", "TRP": "W", "TYR": "Y", "VAL": "V",
}
PROTEIN_TO_THREE = {v: k for k, v in AMINO_ACIDS.items()}

RNA_ALPHABET = frozenset("ACGU")
PROTEIN_ALPHABET = frozenset(AMINO_ACIDS.values())

# residues we never warn about
_SOLVENT = {"HOH", "WAT", "DOD", "H2O"}

_MIN_ATOM_LINE = 54


@dataclass(frozen=True)
class AtomRecord:
    chain_id: str
    residue_index: int
    residue_name: str
    atom_name: str
    position: tuple[float, float, float]
    insertion_code: str = ""
    hetero: bool = False

    def __post_init__(self):
        if not self.atom_name.strip():
            raise ValueError("atom_name must be non-empty")
        if not all(math.isfinite(c) for c in self.position):
            raise MalformedCoordinate(f"non-finite coordinate {self.position}")


@dataclass
class CoarseBackbone:
    """Per-residue 3-bead frames for one chain.

    ``atoms[i]`` holds (P, C4', N1/N9) for RNA and (N, CA, C) for protein.
    """

    chain_id: str
    kind: ChainKind
    atoms: np.ndarray
    sequence: str
    residue_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.float64)
        n = len(self.sequence)
        if self.atoms.shape != (n, 3, 3) or len(self.residue_ids) != n:
            raise ValueError(
                f"inconsistent backbone: atoms {self.atoms.shape}, "
                f"sequence length {n}, {len(self.residue_ids)} residue ids"
            )

    def __len__(self) -> int:
        return len(self.sequence)

    @property
    def center(self) -> np.ndarray:
        """Coordinates of the middle bead (C4' or CA), shape (L, 3)."""
        return self.atoms[:, 1]


def _parse_float(text: str, line_no: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MalformedCoordinate(f"line {line_no}: bad coordinate field {text.strip()!r}") from None
    if not math.isfinite(value):
        raise MalformedCoordinate(f"line {line_no}: non-finite coordinate {text.strip()!r}")
    return value


def parse_pdb(text: str) -> dict[str, list[AtomRecord]]:
    """Read ATOM/HETATM records from fixed-column PDB text.

    Returns records grouped by chain id, chains in first-seen order. Only
    the first MODEL is read. Alternate locations other than blank/'A' are
    skipped.
    """
    chains: dict[str, list[AtomRecord]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        tag = line[:6]
        if tag.startswith("ENDMDL"):
            break
        if tag not in ("ATOM  ", "HETATM") or len(line) < _MIN_ATOM_LINE:
            continue
        if line[16] not in (" ", "A"):
            continue
        atom_name = line[12:16].strip().replace("*", "'")
        if not atom_name:
            continue
        x = _parse_float(line[30:38], line_no)
        y = _parse_float(line[38:46], line_no)
        z = _parse_float(line[46:54], line_no)
        try:
            res_idx = int(line[22:26])
        except ValueError:
            raise MalformedCoordinate(f"line {line_no}: bad residue number {line[22:26]!r}") from None
        rec = AtomRecord(
            chain_id=line[21].strip(),
            residue_index=res_idx,
            residue_name=line[17:20].strip(),
            atom_name=atom_name,
            position=(x, y, z),
            insertion_code=line[26].strip(),
            hetero=tag == "HETATM",
        )
        chains.setdefault(rec.chain_id, []).append(rec)
    if not chains:
        raise EmptyStructure("no ATOM/HETATM records found")
    return chains


def residue_kind(residue_name: str) -> ChainKind | None:
    if residue_name in RNA_RESIDUES:
        return ChainKind.RNA
    if residue_name in AMINO_ACIDS:
        return ChainKind.PROTEIN
    return None


def infer_kind(records: Iterable[AtomRecord]) -> ChainKind | None:
    """Majority vote over distinct residues; None if nothing is standard."""
    votes = {ChainKind.RNA: 0, ChainKind.PROTEIN: 0}
    seen = set()
    for r in records:
        key = (r.residue_index, r.insertion_code)
        if key in seen:
            continue
        seen.add(key)
        kind = residue_kind(r.residue_name)
        if kind is not None:
            votes[kind] += 1
    if not any(votes.values()):
        return None
    return max(votes, key=lambda k: votes[k])


def _bead_names(kind: ChainKind, letter: str) -> tuple[str, str, str]:
    if kind is ChainKind.PROTEIN:
        return ("N", "CA", "C")
    return ("P", "C4'", "N9" if letter in PURINES else "N1")


def coarse_grain(records: list[AtomRecord], kind: ChainKind | None = None) -> CoarseBackbone:
    """Reduce one chain's atoms to the 3-bead representation.

    Residues missing any bead are dropped. Residues of the other polymer
    type or with non-standard names are dropped; non-solvent unknowns emit
    an ``UnknownResidue`` warning.
    """
    if kind is None:
        kind = infer_kind(records)
        if kind is None:
            raise EmptyBackbone("chain has no standard residues")
    vocab = RNA_RESIDUES if kind is ChainKind.RNA else AMINO_ACIDS

    residues: dict[tuple[int, str], dict] = {}
    for r in records:
        key = (r.residue_index, r.insertion_code)
        res = residues.get(key)
        if res is None:
            res = residues[key] = {"name": r.residue_name, "atoms": {}}
        res["atoms"].setdefault(r.atom_name, r.position)

    chain_id = records[0].chain_id if records else ""
    coords, letters, ids = [], [], []
    for key in sorted(residues):
        res = residues[key]
        name = res["name"]
        letter = vocab.get(name)
        if letter is None:
            if name not in _SOLVENT and residue_kind(name) is None:
                warnings.warn(
                    f"chain {chain_id!r} residue {key[0]}{key[1]}: unknown residue {name!r} dropped",
                    UnknownResidue,
                    stacklevel=2,
                )
            continue
        beads = _bead_names(kind, letter)
        if not all(b in res["atoms"] for b in beads):
            continue
        coords.append([res["atoms"][b] for b in beads])
        letters.append(letter)
        ids.append(key[0])

    if not letters:
        raise EmptyBackbone(f"chain {chain_id!r}: no residue has all three backbone beads")
    return CoarseBackbone(chain_id, kind, np.array(coords), "".join(letters), ids)


def backbones_from_pdb(text: str) -> list[CoarseBackbone]:
    """All usable chains of a PDB file, in file order.

    Chains with no standard residues (ligand-only, solvent) are skipped.
    """
    out = []
    for records in parse_pdb(text).values():
        kind = infer_kind(records)
        if kind is None:
            continue
        try:
            out.append(coarse_grain(records, kind))
        except EmptyBackbone:
            continue
    if not out:
        raise EmptyBackbone("no chain yielded a usable backbone")
    return out


def write_backbones(backbones: Iterable[CoarseBackbone]) -> str:
    lines = []
    for bb in backbones:
        lines.append(f"#chain {bb.chain_id or '-'} {bb.kind.value} {len(bb)}")
        for rid, letter, xyz in zip(bb.residue_ids, bb.sequence, bb.atoms):
            coords = " ".join(f"{c:.6f}" for c in xyz.reshape(-1))
            lines.append(f"{rid} {letter} {coords}")
    return "\n".join(lines) + "\n"


def read_backbones(text: str) -> list[CoarseBackbone]:
    out = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if head[0] != "#chain" or len(head) != 4:
            raise ValueError(f"expected '#chain <id> <kind> <L>', got {lines[i]!r}")
        chain_id = "" if head[1] == "-" else head[1]
        kind = ChainKind(head[2])
        n = int(head[3])
        rows = [ln.split() for ln in lines[i + 1 : i + 1 + n]]
        if len(rows) != n or any(len(r) != 11 for r in rows):
            raise ValueError(f"chain {chain_id!r}: expected {n} residue lines of 11 fields")
        ids = [int(r[0]) for r in rows]
        seq = "".join(r[1] for r in rows)
        atoms = np.array([[float(v) for v in r[2:]] for r in rows]).reshape(n, 3, 3)
        out.append(CoarseBackbone(chain_id, kind, atoms, seq, ids))
        i += 1 + n
    return out


def _clean_sequence(seq: str, alphabet: str | None) -> str:
    seq = seq.upper()
    if alphabet == "rna":
        seq = seq.replace("T", "U")
        allowed = RNA_ALPHABET
    elif alphabet == "protein":
        allowed = PROTEIN_ALPHABET
    else:
        return seq
    bad = sorted(set(seq) - allowed)
    if bad:
        raise InvalidAlphabet(f"characters {''.join(bad)!r} outside the {alphabet} alphabet")
    return seq


def parse_fasta(text: str, alphabet: str | None = "rna") -> list[tuple[str, str]]:
    """Parse FASTA into (id, sequence) pairs.

    ``alphabet`` is "rna" (T mapped to U), "protein", or None for no check.
    The id is the first whitespace-delimited token of the header.
    """
    records: list[tuple[str, str]] = []
    current_id = None
    chunks: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if current_id is not None:
                records.append((current_id, _clean_sequence("".join(chunks), alphabet)))
            parts = line[1:].split()
            current_id = parts[0] if parts else ""
            chunks = []
        else:
            if current_id is None:
                raise ValueError("sequence data before the first FASTA header")
            chunks.append(line)
    if current_id is not None:
        records.append((current_id, _clean_sequence("".join(chunks), alphabet)))
    return records


def write_fasta(records: Iterable[tuple[str, str]]) -> str:
    return "".join(f">{rid}\n{seq}\n" for rid, seq in records)


def write_pdb(backbones: Iterable[CoarseBackbone]) -> str:
    """Render backbones as minimal PDB text (bead atoms only)."""
    lines = []
    serial = 1
    for bb in backbones:
        chain = (bb.chain_id or "A")[0]
        for rid, letter, beads in zip(bb.residue_ids, bb.sequence, bb.atoms):
            if bb.kind is ChainKind.RNA:
                resname = letter
            else:
                resname = PROTEIN_TO_THREE[letter]
            for name, (x, y, z) in zip(_bead_names(bb.kind, letter), beads):
                padded = f" {name:<3}" if len(name) < 4 else name
                element = name[0]
                lines.append(
                    f"ATOM  {serial:5d} {padded} {resname:>3} {chain}{rid:4d}    "
                    f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00          {element:>2}"
                )
                serial += 1
        lines.append("TER")
    lines.append("END")
    return "\n".join(lines) + "\n"
