"""Reading protein structures, JSON-Lines datasets and binary checkpoints."""

import io
import json
import math
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (BadMagic, EmptyStructure, MalformedRecord, SchemaError,
                     TruncatedFile, VersionMismatch)

ALPHABET = "ACDEFGHIKLMNPQRSTVWY"
UNKNOWN = 20
NUM_RESIDUE_TYPES = 21

THREE_TO_ONE = {
    "ALA": "A", "CYS": "C", "ASP": "D", "GLU": "E", "PHE": "F",
    "GLY": "G", "HIS": "H", "ILE": "I", "LYS": "K", "LEU": "L",
    "MET": "M", "ASN": "N", "PRO": "P", "GLN": "Q", "ARG": "R",
    "SER": "S", "THR": "T", "VAL": "V", "TRP": "W", "TYR": "Y",
}
_TYPE_OF_LETTER = {c: i for i, c in enumerate(ALPHABET)}


def residue_code(three_letter):
    one = THREE_TO_ONE.get(three_letter.strip().upper())
    return UNKNOWN if one is None else _TYPE_OF_LETTER[one]


def encode_sequence(seq):
    return np.array([_TYPE_OF_LETTER.get(c, UNKNOWN) for c in seq.upper()], dtype=np.int64)


def decode_sequence(types):
    return "".join(ALPHABET[t] if t < UNKNOWN else "X" for t in types)


@dataclass(eq=False)
class ProteinStructure:
    id: str
    residue_types: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        self.residue_types = np.asarray(self.residue_types, dtype=np.int64).reshape(-1)
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        n = len(self.residue_types)
        if n < 1:
            raise EmptyStructure(f"{self.id}: no residues")
        if len(self.coords) != n:
            raise ValueError(f"{self.id}: {len(self.coords)} coordinates for {n} residues")
        if np.any((self.residue_types < 0) | (self.residue_types > UNKNOWN)):
            raise ValueError(f"{self.id}: residue code outside [0, 20]")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError(f"{self.id}: non-finite coordinate")

    @property
    def n(self):
        return len(self.residue_types)

    def __eq__(self, other):
        if not isinstance(other, ProteinStructure):
            return NotImplemented
        return (self.id == other.id
                and np.array_equal(self.residue_types, other.residue_types)
                and np.array_equal(self.coords, other.coords))


@dataclass(eq=False)
class DatasetRecord:
    structure: ProteinStructure
    labels: Optional[np.ndarray] = None
    split: str = "train"

    def __post_init__(self):
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, DatasetRecord):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        return (self.structure == other.structure and self.split == other.split
                and (self.labels is None or np.array_equal(self.labels, other.labels)))


# ---------------------------------------------------------------- PDB

def _field_float(line, lo, hi, lineno):
    try:
        value = float(line[lo:hi])
    except ValueError:
        raise MalformedRecord(f"line {lineno}: bad coordinate field {line[lo:hi]!r}") from None
    if not math.isfinite(value):
        raise MalformedRecord(f"line {lineno}: non-finite coordinate")
    return value


def parse_pdb(data, structure_id="pdb"):
    """Alpha-carbon chain from PDB text (``bytes`` or ``str``).

    Only ATOM records named CA in the first model are used; the first
    alternate location seen for a residue wins.  Residues are ordered by
    (chain, sequence number, insertion code).
    """
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    residues = {}
    seen_model = False
    for lineno, line in enumerate(data.splitlines(), 1):
        record = line[:6]
        if record.startswith("MODEL"):
            if seen_model:
                break
            seen_model = True
            continue
        if record.startswith("ENDMDL"):
            break
        if record != "ATOM  " or line[12:16].strip() != "CA":
            continue
        if len(line) < 54:
            raise MalformedRecord(f"line {lineno}: ATOM record shorter than 54 columns")
        try:
            resseq = int(line[22:26])
        except ValueError:
            raise MalformedRecord(f"line {lineno}: bad residue number {line[22:26]!r}") from None
        key = (line[21], resseq, line[26] if len(line) > 26 else " ")
        if key in residues:
            continue
        xyz = (_field_float(line, 30, 38, lineno),
               _field_float(line, 38, 46, lineno),
               _field_float(line, 46, 54, lineno))
        residues[key] = (residue_code(line[17:20]), xyz)
    if not residues:
        raise EmptyStructure("no CA atoms found")
    keys = sorted(residues)
    return ProteinStructure(
        id=structure_id,
        residue_types=[residues[k][0] for k in keys],
        coords=[residues[k][1] for k in keys],
    )


def read_pdb(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return parse_pdb(data, structure_id=os.path.splitext(os.path.basename(path))[0])


# ---------------------------------------------------------------- JSONL

def _record_from_json(obj, lineno):
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object", lineno)
    unknown = set(obj) - {"id", "sequence", "residue_types", "coords", "labels", "split"}
    if unknown:
        raise SchemaError(f"unknown fields {sorted(unknown)}", lineno)
    if "id" not in obj or "coords" not in obj:
        raise SchemaError("missing 'id' or 'coords'", lineno)
    if ("sequence" in obj) == ("residue_types" in obj):
        raise SchemaError("exactly one of 'sequence' / 'residue_types' required", lineno)
    if "sequence" in obj:
        if not isinstance(obj["sequence"], str):
            raise SchemaError("'sequence' must be a string", lineno)
        types = encode_sequence(obj["sequence"])
    else:
        raw = obj["residue_types"]
        if not isinstance(raw, list) or not all(isinstance(t, int) and 0 <= t <= UNKNOWN for t in raw):
            raise SchemaError("'residue_types' must be integers in [0, 20]", lineno)
        types = np.array(raw, dtype=np.int64)
    coords = obj["coords"]
    if (not isinstance(coords, list)
            or not all(isinstance(c, list) and len(c) == 3
                       and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in c)
                       for c in coords)):
        raise SchemaError("'coords' must be a list of 3-vectors", lineno)
    if len(coords) != len(types):
        raise SchemaError(f"{len(coords)} coordinates for {len(types)} residues", lineno)
    if len(types) == 0:
        raise SchemaError("empty structure", lineno)
    coords = np.array(coords, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(coords)):
        raise SchemaError("non-finite coordinate", lineno)
    labels = obj.get("labels")
    if labels is not None:
        if not isinstance(labels, list) or not all(v in (0, 1) and not isinstance(v, float) for v in labels):
            raise SchemaError("'labels' must be a list of 0/1", lineno)
    split = obj.get("split", "train")
    if split not in ("train", "valid", "test"):
        raise SchemaError(f"bad split {split!r}", lineno)
    structure = ProteinStructure(str(obj["id"]), types, coords)
    return DatasetRecord(structure, None if labels is None else np.array(labels), split)


def read_jsonl_dataset(path, num_terms=None):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON ({exc.msg})", lineno) from None
            rec = _record_from_json(obj, lineno)
            if num_terms is not None and rec.labels is not None and len(rec.labels) != num_terms:
                raise SchemaError(f"expected {num_terms} labels, got {len(rec.labels)}", lineno)
            records.append(rec)
    return records


def record_to_json(rec):
    s = rec.structure
    obj = {"id": s.id, "residue_types": s.residue_types.tolist(), "coords": s.coords.tolist()}
    if rec.labels is not None:
        obj["labels"] = rec.labels.astype(int).tolist()
    if rec.split != "train":
        obj["split"] = rec.split
    # json uses repr() for floats: shortest string that round-trips exactly
    return json.dumps(obj, separators=(",", ":"))


def write_jsonl_dataset(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(record_to_json(rec) + "\n")


# ---------------------------------------------------------------- binary tensors

MAGIC = b"GEARNETK"
FORMAT_VERSION = 1


def dump_tensors(tensors):
    """Serialize ``{name: array}`` into the checkpoint container (bytes)."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
    for name, value in tensors.items():
        # asarray, not ascontiguousarray: the latter turns rank 0 into rank 1
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        out.write(struct.pack("<I", len(raw)))
        out.write(raw)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(arr.tobytes(order="C"))
    return out.getvalue()


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def parse_tensors(buf):
    r = _Reader(buf)
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise BadMagic("not a gearnet tensor file")
    r.take(len(MAGIC))
    version, count = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"format version {version}, expected {FORMAT_VERSION}")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q")
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        values = np.frombuffer(r.take(8 * size), dtype="<f8").astype(np.float64)
        tensors[name] = values.reshape(dims)
    if r.pos != len(buf):
        raise MalformedRecord(f"{len(buf) - r.pos} trailing bytes after last tensor")
    return tensors


def save_tensors(path, tensors):
    with open(path, "wb") as fh:
        fh.write(dump_tensors(tensors))


def load_tensors(path):
    with open(path, "rb") as fh:
        return parse_tensors(fh.read())


def save_checkpoint(params, path):
    save_tensors(path, params.state_dict())


def load_checkpoint(path):
    from .nn import ParameterStore
    return ParameterStore.from_state_dict(load_tensors(path))
