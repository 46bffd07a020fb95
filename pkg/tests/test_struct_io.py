import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gearnet.errors import (BadMagic, EmptyStructure, MalformedRecord, SchemaError,
                            TruncatedFile, VersionMismatch)
from gearnet.nn import ParameterStore
from gearnet.struct_io import (MAGIC, DatasetRecord, ProteinStructure, decode_sequence,
                               dump_tensors, encode_sequence, load_checkpoint, parse_pdb,
                               parse_tensors, read_jsonl_dataset, record_to_json,
                               save_checkpoint, write_jsonl_dataset)


def atom(serial, name, resname, chain, resseq, x, y, z, altloc=" ", icode=" ", record="ATOM  "):
    return (f"{record}{serial:5d} {name:<4s}{altloc}{resname:>3s} {chain}{resseq:4d}{icode}   "
            f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           C")


# ---------------------------------------------------------------- PDB

def test_single_ca_line():
    line = "ATOM      1  CA  ALA A   1      11.104  13.207   2.100  1.00  0.00           C"
    s = parse_pdb(line.encode())
    assert s.n == 1
    assert s.residue_types.tolist() == [0]
    assert s.coords.tolist() == [[11.104, 13.207, 2.100]]


def test_non_ca_atoms_ignored():
    text = "\n".join([
        atom(1, " N", "ALA", "A", 1, 0.0, 0.0, 0.0),
        atom(2, " CA", "ALA", "A", 1, 1.0, 2.0, 3.0),
        atom(3, " CB", "ALA", "A", 1, 4.0, 5.0, 6.0),
    ])
    s = parse_pdb(text)
    assert s.n == 1
    assert s.coords.tolist() == [[1.0, 2.0, 3.0]]


def test_residue_codes_and_unknown():
    text = "\n".join([
        atom(1, " CA", "ALA", "A", 1, 0, 0, 0),
        atom(2, " CA", "GLY", "A", 2, 3.8, 0, 0),
        atom(3, " CA", "XXX", "A", 3, 7.6, 0, 0),
    ])
    assert parse_pdb(text).residue_types.tolist() == [0, 5, 20]


def test_first_altloc_and_first_model_only():
    text = "\n".join([
        "MODEL        1",
        atom(1, " CA", "LYS", "A", 1, 1.0, 1.0, 1.0, altloc="A"),
        atom(2, " CA", "LYS", "A", 1, 9.0, 9.0, 9.0, altloc="B"),
        atom(3, " CA", "TRP", "A", 2, 2.0, 2.0, 2.0),
        "ENDMDL",
        "MODEL        2",
        atom(4, " CA", "TRP", "A", 3, 5.0, 5.0, 5.0),
        "ENDMDL",
    ])
    s = parse_pdb(text)
    assert s.n == 2
    assert s.coords.tolist() == [[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]]
    assert decode_sequence(s.residue_types) == "KW"


def test_residue_ordering_by_chain_number_and_insertion():
    text = "\n".join([
        atom(1, " CA", "GLY", "B", 1, 9, 0, 0),
        atom(2, " CA", "ALA", "A", 10, 2, 0, 0),
        atom(3, " CA", "CYS", "A", 2, 0, 0, 0),
        atom(4, " CA", "ASP", "A", 2, 1, 0, 0, icode="A"),
    ])
    s = parse_pdb(text)
    assert decode_sequence(s.residue_types) == "CDAG"


def test_hetatm_and_other_records_ignored():
    lines = [
        "HEADER    TEST",
        atom(1, " CA", "ALA", "A", 1, 0, 0, 0),
        atom(2, " CA", "HOH", "A", 2, 5, 5, 5, record="HETATM"),
        "REMARK   2 nothing",
        atom(3, " CA", "GLY", "A", 3, 3.8, 0, 0),
    ]
    s = parse_pdb("\n".join(lines))
    assert s.n == 2
    # permuting non-ATOM lines does not change the result
    shuffled = [lines[3], lines[1], lines[0], lines[2], lines[4]]
    assert parse_pdb("\n".join(shuffled)) == s


def test_bad_coordinate_raises_malformed():
    line = atom(1, " CA", "ALA", "A", 1, 0, 0, 0)
    bad = line[:30] + "   abc.d" + line[38:]
    with pytest.raises(MalformedRecord):
        parse_pdb(bad)


def test_short_atom_line_raises_malformed():
    with pytest.raises(MalformedRecord):
        parse_pdb("ATOM      1  CA  ALA A   1      11.104")


def test_no_ca_raises_empty():
    with pytest.raises(EmptyStructure):
        parse_pdb(atom(1, " CB", "ALA", "A", 1, 0, 0, 0))
    with pytest.raises(EmptyStructure):
        parse_pdb(b"")


def test_structure_invariants():
    with pytest.raises(ValueError):
        ProteinStructure("x", [0, 1], [[0, 0, 0]])
    with pytest.raises(ValueError):
        ProteinStructure("x", [0], [[0, np.nan, 0]])
    with pytest.raises(ValueError):
        ProteinStructure("x", [21], [[0, 0, 0]])


# ---------------------------------------------------------------- JSONL

def test_empty_file_gives_empty_list(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("")
    assert read_jsonl_dataset(path) == []


def test_one_record(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text(json.dumps({"id": "p", "sequence": "AG", "coords": [[0, 0, 0], [3.8, 0, 0]]}) + "\n")
    records = read_jsonl_dataset(path)
    assert len(records) == 1
    assert records[0].structure.n == 2
    assert records[0].structure.residue_types.tolist() == [0, 5]
    assert records[0].labels is None


@pytest.mark.parametrize("obj, lineno", [
    ({"id": "p", "sequence": "AGG", "coords": [[0, 0, 0], [1, 0, 0]]}, 2),
    ({"id": "p", "sequence": "A", "coords": [[0, 0]]}, 2),
    ({"id": "p", "coords": [[0, 0, 0]]}, 2),
    ({"id": "p", "sequence": "A", "residue_types": [0], "coords": [[0, 0, 0]]}, 2),
    ({"id": "p", "sequence": "A", "coords": [[0, 0, 0]], "extra": 1}, 2),
    ({"id": "p", "sequence": "A", "coords": [[0, 0, 0]], "labels": [0, 2]}, 2),
    ({"id": "p", "residue_types": [25], "coords": [[0, 0, 0]]}, 2),
    ({"id": "p", "sequence": "A", "coords": [[0, 0, 0]], "split": "dev"}, 2),
])
def test_schema_errors_carry_line_numbers(tmp_path, obj, lineno):
    path = tmp_path / "d.jsonl"
    good = json.dumps({"id": "ok", "sequence": "A", "coords": [[0, 0, 0]]})
    path.write_text(good + "\n" + json.dumps(obj) + "\n")
    with pytest.raises(SchemaError) as exc:
        read_jsonl_dataset(path)
    assert exc.value.line == lineno


def test_invalid_json_and_label_count(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(SchemaError):
        read_jsonl_dataset(path)
    path.write_text(json.dumps({"id": "p", "sequence": "A", "coords": [[0, 0, 0]], "labels": [1, 0]}) + "\n")
    with pytest.raises(SchemaError):
        read_jsonl_dataset(path, num_terms=3)
    assert len(read_jsonl_dataset(path, num_terms=2)) == 1


def test_blank_lines_skipped(tmp_path):
    path = tmp_path / "d.jsonl"
    rec = json.dumps({"id": "p", "sequence": "A", "coords": [[0, 0, 0]]})
    path.write_text("\n" + rec + "\n\n" + rec + "\n")
    assert len(read_jsonl_dataset(path)) == 2


def _dataset(rng, count=5):
    out = []
    for k in range(count):
        n = int(rng.integers(1, 12))
        s = ProteinStructure(f"p{k}", rng.integers(0, 21, n), rng.normal(scale=20, size=(n, 3)))
        labels = rng.integers(0, 2, 4) if k % 2 == 0 else None
        out.append(DatasetRecord(s, labels, ["train", "valid", "test"][k % 3]))
    return out


def test_jsonl_round_trip_exact(tmp_path, rng):
    records = _dataset(rng)
    path = tmp_path / "d.jsonl"
    write_jsonl_dataset(path, records)
    again = read_jsonl_dataset(path)
    assert again == records
    # writing again gives the same bytes
    path2 = tmp_path / "e.jsonl"
    write_jsonl_dataset(path2, again)
    assert path.read_bytes() == path2.read_bytes()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20),
                          st.tuples(*[st.floats(-1e4, 1e4, allow_nan=False)] * 3)),
                min_size=1, max_size=8))
def test_record_json_round_trip_property(residues):
    types = [t for t, _ in residues]
    coords = [list(c) for _, c in residues]
    rec = DatasetRecord(ProteinStructure("h", types, coords))
    obj = json.loads(record_to_json(rec))
    assert np.array_equal(np.array(obj["coords"], dtype=float), rec.structure.coords)
    assert obj["residue_types"] == types


def test_encode_sequence():
    assert encode_sequence("ACDEFGHIKLMNPQRSTVWYX").tolist() == list(range(21))


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip_bit_exact(tmp_path, rng):
    store = ParameterStore()
    store.add("a.W", rng.normal(size=(3, 4)))
    store.add("b", rng.normal(size=(5,)))
    store.add("c.bn.mean", rng.normal(size=(2,)))
    store.add("scalar", np.array(np.pi))
    path = tmp_path / "ck.bin"
    save_checkpoint(store, path)
    loaded = load_checkpoint(path)
    assert set(loaded.state_dict()) == set(store.state_dict())
    for name, value in store.state_dict().items():
        assert loaded[name].shape == value.shape
        assert loaded[name].tobytes() == value.tobytes()


def test_checkpoint_layout():
    buf = dump_tensors({"w": np.array([[1.0, 2.0]])})
    assert buf[:8] == b"GEARNETK"
    version, count = struct.unpack("<II", buf[8:16])
    assert (version, count) == (1, 1)
    (name_len,) = struct.unpack("<I", buf[16:20])
    assert buf[20:20 + name_len] == b"w"
    pos = 20 + name_len
    (rank,) = struct.unpack("<I", buf[pos:pos + 4])
    dims = struct.unpack("<2Q", buf[pos + 4:pos + 20])
    values = struct.unpack("<2d", buf[pos + 20:])
    assert rank == 2 and dims == (1, 2) and values == (1.0, 2.0)


def test_bad_magic(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"XXXXXXXX" + dump_tensors({})[8:])
    with pytest.raises(BadMagic):
        load_checkpoint(path)


def test_version_mismatch():
    buf = bytearray(dump_tensors({"w": np.ones(2)}))
    buf[8:12] = struct.pack("<I", 99)
    with pytest.raises(VersionMismatch):
        parse_tensors(bytes(buf))


def test_truncated_after_header():
    buf = dump_tensors({"w": np.ones((3, 3))})
    with pytest.raises(TruncatedFile):
        parse_tensors(buf[:16])
    with pytest.raises(TruncatedFile):
        parse_tensors(buf[:-1])
    with pytest.raises(TruncatedFile):
        parse_tensors(MAGIC + b"\x01\x00")


def test_trailing_bytes_rejected():
    with pytest.raises(MalformedRecord):
        parse_tensors(dump_tensors({"w": np.ones(1)}) + b"\x00")


shapes = st.lists(st.integers(0, 4), min_size=0, max_size=3).map(tuple)


@settings(max_examples=60, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=6), shapes, max_size=4), st.integers(0, 2**31))
def test_tensor_container_round_trip_property(layout, seed):
    g = np.random.default_rng(seed)
    tensors = {name: g.normal(size=shape) * 10.0 ** g.integers(-300, 300) for name, shape in layout.items()}
    back = parse_tensors(dump_tensors(tensors))
    assert list(back) == list(tensors)
    for name, value in tensors.items():
        assert back[name].shape == value.shape
        assert back[name].tobytes() == np.asarray(value, dtype=np.float64).tobytes()
