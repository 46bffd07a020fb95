"""Synthetic alpha-carbon chains for tests, demos and sanity runs."""

import numpy as np

from .struct_io import DatasetRecord, ProteinStructure

CA_BOND = 3.8


def _place(a, b, c, bond, angle, torsion):
    """Next point ``d`` with |cd| = bond, angle(b, c, d) and dihedral(a, b, c, d)."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.cross(n, bc)
    d2 = bond * np.array([-np.cos(angle), np.sin(angle) * np.cos(torsion), np.sin(angle) * np.sin(torsion)])
    return c + d2[0] * bc + d2[1] * m + d2[2] * n


def random_chain(rng, n, bond=CA_BOND, angle_range=(1.5, 2.1), min_separation=4.0, max_tries=50):
    """Self-avoiding random CA trace with fixed bond length and random
    virtual bond / torsion angles."""
    if n <= 0:
        raise ValueError("n must be positive")
    pts = [np.zeros(3), np.array([bond, 0.0, 0.0])]
    theta = rng.uniform(*angle_range)
    pts.append(pts[1] + bond * np.array([-np.cos(theta), np.sin(theta), 0.0]))
    while len(pts) < n:
        for _ in range(max_tries):
            cand = _place(pts[-3], pts[-2], pts[-1], bond, rng.uniform(*angle_range),
                          rng.uniform(-np.pi, np.pi))
            prev = np.array(pts[:-2])
            if np.min(np.linalg.norm(prev - cand, axis=1)) >= min_separation:
                break
        pts.append(cand)
    return np.array(pts[:n])


def helix(n, radius=2.3, rise=1.5, turn=np.deg2rad(100.0)):
    t = np.arange(n)
    return np.stack([radius * np.cos(turn * t), radius * np.sin(turn * t), rise * t], axis=1)


def cyclic_sequence(n, start, step=1):
    """Residue types following a fixed cycle through the 20 amino acids."""
    return (start + step * np.arange(n)) % 20


def motif_sequence(rng, n, motif_range=(4, 8)):
    """A random motif of distinct residue types, tiled to length ``n``.

    Each residue is determined by its neighbors, and each protein gets its
    own small vocabulary, so masked-type prediction and view retrieval are
    both learnable from a handful of proteins.
    """
    length = int(rng.integers(motif_range[0], motif_range[1] + 1))
    motif = rng.choice(20, size=length, replace=False)
    return np.resize(motif, n)


def synthetic_structures(rng, count, n, n_jitter=0):
    """``count`` random chains of length ``n +- n_jitter`` with motif
    sequences (see :func:`motif_sequence`)."""
    out = []
    for p in range(count):
        length = n + (int(rng.integers(-n_jitter, n_jitter + 1)) if n_jitter else 0)
        coords = random_chain(rng, length)
        types = motif_sequence(rng, length)
        out.append(ProteinStructure(f"synth{p:03d}", types, coords))
    return out


def random_box_structure(rng, n, box=40.0, structure_id="box"):
    """Residues scattered uniformly in a cube (graph-construction tests)."""
    return ProteinStructure(structure_id, rng.integers(0, 21, size=n), rng.uniform(0.0, box, size=(n, 3)))


def synthetic_dataset(rng, count, n, num_terms, split_every=0):
    """Structures plus multi-label targets tied to residue composition."""
    records = []
    for k, s in enumerate(synthetic_structures(rng, count, n)):
        counts = np.bincount(s.residue_types, minlength=21)[:num_terms]
        labels = (counts > np.median(counts)).astype(np.uint8)
        if not labels.any():
            labels[int(np.argmax(counts))] = 1
        split = "valid" if split_every and (k + 1) % split_every == 0 else "train"
        records.append(DatasetRecord(s, labels, split))
    return records
