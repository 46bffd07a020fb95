"""Scalar geometry on alpha-carbon coordinates.

All functions accept either single 3-vectors or stacked ``(..., 3)`` arrays;
the vectorized ``*s`` variants are what graph construction and the
self-prediction samplers use.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, OutOfDomain

EPS = 1e-8
_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class AngleBinning:
    num_bins: int = 8

    def __post_init__(self):
        if self.num_bins < 1:
            raise ValueError("num_bins must be >= 1")

    @property
    def width(self):
        return np.pi / self.num_bins


def distance(a, b):
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return np.sqrt(np.sum(d * d, axis=-1))


def _vector_angles(u, v):
    """Angle between ``u`` and ``v`` as ``atan2(|u x v|, u . v)``.

    Same value as the arccos of the clamped cosine, but accurate to a few
    ulps near 0 and pi, where arccos loses about 1e-8 rad to one ulp of
    the cosine.
    """
    nu = np.sqrt(np.sum(u * u, axis=-1))
    nv = np.sqrt(np.sum(v * v, axis=-1))
    ok = (nu > EPS) & (nv > EPS)
    c = np.cross(u, v)
    theta = np.arctan2(np.sqrt(np.sum(c * c, axis=-1)), np.sum(u * v, axis=-1))
    return np.where(ok, theta, np.nan), ok


def angles_at(xi, xj, xk):
    """Interior angles at ``xj``; returns ``(theta, ok)`` with ``ok`` false
    where either leg is shorter than ``EPS`` (theta is NaN there)."""
    xj = np.asarray(xj, dtype=np.float64)
    return _vector_angles(np.asarray(xi, dtype=np.float64) - xj,
                          np.asarray(xk, dtype=np.float64) - xj)


def angle_at(i, j, k):
    """Angle at vertex ``j`` between ``i - j`` and ``k - j``, in [0, pi]."""
    theta, ok = angles_at(i, j, k)
    if not np.all(ok):
        raise DegenerateGeometry("angle leg shorter than 1e-8 A")
    return theta if np.ndim(theta) else float(theta)


def dihedrals(xi, xj, xk, xt):
    """Unsigned dihedrals ``(theta, ok)``: the angle between the plane
    normals ``b1 x b2`` and ``b2 x b3``."""
    xi, xj, xk, xt = (np.asarray(p, dtype=np.float64) for p in (xi, xj, xk, xt))
    b1, b2, b3 = xj - xi, xk - xj, xt - xk
    return _vector_angles(np.cross(b1, b2), np.cross(b2, b3))


def dihedral(i, j, k, t):
    theta, ok = dihedrals(i, j, k, t)
    if not np.all(ok):
        raise DegenerateGeometry("collinear points in dihedral")
    return theta if np.ndim(theta) else float(theta)


def angle_bins(theta, num_bins=8):
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(~(theta >= 0.0)) or np.any(theta > np.pi + _DOMAIN_SLACK):
        raise OutOfDomain("angle outside [0, pi]")
    idx = np.floor(theta / (np.pi / num_bins)).astype(np.int64)
    return np.minimum(idx, num_bins - 1)


def angle_bin(theta, binning=AngleBinning()):
    num_bins = binning.num_bins if isinstance(binning, AngleBinning) else int(binning)
    return int(angle_bins(theta, num_bins))


def quaternion_to_rotation(q):
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def random_se3(rng, translation_scale=10.0):
    """Uniform random rotation (normalized Gaussian quaternion) and a
    Gaussian translation."""
    rotation = quaternion_to_rotation(rng.normal(size=4))
    translation = rng.normal(scale=translation_scale, size=3)
    return rotation, translation


def apply_se3(coords, rotation, translation):
    return np.asarray(coords, dtype=np.float64) @ rotation.T + translation
