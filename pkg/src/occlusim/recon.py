"""Point-cloud reconstruction metrics: Chamfer distance, normal consistency, F1@t."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .sampling import PointCloud

BRUTE_FORCE_BELOW = 64


def _points(x) -> np.ndarray:
    pts = x.points if isinstance(x, PointCloud) else np.asarray(x, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    return pts


def nearest_brute(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """O(n*m) nearest neighbour: (index into dst, squared distance) per src point."""
    d2 = ((src[:, None, :] - dst[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(src)), idx]


def nearest(src: np.ndarray, dst: np.ndarray, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Nearest neighbour in ``dst`` for every ``src`` point: (index, squared distance).

    ``method`` is ``"auto"``, ``"kdtree"`` or ``"brute"``. Squared distances are
    recomputed from the returned indices so both paths agree to the last bit
    whenever they pick the same neighbour.
    """
    if method == "brute" or (method == "auto" and min(len(src), len(dst)) < BRUTE_FORCE_BELOW):
        return nearest_brute(src, dst)
    _, idx = cKDTree(dst).query(src, k=1)
    idx = np.asarray(idx, dtype=np.int64)
    return idx, ((src - dst[idx]) ** 2).sum(axis=1)


@dataclass(frozen=True)
class NearestPairing:
    p_to_q: np.ndarray
    p_dist2: np.ndarray
    q_to_p: np.ndarray
    q_dist2: np.ndarray

    @classmethod
    def build(cls, P, Q, method: str = "auto") -> "NearestPairing":
        p, q = _points(P), _points(Q)
        a, da = nearest(p, q, method)
        b, db = nearest(q, p, method)
        return cls(a, da, b, db)


def chamfer(P, Q, exponent: int = 2, method: str = "auto") -> float:
    """Symmetric Chamfer distance; per-pair cost is the Euclidean distance to ``exponent``."""
    if exponent not in (1, 2):
        raise ValueError("exponent must be 1 or 2")
    pair = NearestPairing.build(P, Q, method)
    if exponent == 2:
        a, b = pair.p_dist2, pair.q_dist2
    else:
        a, b = np.sqrt(pair.p_dist2), np.sqrt(pair.q_dist2)
    return 0.5 * (float(a.mean()) + float(b.mean()))


def normal_consistency(P: PointCloud, Q: PointCloud, absolute: bool = False, method: str = "auto") -> float:
    """Mean normal dot product over nearest-neighbour pairs, both directions.

    Signed by default; ``absolute=True`` takes ``|n_p . n_q|`` instead.
    """
    if P.normals is None or Q.normals is None:
        raise ValueError("normal consistency needs normals on both clouds")
    pair = NearestPairing.build(P, Q, method)
    a = (P.normals * Q.normals[pair.p_to_q]).sum(axis=1)
    b = (Q.normals * P.normals[pair.q_to_p]).sum(axis=1)
    if absolute:
        a, b = np.abs(a), np.abs(b)
    return 0.5 * (float(a.mean()) + float(b.mean()))


def f1_score(P, Q, t: float = 0.1, method: str = "auto") -> float:
    """F1 (0-100) of precision (P within ``t`` of Q) and completeness (Q within ``t`` of P)."""
    if not t > 0:
        raise ValueError("threshold t must be positive")
    pair = NearestPairing.build(P, Q, method)
    t2 = t * t
    precision = 100.0 * float(np.mean(pair.p_dist2 <= t2))
    recall = 100.0 * float(np.mean(pair.q_dist2 <= t2))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)
