"""Surface point sampling: face-area-weighted (FAS) and farthest point (FPS).

Binary point-cloud layout (little-endian)::

    uint32  count
    count x float32[6]   x y z nx ny nz

The text layout is one ``x y z nx ny nz`` record per line at full float64 precision.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import MeshError, TriangleMesh, face_areas


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "points", p)
        if self.normals is not None:
            n = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(p):
                raise ValueError("points and normals must have the same length")
            object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)

    def take(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], None if self.normals is None else self.normals[idx])


def _check_samplable(mesh: TriangleMesh) -> np.ndarray:
    areas = face_areas(mesh)
    total = areas.sum()
    if not total > 0:
        raise MeshError("mesh has zero surface area")
    return areas


def sample_fas(mesh: TriangleMesh, n: int, seed: int = 0) -> PointCloud:
    """``n`` points by area-weighted face choice and uniform barycentric coordinates.

    Zero-area faces get zero weight. Normals are the (winding) face normals.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = _check_samplable(mesh)
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    face = np.searchsorted(cdf, rng.random(n), side="right")
    # side="right" never lands on a zero-area face: its cdf equals its predecessor's
    face = np.minimum(face, len(areas) - 1)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    tri = mesh.triangles()[face]
    pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
    normals = mesh.face_normals()[face]
    return PointCloud(pts, normals)


def fps_indices(points: np.ndarray, n: int) -> np.ndarray:
    """Greedy farthest point selection over ``points``.

    Starts from the point farthest from the centroid; every next pick maximizes
    the squared distance to the selected set. ``np.argmax`` breaks ties by the
    lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    if not 1 <= n <= len(points):
        raise ValueError("need 1 <= n <= len(points)")
    centroid = points.mean(axis=0)
    d0 = ((points - centroid) ** 2).sum(axis=1)
    sel = np.empty(n, dtype=np.int64)
    sel[0] = int(np.argmax(d0))
    # per-axis columns and scratch buffers; same (dx^2 + dy^2) + dz^2 order as the row sum
    cols = [np.ascontiguousarray(points[:, a]) for a in range(3)]
    tmp = np.empty(len(points))
    acc = np.empty(len(points))
    mind = np.full(len(points), np.inf)
    i = sel[0]
    for k in range(n):
        if k:
            i = int(np.argmax(mind))
            sel[k] = i
        p = points[i]
        np.subtract(cols[0], p[0], out=acc)
        np.multiply(acc, acc, out=acc)
        for a in (1, 2):
            np.subtract(cols[a], p[a], out=tmp)
            np.multiply(tmp, tmp, out=tmp)
            np.add(acc, tmp, out=acc)
        np.minimum(mind, acc, out=mind)
    return sel


def sample_fps(mesh: TriangleMesh, n: int, seed: int = 0, pool: int | None = None) -> PointCloud:
    """FPS of ``n`` points from a FAS pool of ``pool`` points (default ``8 * n``)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    pool = 8 * n if pool is None else pool
    if pool < n:
        raise ValueError("pool must be >= n")
    cloud = sample_fas(mesh, pool, seed)
    return cloud.take(fps_indices(cloud.points, n))


def sample(mesh: TriangleMesh, n: int, seed: int = 0, sampler: str = "fps") -> PointCloud:
    if sampler == "fps":
        return sample_fps(mesh, n, seed)
    if sampler == "fas":
        return sample_fas(mesh, n, seed)
    raise ValueError(f"unknown sampler {sampler!r}")


# -- serialization ---------------------------------------------------------

def _records(cloud: PointCloud) -> np.ndarray:
    normals = cloud.normals if cloud.normals is not None else np.zeros_like(cloud.points)
    return np.hstack([cloud.points, normals]).astype("<f4")


def save_pointcloud(cloud: PointCloud, path) -> None:
    path = Path(path)
    if path.suffix in (".txt", ".xyz"):
        normals = cloud.normals if cloud.normals is not None else np.zeros_like(cloud.points)
        np.savetxt(path, np.hstack([cloud.points, normals]), fmt="%.17g")
    else:
        rec = _records(cloud)
        path.write_bytes(struct.pack("<I", len(rec)) + rec.tobytes())


def load_pointcloud(path) -> PointCloud:
    path = Path(path)
    if path.suffix in (".txt", ".xyz"):
        rec = np.loadtxt(path, dtype=np.float64, ndmin=2)
    else:
        data = path.read_bytes()
        (count,) = struct.unpack_from("<I", data, 0)
        rec = np.frombuffer(data, dtype="<f4", count=count * 6, offset=4).reshape(count, 6).astype(np.float64)
    return PointCloud(rec[:, :3], rec[:, 3:6])
