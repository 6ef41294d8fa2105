"""Solid voxelization on the canonical [-0.5, 0.5]^3 grid and voxel IoU.

Grid file layout (little-endian)::

    4s       magic b"OCVX"
    uint32   version (1)
    uint32   resolution R
    float64  origin x, y, z   (min corner)
    float64  cell size
    uint8    value of the first run (0/1)
    uint32   number of runs K
    K x uint32 run lengths over the C-order flattened (x, y, z) occupancy
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mesh import MeshError, TriangleMesh

_FACE_6 = ndimage.generate_binary_structure(3, 1)


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    occupancy: np.ndarray  # (R, R, R) bool indexed [x, y, z]
    origin: np.ndarray
    cell_size: float

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]

    @classmethod
    def empty(cls, resolution: int = 128, lo: float = -0.5, hi: float = 0.5) -> "VoxelGrid":
        return cls(np.zeros((resolution,) * 3, dtype=bool), np.full(3, lo, dtype=np.float64), (hi - lo) / resolution)

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.resolution) + 0.5) * self.cell_size

    def same_frame(self, other: "VoxelGrid") -> bool:
        return (self.resolution == other.resolution and np.array_equal(self.origin, other.origin)
                and self.cell_size == other.cell_size)


def _tri_box_overlap(v0, v1, v2, half: float) -> np.ndarray:
    """Separating-axis test of triangles against a cube of half-size ``half`` at the origin.

    ``v0, v1, v2`` are (K, 3) corners already relative to each cell center.
    Touching counts as overlap.
    """
    ok = np.ones(len(v0), dtype=bool)
    for ax in range(3):
        lo = np.minimum(np.minimum(v0[:, ax], v1[:, ax]), v2[:, ax])
        hi = np.maximum(np.maximum(v0[:, ax], v1[:, ax]), v2[:, ax])
        ok &= (lo <= half) & (hi >= -half)
    edges = (v1 - v0, v2 - v1, v0 - v2)
    n = np.cross(edges[0], edges[1])
    r = half * np.abs(n).sum(axis=1)
    ok &= np.abs((n * v0).sum(axis=1)) <= r
    for e in edges:
        for j in range(3):
            unit = np.zeros(3)
            unit[j] = 1.0
            a = np.cross(e, unit)
            p0 = (a * v0).sum(axis=1)
            p1 = (a * v1).sum(axis=1)
            p2 = (a * v2).sum(axis=1)
            r = half * np.abs(a).sum(axis=1)
            ok &= (np.minimum(np.minimum(p0, p1), p2) <= r) & (np.maximum(np.maximum(p0, p1), p2) >= -r)
    return ok


def voxelize_surface(mesh: TriangleMesh, resolution: int = 128) -> VoxelGrid:
    """Mark every cell that a triangle touches."""
    if mesh.n_faces == 0:
        raise MeshError("cannot voxelize an empty mesh")
    grid = VoxelGrid.empty(resolution)
    h = grid.cell_size
    occ = grid.occupancy
    tris = mesh.triangles()
    lo_idx = np.clip(np.floor((tris.min(axis=1) - grid.origin) / h).astype(np.int64), 0, resolution - 1)
    hi_idx = np.clip(np.floor((tris.max(axis=1) - grid.origin) / h).astype(np.int64), 0, resolution - 1)
    for t, lo, hi in zip(tris, lo_idx, hi_idx):
        # include the neighbouring layer: a triangle on a cell boundary touches both sides
        lo = np.maximum(lo - 1, 0)
        hi = np.minimum(hi + 1, resolution - 1)
        ii, jj, kk = np.meshgrid(*(np.arange(lo[a], hi[a] + 1) for a in range(3)), indexing="ij")
        idx = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
        centers = grid.origin + (idx + 0.5) * h
        hit = _tri_box_overlap(t[0] - centers, t[1] - centers, t[2] - centers, h / 2.0)
        sel = idx[hit]
        occ[sel[:, 0], sel[:, 1], sel[:, 2]] = True
    return grid


def exterior(occupancy: np.ndarray) -> np.ndarray:
    """Empty cells 6-connected to the grid boundary."""
    labels, _ = ndimage.label(~occupancy, structure=_FACE_6)
    border = np.unique(np.concatenate([
        labels[0].ravel(), labels[-1].ravel(), labels[:, 0].ravel(),
        labels[:, -1].ravel(), labels[:, :, 0].ravel(), labels[:, :, -1].ravel()]))
    border = border[border > 0]
    return np.isin(labels, border)


def _parity_fill(mesh: TriangleMesh, grid: VoxelGrid) -> np.ndarray:
    """Inside test by counting +z ray crossings below each cell center."""
    R, h, o = grid.resolution, grid.cell_size, grid.origin
    delta = np.zeros((R, R, R + 1), dtype=np.int32)
    xc, yc = grid.centers(0), grid.centers(1)
    for t in mesh.triangles():
        x, y, z = t[:, 0], t[:, 1], t[:, 2]
        area = (x[1] - x[0]) * (y[2] - y[0]) - (y[1] - y[0]) * (x[2] - x[0])
        if area == 0:
            continue
        i0, i1 = np.searchsorted(xc, x.min()), np.searchsorted(xc, x.max(), side="right")
        j0, j1 = np.searchsorted(yc, y.min()), np.searchsorted(yc, y.max(), side="right")
        if i0 >= i1 or j0 >= j1:
            continue
        px, py = np.meshgrid(xc[i0:i1], yc[j0:j1], indexing="ij")
        w0 = ((x[2] - x[1]) * (py - y[1]) - (y[2] - y[1]) * (px - x[1])) / area
        w1 = ((x[0] - x[2]) * (py - y[2]) - (y[0] - y[2]) * (px - x[2])) / area
        w2 = 1.0 - w0 - w1
        # half-open edge rule so a ray through a shared edge is counted once
        inside = (w0 > 0) & (w1 > 0) & (w2 > 0)
        inside |= ((w0 == 0) & (w1 > 0) & (w2 > 0)) | ((w1 == 0) & (w0 > 0) & (w2 > 0))
        if not inside.any():
            continue
        zi = w0 * z[0] + w1 * z[1] + w2 * z[2]
        k = np.clip(np.ceil((zi - o[2]) / h - 0.5).astype(np.int64), 0, R)
        ii, jj = np.nonzero(inside)
        np.add.at(delta, (ii + i0, jj + j0, k[ii, jj]), 1)
    return (np.cumsum(delta, axis=2)[:, :, :R] % 2).astype(bool)


def voxelize_solid(mesh: TriangleMesh, resolution: int = 128, method: str = "floodfill") -> VoxelGrid:
    """Solid occupancy: surface cells plus everything not reachable from outside.

    ``method="parity"`` instead fills cells whose center has an odd number of
    surface crossings below it along +z, then adds the surface cells.
    """
    surf = voxelize_surface(mesh, resolution)
    if method == "floodfill":
        occ = ~exterior(surf.occupancy)
    elif method == "parity":
        occ = surf.occupancy | _parity_fill(mesh, surf)
    else:
        raise ValueError(f"unknown method {method!r}")
    return VoxelGrid(occ, surf.origin, surf.cell_size)


def voxel_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    if not a.same_frame(b):
        raise ValueError("voxel grids differ in resolution or frame")
    union = np.count_nonzero(a.occupancy | b.occupancy)
    if union == 0:
        return 1.0
    return np.count_nonzero(a.occupancy & b.occupancy) / union


# -- file I/O --------------------------------------------------------------

_MAGIC = b"OCVX"


def rle_encode(flat: np.ndarray) -> tuple[int, np.ndarray]:
    flat = np.asarray(flat, dtype=bool).ravel()
    if flat.size == 0:
        return 0, np.zeros(0, dtype=np.uint32)
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    return int(flat[0]), np.diff(bounds).astype(np.uint32)


def rle_decode(first: int, runs: np.ndarray) -> np.ndarray:
    vals = (np.arange(len(runs)) + first) % 2
    return np.repeat(vals.astype(bool), runs)


def save_grid(grid: VoxelGrid, path) -> None:
    first, runs = rle_encode(grid.occupancy)
    head = _MAGIC + struct.pack("<II", 1, grid.resolution)
    head += struct.pack("<4d", *grid.origin.tolist(), grid.cell_size)
    head += struct.pack("<BI", first, len(runs))
    Path(path).write_bytes(head + runs.astype("<u4").tobytes())


def load_grid(path) -> VoxelGrid:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a voxel grid file")
    _, R = struct.unpack_from("<II", data, 4)
    ox, oy, oz, cell = struct.unpack_from("<4d", data, 12)
    first, k = struct.unpack_from("<BI", data, 44)
    runs = np.frombuffer(data, dtype="<u4", count=k, offset=49)
    occ = rle_decode(first, runs).reshape(R, R, R)
    return VoxelGrid(occ, np.array([ox, oy, oz]), cell)
