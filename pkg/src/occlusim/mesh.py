"""Triangle meshes, OBJ ingestion, canonical normalization and similarity transforms."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class ObjParseError(MeshError):
    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangle geometry in meters, +Y up.

    ``vertices`` is (V, 3) float64, ``faces`` is (F, 3) int64. Arrays are made
    read-only on construction so meshes can be shared freely.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise MeshError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise MeshError("face with repeated vertex index")
        n = None
        if self.vertex_normals is not None:
            n = np.array(self.vertex_normals, dtype=np.float64).reshape(-1, 3)
            if len(n) != len(v):
                raise MeshError("vertex_normals length differs from vertices")
            norms = np.linalg.norm(n, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-6):
                raise MeshError("vertex normals must be unit length")
            n.setflags(write=False)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "vertex_normals", n)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_normals(self) -> np.ndarray:
        """Unit face normals from winding order; zero rows for degenerate faces."""
        tri = self.triangles()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        norm = np.linalg.norm(cross, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(norm > 0, cross / np.where(norm > 0, norm, 1.0), 0.0)
        return out


@dataclass(frozen=True)
class ShapeRecord:
    shape_id: str
    category: str
    mesh: TriangleMesh
    short_side: float = field(default=-1.0)

    def __post_init__(self):
        if not self.category:
            raise MeshError("category must be non-empty")
        if self.short_side <= 0:
            lo, hi = bbox(self.mesh)
            ext = hi - lo
            object.__setattr__(self, "short_side", float(min(ext[0], ext[2])))
        if self.short_side <= 0:
            raise MeshError(f"shape {self.shape_id!r} has zero horizontal extent")


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about +Y by ``yaw`` radians (right-handed)."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """x -> uniform_scale * R @ x + translation.

    ``rotation`` may be a yaw angle in radians or a full 3x3 matrix.
    """

    uniform_scale: float = 1.0
    rotation: float | np.ndarray = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.uniform_scale > 0:
            raise MeshError("uniform_scale must be positive")
        if np.ndim(self.rotation) == 0:
            rot = yaw_matrix(float(self.rotation))
        else:
            rot = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
            if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-9) or np.linalg.det(rot) < 0:
                raise MeshError("rotation must be orthonormal with det +1")
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        rot.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "uniform_scale", float(self.uniform_scale))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls()

    @property
    def matrix(self) -> np.ndarray:
        return self.rotation

    def is_identity(self, tol: float = 0.0) -> bool:
        return (
            abs(self.uniform_scale - 1.0) <= tol
            and np.all(np.abs(self.rotation - np.eye(3)) <= tol)
            and np.all(np.abs(self.translation) <= tol)
        )

    def apply_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        if self.is_identity():
            return pts.copy()
        return self.uniform_scale * (pts @ self.rotation.T) + self.translation

    def apply_directions(self, dirs: np.ndarray) -> np.ndarray:
        """Rotate directions and re-normalize; zero vectors stay zero."""
        dirs = np.asarray(dirs, dtype=np.float64)
        out = dirs @ self.rotation.T
        norm = np.linalg.norm(out, axis=-1, keepdims=True)
        return np.where(norm > 0, out / np.where(norm > 0, norm, 1.0), 0.0)

    def inverse(self) -> "SimilarityTransform":
        rt = self.rotation.T
        s = 1.0 / self.uniform_scale
        return SimilarityTransform(s, rt, -s * (rt @ self.translation))

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """self after other."""
        return SimilarityTransform(
            self.uniform_scale * other.uniform_scale,
            self.rotation @ other.rotation,
            self.uniform_scale * (self.rotation @ other.translation) + self.translation,
        )


def face_areas(mesh: TriangleMesh) -> np.ndarray:
    tri = mesh.triangles()
    return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)


def bbox(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    if mesh.n_vertices == 0:
        raise MeshError("bbox of empty mesh")
    return mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)


def apply_transform(mesh: TriangleMesh, t: SimilarityTransform) -> TriangleMesh:
    if t.is_identity():
        return mesh
    normals = None
    if mesh.vertex_normals is not None:
        normals = t.apply_directions(mesh.vertex_normals)
    return TriangleMesh(t.apply_points(mesh.vertices), mesh.faces, normals)


def normalize_canonical(mesh: TriangleMesh, scale_rule: str = "max_extent") -> tuple[TriangleMesh, SimilarityTransform]:
    """Center the bounding box at the origin and scale uniformly.

    ``scale_rule`` is ``"max_extent"`` (largest bbox edge becomes 1, the default),
    ``"diagonal"`` (bbox diagonal becomes 1) or ``"unit_sphere"`` (max vertex
    distance from the bbox center becomes 1).
    """
    if mesh.n_vertices == 0:
        raise MeshError("cannot normalize an empty mesh")
    lo, hi = bbox(mesh)
    center = (lo + hi) / 2.0
    ext = hi - lo
    if scale_rule == "max_extent":
        size = float(ext.max())
    elif scale_rule == "diagonal":
        size = float(np.linalg.norm(ext))
    elif scale_rule == "unit_sphere":
        size = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
    else:
        raise ValueError(f"unknown scale rule {scale_rule!r}")
    if not size > 0:
        raise MeshError("degenerate (zero-extent) bounding box")
    s = 1.0 / size
    t = SimilarityTransform(s, np.eye(3), -s * center)
    if t.is_identity():
        return mesh, t
    return apply_transform(mesh, t), t


# -- OBJ I/O ---------------------------------------------------------------

def _obj_index(token: str, count: int, path, lineno: int) -> int:
    try:
        idx = int(token)
    except ValueError:
        raise ObjParseError(path, lineno, f"malformed index {token!r}") from None
    if idx < 0:
        idx = count + idx
    else:
        idx -= 1
    if not 0 <= idx < count:
        raise ObjParseError(path, lineno, f"index {token} out of range ({count} available)")
    return idx


def load_obj(path) -> TriangleMesh:
    """Read an ASCII Wavefront OBJ; n-gons are fan-triangulated.

    Vertex normals are kept only when every vertex referenced by a face gets
    exactly one normal through ``v//vn`` or ``v/vt/vn`` references.
    """
    verts: list[list[float]] = []
    normals: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    vn_of_v: dict[int, int] = {}
    normals_ok = True
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ObjParseError(path, lineno, "malformed vertex") from None
                if len(verts[-1]) != 3:
                    raise ObjParseError(path, lineno, "vertex needs 3 coordinates")
            elif tag == "vn":
                try:
                    normals.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ObjParseError(path, lineno, "malformed normal") from None
            elif tag == "f":
                if len(parts) < 4:
                    raise ObjParseError(path, lineno, "face needs at least 3 vertices")
                idx = []
                for tok in parts[1:]:
                    fields = tok.split("/")
                    vi = _obj_index(fields[0], len(verts), path, lineno)
                    idx.append(vi)
                    if len(fields) == 3 and fields[2]:
                        ni = _obj_index(fields[2], len(normals), path, lineno)
                        if vn_of_v.setdefault(vi, ni) != ni:
                            normals_ok = False
                    else:
                        normals_ok = False
                for k in range(1, len(idx) - 1):
                    tri = (idx[0], idx[k], idx[k + 1])
                    if len(set(tri)) < 3:
                        raise ObjParseError(path, lineno, "face repeats a vertex")
                    faces.append(tri)
    if not verts or not faces:
        raise MeshError(f"{path}: empty geometry")
    vertex_normals = None
    if normals_ok and normals and len(vn_of_v) == len(verts):
        nv = np.array([normals[vn_of_v[i]] for i in range(len(verts))])
        nrm = np.linalg.norm(nv, axis=1, keepdims=True)
        if np.all(nrm > 0):
            vertex_normals = nv / nrm
    return TriangleMesh(np.array(verts), np.array(faces), vertex_normals)


def write_obj(mesh: TriangleMesh, path) -> None:
    """Write vertices with ``repr`` precision so that ``load_obj`` round-trips exactly."""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    if mesh.vertex_normals is not None:
        lines += [f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.vertex_normals.tolist()]
        lines += [f"f {a + 1}//{a + 1} {b + 1}//{b + 1} {c + 1}//{c + 1}" for a, b, c in mesh.faces.tolist()]
    else:
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- shape databases -------------------------------------------------------

MANIFEST_NAME = "manifest.json"


class ShapeDatabase:
    """A directory of OBJ files plus ``manifest.json``: ``{shape_id: {"file", "category"}}``.

    Meshes are loaded lazily and cached.
    """

    def __init__(self, root, entries: dict[str, dict]):
        self.root = Path(root)
        self.entries = {k: dict(v) for k, v in sorted(entries.items())}
        self._cache: dict[str, ShapeRecord] = {}

    @classmethod
    def open(cls, root) -> "ShapeDatabase":
        root = Path(root)
        manifest = root / MANIFEST_NAME
        if not manifest.is_file():
            raise FileNotFoundError(f"no {MANIFEST_NAME} in {root}")
        entries = json.loads(manifest.read_text(encoding="utf-8"))
        for sid, e in entries.items():
            if "file" not in e or "category" not in e:
                raise MeshError(f"manifest entry {sid!r} needs 'file' and 'category'")
        return cls(root, entries)

    def __contains__(self, shape_id) -> bool:
        return shape_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self, category: str | None = None) -> list[str]:
        return [k for k, e in self.entries.items() if category is None or e["category"] == category]

    def categories(self) -> list[str]:
        return sorted({e["category"] for e in self.entries.values()})

    def category(self, shape_id: str) -> str:
        try:
            return self.entries[shape_id]["category"]
        except KeyError:
            raise KeyError(f"unknown shape id {shape_id!r}") from None

    def path(self, shape_id: str) -> Path:
        return self.root / self.entries[shape_id]["file"]

    def get(self, shape_id: str) -> ShapeRecord:
        rec = self._cache.get(shape_id)
        if rec is None:
            if shape_id not in self.entries:
                raise KeyError(f"unknown shape id {shape_id!r}")
            p = self.path(shape_id)
            if not p.is_file():
                raise FileNotFoundError(f"missing shape file {p}")
            rec = ShapeRecord(shape_id, self.entries[shape_id]["category"], load_obj(p))
            self._cache[shape_id] = rec
        return rec

    def mesh(self, shape_id: str) -> TriangleMesh:
        return self.get(shape_id).mesh


def write_shape_db(root, shapes: list[ShapeRecord]) -> ShapeDatabase:
    root = Path(root)
    os.makedirs(root, exist_ok=True)
    entries = {}
    for s in sorted(shapes, key=lambda r: r.shape_id):
        fname = f"{s.shape_id}.obj"
        write_obj(s.mesh, root / fname)
        entries[s.shape_id] = {"file": fname, "category": s.category}
    (root / MANIFEST_NAME).write_text(json.dumps(entries, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return ShapeDatabase(root, entries)


# -- primitives ------------------------------------------------------------

_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # -z
        [4, 5, 6], [4, 6, 7],  # +z
        [0, 1, 5], [0, 5, 4],  # -y
        [3, 7, 6], [3, 6, 2],  # +y
        [0, 4, 7], [0, 7, 3],  # -x
        [1, 2, 6], [1, 6, 5],  # +x
    ]
)


def box(lo, hi) -> TriangleMesh:
    """Axis-aligned box with outward winding."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = np.array(
        [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
         [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]],
        dtype=np.float64,
    )
    return TriangleMesh(v, _BOX_FACES)


def quad(center, half_size: float, normal_axis: int = 2, facing: float = 1.0) -> TriangleMesh:
    """Axis-aligned square of side ``2*half_size`` whose normal is ``facing`` along ``normal_axis``."""
    c = np.asarray(center, dtype=np.float64)
    a, b = [ax for ax in range(3) if ax != normal_axis]
    corners = []
    for da, db in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        p = c.copy()
        p[a] += da * half_size
        p[b] += db * half_size
        corners.append(p)
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    m = TriangleMesh(np.array(corners), faces)
    n = m.face_normals()[0]
    if n[normal_axis] * facing < 0:
        m = TriangleMesh(m.vertices, faces[:, ::-1])
    return m


def uv_sphere(radius: float = 0.5, n_lat: int = 32, n_lon: int = 64, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Closed UV sphere with outward winding."""
    verts = [[0.0, radius, 0.0]]
    for i in range(1, n_lat):
        th = math.pi * i / n_lat
        for j in range(n_lon):
            ph = 2 * math.pi * j / n_lon
            verts.append([radius * math.sin(th) * math.cos(ph), radius * math.cos(th), radius * math.sin(th) * math.sin(ph)])
    verts.append([0.0, -radius, 0.0])
    south = len(verts) - 1
    faces = []

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    for j in range(n_lon):
        faces.append([0, ring(1, j + 1), ring(1, j)])
        faces.append([south, ring(n_lat - 1, j), ring(n_lat - 1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    return TriangleMesh(np.array(verts) + np.asarray(center, dtype=np.float64), np.array(faces))


def merge(meshes: list[TriangleMesh]) -> TriangleMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces))
