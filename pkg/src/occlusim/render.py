"""Deterministic z-buffer rasterizer and camera rigs.

Conventions: pixel ``(row, col)`` has its center at ``(col + 0.5, row + 0.5)`` in
image coordinates; camera space is x right, y up, z forward (depth > 0).
Normals are flat world-space face normals taken from the winding order.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import SimilarityTransform, TriangleMesh

NEAR_PLANE = 1e-3


class CameraError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    vertical_fov: float = 60.0
    resolution: tuple[int, int] = (256, 256)  # (width, height)

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(3)
        tgt = np.array(self.look_at, dtype=np.float64).reshape(3)
        up = np.array(self.up, dtype=np.float64).reshape(3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "look_at", tgt)
        w, h = (int(x) for x in self.resolution)
        object.__setattr__(self, "resolution", (w, h))
        object.__setattr__(self, "vertical_fov", float(self.vertical_fov))
        if np.array_equal(pos, tgt):
            raise CameraError("camera position equals look_at")
        if not 0.0 < self.vertical_fov < 180.0:
            raise CameraError("vertical_fov must be in (0, 180)")
        if w < 1 or h < 1:
            raise CameraError("resolution must be at least 1x1")
        nu = np.linalg.norm(up)
        if not nu > 0:
            raise CameraError("up vector must be nonzero")
        up = up / nu
        fwd = (tgt - pos) / np.linalg.norm(tgt - pos)
        if np.linalg.norm(np.cross(fwd, up)) < 1e-9:
            raise CameraError("up vector parallel to viewing direction")
        object.__setattr__(self, "up", up)

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]

    @property
    def focal_px(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.vertical_fov) / 2.0)

    def basis(self) -> np.ndarray:
        """Rows: right, true up, forward."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        return np.stack([right, up, fwd])

    @property
    def forward(self) -> np.ndarray:
        return self.basis()[2]

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts, dtype=np.float64) - self.position) @ self.basis().T

    def with_resolution(self, width: int, height: int | None = None) -> "Camera":
        return Camera(self.position, self.look_at, self.up, self.vertical_fov, (width, height or width))

    def to_dict(self) -> dict:
        return {
            "position": self.position.tolist(),
            "look_at": self.look_at.tolist(),
            "up": self.up.tolist(),
            "vertical_fov": self.vertical_fov,
            "resolution": list(self.resolution),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["position"], d["look_at"], d.get("up", (0.0, 1.0, 0.0)), d.get("vertical_fov", 60.0), tuple(d["resolution"]))


def camera_on_sphere(center, distance: float, azimuth_deg: float, elevation_deg: float, **kw) -> Camera:
    """Camera at the given azimuth (from +Z toward +X) and elevation, aimed at ``center``."""
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    d = np.array([math.cos(el) * math.sin(az), math.sin(el), math.cos(el) * math.cos(az)])
    center = np.asarray(center, dtype=np.float64)
    return Camera(center + distance * d, center, _up_for(d), **kw)


def _up_for(direction: np.ndarray) -> np.ndarray:
    d = direction / np.linalg.norm(direction)
    if abs(d[1]) > 1.0 - 1e-6:
        return np.array([0.0, 0.0, 1.0])
    return np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class CameraRig:
    cameras: tuple
    rig_id: str

    def __len__(self) -> int:
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]

    @classmethod
    def from_cameras(cls, cameras) -> "CameraRig":
        if isinstance(cameras, CameraRig):
            return cameras
        cams = tuple(cameras)
        blob = json.dumps([c.to_dict() for c in cams], sort_keys=True).encode()
        return cls(cams, "rig-" + hashlib.sha1(blob).hexdigest()[:16])


def shape_multiview_cameras(count: int = 12, elevation: float = 15.0, distance: float = 1.5,
                            vertical_fov: float = 60.0, resolution: int = 224) -> list[Camera]:
    """``count`` cameras evenly spaced in azimuth on a ring, all aimed at the origin."""
    if count < 1:
        raise ValueError("count must be >= 1")
    return [
        camera_on_sphere((0.0, 0.0, 0.0), distance, 360.0 * k / count, elevation,
                         vertical_fov=vertical_fov, resolution=(resolution, resolution))
        for k in range(count)
    ]


_PHI = (1.0 + math.sqrt(5.0)) / 2.0


def dodecahedron_vertices() -> np.ndarray:
    """The 20 vertices of a regular dodecahedron on the unit sphere."""
    v = [[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]
    a, b = 1.0 / _PHI, _PHI
    for s1 in (-1, 1):
        for s2 in (-1, 1):
            v.append([0.0, s1 * a, s2 * b])
            v.append([s1 * a, s2 * b, 0.0])
            v.append([s1 * b, 0.0, s2 * a])
    v = np.array(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def dodecahedron_cameras(num_dodecahedra: int = 10, seed: int = 0, distance: float = 2.0,
                         vertical_fov: float = 60.0, resolution: int = 256) -> list[Camera]:
    """20 cameras per randomly rotated dodecahedron, aimed at the origin."""
    if num_dodecahedra < 1:
        raise ValueError("num_dodecahedra must be >= 1")
    rng = np.random.default_rng(seed)
    base = dodecahedron_vertices()
    cams = []
    for _ in range(num_dodecahedra):
        rot = random_rotation(rng)
        for d in base @ rot.T:
            cams.append(Camera(distance * d, np.zeros(3), _up_for(d), vertical_fov, (resolution, resolution)))
    return cams


def lfd_rig(num_dodecahedra: int = 10, seed: int = 0, distance: float = 2.0, resolution: int = 256) -> CameraRig:
    cams = dodecahedron_cameras(num_dodecahedra, seed, distance, resolution=resolution)
    return CameraRig(tuple(cams), f"dodeca{num_dodecahedra}-seed{seed}-d{distance:g}-r{resolution}")


# -- rasterization ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RenderOutputs:
    mask: np.ndarray          # (H, W) bool
    depth: np.ndarray         # (H, W) float64, 0 = background
    normal_map: np.ndarray    # (H, W, 3) float64, 0 = background
    instance_map: np.ndarray  # (H, W) int32, 0 = background

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Clip one camera-space triangle against z = near; returns 0-2 triangles."""
    out = []
    pts = list(tri)
    for i in range(3):
        a, b = pts[i], pts[(i + 1) % 3]
        ina, inb = a[2] > near, b[2] > near
        if ina:
            out.append(a)
        if ina != inb:
            t = (near - a[2]) / (b[2] - a[2])
            p = a + t * (b - a)
            p[2] = near
            out.append(p)
    if len(out) < 3:
        return []
    return [np.array([out[0], out[k], out[k + 1]]) for k in range(1, len(out) - 1)]


def expansion_window(camera: Camera, factor: int) -> tuple[int, int, int, int]:
    """Pixel window of a canvas ``factor`` times larger, centered on the camera frame."""
    w, h = camera.resolution
    if (factor - 1) * w % 2 or (factor - 1) * h % 2:
        raise ValueError("expanded canvas must pad by a whole number of pixels")
    px, py = (factor - 1) * w // 2, (factor - 1) * h // 2
    return (-px, -py, w + px, h + py)


def rasterize(instances, camera: Camera, window: tuple[int, int, int, int] | None = None,
              near: float = NEAR_PLANE) -> RenderOutputs:
    """Render ``(mesh, transform, instance_id)`` triples with a z-buffer.

    ``window = (x0, y0, x1, y1)`` selects a pixel range in the camera's native
    pixel grid; it may extend beyond the frame (used for intact masks on an
    expanded canvas). Pixels inside the frame are computed identically
    regardless of the window.
    """
    if not isinstance(camera, Camera):
        raise CameraError("invalid camera")
    w, h = camera.resolution
    x0, y0, x1, y1 = window if window is not None else (0, 0, w, h)
    H, W = y1 - y0, x1 - x0
    zbuf = np.full((H, W), np.inf)
    ibuf = np.zeros((H, W), dtype=np.int32)
    fbuf = np.full((H, W), -1, dtype=np.int64)

    items = sorted(instances, key=lambda it: int(it[2]))
    ids = [int(it[2]) for it in items]
    if any(i <= 0 for i in ids) or len(set(ids)) != len(ids):
        raise ValueError("instance ids must be positive and unique")

    f = camera.focal_px
    cx, cy = w / 2.0, h / 2.0
    normals_by_id = {}
    for mesh, transform, iid in items:
        iid = int(iid)
        verts = transform.apply_points(mesh.vertices) if transform is not None else mesh.vertices
        tri_world = verts[mesh.faces]
        cross = np.cross(tri_world[:, 1] - tri_world[:, 0], tri_world[:, 2] - tri_world[:, 0])
        nrm = np.linalg.norm(cross, axis=1, keepdims=True)
        normals_by_id[iid] = np.where(nrm > 0, cross / np.where(nrm > 0, nrm, 1.0), 0.0)
        tri_cam = camera.world_to_camera(verts)[mesh.faces]
        zs = tri_cam[:, :, 2]
        for fi in range(len(tri_cam)):
            zf = zs[fi]
            if zf.max() <= near:
                continue
            if zf.min() > near:
                pieces = (tri_cam[fi],)
            else:
                pieces = _clip_near(tri_cam[fi], near)
            for t in pieces:
                _raster_triangle(t, fi, iid, f, cx, cy, x0, y0, x1, y1, zbuf, ibuf, fbuf)

    mask = ibuf > 0
    depth = np.where(mask, zbuf, 0.0)
    normal_map = np.zeros((H, W, 3))
    for iid, fn in normals_by_id.items():
        sel = ibuf == iid
        if sel.any():
            normal_map[sel] = fn[fbuf[sel]]
    return RenderOutputs(mask, depth, normal_map, ibuf)


def _raster_triangle(t, fi, iid, f, cx, cy, x0, y0, x1, y1, zbuf, ibuf, fbuf):
    z = t[:, 2]
    sx = cx + f * t[:, 0] / z
    sy = cy - f * t[:, 1] / z
    c0 = max(x0, math.ceil(sx.min() - 0.5))
    c1 = min(x1 - 1, math.floor(sx.max() - 0.5))
    r0 = max(y0, math.ceil(sy.min() - 0.5))
    r1 = min(y1 - 1, math.floor(sy.max() - 0.5))
    if c0 > c1 or r0 > r1:
        return
    area = (sx[1] - sx[0]) * (sy[2] - sy[0]) - (sy[1] - sy[0]) * (sx[2] - sx[0])
    if area == 0:
        return
    px = np.arange(c0, c1 + 1, dtype=np.float64)[None, :] + 0.5
    py = np.arange(r0, r1 + 1, dtype=np.float64)[:, None] + 0.5
    e0 = (sx[2] - sx[1]) * (py - sy[1]) - (sy[2] - sy[1]) * (px - sx[1])
    e1 = (sx[0] - sx[2]) * (py - sy[2]) - (sy[0] - sy[2]) * (px - sx[2])
    e2 = (sx[1] - sx[0]) * (py - sy[0]) - (sy[1] - sy[0]) * (px - sx[0])
    if area > 0:
        inside = (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
    else:
        inside = (e0 <= 0) & (e1 <= 0) & (e2 <= 0)
    if not inside.any():
        return
    inv_z = (e0 / z[0] + e1 / z[1] + e2 / z[2]) / area
    d = 1.0 / inv_z
    rs, cs = slice(r0 - y0, r1 - y0 + 1), slice(c0 - x0, c1 - x0 + 1)
    win = inside & (d < zbuf[rs, cs])
    if win.any():
        zbuf[rs, cs][win] = d[win]
        ibuf[rs, cs][win] = iid
        fbuf[rs, cs][win] = fi


def shade(outputs: RenderOutputs, camera: Camera) -> np.ndarray:
    """Lambertian headlight shading in [0, 1]: ``max(0, n . v)`` with ``v`` toward the camera; white background."""
    v = -camera.forward
    inten = np.clip(outputs.normal_map @ v, 0.0, None)
    return np.where(outputs.mask, inten, 1.0)


def render_grayscale(mesh: TriangleMesh, transform: SimilarityTransform | None, camera: Camera) -> np.ndarray:
    return shade(rasterize([(mesh, transform, 1)], camera), camera)


def render_mask(mesh: TriangleMesh, transform: SimilarityTransform | None, camera: Camera,
                window=None) -> np.ndarray:
    return rasterize([(mesh, transform, 1)], camera, window).mask
