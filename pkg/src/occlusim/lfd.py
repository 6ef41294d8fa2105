"""Light field descriptors over binary silhouettes.

Each view contributes 35 Zernike magnitudes (region shape) and 10 normalized
Fourier magnitudes of the outer contour (boundary shape). A shape's LFD is the
stack of per-view features under a shared camera rig; two LFDs compare by the
mean per-view L1 distance, without any rotation search.

Descriptor file layout (little-endian)::

    4s      magic b"OCLF"
    uint32  version (1)
    uint32  n = len(rig_id utf-8), then n bytes rig_id
    int64   rig seed (-1 if unknown)
    uint32  view count V
    uint32  feature dim (45)
    V x 45 float32, per view zernike[35] then fourier[10]
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mesh import TriangleMesh, normalize_canonical
from .render import CameraRig, render_mask

ZERNIKE_ORDER = 10
N_FOURIER = 10
CONTOUR_SAMPLES = 128
MIN_CONTOUR = 12


class DescriptorError(ValueError):
    pass


def zernike_indices(order: int = ZERNIKE_ORDER) -> list[tuple[int, int]]:
    """(n, m) pairs with m >= 0 and n - m even, ascending; the constant (0, 0) term is omitted."""
    return [(n, m) for n in range(order + 1) for m in range(n % 2, n + 1, 2) if (n, m) != (0, 0)]


_ZIDX = zernike_indices()
N_ZERNIKE = len(_ZIDX)
DESCRIPTOR_DIM = N_ZERNIKE + N_FOURIER


def _radial_coeffs(n: int, m: int) -> list[tuple[int, float]]:
    """R_nm(rho) = sum c * rho^(m + 2j) as (j, c) pairs."""
    out = []
    for s in range((n - m) // 2 + 1):
        c = (-1) ** s * math.factorial(n - s) / (
            math.factorial(s) * math.factorial((n + m) // 2 - s) * math.factorial((n - m) // 2 - s))
        out.append(((n - m) // 2 - s, c))
    return out


_RADIAL = {nm: _radial_coeffs(*nm) for nm in _ZIDX}


def zernike_moments(mask: np.ndarray) -> np.ndarray:
    """|Z_nm| of the mask mapped onto the unit disk.

    The foreground centroid goes to the disk center and the largest
    centroid-to-pixel-center distance to radius 1. Each pixel contributes its
    area ``1 / r_max**2`` in disk units.
    """
    mask = np.asarray(mask, dtype=bool)
    rows, cols = np.nonzero(mask)
    if len(rows) == 0:
        raise DescriptorError("empty mask")
    x = cols - cols.mean()
    y = -(rows - rows.mean())
    r2 = x * x + y * y
    rmax = math.sqrt(r2.max()) or 1.0
    w = (x - 1j * y) / rmax        # rho * exp(-i theta)
    rho2 = r2 / (rmax * rmax)
    # sums[j][m] = sum(rho^(2j) * w^m)
    wpow = [np.ones_like(w)]
    for _ in range(ZERNIKE_ORDER):
        wpow.append(wpow[-1] * w)
    rpow = [np.ones_like(rho2)]
    for _ in range(ZERNIKE_ORDER // 2):
        rpow.append(rpow[-1] * rho2)
    cache: dict[tuple[int, int], complex] = {}
    out = np.empty(N_ZERNIKE)
    area = 1.0 / (rmax * rmax)
    for k, (n, m) in enumerate(_ZIDX):
        z = 0j
        for j, c in _RADIAL[(n, m)]:
            key = (j, m)
            if key not in cache:
                cache[key] = complex(np.sum(rpow[j] * wpow[m]))
            z += c * cache[key]
        out[k] = abs((n + 1) / math.pi * z * area)
    return out


# Moore neighbourhood, clockwise on screen (row axis pointing down), starting west.
_MOORE = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected foreground component; ties go to the first in raster order."""
    labels, count = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        raise DescriptorError("mask has no foreground component")
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def trace_contour(component: np.ndarray) -> np.ndarray:
    """Moore-neighbour trace of the outer boundary; returns (K, 2) (row, col) pixels."""
    comp = np.pad(np.asarray(component, dtype=bool), 1)
    rows, cols = np.nonzero(comp)
    if len(rows) == 0:
        raise DescriptorError("empty component")
    start = (int(rows[0]), int(cols[0]))  # raster order: topmost, then leftmost
    p, back = start, 0  # west of the start pixel is background
    seen: dict[tuple, int] = {}
    contour: list[tuple[int, int]] = []
    while True:
        state = (p, back)
        if state in seen:
            # the walk is periodic in (pixel, backtrack); keep exactly one period
            contour = contour[seen[state]:]
            break
        seen[state] = len(contour)
        contour.append(p)
        for k in range(8):
            d = (back + k) % 8
            q = (p[0] + _MOORE[d][0], p[1] + _MOORE[d][1])
            if comp[q]:
                break
        else:
            break  # isolated pixel
        # resume scanning at the background neighbour examined just before q
        prev = (back + k - 1) % 8
        b = (p[0] + _MOORE[prev][0], p[1] + _MOORE[prev][1])
        back = _MOORE.index((b[0] - q[0], b[1] - q[1]))
        p = q
    return np.array(contour, dtype=np.int64) - 1


def resample_closed(points: np.ndarray, count: int) -> np.ndarray:
    """``count`` points equally spaced by arc length along a closed polyline."""
    pts = np.asarray(points, dtype=np.float64)
    closed = np.vstack([pts, pts[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total == 0:
        raise DescriptorError("degenerate contour")
    t = np.arange(count) * (total / count)
    return np.stack([np.interp(t, s, closed[:, i]) for i in range(pts.shape[1])], axis=1)


def fourier_contour(mask: np.ndarray) -> np.ndarray:
    """|F_2..F_11| / |F_1| of the resampled outer contour of the largest component.

    The contour is oriented counter-clockwise in (col, row) coordinates so the
    fundamental sits at F_1 for any simple closed shape.
    """
    comp = largest_component(np.asarray(mask, dtype=bool))
    contour = trace_contour(comp)
    if len(contour) < MIN_CONTOUR:
        raise DescriptorError(f"contour has {len(contour)} pixels, need {MIN_CONTOUR}")
    x = contour[:, 1].astype(np.float64)
    y = contour[:, 0].astype(np.float64)
    signed_area = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    pts = np.stack([x, y], axis=1)
    if signed_area < 0:
        pts = pts[::-1]
    samples = resample_closed(pts, CONTOUR_SAMPLES)
    spec = np.fft.fft(samples[:, 0] + 1j * samples[:, 1])
    f1 = abs(spec[1])
    if f1 == 0:
        raise DescriptorError("contour has no fundamental")
    return np.abs(spec[2:2 + N_FOURIER]) / f1


def mask_descriptor(mask: np.ndarray, strict: bool = True) -> np.ndarray:
    """45-dim concatenation ``zernike || fourier`` for one silhouette.

    With ``strict=False`` an empty mask yields zeros, and a contour too short for
    Fourier analysis yields zeros in the Fourier part.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        if strict:
            raise DescriptorError("empty mask")
        return np.zeros(DESCRIPTOR_DIM)
    z = zernike_moments(mask)
    try:
        f = fourier_contour(mask)
    except DescriptorError:
        if strict:
            raise
        f = np.zeros(N_FOURIER)
    return np.concatenate([z, f])


def vlfd_distance(mask_a: np.ndarray, mask_b: np.ndarray, strict: bool = True) -> float:
    """Single-view LFD: L1 distance between the 45-dim descriptors of two masks."""
    return float(np.abs(mask_descriptor(mask_a, strict) - mask_descriptor(mask_b, strict)).sum())


@dataclass(frozen=True, eq=False)
class LightFieldDescriptor:
    features: np.ndarray  # (V, 45) float32
    rig_id: str
    rig_seed: int = -1

    def __post_init__(self):
        f = np.ascontiguousarray(self.features, dtype=np.float32).reshape(-1, DESCRIPTOR_DIM)
        if not np.all(np.isfinite(f)) or np.any(f < 0):
            raise DescriptorError("descriptor entries must be finite and non-negative")
        f.setflags(write=False)
        object.__setattr__(self, "features", f)

    @property
    def n_views(self) -> int:
        return len(self.features)

    @property
    def zernike(self) -> np.ndarray:
        return self.features[:, :N_ZERNIKE]

    @property
    def fourier(self) -> np.ndarray:
        return self.features[:, N_ZERNIKE:]


def compute_lfd(mesh: TriangleMesh, rig, resolution: int = 256, rig_seed: int = -1) -> LightFieldDescriptor:
    """Normalize ``mesh``, render one silhouette per rig camera and describe each view.

    Views with an empty silhouette are recorded as all-zero features.
    """
    rig = CameraRig.from_cameras(rig)
    canon, _ = normalize_canonical(mesh)
    feats = np.empty((len(rig), DESCRIPTOR_DIM))
    for i, cam in enumerate(rig):
        if cam.resolution != (resolution, resolution):
            cam = cam.with_resolution(resolution)
        feats[i] = mask_descriptor(render_mask(canon, None, cam), strict=False)
    return LightFieldDescriptor(feats, rig.rig_id, rig_seed)


def lfd_distance(a: LightFieldDescriptor, b: LightFieldDescriptor) -> float:
    """Mean over aligned views of the L1 distance between per-view features."""
    if a.rig_id != b.rig_id or a.n_views != b.n_views:
        raise DescriptorError(f"rig mismatch: {a.rig_id!r} vs {b.rig_id!r}")
    diff = np.abs(a.features.astype(np.float64) - b.features.astype(np.float64))
    return float(diff.sum(axis=1).mean())


# -- descriptor store ------------------------------------------------------

_MAGIC = b"OCLF"


def save_lfd(desc: LightFieldDescriptor, path) -> None:
    rid = desc.rig_id.encode("utf-8")
    header = _MAGIC + struct.pack("<II", 1, len(rid)) + rid
    header += struct.pack("<qII", desc.rig_seed, desc.n_views, DESCRIPTOR_DIM)
    Path(path).write_bytes(header + desc.features.astype("<f4").tobytes())


def load_lfd(path) -> LightFieldDescriptor:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise DescriptorError(f"{path}: not an LFD file")
    version, n = struct.unpack_from("<II", data, 4)
    if version != 1:
        raise DescriptorError(f"{path}: unsupported version {version}")
    off = 12
    rig_id = data[off:off + n].decode("utf-8")
    off += n
    seed, views, dim = struct.unpack_from("<qII", data, off)
    off += 16
    if dim != DESCRIPTOR_DIM:
        raise DescriptorError(f"{path}: feature dim {dim} != {DESCRIPTOR_DIM}")
    feats = np.frombuffer(data, dtype="<f4", count=views * dim, offset=off).reshape(views, dim)
    return LightFieldDescriptor(feats, rig_id, seed)


class DescriptorStore:
    """Directory of ``<shape_id>.lfd`` files plus ``index.json``."""

    INDEX = "index.json"

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        idx = self.root / self.INDEX
        self.index = json.loads(idx.read_text(encoding="utf-8")) if idx.is_file() else {"rig": None, "shapes": {}}

    def __contains__(self, shape_id) -> bool:
        return shape_id in self.index["shapes"]

    def put(self, shape_id: str, desc: LightFieldDescriptor, rig_info: dict | None = None) -> None:
        if self.index["rig"] is None:
            self.index["rig"] = {"rig_id": desc.rig_id, "seed": desc.rig_seed, **(rig_info or {})}
        elif self.index["rig"]["rig_id"] != desc.rig_id:
            raise DescriptorError("store already holds descriptors from a different rig")
        fname = f"{shape_id}.lfd"
        save_lfd(desc, self.root / fname)
        self.index["shapes"][shape_id] = fname

    def get(self, shape_id: str) -> LightFieldDescriptor:
        return load_lfd(self.root / self.index["shapes"][shape_id])

    def flush(self) -> None:
        (self.root / self.INDEX).write_text(json.dumps(self.index, indent=1, sort_keys=True) + "\n", encoding="utf-8")
