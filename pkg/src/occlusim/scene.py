"""Multi-object occlusion scenes: layout, cameras, rendering, occlusion bookkeeping and splits.

Per view a scene emits 13 images: scene-level grayscale, mask, depth, normal
and instance maps, plus a grayscale render and a visible mask for each of the
four objects. That makes 156 images per 12-view scene.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .mesh import ShapeDatabase, SimilarityTransform, TriangleMesh, yaw_matrix
from .render import Camera, camera_on_sphere, expansion_window, rasterize, shade
from .view_metrics import occlusion_rate

DEFAULT_CATEGORIES = ("chair", "bed", "table", "sofa")


class PlacementError(RuntimeError):
    pass


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Placement:
    shape_id: str
    yaw: float
    position: tuple[float, float, float]
    anchor: tuple[float, float, float]  # mesh bbox (center x, min y, center z)

    def transform(self) -> SimilarityTransform:
        rot = yaw_matrix(self.yaw)
        return SimilarityTransform(1.0, rot, np.asarray(self.position) - rot @ np.asarray(self.anchor))


def placement_for(mesh: TriangleMesh, shape_id: str, yaw: float, position) -> Placement:
    """Place ``mesh`` so its footprint center sits at ``position`` (x, z) and its base on the floor."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    anchor = ((lo[0] + hi[0]) / 2.0, lo[1], (lo[2] + hi[2]) / 2.0)
    return Placement(shape_id, float(yaw), tuple(float(x) for x in position), tuple(float(a) for a in anchor))


def footprint(mesh: TriangleMesh, placement: Placement) -> np.ndarray:
    """Top-down bounding rectangle ``[xmin, zmin, xmax, zmax]`` of the placed mesh."""
    pts = placement.transform().apply_points(mesh.vertices)
    return np.array([pts[:, 0].min(), pts[:, 2].min(), pts[:, 0].max(), pts[:, 2].max()])


def rects_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Positive-area overlap of two ``[xmin, zmin, xmax, zmax]`` rectangles."""
    return bool(a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3])


@dataclass
class SceneLayout:
    scene_id: str
    placed: list[Placement]
    bounds_min: np.ndarray
    bounds_max: np.ndarray
    footprints: list = field(default_factory=list)

    @property
    def center(self) -> np.ndarray:
        return (self.bounds_min + self.bounds_max) / 2.0

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.bounds_max - self.bounds_min))

    def to_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "placements": [asdict(p) for p in self.placed],
            "bounds_min": self.bounds_min.tolist(),
            "bounds_max": self.bounds_max.tolist(),
            "footprints": [np.asarray(f).tolist() for f in self.footprints],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneLayout":
        placed = [Placement(p["shape_id"], p["yaw"], tuple(p["position"]), tuple(p["anchor"])) for p in d["placements"]]
        return cls(d["scene_id"], placed, np.array(d["bounds_min"]), np.array(d["bounds_max"]),
                   [np.array(f) for f in d.get("footprints", [])])


def generate_layout(shapes, seed: int, scene_id: str = "scene", step: float = 0.05,
                    max_steps: int = 10_000) -> SceneLayout:
    """Iteratively place ``shapes`` (ShapeRecords) without top-down bbox overlap.

    Each shape gets a uniform yaw and a random horizontal direction ``v``. It
    starts at the mean position of the placed shapes (the origin for the first)
    pushed out along ``v`` by the sum of the placed shapes' short sides, then moves
    further in ``step`` increments until its footprint is clear.
    """
    rng = np.random.default_rng(seed)
    placed: list[Placement] = []
    rects: list[np.ndarray] = []
    short_sum = 0.0
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for shape in shapes:
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        ang = rng.uniform(0.0, 2.0 * math.pi)
        v = np.array([math.cos(ang), 0.0, math.sin(ang)])
        if placed:
            p0 = np.mean([p.position for p in placed], axis=0)
        else:
            p0 = np.zeros(3)
        for n in range(max_steps + 1):
            pos = (short_sum + step * n) * v + p0
            pos[1] = 0.0
            pl = placement_for(shape.mesh, shape.shape_id, yaw, pos)
            rect = footprint(shape.mesh, pl)
            if not any(rects_intersect(rect, r) for r in rects):
                break
        else:
            raise PlacementError(f"no free position for {shape.shape_id!r} within {max_steps} steps")
        placed.append(pl)
        rects.append(rect)
        short_sum += shape.short_side
        pts = pl.transform().apply_points(shape.mesh.vertices)
        lo = np.minimum(lo, pts.min(axis=0))
        hi = np.maximum(hi, pts.max(axis=0))
    if not placed:
        raise PlacementError("no shapes to place")
    return SceneLayout(scene_id, placed, lo, hi, rects)


def sample_scene_cameras(layout: SceneLayout, seed: int, count: int = 12, elevation_range=(5.0, 25.0),
                         radius_factor: float = 0.7, vertical_fov: float = 60.0, resolution: int = 1024) -> list[Camera]:
    """Azimuths every ``360 / count`` degrees, elevations uniform in ``elevation_range``.

    Cameras aim at the scene bbox center from ``radius_factor`` times the bbox diagonal.
    """
    if not layout.placed:
        raise ValueError("empty layout")
    rng = np.random.default_rng(seed)
    el = rng.uniform(elevation_range[0], elevation_range[1], size=count)
    r = radius_factor * layout.diagonal
    return [
        camera_on_sphere(layout.center, r, 360.0 * k / count, float(el[k]),
                         vertical_fov=vertical_fov, resolution=(resolution, resolution))
        for k in range(count)
    ]


@dataclass
class ObjectView:
    instance_id: int
    shape_id: str
    visible_mask: np.ndarray
    complete_mask: np.ndarray   # unoccluded, clipped to the frame
    gray: np.ndarray            # object rendered alone
    intact_pixels: int
    visible_pixels: int
    occlusion_rate: float       # 1.0 when invisible
    invisible: bool


@dataclass
class ViewRender:
    view_id: int
    camera: Camera
    outputs: object
    gray: np.ndarray
    objects: list[ObjectView]


def render_view(layout: SceneLayout, camera: Camera, meshes: dict, expansion: int = 3, view_id: int = 0) -> ViewRender:
    instances = [(meshes[p.shape_id], p.transform(), i + 1) for i, p in enumerate(layout.placed)]
    out = rasterize(instances, camera)
    w, h = camera.resolution
    win = expansion_window(camera, expansion)
    cy, cx = -win[1], -win[0]
    objects = []
    for mesh, tr, iid in instances:
        alone = rasterize([(mesh, tr, iid)], camera, win)
        visible = out.instance_map == iid
        intact = int(np.count_nonzero(alone.mask))
        vis = int(np.count_nonzero(visible))
        if intact == 0 or vis == 0:
            rate, invisible = 1.0, True
        else:
            rate, invisible = occlusion_rate(visible, alone.mask, expansion), False
        crop = (slice(cy, cy + h), slice(cx, cx + w))
        complete = alone.mask[crop]
        gray = np.where(complete, np.clip(alone.normal_map[crop] @ -camera.forward, 0.0, None), 1.0)
        objects.append(ObjectView(iid, layout.placed[iid - 1].shape_id, visible, complete, gray,
                                  intact, vis, rate, invisible))
    return ViewRender(view_id, camera, out, shade(out, camera), objects)


def render_scene(layout: SceneLayout, cameras, shape_db, expansion: int = 3) -> list[ViewRender]:
    meshes = {p.shape_id: _mesh(shape_db, p.shape_id) for p in layout.placed}
    return [render_view(layout, cam, meshes, expansion, k) for k, cam in enumerate(cameras)]


def _mesh(shape_db, shape_id):
    if isinstance(shape_db, ShapeDatabase):
        return shape_db.mesh(shape_id)
    return shape_db[shape_id].mesh if hasattr(shape_db[shape_id], "mesh") else shape_db[shape_id]


# -- dataset ---------------------------------------------------------------

@dataclass
class SceneConfig:
    categories: tuple = DEFAULT_CATEGORIES
    views: int = 12
    resolution: int = 1024
    elevation_range: tuple = (5.0, 25.0)
    radius_factor: float = 0.7
    vertical_fov: float = 60.0
    expansion: int = 3
    step: float = 0.05
    max_steps: int = 10_000
    holdout_fraction: float = 0.1
    split_ratios: tuple = (8, 1, 1)
    write_images: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        known = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def scene_seed(master_seed: int, index: int) -> int:
    """Per-scene seed depending only on (master seed, scene index)."""
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


@dataclass
class QueryRecord:
    query_id: str
    scene_id: str
    view_id: int
    instance_id: int
    category: str
    gt_shape_id: str
    occlusion_rate: float
    files: dict = field(default_factory=dict)
    split: str = ""
    seen: str = ""
    pose: dict | None = None
    camera: dict | None = None

    @property
    def occluded(self) -> bool:
        return self.occlusion_rate > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "QueryRecord":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def choose_scene_shapes(shape_db: ShapeDatabase, categories, rng: np.random.Generator) -> list:
    picks = []
    for cat in categories:
        ids = shape_db.ids(cat)
        if not ids:
            raise DatasetError(f"no shapes of category {cat!r}")
        picks.append(shape_db.get(ids[int(rng.integers(len(ids)))]))
    order = rng.permutation(len(picks))
    return [picks[i] for i in order]


def scene_layout(shape_db: ShapeDatabase, index: int, master_seed: int, config: SceneConfig):
    """Shapes, layout and cameras of scene ``index``; depends only on (master seed, index, config)."""
    rng = np.random.default_rng(scene_seed(master_seed, index))
    shapes = choose_scene_shapes(shape_db, config.categories, rng)
    layout = generate_layout(shapes, int(rng.integers(2**63)), f"scene_{index:05d}", config.step, config.max_steps)
    cameras = sample_scene_cameras(layout, int(rng.integers(2**63)), config.views, config.elevation_range,
                                   config.radius_factor, config.vertical_fov, config.resolution)
    return shapes, layout, cameras


def build_scene(shape_db: ShapeDatabase, index: int, master_seed: int, config: SceneConfig, out_dir=None):
    """Generate, render and (optionally) write one scene. Returns (layout, cameras, records, invisible count)."""
    shapes, layout, cameras = scene_layout(shape_db, index, master_seed, config)
    scene_id = layout.scene_id
    views = render_scene(layout, cameras, shape_db, config.expansion)
    records, invisible = [], 0
    sdir = None
    if out_dir is not None:
        sdir = Path(out_dir) / "scenes" / scene_id
        sdir.mkdir(parents=True, exist_ok=True)
        (sdir / "layout.json").write_text(json.dumps(
            {**layout.to_dict(), "cameras": [c.to_dict() for c in cameras]}, indent=1, sort_keys=True) + "\n",
            encoding="utf-8")
    cats = {s.shape_id: s.category for s in shapes}
    for vr in views:
        prefix = f"view_{vr.view_id:02d}"
        if sdir is not None and config.write_images:
            imageio.save_gray(vr.gray, sdir / f"{prefix}_gray.png")
            imageio.save_mask(vr.outputs.mask, sdir / f"{prefix}_mask.png")
            imageio.save_depth(vr.outputs.depth, sdir / f"{prefix}_depth.png")
            imageio.save_normals(vr.outputs.normal_map, sdir / f"{prefix}_normal.png")
            imageio.save_instance(vr.outputs.instance_map, sdir / f"{prefix}_instance.png")
        for ob in vr.objects:
            opre = f"{prefix}_obj_{ob.instance_id}"
            if sdir is not None and config.write_images:
                imageio.save_gray(ob.gray, sdir / f"{opre}_gray.png")
                imageio.save_mask(ob.visible_mask, sdir / f"{opre}_mask.png")
            if ob.invisible:
                invisible += 1
                continue
            pl = layout.placed[ob.instance_id - 1]
            rel = f"scenes/{scene_id}"
            records.append(QueryRecord(
                query_id=f"{scene_id}/v{vr.view_id:02d}/i{ob.instance_id}",
                scene_id=scene_id, view_id=vr.view_id, instance_id=ob.instance_id,
                category=cats[ob.shape_id], gt_shape_id=ob.shape_id,
                occlusion_rate=ob.occlusion_rate,
                files={"image": f"{rel}/{prefix}_gray.png", "mask": f"{rel}/{opre}_mask.png",
                       "object_image": f"{rel}/{opre}_gray.png", "instance": f"{rel}/{prefix}_instance.png"},
                pose={"yaw": pl.yaw, "position": list(pl.position)},
                camera=vr.camera.to_dict(),
            ))
    return layout, cameras, records, invisible


def _build_scene_job(args):
    db_root, entries, index, master_seed, cfg, out_dir = args
    db = ShapeDatabase(db_root, entries)
    _, _, records, invisible = build_scene(db, index, master_seed, SceneConfig.from_dict(cfg), out_dir)
    return [r.to_dict() for r in records], invisible


def assign_splits(records: list[QueryRecord], scene_ids: list[str], master_seed: int,
                  holdout_fraction: float = 0.1, ratios=(8, 1, 1)) -> dict:
    """Scene-level train/val/test split plus a held-out shape set; mutates ``records``.

    Held-out shapes lose their train queries. A query is tagged ``seen`` when
    its GT shape appears in some remaining train query, ``unseen`` otherwise.
    Returns manifest fields.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), 0x5B117]))
    order = [scene_ids[i] for i in rng.permutation(len(scene_ids))]
    n = len(order)
    tot = float(sum(ratios))
    n_train = int(round(n * ratios[0] / tot))
    n_val = int(round(n * ratios[1] / tot))
    split_of = {}
    for k, sid in enumerate(order):
        split_of[sid] = "train" if k < n_train else ("val" if k < n_train + n_val else "test")
    shapes = sorted({r.gt_shape_id for r in records})
    k = int(round(holdout_fraction * len(shapes)))
    if holdout_fraction > 0:
        k = max(k, 1)
        if k >= len(shapes):
            raise DatasetError(f"insufficient shapes for holdout: {len(shapes)} unique shapes")
    hold = sorted(shapes[i] for i in rng.permutation(len(shapes))[:k]) if k else []
    hold_set = set(hold)
    kept = []
    for r in records:
        r.split = split_of[r.scene_id]
        if r.split == "train" and r.gt_shape_id in hold_set:
            continue
        kept.append(r)
    train_shapes = {r.gt_shape_id for r in kept if r.split == "train"}
    for r in kept:
        r.seen = "seen" if r.gt_shape_id in train_shapes else "unseen"
    records[:] = kept
    counts = {s: {"Occ": 0, "NoOcc": 0} for s in ("train", "val", "test")}
    for r in kept:
        counts[r.split]["Occ" if r.occluded else "NoOcc"] += 1
    return {"scene_splits": dict(sorted(split_of.items())), "unseen_shapes": hold, "split_counts": counts}


def build_dataset(shape_db: ShapeDatabase, num_scenes: int, master_seed: int, config: SceneConfig | None = None,
                  out_dir=None, threads: int = 1) -> tuple[dict, list[QueryRecord]]:
    """Generate ``num_scenes`` scenes, render them and assemble manifest + query records.

    Output is independent of ``threads``: each scene depends only on its derived seed.
    """
    config = config or SceneConfig()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    jobs = [(str(shape_db.root), shape_db.entries, i, master_seed, config.to_dict(),
             None if out_dir is None else str(out_dir)) for i in range(num_scenes)]
    if threads > 1 and num_scenes > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_build_scene_job, jobs))
    else:
        results = [_build_scene_job(j) for j in jobs]
    records = [QueryRecord.from_dict(d) for recs, _ in results for d in recs]
    invisible = sum(inv for _, inv in results)
    scene_ids = [f"scene_{i:05d}" for i in range(num_scenes)]
    split_info = assign_splits(records, scene_ids, master_seed, config.holdout_fraction, config.split_ratios)
    manifest = {
        "master_seed": int(master_seed),
        "num_scenes": num_scenes,
        "categories": list(config.categories),
        "config": config.to_dict(),
        "invisible_instances": invisible,
        "renders_per_scene": config.views * (5 + 2 * len(config.categories)),
        **split_info,
    }
    if out_dir is not None:
        write_dataset(out_dir, manifest, records)
    return manifest, records


def write_dataset(out_dir, manifest: dict, records: list[QueryRecord]) -> None:
    out = Path(out_dir)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "queries.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def load_records(path) -> list[QueryRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(QueryRecord.from_dict(json.loads(line)))
    return out


def default_threads() -> int:
    env = os.environ.get("OCCLUSIM_THREADS")
    return int(env) if env else 1
