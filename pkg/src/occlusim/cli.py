"""``occlusim`` command line.

Every option may also come from ``--config FILE`` (a JSON object keyed by
option name); explicit flags win over the file, the file over built-in
defaults. The resolved configuration is written beside each output.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

DEFAULTS = {
    "common": {"seed": 0, "threads": None},
    "shapes": {"per_category": 10},
    "gen": {"scenes": 10, "resolution": 1024, "views": 12, "radius_factor": 0.7, "no_images": False},
    "render": {"azimuth": 30.0, "elevation": 15.0, "distance": 2.0, "resolution": 256, "fov": 60.0,
               "kind": "gray", "normalize": False},
    "lfd": {"dodecahedra": 10, "resolution": 256},
    "metric": {"points": 4000, "sampler": "fps", "voxel_resolution": 128, "threshold": 0.1, "bin_deg": 10.0},
    "eval": {"metrics": "cd,lfd,miou,vlfd", "topk": "1,5", "points": 4000, "sampler": "fps", "oracle": False},
    "stability": {"p": 0.9},
    "curve": {"bin_width": 0.1},
    "splits": {},
}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"occlusim: error: {message}\n")
        sys.exit(2)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values (flags take precedence)")
    p.add_argument("--seed", type=int, help="master random seed (default 0)")
    p.add_argument("--threads", type=int, help="worker processes (default: $OCCLUSIM_THREADS or 1)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="occlusim", description="Occlusion-aware single-view shape retrieval benchmark tools.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("shapes", help="write a procedural furniture shape database")
    p.add_argument("--out", required=True, help="output shape database directory")
    p.add_argument("--per-category", dest="per_category", type=int, help="shapes per category (default 10)")
    _common(p)

    p = sub.add_parser("gen", help="generate a multi-object occlusion scene dataset")
    p.add_argument("--shapes", required=True, help="shape database directory (with manifest.json)")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--scenes", type=int, help="number of scenes (default 10)")
    p.add_argument("--resolution", type=int, help="image side in pixels (default 1024)")
    p.add_argument("--views", type=int, help="views per scene (default 12)")
    p.add_argument("--radius-factor", dest="radius_factor", type=float,
                   help="camera distance as a multiple of the scene bbox diagonal (default 0.7)")
    p.add_argument("--no-images", dest="no_images", action="store_true", default=None,
                   help="write layouts and records only")
    _common(p)

    p = sub.add_parser("render", help="render one mesh from a camera on a sphere")
    p.add_argument("mesh", help="OBJ file")
    p.add_argument("--out", required=True, help="output PNG")
    p.add_argument("--kind", choices=["gray", "mask", "depth", "normal"], help="image type (default gray)")
    p.add_argument("--azimuth", type=float, help="degrees (default 30)")
    p.add_argument("--elevation", type=float, help="degrees (default 15)")
    p.add_argument("--distance", type=float, help="camera distance from the bbox center (default 2)")
    p.add_argument("--resolution", type=int, help="image side (default 256)")
    p.add_argument("--fov", type=float, help="vertical field of view in degrees (default 60)")
    p.add_argument("--normalize", action="store_true", default=None, help="normalize the mesh canonically first")
    _common(p)

    p = sub.add_parser("lfd", help="precompute light field descriptors for a shape database")
    p.add_argument("--shapes", required=True, help="shape database directory")
    p.add_argument("--out", required=True, help="descriptor store directory")
    p.add_argument("--dodecahedra", type=int, help="random dodecahedra in the rig (default 10)")
    p.add_argument("--resolution", type=int, help="silhouette side (default 256)")
    _common(p)

    p = sub.add_parser("metric", help="compute one metric between two inputs and print it")
    p.add_argument("name", choices=["cd", "nc", "f1", "lfd", "voxiou", "miou", "vlfd", "nl2", "niou"],
                   help="shape metrics take OBJ files; miou/vlfd take mask PNGs; nl2/niou take normal PNGs")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--points", type=int, help="points per cloud (default 4000)")
    p.add_argument("--sampler", choices=["fps", "fas"], help="point sampler (default fps)")
    p.add_argument("--threshold", type=float, help="F1 distance threshold (default 0.1)")
    p.add_argument("--voxel-resolution", dest="voxel_resolution", type=int, help="voxel grid side (default 128)")
    p.add_argument("--bin-deg", dest="bin_deg", type=float, help="normal histogram bin size (default 10)")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a retrieval run against a dataset")
    p.add_argument("--dataset", required=True, help="dataset directory from 'gen'")
    p.add_argument("--run", help="run JSON-lines file")
    p.add_argument("--oracle", action="store_true", default=None,
                   help="evaluate (and write) the ground-truth oracle run instead of --run")
    p.add_argument("--metrics", help="comma list of cd,lfd,miou,vlfd (default all)")
    p.add_argument("--topk", help="comma list of k values (default 1,5)")
    p.add_argument("--points", type=int, help="points per cloud for CD (default 4000)")
    p.add_argument("--sampler", choices=["fps", "fas"], help="point sampler for CD (default fps)")
    p.add_argument("--lpips", help="CSV of query_id,shape_id,lpips to join")
    p.add_argument("--out", help="report directory (default DATASET/reports)")
    _common(p)

    p = sub.add_parser("stability", help="ranking stability of point-cloud metrics over sampling configs")
    p.add_argument("--shapes", required=True, help="shape database directory")
    p.add_argument("--configs", required=True,
                   help='JSON {"base": {...}, "configs": [{"metric", "n_points", "sampler"}, ...]}')
    p.add_argument("--out", help="output JSON (default: print)")
    p.add_argument("--p", type=float, help="RBO persistence (default 0.9)")
    _common(p)

    p = sub.add_parser("curve", help="per-occlusion-bin metric means from a report CSV")
    p.add_argument("--report", required=True, help="per-query report CSV from 'eval'")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--bin-width", dest="bin_width", type=float, help="bin width (default 0.1)")
    _common(p)

    p = sub.add_parser("splits", help="print split / occlusion / seen counts of a dataset")
    p.add_argument("--dataset", required=True, help="dataset directory from 'gen'")
    _common(p)
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Flag > config file > default."""
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS.get(args.command, {}))
    if args.config:
        try:
            from_file = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(from_file, dict):
            raise CliError("config file must hold a JSON object")
        cfg.update({k.replace("-", "_"): v for k, v in from_file.items()})
    for k, v in vars(args).items():
        if v is not None and k != "config":
            cfg[k] = v
    if cfg.get("threads") is None:
        env = os.environ.get("OCCLUSIM_THREADS")
        try:
            cfg["threads"] = int(env) if env else 1
        except ValueError:
            raise CliError(f"OCCLUSIM_THREADS must be an integer, got {env!r}") from None
    if cfg["threads"] < 1:
        raise CliError("--threads must be >= 1")
    return cfg


def _persist(cfg: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    # thread count and output location never affect outputs, so they stay out of the persisted file
    keep = {k: v for k, v in cfg.items() if k not in ("threads", "config", "out")}
    path.write_text(json.dumps(keep, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise CliError(f"{what} not found: {p}")
    return p


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{what} not found: {p}")
    return p


def cmd_shapes(cfg: dict) -> None:
    from .furniture import make_shape_db
    db = make_shape_db(cfg["out"], cfg["per_category"], cfg["seed"])
    _persist(cfg, Path(cfg["out"]) / "config.json")
    print(f"{len(db)} shapes -> {cfg['out']}")


def cmd_gen(cfg: dict) -> None:
    from .mesh import ShapeDatabase
    from .scene import SceneConfig, build_dataset
    db = ShapeDatabase.open(_require_dir(cfg["shapes"], "shape database"))
    sc = SceneConfig(views=cfg["views"], resolution=cfg["resolution"], radius_factor=cfg["radius_factor"],
                     write_images=not cfg["no_images"])
    out = Path(cfg["out"])
    # the dataset carries its own copy of the shape database for evaluation
    _copy_shape_db(db, out / "shapes")
    manifest, records = build_dataset(db, cfg["scenes"], cfg["seed"], sc, out, cfg["threads"])
    _persist(cfg, out / "config.json")
    print(f"{cfg['scenes']} scenes, {len(records)} queries, {manifest['invisible_instances']} invisible -> {out}")


def _copy_shape_db(db, dest: Path) -> None:
    import shutil
    dest.mkdir(parents=True, exist_ok=True)
    for sid in db.ids():
        target = dest / db.entries[sid]["file"]
        target.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(db.path(sid), target)
    (dest / "manifest.json").write_text(json.dumps(db.entries, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_render(cfg: dict) -> None:
    from . import imageio
    from .mesh import bbox, load_obj, normalize_canonical
    from .render import camera_on_sphere, rasterize, shade
    mesh = load_obj(_require_file(cfg["mesh"], "mesh"))
    if cfg["normalize"]:
        mesh, _ = normalize_canonical(mesh)
    lo, hi = bbox(mesh)
    cam = camera_on_sphere((lo + hi) / 2.0, cfg["distance"], cfg["azimuth"], cfg["elevation"],
                           vertical_fov=cfg["fov"], resolution=(cfg["resolution"], cfg["resolution"]))
    out = rasterize([(mesh, None, 1)], cam)
    path = Path(cfg["out"])
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = cfg["kind"]
    if kind == "gray":
        imageio.save_gray(shade(out, cam), path)
    elif kind == "mask":
        imageio.save_mask(out.mask, path)
    elif kind == "depth":
        imageio.save_depth(out.depth, path)
    else:
        imageio.save_normals(out.normal_map, path)
    _persist(cfg, path.with_name(path.name + ".config.json"))
    print(path)


def _lfd_one(args):
    from .lfd import compute_lfd
    from .mesh import load_obj
    from .render import lfd_rig
    path, ndod, seed, res = args
    return compute_lfd(load_obj(path), lfd_rig(ndod, seed, resolution=res), res, seed)


def cmd_lfd(cfg: dict) -> None:
    from .eval import parallel_map
    from .lfd import DescriptorStore
    from .mesh import ShapeDatabase
    db = ShapeDatabase.open(_require_dir(cfg["shapes"], "shape database"))
    ids = db.ids()
    descs = parallel_map(_lfd_one, [(str(db.path(s)), cfg["dodecahedra"], cfg["seed"], cfg["resolution"])
                                    for s in ids], cfg["threads"])
    store = DescriptorStore(cfg["out"])
    info = {"dodecahedra": cfg["dodecahedra"], "seed": cfg["seed"], "resolution": cfg["resolution"]}
    for sid, d in zip(ids, descs):
        store.put(sid, d, info)
    store.flush()
    _persist(cfg, Path(cfg["out"]) / "config.json")
    print(f"{len(ids)} descriptors -> {cfg['out']}")


def cmd_metric(cfg: dict) -> None:
    name = cfg["name"]
    a, b = _require_file(cfg["a"], "input"), _require_file(cfg["b"], "input")
    if name in ("cd", "nc", "f1", "lfd", "voxiou"):
        from .mesh import load_obj, normalize_canonical
        ma, mb = load_obj(a), load_obj(b)
        if name == "lfd":
            from .lfd import compute_lfd, lfd_distance
            from .render import lfd_rig
            rig = lfd_rig(10, cfg["seed"])
            value = lfd_distance(compute_lfd(ma, rig, rig_seed=cfg["seed"]), compute_lfd(mb, rig, rig_seed=cfg["seed"]))
        elif name == "voxiou":
            from .voxel import voxel_iou, voxelize_solid
            r = cfg["voxel_resolution"]
            value = voxel_iou(voxelize_solid(normalize_canonical(ma)[0], r), voxelize_solid(normalize_canonical(mb)[0], r))
        else:
            from .recon import chamfer, f1_score, normal_consistency
            from .sampling import sample
            ca = sample(normalize_canonical(ma)[0], cfg["points"], cfg["seed"], cfg["sampler"])
            cb = sample(normalize_canonical(mb)[0], cfg["points"], cfg["seed"], cfg["sampler"])
            if name == "cd":
                value = chamfer(ca, cb)
            elif name == "nc":
                value = normal_consistency(ca, cb)
            else:
                value = f1_score(ca, cb, cfg["threshold"])
    else:
        from . import imageio
        from .view_metrics import mask_iou, normal_hist_iou, normal_l2
        if name in ("miou", "vlfd"):
            ia, ib = imageio.load_mask(a), imageio.load_mask(b)
            if name == "miou":
                value = mask_iou(ia, ib)
            else:
                from .lfd import vlfd_distance
                value = vlfd_distance(ia, ib)
        else:
            na, nb = imageio.load_normals(a), imageio.load_normals(b)
            ma_, mb_ = np.any(na != 0, axis=-1), np.any(nb != 0, axis=-1)
            if name == "nl2":
                value = normal_l2(na, nb, ma_ & mb_)
            else:
                value = normal_hist_iou(na, nb, ma_, mb_, cfg["bin_deg"])
    print(repr(float(value)))


def cmd_eval(cfg: dict) -> None:
    from .eval import EvalConfig, evaluate_run, load_lpips, load_run, oracle_run, save_run, write_report
    from .mesh import ShapeDatabase
    from .scene import load_records
    ds = _require_dir(cfg["dataset"], "dataset")
    db = ShapeDatabase.open(_require_dir(ds / "shapes", "dataset shape database"))
    records = load_records(_require_file(ds / "queries.jsonl", "query records"))
    ann = {r.query_id: r for r in records}
    out = Path(cfg.get("out") or ds / "reports")
    if cfg["oracle"]:
        run = oracle_run(ann, db)
        out.mkdir(parents=True, exist_ok=True)
        save_run(run, out / "oracle_run.jsonl")
        stem = "oracle"
    else:
        if not cfg.get("run"):
            raise CliError("eval needs --run or --oracle")
        run = load_run(_require_file(cfg["run"], "run"))
        stem = Path(cfg["run"]).stem
    metrics = tuple(m for m in cfg["metrics"].split(",") if m)
    topk = tuple(int(k) for k in str(cfg["topk"]).split(",") if k)
    ec = EvalConfig(metrics=metrics, topk=topk, n_points=cfg["points"], sampler=cfg["sampler"], seed=cfg["seed"])
    lpips = load_lpips(_require_file(cfg["lpips"], "LPIPS file")) if cfg.get("lpips") else None
    report = evaluate_run(run, ann, db, ec, lpips, cfg["threads"])
    csv_path, json_path = write_report(report, out, stem)
    _persist(cfg, out / f"{stem}.config.json")
    print(json.dumps(report.aggregates["all"]["all"], sort_keys=True))


def cmd_stability(cfg: dict) -> None:
    from .eval import sampling_stability_study
    from .mesh import ShapeDatabase
    db = ShapeDatabase.open(_require_dir(cfg["shapes"], "shape database"))
    spec = json.loads(_require_file(cfg["configs"], "configs").read_text(encoding="utf-8"))
    if "configs" not in spec:
        raise CliError("configs file needs a 'configs' list")
    configs = spec["configs"]
    base = spec.get("base", {"metric": "cd", "n_points": 10000, "sampler": "fps"})
    meshes = {s: db.mesh(s) for s in db.ids()}
    result = sampling_stability_study(meshes, configs, base, cfg["seed"], cfg["p"], cfg["threads"])
    text = json.dumps(result, indent=1, sort_keys=True) + "\n"
    if cfg.get("out"):
        Path(cfg["out"]).write_text(text, encoding="utf-8")
        _persist(cfg, Path(cfg["out"] + ".config.json"))
    else:
        sys.stdout.write(text)


def cmd_curve(cfg: dict) -> None:
    import csv
    from .eval import occlusion_curve, write_curve
    rows = []
    with open(_require_file(cfg["report"], "report"), newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            row = {"occlusion_rate": float(r["occlusion_rate"])}
            for k, v in r.items():
                if k[:1].isupper() or k.startswith("vLFD"):
                    row[k] = float(v) if v != "" else None
            rows.append(row)
    curve = occlusion_curve(rows, cfg["bin_width"])
    Path(cfg["out"]).parent.mkdir(parents=True, exist_ok=True)
    write_curve(curve, cfg["out"])
    _persist(cfg, Path(cfg["out"] + ".config.json"))
    print(cfg["out"])


def cmd_splits(cfg: dict) -> None:
    from .scene import load_records
    ds = _require_dir(cfg["dataset"], "dataset")
    manifest = json.loads(_require_file(ds / "manifest.json", "manifest").read_text(encoding="utf-8"))
    records = load_records(ds / "queries.jsonl")
    table = {}
    for r in records:
        t = table.setdefault(r.split, {"Occ": 0, "NoOcc": 0, "seen": 0, "unseen": 0})
        t["Occ" if r.occluded else "NoOcc"] += 1
        t[r.seen] += 1
    scenes = {}
    for s in manifest["scene_splits"].values():
        scenes[s] = scenes.get(s, 0) + 1
    print(json.dumps({"queries": table, "scenes": scenes, "unseen_shapes": manifest["unseen_shapes"]},
                     indent=1, sort_keys=True))


COMMANDS = {"shapes": cmd_shapes, "gen": cmd_gen, "render": cmd_render, "lfd": cmd_lfd, "metric": cmd_metric,
            "eval": cmd_eval, "stability": cmd_stability, "curve": cmd_curve, "splits": cmd_splits}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        COMMANDS[args.command](cfg)
    except (CliError, OSError, ValueError, KeyError, RuntimeError) as e:
        msg = str(e).replace("\n", " ")
        sys.stderr.write(f"occlusim: error: {type(e).__name__}: {msg}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
