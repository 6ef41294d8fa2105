"""Retrieval-run evaluation: accuracy, top-k shape similarity, occlusion curves and ranking stability.

A retrieval run is JSON-lines ``{"query_id": ..., "ranked": [shape_id, ...]}``
(optionally ``"scores"``). Annotations are scene query records.

View-independent metrics compare canonically normalized shapes: CD on FPS
clouds (squared distances, unit max-extent scale) and LFD over the dodecahedron
rig. View-dependent metrics render the complete silhouette of each candidate
placed with the GT yaw and floor position under the GT camera.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .lfd import compute_lfd, lfd_distance, mask_descriptor
from .mesh import ShapeDatabase, normalize_canonical
from .recon import chamfer, f1_score, normal_consistency
from .render import Camera, lfd_rig, render_mask
from .sampling import PointCloud, sample
from .scene import QueryRecord, placement_for
from .view_metrics import mask_iou

VIEW_INDEPENDENT = ("cd", "lfd")
VIEW_DEPENDENT = ("miou", "vlfd")
METRICS = VIEW_INDEPENDENT + VIEW_DEPENDENT
COLUMN_NAMES = {"cd": "CD", "lfd": "LFD", "miou": "MIoU", "vlfd": "vLFD"}


class EvalError(ValueError):
    pass


# -- runs ------------------------------------------------------------------

@dataclass
class RetrievalRun:
    ranked: dict[str, list[str]]
    scores: dict[str, list[float]] = field(default_factory=dict)

    def __post_init__(self):
        for qid, lst in self.ranked.items():
            if len(set(lst)) != len(lst):
                raise EvalError(f"duplicate candidates for query {qid!r}")

    def top(self, qid: str, k: int) -> list[str]:
        try:
            lst = self.ranked[qid]
        except KeyError:
            raise EvalError(f"query {qid!r} missing from run") from None
        if len(lst) < k:
            raise EvalError(f"query {qid!r} has {len(lst)} candidates, need {k}")
        return lst[:k]


def load_run(path) -> RetrievalRun:
    ranked, scores = {}, {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                ranked[d["query_id"]] = list(d["ranked"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise EvalError(f"{path}:{n}: malformed run line ({e})") from None
            if "scores" in d:
                scores[d["query_id"]] = [float(s) for s in d["scores"]]
    return RetrievalRun(ranked, scores)


def save_run(run: RetrievalRun, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run.ranked):
            d = {"query_id": qid, "ranked": run.ranked[qid]}
            if qid in run.scores:
                d["scores"] = run.scores[qid]
            fh.write(json.dumps(d) + "\n")


def oracle_run(annotations: dict, shape_db) -> RetrievalRun:
    """GT first, then the rest of its category, then every other shape, each group by id."""
    ranked = {}
    for qid, rec in sorted(annotations.items()):
        same = [s for s in shape_db.ids(rec.category) if s != rec.gt_shape_id]
        other = [s for s in shape_db.ids() if shape_db.category(s) != rec.category]
        ranked[qid] = [rec.gt_shape_id] + same + other
    return RetrievalRun(ranked)


def _categories(shape_db) -> dict:
    if isinstance(shape_db, ShapeDatabase):
        return {s: shape_db.category(s) for s in shape_db.ids()}
    return dict(shape_db)


def _check_annotated(run: RetrievalRun, annotations: dict) -> list[str]:
    missing = [q for q in run.ranked if q not in annotations]
    if missing:
        raise EvalError(f"missing annotation for query {missing[0]!r}")
    return sorted(run.ranked)


# -- accuracy --------------------------------------------------------------

def acc_at_k(run: RetrievalRun, annotations: dict, k: int) -> float:
    qids = _check_annotated(run, annotations)
    if not qids:
        raise EvalError("empty run")
    hits = sum(annotations[q].gt_shape_id in run.top(q, k) for q in qids)
    return 100.0 * hits / len(qids)


def cat_acc(run: RetrievalRun, annotations: dict, shape_db) -> float:
    cats = _categories(shape_db)
    qids = _check_annotated(run, annotations)
    if not qids:
        raise EvalError("empty run")
    hits = 0
    for q in qids:
        top = run.top(q, 1)[0]
        if top not in cats:
            raise EvalError(f"candidate {top!r} not in the shape database")
        hits += cats[top] == annotations[q].category
    return 100.0 * hits / len(qids)


# -- shape metric backends -------------------------------------------------

@dataclass
class EvalConfig:
    metrics: tuple = METRICS
    topk: tuple = (1, 5)
    n_points: int = 4000
    sampler: str = "fps"
    seed: int = 0
    lfd_dodecahedra: int = 10
    lfd_resolution: int = 256
    view_resolution: int | None = None  # None: the GT camera's own resolution
    bin_width: float = 0.1

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()
                      if k in cls.__dataclass_fields__})


def shape_seed(seed: int, shape_id: str) -> int:
    return int(np.random.SeedSequence([int(seed), zlib.crc32(shape_id.encode())]).generate_state(1)[0])


def shape_cloud(mesh, shape_id: str, n_points: int, sampler: str, seed: int) -> PointCloud:
    """Cloud of the canonically normalized shape, rounded to float32 so cached and fresh values agree."""
    canon, _ = normalize_canonical(mesh)
    c = sample(canon, n_points, shape_seed(seed, shape_id), sampler)
    return PointCloud(c.points.astype(np.float32).astype(np.float64),
                      c.normals.astype(np.float32).astype(np.float64))


def _cloud_job(args):
    root, entries, sid, n, sampler, seed = args
    db = ShapeDatabase(root, entries)
    return sid, shape_cloud(db.mesh(sid), sid, n, sampler, seed)


def _lfd_job(args):
    root, entries, sid, ndod, seed, res = args
    db = ShapeDatabase(root, entries)
    return sid, compute_lfd(db.mesh(sid), lfd_rig(ndod, seed, resolution=res), res, seed)


def parallel_map(fn, jobs: list, threads: int = 1) -> list:
    """Ordered map; process-parallel when ``threads > 1``."""
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    return [fn(j) for j in jobs]


class MetricContext:
    """Lazily computed per-shape clouds/LFDs and per-query renders for one evaluation."""

    def __init__(self, shape_db: ShapeDatabase, config: EvalConfig | None = None):
        self.db = shape_db
        self.config = config or EvalConfig()
        self.clouds: dict[str, PointCloud] = {}
        self.lfds: dict = {}
        self._masks: dict = {}
        self._descs: dict = {}
        self._pairs: dict = {}

    def prepare(self, shape_ids, threads: int = 1) -> None:
        c = self.config
        ids = sorted(set(shape_ids))
        root, entries = str(self.db.root), self.db.entries
        if "cd" in c.metrics:
            todo = [s for s in ids if s not in self.clouds]
            for sid, cloud in parallel_map(_cloud_job, [(root, entries, s, c.n_points, c.sampler, c.seed)
                                                        for s in todo], threads):
                self.clouds[sid] = cloud
        if "lfd" in c.metrics:
            todo = [s for s in ids if s not in self.lfds]
            for sid, d in parallel_map(_lfd_job, [(root, entries, s, c.lfd_dodecahedra, c.seed, c.lfd_resolution)
                                                  for s in todo], threads):
                self.lfds[sid] = d

    def cloud(self, sid: str) -> PointCloud:
        if sid not in self.clouds:
            c = self.config
            self.clouds[sid] = shape_cloud(self.db.mesh(sid), sid, c.n_points, c.sampler, c.seed)
        return self.clouds[sid]

    def lfd(self, sid: str):
        if sid not in self.lfds:
            c = self.config
            rig = lfd_rig(c.lfd_dodecahedra, c.seed, resolution=c.lfd_resolution)
            self.lfds[sid] = compute_lfd(self.db.mesh(sid), rig, c.lfd_resolution, c.seed)
        return self.lfds[sid]

    def view_mask(self, rec: QueryRecord, sid: str) -> np.ndarray:
        """Complete silhouette of ``sid`` placed like the query's GT object, seen by the GT camera."""
        key = (rec.query_id, sid)
        if key not in self._masks:
            if not rec.pose or not rec.camera:
                raise EvalError(f"query {rec.query_id!r} has no pose/camera for view-dependent metrics")
            cam = Camera.from_dict(rec.camera)
            if self.config.view_resolution:
                cam = cam.with_resolution(self.config.view_resolution)
            mesh = self.db.mesh(sid)
            pl = placement_for(mesh, sid, rec.pose["yaw"], rec.pose["position"])
            self._masks[key] = render_mask(mesh, pl.transform(), cam)
        return self._masks[key]

    def view_descriptor(self, rec: QueryRecord, sid: str) -> np.ndarray:
        key = (rec.query_id, sid)
        if key not in self._descs:
            self._descs[key] = mask_descriptor(self.view_mask(rec, sid), strict=False)
        return self._descs[key]

    def score(self, metric: str, rec: QueryRecord, sid: str) -> float:
        gt = rec.gt_shape_id
        if metric in VIEW_INDEPENDENT:
            key = (metric, gt, sid)
            if key not in self._pairs:
                if metric == "cd":
                    self._pairs[key] = chamfer(self.cloud(gt), self.cloud(sid))
                else:
                    self._pairs[key] = lfd_distance(self.lfd(gt), self.lfd(sid))
            return self._pairs[key]
        if metric == "miou":
            return mask_iou(self.view_mask(rec, gt), self.view_mask(rec, sid))
        if metric == "vlfd":
            return float(np.abs(self.view_descriptor(rec, gt) - self.view_descriptor(rec, sid)).sum())
        raise EvalError(f"unknown metric {metric!r}")

    def release(self, query_id: str) -> None:
        """Drop per-query renders once a query is done."""
        for cache in (self._masks, self._descs):
            for key in [k for k in cache if k[0] == query_id]:
                del cache[key]


def topk_metric_avg(run: RetrievalRun, annotations: dict, metric: str, k: int, ctx: MetricContext) -> float:
    """Mean over queries of the mean ``metric`` between GT and each top-``k`` candidate."""
    qids = _check_annotated(run, annotations)
    if not qids:
        raise EvalError("empty run")
    per_query = [math.fsum(ctx.score(metric, annotations[q], s) for s in run.top(q, k)) / k for q in qids]
    return math.fsum(per_query) / len(per_query)


# -- LPIPS join ------------------------------------------------------------

def load_lpips(path) -> dict:
    """CSV ``query_id,shape_id,lpips`` -> {(query_id, shape_id): value}."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"query_id", "shape_id", "lpips"} <= set(reader.fieldnames):
            raise EvalError(f"{path}: LPIPS file needs columns query_id, shape_id, lpips")
        for n, row in enumerate(reader, 2):
            try:
                out[(row["query_id"], row["shape_id"])] = float(row["lpips"])
            except (TypeError, ValueError):
                raise EvalError(f"{path}:{n}: malformed LPIPS value") from None
    return out


# -- reports ---------------------------------------------------------------

@dataclass
class MetricsReport:
    rows: list[dict]
    aggregates: dict
    config: dict

    def columns(self) -> list[str]:
        cols = []
        for r in self.rows:
            for c in r:
                if c not in cols:
                    cols.append(c)
        return cols


def _value_columns(rows: list[dict]) -> list[str]:
    skip = {"query_id", "scene_id", "split", "seen", "occluded", "occlusion_rate", "category", "gt_shape_id"}
    cols = []
    for r in rows:
        for c in r:
            if c not in skip and c not in cols:
                cols.append(c)
    return cols


def aggregate(rows: list[dict]) -> dict:
    """Mean of every value column (None cells skipped) plus the row count."""
    out = {"count": len(rows)}
    for c in _value_columns(rows):
        vals = [r[c] for r in rows if r.get(c) is not None]
        out[c] = math.fsum(vals) / len(vals) if vals else None
    return out


def subsets(rows: list[dict]) -> dict:
    groups = {"all": rows}
    for tag, pred in (("Occ", lambda r: r["occluded"]), ("NoOcc", lambda r: not r["occluded"])):
        groups[tag] = [r for r in rows if pred(r)]
    for s in ("seen", "unseen"):
        groups[s] = [r for r in rows if r["seen"] == s]
        for occ in ("Occ", "NoOcc"):
            groups[f"{occ}/{s}"] = [r for r in groups[s] if r["occluded"] == (occ == "Occ")]
    return groups


def build_aggregates(rows: list[dict]) -> dict:
    out = {}
    splits = sorted({r["split"] for r in rows if r["split"]})
    for split in ["all"] + splits:
        srows = rows if split == "all" else [r for r in rows if r["split"] == split]
        out[split] = {name: aggregate(g) for name, g in subsets(srows).items() if g}
    return out


def _query_row(rec: QueryRecord, top: list[str], cats: dict, config: EvalConfig, ctx: MetricContext,
               lpips: dict | None) -> dict:
    row = {
        "query_id": rec.query_id, "scene_id": rec.scene_id, "split": rec.split, "seen": rec.seen,
        "category": rec.category, "gt_shape_id": rec.gt_shape_id,
        "occlusion_rate": rec.occlusion_rate, "occluded": rec.occluded,
    }
    for k in config.topk:
        row[f"Acc_{k}"] = 100.0 * (rec.gt_shape_id in top[:k])
    row["CatAcc"] = 100.0 * (cats[top[0]] == rec.category)
    for m in config.metrics:
        scores = [ctx.score(m, rec, s) for s in top]
        for k in config.topk:
            row[f"{COLUMN_NAMES[m]}_{k}"] = math.fsum(scores[:k]) / k
    if lpips is not None:
        for k in config.topk:
            vals = [lpips.get((rec.query_id, s)) for s in top[:k]]
            row[f"LPIPS_{k}"] = None if any(v is None for v in vals) else math.fsum(vals) / k
    return row


def _rows_job(args):
    root, entries, cfg, recs, tops, cats, clouds, lfds, lpips = args
    ctx = MetricContext(ShapeDatabase(root, entries), EvalConfig.from_dict(cfg))
    ctx.clouds, ctx.lfds = clouds, lfds
    return _rows([QueryRecord.from_dict(r) for r in recs], tops, cats, ctx.config, ctx, lpips)


def _rows(recs, tops, cats, config, ctx, lpips):
    rows = []
    for rec, top in zip(recs, tops):
        rows.append(_query_row(rec, top, cats, config, ctx, lpips))
        ctx.release(rec.query_id)
    return rows


def evaluate_run(run: RetrievalRun, annotations: dict, shape_db: ShapeDatabase, config: EvalConfig | None = None,
                 lpips: dict | None = None, threads: int = 1, ctx: MetricContext | None = None) -> MetricsReport:
    config = config or EvalConfig()
    for m in config.metrics:
        if m not in METRICS:
            raise EvalError(f"unknown metric {m!r}")
    qids = _check_annotated(run, annotations)
    kmax = max(config.topk)
    cats = _categories(shape_db)
    tops = {}
    for q in qids:
        tops[q] = run.top(q, kmax)
        for s in tops[q]:
            if s not in cats:
                raise EvalError(f"candidate {s!r} of query {q!r} not in the shape database")
    ctx = ctx or MetricContext(shape_db, config)
    needed = {annotations[q].gt_shape_id for q in qids} | {s for t in tops.values() for s in t}
    ctx.prepare(needed, threads)
    if threads > 1 and len(qids) > 1:
        n_chunks = min(len(qids), 4 * threads)
        chunks = [qids[i::n_chunks] for i in range(n_chunks)]
        jobs = [(str(shape_db.root), shape_db.entries, config.to_dict(),
                 [annotations[q].to_dict() for q in ch], [tops[q] for q in ch], cats,
                 ctx.clouds, ctx.lfds, lpips) for ch in chunks]
        by_id = {r["query_id"]: r for rows in parallel_map(_rows_job, jobs, threads) for r in rows}
        rows = [by_id[q] for q in qids]
    else:
        rows = _rows([annotations[q] for q in qids], [tops[q] for q in qids], cats, config, ctx, lpips)
    return MetricsReport(rows, build_aggregates(rows), config.to_dict())


def write_report(report: MetricsReport, out_dir, stem: str = "report") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / f"{stem}.csv", out / f"{stem}.json"
    cols = report.columns()
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in report.rows:
            w.writerow(["" if r.get(c) is None else _fmt(r.get(c)) for c in cols])
    json_path.write_text(json.dumps({"aggregates": report.aggregates, "config": report.config},
                                    indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return csv_path, json_path


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


# -- occlusion curves ------------------------------------------------------

def occlusion_curve(rows: list[dict], bin_width: float = 0.1, columns=None) -> list[dict]:
    """Bin queries by occlusion rate (last bin closed at 1) and average each metric column per bin."""
    nbins = int(round(1.0 / bin_width))
    if not math.isclose(nbins * bin_width, 1.0):
        raise ValueError("bin_width must divide 1")
    columns = columns or _value_columns(rows)
    binned = [[] for _ in range(nbins)]
    for r in rows:
        b = min(int(r["occlusion_rate"] / bin_width), nbins - 1)
        binned[b].append(r)
    out = []
    for b, members in enumerate(binned):
        entry = {"bin_lo": b * bin_width, "bin_hi": (b + 1) * bin_width, "count": len(members)}
        for c in columns:
            vals = [r[c] for r in members if r.get(c) is not None]
            entry[c] = math.fsum(vals) / len(vals) if vals else None
        out.append(entry)
    return out


def write_curve(curve: list[dict], path) -> None:
    cols = list(curve[0]) if curve else ["bin_lo", "bin_hi", "count"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for e in curve:
            w.writerow(["" if e[c] is None else _fmt(e[c]) for c in cols])


# -- ranking stability -----------------------------------------------------

def _exact(p: float) -> Fraction:
    # decimal reading of p, so that p = 0.9 behaves as 9/10
    return Fraction(repr(float(p)))


def rbo(base: list, variant: list, p: float = 0.9) -> float:
    """Extrapolated rank-biased overlap to depth ``k = max(len)``, in exact rational arithmetic.

    ``(1 - p) * sum_{d<=k} p^(d-1) A_d + A_k p^k`` with ``A_d`` the prefix agreement at depth ``d``.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    k = max(len(base), len(variant))
    if k == 0:
        return 1.0
    pf = _exact(p)
    seen_a, seen_b = set(), set()
    overlap = 0
    total = Fraction(0)
    weight = Fraction(1)
    agree = Fraction(0)
    for d in range(1, k + 1):
        a = base[d - 1] if d <= len(base) else None
        b = variant[d - 1] if d <= len(variant) else None
        if a is not None and a == b:
            overlap += 1
        else:
            overlap += (a is not None and a in seen_b) + (b is not None and b in seen_a)
        seen_a.add(a)
        seen_b.add(b)
        agree = Fraction(overlap, d)
        total += weight * agree
        weight *= pf
    return float((1 - pf) * total + agree * weight)


def ranking_stability(base: list, variant: list, p: float = 0.9) -> tuple[int, float, float]:
    """(moved shapes, mean rank difference over moved shapes, extrapolated RBO)."""
    if sorted(base) != sorted(variant) or len(set(base)) != len(base):
        raise ValueError("rankings must be permutations of the same distinct items")
    pos = {s: i for i, s in enumerate(variant)}
    diffs = [abs(i - pos[s]) for i, s in enumerate(base)]
    moved = [d for d in diffs if d]
    rd = math.fsum(moved) / len(moved) if moved else 0.0
    return len(moved), rd, rbo(base, variant, p)


_LOWER_BETTER = {"cd": True, "nc": False, "f1": False}


def _pair_score(metric: str, a: PointCloud, b: PointCloud) -> float:
    if metric == "cd":
        return chamfer(a, b)
    if metric == "nc":
        return normal_consistency(a, b)
    if metric == "f1":
        return f1_score(a, b)
    raise EvalError(f"unknown stability metric {metric!r}")


def rankings_from_scores(ids: list[str], scores: np.ndarray, lower_better: bool) -> dict:
    """For every query shape, the other shapes ordered best first (ties by id)."""
    out = {}
    for i, q in enumerate(ids):
        others = [(scores[i, j] if lower_better else -scores[i, j], ids[j]) for j in range(len(ids)) if j != i]
        others.sort()
        out[q] = [s for _, s in others]
    return out


def _score_matrix(ids, clouds, metric):
    n = len(ids)
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                m[i, j] = _pair_score(metric, clouds[ids[i]], clouds[ids[j]])
    return m


def _stability_clouds(args):
    sid, mesh, n, sampler, seed = args
    return sid, shape_cloud(mesh, sid, n, sampler, seed)


def sampling_stability_study(meshes: dict, configs: list[dict], base_config: dict, seed: int = 0,
                             p: float = 0.9, threads: int = 1) -> dict:
    """Score variance over point counts and ranking stability of each config against ``base_config``.

    ``configs`` entries are ``{"metric": cd|nc|f1, "n_points": int, "sampler": fps|fas}``.
    """
    if len(configs) < 2:
        raise ValueError("need at least two configs")
    ids = sorted(meshes)
    all_cfgs = [base_config] + [c for c in configs if c != base_config]
    clouds = {}
    for c in all_cfgs:
        key = (c["n_points"], c["sampler"])
        if key not in clouds:
            res = parallel_map(_stability_clouds, [(s, meshes[s], key[0], key[1], seed) for s in ids], threads)
            clouds[key] = dict(res)
    matrices = {}
    for c in all_cfgs:
        key = (c["metric"], c["n_points"], c["sampler"])
        if key not in matrices:
            matrices[key] = _score_matrix(ids, clouds[key[1:]], c["metric"])
    base_key = (base_config["metric"], base_config["n_points"], base_config["sampler"])
    base_rank = rankings_from_scores(ids, matrices[base_key], _LOWER_BETTER[base_config["metric"]])
    rows = []
    for c in configs:
        key = (c["metric"], c["n_points"], c["sampler"])
        ranks = rankings_from_scores(ids, matrices[key], _LOWER_BETTER[c["metric"]])
        trip = [ranking_stability(base_rank[q], ranks[q], p) for q in ids]
        rows.append({**c, "mMS": math.fsum(t[0] for t in trip) / len(ids),
                     "mRD": math.fsum(t[1] for t in trip) / len(ids),
                     "RBO": math.fsum(t[2] for t in trip) / len(ids)})
    variance = []
    groups: dict = {}
    for c in configs:
        groups.setdefault((c["metric"], c["sampler"]), set()).add(c["n_points"])
    for (metric, sampler), counts in sorted(groups.items()):
        stack = np.stack([matrices[(metric, n, sampler)] for n in sorted(counts)])
        off = ~np.eye(len(ids), dtype=bool)
        variance.append({"metric": metric, "sampler": sampler, "n_points": sorted(counts),
                         "mean_variance": float(stack.var(axis=0)[off].mean()) if len(ids) > 1 else 0.0})
    return {"base": base_config, "stability": rows, "variance": variance}
