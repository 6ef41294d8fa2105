"""Procedural box-built furniture with physical dimensions (meters, +Y up, resting on y = 0).

Stands in for a CAD furniture corpus when none is available; every part is a
closed outward-wound box, so shapes voxelize and shade cleanly.
"""

from __future__ import annotations

import numpy as np

from .mesh import ShapeRecord, TriangleMesh, box, merge, write_shape_db

CATEGORIES = ("chair", "bed", "table", "sofa")


def _legs(rng, w, d, h, t, inset=0.0):
    parts = []
    for sx in (-1, 1):
        for sz in (-1, 1):
            x = sx * (w / 2 - inset - t / 2)
            z = sz * (d / 2 - inset - t / 2)
            parts.append(box((x - t / 2, 0.0, z - t / 2), (x + t / 2, h, z + t / 2)))
    return parts


def chair(rng: np.random.Generator) -> TriangleMesh:
    w, d = rng.uniform(0.40, 0.56), rng.uniform(0.40, 0.55)
    seat_h, seat_t = rng.uniform(0.40, 0.50), rng.uniform(0.04, 0.08)
    leg = rng.uniform(0.03, 0.06)
    back_h, back_t = rng.uniform(0.35, 0.60), rng.uniform(0.03, 0.07)
    parts = _legs(rng, w, d, seat_h - seat_t, leg)
    parts.append(box((-w / 2, seat_h - seat_t, -d / 2), (w / 2, seat_h, d / 2)))
    parts.append(box((-w / 2, seat_h, -d / 2), (w / 2, seat_h + back_h, -d / 2 + back_t)))
    if rng.random() < 0.35:
        arm_h = rng.uniform(0.18, 0.26)
        for sx in (-1, 1):
            x0 = sx * w / 2 - (0.04 if sx > 0 else 0.0)
            parts.append(box((x0, seat_h, -d / 2), (x0 + 0.04, seat_h + arm_h, d / 2)))
    return merge(parts)


def bed(rng: np.random.Generator) -> TriangleMesh:
    w, length = rng.uniform(1.0, 2.0), rng.uniform(1.9, 2.2)
    base_h, matt_h = rng.uniform(0.20, 0.40), rng.uniform(0.15, 0.25)
    head_h, head_t = rng.uniform(0.85, 1.30), rng.uniform(0.05, 0.12)
    parts = [
        box((-w / 2, 0.0, -length / 2), (w / 2, base_h, length / 2)),
        box((-w / 2 + 0.03, base_h, -length / 2 + head_t), (w / 2 - 0.03, base_h + matt_h, length / 2 - 0.03)),
        box((-w / 2, 0.0, -length / 2), (w / 2, head_h, -length / 2 + head_t)),
    ]
    if rng.random() < 0.5:
        foot_h = rng.uniform(0.35, 0.55)
        parts.append(box((-w / 2, 0.0, length / 2 - head_t), (w / 2, foot_h, length / 2)))
    return merge(parts)


def table(rng: np.random.Generator) -> TriangleMesh:
    w, d = rng.uniform(0.8, 1.8), rng.uniform(0.6, 1.0)
    h, top_t = rng.uniform(0.70, 0.78), rng.uniform(0.03, 0.06)
    parts = [box((-w / 2, h - top_t, -d / 2), (w / 2, h, d / 2))]
    if rng.random() < 0.25:
        col = rng.uniform(0.08, 0.14)
        parts.append(box((-col / 2, 0.02, -col / 2), (col / 2, h - top_t, col / 2)))
        parts.append(box((-0.25, 0.0, -0.25), (0.25, 0.02, 0.25)))
    else:
        leg = rng.uniform(0.04, 0.08)
        parts += _legs(rng, w, d, h - top_t, leg, inset=rng.uniform(0.0, 0.06))
    return merge(parts)


def sofa(rng: np.random.Generator) -> TriangleMesh:
    w, d = rng.uniform(1.5, 2.4), rng.uniform(0.8, 1.0)
    seat_h, back_h = rng.uniform(0.38, 0.46), rng.uniform(0.70, 0.90)
    arm_w, arm_h = rng.uniform(0.10, 0.25), rng.uniform(0.55, 0.68)
    back_t = rng.uniform(0.15, 0.25)
    parts = [
        box((-w / 2, 0.0, -d / 2), (w / 2, seat_h, d / 2)),
        box((-w / 2, 0.0, -d / 2), (w / 2, back_h, -d / 2 + back_t)),
    ]
    if rng.random() < 0.85:
        parts.append(box((-w / 2, 0.0, -d / 2), (-w / 2 + arm_w, arm_h, d / 2)))
        parts.append(box((w / 2 - arm_w, 0.0, -d / 2), (w / 2, arm_h, d / 2)))
    return merge(parts)


BUILDERS = {"chair": chair, "bed": bed, "table": table, "sofa": sofa}


def make_shapes(per_category: int = 10, seed: int = 0, categories=CATEGORIES) -> list[ShapeRecord]:
    rng = np.random.default_rng(seed)
    out = []
    for cat in categories:
        for i in range(per_category):
            out.append(ShapeRecord(f"{cat}_{i:03d}", cat, BUILDERS[cat](rng)))
    return out


def make_shape_db(root, per_category: int = 10, seed: int = 0, categories=CATEGORIES):
    return write_shape_db(root, make_shapes(per_category, seed, categories))
