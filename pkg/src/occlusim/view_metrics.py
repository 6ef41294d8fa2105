"""View-dependent mask and normal metrics, and per-instance occlusion rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"resolution mismatch: {a.shape[:2]} vs {b.shape[:2]}")


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _same_shape(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def _valid(normals: np.ndarray) -> np.ndarray:
    return np.any(normals != 0, axis=-1) & np.all(np.isfinite(normals), axis=-1)


def normal_l2(na: np.ndarray, nb: np.ndarray, region: np.ndarray, return_skipped: bool = False):
    """Mean Euclidean distance between unit normals over ``region``.

    Region pixels without a normal in either map are skipped; with
    ``return_skipped=True`` the skipped count is returned alongside.
    """
    _same_shape(na, nb)
    region = np.asarray(region, dtype=bool)
    _same_shape(na, region)
    use = region & _valid(na) & _valid(nb)
    skipped = int(np.count_nonzero(region) - np.count_nonzero(use))
    if not use.any():
        raise ValueError("empty region")
    d = float(np.linalg.norm(na[use] - nb[use], axis=-1).mean())
    return (d, skipped) if return_skipped else d


@dataclass(frozen=True)
class NormalHistogram:
    counts: np.ndarray  # (n_azimuth, n_elevation)
    bin_deg: float

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def normal_angles(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth in [0, 360) measured in the XZ plane from +X toward +Z; elevation in [-90, 90] toward +Y."""
    n = normals / np.linalg.norm(normals, axis=-1, keepdims=True)
    az = np.degrees(np.arctan2(n[..., 2], n[..., 0])) % 360.0
    el = np.degrees(np.arcsin(np.clip(n[..., 1], -1.0, 1.0)))
    return az, el


def normal_histogram(normals: np.ndarray, mask: np.ndarray, bin_deg: float = 10.0) -> NormalHistogram:
    if 360 % bin_deg or 180 % bin_deg:
        raise ValueError("bin_deg must divide 360 and 180")
    sel = np.asarray(mask, dtype=bool) & _valid(normals)
    if not sel.any():
        raise ValueError("empty mask")
    az, el = normal_angles(normals[sel])
    n_az, n_el = int(360 // bin_deg), int(180 // bin_deg)
    ia = np.minimum((az // bin_deg).astype(np.int64), n_az - 1)
    # +90 exactly folds into the top bin
    ie = np.minimum(((el + 90.0) // bin_deg).astype(np.int64), n_el - 1)
    counts = np.zeros((n_az, n_el), dtype=np.int64)
    np.add.at(counts, (ia, ie), 1)
    return NormalHistogram(counts, float(bin_deg))


def histogram_iou(ha: NormalHistogram, hb: NormalHistogram, skip_empty: bool = True) -> float:
    """Mean over bins of min/max counts; bins empty in both are skipped unless ``skip_empty=False`` (then they count as 0)."""
    a, b = ha.counts, hb.counts
    hi = np.maximum(a, b)
    lo = np.minimum(a, b)
    used = hi > 0
    if skip_empty:
        return float((lo[used] / hi[used]).mean())
    ratio = np.zeros(a.shape)
    ratio[used] = lo[used] / hi[used]
    return float(ratio.mean())


def normal_hist_iou(na, nb, mask_a, mask_b, bin_deg: float = 10.0, skip_empty: bool = True) -> float:
    return histogram_iou(normal_histogram(na, mask_a, bin_deg), normal_histogram(nb, mask_b, bin_deg), skip_empty)


class InvisibleInstance(ValueError):
    """Raised when an object has no pixels even on the expanded canvas."""


def occlusion_rate(instance_mask: np.ndarray, intact_mask: np.ndarray, expansion: int = 3) -> float:
    """``1 - visible / intact`` where ``intact_mask`` covers the canvas expanded ``expansion`` times.

    Pixels truncated by the frame are in the intact mask but never in the
    instance mask, so truncation raises the rate like occlusion does.
    """
    inst = np.asarray(instance_mask, dtype=bool)
    intact = np.asarray(intact_mask, dtype=bool)
    if intact.shape != (inst.shape[0] * expansion, inst.shape[1] * expansion):
        raise ValueError("intact mask must be the expanded canvas of the instance mask")
    total = np.count_nonzero(intact)
    if total == 0:
        raise InvisibleInstance("object is outside the expanded view")
    visible = np.count_nonzero(inst)
    return float(min(1.0, max(0.0, 1.0 - visible / total)))
