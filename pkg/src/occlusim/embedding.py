"""Joint image-shape embedding scoring: temperature similarity, query-conditioned
view attention, instance/category contrastive losses and cosine ranking.

Embedding file layout (little-endian)::

    4s      magic b"OCEM"
    uint32  row count N
    uint32  dimension d
    N x d float32 rows

and a JSON index ``{id: [start, stop]}`` of row ranges (one row per query, or
``m`` consecutive view rows per shape).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("zero embedding vector")
    return x / n


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    return float(_unit(x) @ _unit(y))


def log_similarity(x: np.ndarray, y: np.ndarray, tau: float = 0.1) -> np.ndarray:
    """``log D(x, y) = cos(x, y) / tau``; broadcasts over leading axes."""
    return (_unit(x) * _unit(y)).sum(axis=-1) / tau


def similarity_D(x: np.ndarray, y: np.ndarray, tau: float = 0.1) -> float:
    """``exp(cos(x, y) / tau)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return math.exp(float(log_similarity(x, y, tau)))


def attend_views(query: np.ndarray, views: np.ndarray, scaled: bool = True) -> np.ndarray:
    """Softmax(query . view_k [/ sqrt(dim)]) weighted sum of the ``m`` view embeddings."""
    views = np.atleast_2d(np.asarray(views, dtype=np.float64))
    logits = views @ np.asarray(query, dtype=np.float64)
    if scaled:
        logits = logits / math.sqrt(views.shape[1])
    w = np.exp(logits - logsumexp(logits))
    return w @ views


def conditioned_features(queries: np.ndarray, shape_views: np.ndarray, scaled: bool = True) -> np.ndarray:
    """(B, S, d): shape ``j``'s views attended by query ``i``."""
    q = np.asarray(queries, dtype=np.float64)
    v = np.asarray(shape_views, dtype=np.float64)
    logits = np.einsum("id,jkd->ijk", q, v)
    if scaled:
        logits = logits / math.sqrt(v.shape[-1])
    w = np.exp(logits - logsumexp(logits, axis=2, keepdims=True))
    return np.einsum("ijk,jkd->ijd", w, v)


@dataclass
class EmbeddingBatch:
    """``queries`` (B, d); ``shape_views`` (B, m, d) with shape ``i`` the positive for query ``i``."""

    queries: np.ndarray
    shape_views: np.ndarray
    labels: list = field(default_factory=list)
    tau: float = 0.1
    beta1: float = 0.2
    scaled_attention: bool = True

    def __post_init__(self):
        self.queries = np.atleast_2d(np.asarray(self.queries, dtype=np.float64))
        self.shape_views = np.asarray(self.shape_views, dtype=np.float64)
        if self.shape_views.ndim == 2:
            self.shape_views = self.shape_views[:, None, :]
        B = len(self.queries)
        if B < 1 or self.shape_views.shape[0] != B or self.shape_views.shape[1] < 1:
            raise ValueError("need B >= 1 queries, B shapes and m >= 1 views")
        if not self.labels:
            self.labels = list(range(B))
        if len(self.labels) != B:
            raise ValueError("label list length must equal B")
        if not self.tau > 0 or self.beta1 < 0:
            raise ValueError("need tau > 0 and beta1 >= 0")
        if not (np.all(np.isfinite(self.queries)) and np.all(np.isfinite(self.shape_views))):
            raise ValueError("embeddings must be finite")

    def log_d(self) -> np.ndarray:
        """(B, B) matrix of ``log D(f^i, f_j^S)`` using query-conditioned shape features."""
        cond = conditioned_features(self.queries, self.shape_views, self.scaled_attention)
        return log_similarity(self.queries[:, None, :], cond, self.tau)


def _log_ratios(batch: EmbeddingBatch) -> np.ndarray:
    logd = batch.log_d()
    out = logd - logsumexp(logd, axis=1, keepdims=True)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite loss term")
    return out


def instance_loss(batch: EmbeddingBatch) -> float:
    """``-sum_i log D(f^i, f_i^{S_i}) / sum_j D(f^i, f_j^S)``."""
    lr = _log_ratios(batch)
    return float(-np.trace(lr))


def category_loss(batch: EmbeddingBatch) -> float:
    """Same-category positives, averaged per query over ``C(i)`` (others with label ``y_i``).

    Queries with no same-category partner contribute 0.
    """
    lr = _log_ratios(batch)
    labels = np.asarray(batch.labels, dtype=object)
    total = 0.0
    for i in range(len(labels)):
        same = [c for c in range(len(labels)) if c != i and labels[c] == labels[i]]
        if same:
            total -= math.fsum(lr[i, c] for c in same) / len(same)
    return total


def total_loss(batch: EmbeddingBatch) -> float:
    return instance_loss(batch) + batch.beta1 * category_loss(batch)


def rank_candidates(query: np.ndarray, db: dict, category_filter: str | None = None,
                    db_categories: dict | None = None, scaled: bool = True) -> list[tuple[str, float]]:
    """Shapes ordered by cosine(query, query-conditioned shape feature), descending; ties by id."""
    items = sorted(db.items())
    if category_filter is not None:
        if db_categories is None:
            raise ValueError("category_filter needs db_categories")
        items = [(k, v) for k, v in items if db_categories.get(k) == category_filter]
    if not items:
        raise ValueError("no candidates to rank")
    q = np.asarray(query, dtype=np.float64)
    scored = [(sid, cosine(q, attend_views(q, views, scaled))) for sid, views in items]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored


# -- embedding files -------------------------------------------------------

_MAGIC = b"OCEM"


def save_embeddings(rows: dict, path, index_path=None) -> None:
    """``rows`` maps id -> (d,) or (m, d) array; writes the binary file and JSON index."""
    path = Path(path)
    index_path = Path(index_path) if index_path else path.with_suffix(".json")
    blocks, index, start = [], {}, 0
    dim = None
    for key in sorted(rows):
        arr = np.atleast_2d(np.asarray(rows[key], dtype=np.float64))
        if dim is None:
            dim = arr.shape[1]
        elif arr.shape[1] != dim:
            raise ValueError("inconsistent embedding dimension")
        blocks.append(arr)
        index[key] = [start, start + len(arr)]
        start += len(arr)
    data = np.concatenate(blocks).astype("<f4") if blocks else np.zeros((0, 0), "<f4")
    path.write_bytes(_MAGIC + struct.pack("<II", data.shape[0], data.shape[1] if data.size else 0) + data.tobytes())
    index_path.write_text(json.dumps(index, sort_keys=True) + "\n", encoding="utf-8")


def load_embeddings(path, index_path=None) -> dict:
    path = Path(path)
    index_path = Path(index_path) if index_path else path.with_suffix(".json")
    data = path.read_bytes()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not an embedding file")
    n, d = struct.unpack_from("<II", data, 4)
    rows = np.frombuffer(data, dtype="<f4", count=n * d, offset=12).reshape(n, d).astype(np.float64)
    index = json.loads(index_path.read_text(encoding="utf-8"))
    return {k: rows[a:b] for k, (a, b) in index.items()}
