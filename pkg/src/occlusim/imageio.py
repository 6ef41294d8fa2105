"""PNG encodings for render products.

* masks: 8-bit single channel, 0/255
* depth: 16-bit single channel, 0 = background, foreground linearly mapped
  from ``[near, far]`` to ``[1, 65535]``; near/far go in a JSON sidecar
* normals: 8-bit RGB, ``(n * 0.5 + 0.5) * 255`` (background 0,0,0 decodes to a zero vector)
* instance maps: 16-bit single channel ids
* grayscale: 8-bit single channel, ``round(255 * intensity)``
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

_DEPTH_MAX = 65535


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    return np.array(Image.open(path)) > 127


def save_gray(img: np.ndarray, path) -> None:
    Image.fromarray(np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)).save(path)


def load_gray(path) -> np.ndarray:
    return np.array(Image.open(path)).astype(np.float64) / 255.0


def save_instance(ids: np.ndarray, path) -> None:
    if ids.max(initial=0) > _DEPTH_MAX:
        raise ValueError("instance ids exceed 16 bits")
    Image.fromarray(ids.astype(np.uint16)).save(path)


def load_instance(path) -> np.ndarray:
    return np.array(Image.open(path)).astype(np.int32)


def save_depth(depth: np.ndarray, path) -> dict:
    """Write the 16-bit PNG and ``<path>.json``; returns the sidecar dict."""
    fg = depth > 0
    near = float(depth[fg].min()) if fg.any() else 0.0
    far = float(depth[fg].max()) if fg.any() else 0.0
    span = far - near
    q = np.zeros(depth.shape, dtype=np.uint16)
    if fg.any():
        scaled = (depth[fg] - near) / span if span > 0 else np.zeros(int(fg.sum()))
        q[fg] = (1 + np.round(scaled * (_DEPTH_MAX - 1))).astype(np.uint16)
    Image.fromarray(q).save(path)
    meta = {"encoding": "linear16", "near": near, "far": far, "background": 0}
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return meta


def load_depth(path) -> np.ndarray:
    meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    q = np.array(Image.open(path)).astype(np.float64)
    out = meta["near"] + (q - 1) / (_DEPTH_MAX - 1) * (meta["far"] - meta["near"])
    return np.where(q > 0, out, 0.0)


def save_normals(normals: np.ndarray, path) -> None:
    fg = np.any(normals != 0, axis=-1)
    enc = np.round((normals * 0.5 + 0.5) * 255.0).astype(np.uint8)
    enc[~fg] = 0
    Image.fromarray(enc).save(path)


def load_normals(path) -> np.ndarray:
    enc = np.array(Image.open(path).convert("RGB")).astype(np.float64)
    fg = np.any(enc != 0, axis=-1)
    n = enc / 255.0 * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0)
    n[~fg] = 0.0
    return n
