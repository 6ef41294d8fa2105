"""Occlusion-aware single-view 3D shape retrieval benchmark toolkit."""

from .mesh import ShapeDatabase, ShapeRecord, SimilarityTransform, TriangleMesh, load_obj, write_obj
from .sampling import PointCloud, sample_fas, sample_fps

__version__ = "0.1.0"

__all__ = [
    "PointCloud", "ShapeDatabase", "ShapeRecord", "SimilarityTransform", "TriangleMesh",
    "load_obj", "sample_fas", "sample_fps", "write_obj",
]
