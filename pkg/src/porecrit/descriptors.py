"""Per-pore geometric and spatial descriptors and the model feature matrix."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import EmptyRegion, FormatError, NoBoundary
from .segmentation import LabelField, SegmentationResult

FEATURE_ORDER: tuple[str, ...] = ("size", "aspect_ratio", "extent", "z_position", "surface_distance")
SURFACE_MODES = ("boundary_component", "bbox_faces")


@dataclass(frozen=True)
class Pore:
    id: int
    voxel_count: int
    centroid: tuple[float, float, float]
    bbox: tuple[int, int, int, int, int, int]  # z0, z1, y0, y1, x0, x1 (inclusive)
    aspect_ratio: float
    extent: float
    z_position: float
    surface_distance: float

    def feature_row(self) -> list[float]:
        return [float(self.voxel_count), self.aspect_ratio, self.extent,
                self.z_position, self.surface_distance]


@dataclass(frozen=True)
class FeatureMatrix:
    pore_ids: np.ndarray  # (n,) int
    rows: np.ndarray  # (n, 5) float64
    feature_order: tuple[str, ...] = FEATURE_ORDER

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64).reshape(-1, len(self.feature_order))
        ids = np.asarray(self.pore_ids, dtype=np.int64).reshape(-1)
        if len(ids) != len(rows):
            raise ValueError("pore_ids and rows disagree in length")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "pore_ids", ids)

    def __len__(self) -> int:
        return len(self.pore_ids)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.feature_order.index(name)]

    def subset(self, index: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(self.pore_ids[index], self.rows[index], self.feature_order)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(("pore_id",) + self.feature_order) + "\n")
        for pid, row in zip(self.pore_ids, self.rows):
            buf.write(",".join([str(int(pid))] + [repr(float(v)) for v in row]) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureMatrix":
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or tuple(header) != ("pore_id",) + FEATURE_ORDER:
            raise FormatError(f"unexpected feature CSV header {header}")
        ids, rows = [], []
        for rec in reader:
            if not rec:
                continue
            ids.append(int(rec[0]))
            rows.append([float(v) for v in rec[1:]])
        return cls(np.asarray(ids, dtype=np.int64), np.asarray(rows, dtype=np.float64).reshape(-1, 5))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class SurfaceModel:
    mode: str
    normalizer: float
    boundary_voxels: np.ndarray | None = None
    dims: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.mode not in SURFACE_MODES:
            raise ValueError(f"surface mode must be one of {SURFACE_MODES}")
        if not self.normalizer > 0:
            raise ValueError("normalizer must be positive")
        if self.mode == "boundary_component":
            object.__setattr__(self, "_tree", cKDTree(np.asarray(self.boundary_voxels, dtype=np.float64)))


def centroid(voxels) -> tuple[float, float, float]:
    v = np.asarray(voxels, dtype=np.float64).reshape(-1, 3)
    if len(v) == 0:
        raise EmptyRegion("centroid of an empty voxel set")
    c = v.mean(axis=0)
    return float(c[0]), float(c[1]), float(c[2])


def bounding_box(voxels) -> tuple[int, int, int, int, int, int]:
    v = np.asarray(voxels).reshape(-1, 3)
    if len(v) == 0:
        raise EmptyRegion("bounding box of an empty voxel set")
    lo, hi = v.min(axis=0), v.max(axis=0)
    return int(lo[0]), int(hi[0]), int(lo[1]), int(hi[1]), int(lo[2]), int(hi[2])


def shape_descriptors(pore_voxels) -> tuple[float, float]:
    """Bounding-box aspect ratio (longest / shortest side) and extent (fill fraction)."""
    v = np.asarray(pore_voxels).reshape(-1, 3)
    z0, z1, y0, y1, x0, x1 = bounding_box(v)
    sides = (z1 - z0 + 1, y1 - y0 + 1, x1 - x0 + 1)
    aspect = max(sides) / min(sides)
    extent = len(v) / (sides[0] * sides[1] * sides[2])
    return float(aspect), float(extent)


def build_surface_model(
    segmentation_result: SegmentationResult | None,
    volume_dims: tuple[int, int, int],
    mode: str = "boundary_component",
    label_field: LabelField | None = None,
    boundary_voxels: np.ndarray | None = None,
) -> SurfaceModel:
    """Describe the specimen surface used for the normalized surface distance.

    ``boundary_component`` takes the excluded largest component as the surface and
    normalizes by the largest distance from any voxel in the grid to it, so the
    deepest point maps to 1. ``bbox_faces`` uses the six grid faces (voxel-centre
    planes at 0 and dim - 1) and normalizes by ``min(Y, X) / 2``.

    Boundary voxels come from ``boundary_voxels`` if given, else from
    ``label_field`` and the result's boundary label.
    """
    dims = tuple(int(d) for d in volume_dims)
    if mode == "bbox_faces":
        return SurfaceModel(mode=mode, normalizer=min(dims[1], dims[2]) / 2.0, dims=dims)
    if mode != "boundary_component":
        raise ValueError(f"surface mode must be one of {SURFACE_MODES}")

    if boundary_voxels is None:
        if label_field is None or segmentation_result is None:
            raise NoBoundary("boundary_component mode needs the labelled boundary component")
        boundary = label_field.labels == segmentation_result.boundary_label
    else:
        boundary_voxels = np.asarray(boundary_voxels, dtype=np.int64).reshape(-1, 3)
        boundary = np.zeros(dims, dtype=bool)
        if len(boundary_voxels):
            boundary[tuple(boundary_voxels.T)] = True
    if not boundary.any():
        raise NoBoundary("boundary component is empty")
    dist = ndimage.distance_transform_edt(~boundary)
    normalizer = float(dist.max())
    if normalizer <= 0:
        # every voxel is boundary; any positive value keeps distances at 0
        normalizer = 1.0
    coords = np.argwhere(boundary)
    return SurfaceModel(mode=mode, normalizer=normalizer, boundary_voxels=coords, dims=dims)


def surface_distance(point, surface_model: SurfaceModel) -> float:
    """Normalized minimum distance from ``point`` to the specimen surface, clamped to [0, 1]."""
    p = np.asarray(point, dtype=np.float64)
    if surface_model.mode == "bbox_faces":
        dims = np.asarray(surface_model.dims, dtype=np.float64)
        raw = float(min(np.min(p), np.min(dims - 1 - p)))
    else:
        raw, _ = surface_model._tree.query(p)
    return float(min(1.0, max(0.0, raw / surface_model.normalizer)))


def describe_pores(segmentation_result: SegmentationResult, surface_model: SurfaceModel) -> list[Pore]:
    """Descriptors for every retained pore, in segmentation order; pore id = component label."""
    pores = []
    for region in segmentation_result.pores:
        c = centroid(region.voxels)
        aspect, extent = shape_descriptors(region.voxels)
        pores.append(Pore(
            id=region.label,
            voxel_count=region.voxel_count,
            centroid=c,
            bbox=bounding_box(region.voxels),
            aspect_ratio=aspect,
            extent=extent,
            z_position=c[0],
            surface_distance=surface_distance(c, surface_model),
        ))
    return pores


def assemble_features(pores: list[Pore], surface_model: SurfaceModel | None = None) -> FeatureMatrix:
    """Stack pore descriptors into the fixed-column feature matrix.

    With a ``surface_model`` the surface distance is recomputed from each centroid,
    otherwise the stored value is used.
    """
    rows = []
    for p in pores:
        row = p.feature_row()
        if surface_model is not None:
            row[4] = surface_distance(p.centroid, surface_model)
        rows.append(row)
    return FeatureMatrix(np.array([p.id for p in pores], dtype=np.int64),
                         np.asarray(rows, dtype=np.float64).reshape(-1, len(FEATURE_ORDER)))


POINTS_HEADER = ("pore_id", "voxel_count", "z", "y", "x", "z0", "z1", "y0", "y1", "x0", "x1")


def pores_to_csv(pores: list[Pore]) -> str:
    lines = [",".join(POINTS_HEADER)]
    for p in pores:
        lines.append(",".join([str(p.id), str(p.voxel_count)]
                              + [repr(float(v)) for v in p.centroid]
                              + [str(v) for v in p.bbox]))
    return "\n".join(lines) + "\n"


def pores_from_csv(text: str, features: FeatureMatrix | None = None) -> list[Pore]:
    """Rebuild pores from the geometry CSV, joining descriptor columns from ``features``."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != POINTS_HEADER:
        raise FormatError(f"unexpected pore CSV header {header}")
    by_id = {}
    if features is not None:
        by_id = {int(pid): row for pid, row in zip(features.pore_ids, features.rows)}
    pores = []
    for rec in reader:
        if not rec:
            continue
        pid, count = int(rec[0]), int(rec[1])
        c = tuple(float(v) for v in rec[2:5])
        bbox = tuple(int(v) for v in rec[5:11])
        if by_id:
            row = by_id[pid]
            aspect, extent, sd = float(row[1]), float(row[2]), float(row[4])
        else:
            sides = (bbox[1] - bbox[0] + 1, bbox[3] - bbox[2] + 1, bbox[5] - bbox[4] + 1)
            aspect = max(sides) / min(sides)
            extent = count / float(np.prod(sides))
            sd = float("nan")
        pores.append(Pore(pid, count, c, bbox, aspect, extent, c[0], sd))
    return pores
