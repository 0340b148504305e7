"""Thresholding, 3D connected-component labelling and the pore size filter."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EmptyMask
from .volume_io import Volume

logger = logging.getLogger(__name__)

THRESHOLD_MODES = ("fixed", "otsu_per_slice")


@dataclass(frozen=True)
class SegmentationConfig:
    threshold_mode: str = "fixed"
    I_thr: int = 250
    connectivity: int = 26
    min_voxels_exclusive: int = 2
    max_fraction_of_largest: float = 0.01

    def __post_init__(self):
        if self.threshold_mode not in THRESHOLD_MODES:
            raise ValueError(f"threshold_mode must be one of {THRESHOLD_MODES}")
        if not 0 <= self.I_thr <= 255:
            raise ValueError("I_thr must lie in [0, 255]")
        if self.connectivity not in (6, 26):
            raise ValueError("connectivity must be 6 or 26")
        if self.min_voxels_exclusive < 0:
            raise ValueError("min_voxels_exclusive must be >= 0")
        if not 0.0 < self.max_fraction_of_largest < 1.0:
            raise ValueError("max_fraction_of_largest must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {
            "threshold_mode": self.threshold_mode,
            "I_thr": self.I_thr,
            "connectivity": self.connectivity,
            "min_voxels_exclusive": self.min_voxels_exclusive,
            "max_fraction_of_largest": self.max_fraction_of_largest,
        }


@dataclass(frozen=True)
class LabelField:
    labels: np.ndarray  # int32, 0 = background, components numbered 1..L
    component_sizes: dict[int, int]

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)  # type: ignore[return-value]

    @property
    def n_components(self) -> int:
        return len(self.component_sizes)


@dataclass(frozen=True)
class PoreRegion:
    label: int
    voxels: np.ndarray  # (A_k, 3) integer (z, y, x) coordinates, raster order

    @property
    def voxel_count(self) -> int:
        return int(len(self.voxels))


@dataclass
class SegmentationResult:
    pores: list[PoreRegion]
    boundary_label: int
    boundary_size: int
    rejected_counts: dict[str, int]
    warnings: list[str] = field(default_factory=list)


def threshold_fixed(volume: Volume, config: SegmentationConfig = SegmentationConfig()) -> np.ndarray:
    """Mask of voxels with intensity >= ``config.I_thr`` (inclusive)."""
    return volume.intensities >= config.I_thr


def otsu_threshold(values: np.ndarray) -> int | None:
    """256-bin Otsu threshold ``t``; foreground is ``value > t``.

    Returns None when the histogram has a single occupied bin, in which case
    there is no meaningful split. Among equally good thresholds the smallest
    wins.
    """
    hist = np.bincount(np.asarray(values, dtype=np.uint8).ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) < 2:
        return None
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = total - w0
    m0_sum = np.cumsum(hist * levels)
    m_total = m0_sum[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0_sum / w0
        mu1 = (m_total - m0_sum) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    return int(np.argmax(between))


def threshold_otsu_per_slice(volume: Volume) -> np.ndarray:
    """Per-z-slice Otsu mask; a constant slice yields an all-false slice."""
    arr = volume.intensities
    mask = np.zeros(arr.shape, dtype=bool)
    for z in range(arr.shape[0]):
        t = otsu_threshold(arr[z])
        if t is not None:
            mask[z] = arr[z] > t
    return mask


def threshold(volume: Volume, config: SegmentationConfig) -> np.ndarray:
    if config.threshold_mode == "otsu_per_slice":
        return threshold_otsu_per_slice(volume)
    return threshold_fixed(volume, config)


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 6:
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == 26:
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError("connectivity must be 6 or 26")


def label_components(mask: np.ndarray, connectivity: int = 26) -> LabelField:
    """Label connected components, numbered by first encounter in (z, y, x) raster order."""
    mask = np.asarray(mask, dtype=bool)
    raw, n = ndimage.label(mask, structure=_structure(connectivity))
    flat = raw.ravel()
    labels = np.zeros(mask.shape, dtype=np.int32)
    if n == 0:
        return LabelField(labels, {})
    nz = np.flatnonzero(flat)
    # first raster index of every raw label -> rank gives deterministic numbering
    first = np.full(n + 1, flat.size, dtype=np.int64)
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    labels.ravel()[nz] = remap[flat[nz]]
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    return LabelField(labels, {i: int(sizes[i]) for i in range(1, n + 1)})


def component_voxels(labels: np.ndarray, wanted: list[int]) -> dict[int, np.ndarray]:
    """Voxel coordinate arrays (raster order) for each label in ``wanted``."""
    flat = labels.ravel()
    nz = np.flatnonzero(flat)
    lab = flat[nz]
    keep = np.isin(lab, wanted)
    nz, lab = nz[keep], lab[keep]
    order = np.argsort(lab, kind="stable")
    nz, lab = nz[order], lab[order]
    coords = np.stack(np.unravel_index(nz, labels.shape), axis=1).astype(np.int64)
    out = {}
    bounds = np.searchsorted(lab, wanted, side="left"), np.searchsorted(lab, wanted, side="right")
    for w, a, b in zip(wanted, *bounds):
        out[int(w)] = coords[a:b]
    return out


def filter_pores(label_field: LabelField, config: SegmentationConfig = SegmentationConfig()) -> SegmentationResult:
    """Drop the largest component as specimen boundary, keep components in the size window.

    A component is kept iff ``min_voxels_exclusive < A_k < max_fraction_of_largest * A_max``.
    """
    sizes = label_field.component_sizes
    if not sizes:
        raise EmptyMask("mask contains no connected components")
    boundary_label = min(sizes, key=lambda k: (-sizes[k], k))
    a_max = sizes[boundary_label]
    upper = config.max_fraction_of_largest * a_max
    lower = config.min_voxels_exclusive

    warnings = []
    if upper <= lower + 1:
        warnings.append(
            f"NoAdmissibleSizeWindow: {lower} < A_k < {upper:g} admits no integer voxel count"
        )
    others = sorted((sizes[k] for k in sizes if k != boundary_label), reverse=True)
    if others and others[0] > 0.5 * a_max:
        warnings.append(
            f"SuspectBoundary: second-largest component ({others[0]} voxels) exceeds "
            f"half of the excluded boundary ({a_max} voxels)"
        )
    for w in warnings:
        logger.warning(w)

    kept = []
    too_small = too_large = 0
    for lab, a in sizes.items():
        if lab == boundary_label:
            continue
        if a <= lower:
            too_small += 1
        elif a >= upper:
            too_large += 1
        else:
            kept.append(lab)
    kept.sort(key=lambda k: (-sizes[k], k))
    voxels = component_voxels(label_field.labels, kept) if kept else {}
    pores = [PoreRegion(label=k, voxels=voxels[k]) for k in kept]
    return SegmentationResult(
        pores=pores,
        boundary_label=boundary_label,
        boundary_size=a_max,
        rejected_counts={"too_small": too_small, "too_large": too_large},
        warnings=warnings,
    )


def segment(volume: Volume, config: SegmentationConfig = SegmentationConfig()) -> tuple[LabelField, SegmentationResult]:
    mask = threshold(volume, config)
    field_ = label_components(mask, config.connectivity)
    return field_, filter_pores(field_, config)
