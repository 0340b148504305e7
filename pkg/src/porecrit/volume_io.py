"""Volumetric grid I/O: PGM slice stacks, raw blobs and synthetic specimens.

A volume is stored on disk either as a directory of binary PGM (P5) slices,
ordered lexicographically by filename along z, or as a single little-endian
u8 blob next to a ``key: value`` manifest giving ``z``, ``y``, ``x`` and
``dtype``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError, InconsistentStack, NoSlices, PlacementFailure

PGM_SUFFIX = ".pgm"
RAW_SUFFIX = ".raw"
MANIFEST_SUFFIX = ".manifest"


@dataclass(frozen=True)
class Volume:
    """Dense 8-bit intensity grid indexed ``(z, y, x)``."""

    intensities: np.ndarray
    voxel_spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.intensities)
        if arr.ndim != 3:
            raise FormatError(f"volume must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise FormatError(f"volume dims must all be >= 1, got {arr.shape}")
        if arr.dtype != np.uint8:
            raise FormatError(f"only 8-bit volumes are supported, got dtype {arr.dtype}")
        arr = np.ascontiguousarray(arr)
        if arr is self.intensities:
            arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "intensities", arr)
        object.__setattr__(self, "voxel_spacing", tuple(float(s) for s in self.voxel_spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.intensities.shape)  # type: ignore[return-value]


# --------------------------------------------------------------------------
# PGM
# --------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*([^\s#]+)")


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM image into a ``(height, width)`` uint8 array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path.name}: cannot read ({exc})") from exc

    pos = 0
    tokens = []
    for _ in range(4):
        m = _PGM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{path.name}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P5":
        raise FormatError(f"{path.name}: not a binary PGM (magic {magic!r})")
    try:
        width, height, maxval_i = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path.name}: malformed PGM header") from exc
    if width < 1 or height < 1:
        raise FormatError(f"{path.name}: non-positive image size {width}x{height}")
    if maxval_i > 255:
        raise FormatError(f"{path.name}: 16-bit PGM (maxval {maxval_i}) is not supported")
    if maxval_i < 1:
        raise FormatError(f"{path.name}: invalid maxval {maxval_i}")
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"{path.name}: missing raster separator")
    raster = data[pos + 1:]
    if len(raster) != width * height:
        raise FormatError(
            f"{path.name}: expected {width * height} raster bytes, found {len(raster)}"
        )
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width).copy()


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise FormatError("PGM writer expects a 2D uint8 array")
    height, width = image.shape
    header = b"P5\n%d %d\n255\n" % (width, height)
    Path(path).write_bytes(header + np.ascontiguousarray(image).tobytes())


def write_stack(volume: Volume | np.ndarray, directory: str | Path, prefix: str = "slice_") -> list[Path]:
    """Write one PGM per z-slice; filenames sort lexicographically in z order."""
    arr = volume.intensities if isinstance(volume, Volume) else np.asarray(volume)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(arr.shape[0] - 1)))
    paths = []
    for z in range(arr.shape[0]):
        p = directory / f"{prefix}{z:0{width}d}{PGM_SUFFIX}"
        write_pgm(p, arr[z])
        paths.append(p)
    return paths


# --------------------------------------------------------------------------
# raw blob + manifest
# --------------------------------------------------------------------------

def write_raw(volume: Volume, directory: str | Path, stem: str = "volume") -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    z, y, x = volume.dims
    blob = directory / f"{stem}{RAW_SUFFIX}"
    manifest = directory / f"{stem}{MANIFEST_SUFFIX}"
    blob.write_bytes(volume.intensities.tobytes())
    manifest.write_text(f"z: {z}\ny: {y}\nx: {x}\ndtype: u8\n", encoding="utf-8")
    return blob, manifest


def _parse_manifest(path: Path) -> dict[str, str]:
    entries = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            # tolerate "dtype=u8" style lines
            key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path.name}: malformed manifest line {line!r}")
        entries[key.strip().lower()] = value.strip()
    return entries


def _load_raw(directory: Path) -> Volume:
    manifests = sorted(directory.glob(f"*{MANIFEST_SUFFIX}"))
    if not manifests:
        raise NoSlices(f"{directory}: no raw manifest found")
    if len(manifests) > 1:
        raise FormatError(f"{directory}: multiple manifests {[m.name for m in manifests]}")
    manifest = manifests[0]
    entries = _parse_manifest(manifest)
    try:
        dims = tuple(int(entries[k]) for k in ("z", "y", "x"))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{manifest.name}: needs integer z, y, x entries") from exc
    dtype = entries.get("dtype", "u8")
    if dtype != "u8":
        raise FormatError(f"{manifest.name}: unsupported dtype {dtype!r} (only u8)")
    blob = manifest.with_suffix(RAW_SUFFIX)
    if not blob.exists():
        raise NoSlices(f"{directory}: manifest {manifest.name} has no matching {blob.name}")
    data = blob.read_bytes()
    if len(data) != math.prod(dims):
        raise FormatError(f"{blob.name}: expected {math.prod(dims)} bytes, found {len(data)}")
    return Volume(np.frombuffer(data, dtype=np.uint8).reshape(dims))


def load_stack(directory_path: str | Path, format_hint: str = "pgm") -> Volume:
    """Load a slice stack (``format_hint="pgm"``) or raw blob (``"raw"``)."""
    directory = Path(directory_path)
    if format_hint == "raw":
        return _load_raw(directory)
    if format_hint != "pgm":
        raise FormatError(f"unknown format hint {format_hint!r}")
    if not directory.is_dir():
        raise NoSlices(f"{directory}: not a directory")
    files = sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() == PGM_SUFFIX),
        key=lambda p: p.name,
    )
    if not files:
        raise NoSlices(f"{directory}: no {PGM_SUFFIX} slices")
    slices = []
    shape = None
    for f in files:
        img = read_pgm(f)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise InconsistentStack(
                f"{f.name}: slice is {img.shape[1]}x{img.shape[0]}, expected {shape[1]}x{shape[0]}",
                filename=f.name,
            )
        slices.append(img)
    return Volume(np.stack(slices))


# --------------------------------------------------------------------------
# synthetic specimens
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Hollow cylindrical shell with bright spherical pores planted inside it."""

    dims: tuple[int, int, int] = (64, 64, 64)
    shell_inner_radius_fraction: float = 0.8
    shell_intensity: int = 255
    pore_count: int = 10
    pore_radius_range: tuple[float, float] = (1.5, 3.0)
    pore_intensity: int = 255
    radial_bias: float = 0.6
    background_intensity: int = 40
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "pore_radius_range", tuple(float(r) for r in self.pore_radius_range))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {self.dims}")
        for name in ("shell_intensity", "pore_intensity", "background_intensity"):
            v = getattr(self, name)
            if not 0 <= v <= 255:
                raise ValueError(f"{name} must lie in [0, 255], got {v}")
        if not 0.0 < self.shell_inner_radius_fraction < 1.0:
            raise ValueError("shell_inner_radius_fraction must lie in (0, 1)")
        if self.pore_count < 0:
            raise ValueError("pore_count must be >= 0")
        lo, hi = self.pore_radius_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid pore_radius_range {self.pore_radius_range}")
        if not 0.0 <= self.radial_bias <= 1.0:
            raise ValueError("radial_bias must lie in [0, 1]")

    def is_detectable(self, threshold: int) -> bool:
        return (
            self.pore_intensity >= threshold
            and self.shell_intensity >= threshold
            and self.background_intensity < threshold
        )

    @property
    def axis_center(self) -> tuple[float, float]:
        _, y, x = self.dims
        return (y - 1) / 2.0, (x - 1) / 2.0

    @property
    def outer_radius(self) -> float:
        return min(self.dims[1], self.dims[2]) / 2.0

    @property
    def inner_radius(self) -> float:
        return self.shell_inner_radius_fraction * self.outer_radius

    def to_dict(self) -> dict:
        return {
            "dims": list(self.dims),
            "shell_inner_radius_fraction": self.shell_inner_radius_fraction,
            "shell_intensity": self.shell_intensity,
            "pore_count": self.pore_count,
            "pore_radius_range": list(self.pore_radius_range),
            "pore_intensity": self.pore_intensity,
            "radial_bias": self.radial_bias,
            "background_intensity": self.background_intensity,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(**d)


@dataclass(frozen=True)
class PlantedPore:
    center: tuple[float, float, float]
    radius: float
    voxel_count: int


@dataclass(frozen=True)
class GroundTruth:
    pores: list[PlantedPore] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["pore_index,z,y,x,radius,voxel_count"]
        for i, p in enumerate(self.pores):
            z, y, x = p.center
            lines.append(f"{i},{z!r},{y!r},{x!r},{p.radius!r},{p.voxel_count}")
        return "\n".join(lines) + "\n"


# Minimum clearance (voxels) between planted objects; > sqrt(3) keeps spheres
# from touching under 26-connectivity.
_CLEARANCE = 2.0


def _ball_offsets(center: Sequence[float], radius: float, dims: Sequence[int]):
    """Integer voxel coordinates within ``radius`` of ``center``, clipped to ``dims``."""
    lo = [max(0, math.ceil(c - radius)) for c in center]
    hi = [min(d - 1, math.floor(c + radius)) for c, d in zip(center, dims)]
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
    coords = np.stack([g.ravel() for g in grids], axis=1)
    d2 = ((coords - np.asarray(center)) ** 2).sum(axis=1)
    return coords[d2 <= radius * radius]


def shell_mask(spec: SyntheticSpec) -> np.ndarray:
    z, y, x = spec.dims
    cy, cx = spec.axis_center
    yy, xx = np.meshgrid(np.arange(y) - cy, np.arange(x) - cx, indexing="ij")
    rho = np.hypot(yy, xx)
    ring = (rho >= spec.inner_radius) & (rho <= spec.outer_radius)
    return np.broadcast_to(ring, (z, y, x))


def generate_synthetic_volume(spec: SyntheticSpec) -> tuple[Volume, GroundTruth]:
    """Render a shell specimen with ``spec.pore_count`` disjoint spherical pores.

    Pore centres are rejection-sampled inside the shell bore with radial
    coordinate ``R_max * u**(1 - radial_bias)``; a bias near 1 pushes pores
    towards the shell. The result is a pure function of ``spec``.
    """
    rng = np.random.default_rng(spec.seed)
    nz, ny, nx = spec.dims
    cy, cx = spec.axis_center
    r_lo, r_hi = spec.pore_radius_range
    exponent = 1.0 - spec.radial_bias

    centers = np.empty((spec.pore_count, 3))
    radii = np.empty(spec.pore_count)
    budget = 1000 * spec.pore_count
    attempts = 0
    placed = 0
    while placed < spec.pore_count:
        if attempts >= budget:
            raise PlacementFailure(
                f"placed {placed}/{spec.pore_count} pores after {attempts} attempts; "
                f"volume {spec.dims} is too small"
            )
        attempts += 1
        r = rng.uniform(r_lo, r_hi)
        u, theta, w = rng.random(3)
        r_max = spec.inner_radius - r - _CLEARANCE
        z_span = (nz - 1) - 2 * r
        if r_max < 0 or z_span < 0:
            continue
        rho = r_max * u ** exponent
        phi = 2 * math.pi * theta
        c = np.array([r + w * z_span, cy + rho * math.sin(phi), cx + rho * math.cos(phi)])
        if placed:
            gaps = np.sqrt(((centers[:placed] - c) ** 2).sum(axis=1)) - radii[:placed] - r
            if gaps.min() <= _CLEARANCE:
                continue
        centers[placed] = c
        radii[placed] = r
        placed += 1

    arr = np.full(spec.dims, spec.background_intensity, dtype=np.uint8)
    arr[shell_mask(spec)] = spec.shell_intensity
    pores = []
    for c, r in zip(centers, radii):
        coords = _ball_offsets(c, r, spec.dims)
        arr[coords[:, 0], coords[:, 1], coords[:, 2]] = spec.pore_intensity
        pores.append(PlantedPore(center=tuple(float(v) for v in c), radius=float(r),
                                 voxel_count=int(len(coords))))
    return Volume(arr), GroundTruth(pores)
