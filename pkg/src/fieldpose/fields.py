"""Explicit scene representations with a (position, direction) -> (color, density) query.

Two families stand in for a trained neural field:

- VoxelGridField: trilinearly-interpolated density/color grids, loadable
  from a small binary format ("VGF1").
- Analytic fields (UniformSlab, SolidSphere, TexturedBox, SphereCluster):
  closed-form scenes used as ground truth for oracles and benchmarks.

All provided fields are Lambertian: the view direction is accepted for
interface parity but ignored. Density is extinction per scene unit.
Queries outside a field's occupied region return density 0 and black.
Fields are immutable after construction; concurrent reads are safe.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import GridHeaderError, GridSizeError, NegativeDensityError

_MAGIC = b"VGF1"


@dataclass(frozen=True, eq=False)
class FieldSample:
    """Color in [0,1]^3 plus non-negative density at a query point."""

    color: np.ndarray
    density: float


@dataclass(frozen=True, eq=False)
class Bounds:
    """Axis-aligned box; lo < hi componentwise."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not np.all(hi > lo):
            raise ValueError("bounds must satisfy lo < hi on every axis")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def intersect_rays(
        self, origins: np.ndarray, directions: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Slab test. Returns (t_enter, t_exit, hit) per ray; t clipped to >= 0."""
        o = np.asarray(origins, dtype=float).reshape(-1, 3)
        d = np.asarray(directions, dtype=float).reshape(-1, 3)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(np.abs(d) > 1e-300, 1.0 / d, np.inf)
            t0 = (self.lo - o) * inv
            t1 = (self.hi - o) * inv
        # rays parallel to an axis: interval is (-inf, inf) if inside slab else empty
        parallel = np.abs(d) <= 1e-300
        inside = (o >= self.lo) & (o <= self.hi)
        lo_t = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t0, t1))
        hi_t = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t0, t1))
        t_enter = lo_t.max(axis=1)
        t_exit = hi_t.min(axis=1)
        hit = (t_exit > np.maximum(t_enter, 0.0)) & np.isfinite(t_exit)
        t_enter = np.maximum(t_enter, 0.0)
        return t_enter, t_exit, hit


class VoxelGridField:
    """Density/color grids with trilinear interpolation between grid nodes.

    Node (i, j, k) sits at lo + (i, j, k) / (n - 1) * extent, so the corner
    nodes coincide with the bounds. Outside the bounds the field is empty.
    """

    kind = "voxel-grid"

    def __init__(self, bounds: Bounds, densities: np.ndarray, colors: np.ndarray):
        densities = np.ascontiguousarray(densities, dtype=np.float64)
        colors = np.ascontiguousarray(colors, dtype=np.float64)
        if densities.ndim != 3 or min(densities.shape) < 2:
            raise ValueError("densities must be (nx, ny, nz) with every axis >= 2")
        if colors.shape != densities.shape + (3,):
            raise ValueError("colors must be (nx, ny, nz, 3) matching densities")
        if np.any(densities < 0):
            raise NegativeDensityError("grid contains negative densities")
        densities.flags.writeable = False
        colors.flags.writeable = False
        self.bounds = bounds
        self.densities = densities
        self.colors = colors

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.densities.shape

    def sample_many(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        n = np.array(self.resolution, dtype=float)
        u = (p - self.bounds.lo) / self.bounds.extent * (n - 1.0)
        inside = np.all((p >= self.bounds.lo) & (p <= self.bounds.hi), axis=1)

        idx = np.clip(np.floor(u).astype(np.int64), 0, (n - 2).astype(np.int64))
        f = u - idx
        i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
        fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]

        # weights for the 8 cell corners
        w = [
            (1 - fx) * (1 - fy) * (1 - fz),
            fx * (1 - fy) * (1 - fz),
            (1 - fx) * fy * (1 - fz),
            (1 - fx) * (1 - fy) * fz,
            fx * (1 - fy) * fz,
            (1 - fx) * fy * fz,
            fx * fy * (1 - fz),
            fx * fy * fz,
        ]
        corners = [
            (i, j, k),
            (i + 1, j, k),
            (i, j + 1, k),
            (i, j, k + 1),
            (i + 1, j, k + 1),
            (i, j + 1, k + 1),
            (i + 1, j + 1, k),
            (i + 1, j + 1, k + 1),
        ]
        sigma = np.zeros(len(p))
        rgb = np.zeros((len(p), 3))
        for weight, (ci, cj, ck) in zip(w, corners):
            sigma += weight * self.densities[ci, cj, ck]
            rgb += weight[:, None] * self.colors[ci, cj, ck]
        sigma = np.where(inside, sigma, 0.0)
        rgb = np.where(inside[:, None], rgb, 0.0)
        return sigma, rgb

    def node_positions(self) -> np.ndarray:
        """(nx, ny, nz, 3) world positions of the grid nodes."""
        nx, ny, nz = self.resolution
        axes = [
            np.linspace(self.bounds.lo[a], self.bounds.hi[a], n)
            for a, n in zip(range(3), (nx, ny, nz))
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)


class UniformSlab:
    """Axis-aligned box of constant density and color."""

    kind = "uniform-slab"

    def __init__(self, bounds: Bounds, density: float, color=(0.8, 0.8, 0.8)):
        if density < 0:
            raise ValueError("density must be non-negative")
        self.bounds = bounds
        self.density = float(density)
        self.color = np.asarray(color, dtype=float).reshape(3)

    def sample_many(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = np.all((p >= self.bounds.lo) & (p <= self.bounds.hi), axis=1)
        sigma = np.where(inside, self.density, 0.0)
        rgb = np.where(inside[:, None], self.color, 0.0)
        return sigma, rgb


class SolidSphere:
    """Ball of constant density and color."""

    kind = "solid-sphere"

    def __init__(self, center, radius: float, density: float, color=(0.9, 0.3, 0.2)):
        if radius <= 0 or density < 0:
            raise ValueError("radius must be positive and density non-negative")
        self.center = np.asarray(center, dtype=float).reshape(3)
        self.radius = float(radius)
        self.density = float(density)
        self.color = np.asarray(color, dtype=float).reshape(3)
        r = np.full(3, self.radius)
        self.bounds = Bounds(self.center - r, self.center + r)

    def sample_many(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = np.einsum("ij,ij->i", p - self.center, p - self.center) <= self.radius**2
        sigma = np.where(inside, self.density, 0.0)
        rgb = np.where(inside[:, None], self.color, 0.0)
        return sigma, rgb


def _hash01(*ints: np.ndarray) -> np.ndarray:
    """Deterministic uniform-ish values in [0, 1) from integer lattices."""
    h = np.zeros_like(np.broadcast_arrays(*ints)[0], dtype=np.uint64)
    for k, arr in enumerate(ints):
        h = h ^ (arr.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15 + 2 * k + 1))
        h = h * np.uint64(0xBF58476D1CE4E5B9)
        h = h ^ (h >> np.uint64(31))
    return (h >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _hash_u64(*ints: np.ndarray) -> np.ndarray:
    """Mixed 64-bit lattice hash (same mixing as _hash01, full word out)."""
    h = np.zeros_like(np.broadcast_arrays(*ints)[0], dtype=np.uint64)
    for k, arr in enumerate(ints):
        h = h ^ (arr.astype(np.int64).astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15 + 2 * k + 1))
        h = h * np.uint64(0xBF58476D1CE4E5B9)
        h = h ^ (h >> np.uint64(31))
    return h


def _value_noise_rgb(u: np.ndarray, cells: int, salt: int) -> np.ndarray:
    """Trilinearly interpolated hashed lattice colors; aperiodic, in [0, 1).

    One hash per lattice corner; the three channels take disjoint 21-bit
    fields of the hash word.
    """
    v = u * cells
    base = np.floor(v).astype(np.int64)
    f = v - base
    f = f * f * (3.0 - 2.0 * f)  # smoothstep fade
    out = np.zeros((len(u), 3))
    shifts = (np.uint64(43), np.uint64(22), np.uint64(1))
    mask21 = np.uint64((1 << 21) - 1)
    inv21 = 1.0 / float(1 << 21)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                h = _hash_u64(
                    base[:, 0] + dx, base[:, 1] + dy, base[:, 2] + dz + salt * 7919
                )
                wx = f[:, 0] if dx else 1.0 - f[:, 0]
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                weight = wx * wy * wz
                for ch, sh in enumerate(shifts):
                    vals = ((h >> sh) & mask21).astype(np.float64) * inv21
                    out[:, ch] += vals * weight
    return out


class TexturedBox:
    """Axis-aligned box of constant density with an aperiodic color pattern.

    Colors come from multi-octave value noise (incommensurate lattice
    frequencies), so patch correlation is distinctive and the photometric
    landscape has no repeating false minima.
    """

    kind = "textured-box"

    def __init__(self, bounds: Bounds, density: float, octaves=(3, 7, 16)):
        if density < 0:
            raise ValueError("density must be non-negative")
        self.bounds = bounds
        self.density = float(density)
        self.octaves = tuple(int(c) for c in octaves)

    def sample_many(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        inside = np.all((p >= self.bounds.lo) & (p <= self.bounds.hi), axis=1)
        u = (p - self.bounds.lo) / self.bounds.extent
        rgb = np.zeros((len(p), 3))
        weight = 0.0
        for oi, cells in enumerate(self.octaves):
            amp = 1.0 / (oi + 1)
            rgb += amp * _value_noise_rgb(u, cells, salt=oi)
            weight += amp
        rgb = 0.1 + 0.85 * rgb / weight
        rgb = np.clip(rgb, 0.0, 1.0)
        sigma = np.where(inside, self.density, 0.0)
        rgb = np.where(inside[:, None], rgb, 0.0)
        return sigma, rgb


class SphereCluster:
    """Several solid spheres; silhouette-rich test scene."""

    kind = "sphere-cluster"

    def __init__(self, centers, radii, density: float, colors=None):
        self.centers = np.asarray(centers, dtype=float).reshape(-1, 3)
        self.radii = np.asarray(radii, dtype=float).reshape(-1)
        if len(self.centers) != len(self.radii) or len(self.centers) == 0:
            raise ValueError("need one radius per center, at least one sphere")
        if np.any(self.radii <= 0) or density < 0:
            raise ValueError("radii must be positive and density non-negative")
        self.density = float(density)
        if colors is None:
            k = np.arange(len(self.radii))
            colors = np.stack(
                [_hash01(k, k + 3), _hash01(k + 11, k), _hash01(k, k + 29)], axis=1
            )
            colors = 0.2 + 0.8 * colors
        self.colors = np.asarray(colors, dtype=float).reshape(-1, 3)
        lo = (self.centers - self.radii[:, None]).min(axis=0)
        hi = (self.centers + self.radii[:, None]).max(axis=0)
        self.bounds = Bounds(lo, hi)

    def sample_many(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        sigma = np.zeros(len(p))
        rgb = np.zeros((len(p), 3))
        hit_any = np.zeros(len(p), dtype=bool)
        for c, r, col in zip(self.centers, self.radii, self.colors):
            d2 = np.einsum("ij,ij->i", p - c, p - c)
            inside = d2 <= r * r
            fresh = inside & ~hit_any
            rgb[fresh] = col
            hit_any |= inside
        sigma[hit_any] = self.density
        return sigma, rgb


def analytic_first_hit(field, origins: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Distance to the first surface crossing per ray; NaN for misses.

    Supported for the closed-form fields (spheres, boxes). Used by the
    evaluation harness to construct appearance-true correspondences at
    silhouettes.
    """
    o = np.asarray(origins, dtype=float).reshape(-1, 3)
    d = np.asarray(directions, dtype=float).reshape(-1, 3)
    if isinstance(field, (UniformSlab, TexturedBox)):
        t0, _, hit = field.bounds.intersect_rays(o, d)
        return np.where(hit, t0, np.nan)
    if isinstance(field, SolidSphere):
        return _sphere_hits(o, d, field.center[None], np.array([field.radius]))
    if isinstance(field, SphereCluster):
        return _sphere_hits(o, d, field.centers, field.radii)
    raise TypeError(f"no analytic surface for field of kind {getattr(field, 'kind', '?')}")


def _sphere_hits(o, d, centers, radii):
    best = np.full(len(o), np.inf)
    for c, r in zip(centers, radii):
        oc = o - c
        b = np.einsum("ij,ij->i", oc, d)
        disc = b * b - (np.einsum("ij,ij->i", oc, oc) - r * r)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_near = -b - sq
        t_far = -b + sq
        t = np.where(t_near > 1e-9, t_near, np.where(t_far > 1e-9, t_far, np.inf))
        best = np.minimum(best, np.where(ok, t, np.inf))
    return np.where(np.isfinite(best), best, np.nan)


def query(field, x, d) -> FieldSample:
    """Point query of any field; d must be unit length (Lambertian fields ignore it)."""
    d = np.asarray(d, dtype=float).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("query direction must be unit length")
    sigma, rgb = field.sample_many(np.asarray(x, dtype=float).reshape(1, 3))
    return FieldSample(color=rgb[0], density=float(sigma[0]))


def bake_analytic(field, resolution) -> VoxelGridField:
    """Sample an analytic field at grid nodes spanning its bounds."""
    nx, ny, nz = (int(v) for v in resolution)
    if min(nx, ny, nz) < 2:
        raise ValueError("resolution must be >= 2 per axis")
    b = field.bounds
    axes = [np.linspace(b.lo[a], b.hi[a], n) for a, n in zip(range(3), (nx, ny, nz))]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
    sigma, rgb = field.sample_many(pts)
    return VoxelGridField(
        b, sigma.reshape(nx, ny, nz), rgb.reshape(nx, ny, nz, 3)
    )


def save_field(grid: VoxelGridField, path, manifest: bool = False) -> None:
    """Write the VGF1 binary format (little-endian f32 payload)."""
    path = Path(path)
    nx, ny, nz = grid.resolution
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<3I", nx, ny, nz))
        f.write(np.concatenate([grid.bounds.lo, grid.bounds.hi]).astype("<f4").tobytes())
        f.write(grid.densities.astype("<f4").tobytes())
        f.write(grid.colors.astype("<f4").tobytes())
    if manifest:
        meta = {
            "resolution": [nx, ny, nz],
            "bounds_lo": [float(v) for v in grid.bounds.lo],
            "bounds_hi": [float(v) for v in grid.bounds.hi],
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2))


def load_field(path) -> VoxelGridField:
    """Read the VGF1 binary format, validating header and payload."""
    data = Path(path).read_bytes()
    if len(data) < 4 + 12 + 24 or data[:4] != _MAGIC:
        raise GridHeaderError(f"{path}: not a VGF1 grid file")
    nx, ny, nz = struct.unpack_from("<3I", data, 4)
    if min(nx, ny, nz) < 2:
        raise GridHeaderError(f"{path}: resolution {nx}x{ny}x{nz} below 2 per axis")
    bounds_vals = np.frombuffer(data, dtype="<f4", count=6, offset=16).astype(float)
    if not np.all(bounds_vals[3:] > bounds_vals[:3]):
        raise GridHeaderError(f"{path}: degenerate bounds in header")
    n = nx * ny * nz
    expected = 16 + 24 + 4 * n + 12 * n
    if len(data) != expected:
        raise GridSizeError(f"{path}: payload is {len(data)} bytes, expected {expected}")
    densities = np.frombuffer(data, dtype="<f4", count=n, offset=40).astype(np.float64)
    colors = np.frombuffer(data, dtype="<f4", count=3 * n, offset=40 + 4 * n).astype(
        np.float64
    )
    if np.any(densities < 0):
        raise NegativeDensityError(f"{path}: file stores negative densities")
    return VoxelGridField(
        Bounds(bounds_vals[:3], bounds_vals[3:]),
        densities.reshape(nx, ny, nz),
        colors.reshape(nx, ny, nz, 3),
    )
