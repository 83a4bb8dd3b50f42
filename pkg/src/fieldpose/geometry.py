"""Pinhole camera model, SE(3) poses, twists, rays, and projection.

Conventions used everywhere in this package:

- Camera frame: x right, y down, z forward (OpenCV style). A pose stored as
  camera-to-world maps camera-frame coordinates into the world; its
  translation is the camera center.
- Pixel coordinates are continuous, with integer coordinates at pixel
  centers; the principal point (cx, cy) lies on the optical axis.
- "Depth" is, by default, distance along the unit ray through the pixel
  (the ray-march parameter), not camera-frame z. `backproject` accepts a
  convention flag for the z-depth alternative.
- Angles are reported in degrees, translations in scene units.

All types are immutable values; every function here is pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    InvalidDepthError,
    NearSingularRotationError,
    OutOfBoundsError,
)

_ORTHO_TOL = 1e-9
_REORTHO_CHAIN = 64  # re-orthonormalize rotations after this many compositions


def _vec(x, n: int) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise ValueError(f"expected a {n}-vector, got shape {np.shape(x)}")
    return v


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(w) @ v == cross(w, v)."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, pixel) -> bool:
        """True if the (possibly subpixel) coordinate lies on the image.

        The image extends half a pixel beyond the outermost pixel centers.
        """
        x, y = float(pixel[0]), float(pixel[1])
        return -0.5 <= x <= self.width - 0.5 and -0.5 <= y <= self.height - 0.5

    def to_json(self) -> str:
        return json.dumps(
            {
                "fx": self.fx,
                "fy": self.fy,
                "cx": self.cx,
                "cy": self.cy,
                "width": self.width,
                "height": self.height,
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Intrinsics":
        d = json.loads(text)
        return cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True, eq=False)
class Se3Pose:
    """Rigid transform as a 3x3 rotation plus translation.

    The rotation must be orthonormal with determinant +1 (checked at
    construction). Long composition chains are re-orthonormalized via polar
    decomposition to keep drift bounded.
    """

    rotation: np.ndarray
    translation: np.ndarray
    _chain: int = field(default=0, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = _vec(self.translation, 3)
        err = np.abs(r.T @ r - np.eye(3)).max()
        if err > _ORTHO_TOL:
            raise ValueError(f"rotation is not orthonormal (|R^T R - I| = {err:.3e})")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation must have determinant +1")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Se3Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Se3Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def compose(self, other: "Se3Pose") -> "Se3Pose":
        """self applied after other: (self * other)(x) = self(other(x))."""
        r = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        chain = max(self._chain, other._chain) + 1
        if chain > _REORTHO_CHAIN:
            r = orthonormalize(r)
            chain = 0
        return Se3Pose(r, t, _chain=chain)

    def __matmul__(self, other: "Se3Pose") -> "Se3Pose":
        return self.compose(other)

    def inverse(self) -> "Se3Pose":
        rt = self.rotation.T
        return Se3Pose(rt, -rt @ self.translation, _chain=self._chain)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def allclose(self, other: "Se3Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "rotation": [float(v) for v in self.rotation.reshape(-1)],
                "translation": [float(v) for v in self.translation],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Se3Pose":
        d = json.loads(text)
        return cls(np.array(d["rotation"]).reshape(3, 3), np.array(d["translation"]))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix by polar decomposition."""
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


@dataclass(frozen=True)
class Twist:
    """se(3) element: rotation vector omega (radians) and linear part v."""

    omega: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        o = _vec(self.omega, 3)
        v = _vec(self.v, 3)
        if not (np.isfinite(o).all() and np.isfinite(v).all()):
            raise ValueError("twist components must be finite")
        o.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "omega", o)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = _vec(xi, 6)
        return cls(xi[:3], xi[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.omega, self.v])


@dataclass(frozen=True, eq=False)
class Ray:
    """World-space ray with unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = _vec(self.origin, 3)
        d = _vec(self.direction, 3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        o.flags.writeable = False
        d.flags.writeable = False
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


def _rotation_taylor(theta_sq: float) -> tuple[float, float, float]:
    """Coefficients (a, b, c) with R = I + a*S + b*S^2 and V = I + b*S + c*S^2."""
    if theta_sq < 1e-16:
        # series about zero: sin t / t, (1-cos t)/t^2, (t - sin t)/t^3
        a = 1.0 - theta_sq / 6.0
        b = 0.5 - theta_sq / 24.0
        c = 1.0 / 6.0 - theta_sq / 120.0
    else:
        theta = math.sqrt(theta_sq)
        a = math.sin(theta) / theta
        b = (1.0 - math.cos(theta)) / theta_sq
        c = (theta - math.sin(theta)) / (theta_sq * theta)
    return a, b, c


def exp_twist(xi: Twist) -> Se3Pose:
    """SE(3) exponential map: exp(0) is the identity."""
    omega, v = xi.omega, xi.v
    s = skew(omega)
    s2 = s @ s
    a, b, c = _rotation_taylor(float(omega @ omega))
    r = np.eye(3) + a * s + b * s2
    vmat = np.eye(3) + b * s + c * s2
    return Se3Pose(orthonormalize(r), vmat @ v)


def log_pose(pose: Se3Pose) -> Twist:
    """Inverse of exp_twist for rotation angles away from pi.

    Raises NearSingularRotationError when the rotation angle is within
    1e-6 of pi, where the axis is numerically ill-determined.
    """
    r = pose.rotation
    cos_theta = max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    if theta > math.pi - 1e-6:
        raise NearSingularRotationError(
            f"rotation angle {theta:.9f} rad is too close to pi"
        )
    axis_times_2sin = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < 1e-8:
        omega = 0.5 * axis_times_2sin
    else:
        omega = theta / (2.0 * math.sin(theta)) * axis_times_2sin
    s = skew(omega)
    s2 = s @ s
    theta_sq = theta * theta
    if theta < 1e-4:
        coef = 1.0 / 12.0 + theta_sq / 720.0
    else:
        coef = (1.0 - 0.5 * theta * math.cos(0.5 * theta) / math.sin(0.5 * theta)) / theta_sq
    vinv = np.eye(3) - 0.5 * s + coef * s2
    return Twist(omega, vinv @ pose.translation)


def project(intrinsics: Intrinsics, pose_world_to_cam: Se3Pose, x_world) -> np.ndarray:
    """Project a world point to continuous pixel coordinates.

    Raises BehindCameraError if the camera-frame z is not positive.
    """
    xc = pose_world_to_cam.apply(_vec(x_world, 3))
    if xc[2] <= 1e-9:
        raise BehindCameraError(f"point has camera-frame z = {xc[2]:.3e}")
    return np.array(
        [
            intrinsics.fx * xc[0] / xc[2] + intrinsics.cx,
            intrinsics.fy * xc[1] / xc[2] + intrinsics.cy,
        ]
    )


def project_points(
    intrinsics: Intrinsics, pose_world_to_cam: Se3Pose, x_world: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N, 3) points.

    Returns (pixels (N, 2), z (N,)); entries with z <= 0 hold garbage pixels
    and must be masked by the caller. Never raises.
    """
    xc = pose_world_to_cam.apply(np.asarray(x_world, dtype=float).reshape(-1, 3))
    z = xc[:, 2]
    zsafe = np.where(np.abs(z) < 1e-300, 1e-300, z)
    px = np.stack(
        [
            intrinsics.fx * xc[:, 0] / zsafe + intrinsics.cx,
            intrinsics.fy * xc[:, 1] / zsafe + intrinsics.cy,
        ],
        axis=1,
    )
    return px, z


def backproject(
    intrinsics: Intrinsics,
    pose_cam_to_world: Se3Pose,
    pixel,
    depth: float,
    convention: str = "ray",
) -> np.ndarray:
    """Lift a pixel with known depth to a world point.

    convention="ray" treats depth as distance along the unit ray through the
    pixel (the renderer's t parameter); convention="z" treats it as
    camera-frame z. Raises InvalidDepthError for depth <= 0.
    """
    if depth <= 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    x, y = float(pixel[0]), float(pixel[1])
    d_cam = np.array(
        [(x - intrinsics.cx) / intrinsics.fx, (y - intrinsics.cy) / intrinsics.fy, 1.0]
    )
    if convention == "ray":
        d_world = pose_cam_to_world.rotation @ d_cam
        d_world /= np.linalg.norm(d_world)
        return pose_cam_to_world.translation + depth * d_world
    if convention == "z":
        return pose_cam_to_world.apply(depth * d_cam)
    raise ValueError(f"unknown depth convention {convention!r}")


def pixel_ray(intrinsics: Intrinsics, pose_cam_to_world: Se3Pose, pixel) -> Ray:
    """World-space ray from the camera center through a pixel.

    Raises OutOfBoundsError for pixels outside the image.
    """
    if not intrinsics.contains(pixel):
        raise OutOfBoundsError(
            f"pixel {tuple(float(v) for v in pixel)} outside "
            f"{intrinsics.width}x{intrinsics.height} image"
        )
    x, y = float(pixel[0]), float(pixel[1])
    d_cam = np.array(
        [(x - intrinsics.cx) / intrinsics.fx, (y - intrinsics.cy) / intrinsics.fy, 1.0]
    )
    d_world = pose_cam_to_world.rotation @ d_cam
    d_world /= np.linalg.norm(d_world)
    return Ray(pose_cam_to_world.translation.copy(), d_world)


def rays_for_pixels(
    intrinsics: Intrinsics, pose_cam_to_world: Se3Pose, pixels: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pixel_ray: returns (origins (N, 3), unit directions (N, 3))."""
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    d_cam = np.stack(
        [
            (px[:, 0] - intrinsics.cx) / intrinsics.fx,
            (px[:, 1] - intrinsics.cy) / intrinsics.fy,
            np.ones(len(px)),
        ],
        axis=1,
    )
    d_world = d_cam @ pose_cam_to_world.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose_cam_to_world.translation, d_world.shape).copy()
    return origins, d_world


def rotation_geodesic_deg(a: Se3Pose, b: Se3Pose) -> float:
    """Geodesic angle between the rotations of two poses, in degrees."""
    cos_theta = (np.trace(a.rotation.T @ b.rotation) - 1.0) / 2.0
    cos_theta = max(-1.0, min(1.0, cos_theta))
    return math.degrees(math.acos(cos_theta))


def translation_error(a: Se3Pose, b: Se3Pose) -> float:
    """Euclidean distance between the translations of two poses."""
    return float(np.linalg.norm(a.translation - b.translation))


def look_at(
    camera_center: np.ndarray, target: np.ndarray, up_hint=(0.0, -1.0, 0.0)
) -> Se3Pose:
    """Camera-to-world pose looking from camera_center toward target.

    up_hint picks the roll; default keeps world -y up (camera y points down).
    """
    center = _vec(camera_center, 3)
    z = _vec(target, 3) - center
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise ValueError("camera center coincides with the look-at target")
    z = z / nz
    y_hint = -_vec(up_hint, 3)  # camera y is down
    x = np.cross(y_hint, z)
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        # view direction parallel to up; fall back to an arbitrary safe hint
        y_hint = np.array([0.0, 0.0, 1.0]) if abs(z[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
        x = np.cross(y_hint, z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    r = np.stack([x, y, z], axis=1)
    return Se3Pose(orthonormalize(r), center)


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = _vec(axis, 3)
    n = np.linalg.norm(a)
    if n < 1e-12:
        return np.eye(3)
    s = skew(a / n)
    return np.eye(3) + math.sin(angle_rad) * s + (1.0 - math.cos(angle_rad)) * (s @ s)
