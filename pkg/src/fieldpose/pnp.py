"""Pose from 2D-3D correspondences: EPnP inside a RANSAC loop with refit.

EPnP expresses the n world points as barycentric combinations of 4 control
points (centroid plus principal directions; 3 control points when the
points are coplanar), stacks the 2n projection constraints into M, and
recovers the control points in the camera frame from the null space of M.
Candidate null-space dimensionalities N = 1..3 are each solved for the
combination weights (betas), polished by Gauss-Newton on the inter-control-
point distances, scored by reprojection, and the best is kept. The rigid
transform world->camera then comes from Procrustes alignment.

RANSAC samples minimal subsets uniformly (correspondence confidence is
recorded but unused), counts inliers under a reprojection threshold,
adapts its iteration bound from the best inlier ratio, and refits on the
final consensus set with one Gauss-Newton reprojection refinement.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateConfigurationError, NoConsensusError, TooFewPointsError
from .geometry import Intrinsics, Se3Pose, Twist, exp_twist, orthonormalize, skew
from .correspond import Correspondence

_PLANAR_REL = 1e-7   # smallest principal stddev relative to largest
_COLLINEAR_REL = 1e-7


@dataclass(frozen=True)
class RansacConfig:
    reprojection_threshold_px: float = 2.0
    max_iterations: int = 1000
    confidence: float = 0.999
    min_sample: int = 4
    rng_seed: int = 0

    def __post_init__(self):
        if self.reprojection_threshold_px <= 0:
            raise ValueError("reprojection_threshold_px must be positive")
        if self.min_sample < 4:
            raise ValueError("min_sample must be >= 4")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class PnpResult:
    pose_world_to_cam: Se3Pose
    inlier_mask: np.ndarray
    mean_inlier_reprojection_px: float
    iterations_used: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "pose": json.loads(self.pose_world_to_cam.to_json()),
                "inliers": [int(i) for i in np.flatnonzero(self.inlier_mask)],
                "mean_inlier_reprojection_px": self.mean_inlier_reprojection_px,
                "iterations_used": self.iterations_used,
            }
        )


def _reprojection_errors(
    pose_w2c: Se3Pose, points: np.ndarray, pixels: np.ndarray, intrinsics: Intrinsics
) -> np.ndarray:
    """Per-point pixel error; points behind the camera get +inf."""
    xc = pose_w2c.apply(points)
    z = xc[:, 2]
    good = z > 1e-9
    errs = np.full(len(points), np.inf)
    if good.any():
        u = intrinsics.fx * xc[good, 0] / z[good] + intrinsics.cx
        v = intrinsics.fy * xc[good, 1] / z[good] + intrinsics.cy
        errs[good] = np.hypot(u - pixels[good, 0], v - pixels[good, 1])
    return errs


def _kabsch(src: np.ndarray, dst: np.ndarray) -> Se3Pose:
    """Rigid transform with dst ~= R @ src + t (least squares)."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Se3Pose(orthonormalize(r), mu_d - r @ mu_s)


def _control_points(points: np.ndarray) -> np.ndarray:
    """Centroid + principal directions; (4,3) in general, (3,3) when planar."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered / len(points)
    w, v = np.linalg.eigh(cov)  # ascending eigenvalues
    scale = np.sqrt(np.maximum(w, 0.0))
    if scale[2] < 1e-12 or scale[1] <= _COLLINEAR_REL * scale[2]:
        raise DegenerateConfigurationError("points are (nearly) collinear")
    if scale[0] <= _PLANAR_REL * scale[2]:
        return np.stack(
            [centroid + scale[2] * v[:, 2], centroid + scale[1] * v[:, 1], centroid]
        )
    return np.stack(
        [
            centroid + scale[2] * v[:, 2],
            centroid + scale[1] * v[:, 1],
            centroid + scale[0] * v[:, 0],
            centroid,
        ]
    )


def _barycentric(points: np.ndarray, cps: np.ndarray) -> np.ndarray:
    """(n, ncp) coefficients alpha with points = alpha @ cps, rows sum to 1."""
    ncp = len(cps)
    a = np.concatenate([cps.T, np.ones((1, ncp))])  # (4, ncp)
    b = np.concatenate([points.T, np.ones((1, len(points)))])  # (4, n)
    if ncp == 4:
        alphas = np.linalg.solve(a, b)
    else:
        alphas, *_ = np.linalg.lstsq(a, b, rcond=None)
    return alphas.T


def _build_m(pixels: np.ndarray, alphas: np.ndarray, intrinsics: Intrinsics) -> np.ndarray:
    n, ncp = alphas.shape
    fx, fy, cx, cy = intrinsics.fx, intrinsics.fy, intrinsics.cx, intrinsics.cy
    m = np.zeros((2 * n, 3 * ncp))
    du = cx - pixels[:, 0]
    dv = cy - pixels[:, 1]
    for j in range(ncp):
        m[0::2, 3 * j] = alphas[:, j] * fx
        m[0::2, 3 * j + 2] = alphas[:, j] * du
        m[1::2, 3 * j + 1] = alphas[:, j] * fy
        m[1::2, 3 * j + 2] = alphas[:, j] * dv
    return m


def _pairwise_sq_dists(cps: np.ndarray) -> np.ndarray:
    ncp = len(cps)
    out = []
    for i in range(ncp):
        for j in range(i + 1, ncp):
            d = cps[i] - cps[j]
            out.append(d @ d)
    return np.array(out)


def _pair_diffs(kernel: np.ndarray, ncp: int) -> list[np.ndarray]:
    """Per control-point pair, the (3, nv) difference blocks of the kernel."""
    blocks = kernel.reshape(ncp, 3, -1)
    diffs = []
    for i in range(ncp):
        for j in range(i + 1, ncp):
            diffs.append(blocks[i] - blocks[j])
    return diffs


def _betas_case1(kernel: np.ndarray, rho: np.ndarray, ncp: int) -> np.ndarray:
    diffs = _pair_diffs(kernel, ncp)
    num = 0.0
    den = 0.0
    for d, r in zip(diffs, rho):
        v = d[:, 0]
        num += math.sqrt(v @ v) * math.sqrt(r)
        den += v @ v
    beta = num / den if den > 0 else 0.0
    out = np.zeros(kernel.shape[1])
    out[0] = beta
    return out


def _betas_case2(kernel: np.ndarray, rho: np.ndarray, ncp: int) -> np.ndarray:
    # unknowns [b11, b12, b22]
    diffs = _pair_diffs(kernel, ncp)
    rows = []
    for d in diffs:
        v1, v2 = d[:, 0], d[:, 1]
        rows.append([v1 @ v1, 2.0 * (v1 @ v2), v2 @ v2])
    sol, *_ = np.linalg.lstsq(np.array(rows), rho, rcond=None)
    b11, b12, b22 = sol
    out = np.zeros(kernel.shape[1])
    out[0] = math.sqrt(abs(b11))
    out[1] = math.copysign(math.sqrt(abs(b22)), b11 * b12)
    return out


def _betas_case3(kernel: np.ndarray, rho: np.ndarray, ncp: int) -> np.ndarray:
    # unknowns [b11, b12, b13, b22, b23, b33]
    diffs = _pair_diffs(kernel, ncp)
    rows = []
    for d in diffs:
        v1, v2, v3 = d[:, 0], d[:, 1], d[:, 2]
        rows.append(
            [
                v1 @ v1,
                2.0 * (v1 @ v2),
                2.0 * (v1 @ v3),
                v2 @ v2,
                2.0 * (v2 @ v3),
                v3 @ v3,
            ]
        )
    sol, *_ = np.linalg.lstsq(np.array(rows), rho, rcond=None)
    out = np.zeros(kernel.shape[1])
    out[0] = math.sqrt(abs(sol[0]))
    out[1] = math.copysign(math.sqrt(abs(sol[3])), sol[0] * sol[1])
    out[2] = math.copysign(math.sqrt(abs(sol[5])), sol[0] * sol[2])
    return out


def _gauss_newton_betas(
    kernel: np.ndarray, betas: np.ndarray, rho: np.ndarray, ncp: int, iters: int = 8
) -> np.ndarray:
    diffs = _pair_diffs(kernel, ncp)
    quad = np.stack([d.T @ d for d in diffs])  # (npairs, nv, nv)
    betas = betas.copy()
    for _ in range(iters):
        jac_half = quad @ betas  # (npairs, nv)
        res = np.einsum("pi,i->p", jac_half, betas) - rho
        jac = 2.0 * jac_half
        try:
            step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        except np.linalg.LinAlgError:
            break
        betas = betas + step
    return betas


def _pose_from_betas(
    kernel: np.ndarray, betas: np.ndarray, alphas: np.ndarray, points: np.ndarray
) -> Se3Pose:
    ncp = alphas.shape[1]
    cc = (kernel @ betas).reshape(ncp, 3)
    pc = alphas @ cc
    if pc[:, 2].mean() < 0:  # cheirality: points must sit in front of the camera
        pc = -pc
    return _kabsch(points, pc)


def epnp(points_world: np.ndarray, pixels: np.ndarray, intrinsics: Intrinsics) -> Se3Pose:
    """EPnP pose (world-to-camera) from n >= 4 correspondences.

    Raises DegenerateConfigurationError for collinear configurations and
    TooFewPointsError below 4 points.
    """
    points = np.asarray(points_world, dtype=float).reshape(-1, 3)
    px = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(points) != len(px):
        raise ValueError("points and pixels must pair up")
    if len(points) < 4:
        raise TooFewPointsError(f"EPnP needs >= 4 points, got {len(points)}")

    cps = _control_points(points)
    ncp = len(cps)
    alphas = _barycentric(points, cps)
    m = _build_m(px, alphas, intrinsics)
    # full matrices: for minimal point counts the null space extends beyond
    # the row-rank singular vectors
    _, _, vt = np.linalg.svd(m, full_matrices=True)
    nv = 4 if ncp == 4 else 3
    kernel = vt[-nv:][::-1].T  # (3*ncp, nv), most-null vector first
    rho = _pairwise_sq_dists(cps)

    best_pose = None
    best_err = np.inf
    n_cases = 3 if ncp == 4 else 2
    for case in range(1, n_cases + 1):
        solver = (_betas_case1, _betas_case2, _betas_case3)[case - 1]
        betas = solver(kernel, rho, ncp)
        betas = _gauss_newton_betas(kernel, betas, rho, ncp)
        try:
            pose = _pose_from_betas(kernel, betas, alphas, points)
        except np.linalg.LinAlgError:
            continue
        errs = _reprojection_errors(pose, points, px, intrinsics)
        err = np.mean(np.where(np.isfinite(errs), errs, 1e12))
        if err < best_err:
            best_err = err
            best_pose = pose
    if best_pose is None:
        raise DegenerateConfigurationError("no EPnP candidate produced a valid pose")
    return best_pose


def refine_reprojection(
    pose: Se3Pose,
    correspondences: list[Correspondence] | tuple[np.ndarray, np.ndarray],
    intrinsics: Intrinsics,
    iterations: int = 10,
) -> Se3Pose:
    """Damped Gauss-Newton on the twist minimizing total squared pixel error.

    Accepts either Correspondence objects or a (points, pixels) pair.
    The objective never increases across accepted steps; if no improving
    step exists the input pose is returned.
    """
    if isinstance(correspondences, tuple):
        points, pixels = correspondences
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    else:
        points = np.array([c.x for c in correspondences])
        pixels = np.array([c.q for c in correspondences])

    def objective(p: Se3Pose) -> float:
        errs = _reprojection_errors(p, points, pixels, intrinsics)
        return float(np.sum(np.where(np.isfinite(errs), errs, 1e6) ** 2))

    current = pose
    cur_obj = objective(current)
    for _ in range(iterations):
        xc = current.apply(points)
        z = xc[:, 2]
        good = z > 1e-9
        if good.sum() < 3:
            break
        xg = xc[good]
        zg = xg[:, 2]
        u = intrinsics.fx * xg[:, 0] / zg + intrinsics.cx
        v = intrinsics.fy * xg[:, 1] / zg + intrinsics.cy
        res = np.stack([u - pixels[good, 0], v - pixels[good, 1]], axis=1).reshape(-1)
        # d(pixel)/d(camera point)
        dpx = np.zeros((good.sum(), 2, 3))
        dpx[:, 0, 0] = intrinsics.fx / zg
        dpx[:, 0, 2] = -intrinsics.fx * xg[:, 0] / zg**2
        dpx[:, 1, 1] = intrinsics.fy / zg
        dpx[:, 1, 2] = -intrinsics.fy * xg[:, 1] / zg**2
        # d(camera point)/d(twist), left-multiplicative: [-skew(Xc) | I]
        dxc = np.zeros((good.sum(), 3, 6))
        for i, x in enumerate(xg):
            dxc[i, :, :3] = -skew(x)
            dxc[i, :, 3:] = np.eye(3)
        jac = np.einsum("nij,njk->nik", dpx, dxc).reshape(-1, 6)
        h = jac.T @ jac
        g = jac.T @ res
        try:
            delta = np.linalg.solve(h + 1e-12 * np.eye(6), -g)
        except np.linalg.LinAlgError:
            break
        accepted = False
        scale = 1.0
        for _ in range(12):
            cand = exp_twist(Twist(scale * delta[:3], scale * delta[3:])) @ current
            cand_obj = objective(cand)
            if cand_obj < cur_obj:
                current = cand
                cur_obj = cand_obj
                accepted = True
                break
            scale *= 0.5
        if not accepted:
            break
    return current


def ransac_pnp(
    correspondences: list[Correspondence], intrinsics: Intrinsics, config: RansacConfig
) -> PnpResult:
    """RANSAC around EPnP with inlier refit; deterministic per seed.

    Raises TooFewPointsError below min_sample inputs and NoConsensusError
    when no hypothesis reaches min_sample inliers.
    """
    n = len(correspondences)
    if n < config.min_sample:
        raise TooFewPointsError(f"need >= {config.min_sample} correspondences, got {n}")
    points = np.array([c.x for c in correspondences])
    pixels = np.array([c.q for c in correspondences])
    rng = np.random.default_rng(config.rng_seed)
    thresh = config.reprojection_threshold_px

    best_mask = None
    best_count = 0
    best_pose = None
    needed = config.max_iterations
    it = 0
    while it < min(needed, config.max_iterations):
        it += 1
        sample = rng.choice(n, size=config.min_sample, replace=False)
        try:
            pose = epnp(points[sample], pixels[sample], intrinsics)
        except DegenerateConfigurationError:
            continue
        errs = _reprojection_errors(pose, points, pixels, intrinsics)
        mask = errs <= thresh
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
            best_pose = pose
            ratio = count / n
            if ratio >= 1.0:
                needed = it
            else:
                fail = 1.0 - ratio**config.min_sample
                needed = (
                    config.max_iterations
                    if fail >= 1.0
                    else math.ceil(math.log(1.0 - config.confidence) / math.log(fail))
                )

    if best_count < config.min_sample or best_mask is None:
        raise NoConsensusError(
            f"no hypothesis reached {config.min_sample} inliers in {it} iterations"
        )

    # refit on the consensus set, then polish with reprojection Gauss-Newton
    final_pose = best_pose
    try:
        refit = epnp(points[best_mask], pixels[best_mask], intrinsics)
        refit = refine_reprojection(
            refit, (points[best_mask], pixels[best_mask]), intrinsics
        )
        if (_reprojection_errors(refit, points, pixels, intrinsics) <= thresh).sum() >= best_count:
            final_pose = refit
        else:
            final_pose = refine_reprojection(
                best_pose, (points[best_mask], pixels[best_mask]), intrinsics
            )
    except DegenerateConfigurationError:
        pass

    errs = _reprojection_errors(final_pose, points, pixels, intrinsics)
    mask = errs <= thresh
    if mask.sum() < config.min_sample:
        mask = best_mask
        final_pose = best_pose
        errs = _reprojection_errors(final_pose, points, pixels, intrinsics)
    return PnpResult(
        pose_world_to_cam=final_pose,
        inlier_mask=mask,
        mean_inlier_reprojection_px=float(errs[mask].mean()),
        iterations_used=it,
    )
