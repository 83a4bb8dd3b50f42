"""Lifting and 3D-consistent mining tests.

Front-surface lift accuracy is checked against the analytic ray-sphere
intersection; silhouette behavior against a paired construction on the
sphere scene (grazing pixels have unstable rendered depth, so their lifted
points must score much worse than interior ones).
"""

import numpy as np
import pytest

from fieldpose.correspond import (
    Correspondence,
    MiningConfig,
    bilinear,
    consistency_score,
    consistency_scores,
    lift,
    load_correspondences_csv,
    mine,
    resolve_gamma,
    sample_nearby_views,
    save_correspondences_csv,
    score_correspondences,
)
from fieldpose.errors import TooFewPointsError
from fieldpose.fields import SolidSphere
from fieldpose.geometry import (
    Ray,
    project,
    rotation_geodesic_deg,
)
from fieldpose.matching import Match2D
from fieldpose.renderer import RenderConfig, render_ray, render_view

from conftest import orbit_camera

OPAQUE = SolidSphere(center=(0.0, 0.0, 0.0), radius=1.0, density=500.0)
CFG = RenderConfig(samples_per_ray=256, rng_seed=4)


def match_at(p, q=None):
    p = np.asarray(p, dtype=float)
    return Match2D(q=p if q is None else np.asarray(q, dtype=float), p=p, confidence=1.0)


class TestBilinear:
    def test_exact_at_grid_points(self):
        rng = np.random.default_rng(0)
        img = rng.random((5, 7))
        for _ in range(10):
            y, x = rng.integers(0, 5), rng.integers(0, 7)
            assert bilinear(img, [[x, y]])[0] == pytest.approx(img[y, x], abs=1e-12)

    def test_interpolates_linear_ramp(self):
        xs, ys = np.meshgrid(np.arange(8), np.arange(6))
        img = 2.0 * xs + 3.0 * ys
        pts = np.array([[1.5, 2.25], [4.75, 0.5]])
        np.testing.assert_allclose(
            bilinear(img, pts), 2.0 * pts[:, 0] + 3.0 * pts[:, 1], atol=1e-12
        )


class TestLift:
    def test_background_match_dropped(self, small_intrinsics):
        pose = orbit_camera(OPAQUE, 0.0, 0.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        assert view.opacity[2, 2] < 0.05  # corner pixel sees empty space
        out = lift([match_at([2.0, 2.0])], view.depth, view.opacity, small_intrinsics, pose)
        assert out == []

    def test_empty_input(self, small_intrinsics):
        pose = orbit_camera(OPAQUE, 0.0, 0.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        assert lift([], view.depth, view.opacity, small_intrinsics, pose) == []

    def test_sphere_center_pixel_hits_front_surface(self, small_intrinsics):
        pose = orbit_camera(OPAQUE, 30.0, 20.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        center_px = [small_intrinsics.cx, small_intrinsics.cy]
        out = lift([match_at(center_px)], view.depth, view.opacity, small_intrinsics, pose)
        assert len(out) == 1
        # analytic first intersection of the central ray with the sphere
        cam = pose.translation
        d = OPAQUE.bounds.center - cam
        dist = np.linalg.norm(d)
        t_hit = dist - OPAQUE.radius
        t0, t1, _ = OPAQUE.bounds.intersect_rays(cam[None], (d / dist)[None])
        tol = 2.0 * 1.1 * (t1[0] - t0[0]) / CFG.samples_per_ray + 1.0 / OPAQUE.density
        assert np.linalg.norm(out[0].x - (cam + t_hit * d / dist)) < tol

    def test_reprojects_to_source_pixel(self, small_intrinsics):
        pose = orbit_camera(OPAQUE, -20.0, 10.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        rng = np.random.default_rng(1)
        ys, xs = np.nonzero(view.opacity > 0.95)
        sel = rng.choice(len(xs), 30, replace=False)
        matches = [match_at([float(xs[i]), float(ys[i])]) for i in sel]
        out = lift(matches, view.depth, view.opacity, small_intrinsics, pose)
        assert len(out) == 30
        for c in out:
            reproj = project(small_intrinsics, pose.inverse(), c.x)
            assert np.linalg.norm(reproj - c.q) < 0.5

    def test_never_behind_camera(self, small_intrinsics):
        pose = orbit_camera(OPAQUE, 75.0, -25.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        ys, xs = np.nonzero(view.opacity > 0.5)
        matches = [match_at([float(x), float(y)]) for x, y in zip(xs[::7], ys[::7])]
        out = lift(matches, view.depth, view.opacity, small_intrinsics, pose)
        w2c = pose.inverse()
        for c in out:
            assert w2c.apply(c.x)[2] > 0


class TestNearbyViews:
    def test_tiny_angle_keeps_pose(self):
        pose = orbit_camera(OPAQUE, 40.0, 15.0)
        views = sample_nearby_views(pose, OPAQUE.bounds.center, 4, 1e-9, rng_seed=0)
        for v in views:
            assert np.abs(v.rotation - pose.rotation).max() < 1e-9
            assert np.abs(v.translation - pose.translation).max() < 1e-9

    def test_angle_lands_in_band(self):
        pose = orbit_camera(OPAQUE, 10.0, 30.0)
        views = sample_nearby_views(pose, OPAQUE.bounds.center, 4, 5.0, rng_seed=1)
        assert len(views) == 4
        for v in views:
            assert 4.0 <= rotation_geodesic_deg(v, pose) <= 6.0

    def test_pivot_distance_preserved(self):
        pose = orbit_camera(OPAQUE, -35.0, -10.0)
        pivot = OPAQUE.bounds.center
        d0 = np.linalg.norm(pose.translation - pivot)
        for v in sample_nearby_views(pose, pivot, 6, 8.0, rng_seed=2):
            assert np.linalg.norm(v.translation - pivot) == pytest.approx(d0, abs=1e-9)

    def test_deterministic_per_seed(self):
        pose = orbit_camera(OPAQUE, 0.0, 45.0)
        a = sample_nearby_views(pose, OPAQUE.bounds.center, 3, 5.0, rng_seed=7)
        b = sample_nearby_views(pose, OPAQUE.bounds.center, 3, 5.0, rng_seed=7)
        for va, vb in zip(a, b):
            assert va.allclose(vb, atol=0.0)


class TestConsistencyScore:
    def test_zero_for_identical_views_exact_point(self):
        cfg = RenderConfig(samples_per_ray=128, stratified=False)
        pose = orbit_camera(OPAQUE, 25.0, 5.0)
        o = pose.translation
        d = OPAQUE.bounds.center - o
        d /= np.linalg.norm(d)
        color, depth, opac = render_ray(OPAQUE, Ray(o, d), cfg)
        x = o + depth * d
        m = consistency_score(OPAQUE, x, [pose, pose, pose], cfg)
        assert m == pytest.approx(0.0, abs=1e-20)

    def test_permutation_invariant(self):
        pose = orbit_camera(OPAQUE, 25.0, 5.0)
        views = sample_nearby_views(pose, OPAQUE.bounds.center, 4, 5.0, rng_seed=3)
        x = OPAQUE.bounds.center + np.array([0.0, 0.0, -OPAQUE.radius])
        m1 = consistency_score(OPAQUE, x, views, CFG)
        m2 = consistency_score(OPAQUE, x, views[::-1], CFG)
        assert m1 == pytest.approx(m2, rel=1e-12)

    def test_front_surface_consistent(self, small_intrinsics):
        pose = orbit_camera(OPAQUE, 0.0, 10.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        center_px = [small_intrinsics.cx, small_intrinsics.cy]
        [c] = lift([match_at(center_px)], view.depth, view.opacity, small_intrinsics, pose)
        views = sample_nearby_views(pose, OPAQUE.bounds.center, 4, 2.0, rng_seed=4)
        m = consistency_score(OPAQUE, c.x, views, CFG)
        t0, t1, _ = OPAQUE.bounds.intersect_rays(
            pose.translation[None], ((OPAQUE.bounds.center - pose.translation)
                                     / np.linalg.norm(OPAQUE.bounds.center - pose.translation))[None]
        )
        bound = (2.0 * 1.1 * (t1[0] - t0[0]) / CFG.samples_per_ray) ** 2 * 4
        assert m < bound

    def test_silhouette_much_worse_than_surface(self, small_intrinsics):
        # a baked voxel grid has a trilinear-smoothed boundary, so grazing
        # pixels carry unstable depth like an imperfectly learned field
        from fieldpose.fields import bake_analytic

        field = bake_analytic(OPAQUE, (48, 48, 48))
        pose = orbit_camera(field, 0.0, 0.0)
        view = render_view(field, small_intrinsics, pose, CFG)
        views = sample_nearby_views(pose, field.bounds.center, 4, 5.0, rng_seed=5)

        # interior pixels: nearly full opacity; silhouette: partial opacity
        interior = np.argwhere(view.opacity > 0.98)
        grazing = np.argwhere((view.opacity > 0.5) & (view.opacity < 0.9))
        assert len(grazing) >= 5 and len(interior) >= 20
        rng = np.random.default_rng(6)
        int_px = interior[rng.choice(len(interior), 20, replace=False)][:, ::-1]
        gr_px = grazing[rng.choice(len(grazing), min(10, len(grazing)), replace=False)][:, ::-1]

        int_corr = lift([match_at(p.astype(float)) for p in int_px],
                        view.depth, view.opacity, small_intrinsics, pose)
        gr_corr = lift([match_at(p.astype(float)) for p in gr_px],
                       view.depth, view.opacity, small_intrinsics, pose)
        m_int = consistency_scores(field, np.array([c.x for c in int_corr]), views, CFG)
        m_gr = consistency_scores(field, np.array([c.x for c in gr_corr]), views, CFG)
        assert np.median(m_gr) > 10.0 * np.median(m_int)


class TestMine:
    def _lifted(self, small_intrinsics, n=30):
        pose = orbit_camera(OPAQUE, 15.0, 20.0)
        view = render_view(OPAQUE, small_intrinsics, pose, CFG)
        ys, xs = np.nonzero(view.opacity > 0.95)
        rng = np.random.default_rng(7)
        sel = rng.choice(len(xs), n, replace=False)
        matches = [match_at([float(xs[i]), float(ys[i])]) for i in sel]
        return pose, lift(matches, view.depth, view.opacity, small_intrinsics, pose)

    def test_infinite_gamma_keeps_all(self, small_intrinsics):
        pose, corr = self._lifted(small_intrinsics)
        out = mine(corr, OPAQUE, MiningConfig(gamma=np.inf), CFG, pose)
        assert len(out) == len(corr)
        np.testing.assert_array_equal([c.q for c in out], [c.q for c in corr])

    def test_tiny_gamma_raises(self, small_intrinsics):
        pose, corr = self._lifted(small_intrinsics)
        with pytest.raises(TooFewPointsError):
            mine(corr, OPAQUE, MiningConfig(gamma=1e-30), CFG, pose)

    def test_monotone_in_gamma(self, small_intrinsics):
        pose, corr = self._lifted(small_intrinsics)
        scored = score_correspondences(corr, OPAQUE, MiningConfig(), CFG, pose)
        ms = sorted(c.m for c in scored)
        g1, g2 = ms[len(ms) // 2], ms[-1] + 1e-12
        s1 = mine(corr, OPAQUE, MiningConfig(gamma=g1), CFG, pose)
        s2 = mine(corr, OPAQUE, MiningConfig(gamma=g2), CFG, pose)
        keys1 = {tuple(c.q) for c in s1}
        keys2 = {tuple(c.q) for c in s2}
        assert keys1 <= keys2

    def test_survivors_are_subset_in_order(self, small_intrinsics):
        pose, corr = self._lifted(small_intrinsics)
        out = mine(corr, OPAQUE, MiningConfig(), CFG, pose)
        qs_in = [tuple(c.q) for c in corr]
        qs_out = [tuple(c.q) for c in out]
        it = iter(qs_in)
        assert all(q in it for q in qs_out)  # subsequence check

    def test_default_gamma_is_scale_relative(self):
        g = resolve_gamma(MiningConfig(), OPAQUE)
        assert g == pytest.approx((0.01 * OPAQUE.bounds.diagonal) ** 2)


class TestSerialization:
    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        corr = [
            Correspondence(
                q=rng.uniform(0, 100, 2),
                x=rng.normal(size=3),
                m=float(rng.uniform(0, 1e-3)),
                source_confidence=float(rng.uniform()),
            )
            for _ in range(8)
        ]
        path = tmp_path / "corr.csv"
        save_correspondences_csv(corr, path)
        back = load_correspondences_csv(path)
        for a, b in zip(corr, back):
            np.testing.assert_array_equal(a.q, b.q)
            np.testing.assert_array_equal(a.x, b.x)
            assert a.m == b.m
