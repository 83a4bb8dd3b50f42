"""Field query, trilinear interpolation, baking, and the VGF1 file format."""

import struct

import numpy as np
import pytest

from fieldpose.errors import GridHeaderError, GridSizeError, NegativeDensityError
from fieldpose.fields import (
    Bounds,
    SolidSphere,
    SphereCluster,
    TexturedBox,
    UniformSlab,
    VoxelGridField,
    bake_analytic,
    load_field,
    query,
    save_field,
)

Z = np.array([0.0, 0.0, 1.0])


def random_grid(rng, res=(4, 5, 6)):
    densities = rng.uniform(0.0, 5.0, size=res)
    colors = rng.uniform(0.0, 1.0, size=res + (3,))
    return VoxelGridField(Bounds([-1, -2, 0], [1, 2, 3]), densities, colors)


class TestQuery:
    def test_outside_bounds_is_empty(self):
        grid = random_grid(np.random.default_rng(0))
        s = query(grid, [5.0, 0.0, 0.0], Z)
        assert s.density == 0.0
        np.testing.assert_array_equal(s.color, np.zeros(3))

    def test_grid_node_returns_stored_value(self):
        rng = np.random.default_rng(1)
        grid = random_grid(rng)
        pos = grid.node_positions()
        for _ in range(20):
            i, j, k = (rng.integers(0, n) for n in grid.resolution)
            s = query(grid, pos[i, j, k], Z)
            assert s.density == pytest.approx(grid.densities[i, j, k], abs=1e-12)
            np.testing.assert_allclose(s.color, grid.colors[i, j, k], atol=1e-12)

    def test_constant_field_at_cell_center(self):
        densities = np.full((3, 3, 3), 4.0)
        colors = np.full((3, 3, 3, 3), 0.5)
        grid = VoxelGridField(Bounds([0, 0, 0], [1, 1, 1]), densities, colors)
        s = query(grid, [0.25, 0.25, 0.25], Z)
        assert s.density == pytest.approx(4.0, abs=1e-12)

    def test_trilinear_exact_for_affine_density(self):
        # density affine in position is reproduced exactly by trilinear interpolation
        rng = np.random.default_rng(2)
        coef = np.array([0.7, -0.3, 0.5])
        offset = 4.0
        bounds = Bounds([-1, -1, -1], [1, 1, 1])
        nodes = np.stack(
            np.meshgrid(*[np.linspace(-1, 1, n) for n in (5, 6, 7)], indexing="ij"),
            axis=-1,
        )
        densities = nodes @ coef + offset
        colors = np.zeros(densities.shape + (3,))
        grid = VoxelGridField(bounds, densities, colors)
        pts = rng.uniform(-1, 1, size=(1000, 3))
        sigma, _ = grid.sample_many(pts)
        np.testing.assert_allclose(sigma, pts @ coef + offset, atol=1e-9)

    def test_query_is_pure(self):
        grid = random_grid(np.random.default_rng(3))
        a = query(grid, [0.1, 0.2, 1.0], Z)
        b = query(grid, [0.1, 0.2, 1.0], Z)
        assert a.density == b.density
        np.testing.assert_array_equal(a.color, b.color)

    def test_rejects_non_unit_direction(self):
        grid = random_grid(np.random.default_rng(4))
        with pytest.raises(ValueError):
            query(grid, [0.0, 0.0, 1.0], [0.0, 0.0, 2.0])


class TestAnalyticFields:
    def test_slab_inside_outside(self):
        slab = UniformSlab(Bounds([0, 0, 0], [1, 1, 1]), density=3.0)
        assert query(slab, [0.5, 0.5, 0.5], Z).density == 3.0
        assert query(slab, [1.5, 0.5, 0.5], Z).density == 0.0

    def test_sphere_inside_outside(self):
        sph = SolidSphere([0, 0, 0], 1.0, 2.0)
        assert query(sph, [0.0, 0.0, 0.9], Z).density == 2.0
        assert query(sph, [0.0, 0.0, 1.1], Z).density == 0.0

    def test_cluster_colors_by_sphere(self):
        cluster = SphereCluster(
            [[0, 0, 0], [3, 0, 0]], [1.0, 1.0], density=5.0,
            colors=[[1, 0, 0], [0, 1, 0]],
        )
        np.testing.assert_array_equal(query(cluster, [0, 0, 0], Z).color, [1, 0, 0])
        np.testing.assert_array_equal(query(cluster, [3, 0, 0], Z).color, [0, 1, 0])
        assert query(cluster, [1.5, 0, 0], Z).density == 0.0

    def test_textured_box_color_in_unit_range(self):
        box = TexturedBox(Bounds([-1, -1, -1], [1, 1, 1]), density=10.0)
        pts = np.random.default_rng(5).uniform(-1, 1, size=(500, 3))
        _, rgb = box.sample_many(pts)
        assert rgb.min() >= 0.0 and rgb.max() <= 1.0


class TestBaking:
    def test_slab_interior_nodes_keep_density(self):
        slab = UniformSlab(Bounds([0, 0, 0], [1, 1, 1]), density=2.5)
        grid = bake_analytic(slab, (64, 64, 64))
        # every node of the grid lies within the slab bounds
        assert np.all(grid.densities == 2.5)

    def test_sphere_nodes_outside_radius_are_zero(self):
        sph = SolidSphere([0, 0, 0], 1.0, 3.0)
        grid = bake_analytic(sph, (32, 32, 32))
        pos = grid.node_positions()
        outside = np.linalg.norm(pos.reshape(-1, 3), axis=1) > 1.0
        assert np.all(grid.densities.reshape(-1)[outside] == 0.0)

    def test_baked_grid_matches_analytic_at_nodes(self):
        sph = SolidSphere([0.1, -0.2, 0.3], 0.8, 7.0)
        grid = bake_analytic(sph, (17, 19, 23))
        pts = grid.node_positions().reshape(-1, 3)
        sigma_grid, rgb_grid = grid.sample_many(pts)
        sigma_true, rgb_true = sph.sample_many(pts)
        np.testing.assert_allclose(sigma_grid, sigma_true, atol=1e-9)
        np.testing.assert_allclose(rgb_grid, rgb_true, atol=1e-9)

    def test_resolution_below_two_rejected(self):
        with pytest.raises(ValueError):
            bake_analytic(SolidSphere([0, 0, 0], 1.0, 1.0), (1, 4, 4))


class TestGridFile:
    def test_round_trip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(6)
        grid = random_grid(rng)
        # store f32-representable values so the round trip is exact
        grid = VoxelGridField(
            grid.bounds,
            grid.densities.astype(np.float32).astype(np.float64),
            grid.colors.astype(np.float32).astype(np.float64),
        )
        path = tmp_path / "scene.vgf"
        save_field(grid, path)
        back = load_field(path)
        assert back.resolution == grid.resolution
        np.testing.assert_array_equal(back.densities, grid.densities)
        np.testing.assert_array_equal(back.colors, grid.colors)
        np.testing.assert_array_equal(back.bounds.lo, grid.bounds.lo)

    def test_bad_magic_raises_header_error(self, tmp_path):
        path = tmp_path / "bad.vgf"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(GridHeaderError):
            load_field(path)

    def test_truncated_payload_raises_size_error(self, tmp_path):
        grid = random_grid(np.random.default_rng(7))
        path = tmp_path / "trunc.vgf"
        save_field(grid, path)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(GridSizeError):
            load_field(path)

    def test_negative_density_raises(self, tmp_path):
        grid = random_grid(np.random.default_rng(8))
        path = tmp_path / "neg.vgf"
        save_field(grid, path)
        data = bytearray(path.read_bytes())
        struct.pack_into("<f", data, 40, -1.0)  # first density value
        path.write_bytes(bytes(data))
        with pytest.raises(NegativeDensityError):
            load_field(path)

    def test_manifest_sidecar(self, tmp_path):
        grid = random_grid(np.random.default_rng(9))
        path = tmp_path / "scene.vgf"
        save_field(grid, path, manifest=True)
        assert (tmp_path / "scene.vgf.json").exists()

    def test_constructor_rejects_negative_density(self):
        with pytest.raises(NegativeDensityError):
            VoxelGridField(
                Bounds([0, 0, 0], [1, 1, 1]),
                np.full((2, 2, 2), -0.5),
                np.zeros((2, 2, 2, 3)),
            )
