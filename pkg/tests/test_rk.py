import numpy as np
import pytest

from aedd.errors import CoverageError, InvalidParameterError
from aedd.rk import NodeSet, build_grid_nodes, cubic_bspline, rk_shape_functions, shape_matrix


class TestKernel:
    def test_value_at_zero(self):
        assert cubic_bspline(0.0) == pytest.approx(2.0 / 3.0, rel=1e-15)

    def test_value_at_half_from_both_branches(self):
        # evaluate both polynomial branches by hand at y = 0.5
        near = 2 / 3 - 4 * 0.25 + 4 * 0.125
        far = 4 / 3 - 4 * 0.5 + 4 * 0.25 - 4 / 3 * 0.125
        assert near == pytest.approx(far, rel=1e-14)
        assert cubic_bspline(0.5) == pytest.approx(1.0 / 6.0, rel=1e-13)

    def test_support_edge_and_beyond(self):
        assert cubic_bspline(1.0) == 0.0
        assert cubic_bspline(2.5) == 0.0

    def test_c2_continuity_at_half(self):
        # first and second derivative jumps vanish at the branch point
        h = 1e-6
        for order, tol in ((1, 1e-5), (2, 1e-3)):
            left = np.polyfit([0.5 - 3 * h, 0.5 - 2 * h, 0.5 - h],
                              [cubic_bspline(0.5 - 3 * h), cubic_bspline(0.5 - 2 * h), cubic_bspline(0.5 - h)], 2)
            right = np.polyfit([0.5 + h, 0.5 + 2 * h, 0.5 + 3 * h],
                               [cubic_bspline(0.5 + h), cubic_bspline(0.5 + 2 * h), cubic_bspline(0.5 + 3 * h)], 2)
            d_left = np.polyval(np.polyder(left, order), 0.5)
            d_right = np.polyval(np.polyder(right, order), 0.5)
            assert d_left == pytest.approx(d_right, abs=tol)

    def test_negative_argument_rejected(self):
        with pytest.raises(InvalidParameterError):
            cubic_bspline(-0.1)


def beam_nodes():
    return build_grid_nodes(41, 5, 100.0, 0.7, jitter=0.25, seed=3)


class TestShapeFunctions:
    def test_partition_of_unity_and_linear_reproduction(self):
        nodes = beam_nodes()
        rng = np.random.default_rng(0)
        pts = np.column_stack([rng.uniform(0, 100, 200), rng.uniform(0, 0.7, 200)])
        for p in pts:
            idx, vals = rk_shape_functions(p, nodes)
            assert abs(vals.sum() - 1.0) <= 1e-10
            recon = vals @ nodes.coordinates[idx]
            assert np.linalg.norm(recon - p) <= 1e-9

    def test_translation_invariance(self):
        nodes = build_grid_nodes(6, 6, 2.0, 2.0, jitter=0.2, seed=1)
        shift = np.array([13.7, -4.2])
        shifted = NodeSet(nodes.coordinates + shift, nodes.supports)
        p = np.array([0.9, 1.4])
        idx_a, val_a = rk_shape_functions(p, nodes)
        idx_b, val_b = rk_shape_functions(p + shift, shifted)
        np.testing.assert_array_equal(idx_a, idx_b)
        np.testing.assert_allclose(val_a, val_b, atol=1e-12)

    def test_order_zero_symmetric_pair(self):
        nodes = NodeSet([[0.0, 0.0], [1.0, 0.0]], [2.0, 2.0], basis_order=0)
        idx, vals = rk_shape_functions([0.5, 0.0], nodes)
        np.testing.assert_allclose(vals, [0.5, 0.5])

    def test_coverage_error_far_point(self):
        nodes = build_grid_nodes(4, 4, 1.0, 1.0)
        with pytest.raises(CoverageError):
            rk_shape_functions([50.0, 50.0], nodes)

    def test_coverage_error_collinear(self):
        nodes = NodeSet([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], [3.0, 3.0])
        with pytest.raises(CoverageError):
            rk_shape_functions([1.0, 0.2], nodes)

    def test_shape_matrix_rows(self):
        nodes = build_grid_nodes(5, 3, 4.0, 1.0, jitter=0.1, seed=2)
        a = shape_matrix(nodes, nodes.coordinates)
        np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
        assert np.linalg.matrix_rank(a) == len(nodes)


class TestGridBuilder:
    def test_boundary_nodes_fixed(self):
        nodes = build_grid_nodes(11, 4, 10.0, 1.0, jitter=0.25, seed=9)
        coords = nodes.coordinates
        on_boundary = (
            (np.abs(coords[:, 0]) < 1e-12)
            | (np.abs(coords[:, 0] - 10.0) < 1e-12)
            | (np.abs(coords[:, 1]) < 1e-12)
            | (np.abs(coords[:, 1] - 1.0) < 1e-12)
        )
        # boundary count for a tensor grid: 2*nx + 2*(ny-2)
        assert on_boundary.sum() == 2 * 11 + 2 * 2

    def test_jitter_bounded(self):
        nx, ny, L, H = 11, 4, 10.0, 1.0
        regular = build_grid_nodes(nx, ny, L, H, jitter=0.0)
        jittered = build_grid_nodes(nx, ny, L, H, jitter=0.25, seed=4)
        dx, dy = L / (nx - 1), H / (ny - 1)
        shift = np.abs(jittered.coordinates - regular.coordinates)
        assert np.all(shift[:, 0] <= 0.25 * dx + 1e-12)
        assert np.all(shift[:, 1] <= 0.25 * dy + 1e-12)

    def test_deterministic(self):
        a = build_grid_nodes(7, 3, 5.0, 1.0, jitter=0.2, seed=5)
        b = build_grid_nodes(7, 3, 5.0, 1.0, jitter=0.2, seed=5)
        np.testing.assert_array_equal(a.coordinates, b.coordinates)
