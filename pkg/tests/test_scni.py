import numpy as np
import pytest

from aedd.errors import InvalidParameterError
from aedd.rk import NodeSet, build_grid_nodes, rk_shape_functions
from aedd.scni import (
    dump_voronoi_csv,
    polygon_area,
    rectangle_domain,
    smoothed_gradients,
    smoothed_small_strain,
    voronoi_partition,
)

UNIT_SQUARE = rectangle_domain(1.0, 1.0)


def shoelace_oracle(vertices):
    """Independent shoelace evaluation via the triangle-fan expansion."""
    total = 0.0
    for i in range(1, len(vertices) - 1):
        a = vertices[i] - vertices[0]
        b = vertices[i + 1] - vertices[0]
        total += 0.5 * (a[0] * b[1] - a[1] * b[0])
    return total


class TestVoronoi:
    def test_two_symmetric_nodes(self):
        part = voronoi_partition(np.array([[0.25, 0.5], [0.75, 0.5]]), UNIT_SQUARE)
        np.testing.assert_allclose(part.areas, [0.5, 0.5], rtol=1e-12)
        for cell, lo, hi in zip(part.cells, (0.0, 0.5), (0.5, 1.0)):
            assert cell.vertices[:, 0].min() == pytest.approx(lo, abs=1e-12)
            assert cell.vertices[:, 0].max() == pytest.approx(hi, abs=1e-12)

    def test_four_quarter_centers(self):
        pts = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
        part = voronoi_partition(pts, UNIT_SQUARE)
        np.testing.assert_allclose(part.areas, 0.25, rtol=1e-12)

    def test_random_nodes_partition_domain(self):
        rng = np.random.default_rng(8)
        pts = rng.uniform(0.02, 0.98, (40, 2))
        part = voronoi_partition(pts, UNIT_SQUARE)
        oracle_total = sum(shoelace_oracle(c.vertices) for c in part.cells)
        assert part.areas.sum() == pytest.approx(1.0, rel=1e-10)
        assert oracle_total == pytest.approx(1.0, rel=1e-10)
        for cell, p in zip(part.cells, pts):
            assert polygon_area(cell.vertices) > 0
            # generating node inside its own cell
            v = cell.vertices
            for i in range(len(v)):
                edge = v[(i + 1) % len(v)] - v[i]
                rel = p - v[i]
                assert edge[0] * rel[1] - edge[1] * rel[0] > -1e-12

    def test_duplicate_nodes_rejected(self):
        with pytest.raises(InvalidParameterError, match="duplicate"):
            voronoi_partition(np.array([[0.5, 0.5], [0.5, 0.5]]), UNIT_SQUARE)

    def test_nonconvex_domain_rejected(self):
        domain = np.array([[0, 0], [2, 0], [2, 2], [1, 0.5], [0, 2]], dtype=float)
        with pytest.raises(InvalidParameterError, match="convex"):
            voronoi_partition(np.array([[0.2, 0.2]]), domain)

    def test_conformity_edges_match(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0.05, 0.95, (25, 2))
        part = voronoi_partition(pts, UNIT_SQUARE)
        interior = {}
        exterior_length = 0.0
        for cell in part.cells:
            for a, b, length, normal in cell.edges():
                mid = 0.5 * (a + b)
                on_b = (
                    min(mid[0], mid[1], 1 - mid[0], 1 - mid[1]) < 1e-9
                )
                if on_b:
                    exterior_length += length
                else:
                    key = tuple(np.round(np.sort([a, b], axis=0).ravel(), 9))
                    interior.setdefault(key, []).append(normal)
        assert exterior_length == pytest.approx(4.0, abs=1e-10)
        for key, normals in interior.items():
            assert len(normals) == 2
            np.testing.assert_allclose(normals[0], -normals[1], atol=1e-9)


class TestSmoothedGradients:
    def setup_method(self):
        self.nodes = build_grid_nodes(9, 5, 4.0, 1.0, jitter=0.2, seed=7)
        part = voronoi_partition(self.nodes, rectangle_domain(4.0, 1.0))
        self.data = smoothed_gradients(part, self.nodes)

    def test_linear_field_constant_strain(self):
        coeffs = np.zeros((len(self.nodes), 2))
        coeffs[:, 0] = self.nodes.coordinates[:, 0]  # u = (x1, 0)
        for L in range(len(self.data)):
            strain = smoothed_small_strain(self.data, coeffs, L)
            np.testing.assert_allclose(strain, [1.0, 0.0, 0.0], atol=1e-8)

    def test_gradient_partition_of_unity(self):
        for cell in self.data.cells:
            np.testing.assert_allclose(cell.btilde.sum(axis=0), 0.0, atol=1e-9)

    def test_linear_completeness_of_smoothed_gradient(self):
        # area-weighted smoothed gradient of the coordinate functions is the
        # identity: the boundary trapezoid rule integrates linear fields
        # exactly, so both quadrature densities agree to machine precision
        for cell in self.data.cells:
            coords = self.nodes.coordinates[cell.neighbors]
            grad = cell.btilde.T @ coords  # d x_j / d x_i
            np.testing.assert_allclose(grad, np.eye(2), atol=1e-9)

    def test_interior_flux_cancellation(self):
        # summing area-weighted gradients over all cells leaves only the
        # exterior boundary integral of each shape function
        n = len(self.nodes)
        total = np.zeros((n, 2))
        for cell in self.data.cells:
            total[cell.neighbors] += cell.area * cell.btilde
        boundary = np.zeros((n, 2))
        for seg in self.data.boundary_segments:
            for idx, val in (seg.psi_start, seg.psi_end):
                boundary[idx] += 0.5 * seg.length * val[:, None] * seg.normal[None, :]
        np.testing.assert_allclose(total, boundary, atol=1e-10)

    def test_shape_value_rows_sum_to_one(self):
        np.testing.assert_allclose(self.data.shape_at_nodes.sum(axis=1), 1.0, atol=1e-10)

    def test_boundary_segment_total_length(self):
        total = sum(seg.length for seg in self.data.boundary_segments)
        assert total == pytest.approx(2 * (4.0 + 1.0), rel=1e-10)


class TestDump:
    def test_dump_round_trip(self, tmp_path):
        nodes = build_grid_nodes(3, 3, 1.0, 1.0)
        part = voronoi_partition(nodes, UNIT_SQUARE)
        path = tmp_path / "voronoi.csv"
        dump_voronoi_csv(part, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "node_id,vertex_index,x,y"
        n_vertices = sum(len(c.vertices) for c in part.cells)
        assert len(lines) == n_vertices + 1
