"""Conforming Voronoi cells and nodally smoothed gradients.

Each node's cell is the intersection of the convex domain polygon with the
bisector half-planes against all other nodes, so shared edges coincide
exactly between neighbors.  Gradients are smoothed per cell by the
divergence theorem with a two-point trapezoidal rule on every polygon
segment; this reproduces gradients of linear fields exactly, which is what
the nodal integration needs for the linear patch test.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError
from .rk import NodeSet, rk_shape_functions

_MERGE_EPS = 1e-12


def polygon_area(vertices: np.ndarray) -> float:
    """Signed shoelace area (positive for counterclockwise loops)."""
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _ensure_ccw(vertices: np.ndarray) -> np.ndarray:
    return vertices if polygon_area(vertices) > 0 else vertices[::-1]


def _cross2(a: np.ndarray, b: np.ndarray) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _is_convex(vertices: np.ndarray) -> bool:
    v = _ensure_ccw(vertices)
    n = len(v)
    for i in range(n):
        a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
        if _cross2(b - a, c - b) < -1e-12 * np.abs(v).max() ** 2:
            return False
    return True


def _clip_half_plane(poly: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    """Keep the part of the polygon with normal . x <= offset."""
    if len(poly) == 0:
        return poly
    side = poly @ normal - offset
    result = []
    n = len(poly)
    for i in range(n):
        j = (i + 1) % n
        inside_i, inside_j = side[i] <= 0.0, side[j] <= 0.0
        if inside_i:
            result.append(poly[i])
        if inside_i != inside_j:
            t = side[i] / (side[i] - side[j])
            result.append(poly[i] + t * (poly[j] - poly[i]))
    if not result:
        return np.zeros((0, 2))
    out = np.asarray(result)
    keep = [0]
    scale = max(np.abs(out).max(), 1.0)
    for i in range(1, len(out)):
        if np.abs(out[i] - out[keep[-1]]).max() > _MERGE_EPS * scale:
            keep.append(i)
    if len(keep) > 1 and np.abs(out[keep[0]] - out[keep[-1]]).max() <= _MERGE_EPS * scale:
        keep.pop()
    return out[keep]


@dataclass(frozen=True)
class VoronoiCell:
    node: int
    vertices: np.ndarray  # (m, 2), counterclockwise
    area: float

    def edges(self):
        """(start, end, length, outward unit normal) per polygon segment."""
        v = self.vertices
        for i in range(len(v)):
            a, b = v[i], v[(i + 1) % len(v)]
            tangent = b - a
            length = float(np.hypot(*tangent))
            normal = np.array([tangent[1], -tangent[0]]) / length
            yield a, b, length, normal


@dataclass(frozen=True)
class VoronoiPartition:
    cells: list
    domain: np.ndarray

    @property
    def areas(self) -> np.ndarray:
        return np.array([c.area for c in self.cells])

    @property
    def domain_area(self) -> float:
        return polygon_area(self.domain)


def voronoi_partition(nodes, domain) -> VoronoiPartition:
    """Voronoi cells of the nodes clipped to a convex polygonal domain."""
    coords = nodes.coordinates if isinstance(nodes, NodeSet) else np.atleast_2d(np.asarray(nodes, dtype=float))
    domain = _ensure_ccw(np.atleast_2d(np.asarray(domain, dtype=float)))
    if len(domain) < 3:
        raise InvalidParameterError("domain polygon needs at least 3 vertices")
    if not _is_convex(domain):
        raise InvalidParameterError("domain polygon must be convex")
    n = len(coords)
    scale = max(np.abs(coords).max(), 1.0)
    for i in range(n):
        d = np.abs(coords[i + 1 :] - coords[i]).max(axis=1) if i + 1 < n else np.array([1.0])
        if i + 1 < n and d.min() < 1e-12 * scale:
            j = i + 1 + int(np.argmin(d))
            raise InvalidParameterError(f"duplicate nodes {i} and {j}")
    cells = []
    for i in range(n):
        poly = domain.copy()
        others = np.delete(np.arange(n), i)
        dist = np.linalg.norm(coords[others] - coords[i], axis=1)
        for j in others[np.argsort(dist, kind="stable")]:
            radius = np.linalg.norm(poly - coords[i], axis=1).max()
            if np.linalg.norm(coords[j] - coords[i]) / 2.0 > radius:
                break
            normal = coords[j] - coords[i]
            offset = float(normal @ (coords[i] + coords[j]) / 2.0)
            poly = _clip_half_plane(poly, normal, offset)
        if len(poly) < 3:
            raise InvalidParameterError(f"node {i} produced an empty Voronoi cell")
        poly = _ensure_ccw(poly)
        cells.append(VoronoiCell(i, poly, polygon_area(poly)))
    return VoronoiPartition(cells, domain)


def _on_domain_boundary(point: np.ndarray, domain: np.ndarray, tol: float) -> bool:
    n = len(domain)
    for i in range(n):
        a, b = domain[i], domain[(i + 1) % n]
        ab = b - a
        t = np.clip(np.dot(point - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        if np.linalg.norm(point - (a + t * ab)) <= tol:
            return True
    return False


@dataclass(frozen=True)
class BoundarySegment:
    """Exterior cell segment with shape values at its trapezoid points."""

    cell: int
    start: np.ndarray
    end: np.ndarray
    length: float
    normal: np.ndarray
    psi_start: tuple  # (indices, values)
    psi_end: tuple


@dataclass(frozen=True)
class CellShapeData:
    node: int
    neighbors: np.ndarray  # supporting node indices for this cell
    psi_node: np.ndarray  # shape values at the cell's node, aligned to neighbors
    btilde: np.ndarray  # (len(neighbors), 2) smoothed gradient coefficients
    area: float


@dataclass(frozen=True)
class SmoothedShapeData:
    """Per-cell smoothed gradients plus boundary data for the whole mesh."""

    cells: list
    boundary_segments: list
    shape_at_nodes: np.ndarray  # dense (N, N): row j holds all shape values at node j
    areas: np.ndarray
    domain: np.ndarray

    def __len__(self) -> int:
        return len(self.cells)


def smoothed_gradients(partition: VoronoiPartition, nodes: NodeSet) -> SmoothedShapeData:
    """Cell-averaged shape gradients via boundary trapezoidal integration."""
    n = len(nodes)
    scale = max(np.abs(partition.domain).max(), 1.0)
    tol = 1e-9 * scale
    cells_out = []
    segments = []
    for cell in partition.cells:
        verts = cell.vertices
        vert_shapes = [rk_shape_functions(v, nodes) for v in verts]
        node_idx, node_vals = rk_shape_functions(nodes.coordinates[cell.node], nodes)
        union = np.unique(
            np.concatenate([idx for idx, _ in vert_shapes] + [node_idx])
        )
        slot = {node: s for s, node in enumerate(union)}
        accum = np.zeros((union.size, 2))
        m = len(verts)
        for i in range(m):
            j = (i + 1) % m
            a, b = verts[i], verts[j]
            tangent = b - a
            length = float(np.hypot(*tangent))
            normal = np.array([tangent[1], -tangent[0]]) / length
            idx_a, val_a = vert_shapes[i]
            idx_b, val_b = vert_shapes[j]
            half = 0.5 * length
            for idx, val in ((idx_a, val_a), (idx_b, val_b)):
                rows = [slot[k] for k in idx]
                accum[rows] += half * val[:, None] * normal[None, :]
            if _on_domain_boundary(0.5 * (a + b), partition.domain, tol):
                segments.append(
                    BoundarySegment(
                        cell.node, a.copy(), b.copy(), length, normal,
                        (idx_a, val_a), (idx_b, val_b),
                    )
                )
        psi_node = np.zeros(union.size)
        psi_node[[slot[k] for k in node_idx]] = node_vals
        cells_out.append(
            CellShapeData(cell.node, union, psi_node, accum / cell.area, cell.area)
        )
    shape_at_nodes = np.zeros((n, n))
    for c in cells_out:
        shape_at_nodes[c.node, c.neighbors] = c.psi_node
    return SmoothedShapeData(
        cells_out, segments, shape_at_nodes, partition.areas, partition.domain
    )


def smoothed_small_strain(data: SmoothedShapeData, nodal_coeffs: np.ndarray, cell_index: int) -> np.ndarray:
    """Small-strain Voigt vector (e11, e22, 2 e12) at one integration node."""
    c = data.cells[cell_index]
    grad = nodal_coeffs[c.neighbors].T @ c.btilde  # grad[i, j] = d u_i / d x_j
    return np.array([grad[0, 0], grad[1, 1], grad[0, 1] + grad[1, 0]])


def dump_voronoi_csv(partition: VoronoiPartition, path) -> None:
    """Write cell polygons as rows (node_id, vertex_index, x, y)."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["node_id", "vertex_index", "x", "y"])
        for cell in partition.cells:
            for i, (x, y) in enumerate(cell.vertices):
                writer.writerow([cell.node, i, "%.17g" % x, "%.17g" % y])


def rectangle_domain(length: float, height: float) -> np.ndarray:
    return np.array([[0.0, 0.0], [length, 0.0], [length, height], [0.0, height]])
