"""Reproducing-kernel shape functions on scattered 2-D nodes.

Kernels are tensor products of a 1-D cubic B-spline with per-direction
support sizes, which keeps strongly anisotropic node spacings (such as the
41x5 beam grid) well conditioned.  The linear-basis correction enforces
exact reproduction of constants and linear monomials wherever the moment
matrix is invertible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CoverageError, InvalidParameterError


def cubic_bspline(y):
    """1-D cubic B-spline kernel; C2 on [0, inf), zero for y >= 1."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise InvalidParameterError("kernel argument must be non-negative")
    out = np.zeros_like(arr)
    near = arr < 0.5
    mid = (arr >= 0.5) & (arr < 1.0)
    a = arr[near]
    out[near] = 2.0 / 3.0 - 4.0 * a * a + 4.0 * a * a * a
    b = arr[mid]
    out[mid] = 4.0 / 3.0 - 4.0 * b + 4.0 * b * b - 4.0 / 3.0 * b * b * b
    return out if isinstance(y, np.ndarray) else float(out)


@dataclass(frozen=True)
class NodeSet:
    """Node coordinates with per-direction kernel supports.

    ``supports`` may be given per node as (N, 2) or as a single pair
    broadcast to all nodes.  ``basis_order`` 1 gives linear completeness;
    order 0 degenerates to Shepard weights.
    """

    coordinates: np.ndarray
    supports: np.ndarray
    basis_order: int = 1

    def __post_init__(self):
        coords = np.atleast_2d(np.asarray(self.coordinates, dtype=float))
        if coords.shape[1] != 2:
            raise InvalidParameterError("node coordinates must be (N, 2)")
        supports = np.asarray(self.supports, dtype=float)
        if supports.ndim == 1:
            supports = np.tile(supports, (coords.shape[0], 1))
        if supports.shape != coords.shape:
            raise InvalidParameterError("supports must broadcast to (N, 2)")
        if np.any(supports <= 0):
            raise InvalidParameterError("support sizes must be positive")
        if self.basis_order not in (0, 1):
            raise InvalidParameterError("basis_order must be 0 or 1")
        object.__setattr__(self, "coordinates", coords)
        object.__setattr__(self, "supports", supports)

    def __len__(self) -> int:
        return self.coordinates.shape[0]


def kernel_values(nodes: NodeSet, x) -> np.ndarray:
    """Tensor-product kernel of every node evaluated at the point x."""
    delta = np.abs(np.asarray(x, dtype=float) - nodes.coordinates) / nodes.supports
    return cubic_bspline(delta[:, 0]) * cubic_bspline(delta[:, 1])


def rk_shape_functions(x, nodes: NodeSet):
    """Shape function values at a point.

    Returns (supporting node indices, values).  Raises CoverageError when
    too few nodes cover the point for the requested basis order.
    """
    x = np.asarray(x, dtype=float)
    phi_all = kernel_values(nodes, x)
    support = np.flatnonzero(phi_all > 0.0)
    if support.size == 0:
        raise CoverageError(f"no nodes cover point ({x[0]}, {x[1]})")
    phi = phi_all[support]
    if nodes.basis_order == 0:
        return support, phi / phi.sum()
    if support.size < 3:
        raise CoverageError(
            f"only {support.size} nodes cover point ({x[0]}, {x[1]}); linear basis needs >= 3"
        )
    delta = x - nodes.coordinates[support]
    scale = nodes.supports[support].mean(axis=0)
    h = np.column_stack([np.ones(support.size), delta[:, 0] / scale[0], delta[:, 1] / scale[1]])
    moment = (h * phi[:, None]).T @ h
    try:
        b = np.linalg.solve(moment, np.array([1.0, 0.0, 0.0]))
    except np.linalg.LinAlgError:
        raise CoverageError(
            f"singular moment matrix at ({x[0]}, {x[1]}); nodes are degenerate there"
        ) from None
    values = phi * (h @ b)
    if not np.all(np.isfinite(values)):
        raise CoverageError(f"ill-conditioned moment matrix at ({x[0]}, {x[1]})")
    return support, values


def shape_matrix(nodes: NodeSet, points) -> np.ndarray:
    """Dense matrix A with A[j, i] = shape function of node i at points[j]."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.zeros((points.shape[0], len(nodes)))
    for j, p in enumerate(points):
        idx, vals = rk_shape_functions(p, nodes)
        a[j, idx] = vals
    return a


def build_grid_nodes(
    nx: int,
    ny: int,
    length: float,
    height: float,
    jitter: float = 0.0,
    seed: int = 0,
    support_factor: float = 2.0,
) -> NodeSet:
    """Regular nx-by-ny grid on [0, length] x [0, height] with interior jitter.

    Interior nodes move by a uniform perturbation up to ``jitter`` times the
    grid spacing in each direction; boundary nodes stay put so the domain
    boundary is preserved.  Supports are support_factor times the spacing.
    """
    if nx < 2 or ny < 2:
        raise InvalidParameterError("grid needs at least 2 nodes per direction")
    if not 0.0 <= jitter < 0.5:
        raise InvalidParameterError("jitter must be in [0, 0.5) of the spacing")
    xs = np.linspace(0.0, length, nx)
    ys = np.linspace(0.0, height, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    coords = np.column_stack([gx.ravel(), gy.ravel()])
    dx, dy = length / (nx - 1), height / (ny - 1)
    if jitter > 0.0:
        rng = np.random.default_rng(seed)
        interior = (
            (coords[:, 0] > 0)
            & (coords[:, 0] < length)
            & (coords[:, 1] > 0)
            & (coords[:, 1] < height)
        )
        shift = rng.uniform(-jitter, jitter, (interior.sum(), 2)) * np.array([dx, dy])
        coords[interior] += shift
    return NodeSet(coords, np.array([support_factor * dx, support_factor * dy]))
