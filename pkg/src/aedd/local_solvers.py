"""Material local solvers: neighbor search and convexity-preserving reconstruction.

Four variants select the optimal material state for a given physical state:

* ``dmdd``  - nearest dataset point under the weighted phase metric.
* ``lcdd``  - projection onto the convex hull of the k nearest points,
  solved by non-negative least squares with a sum-to-one penalty.
* ``aedd1`` - neighbor search and Shepard reconstruction in the autoencoder
  embedding space, decoded back to phase space.
* ``aedd2`` - Shepard weights computed in embedding space but applied to the
  raw dataset points (no decoder); the default.

All operations are pure functions of their inputs; the batched engine exists
so the fixed-point driver can solve every integration point per iteration
without recomputing dataset transforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .autoencoder import TrainedAutoencoder
from .errors import InvalidParameterError, LocalSolverError
from .phase import MaterialDataset, PhaseState, WeightMatrix

COINCIDENT_DISTANCE = 1e-12
LCDD_PENALTY_FACTOR = 1e4
_CHUNK = 16 * 1024 * 1024 // 8  # elements per distance-matrix chunk


@dataclass(frozen=True)
class EmbeddingSet:
    """Encoded material dataset, index-aligned with its source."""

    points: np.ndarray  # (M, p)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0:
            raise InvalidParameterError("embedding set must be non-empty")
        if not np.all(np.isfinite(pts)):
            raise InvalidParameterError("embedding set contains non-finite entries")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def build_embedding_set(model: TrainedAutoencoder, dataset: MaterialDataset) -> EmbeddingSet:
    """Encode every dataset point; row order is preserved."""
    return EmbeddingSet(model.encode_values(dataset.values))


@dataclass(frozen=True)
class LocalSolverChoice:
    """Which local solver to run, with its neighbor count and model."""

    variant: str  # dmdd | lcdd | aedd1 | aedd2 | constitutive
    k: int = 6
    model: TrainedAutoencoder | None = None

    def __post_init__(self):
        if self.variant not in ("dmdd", "lcdd", "aedd1", "aedd2", "constitutive"):
            raise InvalidParameterError(f"unknown local solver variant {self.variant!r}")
        if self.variant in ("aedd1", "aedd2") and self.model is None:
            raise InvalidParameterError(f"{self.variant} requires a trained autoencoder")
        if self.variant in ("lcdd", "aedd1", "aedd2") and self.k < 1:
            raise InvalidParameterError("neighbor count k must be >= 1")


def _k_smallest(d2: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries, ascending, ties to lower index."""
    if k == d2.shape[0]:
        cand = np.arange(d2.shape[0])
    else:
        kth = np.partition(d2, k - 1)[k - 1]
        cand = np.flatnonzero(d2 <= kth)
    order = np.lexsort((cand, d2[cand]))
    return cand[order][:k]


def knn(emb: EmbeddingSet, query, k: int) -> np.ndarray:
    """k nearest embedding points by Euclidean distance.

    Ties are broken toward the smaller dataset index.
    """
    pts = emb.points
    if not 1 <= k <= pts.shape[0]:
        raise InvalidParameterError(f"k must be in [1, {pts.shape[0]}], got {k}")
    q = np.asarray(query, dtype=float)
    diff = pts - q
    return _k_smallest(np.einsum("ij,ij->i", diff, diff), k)


def shepard_weights(query, neighbors) -> np.ndarray:
    """Inverse-squared-distance weights, normalized to a partition of unity.

    A query closer than 1e-12 to some neighbor gets that neighbor's one-hot
    vector (nearest such neighbor, ties to the first).
    """
    nbrs = np.atleast_2d(np.asarray(neighbors, dtype=float))
    if nbrs.shape[0] == 0:
        raise InvalidParameterError("need at least one neighbor")
    q = np.asarray(query, dtype=float)
    diff = nbrs - q
    d2 = np.einsum("ij,ij->i", diff, diff)
    coincident = d2 < COINCIDENT_DISTANCE**2
    if np.any(coincident):
        weights = np.zeros(len(d2))
        weights[np.argmin(np.where(coincident, d2, np.inf))] = 1.0
        return weights
    kernel = 1.0 / d2
    return kernel / kernel.sum()


class _PhaseMetric:
    """Cholesky factor mapping the weighted phase metric to Euclidean."""

    def __init__(self, w: WeightMatrix):
        le = np.linalg.cholesky(0.5 * w.c)
        ls = np.linalg.cholesky(0.5 * w.c_inv)
        self.transform = np.zeros((6, 6))
        self.transform[:3, :3] = le.T
        self.transform[3:, 3:] = ls.T

    def map(self, values: np.ndarray) -> np.ndarray:
        return values @ self.transform.T


def dmdd_local(z: PhaseState, dataset: MaterialDataset, w: WeightMatrix) -> PhaseState:
    """Nearest dataset point under the weighted metric; ties to lowest index."""
    engine = LocalStepEngine(LocalSolverChoice("dmdd"), dataset, w)
    return PhaseState.from_vector(engine.solve(z.as_vector()[None, :])[0])


def lcdd_local(z: PhaseState, dataset: MaterialDataset, w: WeightMatrix, k: int) -> PhaseState:
    """Convex-hull projection over the k nearest dataset points."""
    engine = LocalStepEngine(LocalSolverChoice("lcdd", k=k), dataset, w)
    return PhaseState.from_vector(engine.solve(z.as_vector()[None, :])[0])


def lcdd_coefficients(z: PhaseState, dataset: MaterialDataset, w: WeightMatrix, k: int):
    """(neighbor indices, convex coefficients) of the LCDD reconstruction."""
    engine = LocalStepEngine(LocalSolverChoice("lcdd", k=k), dataset, w)
    metric_q = engine.metric.map(z.as_vector()[None, :])[0]
    diff = engine.metric_data - metric_q
    idx = _k_smallest(np.einsum("ij,ij->i", diff, diff), k)
    coeff = _nnls_convex(engine.metric_data[idx], metric_q)
    return idx, coeff


def _nnls_convex(metric_neighbors: np.ndarray, metric_query: np.ndarray) -> np.ndarray:
    """Non-negative coefficients summing to one that best reproduce the query.

    The sum-to-one constraint is relaxed into a quadratic penalty scaled by
    the largest eigenvalue of the local Gram matrix, then the coefficients
    are renormalized exactly.
    """
    a0 = metric_neighbors.T  # (6, k)
    gram = a0.T @ a0
    lam_max = float(np.linalg.eigvalsh(gram)[-1]) if gram.size else 0.0
    rho = LCDD_PENALTY_FACTOR * (lam_max if lam_max > 0 else 1.0)
    k = a0.shape[1]
    a = np.vstack([a0, np.full((1, k), np.sqrt(rho))])
    b = np.concatenate([metric_query, [np.sqrt(rho)]])
    try:
        coeff, _ = nnls(a, b, maxiter=max(30 * k, 300))
    except RuntimeError as exc:
        raise LocalSolverError(f"non-negative least squares failed: {exc}") from None
    total = coeff.sum()
    if not np.isfinite(total) or total <= 0:
        raise LocalSolverError("degenerate convex coefficients from local projection")
    return coeff / total


def aedd_solver_I(
    z: PhaseState,
    model: TrainedAutoencoder,
    emb: EmbeddingSet,
    dataset: MaterialDataset,
    k: int,
) -> PhaseState:
    """Encode, Shepard-reconstruct in embedding space, decode back."""
    _check_alignment(emb, dataset)
    zq = model.encode_values(z.as_vector())
    idx = knn(emb, zq, k)
    weights = shepard_weights(zq, emb.points[idx])
    emb_opt = weights @ emb.points[idx]
    return PhaseState.from_vector(model.decode_values(emb_opt))


def aedd_solver_II(
    z: PhaseState,
    model: TrainedAutoencoder,
    emb: EmbeddingSet,
    dataset: MaterialDataset,
    k: int,
) -> PhaseState:
    """Embedding-space Shepard weights applied to the raw dataset points."""
    _check_alignment(emb, dataset)
    zq = model.encode_values(z.as_vector())
    idx = knn(emb, zq, k)
    weights = shepard_weights(zq, emb.points[idx])
    return PhaseState.from_vector(weights @ dataset.values[idx])


def _check_alignment(emb: EmbeddingSet, dataset: MaterialDataset) -> None:
    if len(emb) != len(dataset):
        raise InvalidParameterError(
            f"embedding set ({len(emb)}) and dataset ({len(dataset)}) are not aligned"
        )


class LocalStepEngine:
    """Prepared local solver evaluating whole batches of physical states.

    Dataset transforms (metric mapping, embeddings) are computed once at
    construction; ``solve`` is then a pure function of the batch.
    """

    def __init__(
        self,
        choice: LocalSolverChoice,
        dataset: MaterialDataset | None,
        w: WeightMatrix,
        emb: EmbeddingSet | None = None,
    ):
        if dataset is None and choice.variant != "constitutive":
            raise InvalidParameterError(f"{choice.variant} requires a material dataset")
        self.choice = choice
        self.dataset = dataset
        self.w = w
        self.values = dataset.values if dataset is not None else None
        if choice.variant in ("dmdd", "lcdd"):
            self.metric = _PhaseMetric(w)
            self.metric_data = self.metric.map(self.values)
        if choice.variant in ("aedd1", "aedd2"):
            if choice.k > len(dataset):
                raise InvalidParameterError("k exceeds dataset size")
            self.emb = emb if emb is not None else build_embedding_set(choice.model, dataset)
            _check_alignment(self.emb, dataset)
        if choice.variant == "lcdd" and choice.k > len(dataset):
            raise InvalidParameterError("k exceeds dataset size")

    def solve(self, z_batch: np.ndarray) -> np.ndarray:
        """(N, 6) physical states -> (N, 6) optimal material states."""
        z = np.atleast_2d(np.asarray(z_batch, dtype=float))
        variant = self.choice.variant
        if variant == "constitutive":
            # exact metric projection onto the linear-law manifold s = c e:
            # e* = (E + c^-1 S) / 2 minimizes the weighted phase distance
            strains = 0.5 * (z[:, :3] + z[:, 3:] @ self.w.c_inv.T)
            return np.hstack([strains, strains @ self.w.c.T])
        if variant == "dmdd":
            rows = self._argmin_rows(self.metric.map(z), self.metric_data)
            return self.values[rows]
        if variant == "lcdd":
            return self._solve_lcdd(z)
        return self._solve_aedd(z)

    def _argmin_rows(self, queries: np.ndarray, data: np.ndarray) -> np.ndarray:
        n, m = queries.shape[0], data.shape[0]
        out = np.empty(n, dtype=int)
        data_sq = np.einsum("ij,ij->i", data, data)
        step = max(1, _CHUNK // m)
        for start in range(0, n, step):
            q = queries[start : start + step]
            d2 = data_sq[None, :] - 2.0 * (q @ data.T)
            out[start : start + step] = np.argmin(d2, axis=1)
        return out

    def _knn_rows(self, queries: np.ndarray, data: np.ndarray, k: int):
        """Exact k nearest rows per query with the index tie rule."""
        data_sq = np.einsum("ij,ij->i", data, data)
        q_sq = np.einsum("ij,ij->i", queries, queries)
        n, m = queries.shape[0], data.shape[0]
        idx = np.empty((n, k), dtype=int)
        step = max(1, _CHUNK // m)
        for start in range(0, n, step):
            q = queries[start : start + step]
            d2 = q_sq[start : start + step, None] - 2.0 * (q @ data.T) + data_sq[None, :]
            for row in range(d2.shape[0]):
                idx[start + row] = _k_smallest(d2[row], k)
        return idx

    def _solve_lcdd(self, z: np.ndarray) -> np.ndarray:
        k = self.choice.k
        metric_q = self.metric.map(z)
        neighbor_idx = self._knn_rows(metric_q, self.metric_data, k)
        out = np.empty_like(z)
        for row in range(z.shape[0]):
            idx = neighbor_idx[row]
            coeff = _nnls_convex(self.metric_data[idx], metric_q[row])
            out[row] = coeff @ self.values[idx]
        return out

    def _solve_aedd(self, z: np.ndarray) -> np.ndarray:
        model = self.choice.model
        k = self.choice.k
        zq = model.encode_values(z)
        neighbor_idx = self._knn_rows(zq, self.emb.points, k)
        out = np.empty_like(z)
        emb_out = np.empty((z.shape[0], self.emb.points.shape[1]))
        for row in range(z.shape[0]):
            idx = neighbor_idx[row]
            weights = shepard_weights(zq[row], self.emb.points[idx])
            if self.choice.variant == "aedd2":
                out[row] = weights @ self.values[idx]
            else:
                emb_out[row] = weights @ self.emb.points[idx]
        if self.choice.variant == "aedd1":
            out = model.decode_values(emb_out)
        return out
