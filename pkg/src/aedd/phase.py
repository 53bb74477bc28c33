"""Strain-stress phase space: states, metric, synthetic datasets, file I/O.

Plane problems use a 6-D phase space in Voigt form.  The strain vector is
(E11, E22, G12) with G12 = 2*E12 (engineering shear) and the stress vector
is (S11, S22, S12).  Under this convention the plane weight matrix acts as
a plain 3x3 matrix product on strain and its inverse on stress.  Units are
N/mm^2 for stress-like quantities; strains are dimensionless.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DatasetFormatError, DegenerateDataError, InvalidParameterError

PHASE_DIM = 6
VOIGT_DIM = 3
CSV_HEADER = ("E11", "E22", "G12", "S11", "S22", "S12")

_FLOAT_FMT = "%.17g"


def _as_voigt(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.shape != (VOIGT_DIM,):
        raise InvalidParameterError(f"{name} must be a 3-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class PhaseState:
    """One strain-stress point in phase space.

    ``strain`` is (E11, E22, 2*E12); ``stress`` is (S11, S22, S12).
    """

    strain: np.ndarray
    stress: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "strain", _as_voigt(self.strain, "strain"))
        object.__setattr__(self, "stress", _as_voigt(self.stress, "stress"))

    @classmethod
    def from_vector(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        if z.shape != (PHASE_DIM,):
            raise InvalidParameterError(f"phase vector must have 6 entries, got {z.shape}")
        return cls(z[:3].copy(), z[3:].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.strain, self.stress])

    def __eq__(self, other):
        if not isinstance(other, PhaseState):
            return NotImplemented
        return np.array_equal(self.strain, other.strain) and np.array_equal(
            self.stress, other.stress
        )


@dataclass(frozen=True)
class WeightMatrix:
    """Symmetric positive-definite 3x3 weight ``c`` and its inverse.

    ``c`` weighs strain differences; ``c_inv`` weighs stress differences.
    """

    c: np.ndarray
    c_inv: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        c_inv = np.asarray(self.c_inv, dtype=float)
        if c.shape != (3, 3) or c_inv.shape != (3, 3):
            raise InvalidParameterError("weight matrices must be 3x3")
        scale = np.abs(c).max()
        if scale <= 0 or not np.all(np.isfinite(c)):
            raise InvalidParameterError("weight matrix must be finite and nonzero")
        if np.abs(c - c.T).max() > 1e-12 * scale:
            raise InvalidParameterError("weight matrix must be symmetric")
        eigvals = np.linalg.eigvalsh(0.5 * (c + c.T))
        if eigvals.min() <= 0:
            raise InvalidParameterError("weight matrix must be positive definite")
        if np.abs(c @ c_inv - np.eye(3)).max() > 1e-10:
            raise InvalidParameterError("c_inv is not the inverse of c")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "c_inv", c_inv)

    @classmethod
    def from_matrix(cls, c) -> "WeightMatrix":
        c = np.asarray(c, dtype=float)
        return cls(c, np.linalg.inv(c))


def build_weight_matrix_isotropic(young_modulus: float, poisson_ratio: float) -> WeightMatrix:
    """Plane-strain style diagonal weight from elastic constants.

    Returns E/(1-nu^2) * diag(1, 1, (1-nu)/2) together with its inverse.
    """
    if not np.isfinite(young_modulus) or young_modulus <= 0:
        raise InvalidParameterError(f"young_modulus must be positive, got {young_modulus}")
    if not np.isfinite(poisson_ratio) or not 0.0 <= poisson_ratio < 0.5:
        raise InvalidParameterError(f"poisson_ratio must be in [0, 0.5), got {poisson_ratio}")
    factor = young_modulus / (1.0 - poisson_ratio**2)
    c = factor * np.diag([1.0, 1.0, (1.0 - poisson_ratio) / 2.0])
    return WeightMatrix.from_matrix(c)


@dataclass(frozen=True)
class DatasetMeta:
    """Provenance of a material dataset."""

    seed: int | None = None
    noise_factor: float = 0.0
    source: str = ""
    path_ids: np.ndarray | None = None


@dataclass(frozen=True)
class MaterialDataset:
    """Ordered collection of phase states; row order is the point identity."""

    strains: np.ndarray  # (M, 3)
    stresses: np.ndarray  # (M, 3)
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self):
        strains = np.atleast_2d(np.asarray(self.strains, dtype=float))
        stresses = np.atleast_2d(np.asarray(self.stresses, dtype=float))
        if strains.shape[0] == 0:
            raise InvalidParameterError("dataset must contain at least one point")
        if strains.shape != stresses.shape or strains.shape[1] != VOIGT_DIM:
            raise InvalidParameterError(
                f"strain/stress arrays must both be (M, 3); got {strains.shape} and {stresses.shape}"
            )
        if not (np.all(np.isfinite(strains)) and np.all(np.isfinite(stresses))):
            raise InvalidParameterError("dataset contains non-finite entries")
        object.__setattr__(self, "strains", strains)
        object.__setattr__(self, "stresses", stresses)

    def __len__(self) -> int:
        return self.strains.shape[0]

    @property
    def values(self) -> np.ndarray:
        """(M, 6) array of phase vectors."""
        return np.hstack([self.strains, self.stresses])

    def point(self, index: int) -> PhaseState:
        return PhaseState(self.strains[index], self.stresses[index])

    @classmethod
    def from_values(cls, values, meta: DatasetMeta | None = None) -> "MaterialDataset":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if values.shape[1] != PHASE_DIM:
            raise InvalidParameterError(f"phase vectors must have 6 columns, got {values.shape}")
        return cls(values[:, :3], values[:, 3:], meta or DatasetMeta())


def build_weight_matrix_from_data(dataset: MaterialDataset) -> WeightMatrix:
    """Diagonal weight with entries std(stress_i)/std(strain_i).

    Raises if any used component has zero variance.
    """
    if len(dataset) < 2:
        raise InvalidParameterError("need at least 2 points to estimate component spreads")
    strain_std = dataset.strains.std(axis=0)
    stress_std = dataset.stresses.std(axis=0)
    for i, (name, s) in enumerate(zip(CSV_HEADER, np.concatenate([strain_std, stress_std]))):
        if s <= 0.0:
            raise DegenerateDataError(f"component {name} has zero variance")
    return WeightMatrix.from_matrix(np.diag(stress_std / strain_std))


def phase_distance_sq(a: PhaseState, b: PhaseState, w: WeightMatrix) -> float:
    """Energy-like squared distance between two phase states.

    0.5*(Ea-Eb)' c (Ea-Eb) + 0.5*(Sa-Sb)' c_inv (Sa-Sb).
    """
    de = a.strain - b.strain
    ds = a.stress - b.stress
    return 0.5 * float(de @ w.c @ de) + 0.5 * float(ds @ w.c_inv @ ds)


def phase_distance_sq_many(z: np.ndarray, zhat: np.ndarray, w: WeightMatrix) -> np.ndarray:
    """Row-wise squared distances between (N, 6) arrays of phase vectors."""
    de = z[..., :3] - zhat[..., :3]
    ds = z[..., 3:] - zhat[..., 3:]
    return 0.5 * np.einsum("...i,ij,...j->...", de, w.c, de) + 0.5 * np.einsum(
        "...i,ij,...j->...", ds, w.c_inv, ds
    )


def generate_svk_grid_dataset(
    points_per_axis: int, strain_bound: float, w: WeightMatrix, seed: int = 0
) -> MaterialDataset:
    """Tensor-product strain grid with linear stress law stress = c @ strain.

    Each Voigt strain component takes ``points_per_axis`` uniformly spaced
    values in [-strain_bound, strain_bound]; M = points_per_axis**3.
    """
    if points_per_axis < 2:
        raise InvalidParameterError("points_per_axis must be >= 2")
    if strain_bound <= 0:
        raise InvalidParameterError("strain_bound must be positive")
    axis = np.linspace(-strain_bound, strain_bound, points_per_axis)
    g1, g2, g3 = np.meshgrid(axis, axis, axis, indexing="ij")
    strains = np.column_stack([g1.ravel(), g2.ravel(), g3.ravel()])
    stresses = strains @ w.c.T
    return MaterialDataset(strains, stresses, DatasetMeta(seed=seed, source="svk-grid"))


def add_noise(dataset: MaterialDataset, factor: float, seed: int) -> MaterialDataset:
    """Add zero-mean Gaussian noise to every component of every point.

    Per-component standard deviation is factor * max|component| / cbrt(M),
    with the maxima taken over the input dataset.  The input is unchanged.
    """
    if factor < 0:
        raise InvalidParameterError("noise factor must be non-negative")
    values = dataset.values
    m = len(dataset)
    stds = factor * np.abs(values).max(axis=0) / np.cbrt(m)
    rng = np.random.default_rng(seed)
    noisy = values + rng.normal(0.0, 1.0, values.shape) * stds
    meta = replace(dataset.meta, seed=seed, noise_factor=factor)
    return MaterialDataset(noisy[:, :3], noisy[:, 3:], meta)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    polar = np.arccos(1.0 - 2.0 * i / n)
    azimuth = np.pi * (1.0 + np.sqrt(5.0)) * i
    return np.column_stack(
        [np.sin(polar) * np.cos(azimuth), np.sin(polar) * np.sin(azimuth), np.cos(polar)]
    )


def generate_sparse_path_dataset(
    n_paths: int, points_per_path: int, strain_bound: float, w: WeightMatrix, seed: int = 0
) -> MaterialDataset:
    """Proportional loading paths along quasi-uniform strain-space rays.

    Ray directions come from a Fibonacci sphere lattice rotated by a seeded
    random orthogonal matrix, then scaled onto the cube surface (max-norm 1),
    so the largest point of each path has max |component| = strain_bound.
    Path k places points j/points_per_path * strain_bound * direction,
    j = 1..points_per_path.  Stress follows the linear law stress = c @ strain.
    """
    if n_paths < 1:
        raise InvalidParameterError("n_paths must be >= 1")
    if points_per_path < 2:
        raise InvalidParameterError("points_per_path must be >= 2")
    if strain_bound <= 0:
        raise InvalidParameterError("strain_bound must be positive")
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    dirs = _fibonacci_sphere(n_paths) @ q.T
    dirs = dirs / np.abs(dirs).max(axis=1, keepdims=True)
    scale = np.arange(1, points_per_path + 1) / points_per_path * strain_bound
    strains = (scale[None, :, None] * dirs[:, None, :]).reshape(-1, 3)
    stresses = strains @ w.c.T
    path_ids = np.repeat(np.arange(n_paths), points_per_path)
    meta = DatasetMeta(seed=seed, source="sparse-paths", path_ids=path_ids)
    return MaterialDataset(strains, stresses, meta)


@dataclass(frozen=True)
class StandardizationStats:
    """Per-component population mean and standard deviation."""

    mean: np.ndarray  # (6,)
    std: np.ndarray  # (6,)

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.ndim != 1:
            raise InvalidParameterError("mean and std must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise InvalidParameterError("standardization stats must be finite")
        if np.any(std <= 0):
            bad = int(np.argmin(std))
            raise DegenerateDataError(f"component {bad} has non-positive standard deviation")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=float) - self.mean) / self.std

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=float) * self.std + self.mean


def compute_standardization(dataset: MaterialDataset) -> StandardizationStats:
    """Population mean/std per component; errors on constant components."""
    if len(dataset) < 2:
        raise InvalidParameterError("need at least 2 points to standardize")
    values = dataset.values
    std = values.std(axis=0)
    for name, s in zip(CSV_HEADER, std):
        if s <= 0.0:
            raise DegenerateDataError(f"component {name} is constant")
    return StandardizationStats(values.mean(axis=0), std)


def save_dataset(dataset: MaterialDataset, path) -> None:
    """Write the dataset CSV (header E11,E22,G12,S11,S22,S12, LF endings)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in dataset.values:
            writer.writerow([_FLOAT_FMT % v for v in row])


def load_dataset(path) -> MaterialDataset:
    """Read a dataset CSV, validating the schema cell by cell."""
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetFormatError(
                f"{path}: expected header {','.join(CSV_HEADER)}, got {','.join(header)}"
            )
        rows = []
        for lineno, fields in enumerate(reader, start=2):
            if not fields:
                continue
            if len(fields) != PHASE_DIM:
                raise DatasetFormatError(
                    f"{path}: row {lineno}: expected {PHASE_DIM} fields, got {len(fields)}"
                )
            parsed = []
            for col, cell in zip(CSV_HEADER, fields):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: row {lineno}, column {col}: non-numeric value {cell!r}"
                    ) from None
            rows.append(parsed)
    if not rows:
        raise DatasetFormatError(f"{path}: empty dataset")
    values = np.asarray(rows, dtype=float)
    return MaterialDataset(values[:, :3], values[:, 3:], DatasetMeta(source=str(path)))
