"""Global physics step and the global-local fixed-point driver.

The global step finds displacement and Lagrange-multiplier fields making the
weighted distance to the given material states stationary under equilibrium.
Unknowns are the reproducing-kernel coefficients of both vector fields; the
discrete system couples them through the deformation gradient and is solved
by Newton iteration on the full (indefinite) tangent.

Essential boundary conditions are imposed by the transformation method: the
system is solved in generalized coefficients while constraint rows pin the
transformed nodal values.  Because the shape functions of retained equations
do not vanish along Dirichlet edges, the multiplier residual carries an
explicit reaction-flux term on those edges; without it a constant-stress
patch test cannot be exact.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, NewtonError
from .local_solvers import LocalSolverChoice, LocalStepEngine
from .phase import MaterialDataset, WeightMatrix, phase_distance_sq_many
from .rk import NodeSet
from .scni import SmoothedShapeData, rectangle_domain, smoothed_gradients, voronoi_partition


@dataclass(frozen=True)
class DirichletPatch:
    """Prescribed displacement components on part of the boundary.

    ``selector`` receives a point (node coordinate or segment midpoint)
    and returns True on the constrained part.  ``values`` are the full-load
    displacements of the listed components; the driver scales them by the
    load factor.  Multipliers are pinned to zero on the same components.
    """

    selector: object
    components: tuple
    values: tuple

    def __post_init__(self):
        if len(self.components) != len(self.values):
            raise InvalidParameterError("components and values must pair up")
        if any(c not in (0, 1) for c in self.components):
            raise InvalidParameterError("components must be 0 (x) or 1 (y)")


@dataclass(frozen=True)
class NeumannPatch:
    """Reference-configuration traction on part of the boundary."""

    selector: object
    traction: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.traction, dtype=float)
        if t.shape != (2,) or not np.all(np.isfinite(t)):
            raise InvalidParameterError("traction must be a finite 2-vector")
        object.__setattr__(self, "traction", t)


@dataclass(frozen=True)
class BoundaryConditions:
    dirichlet: tuple
    neumann: tuple = ()
    body_force: np.ndarray = None

    def __post_init__(self):
        bf = np.zeros(2) if self.body_force is None else np.asarray(self.body_force, dtype=float)
        object.__setattr__(self, "body_force", bf)
        object.__setattr__(self, "dirichlet", tuple(self.dirichlet))
        object.__setattr__(self, "neumann", tuple(self.neumann))


@dataclass
class _CellData:
    node: int
    neighbors: np.ndarray
    btilde: np.ndarray
    area: float
    dofs: np.ndarray  # interleaved (2s,) node-major dof indices


@dataclass
class DiscretizedProblem:
    """Everything the global solver needs about one boundary value problem."""

    nodes: NodeSet
    shape_data: SmoothedShapeData
    weight: WeightMatrix
    bcs: BoundaryConditions
    cells: list = field(default_factory=list)
    constraints: list = field(default_factory=list)  # (node, component, full-load value)
    dirichlet_segments: list = field(default_factory=list)  # (segment, components)
    traction_force: np.ndarray = None  # (2N,) at full load
    a_matrix: np.ndarray = None  # shape values at nodes

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def areas(self) -> np.ndarray:
        return self.shape_data.areas


def build_problem(
    nodes: NodeSet, domain: np.ndarray, weight: WeightMatrix, bcs: BoundaryConditions
) -> DiscretizedProblem:
    """Discretize the domain and bind boundary conditions to it."""
    partition = voronoi_partition(nodes, domain)
    data = smoothed_gradients(partition, nodes)
    problem = DiscretizedProblem(nodes, data, weight, bcs)
    for c in data.cells:
        dofs = (2 * c.neighbors[:, None] + np.arange(2)[None, :]).ravel()
        problem.cells.append(_CellData(c.node, c.neighbors, c.btilde, c.area, dofs))

    coords = nodes.coordinates
    seen = {}
    for patch in bcs.dirichlet:
        for i, x in enumerate(coords):
            if patch.selector(x):
                for comp, value in zip(patch.components, patch.values):
                    resolved = float(value(x)) if callable(value) else float(value)
                    key = (i, comp)
                    if key in seen and seen[key] != resolved:
                        raise InvalidParameterError(
                            f"conflicting Dirichlet values at node {i} component {comp}"
                        )
                    seen[key] = resolved
    problem.constraints = [(i, c, v) for (i, c), v in sorted(seen.items())]

    n = len(nodes)
    force = np.zeros(2 * n)
    for seg in data.boundary_segments:
        mid = 0.5 * (seg.start + seg.end)
        comps = set()
        for patch in bcs.dirichlet:
            if patch.selector(mid):
                comps.update(patch.components)
        if comps:
            problem.dirichlet_segments.append((seg, tuple(sorted(comps))))
        for patch in bcs.neumann:
            if patch.selector(mid):
                for idx, val in (seg.psi_start, seg.psi_end):
                    for comp in range(2):
                        force[2 * idx + comp] += 0.5 * seg.length * val * patch.traction[comp]
    if np.any(bcs.body_force != 0.0):
        for c in data.cells:
            psi = data.shape_at_nodes[c.node, c.neighbors]
            for comp in range(2):
                force[2 * c.neighbors + comp] += c.area * psi * bcs.body_force[comp]
    problem.traction_force = force
    problem.a_matrix = data.shape_at_nodes
    return problem


def _voigt_strain_of(t: np.ndarray) -> np.ndarray:
    """Strain-type Voigt vector of the symmetric part of a 2x2 tensor."""
    return np.array([t[0, 0], t[1, 1], t[0, 1] + t[1, 0]])


def _stress_tensor(s: np.ndarray) -> np.ndarray:
    return np.array([[s[0], s[2]], [s[2], s[1]]])


def _bmat(t: np.ndarray, btilde: np.ndarray) -> np.ndarray:
    """(3, 2s) strain-variation matrix for tensor t and gradient rows btilde."""
    s = btilde.shape[0]
    b1, b2 = btilde[:, 0], btilde[:, 1]
    out = np.empty((3, s, 2))
    out[0, :, 0] = t[0, 0] * b1
    out[0, :, 1] = t[1, 0] * b1
    out[1, :, 0] = t[0, 1] * b2
    out[1, :, 1] = t[1, 1] * b2
    out[2, :, 0] = t[0, 0] * b2 + t[0, 1] * b1
    out[2, :, 1] = t[1, 0] * b2 + t[1, 1] * b1
    return out.reshape(3, 2 * s)


def green_strain(problem: DiscretizedProblem, d: np.ndarray, cell_index: int):
    """Deformation gradient and Green strain Voigt vector at one node."""
    c = problem.cells[cell_index]
    f = np.eye(2) + d[c.neighbors].T @ c.btilde
    e = 0.5 * (f.T @ f - np.eye(2))
    return f, np.array([e[0, 0], e[1, 1], 2.0 * e[0, 1]])


def stress_update(f: np.ndarray, grad_lam: np.ndarray, s_star: np.ndarray, w: WeightMatrix) -> np.ndarray:
    """Nodal stress from the multiplier gradient and the material stress."""
    return w.c @ _voigt_strain_of(f.T @ grad_lam) + np.asarray(s_star, dtype=float)


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-8
    max_iter: int = 30
    abs_floor: float = 1e-12


def _assemble(problem: DiscretizedProblem, x: np.ndarray, zstar: np.ndarray, gamma: float):
    """Residual and consistent tangent of the coupled stationarity system."""
    n = problem.n_nodes
    cmat = problem.weight.c
    d = x[: 2 * n].reshape(n, 2)
    lam = x[2 * n :].reshape(n, 2)
    res = np.zeros(4 * n)
    jac = np.zeros((4 * n, 4 * n))
    res[2 * n :] -= gamma * problem.traction_force

    eye2 = np.eye(2)
    cell_state = {}
    for ci, c in enumerate(problem.cells):
        f = eye2 + d[c.neighbors].T @ c.btilde
        grad_lam = lam[c.neighbors].T @ c.btilde
        e_t = 0.5 * (f.T @ f - eye2)
        e = np.array([e_t[0, 0], e_t[1, 1], 2.0 * e_t[0, 1]])
        g = _voigt_strain_of(f.T @ grad_lam)
        s = cmat @ g + zstar[ci, 3:]
        mism = cmat @ (e - zstar[ci, :3])
        cell_state[c.node] = (f, grad_lam, mism, s)

        bf = _bmat(f, c.btilde)
        bl = _bmat(grad_lam, c.btilde)
        v = c.area

        dofs_u = c.dofs
        dofs_l = 2 * n + c.dofs
        res[dofs_u] += v * (bf.T @ mism - bl.T @ s)
        res[dofs_l] += v * (bf.T @ s)

        cbf = cmat @ bf
        cbl = cmat @ bl
        geo_mism = np.kron(c.btilde @ _stress_tensor(mism) @ c.btilde.T, eye2)
        geo_s = np.kron(c.btilde @ _stress_tensor(s) @ c.btilde.T, eye2)
        jac[np.ix_(dofs_u, dofs_u)] += v * (bf.T @ cbf + geo_mism - bl.T @ cbl)
        jac[np.ix_(dofs_u, dofs_l)] += v * (-bl.T @ cbf - geo_s)
        jac[np.ix_(dofs_l, dofs_u)] += v * (bf.T @ cbl + geo_s)
        jac[np.ix_(dofs_l, dofs_l)] += v * (bf.T @ cbf)

    # Retained test functions do not vanish along Dirichlet edges, so their
    # equations see spurious boundary fluxes there.  Subtract those fluxes
    # (stress flux from the multiplier equation, mismatch/multiplier flux
    # from the displacement equation); a constant-stress patch test is exact
    # only with this consistency term.
    for seg, comps in problem.dirichlet_segments:
        cell = problem.cells[seg.cell]
        f, grad_lam, mism, s = cell_state[seg.cell]
        st = _stress_tensor(s)
        mt = _stress_tensor(mism)
        nrm = seg.normal
        flux_l = f @ st @ nrm
        flux_u = f @ mt @ nrm - grad_lam @ st @ nrm
        sn = st @ nrm
        mn = mt @ nrm
        bf = _bmat(f, cell.btilde)
        bl = _bmat(grad_lam, cell.btilde)
        cbf = problem.weight.c @ bf
        cbl = problem.weight.c @ bl
        b_sn = cell.btilde @ sn
        b_mn = cell.btilde @ mn
        dofs_u = cell.dofs
        dofs_l = 2 * n + cell.dofs
        h = 0.5 * seg.length
        for idx, val in (seg.psi_start, seg.psi_end):
            hv = (h * val)[:, None]
            for comp in comps:
                q = np.array(
                    [f[comp, 0] * nrm[0], f[comp, 1] * nrm[1],
                     f[comp, 0] * nrm[1] + f[comp, 1] * nrm[0]]
                )
                r = np.array(
                    [grad_lam[comp, 0] * nrm[0], grad_lam[comp, 1] * nrm[1],
                     grad_lam[comp, 0] * nrm[1] + grad_lam[comp, 1] * nrm[0]]
                )
                u_comp_cols = dofs_u.reshape(-1, 2)[:, comp]
                l_comp_cols = dofs_l.reshape(-1, 2)[:, comp]
                # multiplier equation: -(F S n) flux
                rows = 2 * n + 2 * idx + comp
                res[rows] -= h * val * flux_l[comp]
                jac[np.ix_(rows, dofs_l)] -= hv * (q @ cbf)[None, :]
                jac[np.ix_(rows, dofs_u)] -= hv * (q @ cbl)[None, :]
                jac[np.ix_(rows, u_comp_cols)] -= hv * b_sn[None, :]
                # displacement equation: -(F M n - grad_lam S n) flux
                rows = 2 * idx + comp
                res[rows] -= h * val * flux_u[comp]
                jac[np.ix_(rows, u_comp_cols)] -= hv * b_mn[None, :]
                jac[np.ix_(rows, dofs_u)] -= hv * (q @ cbf)[None, :]
                jac[np.ix_(rows, dofs_u)] += hv * (r @ cbl)[None, :]
                jac[np.ix_(rows, l_comp_cols)] += hv * b_sn[None, :]
                jac[np.ix_(rows, dofs_l)] += hv * (r @ cbf)[None, :]

    return res, jac, cell_state


def _apply_constraints(problem, x, gamma, res, jac):
    n = problem.n_nodes
    a = problem.a_matrix
    d = x[: 2 * n].reshape(n, 2)
    lam = x[2 * n :].reshape(n, 2)
    rows = []
    for node, comp, value in problem.constraints:
        for offset, fld, target in ((0, d, gamma * value), (2 * n, lam, 0.0)):
            row = offset + 2 * node + comp
            rows.append(row)
            jac[row, :] = 0.0
            jac[row, offset + 2 * np.arange(n) + comp] = a[node]
            res[row] = a[node] @ fld[:, comp] - target
    return np.asarray(rows, dtype=int)


def solve_global_step(
    problem: DiscretizedProblem,
    x0: np.ndarray,
    zstar: np.ndarray,
    gamma: float,
    config: NewtonConfig = NewtonConfig(),
):
    """Newton iteration for the coupled (u, lambda) system at fixed material data.

    Returns (x, iterations, cell_state).  Residual convergence is relative
    to the entry residual with an absolute floor; constraint rows are exact
    after the first iteration because they are linear.
    """
    x = x0.copy()
    res, jac, state = _assemble(problem, x, zstar, gamma)
    crows = _apply_constraints(problem, x, gamma, res, jac)
    free = np.setdiff1d(np.arange(res.size), crows)
    norm0 = float(np.linalg.norm(res[free]))
    cviol = float(np.abs(res[crows]).max()) if crows.size else 0.0
    ctol = 1e-10 * (1.0 + max((abs(v) for _, _, v in problem.constraints), default=0.0))
    if norm0 <= config.abs_floor and cviol <= ctol:
        return x, 0, state
    # the entry state is usually a warm start, so the residual scale of the
    # step only shows up after the first update; take the larger of the two
    reference = norm0
    merit = float(np.linalg.norm(res))
    for iteration in range(1, config.max_iter + 1):
        try:
            delta = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            raise NewtonError("singular tangent", iteration, float(np.linalg.norm(res[free])))
        # backtracking keeps the update inside the basin; a full step can
        # overshoot into the strongly rotated regime and limit-cycle
        alpha = 1.0
        accepted = False
        for _ in range(16):
            x_trial = x + alpha * delta
            res_t, jac_t, state_t = _assemble(problem, x_trial, zstar, gamma)
            _apply_constraints(problem, x_trial, gamma, res_t, jac_t)
            merit_t = float(np.linalg.norm(res_t))
            if np.isfinite(merit_t) and (
                merit_t <= (1.0 - 1e-4 * alpha) * merit or merit_t <= config.abs_floor
            ):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise NewtonError("line search stalled", iteration, merit)
        x, res, jac, state, merit = x_trial, res_t, jac_t, state_t, merit_t
        norm = float(np.linalg.norm(res[free]))
        cviol = float(np.abs(res[crows]).max()) if crows.size else 0.0
        if iteration == 1:
            reference = max(reference, norm)
        if norm <= max(config.tol * reference, config.abs_floor) and cviol <= ctol:
            return x, iteration, state
    raise NewtonError(
        f"no convergence in {config.max_iter} iterations "
        f"(residual {norm:.3e}, target {max(config.tol * reference, config.abs_floor):.3e})",
        config.max_iter,
        norm,
    )


def physical_states(problem: DiscretizedProblem, x: np.ndarray, cell_state: dict) -> np.ndarray:
    """(N, 6) nodal physical states from a converged global step."""
    n = problem.n_nodes
    d = x[: 2 * n].reshape(n, 2)
    z = np.empty((n, 6))
    for ci, c in enumerate(problem.cells):
        f, _, _, s = cell_state[c.node]
        e_t = 0.5 * (f.T @ f - np.eye(2))
        z[ci, :3] = (e_t[0, 0], e_t[1, 1], 2.0 * e_t[0, 1])
        z[ci, 3:] = s
    return z


@dataclass(frozen=True)
class FixedPointConfig:
    rtol: float = 1e-6
    max_iter: int = 200
    continue_on_fail: bool = False
    distance_floor_factor: float = 1e-14


@dataclass
class IterationRecord:
    load_step: int
    fp_iter: int
    distance: float
    newton_iters: int
    local_step_ms: float


@dataclass
class StepResult:
    load_factor: float
    converged: bool
    fp_iters: int
    distance: float
    x: np.ndarray
    nodal_u: np.ndarray  # (N, 2) field values at the nodes
    z: np.ndarray  # (N, 6) physical states
    zstar: np.ndarray  # (N, 6) optimal material states
    failure: str | None = None


@dataclass
class SolveHistory:
    steps: list = field(default_factory=list)
    iterations: list = field(default_factory=list)

    @property
    def failed_steps(self):
        return [s for s in self.steps if not s.converged]


def _initial_material_state(engine: LocalStepEngine, n: int) -> np.ndarray:
    if engine.choice.variant == "constitutive":
        return np.zeros((n, 6))
    return np.tile(engine.solve(np.zeros((1, 6)))[0], (n, 1))


def _nodal_field(problem, x):
    n = problem.n_nodes
    return problem.a_matrix @ x[: 2 * n].reshape(n, 2)


def fixed_point_solve(
    problem: DiscretizedProblem,
    dataset: MaterialDataset | None,
    local_choice: LocalSolverChoice,
    load_steps: int,
    fp_cfg: FixedPointConfig = FixedPointConfig(),
    newton_cfg: NewtonConfig = NewtonConfig(),
    engine: LocalStepEngine | None = None,
) -> SolveHistory:
    """Alternate global and local steps over an incremental load program.

    Load factors are j/load_steps.  Inside each step the iteration stops
    when the total weighted distance stalls in relative terms, falls below
    an absolute floor tied to its first value, or the material assignment
    repeats exactly.  A Newton failure triggers one halved retry of the
    increment before the step is declared failed.
    """
    if load_steps < 1:
        raise InvalidParameterError("load_steps must be >= 1")
    if engine is None:
        engine = LocalStepEngine(local_choice, dataset, problem.weight)
    n = problem.n_nodes
    history = SolveHistory()
    x = np.zeros(4 * n)
    zstar = _initial_material_state(engine, n)

    for step in range(1, load_steps + 1):
        gamma = step / load_steps
        prev_x, prev_zstar = x.copy(), zstar.copy()
        try:
            x, zstar, result = _run_fixed_point(
                problem, engine, x, zstar, gamma, step, fp_cfg, newton_cfg, history
            )
        except NewtonError as err:
            # halve the increment once, then retry the full step
            gamma_prev = (step - 1) / load_steps
            try:
                x_mid, zstar_mid, _ = _run_fixed_point(
                    problem, engine, prev_x, prev_zstar, 0.5 * (gamma_prev + gamma),
                    step, fp_cfg, newton_cfg, history,
                )
                x, zstar, result = _run_fixed_point(
                    problem, engine, x_mid, zstar_mid, gamma, step, fp_cfg, newton_cfg, history
                )
            except NewtonError as err2:
                result = StepResult(
                    gamma, False, 0, np.nan, prev_x, _nodal_field(problem, prev_x),
                    np.zeros((n, 6)), prev_zstar, failure=f"newton: {err2}",
                )
                x, zstar = prev_x, prev_zstar
                history.steps.append(result)
                if fp_cfg.continue_on_fail:
                    continue
                return history
        history.steps.append(result)
        if not result.converged and not fp_cfg.continue_on_fail:
            return history
    return history


def _run_fixed_point(problem, engine, x0, zstar0, gamma, step, fp_cfg, newton_cfg, history):
    x, zstar = x0.copy(), zstar0.copy()
    dist_prev = None
    dist_first = None
    converged = False
    it = 0
    z = np.zeros((problem.n_nodes, 6))
    for it in range(1, fp_cfg.max_iter + 1):
        x, n_newton, cell_state = solve_global_step(problem, x, zstar, gamma, newton_cfg)
        z = physical_states(problem, x, cell_state)
        t0 = time.perf_counter()
        zstar_new = engine.solve(z)
        local_ms = (time.perf_counter() - t0) * 1e3
        dist = float(np.sum(problem.areas * phase_distance_sq_many(z, zstar_new, problem.weight)))
        history.iterations.append(IterationRecord(step, it, dist, n_newton, local_ms))
        unchanged = np.array_equal(zstar_new, zstar)
        zstar = zstar_new
        if dist_first is None:
            dist_first = dist
        if dist <= fp_cfg.distance_floor_factor * dist_first:
            converged = True
        elif dist_prev is not None and abs(dist - dist_prev) <= fp_cfg.rtol * max(dist, dist_prev):
            converged = True
        elif unchanged:
            converged = True
        dist_prev = dist
        if converged:
            break
    result = StepResult(
        gamma, converged, it, dist_prev if dist_prev is not None else np.nan,
        x.copy(), _nodal_field(problem, x), z, zstar.copy(),
        failure=None if converged else "fixed-point iteration cap reached",
    )
    return x, zstar, result


def model_based_reference_solve(
    problem: DiscretizedProblem,
    load_steps: int,
    fp_cfg: FixedPointConfig = FixedPointConfig(),
    newton_cfg: NewtonConfig = NewtonConfig(),
) -> SolveHistory:
    """Reference run with the local step replaced by the linear law s = c e."""
    return fixed_point_solve(
        problem, None, LocalSolverChoice("constitutive"), load_steps, fp_cfg, newton_cfg,
        engine=LocalStepEngine(LocalSolverChoice("constitutive"), None, problem.weight),
    )
