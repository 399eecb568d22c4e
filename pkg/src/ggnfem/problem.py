"""The concrete parameter-identification problem.

Model PDE on the unit square with homogeneous Dirichlet data:

    -lap(u) + zeta * u^3 = q,

encoded as A(q, u) = f with f = 0 and

    A(q, u)(phi) = (grad u, grad phi) + zeta (u^3, phi) - (q, phi),

so the parameter derivative A'_q = -(mass) is constant and the state
derivative is A'_u = -lap + 3 zeta u^2.

Observations are either point evaluations at a uniform interior lattice
(G = R^n with the Euclidean product) or the identity into L^2 with data
restricted between nested meshes by L^2-projection.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import Field, Space, interpolate_onto, qspace, vspace
from .mesh import locate, uniform_mesh

__all__ = [
    "ModelProblem",
    "PointObs",
    "L2Obs",
    "SyntheticCase",
    "NoisyData",
    "ForwardSolveError",
    "synthetic_case",
    "semilinear_residual",
    "solve_forward",
    "simulate_data",
    "restrict_data",
    "save_data_bundle",
]


@dataclass(frozen=True)
class ModelProblem:
    """Nonlinearity strength of the semilinear model; f = 0 throughout."""

    zeta: float = 100.0

    def __post_init__(self):
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")


class ForwardSolveError(RuntimeError):
    def __init__(self, msg, residual_norm):
        super().__init__(f"{msg} (last residual dual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


# ---------------------------------------------------------------------------
# observation operators


class PointObs:
    """Point functionals at an n x n interior lattice; G = R^(n*n)."""

    kind = "point"

    def __init__(self, n_side: int = 9):
        self.n_side = n_side
        t = np.arange(1, n_side + 1) / (n_side + 1)
        gx, gy = np.meshgrid(t, t, indexing="ij")
        self.points = np.column_stack([gx.ravel(), gy.ravel()])

    @property
    def n_obs(self) -> int:
        return len(self.points)

    def matrix(self, space: Space) -> sp.csr_matrix:
        """Sparse evaluation matrix C with (C v)_i = v_h(xi_i)."""
        cache = space._cache
        if "obs_matrix" not in cache:
            mesh = space.mesh
            rows, cols, vals = [], [], []
            for i, p in enumerate(self.points):
                cid, (s, t) = locate(mesh, p)
                w = [(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t]
                for loc, wv in zip(mesh.cell_corners[cid], w):
                    if wv:
                        rows.append(i)
                        cols.append(loc)
                        vals.append(wv)
            full = sp.csr_matrix(
                (vals, (rows, cols)), shape=(self.n_obs, mesh.n_vertices)
            )
            cache["obs_matrix"] = (full @ space.T).tocsr()
        return cache["obs_matrix"]

    def observe(self, u: Field) -> np.ndarray:
        return u.eval_points(self.points)

    def norm(self, g: np.ndarray) -> float:
        return float(np.linalg.norm(g))

    def norm_sq(self, g: np.ndarray) -> float:
        return float(g @ g)


class L2Obs:
    """Identity observation into L^2; data live on the simulation mesh."""

    kind = "l2"

    def observe(self, u: Field) -> Field:
        # State as an L^2 element on its own mesh (boundary values zero).
        q = qspace(u.mesh)
        full = u.full_values()
        return Field(q, full[q.free])


@dataclass
class SyntheticCase:
    """Closed-form exact source, one of the labels 'a', 'b', 'c'."""

    label: str
    source: object  # vectorized callable (x, y) -> q

    def __call__(self, x, y):
        return self.source(x, y)


def _gaussian(c, mu, sigma, s):
    def g(x, y):
        ax = (s * x - mu) / sigma
        ay = (s * y - mu) / sigma
        return c / (2 * np.pi * sigma**2) * np.exp(-0.5 * (ax**2 + ay**2))

    return g


def synthetic_case(label: str) -> SyntheticCase:
    if label == "a":
        return SyntheticCase("a", _gaussian(10.0, 0.5, 0.1, 2.0))
    if label == "b":
        g1 = _gaussian(1.0, 0.5, 0.1, 2.0)
        g2 = _gaussian(1.0, 0.5, 0.1, 0.8)
        return SyntheticCase("b", lambda x, y: g1(x, y) + g2(x, y))
    if label == "c":
        return SyntheticCase("c", lambda x, y: np.where(x < 0.5, 1.0, 0.0))
    raise ValueError(f"unknown case {label!r}")


# ---------------------------------------------------------------------------
# semilinear operator and forward solve


def semilinear_residual(problem: ModelProblem, q: Field, u: Field, space: Space) -> np.ndarray:
    """Functional phi -> (grad u, grad phi) + zeta (u^3, phi) - (q, phi).

    q and u may live on coarser nested meshes; evaluation is exact.
    """
    if space.kind != "V":
        raise ValueError("the state residual is a functional on the V space")
    uh = interpolate_onto(u, space.mesh)
    out = space.stiffness() @ uh.coeffs
    if problem.zeta:
        out = out + problem.zeta * _cubic_term(space, uh)
    return out - fem.assemble_functional(space, interpolate_onto(q, space.mesh))


def _cubic_term(space: Space, u: Field) -> np.ndarray:
    """Vector of (u^3, phi_i) with same-mesh quadrature (exact for Q1)."""
    mesh = space.mesh
    pts, wts, shapes, _ = fem._cell_quad_data(mesh, fem.NQ_WEIGHTED)
    uv = fem._cell_values(u, mesh, fem.NQ_WEIGHTED)
    h2 = mesh.cell_sizes() ** 2
    cell_loads = np.einsum("c,cq,q,qi->ci", h2, uv**3, wts, shapes)
    full = np.zeros(mesh.n_vertices)
    np.add.at(full, mesh.cell_corners.ravel(), cell_loads.ravel())
    return space.T.T @ full


def linearized_state_operator(problem: ModelProblem, space: Space, u_base: Field) -> sp.csr_matrix:
    """A'_u at u_base: stiffness + 3 zeta (u_base^2 . , .)."""
    K = space.stiffness()
    if problem.zeta:
        K = K + 3.0 * problem.zeta * fem.assemble_weighted_mass(space, u_base, 2)
    return K.tocsr()


def solve_forward(problem: ModelProblem, q: Field, space: Space,
                  tol: float = 1e-10, max_iter: int = 50,
                  u_init: Field | None = None) -> Field:
    """Damped Newton solve of the semilinear PDE for a given source.

    Terminates when the dual norm of the residual drops below tol;
    backtracking halves the step until the residual norm decreases.
    """
    import scipy.sparse.linalg as spla

    u = np.zeros(space.dim) if u_init is None else interpolate_onto(u_init, space.mesh).coeffs.copy()
    load = fem.assemble_functional(space, interpolate_onto(q, space.mesh))
    Ks = space.stiffness()
    lu_s = space.stiffness_solver()

    def resid(uvec):
        r = Ks @ uvec - load
        if problem.zeta:
            r = r + problem.zeta * _cubic_term(space, Field(space, uvec))
        return r

    r = resid(u)
    rnorm = np.sqrt(max(r @ lu_s.solve(r), 0.0))
    for _ in range(max_iter):
        if rnorm <= tol:
            return Field(space, u)
        J = linearized_state_operator(problem, space, Field(space, u))
        d = spla.splu(J.tocsc()).solve(-r)
        step = 1.0
        while True:
            r_new = resid(u + step * d)
            rnorm_new = np.sqrt(max(r_new @ lu_s.solve(r_new), 0.0))
            if rnorm_new < rnorm or step < 1e-10:
                break
            step *= 0.5
        u = u + step * d
        r, rnorm = r_new, rnorm_new
    if rnorm <= tol:
        return Field(space, u)
    raise ForwardSolveError("Newton did not converge", rnorm)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class NoisyData:
    """Noisy observations with the actually realized noise level.

    delta is recomputed from the drawn perturbation, never assumed.
    """

    obs: object
    g: object  # ndarray (point) or Field (l2)
    g_delta: object
    delta: float
    p: float
    seed: int
    case: str
    zeta: float
    fine_levels: int
    q_true: Field
    u_true: Field
    warnings: list = dc_field(default_factory=list)


def simulate_truth(problem: ModelProblem, case: SyntheticCase,
                   fine_levels: int):
    """Exact pair (q, u) on the fine simulation mesh.

    Reusable across noise realizations of the same configuration.
    """
    mesh = uniform_mesh(fine_levels)
    q_true = qspace(mesh).interpolate(case.source)
    u_true = solve_forward(problem, q_true, vspace(mesh))
    return q_true, u_true


def simulate_data(problem: ModelProblem, case: SyntheticCase, obs,
                  fine_levels: int, p: float, seed: int,
                  truth=None) -> NoisyData:
    """Forward-simulate on a fine uniform mesh and perturb the data.

    Point data get componentwise uniform noise scaled by p * max|g|;
    L^2 data get g + p |g| r / |r| with iid uniform nodal r. delta is the
    realized G-norm of the perturbation, deterministic in the seed.  A
    precomputed (q_true, u_true) pair may be passed to reuse one forward
    solve across noise levels.
    """
    if truth is None:
        truth = simulate_truth(problem, case, fine_levels)
    q_true, u_true = truth
    rng = np.random.default_rng(seed)

    if isinstance(obs, PointObs):
        g = obs.observe(u_true)
        if p > 0:
            noise = rng.uniform(-1.0, 1.0, obs.n_obs) * (p * np.abs(g).max())
        else:
            noise = np.zeros(obs.n_obs)
        g_delta = g + noise
        delta = float(np.linalg.norm(g_delta - g))
    elif isinstance(obs, L2Obs):
        g = obs.observe(u_true)
        if p > 0:
            r = rng.uniform(-1.0, 1.0, g.space.dim)
            rf = Field(g.space, r)
            g_delta = Field(g.space, g.coeffs + p * g.norm_l2() / rf.norm_l2() * r)
        else:
            g_delta = Field(g.space, g.coeffs.copy())
        delta = Field(g.space, g_delta.coeffs - g.coeffs).norm_l2()
    else:
        raise TypeError(f"unsupported observation {obs!r}")

    return NoisyData(
        obs=obs, g=g, g_delta=g_delta, delta=delta, p=p, seed=seed,
        case=case.label, zeta=problem.zeta, fine_levels=fine_levels,
        q_true=q_true, u_true=u_true,
    )


def restrict_data(data: NoisyData, target_space: Space) -> Field:
    """L^2-projection of fine-mesh L^2 data onto a coarser Q1 space.

    The right-hand side (g_delta, psi_i) is integrated exactly on the
    fine mesh (the integrand is piecewise bilinear there), then a mass
    solve on the target space yields the projection.
    """
    if not isinstance(data.obs, L2Obs):
        raise TypeError("restrict_data applies to L^2 observations")
    g = data.g_delta
    if g.mesh is target_space.mesh:
        return Field(target_space, g.coeffs.copy())
    rhs = _cross_mass_rhs(g, target_space)
    import scipy.sparse.linalg as spla

    cache = target_space._cache
    if "mass_lu" not in cache:
        cache["mass_lu"] = spla.splu(target_space.mass().tocsc())
    return Field(target_space, cache["mass_lu"].solve(rhs))


def _cross_mass_rhs(fine_field: Field, coarse_space: Space) -> np.ndarray:
    """Vector of (fine_field, psi_i) integrated cell by cell on the fine mesh."""
    fine = fine_field.mesh
    coarse = coarse_space.mesh
    src_ids = fem._containment_map(coarse, fine)
    pts, wts, shapes, _ = fem._cell_quad_data(fine, fem.NQ_BASE)
    fvals = fem._cell_values(fine_field, fine, fem.NQ_BASE)
    fx0, fy0, fh = fem._cell_origin_arrays(fine)
    cx0, cy0, ch = fem._cell_origin_arrays(coarse)
    gx = fx0[:, None] + fh[:, None] * pts[None, :, 0]
    gy = fy0[:, None] + fh[:, None] * pts[None, :, 1]
    s = (gx - cx0[src_ids][:, None]) / ch[src_ids][:, None]
    t = (gy - cy0[src_ids][:, None]) / ch[src_ids][:, None]
    basis = np.stack(
        [(1 - s) * (1 - t), s * (1 - t), (1 - s) * t, s * t], axis=-1
    )  # (n_fine, nq, 4)
    cell_loads = np.einsum("c,cq,q,cqi->ci", fh**2, fvals, wts, basis)
    full = np.zeros(coarse.n_vertices)
    np.add.at(full, coarse.cell_corners[src_ids].ravel(), cell_loads.ravel())
    return coarse_space.T.T @ full


# ---------------------------------------------------------------------------
# persistence


def save_data_bundle(data: NoisyData, outdir: str) -> None:
    """Observation bundle: CSV (+ VTK for L^2 data) and a manifest."""
    os.makedirs(outdir, exist_ok=True)
    if isinstance(data.obs, PointObs):
        with open(os.path.join(outdir, "observations.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "x", "y", "g", "g_delta"])
            for i, (p, gi, gd) in enumerate(
                zip(data.obs.points, data.g, data.g_delta)
            ):
                w.writerow([i, f"{p[0]:.16g}", f"{p[1]:.16g}",
                            f"{gi:.16g}", f"{gd:.16g}"])
    else:
        fem.write_field_vtk(data.g_delta, os.path.join(outdir, "g_delta.vtk"),
                            name="g_delta")
        fem.write_field_csv(data.g_delta, os.path.join(outdir, "g_delta.csv"))
    with open(os.path.join(outdir, "manifest.txt"), "w") as fh:
        fh.write(f"case = {data.case}\n")
        fh.write(f"observation = {data.obs.kind}\n")
        fh.write(f"zeta = {data.zeta:.16g}\n")
        fh.write(f"p = {data.p:.16g}\n")
        fh.write(f"seed = {data.seed}\n")
        fh.write(f"fine_levels = {data.fine_levels}\n")
        fh.write(f"delta = {data.delta:.16g}\n")
        for wmsg in data.warnings:
            fh.write(f"warning = {wmsg}\n")
