"""One linearized Gauss-Newton subproblem and its KKT solve.

At a base point (q_old, u_old), held on its own mesh, the subproblem on
the current mesh reads

    min  |C(u_old) + C'(u_old) v - g_delta|_G^2 + (1/beta) |q - q0|_Q^2
    s.t. L (q - q_old) + K v + (A(q_old, u_old) - f) = 0   in W_h*,

with K = A'_u and L = A'_q frozen at the base point and u = u_old + v.
The u-regularization term is dropped (its role is purely theoretical).
The first-order system is assembled as one symmetric indefinite sparse
block matrix

    [ (1/beta) M_Q   0      -L'  ] [q]
    [ 0              C*C    -K'  ] [v]
    [ -L             -K      0   ] [z~]

and factorized directly; the adjoint of the optimality system is
z = 2 z~ (the block system absorbs the factor 2 of the squared-misfit
derivatives).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fem, problem as pb
from .fem import Field, Space, interpolate_onto, qspace, vspace
from .mesh import QuadMesh

__all__ = [
    "LinearizedSubproblem",
    "KktSolution",
    "AuxTriple",
    "KktError",
    "build_subproblem",
    "solve_kkt",
    "solve_second_order",
    "adjoint_at_base",
    "adjoint_w_norm",
    "dump_kkt",
]


class KktError(RuntimeError):
    pass


def _observation_blocks(obs, data, V: Space, Q: Space, u_old_h: Field):
    """Per-observation pieces: (CtC, c_residual, r_g, misfit_fn).

    c_residual is the vector of (r_g, C phi_i)_G over V dofs; misfit_fn
    maps a v-coefficient vector to |C v + r_g|_G^2.
    """
    if isinstance(obs, pb.PointObs):
        C = obs.matrix(V)
        rg = C @ u_old_h.coeffs - np.asarray(data)
        CtC = (C.T @ C).tocsr()
        c_res = C.T @ rg

        def misfit(v):
            m = C @ v + rg
            return float(m @ m), m

        return CtC, c_res, rg, misfit

    # L^2 observation: data is a Field on the current mesh (already
    # restricted); the misfit is measured in the L^2 inner product.
    g_h = data
    MQ = Q.mass()
    inc = _v_to_q(V, Q)
    rg = inc @ u_old_h.coeffs - g_h.coeffs
    CtC = (inc.T @ MQ @ inc).tocsr()
    c_res = inc.T @ (MQ @ rg)

    def misfit(v):
        m = inc @ v + rg
        return float(m @ (MQ @ m)), m

    return CtC, c_res, rg, misfit


def _v_to_q(V: Space, Q: Space) -> sp.csr_matrix:
    """Inclusion of V coefficients into Q coefficients (same mesh).

    Q coefficients are plain vertex values at Q's free vertices, so the
    inclusion is the V expansion matrix restricted to those rows.
    """
    cache = V._cache
    if "v_to_q" not in cache:
        cache["v_to_q"] = (V.T.tocsr()[Q.free, :]).tocsr()
    return cache["v_to_q"]


@dataclass
class LinearizedSubproblem:
    """Operators and residuals of one Gauss-Newton step."""

    problem: pb.ModelProblem
    mesh: QuadMesh
    V: Space
    Q: Space
    q_old: Field
    u_old: Field
    q_old_h: Field
    u_old_h: Field
    q0: Field
    K: sp.csr_matrix
    L: sp.csr_matrix
    M_Q: sp.csr_matrix
    CtC: sp.csr_matrix
    c_res: np.ndarray
    r_g: object
    misfit: object
    a_res: np.ndarray
    beta: float
    obs: object
    data_g: object

    def state_residual_norm(self) -> float:
        return fem.riesz_dual_norm(self.V, self.a_res)[0]

    def factorization(self):
        if not hasattr(self, "_lu"):
            try:
                self._lu = spla.splu(_kkt_matrix(self))
            except RuntimeError as exc:
                raise KktError(f"KKT factorization failed: {exc}") from exc
        return self._lu


def build_subproblem(problem: pb.ModelProblem, mesh: QuadMesh,
                     q_old: Field, u_old: Field, q0: Field,
                     obs, data, beta: float) -> LinearizedSubproblem:
    """Assemble all operators of the linearized problem on a mesh.

    ``data`` is the observation vector for point measurements or the
    (fine-mesh) data field for L^2 measurements, which is restricted to
    the current mesh here.
    """
    V, Q = vspace(mesh), qspace(mesh)
    q_old_h = interpolate_onto(q_old, mesh)
    u_old_h = interpolate_onto(u_old, mesh)
    K = pb.linearized_state_operator(problem, V, u_old_h)
    L = (-fem.assemble_mass(V, Q)).tocsr()
    M_Q = Q.mass()
    if isinstance(obs, pb.L2Obs):
        data_h = data if isinstance(data, Field) and data.mesh is mesh else None
        if data_h is None:
            raise ValueError("L2 data must be restricted to the mesh first")
    else:
        data_h = np.asarray(data, dtype=float)
    CtC, c_res, r_g, misfit = _observation_blocks(obs, data_h, V, Q, u_old_h)
    a_res = pb.semilinear_residual(problem, q_old, u_old, V)
    q0_h = interpolate_onto(q0, mesh)
    return LinearizedSubproblem(
        problem=problem, mesh=mesh, V=V, Q=Q, q_old=q_old, u_old=u_old,
        q_old_h=q_old_h, u_old_h=u_old_h, q0=q0_h, K=K, L=L, M_Q=M_Q,
        CtC=CtC, c_res=c_res, r_g=r_g, misfit=misfit, a_res=a_res,
        beta=beta, obs=obs, data_g=data_h,
    )


@dataclass
class KktSolution:
    """Primal/dual triple of one subproblem, with u = u_old + v."""

    sub: LinearizedSubproblem
    q: Field
    v: Field
    u: Field
    z: Field
    stationarity: tuple

    def misfit_sq(self) -> float:
        """|C'(u_old) v + C(u_old) - g_delta|_G^2 (this is I2h)."""
        return self.sub.misfit(self.v.coeffs)[0]


def _kkt_matrix(sub: LinearizedSubproblem) -> sp.csc_matrix:
    b = 1.0 / sub.beta
    return sp.bmat(
        [
            [b * sub.M_Q, None, -sub.L.T],
            [None, sub.CtC, -sub.K.T],
            [-sub.L, -sub.K, None],
        ],
        format="csc",
    )


def solve_kkt(sub: LinearizedSubproblem, check: bool = True) -> KktSolution:
    """Direct sparse factorization of the saddle-point system.

    Verifies the three stationarity residuals by re-substitution and
    raises KktError beyond a 1e-8 relative tolerance.
    """
    nq, nv = sub.Q.dim, sub.V.dim
    rhs = np.concatenate([
        (1.0 / sub.beta) * (sub.M_Q @ sub.q0.coeffs),
        -sub.c_res,
        sub.a_res - sub.L @ sub.q_old_h.coeffs,
    ])
    x = sub.factorization().solve(rhs)
    q = x[:nq]
    v = x[nq:nq + nv]
    z = 2.0 * x[nq + nv:]

    res_q = (2.0 / sub.beta) * (sub.M_Q @ (q - sub.q0.coeffs)) - sub.L.T @ z
    res_v = 2.0 * (sub.CtC @ v + sub.c_res) - sub.K.T @ z
    res_z = sub.L @ (q - sub.q_old_h.coeffs) + sub.K @ v + sub.a_res
    scale = max(
        np.abs(rhs).max(), np.abs(z).max(), np.abs(q).max(), np.abs(v).max(), 1.0
    )
    norms = (
        np.abs(res_q).max() / scale,
        np.abs(res_v).max() / scale,
        np.abs(res_z).max() / scale,
    )
    if check and max(norms) > 1e-8:
        raise KktError(
            f"stationarity residuals too large: {norms} (beta={sub.beta:g}, "
            f"n={A.shape[0]})"
        )
    u = Field(sub.V, sub.u_old_h.coeffs + v)
    return KktSolution(
        sub=sub, q=Field(sub.Q, q), v=Field(sub.V, v), u=u,
        z=Field(sub.V, z), stationarity=norms,
    )


@dataclass
class AuxTriple:
    """Solution of the second-order auxiliary system."""

    q: Field
    v: Field
    z: Field


def solve_second_order(sub: LinearizedSubproblem, sol: KktSolution) -> AuxTriple:
    """Auxiliary triple for the I2 estimator.

    The subproblem is linear-quadratic, so the Lagrangian Hessian is the
    constant KKT operator; one extra solve with right-hand side built
    from -I2'(u_h) yields the auxiliary triple.
    """
    nq, nv = sub.Q.dim, sub.V.dim
    rhs = np.concatenate([
        np.zeros(nq),
        -(sub.CtC @ sol.v.coeffs + sub.c_res),
        np.zeros(nv),
    ])
    x = sub.factorization().solve(rhs)
    return AuxTriple(
        q=Field(sub.Q, x[:nq]),
        v=Field(sub.V, x[nq:nq + nv]),
        z=Field(sub.V, 2.0 * x[nq + nv:]),
    )


def adjoint_at_base(problem: pb.ModelProblem, mesh: QuadMesh,
                    u_old: Field, obs, data) -> Field:
    """Adjoint state of the optimality system at the base point itself.

    Solves K' z = 2 C'* (C(u_old) - g_delta) with all operators frozen
    at (q_old, u_old); the W-norm of z drives the penalty-weight update.
    """
    V, Q = vspace(mesh), qspace(mesh)
    u_old_h = interpolate_onto(u_old, mesh)
    K = pb.linearized_state_operator(problem, V, u_old_h)
    _, c_res, _, _ = _observation_blocks(obs, data, V, Q, u_old_h)
    z = spla.splu(K.T.tocsc()).solve(2.0 * c_res)
    return Field(V, z)


def adjoint_w_norm(z: Field) -> float:
    """|grad z| -- the W-norm under the H^1_0 identification."""
    return z.norm_h1semi()


def dump_kkt(sub: LinearizedSubproblem, path) -> None:
    """Matrix Market dump of the assembled KKT operator (debugging)."""
    from scipy.io import mmwrite

    mmwrite(path, _kkt_matrix(sub).tocoo())
