import numpy as np
import pytest
import scipy.sparse.linalg as spla

from ggnfem import problem as pb, subsolver as ss
from ggnfem.fem import Field, qspace, vspace
from ggnfem.mesh import uniform_mesh


def _point_instance(zeta=100.0, beta=25.0, n_side=1, levels=2, shift=0.05):
    prob = pb.ModelProblem(zeta=zeta)
    mesh = uniform_mesh(levels)
    V, Q = vspace(mesh), qspace(mesh)
    obs = pb.PointObs(n_side)
    u0 = pb.solve_forward(prob, Q.zeros(), V)
    g = obs.observe(u0) + shift
    sub = ss.build_subproblem(prob, mesh, Q.zeros(), V.zeros(), Q.zeros(),
                              obs, g, beta)
    return prob, mesh, V, Q, obs, sub


def test_consistent_data_fixed_point():
    prob = pb.ModelProblem(zeta=100.0)
    mesh = uniform_mesh(3)
    V, Q = vspace(mesh), qspace(mesh)
    obs = pb.PointObs(3)
    q0 = Q.interpolate(lambda x, y: 0.3 + 0.2 * x * y)
    u_old = pb.solve_forward(prob, q0, V)
    g = obs.observe(u_old)
    sub = ss.build_subproblem(prob, mesh, q0, u_old, q0, obs, g, beta=10.0)
    sol = ss.solve_kkt(sub)
    assert np.abs(sol.q.coeffs - q0.coeffs).max() < 1e-8
    assert np.abs(sol.v.coeffs).max() < 1e-8
    assert np.abs(sol.u.coeffs - u_old.coeffs).max() < 1e-8


def test_kkt_dense_oracle_small():
    """Sparse KKT against a dense-inverse oracle on the 4x4 mesh, one
    observation point."""
    prob, mesh, V, Q, obs, sub = _point_instance()
    sol = ss.solve_kkt(sub)
    nq, nv = Q.dim, V.dim
    MQ = sub.M_Q.toarray()
    K = sub.K.toarray()
    L = sub.L.toarray()
    C = obs.matrix(V).toarray()
    b = 1.0 / sub.beta
    A = np.block([
        [b * MQ, np.zeros((nq, nv)), -L.T],
        [np.zeros((nv, nq)), C.T @ C, -K.T],
        [-L, -K, np.zeros((nv, nv))],
    ])
    rg = C @ sub.u_old_h.coeffs - np.asarray(sub.data_g)
    rhs = np.concatenate([
        b * MQ @ sub.q0.coeffs, -C.T @ rg,
        sub.a_res - L @ sub.q_old_h.coeffs,
    ])
    x = np.linalg.solve(A, rhs)
    assert np.abs(sol.q.coeffs - x[:nq]).max() < 1e-9
    assert np.abs(sol.v.coeffs - x[nq:nq + nv]).max() < 1e-9
    assert np.abs(sol.z.coeffs - 2.0 * x[nq + nv:]).max() < 1e-9


def test_constraint_feasibility_and_stationarity():
    prob, mesh, V, Q, obs, sub = _point_instance(n_side=3, levels=3)
    sol = ss.solve_kkt(sub)
    res = sub.L @ (sol.q.coeffs - sub.q_old_h.coeffs) + sub.K @ sol.v.coeffs \
        + sub.a_res
    from ggnfem.fem import riesz_dual_norm

    scale = max(1.0, np.abs(sol.q.coeffs).max())
    assert riesz_dual_norm(V, res)[0] <= 1e-10 * scale
    assert max(sol.stationarity) <= 1e-8


def test_minimizer_beats_feasible_competitors():
    prob, mesh, V, Q, obs, sub = _point_instance(n_side=3, levels=3, beta=1e3)
    sol = ss.solve_kkt(sub)
    MQ = sub.M_Q
    Klu = spla.splu(sub.K.tocsc())

    def objective(qv, vv):
        mis, _ = sub.misfit(vv)
        dq = qv - sub.q0.coeffs
        return mis + (dq @ (MQ @ dq)) / sub.beta

    base = objective(sol.q.coeffs, sol.v.coeffs)
    rng = np.random.default_rng(4)
    for _ in range(100):
        qv = sol.q.coeffs + rng.standard_normal(Q.dim) * 0.05
        vv = Klu.solve(-(sub.L @ (qv - sub.q_old_h.coeffs)) - sub.a_res)
        assert base <= objective(qv, vv) + 1e-12


def test_large_beta_minimizes_misfit():
    """With essentially no regularization the solution's misfit cannot be
    beaten by sampled feasible competitors (L^2 observations)."""
    prob = pb.ModelProblem(zeta=10.0)
    mesh = uniform_mesh(3)
    V, Q = vspace(mesh), qspace(mesh)
    obs = pb.L2Obs()
    data = pb.simulate_data(prob, pb.synthetic_case("a"), obs, 5, 0.01, 9)
    g_h = pb.restrict_data(data, Q)
    sub = ss.build_subproblem(prob, mesh, Q.zeros(), V.zeros(), Q.zeros(),
                              obs, g_h, beta=1e12)
    sol = ss.solve_kkt(sub)
    i2 = sol.misfit_sq()
    Klu = spla.splu(sub.K.tocsc())
    rng = np.random.default_rng(5)
    for _ in range(40):
        qv = sol.q.coeffs + rng.standard_normal(Q.dim)
        vv = Klu.solve(-(sub.L @ (qv - sub.q_old_h.coeffs)) - sub.a_res)
        assert i2 <= sub.misfit(vv)[0] + 1e-10


def test_misfit_nonincreasing_in_beta():
    prob, mesh, V, Q, obs, sub0 = _point_instance(n_side=3, levels=3)
    prob_ref = prob
    betas = np.logspace(-2, 8, 11)
    vals = []
    for b in betas:
        sub = ss.build_subproblem(prob_ref, mesh, Q.zeros(), V.zeros(),
                                  Q.zeros(), obs, sub0.data_g, float(b))
        vals.append(ss.solve_kkt(sub).misfit_sq())
    assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))


def test_adjoint_w_norm():
    target = np.pi / np.sqrt(2.0)
    gaps = []
    for lev in (4, 5, 6):
        V = vspace(uniform_mesh(lev))
        z = V.interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
        gaps.append(abs(ss.adjoint_w_norm(z) - target))
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3
    V = vspace(uniform_mesh(4))
    z = V.interpolate(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y))
    assert ss.adjoint_w_norm(V.zeros()) == 0.0
    assert abs(ss.adjoint_w_norm(Field(V, 2 * z.coeffs))
               - 2 * ss.adjoint_w_norm(z)) < 1e-12


def test_second_order_zero_and_linearity():
    prob = pb.ModelProblem(zeta=100.0)
    mesh = uniform_mesh(3)
    V, Q = vspace(mesh), qspace(mesh)
    obs = pb.PointObs(3)
    # exact-data fixed point: I2' = 0 at the solution
    q0 = Q.interpolate(lambda x, y: 0.1 + 0.0 * x)
    u_old = pb.solve_forward(prob, q0, V)
    g = obs.observe(u_old)
    sub = ss.build_subproblem(prob, mesh, q0, u_old, q0, obs, g, beta=10.0)
    sol = ss.solve_kkt(sub)
    aux = ss.solve_second_order(sub, sol)
    for f in (aux.q, aux.v, aux.z):
        assert np.abs(f.coeffs).max() < 1e-8
    # linearity: doubling I2' doubles the auxiliary triple
    prob2, mesh2, V2, Q2, obs2, sub2 = _point_instance(n_side=3, levels=3)
    sol2 = ss.solve_kkt(sub2)
    aux2 = ss.solve_second_order(sub2, sol2)
    doubled = ss.KktSolution(sub=sub2, q=sol2.q,
                             v=Field(V2, 2 * sol2.v.coeffs), u=sol2.u,
                             z=sol2.z, stationarity=(0, 0, 0))
    # I2'(u)(.) is affine in v through CtC v + c_res; emulate doubling by
    # scaling the data residual instead
    g2 = np.asarray(sub2.data_g)
    gd = obs2.matrix(V2) @ sub2.u_old_h.coeffs
    scaled = gd + 2.0 * (g2 - gd)
    sub3 = ss.build_subproblem(prob2, mesh2, Q2.zeros(), V2.zeros(),
                               Q2.zeros(), obs2, scaled, sub2.beta)
    sol3 = ss.solve_kkt(sub3)
    aux3 = ss.solve_second_order(sub3, sol3)
    assert np.abs(aux3.q.coeffs - 2 * aux2.q.coeffs).max() < 1e-9
    assert np.abs(aux3.v.coeffs - 2 * aux2.v.coeffs).max() < 1e-9


def test_second_order_dense_oracle():
    prob, mesh, V, Q, obs, sub = _point_instance()
    sol = ss.solve_kkt(sub)
    aux = ss.solve_second_order(sub, sol)
    nq, nv = Q.dim, V.dim
    MQ = sub.M_Q.toarray()
    K = sub.K.toarray()
    L = sub.L.toarray()
    C = obs.matrix(V).toarray()
    b = 1.0 / sub.beta
    A = np.block([
        [b * MQ, np.zeros((nq, nv)), -L.T],
        [np.zeros((nv, nq)), C.T @ C, -K.T],
        [-L, -K, np.zeros((nv, nv))],
    ])
    rg = C @ sub.u_old_h.coeffs - np.asarray(sub.data_g)
    rhs = np.concatenate([
        np.zeros(nq), -(C.T @ (C @ sol.v.coeffs) + C.T @ rg), np.zeros(nv)])
    x = np.linalg.solve(A, rhs)
    assert np.abs(aux.q.coeffs - x[:nq]).max() < 1e-9
    assert np.abs(aux.v.coeffs - x[nq:nq + nv]).max() < 1e-9
    assert np.abs(aux.z.coeffs - 2 * x[nq + nv:]).max() < 1e-9


def test_adjoint_at_base_solves_optimality_row():
    prob = pb.ModelProblem(zeta=100.0)
    mesh = uniform_mesh(3)
    V, Q = vspace(mesh), qspace(mesh)
    obs = pb.PointObs(3)
    data = pb.simulate_data(prob, pb.synthetic_case("a"), obs, 5, 0.01, 2)
    u_old = V.interpolate(lambda x, y: x * (1 - x) * y * (1 - y))
    z = ss.adjoint_at_base(prob, mesh, u_old, obs, data.g_delta)
    K = pb.linearized_state_operator(prob, V, u_old)
    C = obs.matrix(V)
    rg = C @ u_old.coeffs - data.g_delta
    resid = K.T @ z.coeffs - 2.0 * (C.T @ rg)
    assert np.abs(resid).max() < 1e-10 * max(1.0, np.abs(z.coeffs).max())


def test_l2_requires_restricted_data():
    prob = pb.ModelProblem(zeta=1.0)
    data = pb.simulate_data(prob, pb.synthetic_case("a"), pb.L2Obs(), 4,
                            0.01, 1)
    mesh = uniform_mesh(2)
    with pytest.raises(ValueError):
        ss.build_subproblem(prob, mesh, qspace(mesh).zeros(),
                            vspace(mesh).zeros(), qspace(mesh).zeros(),
                            data.obs, data.g_delta, 10.0)


def test_matrix_market_dump(tmp_path):
    prob, mesh, V, Q, obs, sub = _point_instance()
    path = tmp_path / "kkt.mtx"
    ss.dump_kkt(sub, path)
    from scipy.io import mmread

    A = mmread(path)
    n = Q.dim + 2 * V.dim
    assert A.shape == (n, n)
