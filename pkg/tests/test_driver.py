import numpy as np
import pytest

from ggnfem import driver as dv, problem as pb
from ggnfem.fem import qspace, vspace
from ggnfem.mesh import uniform_mesh


def test_config_defaults_satisfy_assumptions():
    cfg = dv.GgnConfig()
    cfg.validate()
    assert abs(cfg.theta_tilde - 0.5 * (0.2 + 0.4999)) < 1e-15
    assert abs(cfg.eta1_gate_coefficient() - 0.12) < 1e-6


def test_config_rejects_bad_parameters():
    with pytest.raises(ValueError):
        dv.GgnConfig(tau=0.5)
    with pytest.raises(ValueError):
        dv.GgnConfig(theta_low=0.6, theta_high=0.4)
    with pytest.raises(ValueError):
        dv.GgnConfig(tau_beta=0.5)
    # escape hatch for negative controls
    cfg = dv.GgnConfig(tau=0.5, enforce_assumptions=False)
    assert cfg.tau == 0.5


def test_mark_fraction():
    ind = np.array([5.0, 1.0, 3.0, 1.0])
    marked = dv.mark_fraction(ind, 0.3)
    assert marked == [0]
    marked = dv.mark_fraction(ind, 0.8)
    assert set(marked) == {0, 2}
    assert dv.mark_fraction(np.zeros(4), 0.3) == []


def test_immediate_stop_on_huge_delta():
    prob = pb.ModelProblem(zeta=100.0)
    data = pb.simulate_data(prob, pb.synthetic_case("a"), pb.PointObs(5),
                            5, 0.0, 1)
    # fake a huge noise level: tau^2 delta^2 above the initial I3h
    data.delta = 100.0
    rep = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=4))
    assert rep.termination == "discrepancy"
    assert rep.outer_iterations == 0
    assert np.abs(rep.q_final.coeffs).max() == 0.0


def test_run_reproducible(sims):
    data = sims(zeta=100.0, p=0.01, seed=2)
    prob = pb.ModelProblem(zeta=100.0)
    r1 = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=5))
    r2 = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=5))
    assert len(r1.rows) == len(r2.rows)
    for a, b in zip(r1.rows, r2.rows):
        assert a.phase == b.phase and a.nodes == b.nodes
        assert a.beta == b.beta
        assert (a.i2h == b.i2h) or (np.isnan(a.i2h) and np.isnan(b.i2h))
    assert r1.control_error == r2.control_error


def test_run_invariants(ggn_runs):
    rep = ggn_runs(zeta=100.0, p=0.01, seed=1)
    assert rep.termination == "discrepancy"
    # rho nondecreasing along the run
    rhos = [r.rho for r in rep.rows if not np.isnan(r.rho)]
    assert all(a <= b + 1e-15 for a, b in zip(rhos, rhos[1:]))
    # node counts never decrease (meshes form a nested chain)
    nodes = [r.nodes for r in rep.rows]
    assert all(a <= b for a, b in zip(nodes, nodes[1:]))
    # the literal stopping test
    assert rep.i3h_final <= dv.GgnConfig().tau**2 * rep.delta**2
    # every accepted step passed the eta1 gate or carries a waiver warning
    cfg = dv.GgnConfig()
    for r in rep.accepted_rows:
        gate = cfg.eta1_gate_coefficient() * r.i3h
        assert abs(r.eta1) <= gate or rep.warnings
    # qualitative trajectory: the linearized misfit drops over the run and
    # the regularization search interleaves updates with refinements
    accepted = rep.accepted_rows
    assert accepted[-1].i2h < accepted[0].i2h
    phases = {r.phase for r in rep.rows}
    assert "beta" in phases
    assert phases & {"refine1", "refine2"}


def test_beta_search_returns_inband_directly():
    """If I2h is already in the band the solve is accepted without a
    single beta update."""
    prob = pb.ModelProblem(zeta=100.0)
    data = pb.simulate_data(prob, pb.synthetic_case("a"), pb.PointObs(9),
                            6, 0.01, 11)
    rep = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=5))
    # the first accepted step of this configuration needs no beta row at k=0
    k0 = [r for r in rep.rows if r.k == 0 and r.phase == "beta"]
    assert k0 == []
    assert rep.rows[1].phase == "solve"


def test_beta_search_grid_oracle():
    """The band-hitting beta agrees with a brute-force scan on a log grid:
    the accepted beta lies in the band and no coarser grid point below it
    does (monotone misfit)."""
    from ggnfem import subsolver as ss

    prob = pb.ModelProblem(zeta=10.0)
    mesh = uniform_mesh(3)
    V, Q = vspace(mesh), qspace(mesh)
    obs = pb.PointObs(3)
    data = pb.simulate_data(prob, pb.synthetic_case("a"), obs, 5, 0.02, 6)

    def i2_of(beta):
        sub = ss.build_subproblem(prob, mesh, Q.zeros(), V.zeros(), Q.zeros(),
                                  obs, data.g_delta, beta)
        return ss.solve_kkt(sub).misfit_sq()

    i3 = float(data.g_delta @ data.g_delta)  # initial I3h with zero fields
    cfg = dv.GgnConfig()
    lo, hi = cfg.theta_low * i3, cfg.theta_high * i3
    grid = np.logspace(-2, 10, 61)
    vals = np.array([i2_of(float(b)) for b in grid])
    in_band = (vals >= lo) & (vals <= hi)
    assert in_band.any()
    # driver search from beta0=10 on the same frozen instance
    run = dv._Run(prob, data, dv.GgnConfig(max_depth=3), None)
    run.i3h = i3
    sub, sol = run.beta_search()
    assert lo <= sol.misfit_sq() <= hi
    # consistency with the monotone scan: the accepted beta is inside the
    # beta-interval bracketed by the grid's band membership
    b_lo = grid[in_band].min()
    b_hi = grid[in_band].max()
    assert b_lo / 10**0.21 <= run.beta <= b_hi * 10**0.21


def test_monotonicity_check_and_negative_control(sims):
    data = sims(zeta=100.0, p=0.04, seed=1)
    prob = pb.ModelProblem(zeta=100.0)
    # healthy run satisfies the bound at every accepted iterate
    rep = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=5))
    assert rep.monotonicity and all(rep.monotonicity)
    # k = 0 with the zero initial guess trivially satisfies the bound
    q0 = qspace(uniform_mesh(2)).zeros()
    u0 = vspace(uniform_mesh(2)).zeros()
    assert dv.check_monotonicity(q0, u0, q0, u0, data)
    # sabotaged tau drives the iteration far past the noise level and the
    # distance bound is violated and flagged
    cfg = dv.GgnConfig(tau=0.5, enforce_assumptions=False, max_depth=4,
                       max_outer=25)
    rep_bad = dv.run_ggn(prob, data, cfg)
    assert rep_bad.monotonicity and not all(rep_bad.monotonicity)


@pytest.mark.parametrize("case,obs", [("a", "l2"), ("b", "point"),
                                      ("c", "point")])
def test_other_configurations_smoke(case, obs):
    prob = pb.ModelProblem(zeta=100.0)
    observation = pb.L2Obs() if obs == "l2" else pb.PointObs(9)
    data = pb.simulate_data(prob, pb.synthetic_case(case), observation,
                            7, 0.01, 1)
    rep = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=5))
    assert rep.termination == "discrepancy"
    assert all(rep.monotonicity)
    assert rep.control_error < 1.0


def test_shallow_fine_mesh_warns():
    prob = pb.ModelProblem(zeta=1.0)
    data = pb.simulate_data(prob, pb.synthetic_case("a"), pb.PointObs(5),
                            4, 0.02, 1)
    rep = dv.run_ggn(prob, data, dv.GgnConfig(max_depth=4))
    assert any("does not exceed" in w for w in rep.warnings)


def test_report_files(tmp_path, ggn_runs):
    rep = ggn_runs(zeta=100.0, p=0.01, seed=1)
    dv.write_run_report(rep, tmp_path / "out", config_text="x = 1\n")
    report = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert report[0].split(",")[:4] == ["k", "phase", "nodes", "beta"]
    assert len(report) == 1 + len(rep.rows)
    manifest = (tmp_path / "out" / "manifest.txt").read_text()
    assert "termination = discrepancy" in manifest
    assert "config_hash =" in manifest
    for name in ("q_final.vtk", "u_final.vtk", "q_final.csv",
                 "mesh_final.vtk"):
        assert (tmp_path / "out" / name).exists()
