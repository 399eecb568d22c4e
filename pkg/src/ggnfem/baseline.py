"""Reduced nonlinear-Tikhonov reference solver.

Minimizes |C(S(q)) - g_delta|_G^2 + (1/beta) |q - q0|_Q^2 over the
parameter alone, so every inner Gauss-Newton iteration pays for a full
nonlinear forward solve; beta is driven by the same bracket/bisection
into the band [tau_low^2 delta^2, tau_up^2 delta^2] on the nonlinear
discrepancy, and the mesh is refined by a dual-weighted indicator of
the Tikhonov functional at the Gauss-Newton fixed point.  The stopping
threshold matches the linearized solver's comparison protocol; the
estimator cascade here is deliberately simpler than the historical
reduced algorithm it stands in for.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import estimators as est, problem as pb, subsolver as ss
from .driver import (RunReport, RunRow, _observed, mark_fraction,
                     relative_control_error)
from .fem import Field, interpolate_onto, qspace, vspace
from .mesh import refine, uniform_mesh

__all__ = ["NtConfig", "run_nt"]


@dataclass
class NtConfig:
    """Parameters of the reduced reference solver."""

    tau_tilde: float = 0.1
    tau_low: float = 3.1
    tau_mid: float = 4.0
    tau_up: float = 5.0
    c_tc: float = 1e-7
    c1: float = 0.9
    c2: float = 0.4
    beta0: float = 10.0
    coarse_levels: int = 2
    max_depth: int = 6
    gn_tol: float = 1e-6
    gn_cap: int = 25
    max_passes: int = 60
    max_beta_steps: int = 30
    max_refines: int = 8
    marking_fraction: float = 0.3
    beta_min: float = 1e-10
    beta_max: float = 1e14
    forward_tol: float = 1e-10

    def __post_init__(self):
        if not self.tau_low < self.tau_mid < self.tau_up:
            raise ValueError("need tau_low < tau_mid < tau_up")


def _gn_fit(problem, data, mesh, beta, q_start, u_warm, cfg, data_cache):
    """Damped Gauss-Newton on the reduced Tikhonov functional.

    Every iteration solves the nonlinear state equation; the step is the
    all-at-once KKT solve at the exactly-solved base point (the state
    residual vanishes there, which makes the two formulations agree).
    Returns the fixed point with a subproblem/solution pair at it.
    """
    V, Q = vspace(mesh), qspace(mesh)
    q = interpolate_onto(q_start, mesh)
    q0 = Q.zeros()
    obs_data = _observed(data, mesh, data_cache)
    u = pb.solve_forward(problem, q, V, tol=cfg.forward_tol, u_init=u_warm)

    if isinstance(data.obs, pb.PointObs):
        C = data.obs.matrix(V)
        gvec = np.asarray(obs_data)

        def misfit(u_f):
            r = C @ u_f.coeffs - gvec
            return float(r @ r)
    else:
        inc = ss._v_to_q(V, Q)
        MQ = Q.mass()

        def misfit(u_f):
            r = inc @ u_f.coeffs - obs_data.coeffs
            return float(r @ (MQ @ r))

    def j_value(q_f, u_f):
        mis = misfit(u_f)
        dq = q_f.coeffs - q0.coeffs
        return mis + (dq @ (Q.mass() @ dq)) / beta, mis

    j_old, disc2 = j_value(q, u)
    n_forward = 1
    for _ in range(cfg.gn_cap):
        sub = ss.build_subproblem(problem, mesh, q, u, q0, data.obs,
                                  obs_data, beta)
        sol = ss.solve_kkt(sub)
        dq = sol.q.coeffs - q.coeffs
        step = 1.0
        while True:
            q_c = Field(Q, q.coeffs + step * dq)
            u_c = pb.solve_forward(problem, q_c, V, tol=cfg.forward_tol,
                                   u_init=u)
            n_forward += 1
            j_new, disc2_c = j_value(q_c, u_c)
            if j_new <= j_old or step < 1.0 / 16.0:
                break
            step *= 0.5
        rel_change = np.abs(step * dq).max() / max(1.0, np.abs(q.coeffs).max())
        q, u, j_old, disc2 = q_c, u_c, j_new, disc2_c
        if rel_change <= cfg.gn_tol:
            break
    sub = ss.build_subproblem(problem, mesh, q, u, q0, data.obs, obs_data,
                              beta)
    sol = ss.solve_kkt(sub)  # fixed-point triple for the indicator
    return q, u, sub, sol, disc2, n_forward


def run_nt(problem: pb.ModelProblem, data: pb.NoisyData, cfg: NtConfig) -> RunReport:
    """Nonlinear-Tikhonov run on the same data as the linearized solver."""
    t0 = time.perf_counter()
    mesh = uniform_mesh(cfg.coarse_levels)
    data_cache: dict = {}
    rows: list[RunRow] = []
    warnings: list[str] = list(data.warnings)
    monotonicity: list[bool] = []
    beta = cfg.beta0
    q = qspace(mesh).zeros()
    u_warm = None
    delta2 = data.delta**2
    band = (cfg.tau_low**2 * delta2, cfg.tau_up**2 * delta2)
    lo = hi = None
    n_beta = 0
    n_ref = 0
    termination = "iteration-cap"
    total_forward = 0

    for _ in range(cfg.max_passes):
        q, u, sub, sol, disc2, nf = _gn_fit(problem, data, mesh, beta, q,
                                            u_warm, cfg, data_cache)
        total_forward += nf
        u_warm = u
        eta, ind = est.estimate_eta1(sol, sub)
        reg = est._reg_term(sub, sol)
        rows.append(RunRow(k=n_beta + n_ref, phase="solve",
                           nodes=mesh.n_vertices, beta=beta, rho=float("nan"),
                           i1h=disc2 + reg, i2h=disc2, i3h=float("nan"),
                           i4h=float("nan"), eta1=eta, eta2=float("nan")))
        # Accuracy gate: relative while the discrepancy is large, anchored
        # at the noise scale once decisions happen near the band.
        gate = cfg.tau_tilde * max(disc2, cfg.tau_low**2 * delta2)
        if ind.sum() > gate and n_ref < cfg.max_refines:
            new_mesh = refine(mesh, mark_fraction(ind, cfg.marking_fraction),
                              max_level=cfg.max_depth)
            if new_mesh is not mesh:
                rows[-1].phase = "refine1"
                mesh = new_mesh
                n_ref += 1
                lo = hi = None
                u_warm = None
                continue
        if disc2 > band[1]:
            direction = "up"
        elif disc2 < band[0]:
            direction = "down"
        else:
            termination = "discrepancy"
            rows[-1].phase = "accept"
            break
        n_beta += 1
        if n_beta > cfg.max_beta_steps:
            warnings.append("beta search exhausted in the reduced solver")
            termination = "beta-search-failure"
            break
        rows[-1].phase = "beta"
        lb = np.log10(beta)
        if direction == "up":
            lo = lb if lo is None else max(lo, lb)
            lb_new = 0.5 * (lo + hi) if hi is not None else lb + 1.0
        else:
            hi = lb if hi is None else min(hi, lb)
            lb_new = 0.5 * (lo + hi) if lo is not None else lb - 1.0
        beta = 10.0**lb_new
        if not (cfg.beta_min <= beta <= cfg.beta_max):
            warnings.append(f"beta left the search range at {beta:.3e}")
            termination = "beta-search-failure"
            break

    wall = time.perf_counter() - t0  # reporting excluded
    report = RunReport(
        rows=rows, q_final=q, u_final=u, beta_final=beta,
        rho_final=float("nan"), nodes_final=mesh.n_vertices,
        outer_iterations=n_beta, termination=termination,
        wall_time=wall, delta=data.delta,
        control_error=relative_control_error(q, data),
        max_identity_dev=0.0, monotonicity=[], warnings=warnings,
        method="NT")
    report.total_forward_solves = total_forward
    return report
