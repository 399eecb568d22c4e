"""Outer Gauss-Newton loop with adaptive refinement.

Each outer index k keeps a frozen gate value I3h (misfit plus weighted
state-residual dual norm at the base point, evaluated on the mesh that
was current when the base point was accepted).  One pass through the
loop performs exactly one of:

  * a regularization-parameter search, when the linearized misfit I2h
    is outside the band [theta_low, theta_high] * I3h (bracket/bisect
    on log10(beta), with eta2-driven refinement when the estimated
    discretization error of I2h exceeds its accuracy gate);
  * one eta1-driven refinement, when the eta1 accuracy gate is
    violated (refine or step, never both);
  * a Gauss-Newton step: the base point moves to (q_h, u_old + v_h),
    a fresh adjoint updates the penalty weight rho monotonically, and
    the mesh carries over to the next iteration.

The run stops at the first k with I3h <= tau^2 delta^2.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import os
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import estimators as est, fem, problem as pb, subsolver as ss
from .fem import Field, interpolate_onto, qspace, vspace
from .mesh import QuadMesh, refine, uniform_mesh, write_mesh_vtk

__all__ = [
    "GgnConfig",
    "GgnState",
    "RunRow",
    "RunReport",
    "BetaSearchError",
    "mark_fraction",
    "run_ggn",
    "check_monotonicity",
    "relative_control_error",
    "write_run_report",
]


class BetaSearchError(RuntimeError):
    pass


@dataclass
class GgnConfig:
    """Parameters of the outer loop; defaults follow the reference setup."""

    tau: float = 5.0
    tau_beta: float = 1.66
    tau_beta_tilde: float = 1.0
    theta_low: float = 0.2
    theta_high: float = 0.4999
    c_tc: float = 1e-7
    c2: float = 0.9999
    c3: float = 1e-4
    beta0: float = 10.0
    coarse_levels: int = 2
    max_depth: int = 6
    max_outer: int = 30
    max_inner: int = 12
    max_beta_steps: int = 30
    max_refine_per_search: int = 4
    marking_fraction: float = 0.3
    beta_min: float = 1e-10
    beta_max: float = 1e14
    enforce_assumptions: bool = True

    def __post_init__(self):
        if self.enforce_assumptions:
            self.validate()

    @property
    def theta_tilde(self) -> float:
        return 0.5 * (self.theta_low + self.theta_high)

    def eta1_gate_coefficient(self) -> float:
        c = self.c_tc
        return self.theta_low - 2.0 * (2.0 * c**2 + (1.0 + 2.0 * c) ** 2 / self.tau**2)

    def validate(self) -> None:
        c = self.c_tc
        if not (0.0 < self.theta_low <= self.theta_high < 1.0):
            raise ValueError("need 0 < theta_low <= theta_high < 1")
        if not 2.0 * (c**2 + (1.0 + c) ** 2 / self.tau**2) < self.theta_low:
            raise ValueError("tau too small for theta_low")
        if not (2.0 * self.theta_high + 4.0 * c**2) / (1.0 - 4.0 * c**2) < 1.0:
            raise ValueError("theta_high too large")
        if not max(1.0, self.tau_beta_tilde) < self.tau_beta <= self.tau:
            raise ValueError("need max(1, tau_beta_tilde) < tau_beta <= tau")
        contraction = (1.0 + self.c3) * (2.0 * self.theta_high + 4.0 * c**2) / (
            1.0 - 4.0 * c**2
        )
        if not contraction <= self.c2 < 1.0:
            raise ValueError("c2/c3 violate the contraction condition")
        if self.eta1_gate_coefficient() <= 0:
            raise ValueError("eta1 gate coefficient is not positive")


@dataclass
class GgnState:
    """Snapshot of the iteration between outer steps."""

    k: int
    mesh: QuadMesh
    q_old: Field
    u_old: Field
    beta: float
    rho: float
    i3h: float


@dataclass
class RunRow:
    k: int
    phase: str
    nodes: int
    beta: float
    rho: float
    i1h: float
    i2h: float
    i3h: float
    i4h: float
    eta1: float
    eta2: float


@dataclass
class RunReport:
    rows: list
    q_final: Field
    u_final: Field
    beta_final: float
    rho_final: float
    nodes_final: int
    outer_iterations: int
    termination: str
    wall_time: float
    delta: float
    control_error: float
    max_identity_dev: float
    monotonicity: list
    i3h_final: float = float("nan")
    warnings: list = dc_field(default_factory=list)
    method: str = "GGN"

    @property
    def accepted_rows(self):
        return [r for r in self.rows if r.phase == "accept"]


def mark_fraction(indicators: np.ndarray, fraction: float):
    """Smallest cell set carrying at least the given indicator mass."""
    total = float(indicators.sum())
    if total <= 0.0:
        return []
    order = np.argsort(indicators)[::-1]
    acc = 0.0
    marked = []
    for cid in order:
        marked.append(int(cid))
        acc += indicators[cid]
        if acc >= fraction * total:
            break
    return marked


def _observed(data: pb.NoisyData, mesh: QuadMesh, cache: dict):
    """Data in the form build_subproblem expects, per mesh."""
    if isinstance(data.obs, pb.PointObs):
        return data.g_delta
    if mesh.uid not in cache:
        cache[mesh.uid] = pb.restrict_data(data, qspace(mesh))
    return cache[mesh.uid]


def _i3h(problem, data, mesh, q_old, u_old, rho, cache) -> float:
    """Misfit at the base point plus rho times the state-residual dual norm."""
    sub_data = _observed(data, mesh, cache)
    V, Q = vspace(mesh), qspace(mesh)
    u_old_h = interpolate_onto(u_old, mesh)
    _, _, _, misfit = ss._observation_blocks(data.obs, sub_data, V, Q, u_old_h)
    mis = misfit(np.zeros(V.dim))[0]
    res = pb.semilinear_residual(problem, q_old, u_old, V)
    return mis + rho * fem.riesz_dual_norm(V, res)[0]


def relative_control_error(q_h: Field, data: pb.NoisyData) -> float:
    """|q_h - q_true|_Q / |q_true|_Q on the fine simulation mesh."""
    qt = data.q_true
    try:
        qh_fine = interpolate_onto(q_h, qt.mesh)
        diff = Field(qt.space, qh_fine.coeffs - qt.coeffs)
        return diff.norm_l2() / qt.norm_l2()
    except ValueError:
        # Solver mesh locally finer than the simulation mesh: compare there.
        qt_c = interpolate_onto(qt, q_h.mesh)
        diff = Field(q_h.space, q_h.coeffs - qt_c.coeffs)
        return diff.norm_l2() / qt_c.norm_l2()


def monotonicity_rhs(q0: Field, u0: Field, data: pb.NoisyData) -> float:
    """|q_true - q0|_Q^2 + |u_true - u0|_V^2 on the simulation mesh."""
    qt, ut = data.q_true, data.u_true
    dq_t = Field(qt.space, qt.coeffs - interpolate_onto(q0, qt.mesh).coeffs)
    du_t = Field(ut.space, ut.coeffs - interpolate_onto(u0, ut.mesh).coeffs)
    return dq_t.norm_l2() ** 2 + du_t.norm_h1semi() ** 2


def check_monotonicity(q_h: Field, u_h: Field, q0: Field, u0: Field,
                       data: pb.NoisyData, rhs: float | None = None) -> bool:
    """Distance-to-initial-guess bound against the exact pair.

    |q_h - q0|_Q^2 + |u_h - u0|_V^2 <= |q_true - q0|^2 + |u_true - u0|^2
    with the V-norm taken as the H^1_0 seminorm.
    """
    dq = Field(q_h.space, q_h.coeffs - interpolate_onto(q0, q_h.mesh).coeffs)
    du = Field(u_h.space, u_h.coeffs - interpolate_onto(u0, u_h.mesh).coeffs)
    lhs = dq.norm_l2() ** 2 + du.norm_h1semi() ** 2
    if rhs is None:
        rhs = monotonicity_rhs(q0, u0, data)
    return lhs <= rhs * (1.0 + 1e-12)


class _Run:
    """Mutable state of one driver run."""

    def __init__(self, problem, data, cfg, q0):
        self.problem = problem
        self.data = data
        self.cfg = cfg
        self.t0 = time.perf_counter()
        self.mesh = uniform_mesh(cfg.coarse_levels)
        self.data_cache: dict = {}
        self.rows: list[RunRow] = []
        self.identity_devs: list[float] = []
        self.monotonicity: list[bool] = []
        self.warnings: list[str] = list(data.warnings)
        if data.fine_levels <= cfg.max_depth:
            self.warnings.append(
                f"fine mesh level {data.fine_levels} does not exceed "
                f"solver depth {cfg.max_depth}")
        self.q0 = qspace(self.mesh).zeros() if q0 is None else \
            interpolate_onto(q0, self.mesh)
        self.q_old = self.q0
        self.u_old = vspace(self.mesh).zeros()
        self.beta = cfg.beta0
        self.beta_floor = cfg.beta0
        self.mono_rhs = None
        z0 = ss.adjoint_at_base(problem, self.mesh, self.u_old, data.obs,
                                self.observed())
        self.rho = ss.adjoint_w_norm(z0)
        self.i3h = _i3h(problem, data, self.mesh, self.q_old, self.u_old,
                        self.rho, self.data_cache)
        self.k = 0

    def observed(self):
        return _observed(self.data, self.mesh, self.data_cache)

    def snapshot(self) -> GgnState:
        return GgnState(k=self.k, mesh=self.mesh, q_old=self.q_old,
                        u_old=self.u_old, beta=self.beta, rho=self.rho,
                        i3h=self.i3h)

    def solve(self):
        # Operators depend on (mesh, base point) only; across beta trials
        # just the regularization block of the KKT matrix changes.
        key = (self.mesh.uid, id(self.q_old), id(self.u_old))
        if getattr(self, "_sub_key", None) != key:
            self._sub_base = ss.build_subproblem(
                self.problem, self.mesh, self.q_old, self.u_old, self.q0,
                self.data.obs, self.observed(), self.beta)
            self._sub_key = key
        sub = self._sub_base
        if sub.beta != self.beta:
            sub = dataclasses.replace(sub, beta=self.beta)
            self._sub_base = sub
        return sub, ss.solve_kkt(sub)

    def log(self, phase, sub, sol, eta1=float("nan"), eta2=float("nan"),
            i4h=float("nan"), check_identity=False):
        i2h = sol.misfit_sq()
        reg = est._reg_term(sub, sol)
        i1h = est._field_misfit_sq(sub, sol) + reg
        if check_identity:
            self.identity_devs.append(abs(i1h - i2h - reg))
        self.rows.append(RunRow(
            k=self.k, phase=phase, nodes=self.mesh.n_vertices, beta=self.beta,
            rho=self.rho, i1h=i1h, i2h=i2h, i3h=self.i3h, i4h=i4h,
            eta1=eta1, eta2=eta2))

    def in_band(self, i2h):
        return (self.cfg.theta_low * self.i3h <= i2h
                <= self.cfg.theta_high * self.i3h)

    def beta_search(self):
        """Bracket/bisect on log10(beta) until I2h lands in the band.

        I2h is nonincreasing in beta, so factor-10 expansion brackets
        the band and bisection closes in; when |eta2| exceeds its
        accuracy gate, the mesh is refined with respect to the eta2
        indicators instead (refine or update, never both per pass).

        The regularization weight 1/beta never increases across
        accepted steps: beta is floored at the last accepted value.  If
        the band's lower edge is unreachable at the floor (the state
        residual of the previous step inflated I3h transiently), the
        floored solution is returned and the outer loop proceeds.
        """
        cfg = self.cfg
        lo = hi = None  # log10-beta with I2h above / below the band
        floor = np.log10(self.beta_floor)
        delta_beta_sq = cfg.theta_tilde * self.i3h
        gate2 = 0.5 * cfg.tau_beta_tilde**2 * delta_beta_sq
        n_beta = 0
        n_ref = 0
        sub, sol = self.solve()
        while True:
            i2h = sol.misfit_sq()
            aux = ss.solve_second_order(sub, sol)
            eta2, ind2 = est.estimate_eta2(sol, sub, aux)
            # The accuracy conditions constrain upper bounds on |I - I_h|;
            # the cellwise-absolute sum is the computable surrogate.
            if ind2.sum() > gate2 and n_ref < cfg.max_refine_per_search:
                new_mesh = refine(self.mesh,
                                  mark_fraction(ind2, cfg.marking_fraction),
                                  max_level=cfg.max_depth)
                if new_mesh is not self.mesh:
                    self.log("refine2", sub, sol, eta2=eta2)
                    self.mesh = new_mesh
                    n_ref += 1
                    lo = hi = None  # the misfit curve moved; re-bracket
                    sub, sol = self.solve()
                    continue
            if self.in_band(i2h):
                return sub, sol
            if (i2h < cfg.theta_low * self.i3h
                    and np.log10(self.beta) <= floor + 1e-12):
                self.warnings.append(
                    f"k={self.k}: I2h={i2h:.3e} below the band at the "
                    f"beta floor {self.beta_floor:.3e}; accepting")
                return sub, sol
            n_beta += 1
            if n_beta > cfg.max_beta_steps:
                raise BetaSearchError(
                    f"no beta found in {cfg.max_beta_steps} updates "
                    f"(I2h={i2h:.3e}, I3h={self.i3h:.3e})")
            self.log("beta", sub, sol, eta2=eta2)
            lb = np.log10(self.beta)
            if i2h > cfg.theta_high * self.i3h:
                lo = lb if lo is None else max(lo, lb)
                lb_new = 0.5 * (lo + hi) if hi is not None else lb + 1.0
            else:
                hi = lb if hi is None else min(hi, lb)
                lb_new = 0.5 * (lo + hi) if lo is not None else lb - 1.0
            lb_new = max(lb_new, floor)
            self.beta = 10.0**lb_new
            if not (cfg.beta_min <= self.beta <= cfg.beta_max):
                raise BetaSearchError(
                    f"beta left the search range at {self.beta:.3e}")
            sub, sol = self.solve()

    def finalize(self, termination):
        wall = time.perf_counter() - self.t0  # reporting excluded
        return RunReport(
            rows=self.rows, q_final=self.q_old, u_final=self.u_old,
            beta_final=self.beta, rho_final=self.rho,
            nodes_final=self.mesh.n_vertices, outer_iterations=self.k,
            termination=termination, wall_time=wall, delta=self.data.delta,
            control_error=relative_control_error(self.q_old, self.data),
            max_identity_dev=max(self.identity_devs, default=0.0),
            monotonicity=self.monotonicity, i3h_final=self.i3h,
            warnings=self.warnings)


def run_ggn(problem: pb.ModelProblem, data: pb.NoisyData, cfg: GgnConfig,
            q0: Field | None = None) -> RunReport:
    """Full adaptive Gauss-Newton run on one data set."""
    if cfg.enforce_assumptions:
        cfg.validate()
    run = _Run(problem, data, cfg, q0)
    tol = cfg.tau**2 * data.delta**2
    run.rows.append(RunRow(
        k=0, phase="init", nodes=run.mesh.n_vertices, beta=run.beta,
        rho=run.rho, i1h=float("nan"), i2h=float("nan"), i3h=run.i3h,
        i4h=float("nan"), eta1=float("nan"), eta2=float("nan")))

    while run.i3h > tol:
        if run.k >= cfg.max_outer:
            return run.finalize("iteration-cap")
        accepted = False
        for _ in range(cfg.max_inner):
            sub, sol = run.solve()
            run.log("solve", sub, sol, check_identity=True)
            if not run.in_band(sol.misfit_sq()):
                try:
                    sub, sol = run.beta_search()
                except BetaSearchError as exc:
                    run.warnings.append(str(exc))
                    return run.finalize("beta-search-failure")
            eta1, ind1 = est.estimate_eta1(sol, sub)
            gate1 = cfg.eta1_gate_coefficient() * run.i3h
            if ind1.sum() > gate1:
                new_mesh = refine(run.mesh,
                                  mark_fraction(ind1, cfg.marking_fraction),
                                  max_level=cfg.max_depth)
                if new_mesh is not run.mesh:
                    run.log("refine1", sub, sol, eta1=eta1)
                    run.mesh = new_mesh
                    continue
                run.warnings.append(
                    f"k={run.k}: eta1 gate unmet at depth cap "
                    f"(indicator sum {ind1.sum():.3e} > {gate1:.3e}); "
                    "accepting step")
            accepted = True
            break
        if not accepted:
            run.warnings.append("inner pass cap reached without a step")
            return run.finalize("iteration-cap")

        # Accept the Gauss-Newton step.
        run.q_old = sol.q
        run.u_old = sol.u
        run.beta_floor = max(run.beta_floor, run.beta)
        run.k += 1
        z = ss.adjoint_at_base(problem, run.mesh, run.u_old, data.obs,
                               run.observed())
        run.rho = max(run.rho, ss.adjoint_w_norm(z))
        qoi = est.compute_qoi(sub, sol, run.rho, i3h=run.i3h, eta1=eta1)
        run.log("accept", sub, sol, eta1=eta1, i4h=qoi.i4h)
        t_diag = time.perf_counter()
        if run.mono_rhs is None:
            run.mono_rhs = monotonicity_rhs(run.q0, data.u_true.space.zeros(),
                                            data)
        run.monotonicity.append(check_monotonicity(
            run.q_old, run.u_old, run.q0, vspace(run.mesh).zeros(), data,
            rhs=run.mono_rhs))
        run.t0 += time.perf_counter() - t_diag  # diagnostics are untimed
        run.i3h = _i3h(problem, data, run.mesh, run.q_old, run.u_old,
                       run.rho, run.data_cache)
    return run.finalize("discrepancy")


# ---------------------------------------------------------------------------
# report output


_CSV_COLUMNS = ["k", "phase", "nodes", "beta", "rho", "i1h", "i2h", "i3h",
                "i4h", "eta1", "eta2"]


def write_run_report(report: RunReport, outdir, config_text: str = "") -> None:
    """Run CSV, final fields as VTK/CSV, and a plain-text manifest."""
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "report.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_COLUMNS)
        for r in report.rows:
            w.writerow([r.k, r.phase, r.nodes, f"{r.beta:.16g}",
                        f"{r.rho:.16g}", f"{r.i1h:.16g}", f"{r.i2h:.16g}",
                        f"{r.i3h:.16g}", f"{r.i4h:.16g}", f"{r.eta1:.16g}",
                        f"{r.eta2:.16g}"])
    fem.write_field_vtk(report.q_final, os.path.join(outdir, "q_final.vtk"),
                        name="q")
    fem.write_field_csv(report.q_final, os.path.join(outdir, "q_final.csv"))
    fem.write_field_vtk(report.u_final, os.path.join(outdir, "u_final.vtk"),
                        name="u")
    write_mesh_vtk(report.q_final.mesh, os.path.join(outdir, "mesh_final.vtk"))
    cfg_hash = hashlib.sha256(config_text.encode()).hexdigest()[:16]
    with open(os.path.join(outdir, "manifest.txt"), "w") as fh:
        fh.write(f"method = {report.method}\n")
        fh.write(f"config_hash = {cfg_hash}\n")
        fh.write(f"termination = {report.termination}\n")
        fh.write(f"outer_iterations = {report.outer_iterations}\n")
        fh.write(f"beta = {report.beta_final:.16g}\n")
        fh.write(f"nodes = {report.nodes_final}\n")
        fh.write(f"delta = {report.delta:.16g}\n")
        fh.write(f"control_error = {report.control_error:.16g}\n")
        fh.write(f"wall_time_s = {report.wall_time:.3f}\n")
        fh.write(f"max_identity_dev = {report.max_identity_dev:.3e}\n")
        fh.write(f"monotonicity_ok = {all(report.monotonicity)}\n")
        for wmsg in report.warnings:
            fh.write(f"warning = {wmsg}\n")
