"""Shared fixtures: forward simulations are expensive, so exact pairs
and noisy bundles are cached per configuration for the whole session."""

import pytest

from ggnfem import baseline as bl, driver as dv, problem as pb

DESK_FINE = 8  # 257 x 257 simulation mesh
DESK_DEPTH = 6  # solver meshes at most 6 levels deep


@pytest.fixture(scope="session")
def sims():
    truth_cache = {}
    data_cache = {}

    def get(case="a", obs="point", zeta=100.0, p=0.01, seed=1,
            fine=DESK_FINE, n_side=9):
        key = (case, obs, zeta, p, seed, fine, n_side)
        if key not in data_cache:
            problem = pb.ModelProblem(zeta=zeta)
            case_obj = pb.synthetic_case(case)
            tkey = (case, zeta, fine)
            if tkey not in truth_cache:
                truth_cache[tkey] = pb.simulate_truth(problem, case_obj, fine)
            observation = pb.PointObs(n_side) if obs == "point" else pb.L2Obs()
            data_cache[key] = pb.simulate_data(
                problem, case_obj, observation, fine, p, seed,
                truth=truth_cache[tkey])
        return data_cache[key]

    return get


@pytest.fixture(scope="session")
def ggn_runs(sims):
    """Cached GGN runs keyed by (case, obs, zeta, p, seed)."""
    cache = {}

    def get(case="a", obs="point", zeta=100.0, p=0.01, seed=1,
            fine=DESK_FINE, depth=DESK_DEPTH):
        key = (case, obs, zeta, p, seed, fine, depth)
        if key not in cache:
            data = sims(case=case, obs=obs, zeta=zeta, p=p, seed=seed,
                        fine=fine)
            problem = pb.ModelProblem(zeta=zeta)
            cfg = dv.GgnConfig(max_depth=depth)
            cache[key] = dv.run_ggn(problem, data, cfg)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def nt_runs(sims):
    cache = {}

    def get(case="a", obs="point", zeta=100.0, p=0.01, seed=1,
            fine=DESK_FINE, depth=DESK_DEPTH):
        key = (case, obs, zeta, p, seed, fine, depth)
        if key not in cache:
            data = sims(case=case, obs=obs, zeta=zeta, p=p, seed=seed,
                        fine=fine)
            problem = pb.ModelProblem(zeta=zeta)
            cache[key] = bl.run_nt(problem, data, bl.NtConfig(max_depth=depth))
        return cache[key]

    return get
