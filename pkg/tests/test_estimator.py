import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydro_ldr.basis import BasisConfig, index_array
from hydro_ldr.estimator import (
    AdalassoWeights, EstimationError, LdrPolicy, PolicyFileError, adalasso_weights, build_estimation_lp,
    fit, load_policy, save_policy, weighted_l1,
)
from hydro_ldr.lpcore import Solver
from hydro_ldr.scenario import generate, standardize_stats

from conftest import constant_set, two_thermal_system
from oracles import perfect_foresight


def _policy_with(theta, basis=BasisConfig(1, 0, False)):
    n = len(theta) // 2
    sc = constant_set(np.ones((1, n, 1)), n_history=0, history=np.zeros((0, 1)))
    return LdrPolicy(np.asarray(theta, float), standardize_stats(sc), basis, n, 1)


@pytest.mark.parametrize("theta0, w", [(2.0, 0.5), (0.0, 1.0), (-0.25, 4.0)])
def test_weight_examples(theta0, w):
    pol = _policy_with([123.0, theta0])  # intercept excluded
    assert adalasso_weights(pol).w.tolist() == [w]


@given(st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=6), st.floats(0.1, 10))
def test_weight_scaling(slopes, c):
    theta = np.ravel([[1.0, s] for s in slopes])
    w1 = adalasso_weights(_policy_with(theta)).w
    w2 = adalasso_weights(_policy_with(c * theta)).w
    big = np.abs(slopes) > 1e-6
    big_c = np.abs(c * np.array(slopes)) > 1e-6
    both = big & big_c
    assert np.allclose(w2[both], w1[both] / c)
    assert np.all(w1[~big] == 1.0)


def test_weights_positive():
    with pytest.raises(ValueError):
        AdalassoWeights(np.array([1.0, 0.0]))


def test_single_scenario_matches_perfect_foresight(micro):
    sc = generate(micro.inflows, 1, micro.system.horizon, micro.basis.max_lag, seed=3)
    res = fit(micro.system, sc, micro.basis)
    ref, _ = perfect_foresight(micro.system, sc.inflows[0])
    assert res.policy.in_sample_cost == pytest.approx(ref, rel=1e-6)


def test_identical_scenarios_intercept_only(micro):
    one = generate(micro.inflows, 1, micro.system.horizon, micro.basis.max_lag, seed=5)
    sc = type(one)(np.repeat(one.inflows, 4, axis=0), one.history)
    ref, _ = perfect_foresight(micro.system, one.inflows[0])
    res = fit(micro.system, sc, micro.basis)
    assert res.policy.in_sample_cost == pytest.approx(ref, rel=1e-6)
    lp = res.lp
    mask = index_array(micro.system.horizon, 1, micro.basis)[:, 2] >= 1
    fixed = lp.with_bounds("theta", lb=np.where(mask, 0.0, -np.inf), ub=np.where(mask, 0.0, np.inf))
    assert Solver().solve(fixed).objective == pytest.approx(ref, rel=1e-6)


def test_huge_lambda_zeroes_slopes(micro):
    sc = generate(micro.inflows, micro.run.n_in_sample, 2, micro.basis.max_lag, seed=7)
    w = adalasso_weights(fit(micro.system, sc, micro.basis).policy)
    pol = fit(micro.system, sc, micro.basis, 1e12, w).policy
    assert pol.nonzero_count() == 0


def test_screening_agrees_with_full_solve(micro):
    sc = generate(micro.inflows, 8, 2, micro.basis.max_lag, seed=2)
    w = adalasso_weights(fit(micro.system, sc, micro.basis).policy)
    for lam in (1.0, 50.0, 1e3, 1e5):
        a = fit(micro.system, sc, micro.basis, lam, w, screen=True).policy
        b = fit(micro.system, sc, micro.basis, lam, w, screen=False).policy
        assert a.info["objective"] == pytest.approx(b.info["objective"], rel=1e-7)


def test_path_monotone_and_epigraph_tight(micro):
    sc = generate(micro.inflows, 10, 2, micro.basis.max_lag, seed=4)
    base = fit(micro.system, sc, micro.basis)
    w = adalasso_weights(base.policy)
    costs, pens = [base.policy.in_sample_cost], [weighted_l1(base.policy, w)]
    for lam in (0.1, 1.0, 10.0, 100.0, 1e3):
        res = fit(micro.system, sc, micro.basis, lam, w, screen=False)
        phi = res.solution.value("phi")
        theta = res.policy.theta[res.policy.penalized]
        assert np.allclose(phi, np.abs(theta), atol=1e-6)
        costs.append(res.policy.in_sample_cost)
        pens.append(weighted_l1(res.policy, w))
    assert all(b >= a - 1e-6 * abs(a) for a, b in zip(costs, costs[1:]))
    assert all(b <= a + 1e-6 * max(abs(a), 1.0) for a, b in zip(pens, pens[1:]))


def test_estimation_residuals(micro):
    sysm = micro.system
    sc = generate(micro.inflows, 6, 2, micro.basis.max_lag, seed=9)
    res = fit(sysm, sc, micro.basis)
    g, u, s, v, d = (res.stage_values(k) for k in ("g", "u", "s", "v", "delta"))
    energy = g.sum(axis=2) + u[..., 0] * sysm.production_factor[0] + d[..., 0] - sysm.demand[None]
    prev = np.concatenate([np.full((6, 1, 1), sysm.v0[0]), v[:, :-1]], axis=1)
    water = v - prev + u + s - sc.inflows
    assert np.abs(energy).max() <= 1e-6 and np.abs(water).max() <= 1e-6
    assert np.allclose(res.scenario_costs.mean(), res.policy.in_sample_cost)


def test_unreachable_final_storage_reports_rows():
    sysm = two_thermal_system(v0=10.0, v_f=99.0)
    sc = constant_set(np.zeros((1, 2)))
    with pytest.raises(EstimationError) as exc:
        fit(sysm, sc, BasisConfig(1, 0, False))
    assert exc.value.status == "infeasible"
    assert exc.value.rows and any("final_storage" in r or "water" in r for r in exc.value.rows)


def test_lambda_requires_weights(micro):
    sc = generate(micro.inflows, 2, 2, 1, seed=0)
    with pytest.raises(ValueError):
        fit(micro.system, sc, micro.basis, 1.0)
    with pytest.raises(ValueError):
        build_estimation_lp(micro.system, sc, micro.basis, -1.0)


def test_policy_round_trip(micro, tmp_path):
    sc = generate(micro.inflows, 5, 2, 1, seed=1)
    pol = fit(micro.system, sc, micro.basis).policy
    p = tmp_path / "theta_l0.csv"
    save_policy(pol, p)
    back = load_policy(p)
    assert np.array_equal(back.theta, pol.theta) and back.stats == pol.stats and back.basis == pol.basis
    assert back.in_sample_cost == pol.in_sample_cost
    assert p.read_text().splitlines()[0] == "t,h,k,l,r,theta"


def test_policy_file_errors(micro, tmp_path):
    sc = generate(micro.inflows, 5, 2, 1, seed=1)
    pol = fit(micro.system, sc, micro.basis).policy
    p = tmp_path / "theta.csv"
    save_policy(pol, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines + [lines[1]]) + "\n")
    with pytest.raises(PolicyFileError, match="duplicate"):
        load_policy(p)
    p.write_text("\n".join(lines[:2] + lines[3:]) + "\n")
    with pytest.raises(PolicyFileError, match=r"missing index \(t,h,k,l,r\)=\(1, 1, 1, 0, 1\)"):
        load_policy(p)
    p.write_text("\n".join(lines[:2] + ["1,1,x,0,1,2.0"] + lines[3:]) + "\n")
    with pytest.raises(PolicyFileError, match=":3: malformed"):
        load_policy(p)
    with pytest.raises(FileNotFoundError):
        load_policy(tmp_path / "nope.csv")
