import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hydro_ldr.analytics import (
    SpotDataWarning, SweepRow, central_window, cost_metrics, nearest_rank, report_from_rows, select_lambda,
    sparsity_metrics, spot_metrics, sweep, time_variability,
)
from hydro_ldr.basis import BasisConfig
from hydro_ldr.estimator import LdrPolicy
from hydro_ldr.scenario import generate

from test_estimator import _policy_with


def _row(lam, z):
    return SweepRow(lam, 0.0, z, z, z, 0.0, 0.0)


def test_cost_metrics_examples():
    assert cost_metrics([7.0]) == {"mean": 7.0, "P5": 7.0, "P95": 7.0, "spread": 0.0}
    m = cost_metrics(np.arange(1.0, 101.0))
    assert (m["P5"], m["P95"]) == (5.0, 95.0)
    with pytest.raises(ValueError):
        cost_metrics([])


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=300))
def test_percentiles_are_sample_elements(xs):
    m = cost_metrics(xs)
    assert m["P5"] in xs and m["P95"] in xs and m["P5"] <= m["P95"]


def test_nearest_rank_rule():
    x = np.arange(1.0, 21.0)
    assert nearest_rank(x, 0.05) == 1.0 and nearest_rank(x, 0.95) == 19.0
    assert nearest_rank(x, 1.0) == 20.0 and nearest_rank(x, 0.0) == 1.0


def test_sparsity_examples():
    theta0 = _policy_with([5.0, 2.0, 5.0, -2.0])
    same = sparsity_metrics(theta0, theta0)
    assert same["l1_shrinkage"] == 0.0 and same["nonzero_fraction"] == 1.0
    zero = sparsity_metrics(_policy_with([5.0, 0.0, 5.0, 0.0]), theta0)
    assert zero["nonzero_fraction"] == 0.0 and zero["l1_shrinkage"] == 1.0
    half = sparsity_metrics(_policy_with([1.0, 1.0, 1.0, 0.0]), theta0)
    assert half["nonzero_fraction"] == 0.5 and half["l1_shrinkage"] == 0.75
    assert half["nonzero_by_lag"] == {0: 0.5}


def test_sparsity_mismatch():
    a = _policy_with([1.0, 1.0])
    b = _policy_with([1.0, 1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        sparsity_metrics(a, b)


def test_time_variability_examples():
    assert time_variability(np.array([[100.0, 200.0, 100.0]]))[0] == 0.75
    m = spot_metrics(np.full((5, 6), 40.0), (1, 6))
    assert m["time_variability"] == 0.0 and m["avg_uncertainty"] == 0.0 and m["mean"] == 40.0


def test_zero_spot_skipped_with_warning():
    with pytest.warns(SpotDataWarning):
        m = spot_metrics(np.array([[0.0, 10.0, 20.0]]), (1, 3))
    assert m["skipped_terms"] == 1 and m["time_variability"] == pytest.approx(0.5)


@given(st.lists(st.lists(st.floats(1, 1e4), min_size=4, max_size=4), min_size=1, max_size=6),
       st.floats(0.01, 100))
def test_time_variability_scale_invariant(paths, c):
    a = np.array(paths)
    assert time_variability(c * a)[0] == pytest.approx(time_variability(a)[0], rel=1e-9)


def test_central_window():
    assert central_window(24) == (7, 18)
    assert central_window(36) == (13, 24)
    assert central_window(5) == (1, 5)
    with pytest.raises(ValueError):
        spot_metrics(np.ones((2, 4)), (3, 6))


def test_spot_metrics_on_window():
    spot = np.array([[1.0, 2.0, 3.0, 4.0], [3.0, 4.0, 5.0, 6.0]])
    m = spot_metrics(spot, (2, 3))
    assert m["mean"] == 3.5 and m["P5"] == 2.5 and m["P95"] == 4.5
    assert m["avg_uncertainty"] == 2.0


@pytest.mark.parametrize("zs, expected", [
    ([100.0, 90.0, 90.0], 1.0),
    ([100.0], 0.0),
    ([100.0, 120.0, 130.0], 0.0),
])
def test_selection(zs, expected):
    lams = [0.0, 1.0, 10.0][:len(zs)]
    rep = report_from_rows([_row(l, z) for l, z in zip(lams, zs)])
    assert rep.selected_lambda == expected
    assert rep.gain >= 0.0
    if expected == 0.0:
        assert rep.gain == 0.0


@given(st.lists(st.integers(50, 60), min_size=1, max_size=8))
def test_selection_is_least_argmin(zs):
    lams = [0.0] + [10.0 ** k for k in range(len(zs) - 1)]
    rep = report_from_rows([_row(l, float(z)) for l, z in zip(lams, zs)])
    best = min(zs)
    assert rep.row(rep.selected_lambda).z_M == best
    assert rep.selected_lambda == min(l for l, z in zip(lams, zs) if z == best)
    assert rep.gain >= 0.0


def test_select_lambda_unsorted_input():
    assert select_lambda([10.0, 0.0, 1.0], [5.0, 6.0, 5.0]) == 2


def test_sweep_micro(micro, tmp_path):
    sc_in, sc_out = micro.run.in_sample(), micro.run.out_of_sample()
    rep = sweep(micro.system, sc_in, sc_out, micro.basis, grid=[100.0, 1.0], keep=True)
    assert rep.lambdas == [0.0, 1.0, 100.0]  # 0 prepended, sorted
    assert rep.gain >= 0.0
    assert rep.row(0.0).l1_shrinkage == 0.0
    assert set(rep.policies) == {0.0, 1.0, 100.0}
    js, cs = rep.save(tmp_path)
    data = json.loads(js.read_text())
    assert data["selected_lambda"] == rep.selected_lambda and len(data["rows"]) == 3
    assert cs.read_text().splitlines()[0].startswith("lambda,in_sample_cost,z_M,P5,P95")


def test_sweep_grid_zero_only(micro):
    rep = sweep(micro.system, micro.run.in_sample(), micro.run.out_of_sample(), micro.basis, grid=[0.0])
    assert rep.selected_lambda == 0.0 and rep.gain == 0.0


def test_sweep_rejects_bad_grid(micro):
    with pytest.raises(ValueError):
        sweep(micro.system, micro.run.in_sample(), micro.run.out_of_sample(), micro.basis, grid=[])
    with pytest.raises(ValueError):
        sweep(micro.system, micro.run.in_sample(), micro.run.out_of_sample(), micro.basis, grid=[-1.0])
