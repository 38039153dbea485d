import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afem.adaptivity import (CSV_HEADER, AdaptiveConfig, LevelSummary, LoopRecord, StepEntry,
                             check_full_linear_convergence, doerfler_mark, estimate_rate,
                             fit_linear_convergence, quasi_error_proxy, run_adaptive)
from afem.errors import InputError, NumericalError
from afem.estimator import IndicatorField
from afem.fem import energy_norm, poisson_problem, prolongate, solve_discrete
from afem.solvers import dl


# ----------------------------------------------------------------------
# marking


def _exhaustive_min(eta_sq, theta):
    n = len(eta_sq)
    target = theta ** 2 * eta_sq.sum()
    for size in range(n + 1):
        for combo in itertools.combinations(range(n), size):
            if eta_sq[list(combo)].sum() >= target:
                return size
    return n


def test_doerfler_small_example():
    eta = np.array([0.1, 0.4, 0.2, 0.3])
    # theta^2 = 0.25 of the total 1.0: the largest indicator suffices
    assert doerfler_mark(eta, 0.5).tolist() == [1]
    # theta^2 = 0.64: needs 0.4 + 0.3
    assert doerfler_mark(eta, 0.8).tolist() == [1, 3]


def test_doerfler_ties_by_id():
    assert doerfler_mark(np.ones(4), 0.5).tolist() == [0]
    assert doerfler_mark(np.ones(4), 0.75).tolist() == [0, 1, 2]


def test_doerfler_theta_one_and_zero_total():
    assert doerfler_mark(np.array([0.0, 1.0, 2.0]), 1.0).tolist() == [1, 2]
    assert doerfler_mark(np.zeros(3), 0.5).size == 0


def test_doerfler_accepts_indicator_field():
    f = IndicatorField(0, np.array([1.0, 3.0]))
    assert doerfler_mark(f, 0.9).tolist() == [0, 1]


@pytest.mark.parametrize("theta", [0.0, -0.1, 1.01])
def test_doerfler_bad_theta(theta):
    with pytest.raises(InputError):
        doerfler_mark(np.ones(3), theta)


@settings(max_examples=200, deadline=None)
@given(eta=st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 10.0)), min_size=1, max_size=10),
       theta=st.floats(0.01, 1.0))
def test_doerfler_minimal(eta, theta):
    eta = np.array(eta)
    m = doerfler_mark(eta, theta)
    if eta.sum() == 0:
        assert m.size == 0
        return
    assert eta[m].sum() >= theta ** 2 * eta.sum() * (1 - 1e-12)
    assert len(m) == _exhaustive_min(eta, theta)
    assert len(np.unique(m)) == len(m)


# ----------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("kwargs", [{"theta": 0}, {"theta": 1.5}, {"lambda_ctr": 0},
                                    {"C_mark": 0.5}, {"mode": "other"}, {"max_dofs": 0},
                                    {"max_total_steps": 0}])
def test_config_validation(kwargs):
    with pytest.raises(InputError):
        AdaptiveConfig(**kwargs)


# ----------------------------------------------------------------------
# loop invariants


def test_stopping_dichotomy(l_history):
    lam = 1e-2
    final = {lv.ell: lv.k_final for lv in l_history.levels}
    for e in l_history.entries:
        if e.ell in final and e.k == final[e.ell]:
            assert e.dl_increment <= lam * e.eta
        else:
            assert e.dl_increment > lam * e.eta


def test_counters(l_history):
    entries = l_history.entries
    assert [e.total_step for e in entries] == list(range(1, len(entries) + 1))
    assert np.array_equal(np.cumsum([e.num_elements for e in entries]),
                          [e.cum_elements for e in entries])
    for a, b in zip(entries, entries[1:]):
        if a.ell == b.ell:
            assert b.k == a.k + 1
        else:
            assert b.ell == a.ell + 1 and b.k == 1
    assert l_history.status == "max_dofs"
    assert entries[-1].num_free_dofs <= 3000


def test_nested_iteration(l_history, lin):
    hist = l_history.history
    for prev, cur in zip(hist, hist[1:]):
        expected = prolongate(cur.relation_in, prev.iterates[-1])
        assert np.array_equal(cur.iterates[0].coefficients, expected.coefficients)
        assert cur.relation_in.coarse_generation == prev.mesh.generation_id
    # recorded increments are the solver distance of consecutive iterates
    for h in hist[-3:]:
        for k in range(1, len(h.iterates)):
            d = dl(lin, h.mesh, h.iterates[k], h.iterates[k - 1])
            e = [x for x in l_history.entries if x.ell == hist.index(h) and x.k == k][0]
            assert e.dl_increment == pytest.approx(d, rel=1e-8, abs=1e-14)


def test_marking_and_splitting(l_history):
    for lv, h in zip(l_history.levels, l_history.history):
        if not lv.num_marked:
            continue
        assert lv.eta_sq_marked >= 0.25 * lv.eta_sq_total * (1 - 1e-12)
        assert lv.splitting_ok
        assert lv.num_marked == len(h.marked)


def test_closure_ratio_bounded(l_history):
    assert 1.0 <= l_history.C_mesh < 10


def test_iterations_per_level(l_history):
    its = l_history.iterations_per_level()
    assert len(its) == len(l_history.levels)
    # nested iteration keeps the number of solver steps per level small
    assert max(k for *_, k in its[len(its) // 2:]) <= 20


def test_energy_error_decreases(l_history, lin):
    h = l_history.history[-1]
    u = solve_discrete(h.mesh, lin)
    errs = [energy_norm(h.mesh, lin, u - v) for v in h.iterates]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(errs, errs[1:]))


def test_nonlinear_run(l_history_nl):
    rec = l_history_nl
    assert rec.status == "max_dofs"
    etas = [e.eta for e in rec.final_entries()]
    assert etas[-1] < 0.3 * etas[0]


def test_exact_discrete_solution():
    rec = run_adaptive(poisson_problem(0.0), "l_shape", AdaptiveConfig(record_timing=False))
    assert rec.status == "exact"
    assert len(rec.entries) == 1 and rec.entries[0].eta == 0


def test_budget_statuses(lin):
    rec = run_adaptive(lin, "z_shape", AdaptiveConfig(max_levels=3))
    assert rec.status == "max_levels" and len(rec.levels) == 3
    rec = run_adaptive(lin, "z_shape", AdaptiveConfig(max_total_steps=7))
    assert rec.status == "max_total_steps" and rec.entries[-1].total_step == 7
    rec = run_adaptive(lin, "z_shape", AdaptiveConfig(lambda_ctr=1e-30, max_level_iterations=3))
    assert rec.status == "iteration_cap" and "level" in rec.message


def test_timing_flag(lin):
    rec = run_adaptive(lin, "l_shape", AdaptiveConfig(max_levels=3, record_timing=False))
    assert all(e.wall_time_ms == 0.0 for e in rec.entries)
    rec = run_adaptive(lin, "l_shape", AdaptiveConfig(max_levels=3))
    w = [e.wall_time_ms for e in rec.entries]
    assert w == sorted(w) and w[-1] > 0


class _Exploding:
    mode = "norm"

    def start_level(self, mesh, relation, u0):
        self.n = 0
        self.u = u0

    def step(self):
        self.n += 1
        if self.n > 1:
            raise NumericalError("breakdown")
        return self.u, 1.0


def test_numerical_error_keeps_partial_record(lin):
    rec = run_adaptive(lin, "l_shape", AdaptiveConfig(), solver=_Exploding())
    assert rec.status == "numerical_error"
    assert rec.message == "breakdown"
    assert len(rec.entries) == 1


def test_solver_mode_mismatch(lin):
    s = _Exploding()
    s.mode = "energy"
    with pytest.raises(InputError):
        run_adaptive(lin, "l_shape", AdaptiveConfig(), solver=s)


def test_energy_mode_run(lin):
    rec = run_adaptive(lin, "l_shape", AdaptiveConfig(mode="energy", max_dofs=500))
    assert rec.status == "max_dofs"
    for e in rec.final_entries():
        assert e.dl_increment <= 1e-2 * e.eta


def test_csv_roundtrip(l_history, tmp_path):
    p = tmp_path / "trace.csv"
    l_history.to_csv(p)
    assert p.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    back = LoopRecord.read_csv(p)
    assert back.entries == l_history.entries
    assert [(lv.ell, lv.k_final) for lv in back.levels] == \
        [(lv.ell, lv.k_final) for lv in l_history.levels]
    assert estimate_rate(back) == estimate_rate(l_history)


def test_read_csv_rejects_other_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(InputError):
        LoopRecord.read_csv(p)


# ----------------------------------------------------------------------
# post-processing


def _synthetic(dofs, etas, cost=None):
    rec = LoopRecord()
    cost = dofs if cost is None else cost
    for ell, (n, eta, c) in enumerate(zip(dofs, etas, cost)):
        rec.entries.append(StepEntry(ell, 1, ell + 1, 2 * n, n, eta, 0.0, c, 0.0))
        rec.levels.append(LevelSummary(ell, 2 * n, n, 1, eta))
    return rec


def test_rate_exact_power_law():
    n = np.unique(np.round(np.logspace(1, 5, 20)).astype(int))
    rec = _synthetic(n, n ** -0.5)
    assert estimate_rate(rec) == pytest.approx(-0.5, abs=1e-12)
    assert estimate_rate(rec, "elements") == pytest.approx(-0.5, abs=1e-12)


def test_rate_with_noise():
    rng = np.random.default_rng(0)
    n = np.unique(np.round(np.logspace(1, 5, 30)).astype(int))
    rec = _synthetic(n, n ** -0.5 * (1 + 0.01 * rng.standard_normal(len(n))))
    assert abs(estimate_rate(rec) + 0.5) <= 0.02


def test_rate_cost_axis():
    n = np.unique(np.round(np.logspace(1, 5, 20)).astype(int))
    rec = _synthetic(n, n ** -0.5, cost=np.cumsum(n))
    # the cumulative sum of a geometric sequence has the same exponent
    assert estimate_rate(rec, "cum_cost") == pytest.approx(-0.5, abs=0.02)


def test_rate_errors():
    rec = _synthetic([10, 20, 40], [1.0, 0.7, 0.5])
    with pytest.raises(InputError):
        estimate_rate(rec)
    rec = _synthetic(list(range(10, 20)), np.ones(10))
    with pytest.raises(InputError):
        estimate_rate(rec, "volume")


def test_fit_geometric():
    C, q = fit_linear_convergence(2.0 ** -np.arange(30))
    assert q == pytest.approx(0.5, rel=1e-12)
    assert C == pytest.approx(1.0)


def test_fit_constant_sequence():
    _, q = fit_linear_convergence(np.ones(20))
    assert q == 1.0


def test_fit_with_overshoot():
    v = 0.8 ** np.arange(40)
    v[5] *= 3.0
    C, q = fit_linear_convergence(v)
    assert q < 1 and C > 1
    # the bound holds for every pair
    for i in range(len(v)):
        for j in range(i, len(v)):
            assert v[j] <= C * q ** (j - i) * v[i] * (1 + 1e-12)


def test_fit_errors():
    with pytest.raises(InputError):
        fit_linear_convergence(np.ones(5))
    with pytest.raises(InputError):
        fit_linear_convergence(np.r_[np.ones(10), 0.0])


def test_full_linear_convergence(l_history):
    C, q = check_full_linear_convergence(l_history)
    assert q < 1 and math.isfinite(C)
    assert len(quasi_error_proxy(l_history)) == len(l_history.entries)
