import itertools

import numpy as np
import pytest

from causalhsp.driver_selection import (SelectionConfig, dp_table, fit_ml_cause_model, gs_pair_terms, score_gs,
                                        scorecard_from_correlations, select_dp_gs, select_drivers,
                                        select_greedy_gs, select_max_likelihood, select_rccp_rank,
                                        select_rccp_threshold)
from causalhsp.errors import DegenerateSeries, EmptySelection, SingularDesign, TableTooLarge

from conftest import WORKED_ASSETS, WORKED_C, WORKED_CANDIDATES, panel


def linear_market(seed, T=600, n=4, K=6, active=(0, 1), noise=0.5):
    g = np.random.default_rng(seed)
    Z = g.normal(size=(T, K))
    B = np.zeros((K, n))
    for k in active:
        B[k] = g.uniform(0.5, 1.5, size=n)
    Y = Z @ B + g.normal(scale=noise, size=(T, n))
    return panel(Y, "Y"), panel(Z, "X")


# -- correlation ranking --------------------------------------------------------


def test_worked_example_scorecard():
    card = scorecard_from_correlations(WORKED_C, WORKED_CANDIDATES, WORKED_ASSETS, 2, 0.5)
    assert card.R.tolist() == [[1, 0, 0], [1, 1, 1], [0, 1, 0], [1, 1, 1]]
    assert card.repeatedness.tolist() == [1, 3, 1, 3]
    np.testing.assert_allclose(card.strength, [0.6, 2.0, 0.6, 2.4], atol=1e-12, rtol=0)
    assert card.ranking == ("X4", "X2", "X1", "X3")
    assert card.selected == ("X4", "X2")


def test_exclusion_list_is_respected():
    card = scorecard_from_correlations(WORKED_C, WORKED_CANDIDATES, WORKED_ASSETS, 2, 0.5, exclude=["X4"])
    assert card.selected == ("X2", "X1")


def test_everything_excluded():
    with pytest.raises(EmptySelection):
        scorecard_from_correlations(WORKED_C, WORKED_CANDIDATES, WORKED_ASSETS, 2, 0.5, exclude=WORKED_CANDIDATES)


def test_single_candidate_is_selected():
    card = scorecard_from_correlations([[0.7, -0.8]], ["only"], ["a", "b"], 1, 0.3)
    assert card.selected == ("only",)


@pytest.mark.parametrize("seed", range(10))
def test_ranking_matches_brute_force_sort(seed):
    g = np.random.default_rng(seed)
    C = np.round(g.uniform(-1, 1, size=(6, 4)), 1)   # rounding forces ties
    names = [f"c{k}" for k in range(6)]
    eps = 0.4
    card = scorecard_from_correlations(C, names, list("abcd"), 3, eps)
    R = (np.abs(C) >= eps).astype(int)
    S = (np.abs(C) * R).sum(axis=1)
    oracle = sorted(names, key=lambda c: (-R[names.index(c)].sum(), -S[names.index(c)], c))
    assert list(card.ranking) == oracle
    np.testing.assert_array_equal(card.repeatedness, R.sum(axis=1))


def test_collinear_candidate_is_flagged_and_screened():
    g = np.random.default_rng(0)
    Y = g.normal(size=(200, 3))
    X = np.column_stack([Y[:, 0] * 2 + 1, g.normal(size=200), Y.sum(axis=1)])
    assets, cands = panel(Y, "Y"), panel(X, "X")
    card = select_rccp_rank(assets, cands, SelectionConfig(m=1, epsilon=0.3))
    assert card.flagged_collinear == ("X1",) and "X1" not in card.selected
    kept = select_rccp_rank(assets, cands, SelectionConfig(m=2, epsilon=0.3, screen_collinear=False))
    assert kept.selected == ("X3", "X1")


def test_rank_invariant_to_positive_affine_maps():
    assets, cands = linear_market(1)
    base = select_rccp_rank(assets, cands, SelectionConfig(m=2, epsilon=0.2))
    scaled = panel(np.asarray(cands.values) * np.arange(1, 7) + 3.0, "X")
    other = select_rccp_rank(assets, scaled, SelectionConfig(m=2, epsilon=0.2))
    assert base.ranking == other.ranking
    np.testing.assert_allclose(base.C, other.C, atol=1e-12)


def test_constant_column_is_degenerate():
    assets, cands = linear_market(2)
    v = np.array(cands.values)
    v[:, 3] = 0.5
    with pytest.raises(DegenerateSeries) as exc:
        select_rccp_rank(assets, panel(v, "X"), SelectionConfig())
    assert exc.value.details["name"] == "X4"


def test_true_drivers_rank_first():
    assets, cands = linear_market(3)
    card = select_rccp_rank(assets, cands, SelectionConfig(m=2, epsilon=0.3))
    assert set(card.selected) == {"X1", "X2"}


# -- threshold mode ---------------------------------------------------------------


def test_threshold_vacuous_counts_all_positive_pairs():
    assets, cands = linear_market(4, active=(0, 1, 2, 3, 4, 5))
    card = select_rccp_threshold(assets, cands, SelectionConfig(m=2, mode="threshold", t0=-1.0, t1=-1.0))
    assert card.repeatedness.tolist() == [4] * 6


def test_threshold_picks_the_lag_persistent_candidate():
    g = np.random.default_rng(5)
    T = 400
    z = g.normal(size=T + 1)
    persistent = z[1:]
    # assets respond to today's and yesterday's value of the persistent driver
    Y = np.column_stack([persistent + 0.8 * z[:-1] + g.normal(scale=0.5, size=T) for _ in range(3)])
    flash = g.normal(size=T)
    Y[:, 0] += 2 * flash
    X = np.column_stack([flash, persistent, g.normal(size=T)])
    card = select_rccp_threshold(panel(Y, "Y"), panel(X, "X"), SelectionConfig(m=1, t0=0.2, t1=0.2))
    assert card.selected == ("X2",)
    assert card.repeatedness.tolist()[1] == 3 and max(card.repeatedness[[0, 2]]) <= 1


def test_threshold_above_one_selects_nothing():
    assets, cands = linear_market(6)
    with pytest.raises(EmptySelection):
        select_rccp_threshold(assets, cands, SelectionConfig(t0=1.1))


# -- G(S) -------------------------------------------------------------------------


def test_gs_single_asset_is_zero():
    assets, cands = linear_market(7, n=1)
    assert score_gs(assets, ["X1"], cands) == 0.0


def test_gs_true_driver_beats_noise_in_residual_form():
    assets, cands = linear_market(8, active=(0,))
    assert score_gs(assets, ["X1"], cands, "residual") < score_gs(assets, ["X3"], cands, "residual")


@pytest.mark.parametrize("seed", range(5))
def test_gs_fitted_matches_covariance_of_fitted_values(seed):
    assets, cands = linear_market(seed)
    Y, Z = np.asarray(assets.values), np.asarray(cands.values)[:, :2]
    X = np.column_stack([np.ones(len(Z)), Z])
    fitted = X @ np.linalg.lstsq(X, Y, rcond=None)[0]
    C = np.cov(fitted.T, bias=True)
    oracle = np.abs(C).sum() - np.abs(np.diag(C)).sum()
    assert abs(score_gs(assets, ["X1", "X2"], cands) - oracle) / oracle < 1e-6


def test_outer_absolute_value_is_bounded_by_per_pair_sum():
    assets, cands = linear_market(9)
    P = gs_pair_terms(np.asarray(assets.values), np.asarray(cands.values)[:, :1], "residual")
    off = P - np.diag(np.diag(P))
    assert abs(off.sum()) <= np.abs(off).sum() + 1e-15


def test_product_estimator_does_not_depend_on_the_subset():
    # regressing Y_i Y_j and Y_i separately on the same linear design is
    # algebraically the sample covariance of Y, whatever S is
    assets, cands = linear_market(10)
    a = score_gs(assets, ["X1"], cands, "product")
    b = score_gs(assets, ["X5", "X6"], cands, "product")
    assert a == pytest.approx(b, rel=1e-6)


def test_duplicate_design_column_is_singular():
    assets, cands = linear_market(11)
    dup = panel(np.column_stack([cands.values[:, 0], cands.values[:, 0]]), "X")
    with pytest.raises(SingularDesign):
        score_gs(assets, ["X1", "X2"], dup)


# -- greedy and DP ------------------------------------------------------------------


def test_greedy_m1_is_argmin():
    assets, cands = linear_market(12)
    card = select_greedy_gs(assets, cands, SelectionConfig(m=1, mode="greedy"))
    singles = {c: score_gs(assets, [c], cands, "residual") for c in cands.names}
    assert card.selected == (min(singles, key=singles.get),)


def test_greedy_matches_exhaustive_pairs_on_planted_market():
    assets, cands = linear_market(13, K=4)
    card = select_greedy_gs(assets, cands, SelectionConfig(m=2, mode="greedy"))
    best = min(itertools.combinations(cands.names, 2), key=lambda s: score_gs(assets, s, cands, "residual"))
    assert set(card.selected) == set(best) == {"X1", "X2"}
    assert card.objective == pytest.approx(score_gs(assets, best, cands, "residual"))
    assert card.extra["score"] == -card.objective


def test_greedy_constraint_flag_is_reported():
    assets, cands = linear_market(14)
    loose = select_greedy_gs(assets, cands, SelectionConfig(m=2, epsilon=1.0, mode="greedy"))
    tight = select_greedy_gs(assets, cands, SelectionConfig(m=2, epsilon=0.0, mode="greedy"))
    assert tight.constraint_satisfied is False
    assert loose.constraint_satisfied == (loose.objective <= 2.0)


def test_greedy_stops_when_no_candidate_helps():
    assets, cands = linear_market(15, K=5, active=(0,))
    card = select_greedy_gs(assets, cands, SelectionConfig(m=5, mode="greedy"))
    assert card.extra["path"] == sorted(card.extra["path"], reverse=True)
    assert len(card.selected) <= 5


def test_dp_additive_picks_smallest_deltas():
    deltas = [5.0, 1.0, 3.0, 0.5, 4.0]
    F, chosen = dp_table(deltas, 3)
    assert chosen == [1, 2, 3] and F[5, 3] == pytest.approx(4.5)


def test_dp_all_candidates():
    deltas = [2.0, 1.0, 3.0]
    F, chosen = dp_table(deltas, 3)
    assert chosen == [0, 1, 2] and F[3, 3] == 6.0


def test_dp_boundary_values():
    F, _ = dp_table([1.0, 2.0], 2)
    assert F[0, 1] == np.inf and F[0, 0] == 0.0 and np.all(F[:, 0] == 0.0)


def test_dp_table_guard():
    with pytest.raises(TableTooLarge):
        dp_table(np.zeros(2_000_001), 1)


@pytest.mark.parametrize("seed", range(5))
def test_dp_additive_cost_never_exceeds_greedy(seed):
    assets, cands = linear_market(100 + seed, active=(0, 1, 2))
    dp = select_dp_gs(assets, cands, SelectionConfig(m=3, mode="dp"))
    greedy = select_greedy_gs(assets, cands, SelectionConfig(m=3, mode="greedy"))
    deltas = dp.extra["deltas"]
    F, _ = dp_table(list(deltas.values()), len(greedy.selected))
    assert F[-1, len(greedy.selected)] <= sum(deltas[c] for c in greedy.selected) + 1e-15
    assert dp.extra["dp_cost"] == pytest.approx(sum(deltas[c] for c in dp.selected))


# -- maximum likelihood ----------------------------------------------------------------


def test_ml_selects_true_cause():
    g = np.random.default_rng(20)
    z, noise = g.normal(size=500), g.normal(size=500)
    Y = np.column_stack([0.9 * z + g.normal(scale=0.4, size=500), -0.7 * z + g.normal(scale=0.4, size=500)])
    card = select_max_likelihood(panel(Y, "Y"), panel(np.column_stack([noise, z]), "X"),
                                 SelectionConfig(m=1, mode="ml"))
    assert card.selected == ("X2",)


def test_ml_univariate_likelihood_closed_form():
    g = np.random.default_rng(21)
    z = g.normal(size=300)
    y = 1.5 * z + 0.2 + g.normal(scale=0.3, size=300)
    model = fit_ml_cause_model(y[:, None], z[:, None])
    X = np.column_stack([np.ones(300), z])
    resid = y - X @ np.linalg.lstsq(X, y, rcond=None)[0]
    s2 = model.alpha[0, 0] ** 2 * z.var() + resid.var()
    oracle = -0.5 * (300 * np.log(2 * np.pi * s2) + (resid ** 2).sum() / s2)
    assert model.log_likelihood == pytest.approx(oracle, rel=1e-12)


def test_ml_zero_alpha_gives_independent_marginals():
    g = np.random.default_rng(22)
    Y = g.normal(size=(400, 2))
    z = np.linspace(-1, 1, 400)
    # project z out so the fitted alphas are exactly zero
    Y = Y - np.outer(z, z @ (Y - Y.mean(axis=0))) / (z @ z)
    model = fit_ml_cause_model(Y, z[:, None])
    np.testing.assert_allclose(model.alpha, 0.0, atol=1e-12)
    assert abs(model.correlation[0, 1]) < 1e-12
    marg = sum(-0.5 * 400 * (np.log(2 * np.pi * Y[:, i].var()) + 1) for i in range(2))
    assert model.log_likelihood == pytest.approx(marg, rel=1e-10)


def test_ml_variance_identity():
    g = np.random.default_rng(23)
    Z = g.normal(size=(300, 2))
    Y = Z @ g.normal(size=(2, 3)) + g.normal(size=(300, 3))
    model = fit_ml_cause_model(Y, Z)
    np.testing.assert_allclose(model.asset_var, (model.alpha ** 2 * model.cause_var).sum(axis=1) + model.noise_var,
                               rtol=1e-12)
    assert np.all(np.abs(model.correlation[~np.eye(3, dtype=bool)]) < 1)


def test_ml_exhaustive_agrees_with_greedy_on_planted_market():
    assets, cands = linear_market(24, K=5)
    greedy = select_max_likelihood(assets, cands, SelectionConfig(m=2, mode="ml"))
    full = select_max_likelihood(assets, cands, SelectionConfig(m=2, mode="ml", exhaustive=True))
    assert set(greedy.selected) == set(full.selected) == {"X1", "X2"}


def test_dispatch_and_aliases():
    assets, cands = linear_market(25)
    for alias, mode in [("rank", "rccp_rank"), ("greedy", "greedy_gs"), ("dp", "dp_gs"), ("ml", "max_likelihood")]:
        assert select_drivers(assets, cands, SelectionConfig(m=2, epsilon=0.2, mode=alias)).mode == mode


@pytest.mark.parametrize("kw", [{"m": 0}, {"epsilon": 1.5}, {"mode": "magic"}, {"gs_estimator": "x"}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SelectionConfig(**kw)
