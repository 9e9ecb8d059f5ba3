import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from microdualnet.hurdle import (INTENSITY, OUTPUT_COLUMNS, PROBABILITY, DegenerateFitError, HurdleInputError,
                                 SingularDesignError, SubjectRecord, adjust_pvalues, adjust_results,
                                 fit_fractional_logit, fit_logistic_irls, format_results_csv, pairwise_contrasts,
                                 parse_engagement_csv, run_hurdle)


def ones(n):
    return np.ones((n, 1))


def two_groups(ya, yb):
    g = np.r_[np.ones(len(ya)), np.zeros(len(yb))]
    return np.column_stack([np.ones_like(g), g]), np.r_[ya, yb]


def test_intercept_only_log_odds():
    res = fit_logistic_irls(ones(10), np.r_[np.ones(6), np.zeros(4)])
    assert res.coef[0] == pytest.approx(0.405465108108, abs=1e-6) and res.converged


def test_intercept_only_balanced():
    assert fit_logistic_irls(ones(10), np.r_[np.ones(5), np.zeros(5)]).coef[0] == pytest.approx(0.0, abs=1e-12)


def test_two_by_two_odds_ratio():
    x, y = two_groups(np.r_[np.ones(40), np.zeros(10)], np.r_[np.ones(10), np.zeros(40)])
    assert fit_logistic_irls(x, y).coef[1] == pytest.approx(math.log(16), abs=1e-4)


def test_matches_newton_oracle_on_random_data():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(30, 80))
        x = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
        y = (rng.random(n) < 1 / (1 + np.exp(-(x @ rng.normal(0, 0.7, 3))))).astype(float)
        assert np.max(np.abs(fit_logistic_irls(x, y).coef - oracles.newton_logistic(x, y))) < 1e-6


def test_model_standard_errors_match_statsmodels_values():
    # frozen from an independent GLM fit of the 40/10 vs 10/40 table
    x, y = two_groups(np.r_[np.ones(40), np.zeros(10)], np.r_[np.ones(10), np.zeros(40)])
    assert fit_logistic_irls(x, y).se == pytest.approx([0.35355339, 0.5], abs=1e-6)


def test_deviance_never_increases():
    rng = np.random.default_rng(3)
    x = np.column_stack([np.ones(60), rng.normal(size=(60, 3))])
    y = (rng.random(60) < 0.4).astype(float)
    dev = fit_logistic_irls(x, y).deviance
    assert np.all(np.diff(dev) <= 1e-9)


def test_perfect_separation_flagged():
    x = np.column_stack([np.ones(8), np.arange(8.0)])
    res = fit_logistic_irls(x, (np.arange(8) > 3).astype(float))
    assert res.separated and not res.reliable and np.isnan(res.p[1])


def test_singular_design_raises():
    x = np.column_stack([np.ones(6), np.arange(6.0), 2 * np.arange(6.0)])
    with pytest.raises(SingularDesignError):
        fit_logistic_irls(x, np.array([0, 1, 0, 1, 1, 0.0]))


@pytest.mark.parametrize("x", [np.ones((2, 2)), np.column_stack([np.ones(5), np.zeros(5)])])
def test_bad_designs_rejected(x):
    with pytest.raises(ValueError):
        fit_logistic_irls(x, np.zeros(x.shape[0]))


def test_fractional_intercept_mean_matching():
    res = fit_fractional_logit(ones(4), np.array([0.1, 0.2, 0.3, 0.4]))
    assert res.coef[0] == pytest.approx(math.log(0.25 / 0.75), abs=1e-5)


def test_fractional_saturated_binary_design():
    x, y = two_groups(np.array([0.5, 0.6, 0.7]), np.array([0.2, 0.3, 0.4]))
    assert fit_fractional_logit(x, y).coef[1] == pytest.approx(math.log((0.6 / 0.4) / (0.3 / 0.7)), abs=1e-3)


def test_fractional_sandwich_errors_match_frozen_reference():
    # HC0 sandwich values frozen from an independent quasi-binomial GLM fit
    rng = np.random.default_rng(0)
    yf = np.r_[rng.uniform(.4, .8, 20), rng.uniform(.1, .5, 20)]
    x = np.column_stack([np.ones(40), np.r_[np.ones(20), np.zeros(20)]])
    res = fit_fractional_logit(x, yf)
    assert res.coef == pytest.approx([-0.73360222, 1.15969697], abs=1e-7)
    assert res.se == pytest.approx([0.11285887, 0.16496114], abs=1e-7)


def test_fractional_constant_response_is_degenerate():
    with pytest.raises(DegenerateFitError):
        fit_fractional_logit(ones(5), np.full(5, 0.5))


def test_fractional_clips_full_engagement():
    res = fit_fractional_logit(ones(3), np.array([1.0, 1.0, 0.5]))
    assert np.isfinite(res.coef).all()


def test_bh_example_exact():
    assert list(adjust_pvalues([0.01, 0.02, 0.03, 0.04])) == [0.04, 0.04, 0.04, 0.04]


def test_bh_single_value_unchanged():
    assert adjust_pvalues([0.3])[0] == 0.3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_bh_properties(ps):
    adj = adjust_pvalues(ps)
    p = np.asarray(ps)
    assert np.all(adj >= p) and np.all(adj <= 1)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(adj[order]) >= -1e-15)


def records(rates: dict, n=10, seed=0, action="a"):
    rng = np.random.default_rng(seed)
    out = []
    for g, (p_eng, mean) in rates.items():
        for i in range(n):
            v = float(np.clip(rng.normal(mean, 0.1), 0.01, 1.0)) if rng.random() < p_eng else 0.0
            out.append(SubjectRecord(f"{g}{i}", g, {action: v}))
    return out


def test_three_groups_three_contrasts_per_part():
    recs = records({"ASD": (0.7, 0.5), "PSY": (0.5, 0.4), "TDC": (0.3, 0.3)}, n=12)
    for part in (PROBABILITY, INTENSITY):
        assert len(pairwise_contrasts(recs, "a", part)) == 3


def test_identical_groups_null_effect():
    base = records({"A": (0.5, 0.4)}, n=12)
    twin = [SubjectRecord(r.subject_id + "b", "B", dict(r.engagement)) for r in base]
    for part in (PROBABILITY, INTENSITY):
        (res,) = pairwise_contrasts(base + twin, "a", part)
        assert res.effect == pytest.approx(1.0, abs=1e-9) and res.p == pytest.approx(1.0, abs=1e-9)


def test_swapping_groups_inverts_effect():
    recs = records({"A": (0.8, 0.6), "B": (0.4, 0.3)}, n=15, seed=4)
    for part in (PROBABILITY, INTENSITY):
        (ab,) = pairwise_contrasts(recs, "a", part, pairs=[("A", "B")])
        (ba,) = pairwise_contrasts(recs, "a", part, pairs=[("B", "A")])
        assert ab.effect * ba.effect == pytest.approx(1.0, abs=1e-6)
        assert ab.p == pytest.approx(ba.p, abs=1e-9)


def test_effect_direction_follows_rates():
    recs = records({"A": (0.9, 0.7), "B": (0.3, 0.2)}, n=20, seed=2)
    for part in (PROBABILITY, INTENSITY):
        (res,) = pairwise_contrasts(recs, "a", part)
        assert res.effect > 1


def test_group_without_engagers_skipped_with_reason():
    recs = [SubjectRecord(f"a{i}", "A", {"x": 0.2 + 0.1 * i}) for i in range(3)]
    recs += [SubjectRecord(f"b{i}", "B", {"x": 0.0 if i else 0.0}) for i in range(3)]
    skipped = []
    assert pairwise_contrasts(recs, "x", INTENSITY, skipped=skipped) == []
    assert "no engagers" in skipped[0].reason


def test_contrasts_need_two_groups_of_two():
    with pytest.raises(ValueError):
        pairwise_contrasts([SubjectRecord("a", "A", {"x": 0.1}), SubjectRecord("b", "B", {"x": 0.2})], "x",
                           PROBABILITY)


def test_family_grouping_changes_adjustment():
    recs = records({"A": (0.9, 0.7), "B": (0.3, 0.2), "C": (0.5, 0.5)}, n=15, seed=1)
    results, _ = run_hurdle(recs, ["a"], family="all")
    by_part = [r for r in results]
    adjust_results(by_part, "part")
    assert all(r.p_adj >= r.p for r in by_part)


def test_csv_round_trip_and_header():
    text = "subject_id,group,tap,shake\n" + "\n".join(
        f"s{i},{'AB'[i % 2]},{(i % 3) / 4},{(i % 4) / 5}" for i in range(12)) + "\n"
    recs, actions = parse_engagement_csv(text)
    assert actions == ["tap", "shake"] and len(recs) == 12
    results, _ = run_hurdle(recs, actions)
    out = format_results_csv(results)
    assert out.splitlines()[0] == "action,contrast,type,effect,p,p_adj" == ",".join(OUTPUT_COLUMNS)
    ps = [r.p for r in results]
    assert ps == sorted(ps)


@pytest.mark.parametrize("text,line", [
    ("subject_id,grp,a\n", 1),
    ("subject_id,group,a\ns1,A,0.5\ns2,A\n", 3),
    ("subject_id,group,a\ns1,A,1.5\n", 2),
    ("subject_id,group,a\ns1,A,lots\n", 2),
])
def test_malformed_csv_reports_line(text, line):
    with pytest.raises(HurdleInputError) as err:
        parse_engagement_csv(text)
    assert err.value.line == line
