import math
import warnings

import numpy as np
import pytest
from scipy import stats

import pairmaxent.predict as predict
from conftest import random_model
from pairmaxent.core import (CouplingModel, InsufficientSample, SignPanel, SizeLimitExceeded,
                             ValidationError, all_configurations)
from pairmaxent.exact import gibbs_distribution
from pairmaxent.infer import RpmlConfig
from pairmaxent.mcmc import simulate_panel
from pairmaxent.predict import (DgModel, LagMismatch, NoNegatives, NoPositives,
                                ReversalWModel, bivariate_normal_cdf,
                                compare_reversal_models, contiguous_folds, count_kld,
                                default_thresholds, evaluate_classifier, fit_dg,
                                fit_reversal_models, fit_w_model, flip_probabilities,
                                flip_probability, kfold_cross_validation,
                                reversal_count_distribution, reversal_indicators, roc_auc,
                                truncated_poisson)


def panel_from_reversals(x, seed=0):
    # s_{t+1} = -s_t where x_t = 1
    rng = np.random.default_rng(seed)
    s0 = rng.choice([-1, 1], x.shape[1])
    signs = np.cumprod(np.vstack([s0, 1 - 2 * x]), axis=0)
    return SignPanel.from_array(signs.T)


def sample_w_model(W, size, seed):
    n = W.shape[0]
    x = (all_configurations(n) > 0).astype(float)
    lw = np.einsum("ki,ij,kj->k", x, W, x)
    p = np.exp(lw - lw.max())
    p /= p.sum()
    idx = np.random.default_rng(seed).choice(p.size, size, p=p)
    return x[idx].astype(np.int8)


def test_flip_probability_free_unit():
    m = CouplingModel.zeros(3)
    assert flip_probability(m, [1, 1, 1], [1, -1, 1], 0) == 0.5


def test_flip_probability_saturates():
    J = np.full((4, 4), 5.0)
    np.fill_diagonal(J, 0.0)
    m = CouplingModel(J, np.zeros(4))
    p = flip_probability(m, [1, -1, -1, -1], [1, -1, -1, -1], 0)
    assert p > 1 - 1e-12


def test_flip_probability_complements_to_one():
    model = random_model(4, 0)
    prev = np.array([1, -1, 1, 1])
    cur = np.array([-1, 1, 1, -1])
    p = flip_probability(model, prev, cur, 2)
    stay = flip_probability(model, -prev, cur, 2)
    assert p + stay == 1.0


@pytest.mark.parametrize("seed", range(3))
def test_flip_probability_matches_enumeration(seed):
    model = random_model(3, seed, scale=0.8)
    dist = gibbs_distribution(model).as_dict()
    for s in all_configurations(3):
        for i in range(3):
            up, down = s.copy(), s.copy()
            up[i], down[i] = 1, -1
            pu, pd = dist[tuple(up)], dist[tuple(down)]
            for prev_i in (-1, 1):
                prev = s.copy()
                prev[i] = prev_i
                target = pd / (pu + pd) if prev_i == 1 else pu / (pu + pd)
                assert flip_probability(model, prev, s, i) == pytest.approx(target, abs=1e-12)


def test_flip_probability_lags():
    rng = np.random.default_rng(1)
    K = rng.normal(0, 0.3, (3, 3))
    base = random_model(3, 2)
    m = CouplingModel(base.influences, base.fields, (K,))
    prev = np.array([1, 1, -1])
    cur = np.array([1, -1, -1])
    a = base.influences[0] @ np.array([0, -1, -1]) + base.fields[0] + K[0] @ prev
    assert flip_probability(m, prev, cur, 0, [prev]) == pytest.approx(
        0.5 * (1 - math.tanh(a)), abs=1e-15)
    with pytest.raises(LagMismatch):
        flip_probability(m, prev, cur, 0)
    with pytest.raises(LagMismatch):
        flip_probability(base, prev, cur, 0, [prev])


def test_flip_probabilities_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    base = random_model(4, 3)
    m = CouplingModel(base.influences, base.fields,
                      (rng.normal(0, 0.2, (4, 4)), rng.normal(0, 0.2, (4, 4))))
    panel = SignPanel.from_array(rng.choice([-1, 1], size=(4, 30)))
    s = panel.values
    t_idx, p, act = flip_probabilities(m, panel)
    assert t_idx[0] == 2
    for k, t in enumerate(t_idx[:5]):
        for i in range(4):
            expect = flip_probability(m, s[:, t - 1], s[:, t], i, [s[:, t - 1], s[:, t - 2]])
            assert p[i, k] == pytest.approx(expect, abs=1e-14)
            assert act[i, k] == int(s[i, t] != s[i, t - 1])


def test_confusion_worked_example():
    p = np.array([0.9, 0.8, 0.7, 0.7, 0.6, 0.6, 0.6, 0.6, 0.2, 0.1])
    y = np.array([1, 1, 1, 1, 1, 1, 0, 0, 0, 0])
    rep = evaluate_classifier(p, y, [0.5])
    assert rep.tp_rate[0] == 1.0
    assert rep.fp_rate[0] == 0.5
    assert rep.accuracy[0] == 0.8


def test_threshold_grid_default():
    g = default_thresholds()
    assert g.shape == (101,) and g[0] == 0 and g[-1] == 1


def test_auc_perfect_separation():
    rep = evaluate_classifier([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert rep.auc == 1.0
    assert rep.grid_auc == 1.0


def test_auc_random_scores():
    rng = np.random.default_rng(4)
    inside = 0
    for _ in range(200):
        y = rng.integers(0, 2, 1000)
        p = rng.random(1000)
        P, N = y.sum(), (1 - y).sum()
        sd = math.sqrt((P + N + 1) / (12 * P * N))
        inside += abs(roc_auc(p, y) - 0.5) < 3 * sd
    assert inside >= 195


def test_auc_matches_rank_statistic():
    rng = np.random.default_rng(5)
    y = rng.integers(0, 2, 300)
    p = np.round(rng.random(300) + 0.3 * y, 2)  # ties included
    u = stats.mannwhitneyu(p[y == 1], p[y == 0]).statistic
    assert roc_auc(p, y) == pytest.approx(u / (y.sum() * (1 - y).sum()), abs=1e-12)


def test_auc_monotone_invariance():
    rng = np.random.default_rng(6)
    y = rng.integers(0, 2, 200)
    p = rng.random(200) + 0.5 * y
    assert roc_auc(np.exp(3 * p), y) == pytest.approx(roc_auc(p, y), abs=1e-15)


def test_classifier_errors():
    with pytest.raises(NoPositives):
        evaluate_classifier([0.1, 0.2], [0, 0])
    with pytest.raises(NoNegatives):
        evaluate_classifier([0.1, 0.2], [1, 1])
    with pytest.raises(ValidationError):
        evaluate_classifier([0.1], [0, 1])
    with pytest.raises(ValidationError):
        evaluate_classifier([0.1, 0.2], [0, 1], [1.5])


def test_report_rates_and_csv(tmp_path):
    rng = np.random.default_rng(7)
    rep = evaluate_classifier(rng.random(50), rng.integers(0, 2, 50))
    assert np.all((rep.tp_rate >= 0) & (rep.tp_rate <= 1))
    assert np.all(np.diff(rep.tp_rate) <= 0) and np.all(np.diff(rep.fp_rate) <= 0)
    assert 0 <= rep.auc <= 1
    rep.to_csv(tmp_path / "roc.csv")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "alpha,tp_rate,fp_rate,accuracy" and len(lines) == 102


def test_contiguous_folds_partition():
    blocks = contiguous_folds(103, 10)
    assert blocks[0][0] == 0 and blocks[-1][1] == 103
    assert all(a[1] == b[0] for a, b in zip(blocks, blocks[1:]))


def test_kfold_insufficient_sample():
    panel = SignPanel.from_array(np.ones((2, 199)))
    with pytest.raises(InsufficientSample):
        kfold_cross_validation(panel, folds=10)


def test_kfold_training_excludes_held_out_block(monkeypatch):
    rng = np.random.default_rng(8)
    panel = SignPanel.from_array(rng.choice([-1, 1], size=(3, 200)))
    seen = []
    real = predict.fit_rpml

    def spy(train, config):
        seen.append(train.values.copy())
        return real(train, config)

    monkeypatch.setattr(predict, "fit_rpml", spy)
    rep = kfold_cross_validation(panel, RpmlConfig(), folds=5)
    assert len(seen) == 5
    for (a, b), train in zip(rep.folds, seen):
        np.testing.assert_array_equal(train, np.delete(panel.values, np.s_[a:b], axis=1))
    # every prediction sits in exactly one block
    t = rep.predictions[:, 0]
    assert np.unique(rep.predictions[:, :2], axis=0).shape[0] == rep.predictions.shape[0]
    assert t.min() == 1 and t.max() == 199


def test_kfold_coupled_vs_independent():
    rng = np.random.default_rng(7)
    J = rng.normal(0, 1.0, (6, 6))
    J = np.triu(J, 1)
    J = J + J.T
    panel = simulate_panel(CouplingModel(J, np.zeros(6)), 2000, seed=3, equilibration=1000,
                           spacing=10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pair = kfold_cross_validation(panel, RpmlConfig(), folds=5)
        ind = kfold_cross_validation(panel, RpmlConfig(), folds=5, independent=True)
    assert pair.mean_auc > 0.8
    assert abs(ind.mean_auc - 0.5) < 0.06
    assert pair.best_mean_accuracy >= pair.mean_accuracy.max() - 1e-15


def test_reversal_counts_constant_and_alternating():
    const = reversal_count_distribution(SignPanel.from_array(np.ones((4, 10))))
    np.testing.assert_array_equal(const.probabilities, [1, 0, 0, 0, 0])
    alt = np.tile([1, -1], (4, 5))
    d = reversal_count_distribution(SignPanel.from_array(alt))
    np.testing.assert_array_equal(d.probabilities, [0, 0, 0, 0, 1])
    with pytest.raises(InsufficientSample):
        reversal_indicators(SignPanel.from_array(np.ones((3, 1))))


def test_reversal_counts_fair_coins_binomial():
    rng = np.random.default_rng(9)
    m = 40_000
    d = reversal_count_distribution(SignPanel.from_array(rng.choice([-1, 1], size=(6, m))))
    b = stats.binom.pmf(np.arange(7), 6, 0.5)
    se = np.sqrt(b * (1 - b) / (m - 1))
    assert np.all(np.abs(d.probabilities - b) < 4 * se)


def test_truncated_poisson():
    d = truncated_poisson(2.5, 6)
    assert d.probabilities.sum() == pytest.approx(1.0, abs=1e-15)
    ref = stats.poisson.pmf(np.arange(7), 2.5)
    np.testing.assert_allclose(d.probabilities, ref / ref.sum(), rtol=1e-12)
    np.testing.assert_array_equal(truncated_poisson(0.0, 3).probabilities, [1, 0, 0, 0])


def test_bivariate_normal_closed_form_at_origin():
    for rho in (-0.95, -0.3, 0.0, 0.4, 0.99):
        assert bivariate_normal_cdf(0.0, 0.0, rho) == pytest.approx(
            0.25 + math.asin(rho) / (2 * math.pi), abs=1e-13)


def test_bivariate_normal_against_scipy():
    rng = np.random.default_rng(10)
    for _ in range(20):
        a, b = rng.normal(0, 1.2, 2)
        rho = rng.uniform(-0.95, 0.95)
        ref = stats.multivariate_normal(cov=[[1, rho], [rho, 1]]).cdf([a, b])
        assert bivariate_normal_cdf(a, b, rho) == pytest.approx(ref, abs=1e-7)


def test_bivariate_normal_limits():
    assert bivariate_normal_cdf(0.3, -0.2, 1.0) == pytest.approx(stats.norm.cdf(-0.2), abs=1e-9)
    assert bivariate_normal_cdf(0.3, 0.5, -1.0) == pytest.approx(
        stats.norm.cdf(0.3) + stats.norm.cdf(0.5) - 1, abs=1e-9)


def test_dg_half_mean_gives_zero_threshold():
    x = np.array([[0, 1], [1, 0], [0, 0], [1, 1]] * 25)
    dg = fit_dg(x)
    np.testing.assert_allclose(dg.gamma, 0.0, atol=1e-15)
    assert dg.lam[0, 1] == pytest.approx(0.0, abs=1e-8)


def test_dg_validation():
    with pytest.raises(ValidationError):
        DgModel(np.zeros(2), np.array([[1.0, 0.5], [0.4, 1.0]]))
    with pytest.raises(ValidationError):
        fit_dg(np.zeros((10, 2)))


def test_dg_round_trip():
    gamma = np.array([-0.3, 0.1, 0.5])
    lam = np.array([[1.0, 0.5, -0.2], [0.5, 1.0, 0.3], [-0.2, 0.3, 1.0]])
    n = 100_000
    x = DgModel(gamma, lam).sample(n, seed=11)
    # sampler moments against the targets
    mu = stats.norm.cdf(gamma)
    np.testing.assert_array_less(np.abs(x.mean(axis=0) - mu), 3 * np.sqrt(mu * (1 - mu) / n))
    fit = fit_dg(x)
    se_gamma = np.sqrt(mu * (1 - mu) / n) / stats.norm.pdf(gamma)
    np.testing.assert_array_less(np.abs(fit.gamma - gamma), 3 * se_gamma)
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        joint = x[:, i] * x[:, j]
        dens = stats.multivariate_normal(cov=[[1, lam[i, j]], [lam[i, j], 1]]).pdf(
            [gamma[i], gamma[j]])
        se = joint.std() / math.sqrt(n) / dens
        assert abs(fit.lam[i, j] - lam[i, j]) < 3 * se


def test_dg_infeasible_covariance_flagged():
    a = np.array([0] * 90 + [1] * 10)
    b = 1 - a  # perfectly anti-correlated with unequal means
    with pytest.warns(predict.InfeasibleCovariance):
        dg = fit_dg(np.column_stack([a, b]))
    assert dg.infeasible[0, 1]


def test_w_model_independent_columns():
    rng = np.random.default_rng(12)
    x = (rng.random((20_000, 4)) < [0.2, 0.4, 0.5, 0.7]).astype(np.int8)
    w = fit_w_model(x)
    off = w.W[~np.eye(4, dtype=bool)]
    assert np.abs(off).max() < 0.05
    np.testing.assert_allclose(np.diag(w.W), np.log([0.25, 0.4 / 0.6, 1.0, 0.7 / 0.3]),
                               atol=0.1)


def test_w_model_conditional_logit_matches_enumeration():
    W = np.array([[-0.5, 0.4, 0.0], [0.4, 0.2, -0.3], [0.0, -0.3, 0.1]])
    m = ReversalWModel(W)
    x = np.array([[1.0, 0.0, 1.0]])
    logit = m.conditional_logit(x)[0]
    for i in range(3):
        on, off = x[0].copy(), x[0].copy()
        on[i], off[i] = 1, 0
        assert logit[i] == pytest.approx(on @ W @ on - off @ W @ off, abs=1e-14)


def test_w_model_count_distribution_and_limit():
    d = ReversalWModel(np.zeros((4, 4))).count_distribution()
    np.testing.assert_allclose(d.probabilities, stats.binom.pmf(np.arange(5), 4, 0.5))
    with pytest.raises(SizeLimitExceeded):
        ReversalWModel(np.zeros((13, 13))).count_distribution()


def test_planted_w_model_beats_poisson():
    W = np.full((6, 6), 0.35)
    np.fill_diagonal(W, -1.2)
    x = sample_w_model(W, 20_000, seed=13)
    panel = panel_from_reversals(x)
    np.testing.assert_array_equal(reversal_indicators(panel), x)
    out = compare_reversal_models(panel, dg_samples=20_000)
    assert out["pairwise"] < out["poisson"]
    assert out["pairwise"] < 0.01
    fits = fit_reversal_models(panel)
    assert fits.poisson_rate == pytest.approx(x.sum(axis=1).mean())


def test_independent_reversals_all_models_close():
    # rare independent reversals: binomial counts are close to Poisson
    rng = np.random.default_rng(14)
    x = (rng.random((20_000, 5)) < 0.05).astype(np.int8)
    out = compare_reversal_models(panel_from_reversals(x), dg_samples=50_000)
    for key in ("pairwise", "poisson", "dg"):
        assert out[key] < 0.01, key


def test_fair_coin_reversals_are_not_poisson():
    # K ~ Binomial(N, 1/2) has variance N/4, far below the Poisson mean N/2
    rng = np.random.default_rng(14)
    panel = SignPanel.from_array(rng.choice([-1, 1], size=(5, 20_000)))
    out = compare_reversal_models(panel, dg_samples=50_000)
    assert out["pairwise"] < 0.01 and out["dg"] < 0.01
    assert out["poisson"] > 0.05


def test_compare_subsets_and_limits():
    rng = np.random.default_rng(15)
    panel = SignPanel.from_array(rng.choice([-1, 1], size=(6, 2000)))
    out = compare_reversal_models(panel, subset_size=3, subsets=4, seed=0, dg_samples=5000)
    assert len(out["subsets"]) == 4
    with pytest.raises(ValidationError):
        compare_reversal_models(panel, subset_size=7)
    big = SignPanel.from_array(rng.choice([-1, 1], size=(13, 50)))
    with pytest.raises(SizeLimitExceeded):
        compare_reversal_models(big)


def test_count_kld_properties():
    a = truncated_poisson(1.0, 4)
    assert count_kld(a, a) == 0.0
    point = truncated_poisson(0.0, 4)
    assert count_kld(a, point) == math.inf
    assert count_kld(point, a) > 0
