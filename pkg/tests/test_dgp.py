import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit

from sibcross.data import DgpParams, LatentState
from sibcross.dgp import (
    PRESETS,
    MatchingFixture,
    SelectionModel,
    analytic_targets,
    classic_matching_att_check,
    counterfactual_outcome,
    exposure_level_probs,
    latent_state,
    monte_carlo_mean,
    monte_carlo_target,
    monte_carlo_tau1,
    pair_probability,
    preset,
    simulate_dataset,
    simulate_selection_sample,
)


def alpha_expectation(p: DgpParams, fn, order: int = 60) -> float:
    """E[fn(alpha)] by two-dimensional Gauss-Hermite quadrature over (U, alpha_tilde)."""
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / weights.sum()
    u = p.sigma_u * nodes[:, None]
    at = p.tau * nodes[None, :]
    alpha = p.b_alpha * np.exp(p.b_lambda * u) + at
    return float(np.sum(weights[:, None] * weights[None, :] * fn(alpha)))


def test_presets_match_parameter_table():
    for p in PRESETS.values():
        assert (p.n_families, p.b_lambda, p.sigma_u, p.b_alpha, p.b_x, p.pi_x, p.tau, p.mu, p.beta_w, p.sigma) == (
            1000, 0.5, 2.0, 0.4, 0.2, 0.5, 2.0, 10.0, 5.0, 1.0)
    assert (preset("scenario1").beta_d, preset("scenario1").beta_c) == (-1.0, 1.5)
    assert (preset("scenario2").beta_d, preset("scenario2").beta_c) == (0.0, 1.5)
    assert (preset("scenario3").beta_d, preset("scenario3").beta_c) == (-1.0, 0.0)
    assert (preset("scenario4").beta_d, preset("scenario4").beta_c) == (0.0, 0.0)
    with pytest.raises(ValueError, match="unknown preset"):
        preset("scenario5")


@pytest.mark.parametrize("name,tau3", [("scenario1", 5.8405), ("scenario2", 6.50), ("scenario3", 4.3405), ("scenario4", 5.00)])
def test_analytic_tau3_matches_table(name, tau3):
    assert analytic_targets(preset(name)).tau3 == pytest.approx(tau3, abs=5e-5)


def test_target_flags():
    t1 = analytic_targets(preset("scenario1"))
    assert not t1.sa_holds and t1.ndi_deviation == 3.0
    t4 = analytic_targets(preset("scenario4"))
    assert t4.sa_holds and t4.ndi_deviation == 0.0
    assert t4.tau1 == t4.tau2_at_0 == t4.tau2_at_1 == 5.0


def test_tau1_closed_form_matches_monte_carlo():
    p = preset("scenario1")
    mc = monte_carlo_tau1(p, 200_000, 3)
    assert abs(mc.value - analytic_targets(p).tau1) <= 4 * mc.std_error


def test_monte_carlo_contrast_and_means_agree():
    p = preset("scenario2")
    diff = monte_carlo_target(p, ((1, 1), (0, 0)), 50_000, 4)
    m11 = monte_carlo_mean(p, (1, 1), 50_000, 4)
    m00 = monte_carlo_mean(p, (0, 0), 50_000, 4)
    # both use the same latent draws and eps
    assert diff.value == pytest.approx(m11.value - m00.value, abs=1e-9)
    with pytest.raises(ValueError):
        monte_carlo_target(p, ((1, 1), (0, 0)), 0, 4)


def test_level_probabilities_sum_to_one():
    a = np.linspace(-20, 20, 41)
    p0, ph, p1 = exposure_level_probs(a, 0.2)
    np.testing.assert_allclose(p0 + ph + p1, 1.0)
    np.testing.assert_allclose(ph, expit(0.2 * a))
    p = DgpParams(pi_x=0.3)
    np.testing.assert_allclose(pair_probability(a, p, 1, 0), ph * 0.3)
    np.testing.assert_allclose(pair_probability(a, p, 0, 1), ph * 0.7)
    np.testing.assert_allclose(pair_probability(a, p, 1, 1), p1)


def test_exposure_frequencies_match_quadrature():
    p = preset("scenario4").replace(n_families=200_000)
    d = simulate_dataset(p, 11)
    expected = alpha_expectation(p, lambda a: expit(p.b_x * a))
    freq = float(np.mean(d.discordant))
    assert abs(freq - expected) <= 4 * math.sqrt(expected * (1 - expected) / len(d))
    first_exposed = float(np.mean(d.x1[d.discordant]))
    assert abs(first_exposed - 0.5) <= 4 * math.sqrt(0.25 / d.discordant.sum())


def test_outcomes_follow_structural_equation():
    p = preset("scenario1").replace(sigma=0.0, n_families=500)
    d = simulate_dataset(p, 2)
    y1 = p.mu + d.alpha + p.beta_w * d.x1 + p.beta_d * d.x1 * d.alpha + p.beta_c * d.x2
    np.testing.assert_allclose(d.y1, y1, rtol=0, atol=1e-12)
    np.testing.assert_allclose(d.alpha, p.b_alpha * np.exp(p.b_lambda * d.u) + d.alpha_tilde, atol=1e-12)
    assert np.all((d.x2 == 1 - d.x1)[d.discordant])


def test_counterfactual_outcome():
    p = preset("scenario1")
    st_ = LatentState(u=0.0, alpha=2.0, alpha_tilde=1.6)
    assert counterfactual_outcome(st_, p, 1, 1) == pytest.approx(10 + 2 + 5 - 2 + 1.5)
    assert counterfactual_outcome(2.0, p, 0, 0, eps=0.5) == pytest.approx(12.5)


def test_latent_state_access():
    d = simulate_dataset(preset("scenario4").replace(n_families=5), 1)
    s = latent_state(d, 2)
    assert s.alpha == d.alpha[2]
    with pytest.raises(ValueError):
        latent_state(d.strip_latent(), 0)


@given(st.integers(0, 2**40), st.integers(2, 80), st.integers(2, 80))
def test_simulation_deterministic_and_prefix_stable(seed, n, m):
    small, big = sorted((n, m))
    a = simulate_dataset(preset("scenario1").replace(n_families=small), seed)
    b = simulate_dataset(preset("scenario1").replace(n_families=big), seed)
    c = simulate_dataset(preset("scenario1").replace(n_families=small), seed)
    assert a.to_csv() == c.to_csv()
    assert b.take(np.arange(small)).to_csv() == a.to_csv()


def test_selection_sample_draws():
    p = preset("scenario4").replace(n_families=5000)
    sample = simulate_selection_sample(p, SelectionModel(0.5, 0.3), 8)
    assert sample.study.n_families == int(sample.selected.sum())
    expected = float(np.mean(sample.p_select))
    assert abs(sample.selected.mean() - expected) <= 4 * math.sqrt(0.25 / 5000)
    everyone = simulate_selection_sample(p, SelectionModel(40.0, 0.0), 8)
    assert everyone.selected.all()
    assert everyone.population.to_csv() == simulate_dataset(p, 8).to_csv()


@pytest.mark.parametrize("effect_by_l", [0.0, 1.0])
def test_matching_check_passes(effect_by_l):
    report = classic_matching_att_check(MatchingFixture(effect_by_l=effect_by_l), 21)
    assert report.passed and not report.inconclusive, report.message
    if effect_by_l:
        # exposure is more likely at high L, so the ATT exceeds the ATE
        assert report.att > report.ate + 0.1


def test_matching_check_inconclusive_without_overlap():
    report = classic_matching_att_check(MatchingFixture(n=400, x_intercept=8.0, n_bins=40), 1)
    assert report.inconclusive and not report.passed
