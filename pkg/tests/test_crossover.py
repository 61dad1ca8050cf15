import numpy as np
import pytest

from sibcross.crossover import (
    CrossoverDataset,
    CrossoverParams,
    bias_decomposition,
    carryover_difference_estimator,
    cosibling_substitution_estimator,
    crossover_exposure_effect,
    crossover_outcome,
    period_difference_estimator,
    simulate_crossover,
)


def zero_noise(**kw) -> CrossoverParams:
    return CrossoverParams(n_families=20, sd_alpha=0.0, sd_s=0.0, sd_eps=0.0, **kw)


def test_cell_means():
    p = zero_noise(mu=1.0, pi_effect=0.5, beta=5.0, lambda0=0.3, lambda1=2.0)
    # arm 1: exposed then unexposed with carry-over lambda1; arm 2 the reverse with lambda0
    assert crossover_outcome(p, 1, 1) == 1.0 + 5.0
    assert crossover_outcome(p, 1, 2) == 1.0 + 0.5 + 2.0
    assert crossover_outcome(p, 2, 1) == 1.0
    assert crossover_outcome(p, 2, 2) == 1.0 + 0.5 + 5.0 + 0.3


@pytest.mark.parametrize("beta,l0,l1,pi", [(5.0, 0.0, 2.0, 0.0), (1.0, 1.5, -0.5, 0.7), (-2.0, 0.0, 0.0, 3.0)])
def test_zero_noise_aliasing_exact(beta, l0, l1, pi):
    p = zero_noise(beta=beta, lambda0=l0, lambda1=l1, pi_effect=pi, mu=4.0)
    d = simulate_crossover(p, 1)
    assert period_difference_estimator(d).estimate == pytest.approx(beta + (l0 - l1) / 2, abs=1e-12)
    assert cosibling_substitution_estimator(d).estimate == pytest.approx(beta + (l0 - l1), abs=1e-12)
    assert carryover_difference_estimator(d).estimate == pytest.approx(l1 - l0, abs=1e-12)
    assert crossover_exposure_effect(d).estimate == pytest.approx(beta + (l0 - l1) / 2, abs=1e-12)


def test_zero_noise_demo_values():
    d = simulate_crossover(zero_noise(beta=5.0, lambda0=0.0, lambda1=2.0), 3)
    bd = bias_decomposition(d, zero_noise(beta=5.0, lambda0=0.0, lambda1=2.0))
    est = [r[1] for r in bd.rows()]
    assert est == pytest.approx([4.0, 3.0, 2.0], abs=1e-12)
    assert "4.0000" in bd.to_text() and "3.0000" in bd.to_text()


def test_no_differential_carryover_is_unbiased():
    p = CrossoverParams(n_families=20_000, beta=1.0, lambda0=0.7, lambda1=0.7, pi_effect=0.4)
    d = simulate_crossover(p, 9)
    for r in (period_difference_estimator(d), cosibling_substitution_estimator(d)):
        assert abs(r.estimate - 1.0) <= 3 * r.std_error


def test_csv_round_trip():
    d = simulate_crossover(CrossoverParams(n_families=7), 2)
    text = d.to_csv()
    assert text.splitlines()[0] == "family_id,sibling,arm,period,y"
    assert len(text.splitlines()) == 1 + 7 * 4
    back = CrossoverDataset.from_csv_text(text)
    np.testing.assert_array_equal(back.y, d.y)
    np.testing.assert_array_equal(back.arm, d.arm)


def test_arms_are_randomised_within_family():
    d = simulate_crossover(CrossoverParams(n_families=4000), 4)
    assert np.all(np.sort(d.arm, axis=1) == [1, 2])
    share = float(np.mean(d.arm[:, 0] == 1))
    assert abs(share - 0.5) < 4 * np.sqrt(0.25 / 4000)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        CrossoverDataset([1], [[1, 1]], np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        CrossoverParams(sd_eps=-1.0)
    with pytest.raises(ValueError, match="unknown"):
        CrossoverParams.from_dict({"gamma": 1.0})
    empty = CrossoverDataset(np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2, 2)))
    assert period_difference_estimator(empty).reason == "EMPTY_ARM"


def test_deterministic():
    p = CrossoverParams(n_families=50)
    assert simulate_crossover(p, 5).to_csv() == simulate_crossover(p, 5).to_csv()
