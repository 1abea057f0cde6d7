import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from nodecoop.model import Policy, ServiceProfile
from nodecoop.reputation import (Metric, ObservationModel, ReputationEstimate, binarize, effective_success_probability,
                                 estimate, exclusion_probability, observe)
from nodecoop.utils.config import ConfigError


def _confidence_halfwidth(p, trials, level=0.99):
    return norm.ppf(0.5 + level / 2) * np.sqrt(p * (1 - p) / trials)


def test_effective_success_probability():
    assert effective_success_probability(1.0, 0.01) == pytest.approx(0.99)
    assert effective_success_probability(0.0, 0.01) == pytest.approx(0.01)
    assert effective_success_probability(0.3, 0.0) == 0.3
    assert effective_success_probability(0.3, 0.5) == pytest.approx(0.5)


def test_observation_window_follows_transit_load():
    assert ObservationModel.for_profile(ServiceProfile(s_xn=1, s_nx=200, g=2)).n_samples == 200
    assert ObservationModel.for_profile(ServiceProfile(s_xn=1, s_nx=0.3, g=2)).n_samples == 1
    model = ObservationModel.for_profile(ServiceProfile(s_xn=1, s_nx=10, g=2, e=0.1), seed=4)
    assert (model.e, model.seed) == (0.1, 4)


def test_observe_without_errors_is_exact_at_extremes():
    model = ObservationModel(n_samples=50)
    assert observe(Policy(t_x=1), model).r_hat == 1.0
    assert observe(Policy(t_x=0), model).r_hat == 0.0


def test_observe_is_deterministic_per_seed():
    model = ObservationModel(n_samples=100, e=0.2, seed=17)
    first = observe(Policy(t_x=0.6), model)
    assert observe(Policy(t_x=0.6), model) == first
    assert first.n_samples == 100
    assert first.metric == Metric.FINE_GRAINED
    assert (first.r_hat * 100) == pytest.approx(round(first.r_hat * 100))


def test_binarize_is_inclusive():
    fine = ReputationEstimate(r_hat=0.7, n_samples=10)
    assert binarize(fine, 0.7).r_hat == 1.0
    assert binarize(fine, 0.71).r_hat == 0.0
    assert binarize(fine, 0.7).metric == Metric.BINARY
    with pytest.raises(ConfigError):
        binarize(binarize(fine, 0.5), 0.5)


def test_binary_estimate_domain():
    with pytest.raises(ConfigError, match="r_hat"):
        ReputationEstimate(r_hat=0.5, n_samples=3, metric=Metric.BINARY)


def test_estimate():
    model = ObservationModel(n_samples=20)
    assert estimate(Policy(t_x=1), model).metric == Metric.FINE_GRAINED
    assert estimate(Policy(t_x=1), model, Metric.BINARY, t_s=0.9).r_hat == 1.0
    assert estimate(Policy(t_x=0.5), model, Metric.BINARY, t_s=0.9).r_hat == 0.0
    with pytest.raises(ConfigError, match="t_s"):
        estimate(Policy(t_x=1), model, Metric.BINARY)


def test_exclusion_of_fully_cooperative_node():
    model = ObservationModel(n_samples=100, e=0.01)
    assert exclusion_probability(Policy(t_x=1), 1.0, model) == pytest.approx(1 - 0.99 ** 100, abs=1e-12)


def test_exclusion_edge_cases():
    assert exclusion_probability(Policy(t_x=1), 1.0, ObservationModel(n_samples=100)) == 0.0
    # every count clears a zero threshold
    assert exclusion_probability(Policy(t_x=0), 0.0, ObservationModel(n_samples=100, e=0.3)) == 0.0
    assert exclusion_probability(Policy(t_x=0), 0.5, ObservationModel(n_samples=100)) == 1.0


def test_exclusion_agrees_with_simulation():
    t_s, n, e = 1.0, 100, 0.01
    policy = Policy(t_x=1)
    exact = exclusion_probability(policy, t_s, ObservationModel(n_samples=n, e=e))

    trials = 100_000
    excluded = sum(estimate(policy, ObservationModel(n_samples=n, e=e, seed=seed), Metric.BINARY, t_s).r_hat == 0.0
                   for seed in range(trials))
    assert abs(excluded / trials - exact) <= _confidence_halfwidth(exact, trials)


def test_exclusion_agrees_with_observe():
    t_s, n, e = 0.9, 40, 0.05
    policy = Policy(t_x=0.95)
    exact = exclusion_probability(policy, t_s, ObservationModel(n_samples=n, e=e))

    trials = 10_000
    excluded = sum(estimate(policy, ObservationModel(n_samples=n, e=e, seed=seed), Metric.BINARY, t_s).r_hat == 0.0
                   for seed in range(trials))
    assert abs(excluded / trials - exact) <= _confidence_halfwidth(exact, trials)


@given(st.integers(1, 200), st.floats(0.01, 1), st.floats(0, 0.5), st.floats(0, 0.5))
def test_exclusion_grows_with_error_for_cooperative_nodes(n, t_s, e1, e2):
    low, high = sorted((e1, e2))
    p_low = exclusion_probability(Policy(t_x=1), t_s, ObservationModel(n_samples=n, e=low))
    p_high = exclusion_probability(Policy(t_x=1), t_s, ObservationModel(n_samples=n, e=high))
    assert 0.0 <= p_low <= p_high + 1e-12 <= 1.0 + 1e-12


def test_observe_converges_to_flipped_probability():
    est = observe(Policy(t_x=1), ObservationModel(n_samples=1_000_000, e=0.1, seed=5))
    assert est.r_hat == pytest.approx(0.9, abs=0.001)

    p = effective_success_probability(0.7, 0.2)
    estimates = [observe(Policy(t_x=0.7), ObservationModel(n_samples=50, e=0.2, seed=seed)).r_hat
                 for seed in range(2000)]
    standard_error = np.sqrt(p * (1 - p) / 50 / len(estimates))
    assert abs(np.mean(estimates) - p) <= 3 * standard_error


@given(st.integers(1, 200), st.floats(0.01, 1), st.floats(0, 0.5), st.floats(0, 1), st.floats(0, 1))
def test_exclusion_falls_with_cooperation(n, t_s, e, t1, t2):
    low, high = sorted((t1, t2))
    model = ObservationModel(n_samples=n, e=e)
    assert exclusion_probability(Policy(t_x=high), t_s, model) <= exclusion_probability(Policy(t_x=low), t_s, model) \
        + 1e-12
