import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdroute.model import (
    NO_ARRIVAL,
    SAFE,
    Action,
    GroundTruth,
    ImpossibleObservation,
    ModelError,
    NetworkModel,
    Observation,
    PathParams,
    PlatformState,
    Segment,
    clamp_belief,
    expected_coefficient,
    hazard_probability,
    initial_ground_truth,
    platform_step,
    posterior_update,
    predict_belief,
    risky,
    sample_transition_probs,
    stationary_belief,
    stationary_belief_dynamic,
    step_ground_truth,
    update_expected_latency,
)

prob = st.floats(0.0, 1.0)


# -- posterior_update ----------------------------------------------------


def test_posterior_hazard_hand_value():
    # 0.5*0.8 / (0.5*0.8 + 0.5*0.3)
    assert posterior_update(0.5, Observation.HAZARD, 0.8, 0.3) == pytest.approx(0.4 / 0.55, abs=1e-12)
    assert posterior_update(0.5, Observation.HAZARD, 0.8, 0.3) == pytest.approx(0.727272, abs=1e-6)


def test_posterior_no_hazard_hand_value():
    assert posterior_update(0.5, Observation.NO_HAZARD, 0.8, 0.3) == pytest.approx(0.1 / 0.45)


def test_uninformative_observation_keeps_belief():
    assert posterior_update(0.5, Observation.NO_HAZARD, 0.4, 0.4) == 0.5


def test_degenerate_prior_is_absorbing():
    assert posterior_update(1.0, Observation.NO_HAZARD, 0.8, 0.3) == 1.0
    assert posterior_update(0.0, Observation.HAZARD, 0.8, 0.3) == 0.0


def test_impossible_observation_raises():
    with pytest.raises(ImpossibleObservation, match="impossible observation"):
        posterior_update(1.0, Observation.HAZARD, 0.0, 0.0)


def test_posterior_rejects_missing_observation():
    with pytest.raises(ModelError):
        posterior_update(0.5, Observation.NONE, 0.8, 0.3)


@settings(max_examples=300, deadline=None)
@given(x=prob, a=prob, b=prob, q1=prob, q2=prob, hazard=st.booleans())
def test_belief_closure(x, a, b, q1, q2, hazard):
    ph, pl = max(a, b), min(a, b)
    y = Observation.HAZARD if hazard else Observation.NO_HAZARD
    try:
        xp = posterior_update(x, y, ph, pl)
    except ImpossibleObservation:
        return
    assert 0.0 <= xp <= 1.0
    assert 0.0 <= predict_belief(xp, q1, q2) <= 1.0


def test_belief_closure_bulk_fuzz():
    rng = np.random.default_rng(11)
    u = rng.random((100_000, 5))
    for x, a, b, q1, q2 in u:
        ph, pl = max(a, b), min(a, b)
        for y in (Observation.HAZARD, Observation.NO_HAZARD):
            xp = posterior_update(float(x), y, float(ph), float(pl))
            assert 0.0 <= xp <= 1.0
        assert 0.0 <= predict_belief(float(x), float(q1), float(q2)) <= 1.0


@given(x=prob, p=prob)
def test_uninformative_identity(x, p):
    for y in (Observation.HAZARD, Observation.NO_HAZARD):
        try:
            assert posterior_update(x, y, p, p) == pytest.approx(x, abs=1e-12)
        except ImpossibleObservation:
            pass


@given(x=prob, a=prob, b=prob)
def test_observation_monotonicity(x, a, b):
    ph, pl = max(a, b), min(a, b)
    if ph == pl:
        return
    try:
        up = posterior_update(x, Observation.HAZARD, ph, pl)
    except ImpossibleObservation:
        up = x
    try:
        down = posterior_update(x, Observation.NO_HAZARD, ph, pl)
    except ImpossibleObservation:
        down = x
    assert up >= x - 1e-12
    assert down <= x + 1e-12


# -- prediction, coefficient, latency, hazard -----------------------------


def test_predict_belief_examples():
    assert predict_belief(0.5, 0.5, 0.5) == 0.5
    assert predict_belief(0.2222, 0.99, 0.99) == pytest.approx(0.2222 * 0.99 + 0.7778 * 0.01)
    assert predict_belief(0.2222, 0.99, 0.99) == pytest.approx(0.227756, abs=1e-6)


def test_stationary_point_is_fixed_on_grid():
    grid = np.linspace(0.0, 1.0, 100)
    worst = 0.0
    for qh in grid:
        for ql in grid:
            if qh == 1.0 and ql == 1.0:
                continue
            xb = stationary_belief(qh, ql)
            worst = max(worst, abs(predict_belief(xb, qh, ql) - xb))
    assert worst <= 1e-12


def test_expected_coefficient_examples():
    assert expected_coefficient(0.45, 1.2, 0.2) == pytest.approx(0.65)
    assert expected_coefficient(0.0, 1.2, 0.2) == 0.2
    assert expected_coefficient(1.0, 1.2, 0.2) == 1.2


@given(x1=prob, x2=prob)
def test_expected_coefficient_monotone(x1, x2):
    lo, hi = sorted((x1, x2))
    assert expected_coefficient(lo, 2.0, 0.1) <= expected_coefficient(hi, 2.0, 0.1) + 1e-12


def test_update_expected_latency_examples():
    assert update_expected_latency(10, 0.6, True, 2) == pytest.approx(8.0)
    assert update_expected_latency(10, 0.6, False, 2) == pytest.approx(6.0)
    assert update_expected_latency(0, 0.3, True, 1) == 1.0


@given(
    l1=st.floats(0, 1e3), l2=st.floats(0, 1e3), a=st.floats(0, 5), b=st.floats(0, 5), c=st.floats(0, 3)
)
def test_unchosen_update_is_linear(l1, l2, a, b, c):
    lhs = update_expected_latency(a * l1 + b * l2, c, False, 2.0)
    rhs = a * update_expected_latency(l1, c, False, 2.0) + b * update_expected_latency(l2, c, False, 2.0)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)
    assert lhs >= 0


def test_hazard_probability_examples():
    assert hazard_probability(0.5, 0.8, 0.3) == pytest.approx(0.55)
    assert hazard_probability(0.0, 0.8, 0.3) == 0.3
    assert hazard_probability(1.0, 0.8, 0.3) == 0.8


def test_clamp_belief_tolerance():
    assert clamp_belief(1.0 + 1e-13) == 1.0
    assert clamp_belief(-1e-13) == 0.0
    with pytest.raises(ModelError):
        clamp_belief(1.0 + 1e-9)


# -- stationary beliefs ---------------------------------------------------


def test_stationary_belief_examples():
    assert stationary_belief(0.5, 0.5) == 0.5
    assert stationary_belief(0.9, 0.8) == pytest.approx(2 / 3)
    assert stationary_belief(0.9, 0.8947) == pytest.approx(0.1053 / 0.2053)
    assert stationary_belief(0.9, 0.8947) == pytest.approx(0.51290, abs=1e-5)


def test_stationary_belief_reducible_chain():
    with pytest.raises(ModelError, match="reducible chain"):
        stationary_belief(1.0, 1.0)


def test_dynamic_sigma_zero_is_static_exactly():
    assert stationary_belief_dynamic(0.99, 0.99, 0.0) == 0.5
    assert stationary_belief_dynamic(0.9, 0.8, 0.0, 7) == stationary_belief(0.9, 0.8)


def test_dynamic_matches_monte_carlo():
    rng = np.random.default_rng(5)
    n = 1_000_000
    qh = rng.uniform(0.8, 1.0, n)
    ql = rng.uniform(0.89, 1.0, n)
    mc = np.mean((1 - ql) / (2 - ql - qh))
    se = np.std((1 - ql) / (2 - ql - qh)) / math.sqrt(n)
    val = stationary_belief_dynamic(0.9, 0.99, 0.1)
    assert abs(val - mc) <= max(1e-3, 4 * se)


def test_dynamic_quadrature_converges():
    a = stationary_belief_dynamic(0.9, 0.99, 0.2, 32)
    b = stationary_belief_dynamic(0.9, 0.99, 0.2, 128)
    assert a == pytest.approx(b, abs=1e-6)


def test_dynamic_point_mass_at_one_is_an_error():
    with pytest.raises(ModelError, match="collapse onto 1"):
        stationary_belief_dynamic(1.0, 1.0, 1e-300)


def test_dynamic_monotone_patterns_match_figure_captions():
    up = [stationary_belief_dynamic(0.9, 0.99, s) for s in (0.0, 0.04, 0.08, 0.12, 0.16, 0.2)]
    down = [stationary_belief_dynamic(0.99, 0.9, s) for s in (0.0, 0.04, 0.08, 0.12, 0.16, 0.2)]
    assert all(b > a for a, b in zip(up, up[1:]))
    assert all(b < a for a, b in zip(down, down[1:]))


# -- sampling ---------------------------------------------------------------


def test_sigma_zero_sampling_returns_means():
    p = PathParams.risky(2.0, 0.0, 0.9, 0.8, 0.8, 0.2)
    rng = np.random.default_rng(0)
    assert all(sample_transition_probs(p, rng) == (0.9, 0.8) for _ in range(100))


def test_sampling_respects_clipping():
    p = PathParams.risky(2.0, 0.0, 0.95, 0.5, 0.8, 0.2, sigma=0.2)
    rng = np.random.default_rng(1)
    draws = np.array([sample_transition_probs(p, rng) for _ in range(20_000)])
    assert draws[:, 0].min() >= 0.75 and draws[:, 0].max() <= 1.0


def test_sampling_mean_is_interval_midpoint():
    p = PathParams.risky(2.0, 0.0, 0.95, 0.5, 0.8, 0.2, sigma=0.2)
    rng = np.random.default_rng(2)
    draws = np.array([sample_transition_probs(p, rng) for _ in range(100_000)])
    for col, (lo, hi) in ((0, (0.75, 1.0)), (1, (0.3, 0.7))):
        se = (hi - lo) / math.sqrt(12) / math.sqrt(len(draws))
        assert abs(draws[:, col].mean() - 0.5 * (lo + hi)) <= 3 * se


# -- validation -------------------------------------------------------------


def test_path_params_validation():
    with pytest.raises(ModelError):
        PathParams.safe(1.0)
    with pytest.raises(ModelError):
        PathParams.risky(0.9, 0.1, 0.5, 0.5, 0.8, 0.2)
    with pytest.raises(ModelError):
        PathParams.risky(2.0, 1.0, 0.5, 0.5, 0.8, 0.2)
    with pytest.raises(ModelError):
        PathParams.risky(2.0, 0.1, 0.5, 0.5, 0.2, 0.8)
    with pytest.raises(ModelError):
        PathParams.risky(2.0, 0.1, 1.5, 0.5, 0.8, 0.2)


def test_segment_requires_alpha_between_states():
    with pytest.raises(ModelError):
        Segment(PathParams.safe(0.6), (PathParams.risky(1.2, 0.7, 0.5, 0.5, 0.8, 0.3),))


def test_network_validation():
    path = PathParams.risky(1.2, 0.2, 0.5, 0.5, 0.8, 0.3)
    with pytest.raises(ModelError):
        NetworkModel.parallel(0.6, [path], lam=1.0, rho=1.0, delta_ell=2, safe_latency=10,
                              risky_latencies=[10], beliefs=[0.5])
    with pytest.raises(ModelError):
        NetworkModel.parallel(0.6, [path], lam=1.0, rho=0.5, delta_ell=2, safe_latency=-1,
                              risky_latencies=[10], beliefs=[0.5])
    with pytest.raises(ModelError):
        NetworkModel.parallel(0.6, [path], lam=1.0, rho=0.5, delta_ell=2, safe_latency=1,
                              risky_latencies=[10], beliefs=[1.5])


def test_risky_action_index():
    assert risky(2) == Action(2)
    with pytest.raises(ModelError):
        risky(0)


# -- ground truth -----------------------------------------------------------


def _one_path_model(alpha_low=0.2, p_high=1.0, p_low=0.0):
    path = PathParams.risky(1.2, alpha_low, 0.5, 0.5, p_high, p_low)
    return NetworkModel.parallel(0.6, [path], lam=1.0, rho=0.9, delta_ell=2.0,
                                 safe_latency=10.0, risky_latencies=[10.0], beliefs=[0.5])


def _truth(high: bool):
    return GroundTruth(((high,),), ((10.0, 10.0),), (((0.5, 0.5),),))


def test_high_state_with_certain_hazard_observation():
    m = _one_path_model(p_high=1.0)
    rng = np.random.default_rng(0)
    for _ in range(50):
        _, obs = step_ground_truth(_truth(True), m, [Action(1)], rng)
        assert obs[0][0] is Observation.HAZARD


def test_low_state_latency_recursion():
    m = _one_path_model()
    new, obs = step_ground_truth(_truth(False), m, [Action(1)], np.random.default_rng(0))
    assert new.realized_latencies[0][1] == pytest.approx(0.2 * 10 + 2)
    assert new.realized_latencies[0][0] == pytest.approx(6.0)


def test_no_arrival_emits_nothing_and_adds_no_load():
    m = _one_path_model()
    new, obs = step_ground_truth(_truth(True), m, [NO_ARRIVAL], np.random.default_rng(0))
    assert obs == ((Observation.NONE,),)
    assert new.realized_latencies[0] == pytest.approx((6.0, 12.0))


def test_nonexistent_path_is_rejected():
    m = _one_path_model()
    with pytest.raises(ModelError, match="nonexistent path"):
        step_ground_truth(_truth(True), m, [Action(3)], np.random.default_rng(0))
    with pytest.raises(ModelError):
        platform_step(m.initial_state(), m, [Action(2)], ((Observation.NONE,),))


def test_ground_truth_consumes_fixed_randomness():
    m = _one_path_model()
    r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
    step_ground_truth(_truth(True), m, [SAFE], r1)
    step_ground_truth(_truth(True), m, [Action(1)], r2)
    assert r1.random() == r2.random()


def test_initial_truth_follows_initial_belief():
    m = _one_path_model()
    rng = np.random.default_rng(9)
    highs = [initial_ground_truth(m, rng).coeff_high[0][0] for _ in range(4000)]
    assert abs(np.mean(highs) - 0.5) < 4 * 0.5 / math.sqrt(4000)


def test_sigma_zero_dynamic_path_equals_static():
    static = PathParams.risky(1.2, 0.2, 0.7, 0.6, 0.8, 0.3)
    dynamic = PathParams.risky(1.2, 0.2, 0.7, 0.6, 0.8, 0.3, sigma=0.0)
    assert static == dynamic
    rng = np.random.default_rng(0)
    assert sample_transition_probs(dynamic, rng) == (0.7, 0.6)


def test_platform_step_hand_values():
    m = _one_path_model(p_high=0.8, p_low=0.3)
    s = m.initial_state()
    s1 = platform_step(s, m, [Action(1)], ((Observation.HAZARD,),))
    xp = 0.4 / 0.55
    assert s1.expected_latencies[0][0] == pytest.approx(6.0)
    assert s1.expected_latencies[0][1] == pytest.approx((xp * 1.2 + (1 - xp) * 0.2) * 10 + 2)
    assert s1.beliefs[0][0] == pytest.approx(xp * 0.5 + (1 - xp) * 0.5)
    assert s1.slot == 1
    assert isinstance(s1, PlatformState)
