from math import inf, isclose

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nodecoop.exceptions import UndefinedRatio
from nodecoop.model import (Mechanism, ServiceProfile, Policy, Reputation, Variant, discontinuities, effective_transit,
                            feasible, feasible_array, network_policy, service_ratio, utility, utility_array)
from nodecoop.utils.config import ConfigError

PROFILE = ServiceProfile(s_xn=100, s_nx=200, g=10)

PLAIN = Mechanism(variant=Variant.PLAIN)
REP_SPLIT = Mechanism(variant=Variant.REP_SPLIT)
TFT_FINE = Mechanism(variant=Variant.TFT_FINE)


def u(mech, t, profile=PROFILE):
    return utility(mech, profile, Policy(t_x=t))


def with_thresholds(variant, threshold):
    if variant in (Variant.TFT_BINARY, Variant.TFT_FINE_THRESHOLD):
        return Mechanism(variant=variant, t_s=threshold)
    if variant == Variant.REP_SPLIT_THRESHOLD:
        return Mechanism(variant=variant, t_p=threshold)
    return Mechanism(variant=variant)


def test_profile_coerces_ints():
    assert isinstance(PROFILE.s_xn, float)
    assert PROFILE.b == inf
    assert PROFILE.e == 0.0


@pytest.mark.parametrize("kwargs, field", [
    ({"s_xn": -1, "s_nx": 1, "g": 1}, "s_xn"),
    ({"s_xn": 1, "s_nx": 0, "g": 1}, "s_nx"),
    ({"s_xn": 1, "s_nx": 1, "g": 0}, "g"),
    ({"s_xn": 1, "s_nx": 1, "g": 1, "e": 1.5}, "e"),
    ({"s_xn": 1, "s_nx": 1, "g": 1, "b": 0}, "b"),
    ({"s_xn": float("nan"), "s_nx": 1, "g": 1}, "s_xn"),
])
def test_profile_rejects_out_of_domain(kwargs, field):
    with pytest.raises(ConfigError) as info:
        ServiceProfile(**kwargs)
    assert info.value.field == field


def test_with_ratio():
    assert PROFILE.with_ratio(0.5).s_nx == 50.0
    assert PROFILE.with_ratio(0.5).s_xn == PROFILE.s_xn


def test_service_ratio():
    assert service_ratio(PROFILE) == 2.0
    with pytest.raises(UndefinedRatio) as info:
        service_ratio(ServiceProfile(s_xn=0, s_nx=5, g=2))
    assert info.value.code == "undefined_ratio"


def test_mechanism_requires_its_threshold():
    with pytest.raises(ConfigError) as info:
        Mechanism(variant=Variant.TFT_BINARY)
    assert str(info.value) == "missing t_s"
    with pytest.raises(ConfigError, match="missing t_p"):
        Mechanism(variant=Variant.REP_SPLIT_THRESHOLD)


def test_mechanism_rejects_foreign_threshold():
    with pytest.raises(ConfigError, match="t_p is not used by tft_binary"):
        Mechanism(variant=Variant.TFT_BINARY, t_s=0.5, t_p=0.5)
    with pytest.raises(ConfigError, match="scale_transit_by_reputation"):
        Mechanism(variant=Variant.PLAIN, scale_transit_by_reputation=True)


@pytest.mark.parametrize("t_s", [0.0, 1.5])
def test_mechanism_threshold_domain(t_s):
    with pytest.raises(ConfigError):
        Mechanism(variant=Variant.TFT_BINARY, t_s=t_s)


def test_mechanism_from_dict():
    mech = Mechanism.from_dict({"variant": "TFT_Binary", "t_s": 0.8})
    assert mech.variant == Variant.TFT_BINARY
    assert mech.t_s == 0.8
    with pytest.raises(ConfigError, match="variant must be one of"):
        Mechanism.from_dict({"variant": "nonsense"})
    with pytest.raises(ConfigError, match="unknown key t_q"):
        Mechanism.from_dict({"variant": "plain", "t_q": 1})


def test_with_threshold():
    mech = Mechanism(variant=Variant.REP_SPLIT_THRESHOLD, t_p=0.5)
    assert mech.with_threshold(0.2).t_p == 0.2
    assert discontinuities(mech) == (0.5,)
    assert discontinuities(PLAIN) == ()
    with pytest.raises(ConfigError):
        PLAIN.with_threshold(0.3)


def test_network_policy():
    binary = Mechanism(variant=Variant.TFT_BINARY, t_s=0.7)
    assert network_policy(PLAIN, Reputation(r_x=0.2)) == 1.0
    assert network_policy(TFT_FINE, Reputation(r_x=0.2)) == 0.2
    assert network_policy(binary, Reputation(r_x=0.7)) == 1.0
    assert network_policy(binary, Reputation(r_x=0.6999)) == 0.0


def test_effective_transit():
    rep_threshold = Mechanism(variant=Variant.REP_SPLIT_THRESHOLD, t_p=0.5)
    fine_threshold = Mechanism(variant=Variant.TFT_FINE_THRESHOLD, t_s=0.5)
    assert effective_transit(PLAIN, PROFILE, Reputation(r_x=0.3)) == 200.0
    assert effective_transit(REP_SPLIT, PROFILE, Reputation(r_x=0.3)) == pytest.approx(60.0)
    assert effective_transit(rep_threshold, PROFILE, Reputation(r_x=0.3)) == 0.0
    assert effective_transit(rep_threshold, PROFILE, Reputation(r_x=0.5)) == 100.0
    assert effective_transit(fine_threshold, PROFILE, Reputation(r_x=0.3)) == 0.0
    assert effective_transit(fine_threshold, PROFILE, Reputation(r_x=0.5)) == 200.0


def test_utility_values():
    assert u(PLAIN, 0.5) == pytest.approx(800)
    assert u(REP_SPLIT, 0.5) == pytest.approx(850)
    assert u(Mechanism(variant=Variant.REP_SPLIT_THRESHOLD, t_p=0.5), 0.3) == pytest.approx(900)
    assert u(Mechanism(variant=Variant.REP_SPLIT_THRESHOLD, t_p=0.5), 0.5) == pytest.approx(850)
    assert u(TFT_FINE, 0.5) == pytest.approx(700)
    assert u(Mechanism(variant=Variant.TFT_BINARY, t_s=0.7), 0.7) == pytest.approx(760)
    assert u(Mechanism(variant=Variant.TFT_FINE_THRESHOLD, t_s=2 / 3), 0.5) == pytest.approx(800)
    assert u(Mechanism(variant=Variant.TFT_FINE_THRESHOLD, t_s=2 / 3), 2 / 3) == pytest.approx(2150 / 3)


def test_scaled_transit_reading():
    scaled = Mechanism(variant=Variant.TFT_FINE, scale_transit_by_reputation=True)
    # 1000 - 100 / 0.5 - 0.5 * 0.5 * 200
    assert u(scaled, 0.5) == pytest.approx(750)


def test_unserviced_demand_is_negative_infinity():
    assert u(TFT_FINE, 0.0) == -inf
    assert u(Mechanism(variant=Variant.TFT_BINARY, t_s=0.7), 0.5) == -inf
    # without own demand nothing needs reissuing
    assert u(TFT_FINE, 0.0, ServiceProfile(s_xn=0, s_nx=10, g=2)) == 0.0


def test_feasibility():
    narrow = ServiceProfile(s_xn=100, s_nx=200, g=10, b=400)
    assert feasible(PLAIN, narrow, Policy(t_x=0))
    assert feasible(PLAIN, narrow, Policy(t_x=0.5))
    assert not feasible(PLAIN, narrow, Policy(t_x=1))
    wide = ServiceProfile(s_xn=100, s_nx=200, g=10, b=1000)
    # 200 * 1.5 + 100 + 100 / 0.5
    assert feasible(TFT_FINE, wide, Policy(t_x=0.5))
    assert not feasible(TFT_FINE, wide, Policy(t_x=0))
    assert not feasible(TFT_FINE, ServiceProfile(s_xn=100, s_nx=200, g=10, b=599), Policy(t_x=0.5))
    assert feasible(TFT_FINE, ServiceProfile(s_xn=0, s_nx=200, g=10, b=1000), Policy(t_x=0))


def test_unbounded_bandwidth_is_always_feasible_for_plain():
    ts = np.linspace(0, 1, 11)
    assert feasible_array(PLAIN, PROFILE, ts).all()
    assert feasible_array(TFT_FINE, PROFILE, ts).tolist() == [False] + [True] * 10


def test_policy_domain():
    with pytest.raises(ConfigError):
        Policy(t_x=1.01)
    with pytest.raises(ConfigError):
        Reputation(r_x=-0.1)


profiles = st.builds(ServiceProfile, s_xn=st.floats(0.1, 1e3), s_nx=st.floats(0.01, 1e4), g=st.floats(1.01, 100))


@given(profiles)
def test_plain_and_rep_split_fall_with_policy(profile):
    ts = np.linspace(0, 1, 101)
    for mech in (PLAIN, REP_SPLIT):
        assert (np.diff(utility_array(mech, profile, ts)) < 0).all()


@given(profiles)
def test_tft_fine_is_concave(profile):
    ts = np.linspace(0.01, 1, 100)
    values = utility_array(TFT_FINE, profile, ts)
    second_differences = np.diff(values, 2)
    assert (second_differences <= 1e-9 * np.abs(values).max()).all()


@given(profiles, st.floats(0.05, 1))
def test_threshold_variants_jump_at_threshold(profile, threshold):
    mech = Mechanism(variant=Variant.TFT_FINE_THRESHOLD, t_s=threshold)
    below, at = utility_array(mech, profile, np.array([np.nextafter(threshold, 0), threshold]))
    # crossing t_s adds the whole transit load
    assert isclose(below - at, threshold * profile.s_nx, rel_tol=1e-6, abs_tol=1e-6)


def test_feasibility_boundaries():
    assert feasible(PLAIN, ServiceProfile(s_xn=100, s_nx=200, g=10, b=600), Policy(t_x=1))
    # 100 * 1.5 + 100 + 100 / 0.5 == 450
    assert feasible(TFT_FINE, ServiceProfile(s_xn=100, s_nx=100, g=10, b=450), Policy(t_x=0.5))


@given(profiles, st.floats(0.01, 1), st.floats(0, 10), st.floats(0, 1e3))
def test_tft_fine_monotone_in_value_and_load(profile, t, extra_g, extra_load):
    base = utility(TFT_FINE, profile, Policy(t_x=t))
    richer = ServiceProfile(s_xn=profile.s_xn, s_nx=profile.s_nx, g=profile.g + extra_g)
    busier = ServiceProfile(s_xn=profile.s_xn, s_nx=profile.s_nx + extra_load, g=profile.g)
    assert utility(TFT_FINE, richer, Policy(t_x=t)) >= base
    assert utility(TFT_FINE, busier, Policy(t_x=t)) <= base


@given(profiles, st.sampled_from(list(Variant)), st.floats(0, 1), st.floats(1, 1e5), st.floats(1, 10))
def test_feasibility_monotone_in_bandwidth(profile, variant, t, b, factor):
    mech = with_thresholds(variant, 0.5)
    narrow = ServiceProfile(s_xn=profile.s_xn, s_nx=profile.s_nx, g=profile.g, b=b)
    wide = ServiceProfile(s_xn=profile.s_xn, s_nx=profile.s_nx, g=profile.g, b=b * factor)
    if feasible(mech, narrow, Policy(t_x=t)):
        assert feasible(mech, wide, Policy(t_x=t))
