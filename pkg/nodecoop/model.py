"""The node-vs-network game: domain types, utility and bandwidth feasibility for every mechanism variant.

Everything here assumes the node's reputation equals its policy (``R_X = T_X``); noisy reputation estimates live in
``nodecoop.reputation``. The ``*_array`` functions are the vectorized forms used by the solver and the sweeps, and the
scalar operations delegate to them.
"""

from __future__ import annotations

from dataclasses import replace
from enum import Enum, auto
from math import inf
from typing import Optional, Tuple, NewType

import numpy as np

from nodecoop.exceptions import UndefinedRatio
from nodecoop.utils.config import ConfigObject, ConfigError, ParseableConfigObject, conf_field

Utility = NewType("Utility", float)


class Variant(Enum):
    PLAIN = auto()
    REP_SPLIT = auto()
    REP_SPLIT_THRESHOLD = auto()
    TFT_FINE = auto()
    TFT_BINARY = auto()
    TFT_FINE_THRESHOLD = auto()

    @property
    def token(self) -> str:
        """The lowercase name used in scenario files and CSV headers."""
        return self.name.lower()


TIT_FOR_TAT = frozenset({Variant.TFT_FINE, Variant.TFT_BINARY, Variant.TFT_FINE_THRESHOLD})
REPUTATION_SPLIT = frozenset({Variant.REP_SPLIT, Variant.REP_SPLIT_THRESHOLD})
USES_T_S = frozenset({Variant.TFT_BINARY, Variant.TFT_FINE_THRESHOLD})
USES_T_P = frozenset({Variant.REP_SPLIT_THRESHOLD})


class ServiceProfile(ConfigObject):
    """The exogenous parameters of one node's game against the network.

    ``s_xn`` is the node's own demand and ``s_nx`` the transit load the network asks the node to carry, both in
    service units per period. ``g`` is the value of one serviced unit, ``b`` the bandwidth and ``e`` the observation
    error probability.
    """
    s_xn: float = conf_field(min=0)
    s_nx: float = conf_field(gt=0)
    g: float = conf_field(gt=0)
    b: float = conf_field(default=inf, gt=0)
    e: float = conf_field(default=0.0, min=0, max=1)

    def with_ratio(self, m: float) -> ServiceProfile:
        """Copy of this profile with ``s_nx = m * s_xn``."""
        return replace(self, s_nx=m * self.s_xn)


class Policy(ConfigObject):
    t_x: float = conf_field(min=0, max=1)


class Reputation(ConfigObject):
    r_x: float = conf_field(min=0, max=1)


class Mechanism(ParseableConfigObject):
    """The reputation/reciprocity variant run by the network side, with its thresholds.

    ``t_s`` is required by exactly the variants in ``USES_T_S`` and ``t_p`` by those in ``USES_T_P``.
    ``scale_transit_by_reputation`` switches TFT_FINE to the reading where the network also splits its transit
    requests by reputation.
    """
    variant: Variant
    t_s: Optional[float] = conf_field(default=None, gt=0, max=1)
    t_p: Optional[float] = conf_field(default=None, gt=0, max=1)
    scale_transit_by_reputation: bool = False

    def validate_self(self):
        super().validate_self()
        for name, users in (("t_s", USES_T_S), ("t_p", USES_T_P)):
            present = getattr(self, name) is not None
            if self.variant in users and not present:
                raise ConfigError(name, "missing %s")
            if self.variant not in users and present:
                raise ConfigError(name, f"%s is not used by {self.variant.token}")
        if self.scale_transit_by_reputation and self.variant != Variant.TFT_FINE:
            raise ConfigError("scale_transit_by_reputation", "%s is only supported by tft_fine")

    @property
    def threshold(self) -> Optional[float]:
        """The variant's threshold, whichever one it uses."""
        return self.t_s if self.t_s is not None else self.t_p

    def with_threshold(self, value: float) -> Mechanism:
        if self.variant in USES_T_S:
            return replace(self, t_s=value)
        if self.variant in USES_T_P:
            return replace(self, t_p=value)
        raise ConfigError("variant", f"%s {self.variant.token} has no threshold")


def discontinuities(mech: Mechanism) -> Tuple[float, ...]:
    """Policy values where the variant's utility jumps; utility is smooth between them."""
    threshold = mech.threshold
    return () if threshold is None else (threshold,)


def network_policy_array(mech: Mechanism, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if mech.variant in (Variant.TFT_FINE, Variant.TFT_FINE_THRESHOLD):
        return r.copy()
    if mech.variant == Variant.TFT_BINARY:
        return np.where(r >= mech.t_s, 1.0, 0.0)
    return np.ones_like(r)


def effective_transit_array(mech: Mechanism, profile: ServiceProfile, r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    s_nx = profile.s_nx
    variant = mech.variant
    if variant == Variant.REP_SPLIT or (variant == Variant.TFT_FINE and mech.scale_transit_by_reputation):
        return r * s_nx
    if variant == Variant.REP_SPLIT_THRESHOLD:
        return np.where(r < mech.t_p, 0.0, r * s_nx)
    if variant == Variant.TFT_FINE_THRESHOLD:
        return np.where(r < mech.t_s, 0.0, s_nx)
    return np.full_like(r, s_nx)


def _reissue_load(profile: ServiceProfile, t_n: np.ndarray) -> np.ndarray:
    """``s_xn / T_N``, the node's own requests including reissues; infinite when nothing is granted."""
    granted = t_n > 0
    reissue = np.divide(profile.s_xn, t_n, out=np.zeros_like(t_n), where=granted)
    if profile.s_xn > 0:
        reissue[~granted] = inf
    return reissue


def utility_array(mech: Mechanism, profile: ServiceProfile, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    g, s_xn = profile.g, profile.s_xn
    transit = effective_transit_array(mech, profile, t)
    if mech.variant == Variant.PLAIN or mech.variant in REPUTATION_SPLIT:
        return (g - 1) * s_xn - t * transit
    t_n = network_policy_array(mech, t)
    return g * s_xn - _reissue_load(profile, t_n) - t * transit


def feasible_array(mech: Mechanism, profile: ServiceProfile, t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    transit = effective_transit_array(mech, profile, t)
    load = transit * (1 + t) + profile.s_xn
    if mech.variant not in TIT_FOR_TAT:
        return load <= profile.b
    reissue = _reissue_load(profile, network_policy_array(mech, t))
    return np.isfinite(reissue) & (load + reissue <= profile.b)


def network_policy(mech: Mechanism, r: Reputation) -> float:
    """The proportion ``T_N`` of the node's demand the network grants at reputation ``r``."""
    return float(network_policy_array(mech, np.array([r.r_x]))[0])


def effective_transit(mech: Mechanism, profile: ServiceProfile, r: Reputation) -> float:
    """The transit load actually directed at the node at reputation ``r``."""
    return float(effective_transit_array(mech, profile, np.array([r.r_x]))[0])


def utility(mech: Mechanism, profile: ServiceProfile, pol: Policy) -> Utility:
    """The node's utility at policy ``pol``; negative infinity when its demand is never granted."""
    return Utility(float(utility_array(mech, profile, np.array([pol.t_x]))[0]))


def feasible(mech: Mechanism, profile: ServiceProfile, pol: Policy) -> bool:
    """Whether policy ``pol`` fits the variant's bandwidth constraint."""
    return bool(feasible_array(mech, profile, np.array([pol.t_x]))[0])


def service_ratio(profile: ServiceProfile) -> float:
    if profile.s_xn == 0:
        raise UndefinedRatio()
    return profile.s_nx / profile.s_xn
