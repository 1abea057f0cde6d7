"""Tabular analysis artifacts: utility curves, optimal policy against M, G or the threshold, and exclusion
probability against the observation error."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from enum import Enum, auto
from logging import getLogger
from typing import Optional, List, Callable, Iterable

import numpy as np

from nodecoop.model import Mechanism, ServiceProfile, Policy, utility_array, feasible_array
from nodecoop.reputation import ObservationModel, exclusion_probability
from nodecoop.solver import SolverConfig, SolveStatus, solve
from nodecoop.utils import FunctionRegistry
from nodecoop.utils.config import ConfigObject, ConfigError, conf_field

LOGGER = getLogger(__name__)


class SweepKind(Enum):
    UTILITY_CURVE = auto()
    POLICY_VS_M = auto()
    POLICY_VS_G = auto()
    POLICY_VS_T_S = auto()
    EXCLUSION_VS_E = auto()

    @property
    def variable(self) -> str:
        """Name of the swept variable, used as the first CSV column."""
        return _SWEPT_VARIABLES[self]


_SWEPT_VARIABLES = {
    SweepKind.UTILITY_CURVE: "x",
    SweepKind.POLICY_VS_M: "m",
    SweepKind.POLICY_VS_G: "g",
    SweepKind.POLICY_VS_T_S: "t_s",
    SweepKind.EXCLUSION_VS_E: "e",
}

_UNIT_INTERVAL_KINDS = frozenset({SweepKind.UTILITY_CURVE, SweepKind.POLICY_VS_T_S, SweepKind.EXCLUSION_VS_E})


class SweepRange(ConfigObject):
    lo: float
    hi: float
    steps: int = conf_field(min=2)

    def validate_self(self):
        super().validate_self()
        if not self.lo < self.hi:
            raise ConfigError("hi", "%s must be greater than lo")

    def values(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.steps)


class CurvePoint(ConfigObject):
    """One row of a sweep.

    ``u`` is the utility for utility curves, ``t_star`` for policy sweeps (``None`` when the node does not
    participate) and the exclusion probability for exclusion sweeps.
    """
    x: float
    u: Optional[float]
    status: Optional[SolveStatus] = None
    feasible: Optional[bool] = None


class SweepSpec(ConfigObject):
    kind: SweepKind
    mech: Mechanism = conf_field(flatten=False)
    base_profile: ServiceProfile
    range: SweepRange
    solver_cfg: SolverConfig = conf_field(default=SolverConfig(), flatten=False)
    # policy of the observed node in exclusion sweeps
    t_x: float = conf_field(default=1.0, min=0, max=1)
    # threshold override for exclusion sweeps; unlike Mechanism.t_s it may be 0
    t_s: Optional[float] = conf_field(default=None, min=0, max=1)
    n_samples: Optional[int] = conf_field(default=None, min=1)
    workers: int = conf_field(default=1, min=1, flatten=False)

    def validate_self(self):
        super().validate_self()
        if self.kind in _UNIT_INTERVAL_KINDS and (self.range.lo < 0 or self.range.hi > 1):
            raise ConfigError("range", "%s must lie within [0, 1] for this sweep kind")
        if self.kind in (SweepKind.POLICY_VS_M, SweepKind.POLICY_VS_G) and self.range.lo <= 0:
            raise ConfigError("range.lo", "%s must be positive for this sweep kind")
        if self.kind == SweepKind.POLICY_VS_M and self.base_profile.s_xn == 0:
            raise ConfigError("base_profile.s_xn", "%s must be positive to sweep M")
        if self.kind == SweepKind.POLICY_VS_T_S:
            if self.mech.threshold is None:
                raise ConfigError("mech", "%s has no threshold to sweep")
            if self.range.lo <= 0:
                raise ConfigError("range.lo", "%s must be positive when sweeping a threshold")
        if self.kind == SweepKind.EXCLUSION_VS_E and self.exclusion_threshold is None:
            raise ConfigError("t_s", "%s is required by exclusion sweeps")

    @property
    def exclusion_threshold(self) -> Optional[float]:
        return self.t_s if self.t_s is not None else self.mech.t_s


def _map_points(spec: SweepSpec, function: Callable[[float], CurvePoint], xs: Iterable[float]) -> List[CurvePoint]:
    xs = [float(x) for x in xs]
    if spec.workers > 1:
        # Executor.map yields in submission order
        with ThreadPoolExecutor(max_workers=spec.workers) as executor:
            return list(executor.map(function, xs))
    return [function(x) for x in xs]


def _solve_point(x: float, mech: Mechanism, profile: ServiceProfile, cfg: SolverConfig) -> CurvePoint:
    result = solve(mech, profile, cfg)
    return CurvePoint(x=x, u=result.t_star, status=result.status)


def _require_kind(spec: SweepSpec, kind: SweepKind):
    if spec.kind != kind:
        raise ConfigError("kind", f"%s must be {kind.name.lower()}, not {spec.kind.name.lower()}")


def utility_curve(spec: SweepSpec) -> List[CurvePoint]:
    _require_kind(spec, SweepKind.UTILITY_CURVE)
    xs = spec.range.values()
    utilities = utility_array(spec.mech, spec.base_profile, xs)
    feasibility = feasible_array(spec.mech, spec.base_profile, xs)
    return [CurvePoint(x=float(x), u=float(u), feasible=bool(ok)) for x, u, ok in zip(xs, utilities, feasibility)]


def policy_vs_m(spec: SweepSpec) -> List[CurvePoint]:
    _require_kind(spec, SweepKind.POLICY_VS_M)
    return _map_points(spec, lambda m: _solve_point(m, spec.mech, spec.base_profile.with_ratio(m), spec.solver_cfg),
                       spec.range.values())


def policy_vs_g(spec: SweepSpec) -> List[CurvePoint]:
    _require_kind(spec, SweepKind.POLICY_VS_G)
    return _map_points(spec, lambda g: _solve_point(g, spec.mech, replace(spec.base_profile, g=g), spec.solver_cfg),
                       spec.range.values())


def policy_vs_threshold(spec: SweepSpec) -> List[CurvePoint]:
    _require_kind(spec, SweepKind.POLICY_VS_T_S)
    return _map_points(spec, lambda t: _solve_point(t, spec.mech.with_threshold(t), spec.base_profile,
                                                    spec.solver_cfg),
                       spec.range.values())


def exclusion_vs_e(spec: SweepSpec) -> List[CurvePoint]:
    _require_kind(spec, SweepKind.EXCLUSION_VS_E)
    n_samples = spec.n_samples or ObservationModel.for_profile(spec.base_profile).n_samples
    policy = Policy(t_x=spec.t_x)
    t_s = spec.exclusion_threshold

    def point(e: float) -> CurvePoint:
        model = ObservationModel(n_samples=n_samples, e=e)
        return CurvePoint(x=e, u=exclusion_probability(policy, t_s, model))

    return _map_points(spec, point, spec.range.values())


SWEEPS: FunctionRegistry[SweepKind, Callable[[SweepSpec], List[CurvePoint]]] = FunctionRegistry()
SWEEPS.register(SweepKind.UTILITY_CURVE)(utility_curve)
SWEEPS.register(SweepKind.POLICY_VS_M)(policy_vs_m)
SWEEPS.register(SweepKind.POLICY_VS_G)(policy_vs_g)
SWEEPS.register(SweepKind.POLICY_VS_T_S)(policy_vs_threshold)
SWEEPS.register(SweepKind.EXCLUSION_VS_E)(exclusion_vs_e)


def run_sweep(spec: SweepSpec) -> List[CurvePoint]:
    LOGGER.info("Running %s sweep over %s in [%g, %g] (%d points)", spec.kind.name.lower(), spec.kind.variable,
                spec.range.lo, spec.range.hi, spec.range.steps)
    return SWEEPS.dispatch(spec.kind)(spec)
