"""Finds a rational node's optimal policy: the constrained argmax of its utility over ``T_X`` in [0, 1].

The search evaluates utility on a uniform grid plus each discontinuity point ``d`` of the variant and its left
neighbour ``d - grid_step``, drops infeasible points, optionally polishes the best point with a bounded scalar search
inside its smooth piece, and finally compares the result against opting out of the network (utility 0).
"""

from __future__ import annotations

from enum import Enum, auto
from logging import getLogger
from math import floor, isclose, sqrt
from typing import Optional, Tuple, List

import numpy as np
from scipy.optimize import minimize_scalar

from nodecoop.model import (Mechanism, ServiceProfile, Variant, discontinuities, feasible_array, service_ratio,
                            utility_array)
from nodecoop.utils.config import ConfigObject, ParseableConfigObject, conf_field

LOGGER = getLogger(__name__)

Interval = Tuple[float, float]


class SolveStatus(Enum):
    INTERIOR = auto()
    OPT_OUT = auto()
    INFEASIBLE = auto()

    @property
    def token(self) -> str:
        return self.name.lower()


class SolverConfig(ParseableConfigObject):
    grid_step: float = conf_field(default=1e-4, gt=0, lt=1)
    tie_tolerance: float = conf_field(default=1e-9, gt=0)
    refine: bool = True
    refine_tolerance: float = conf_field(default=1e-10, gt=0)
    # when false, a node that would opt out is reported as INFEASIBLE instead
    allow_opt_out: bool = True


class SolveResult(ConfigObject):
    """The solver's verdict.

    ``t_star`` and ``u_star`` are present iff ``status`` is INTERIOR. ``argmax_set`` holds maximal intervals of
    evaluation points whose utility ties the maximum. ``best_utility`` is the maximum feasible utility seen (``None``
    if no point was feasible), and ``supremum`` marks a ``t_star`` sitting one grid step left of a discontinuity,
    i.e. standing in for the supremum of an open interval.
    """
    status: SolveStatus
    grid_step: float
    t_star: Optional[float] = None
    u_star: Optional[float] = None
    argmax_set: Tuple[Tuple[float, float], ...] = ()
    best_utility: Optional[float] = None
    supremum: bool = False

    def argmax_interval(self) -> Optional[Interval]:
        """The interval of ``argmax_set`` that contains ``t_star``."""
        if self.t_star is None:
            return None
        for lo, hi in self.argmax_set:
            if lo <= self.t_star <= hi:
                return lo, hi
        return None


def _base_grid(step: float) -> np.ndarray:
    intervals = round(1 / step)
    if isclose(intervals * step, 1.0, rel_tol=0, abs_tol=1e-9):
        # k / n is correctly rounded, so grid points hit values like 0.7 exactly
        return np.arange(intervals + 1) / intervals
    return np.append(np.arange(floor(1 / step) + 1) * step, 1.0)


def evaluation_points(mech: Mechanism, step: float) -> Tuple[np.ndarray, List[float]]:
    """The sorted policies the solver evaluates, and the forced left neighbours of discontinuities.

    Grid points strictly between a neighbour ``d - step`` and its discontinuity ``d`` are dropped, so the piece left
    of ``d`` always ends at the neighbour.
    """
    points = _base_grid(step)
    extra = []
    neighbours = []
    for point in discontinuities(mech):
        extra.append(point)
        if point - step >= 0:
            neighbours.append(point - step)
            points = points[(points <= point - step) | (points >= point)]
    points = np.unique(np.concatenate([points, np.array(extra + neighbours, dtype=float)]))
    return points, neighbours


def _piece_bounds(mech: Mechanism, t: float, step: float) -> Interval:
    """The smooth piece around ``t``, kept one grid step clear of the discontinuity on its right."""
    lo, hi = 0.0, 1.0
    for point in discontinuities(mech):
        if t < point:
            hi = min(hi, point - step)
        else:
            lo = max(lo, point)
    return lo, hi


def _refine(mech: Mechanism, profile: ServiceProfile, cfg: SolverConfig, points: np.ndarray, usable: np.ndarray,
            best: int) -> Optional[Tuple[float, float]]:
    """Polish the best grid point with a bounded search between its usable neighbours.

    Returns the refined ``(t, u)`` only if it is feasible and strictly better than the grid point.
    """
    t_best = points[best]
    piece_lo, piece_hi = _piece_bounds(mech, t_best, cfg.grid_step)
    lo = points[best - 1] if best > 0 and usable[best - 1] else t_best
    hi = points[best + 1] if best + 1 < len(points) and usable[best + 1] else t_best
    lo, hi = max(lo, piece_lo), min(hi, piece_hi)
    if not lo < hi:
        return None

    def negative_utility(t):
        return -float(utility_array(mech, profile, np.array([t]))[0])

    result = minimize_scalar(negative_utility, bounds=(lo, hi), method="bounded",
                             options={"xatol": cfg.refine_tolerance})
    t_refined = float(result.x)
    u_refined = -float(result.fun)
    u_best = float(utility_array(mech, profile, np.array([t_best]))[0])
    if not np.isfinite(u_refined) or u_refined <= u_best:
        return None
    if not feasible_array(mech, profile, np.array([t_refined]))[0]:
        return None
    return t_refined, u_refined


def _argmax_set(points: np.ndarray, utilities: np.ndarray, usable: np.ndarray, best_u: float,
                slack: float) -> List[List[float]]:
    """Merge runs of consecutive usable points tying ``best_u`` into maximal intervals."""
    ties = usable & (utilities >= best_u - slack)
    intervals = []
    run_start = None
    for index, tied in enumerate(ties):
        if tied and run_start is None:
            run_start = index
        elif not tied and run_start is not None:
            intervals.append([float(points[run_start]), float(points[index - 1])])
            run_start = None
    if run_start is not None:
        intervals.append([float(points[run_start]), float(points[-1])])
    return intervals


def _no_participation(cfg: SolverConfig, best_utility: Optional[float]) -> SolveResult:
    status = SolveStatus.OPT_OUT if cfg.allow_opt_out else SolveStatus.INFEASIBLE
    return SolveResult(status=status, grid_step=cfg.grid_step, best_utility=best_utility)


def solve(mech: Mechanism, profile: ServiceProfile, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    points, neighbours = evaluation_points(mech, cfg.grid_step)
    utilities = utility_array(mech, profile, points)
    usable = feasible_array(mech, profile, points) & np.isfinite(utilities)

    if not usable.any():
        LOGGER.debug("No feasible policy for %s under %s", profile, mech.variant.token)
        return _no_participation(cfg, None)

    masked = np.where(usable, utilities, -np.inf)
    # argmax returns the first maximum, so exact ties such as a flat piece resolve to the smallest policy
    best = int(np.argmax(masked))
    grid_u = float(masked[best])
    slack = cfg.tie_tolerance * max(1.0, abs(grid_u))
    intervals = _argmax_set(points, masked, usable, grid_u, slack)

    t_star, u_star = float(points[best]), grid_u
    if cfg.refine:
        refined = _refine(mech, profile, cfg, points, usable, best)
        if refined is not None:
            t_star, u_star = refined
            LOGGER.debug("Refined %s from %.12g to %.12g", mech.variant.token, points[best], t_star)

    if u_star < -slack:
        return _no_participation(cfg, max(u_star, grid_u))

    for interval in intervals:
        if interval[0] - cfg.grid_step <= t_star <= interval[1] + cfg.grid_step:
            interval[0] = min(interval[0], t_star)
            interval[1] = max(interval[1], t_star)
            break

    supremum = any(isclose(t_star, neighbour, rel_tol=0, abs_tol=1e-15) for neighbour in neighbours)
    LOGGER.debug("Solved %s: t_star=%.12g u_star=%.12g", mech.variant.token, t_star, u_star)
    # u_star may sit up to the opt-out slack below zero
    return SolveResult(status=SolveStatus.INTERIOR, grid_step=cfg.grid_step, t_star=t_star, u_star=u_star,
                       argmax_set=tuple(tuple(interval) for interval in intervals),
                       best_utility=max(u_star, grid_u), supremum=supremum)


def closed_form_oracle(mech: Mechanism, profile: ServiceProfile) -> Optional[float]:
    """The analytic optimum for variants that have one, or ``None``.

    PLAIN and REP_SPLIT utilities fall strictly with the policy, so their optimum is 0. TFT_FINE (without transit
    scaling) has its stationary point at ``1 / sqrt(M)``, capped at 1, as long as the bandwidth constraint does not
    bind there. Threshold variants and binding constraints have no closed form here.
    """
    if mech.variant in (Variant.PLAIN, Variant.REP_SPLIT):
        return 0.0
    if mech.variant != Variant.TFT_FINE or mech.scale_transit_by_reputation or profile.s_xn == 0:
        return None
    t = min(1.0, 1 / sqrt(service_ratio(profile)))
    if not feasible_array(mech, profile, np.array([t]))[0]:
        return None
    return t
