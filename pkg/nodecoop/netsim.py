"""Round-based best-response dynamics of many rational nodes sharing one mechanism.

Each node plays the single-node game against "the rest of the network": its own demand is ``s_xn`` and its share of
the other nodes' traffic, multiplied by the average number of intermediate hops, is ``s_nx``. Nodes best-respond one
at a time in id order, so later nodes in a round already see the choices of earlier ones.

Transit shares are uniform among the active nodes that can carry a flow (every active node except its source), or
proportional to reputation for the reputation-split variants. A node left without active peers has no network to
talk to and withdraws. Opting out is permanent.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from logging import getLogger
from math import inf
from typing import Tuple, List, Optional, Sequence

import numpy as np

from nodecoop.model import (Mechanism, ServiceProfile, Policy, Reputation, REPUTATION_SPLIT, network_policy_array)
from nodecoop.reputation import ObservationModel, observe
from nodecoop.solver import SolverConfig, SolveStatus, solve
from nodecoop.utils.config import ConfigObject, ConfigError, conf_field

LOGGER = getLogger(__name__)

# stands in for a zero transit load, which the single-node game does not allow
IDLE_TRANSIT = sys.float_info.min


class NodeState(ConfigObject):
    id: int = conf_field(min=0)
    demand: float = conf_field(min=0)
    policy: Policy
    reputation: Reputation
    opted_out: bool = False
    cumulative_utility: float = 0.0
    idle: bool = False

    def validate_self(self):
        super().validate_self()
        if self.opted_out and self.policy.t_x != 0:
            raise ConfigError("policy", "%s of an opted-out node must be 0")


class SimConfig(ConfigObject):
    n_nodes: int = conf_field(min=2)
    mech: Mechanism = conf_field(flatten=False)
    demands: Tuple[float, ...]
    g: float = conf_field(gt=0)
    hop_factor: float = conf_field(default=1.0, min=1)
    b: float = conf_field(default=inf, gt=0)
    e: float = conf_field(default=0.0, min=0, max=1)
    rounds: int = conf_field(default=10, min=0)
    seed: int = conf_field(default=0, min=0)
    solver_cfg: SolverConfig = conf_field(default=SolverConfig(), flatten=False)
    initial_policy: float = conf_field(default=1.0, min=0, max=1)
    # observation window per assessment; derived from the node's transit load when absent
    n_samples: Optional[int] = conf_field(default=None, min=1)

    def validate_self(self):
        super().validate_self()
        if len(self.demands) != self.n_nodes:
            raise ConfigError("demands", f"%s must have exactly {self.n_nodes} entries")
        if any(demand < 0 for demand in self.demands):
            raise ConfigError("demands", "%s can't be negative")
        if not any(demand > 0 for demand in self.demands):
            raise ConfigError("demands", "at least one of %s must be positive")


class RoundMetrics(ConfigObject):
    round: int = conf_field(min=0)
    mean_policy: float = conf_field(min=0, max=1)
    opted_out_count: int = conf_field(min=0)
    delivered: float = conf_field(min=0)
    offered: float = conf_field(min=0)

    def validate_self(self):
        super().validate_self()
        # tolerate float summation noise
        if self.delivered > self.offered * (1 + 1e-12):
            raise ConfigError("delivered", "%s can't exceed offered")


class RunResult(ConfigObject):
    metrics: Tuple[RoundMetrics, ...]
    states: Tuple[NodeState, ...]
    converged: bool
    # last round that changed any policy or opt-out flag, 0 if none did
    convergence_round: int = conf_field(min=0)


def initial_states(cfg: SimConfig) -> List[NodeState]:
    return [NodeState(id=index, demand=demand, policy=Policy(t_x=cfg.initial_policy),
                      reputation=Reputation(r_x=cfg.initial_policy))
            for index, demand in enumerate(cfg.demands)]


def _transit_weights(cfg: SimConfig, states: Sequence[NodeState], i: int) -> np.ndarray:
    """Node ``i``'s share of each other node's traffic.

    A flow is split among its carriers, the active nodes other than its source, so every active flow is fully
    carried. Reputation weights are normalised over the same carriers.
    """
    weights = np.zeros(len(states))
    active = [state for state in states if not state.opted_out]
    if all(state.id != i for state in active):
        return weights
    for source in active:
        if source.id == i:
            continue
        carriers = [state for state in active if state.id != source.id]
        if cfg.mech.variant in REPUTATION_SPLIT:
            total = sum(state.reputation.r_x for state in carriers)
            if total > 0:
                weights[source.id] = states[i].reputation.r_x / total
                continue
        weights[source.id] = 1 / len(carriers)
    return weights


def active_peers(states: Sequence[NodeState], i: int) -> int:
    return sum(1 for state in states if not state.opted_out and state.id != i)


def derive_profile(cfg: SimConfig, states: Sequence[NodeState], i: int) -> Tuple[ServiceProfile, bool]:
    """Node ``i``'s view of the game, and whether it is idle (nobody routes traffic through it)."""
    state = states[i]
    weights = _transit_weights(cfg, states, i)
    demands = np.array([other.demand if not other.opted_out else 0.0 for other in states])
    s_nx = cfg.hop_factor * float(np.dot(demands, weights))
    idle = s_nx <= 0
    profile = ServiceProfile(s_xn=0.0 if state.opted_out else state.demand, s_nx=IDLE_TRANSIT if idle else s_nx,
                             g=cfg.g, b=cfg.b, e=cfg.e)
    return profile, idle


def _observation_seed(cfg: SimConfig, round_index: int, node_id: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, round_index, node_id]).generate_state(1)[0])


def _reassess(cfg: SimConfig, states: Sequence[NodeState], state: NodeState, round_index: int) -> Reputation:
    if cfg.e == 0:
        return Reputation(r_x=state.policy.t_x)
    if cfg.n_samples is not None:
        n_samples = cfg.n_samples
    else:
        n_samples = ObservationModel.for_profile(derive_profile(cfg, states, state.id)[0]).n_samples
    model = ObservationModel(n_samples=n_samples, e=cfg.e, seed=_observation_seed(cfg, round_index, state.id))
    return Reputation(r_x=observe(state.policy, model).r_hat)


def _round_metrics(cfg: SimConfig, states: Sequence[NodeState], round_index: int) -> RoundMetrics:
    active = [state for state in states if not state.opted_out]
    offered = sum(state.demand for state in active)
    if active:
        granted = network_policy_array(cfg.mech, np.array([state.reputation.r_x for state in active]))
        delivered = float(np.dot([state.demand for state in active], granted))
    else:
        delivered = 0.0
    return RoundMetrics(round=round_index, mean_policy=float(np.mean([state.policy.t_x for state in states])),
                        opted_out_count=len(states) - len(active), delivered=min(delivered, offered),
                        offered=offered)


def step(cfg: SimConfig, states: Sequence[NodeState], round_index: int = 1) -> Tuple[List[NodeState], RoundMetrics]:
    """Run one round of ordered best responses. ``states`` is not modified."""
    states = list(states)
    for i, state in enumerate(states):
        if state.opted_out:
            continue
        if active_peers(states, i) == 0:
            LOGGER.info("Node %d has no active peers left, withdrawing", state.id)
            states[i] = replace(state, policy=Policy(t_x=0.0), opted_out=True, idle=True)
            continue

        state = replace(state, reputation=_reassess(cfg, states, state, round_index))
        states[i] = state
        profile, idle = derive_profile(cfg, states, i)
        result = solve(cfg.mech, profile, cfg.solver_cfg)
        if result.status == SolveStatus.INTERIOR:
            states[i] = replace(state, policy=Policy(t_x=result.t_star), idle=idle,
                                cumulative_utility=state.cumulative_utility + result.u_star)
        elif result.status == SolveStatus.OPT_OUT:
            LOGGER.info("Node %d opts out in round %d", state.id, round_index)
            states[i] = replace(state, policy=Policy(t_x=0.0), opted_out=True, idle=idle)
        else:
            # can't leave and can't find an acceptable policy: defect entirely
            states[i] = replace(state, policy=Policy(t_x=0.0), idle=idle)

    metrics = _round_metrics(cfg, states, round_index)
    LOGGER.debug("Round %d: %s", round_index, metrics)
    return states, metrics


def _changed(cfg: SimConfig, before: Sequence[NodeState], after: Sequence[NodeState]) -> bool:
    return any(old.opted_out != new.opted_out or abs(old.policy.t_x - new.policy.t_x) > cfg.solver_cfg.grid_step
               for old, new in zip(before, after))


def run(cfg: SimConfig, states: Optional[Sequence[NodeState]] = None) -> RunResult:
    """Step until a fixed point or ``cfg.rounds`` rounds, whichever comes first.

    The round that confirms a fixed point is included in the metrics.
    """
    states = initial_states(cfg) if states is None else list(states)
    metrics = []
    convergence_round = 0
    converged = False
    for round_index in range(1, cfg.rounds + 1):
        new_states, round_metrics = step(cfg, states, round_index)
        metrics.append(round_metrics)
        changed = _changed(cfg, states, new_states)
        states = new_states
        if changed:
            convergence_round = round_index
        else:
            converged = True
            break
    if converged:
        LOGGER.info("Fixed point reached at round %d", convergence_round)
    else:
        LOGGER.info("No fixed point after %d rounds", cfg.rounds)
    return RunResult(metrics=tuple(metrics), states=tuple(states), converged=converged,
                     convergence_round=convergence_round)
