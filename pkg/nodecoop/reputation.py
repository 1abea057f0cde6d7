"""How the network turns a node's behaviour into a reputation value.

Observations are modelled as independent service events: each transit request is serviced with probability ``t_x``
and each observation is flipped with probability ``e``. The fine-grained metric is the observed serviced fraction;
the binary metric thresholds it at ``t_s`` (inclusively).
"""

from __future__ import annotations

from enum import Enum, auto
from logging import getLogger
from typing import Optional

import numpy as np
from scipy.stats import binom

from nodecoop.model import Policy, ServiceProfile
from nodecoop.utils.config import ConfigObject, ConfigError, conf_field

LOGGER = getLogger(__name__)


class Metric(Enum):
    FINE_GRAINED = auto()
    BINARY = auto()


class ObservationModel(ConfigObject):
    n_samples: int = conf_field(min=1)
    e: float = conf_field(default=0.0, min=0, max=1)
    seed: int = conf_field(default=0, min=0)

    @classmethod
    def for_profile(cls, profile: ServiceProfile, seed: int = 0) -> ObservationModel:
        """One assessment window sized by the transit load offered to the node."""
        return cls(n_samples=max(1, round(profile.s_nx)), e=profile.e, seed=seed)


class ReputationEstimate(ConfigObject):
    r_hat: float = conf_field(min=0, max=1)
    n_samples: int = conf_field(min=1)
    metric: Metric = Metric.FINE_GRAINED

    def validate_self(self):
        super().validate_self()
        if self.metric == Metric.BINARY and self.r_hat not in (0.0, 1.0):
            raise ConfigError("r_hat", "%s of a binary estimate must be 0 or 1")


def effective_success_probability(t_x: float, e: float) -> float:
    """Probability that one observation reports the request as serviced."""
    return t_x * (1 - e) + (1 - t_x) * e


def observe(t_x: Policy, model: ObservationModel) -> ReputationEstimate:
    """Draw one fine-grained reputation estimate. Deterministic for a given ``model.seed``."""
    rng = np.random.default_rng(model.seed)
    serviced = rng.random(model.n_samples) < t_x.t_x
    flipped = rng.random(model.n_samples) < model.e
    seen_serviced = int(np.count_nonzero(serviced ^ flipped))
    return ReputationEstimate(r_hat=seen_serviced / model.n_samples, n_samples=model.n_samples,
                              metric=Metric.FINE_GRAINED)


def binarize(est: ReputationEstimate, t_s: float) -> ReputationEstimate:
    if est.metric != Metric.FINE_GRAINED:
        raise ConfigError("metric", "%s must be fine-grained to binarize")
    r_hat = 1.0 if est.r_hat >= t_s else 0.0
    return ReputationEstimate(r_hat=r_hat, n_samples=est.n_samples, metric=Metric.BINARY)


def estimate(t_x: Policy, model: ObservationModel, metric: Metric = Metric.FINE_GRAINED,
             t_s: Optional[float] = None) -> ReputationEstimate:
    """Observe and, for the binary metric, threshold at ``t_s``."""
    fine = observe(t_x, model)
    if metric == Metric.FINE_GRAINED:
        return fine
    if t_s is None:
        raise ConfigError("t_s", "%s is required by the binary metric")
    return binarize(fine, t_s)


def exclusion_probability(t_x: Policy, t_s: float, model: ObservationModel) -> float:
    """Exact probability that the binary metric assigns reputation 0 to a node playing ``t_x``.

    A node is excluded when fewer than ``k`` of its ``n`` observations report service, where ``k`` is the smallest
    count with ``k / n >= t_s``; the count is binomial with the flipped success probability.
    """
    n = model.n_samples
    counts = np.arange(n + 1)
    # same float comparison as binarize() so the two always agree
    k_min = int(np.count_nonzero(counts / n < t_s))
    if k_min == 0:
        return 0.0
    p = effective_success_probability(t_x.t_x, model.e)
    return float(min(1.0, binom.cdf(k_min - 1, n, p)))
