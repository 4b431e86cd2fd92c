"""Logit route-choice probabilities and equivalent-impedance virtual costs.

All three functions work on short Python sequences (the alternatives at one
merge point), so they are written with :mod:`math` rather than numpy.
``gamma`` is the (negative) dispersion parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ChoiceParams:
    """Route-choice parameters.

    gamma : dispersion, must be negative. Dimensionless for the scaled logit,
        where costs are divided by the cheapest alternative.
    beta : total probability mass handed to links left out of the acyclic
        subnetwork at each node, before renormalizing.
    """

    gamma: float = -5.0
    beta: float = 0.1

    def __post_init__(self):
        if not self.gamma < 0:
            raise ValueError(f"gamma must be negative, got {self.gamma}")
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")


def _check(costs: Sequence[float], gamma: float) -> None:
    if len(costs) == 0:
        raise ValueError("need at least one alternative")
    if not gamma < 0:
        raise ValueError(f"gamma must be negative, got {gamma}")


def _softmax(z: Sequence[float]) -> list[float]:
    zmax = max(z)
    w = [math.exp(v - zmax) for v in z]
    s = math.fsum(w)
    return [v / s for v in w]


def mnl_probabilities(costs: Sequence[float], gamma: float) -> list[float]:
    """Plain multinomial logit: ``exp(gamma * c) / sum(exp(gamma * c))``."""
    _check(costs, gamma)
    return _softmax([gamma * c for c in costs])


def scaled_logit_probabilities(costs: Sequence[float], pi: float, gamma: float) -> list[float]:
    """Logit with costs divided by ``pi``, the cheapest alternative's cost.

    Invariant under a common rescaling of ``costs`` and ``pi``.
    """
    _check(costs, gamma)
    if not pi > 0:
        raise ValueError(f"pi must be positive, got {pi}")
    if len(costs) == 1:
        return [1.0]
    return _softmax([gamma * c / pi for c in costs])


def virtual_travel_cost(costs: Sequence[float], pi: float, gamma: float) -> float:
    """Cost of the single virtual link that replaces parallel alternatives.

    ``(pi / gamma) * log(sum(exp(gamma * c / pi)))``, evaluated with a max
    shift. For negative gamma this is a soft minimum: never above ``min(costs)``,
    and exactly the cost itself for one alternative.
    """
    _check(costs, gamma)
    if not pi > 0:
        raise ValueError(f"pi must be positive, got {pi}")
    if len(costs) == 1:
        return float(costs[0])
    z = [gamma * c / pi for c in costs]
    zmax = max(z)
    return (pi / gamma) * (zmax + math.log(math.fsum(math.exp(v - zmax) for v in z)))


def logit_and_virtual_cost(costs: Sequence[float], gamma: float) -> tuple[list[float], float]:
    """Both quantities at once with ``pi = min(costs)``; used in the contraction loops."""
    if len(costs) == 1:
        return [1.0], float(costs[0])
    pi = min(costs)
    if not pi > 0:
        raise ValueError(f"alternative costs must be positive, got minimum {pi}")
    z = [gamma * c / pi for c in costs]
    zmax = max(z)  # == gamma, the cheapest alternative
    w = [math.exp(v - zmax) for v in z]
    s = math.fsum(w)
    return [v / s for v in w], (pi / gamma) * (zmax + math.log(s))
