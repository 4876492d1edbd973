"""Dynamic self-triggering: windowed Lyapunov memory and interval selection.

The dynamic variable ``eta`` keeps the last ``m - 1`` Lyapunov values, each
discounted by ``exp(-eps_ref * elapsed)``. At a transmission the engine
averages the current value with that window and picks, over all certified
parameter sets, the longest interval whose decay bound stays below the
discounted average. When nothing beats ``t_min`` (or the average exceeds
``v_max``) it falls back to ``t_min``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Sequence

import numpy as np

from hlstc.lyapunov import ParameterSet

logger = logging.getLogger(__name__)

OUTPUT_FEEDBACK = "output"
STATE_FEEDBACK = "state"


class Fallback(IntEnum):
    """Why an interval was chosen; nonzero values mean ``t_min`` was used."""

    NONE = 0
    NO_CANDIDATE = 1
    GATE = 2


def sort_parameter_sets(sets: Sequence[ParameterSet], delta: float) -> tuple[ParameterSet, ...]:
    """Largest epsilon first, ties broken by the longer admissible interval."""
    return tuple(sorted(sets, key=lambda s: (-s.epsilon, -s.interval_bound(delta))))


@dataclass(frozen=True)
class StcConfig:
    eps_ref: float
    delta: float
    v_max: float
    m: int
    sets: tuple[ParameterSet, ...]
    v_floor: float = 1e-12
    mode: str = OUTPUT_FEEDBACK

    def __post_init__(self):
        if not self.sets:
            raise ValueError("at least one parameter set is required")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not self.v_max > 0:
            raise ValueError(f"v_max must be positive, got {self.v_max}")
        if int(self.m) != self.m or self.m < 2:
            raise ValueError(f"window length m must be an integer >= 2, got {self.m}")
        if not self.v_floor > 0:
            raise ValueError(f"v_floor must be positive, got {self.v_floor}")
        if not self.eps_ref > 0:
            raise ValueError(f"eps_ref must be positive, got {self.eps_ref}")
        if self.mode not in (OUTPUT_FEEDBACK, STATE_FEEDBACK):
            raise ValueError(f"mode must be {OUTPUT_FEEDBACK!r} or {STATE_FEEDBACK!r}, got {self.mode!r}")
        sets = sort_parameter_sets(self.sets, self.delta)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "sets", sets)
        first = sets[0]
        if first.epsilon < self.eps_ref:
            raise ValueError(
                f"the first parameter set needs epsilon >= eps_ref; "
                f"largest epsilon is {first.epsilon} < {self.eps_ref}"
            )
        if first.L + first.epsilon / 2 < 1 - self.delta:
            raise ValueError("L + epsilon/2 < 1 - delta for the first parameter set; t_min would be ambiguous")
        object.__setattr__(self, "_bounds", tuple(s.interval_bound(self.delta) for s in sets))

    @property
    def t_min(self) -> float:
        return self._bounds[0]

    @property
    def interval_bounds(self) -> tuple[float, ...]:
        """``delta * t_max`` for every set, in the sorted order."""
        return self._bounds

    @property
    def n_eta(self) -> int:
        return self.m - 1


def initial_eta(v0: float, cfg: StcConfig, rule: str = "observer_value") -> np.ndarray:
    """Initial window: every entry ``min(v0, v_max)`` or all zeros."""
    if rule == "zeros":
        return np.zeros(cfg.n_eta)
    if rule != "observer_value":
        raise ValueError(f"unknown eta initialisation rule {rule!r}")
    value = v0 if cfg.mode == STATE_FEEDBACK else min(v0, cfg.v_max)
    return np.full(cfg.n_eta, value)


def eta_update(eta: np.ndarray, v_obs: float, interval: float, cfg: StcConfig) -> np.ndarray:
    """Shift the window by one slot and append the discounted new value."""
    eta = np.asarray(eta, dtype=float)
    newest = v_obs if cfg.mode == STATE_FEEDBACK else min(v_obs, cfg.v_max)
    discount = math.exp(-cfg.eps_ref * interval)
    out = np.empty_like(eta)
    out[:-1] = discount * eta[1:]
    out[-1] = discount * newest
    return out


def c_value(v_obs: float, eta: np.ndarray, m: int) -> float:
    return (v_obs + float(np.sum(eta))) / m


def candidate_interval(pset: ParameterSet, c_val: float, v_obs: float, cfg: StcConfig, bound: float | None = None):
    """Longest interval set ``pset`` certifies, or ``None`` if it certifies none.

    ``bound`` is the precomputed ``delta * t_max`` for the set.
    """
    T = pset.interval_bound(cfg.delta) if bound is None else bound
    if v_obs <= cfg.v_floor:
        return T
    eps_i, eps_ref = pset.epsilon, cfg.eps_ref
    if eps_i < eps_ref:
        if c_val < v_obs:
            return None
        h = (math.log(c_val) - math.log(v_obs)) / (eps_ref - eps_i)
        if h <= 0.0:
            return None
        return min(T, h)
    if c_val >= v_obs:
        return T
    if eps_i == eps_ref:
        return None
    needed = math.log(v_obs / c_val) / (eps_i - eps_ref)
    return T if T >= needed else None


@dataclass(frozen=True)
class Decision:
    interval: float
    set_index: int
    fallback: Fallback
    c: float


def next_interval(v_obs: float, eta: np.ndarray, cfg: StcConfig) -> Decision:
    """Pick the next transmission interval.

    The maximum over all candidate intervals and ``t_min`` is returned. If
    the windowed average exceeds ``v_max`` only candidates up to ``t_min``
    survive. ``set_index`` is 0-based into ``cfg.sets``.
    """
    c = c_value(v_obs, eta, cfg.m)
    t_min = cfg.t_min
    gate_closed = c > cfg.v_max
    best, best_index = t_min, 0
    for i, (pset, bound) in enumerate(zip(cfg.sets, cfg.interval_bounds)):
        h = candidate_interval(pset, c, v_obs, cfg, bound)
        if h is None or (gate_closed and h > t_min):
            continue
        if h > best:
            best, best_index = h, i
    if gate_closed:
        reason = Fallback.GATE
    elif best > t_min:
        reason = Fallback.NONE
    else:
        reason = Fallback.NO_CANDIDATE
    return Decision(best, best_index, reason, c)
