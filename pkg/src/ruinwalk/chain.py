"""Markov random walk abstraction: trajectories, first passage, ladder epochs
and renewal-measure estimation.

A :class:`WalkModel` is a pure sampler: given a batch of current states and a
generator, ``step`` returns the next states together with the per-transition
real increments.  Partial sums accumulate with compensated (Kahan) summation
so that very long walks do not drift numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .rng import batches, substream


class WalkModel:
    """Base class for Markov random walk samplers.

    Subclasses implement the batched protocol below.  States are opaque to
    the drivers; the only requirements are that ``step`` is a pure function
    of (states, generator state) and that ``select`` extracts a subset.

    Attributes
    ----------
    drift : float or None
        Exact stationary mean increment, when known.
    increment_sd : float or None
        A scale for one increment, used for truncation margins.
    """

    drift: Optional[float] = None
    increment_sd: Optional[float] = None

    def initial_states(self, n: int, rng: np.random.Generator, init: Any = None):
        raise NotImplementedError

    def step(self, states, rng: np.random.Generator):
        """Advance one step; returns (next_states, increments)."""
        raise NotImplementedError

    def select(self, states, idx):
        """Subset of a state batch (fancy index or boolean mask)."""
        return states[idx]

    def state_list(self, states) -> list:
        """States of a batch as a plain list (for trajectory records)."""
        return list(np.asarray(states))


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    sums: np.ndarray

    def __len__(self) -> int:
        return len(self.sums) - 1


@dataclass(frozen=True)
class FirstPassageRecord:
    crossed: bool
    tau: Optional[int]
    s_tau: Optional[float]
    overshoot: Optional[float]
    x_tau: Any
    s_horizon: Optional[float]
    joint_flag: Optional[bool]
    capped: bool = False


@dataclass(frozen=True)
class LadderSample:
    tau_plus: Optional[int]
    s_ladder: Optional[float]
    x_ladder: Any
    capped: bool = False


@dataclass(frozen=True)
class RenewalEstimate:
    s: float
    h: float
    u_hat: float
    std_error: float
    reps: int
    capped_paths: int = 0


def _scalar_state(model: WalkModel, states):
    return model.state_list(states)[0]


def simulate_path(model: WalkModel, x0, n: int, seed: int) -> Trajectory:
    """Simulate n steps from x0; sums[0] = 0, deterministic given seed."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    rng = substream(seed, 0)
    states = model.initial_states(1, rng, init=x0)
    rec_states = [_scalar_state(model, states)]
    sums = np.empty(n + 1)
    sums[0] = 0.0
    total = 0.0
    comp = 0.0
    for k in range(1, n + 1):
        states, xi = model.step(states, rng)
        y = float(xi[0]) - comp
        t = total + y
        comp = (t - total) - y
        total = t
        sums[k] = total
        rec_states.append(_scalar_state(model, states))
    return Trajectory(states=tuple(rec_states), sums=sums)


def run_first_passage(model: WalkModel, x0, b: float, m: Optional[int],
                      seed: int, c: Optional[float] = None,
                      step_cap: int = 10 ** 8) -> FirstPassageRecord:
    """Run one walk to first passage over b (strict) or the horizon.

    With a horizon ``m``, the event of interest is {tau < m}: crossing exactly
    at step m counts as not crossed.  When ``c`` is given the walk continues
    to step m after crossing so the joint flag (tau < m and S_m < c) can be
    evaluated.  ``m=None`` means unbounded, guarded by ``step_cap``; hitting
    the cap is reported as a distinct capped outcome.
    """
    if b < 0:
        raise ValueError(f"b must be >= 0, got {b}")
    if c is not None and c > b:
        raise ValueError(f"c must be <= b, got c={c}, b={b}")
    if m is not None and m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rng = substream(seed, 0)
    states = model.initial_states(1, rng, init=x0)
    total = 0.0
    comp = 0.0
    tau = None
    s_tau = None
    x_tau = None
    n = 0
    limit = m if m is not None else step_cap
    while n < limit:
        n += 1
        states, xi = model.step(states, rng)
        y = float(xi[0]) - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if tau is None and total > b:
            tau = n
            s_tau = total
            x_tau = _scalar_state(model, states)
            if m is None or c is None:
                break
    if m is None:
        if tau is None:
            return FirstPassageRecord(False, None, None, None,
                                      _scalar_state(model, states),
                                      None, None, capped=True)
        return FirstPassageRecord(True, tau, s_tau, s_tau - b, x_tau, None, None)
    # bounded horizon: walk has run to min(tau, m) or to m when c was given
    crossed = tau is not None and tau < m
    if c is not None:
        while n < m:
            n += 1
            states, xi = model.step(states, rng)
            y = float(xi[0]) - comp
            t = total + y
            comp = (t - total) - y
            total = t
        joint = crossed and total < c
    else:
        joint = None
    if crossed:
        return FirstPassageRecord(True, tau, s_tau, s_tau - b, x_tau,
                                  total if c is not None else None, joint)
    return FirstPassageRecord(False, None, None, None,
                              _scalar_state(model, states),
                              total, joint)


def sample_ladder_epoch(model: WalkModel, x0, seed: int,
                        step_cap: int = 10 ** 8) -> LadderSample:
    """Sample (tau_+, S_{tau_+}, X_{tau_+}): first strictly positive sum.

    The returned state can seed the next call, so chained calls walk the
    ladder Markov chain.  Under zero drift tau_+ has infinite mean; hitting
    ``step_cap`` yields a capped sample that callers must exclude from
    moment estimates.
    """
    rng = substream(seed, 0)
    states = model.initial_states(1, rng, init=x0)
    total = 0.0
    comp = 0.0
    for n in range(1, step_cap + 1):
        states, xi = model.step(states, rng)
        y = float(xi[0]) - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if total > 0.0:
            return LadderSample(n, total, _scalar_state(model, states))
    return LadderSample(None, None, _scalar_state(model, states), capped=True)


def estimate_renewal_measure(model: WalkModel, init, s: float, h: float,
                             state_pred, reps: int, seed: int,
                             step_cap: int = 10 ** 6,
                             margin: Optional[float] = None) -> RenewalEstimate:
    """Estimate the expected number of visits to [s, s+h) x A per path.

    Requires strictly positive declared drift.  A path stops counting once
    its sum exceeds s + h by a no-return margin (default 20 increment
    standard deviations), or at the step cap.  ``state_pred`` maps a state
    batch to a boolean array selecting the target set A.
    """
    if h <= 0:
        raise ValueError(f"h must be > 0, got {h}")
    if model.drift is None or model.drift <= 0:
        raise ValueError("renewal estimation requires declared positive drift")
    if margin is None:
        sd = model.increment_sd if model.increment_sd else 1.0
        margin = 20.0 * sd
    stop_level = s + h + margin

    total_count = 0.0
    total_sq = 0.0
    capped = 0
    for _, n, rng in batches(reps, seed):
        states = model.initial_states(n, rng, init=init)
        sums = np.zeros(n)
        comp = np.zeros(n)
        counts = np.zeros(n)
        # n = 0 visit
        in_window = (sums >= s) & (sums < s + h)
        if in_window.any():
            counts[in_window] += np.asarray(state_pred(states), dtype=float)[in_window]
        # states always corresponds to the active index set
        active = np.arange(n)
        for _step in range(step_cap):
            if active.size == 0:
                break
            states, xi = model.step(states, rng)
            y = xi - comp[active]
            t = sums[active] + y
            comp[active] = (t - sums[active]) - y
            sums[active] = t
            sub_sums = sums[active]
            in_window = (sub_sums >= s) & (sub_sums < s + h)
            if in_window.any():
                pred = np.asarray(state_pred(states), dtype=float)
                counts[active[in_window]] += pred[in_window]
            keep = sub_sums <= stop_level
            if not keep.all():
                active = active[keep]
                states = model.select(states, keep)
        capped += int(active.size)
        total_count += counts.sum()
        total_sq += (counts ** 2).sum()
    mean = total_count / reps
    var = max(total_sq / reps - mean * mean, 0.0)
    se = math.sqrt(var / reps)
    return RenewalEstimate(s=s, h=h, u_hat=mean, std_error=se,
                           reps=reps, capped_paths=capped)
