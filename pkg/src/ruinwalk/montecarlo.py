"""Monte Carlo estimators for first-passage probabilities.

Plain and importance-sampled frequency estimators, a chained ladder-epoch
sampler, an exact dynamic-programming oracle for lattice models, Gaussian
bridge conditional sampling and maximum-tail estimation.

All estimators are replication-parallel: work is split into fixed-size
batches with independent counter-based streams (see :mod:`ruinwalk.rng`),
and per-batch summaries are reduced in batch order, so a fixed master seed
gives bit-identical results for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .chain import WalkModel
from .rng import BATCH_SIZE, batches, substream
from .spectral import FiniteModel, spectral_decomposition, tilt_model
from .laws import Gaussian, lattice_span


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    reps: int
    master_seed: int
    effective_sample_size: Optional[float] = None


@dataclass(frozen=True)
class LadderStats:
    samples_s: np.ndarray
    samples_tau: np.ndarray
    mean_s: float
    mean_s2: float
    mean_s3: float
    se_s: float
    se_s2: float
    se_s3: float
    rho_plus: float
    burn_in: int
    capped_count: int
    reliable: bool

    @property
    def count(self) -> int:
        return int(self.samples_s.size)

    def excess_cdf(self, s: float) -> float:
        from .approx import ladder_excess_cdf
        return ladder_excess_cdf(self.samples_s, s)


# ---------------------------------------------------------------------------
# batch machinery
# ---------------------------------------------------------------------------

def _run_batches(worker: Callable, reps: int, seed: int, workers: int,
                 batch_size: int = BATCH_SIZE) -> list:
    """Run ``worker(batch_reps, rng)`` over all batches; results in batch order."""
    jobs = list(batches(reps, seed, batch_size))
    if workers <= 1 or len(jobs) <= 1:
        return [worker(n, rng) for _, n, rng in jobs]
    out = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = {pool.submit(worker, n, rng): i for i, n, rng in jobs}
        for fut, i in futs.items():
            out[i] = fut.result()
    return out


def _fp_batch(model: WalkModel, init, b: float, m: int, rng, n: int,
              need_terminal: bool = False, run_to_horizon: bool = False):
    """Simulate n paths for m steps; first crossing (strict) of level b.

    Returns a dict of per-path arrays.  Stops early once every path has
    crossed, unless values at the horizon are needed.
    """
    states = model.initial_states(n, rng, init=init)
    x0 = np.asarray(model.state_list(states)) if need_terminal else None
    sums = np.zeros(n)
    comp = np.zeros(n)
    crossed_at = np.full(n, m + 1, dtype=np.int64)
    s_tau = np.zeros(n)
    x_tau = np.zeros(n, dtype=np.int64) if need_terminal else None
    n_open = n
    for k in range(1, m + 1):
        states, xi = model.step(states, rng)
        y = xi - comp
        t = sums + y
        comp = (t - sums) - y
        sums = t
        if n_open:
            newly = (crossed_at > m) & (sums > b)
            if newly.any():
                crossed_at[newly] = k
                s_tau[newly] = sums[newly]
                if need_terminal:
                    x_tau[newly] = np.asarray(model.state_list(states))[newly]
                n_open -= int(newly.sum())
        if n_open == 0 and not (need_terminal or run_to_horizon):
            break
    out = {"crossed_at": crossed_at, "s_tau": s_tau, "s_m": sums}
    if need_terminal:
        out["x0"] = x0
        out["x_tau"] = x_tau
        out["x_m"] = np.asarray(model.state_list(states))
    return out


def _freq_estimate(hits: float, reps: int, seed: int) -> McEstimate:
    p = hits / reps
    se = math.sqrt(max(p * (1.0 - p), 0.0) / reps)
    return McEstimate(value=p, std_error=se, reps=reps, master_seed=seed)


def mc_first_passage(model: WalkModel, init, b: float, m: int,
                     reps: int, seed: int, c: Optional[float] = None,
                     workers: int = 1,
                     batch_size: int = BATCH_SIZE) -> Tuple[McEstimate, Optional[McEstimate]]:
    """Frequency estimates of P{tau < m} and, when c is given,
    P{tau < m, S_m < c}.  Crossing exactly at step m counts as not crossed."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if init == "stationary" and not isinstance(model, FiniteModel):
        raise ValueError("stationary start requires a finite model")
    need_sm = c is not None

    def worker(n, rng):
        res = _fp_batch(model, init, b, m, rng, n, run_to_horizon=need_sm)
        ind1 = (res["crossed_at"] < m).astype(float)
        h1 = float(ind1.sum())
        if need_sm:
            ind2 = ind1 * (res["s_m"] < c)
            return h1, float(ind2.sum())
        return h1, None

    parts = _run_batches(worker, reps, seed, workers, batch_size)
    h1 = sum(p[0] for p in parts)
    est1 = _freq_estimate(h1, reps, seed)
    if need_sm:
        h2 = sum(p[1] for p in parts)
        return est1, _freq_estimate(h2, reps, seed)
    return est1, None


def mc_importance_sampled(model: FiniteModel, alpha: float, b: float, m: int,
                          reps: int, seed: int, c: Optional[float] = None,
                          workers: int = 1,
                          batch_size: int = BATCH_SIZE) -> Tuple[McEstimate, Optional[McEstimate]]:
    """Importance-sampled estimates under the exponential tilt alpha.

    Paths are simulated under the tilted model; each is weighted by the
    likelihood ratio back to the original measure, taken at min(tau, m) for
    the crossing event and at the horizon m for the joint event.  At
    alpha = 0 the weights are exactly 1 and the estimate coincides with the
    plain Monte Carlo value for the same seed.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    dec = spectral_decomposition(model, alpha)
    tilted = tilt_model(model, alpha)
    r, lam_log = dec.r, dec.Lambda
    need_sm = c is not None

    def worker(n, rng):
        res = _fp_batch(tilted, init, b, m, rng, n, need_terminal=True)
        crossed = res["crossed_at"] < m
        tau = res["crossed_at"]
        if alpha == 0.0:
            w_tau = np.ones(n)
            w_m = np.ones(n)
        else:
            w_tau = (r[res["x0"]] / r[res["x_tau"]]
                     * np.exp(-alpha * res["s_tau"] + tau * lam_log))
            w_m = (r[res["x0"]] / r[res["x_m"]]
                   * np.exp(-alpha * res["s_m"] + m * lam_log))
        y1 = np.where(crossed, w_tau, 0.0)
        w_all = np.where(crossed, w_tau, w_m)
        sums = [float(y1.sum()), float((y1 ** 2).sum()),
                float(w_all.sum()), float((w_all ** 2).sum())]
        if need_sm:
            y2 = np.where(crossed & (res["s_m"] < c), w_m, 0.0)
            sums += [float(y2.sum()), float((y2 ** 2).sum())]
        return sums

    # start from the original stationary law: only transitions are tilted,
    # so the likelihood-ratio weights make the estimator exactly unbiased
    init = model.pi
    parts = _run_batches(worker, reps, seed, workers, batch_size)
    agg = [sum(p[i] for p in parts) for i in range(len(parts[0]))]
    ess = agg[2] ** 2 / agg[3] if agg[3] > 0 else 0.0

    def weighted(est_sum, est_sq):
        v = est_sum / reps
        var = max(est_sq / reps - v * v, 0.0)
        return McEstimate(value=v, std_error=math.sqrt(var / reps),
                          reps=reps, master_seed=seed,
                          effective_sample_size=ess)

    est1 = weighted(agg[0], agg[1])
    if need_sm:
        return est1, weighted(agg[4], agg[5])
    return est1, None


# ---------------------------------------------------------------------------
# exact lattice oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DpResult:
    p_tau: float
    p_joint: Optional[float]
    span: float
    b_cell: Tuple[float, float]
    c_cell: Optional[Tuple[float, float]]


def dp_exact_oracle(model: FiniteModel, b: float, m: int,
                    c: Optional[float] = None,
                    memory_cap: int = 10 ** 8) -> DpResult:
    """Exact P{tau < m} and P{tau < m, S_m < c} for lattice models by forward
    recursion over (state, lattice sum), with an absorbing crossed layer that
    keeps tracking the sum for the joint event.

    Barriers are resolved on the lattice with the strict conventions
    S > b and S_m < c; the equivalent half-open barrier cells are reported.
    """
    if not model.is_lattice():
        raise ValueError("dp_exact_oracle requires lattice increment laws")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if c is not None and c > b:
        raise ValueError(f"c must be <= b, got c={c}, b={b}")
    d = model._lattice["span"]
    # enumerate outcomes (i -> j, value index, prob)
    outcomes = []
    kmax = 0
    for i in range(model.K):
        for j in range(model.K):
            if model.P[i, j] <= 0:
                continue
            for v, p in model.law[i][j].lattice_support():
                if p > 0:
                    dv = round(v / d)
                    if abs(dv * d - v) > 1e-9 * max(1.0, abs(v)):
                        raise ValueError(f"law value {v} off the lattice (span {d})")
                    outcomes.append((i, j, dv, model.P[i, j] * p))
                    kmax = max(kmax, abs(dv))
    size = 2 * m * kmax + 1
    if model.K * size * 2 > memory_cap:
        raise MemoryError(
            f"DP table needs {model.K * size * 2} entries, cap {memory_cap}")
    off = m * kmax
    b_thr = math.floor(b / d + 1e-9) + 1          # crossing iff idx >= b_thr
    c_thr = None if c is None else math.ceil(c / d - 1e-9)   # S_m < c iff idx < c_thr

    alive = np.zeros((model.K, size))
    alive[:, off] = model.pi
    crossed = np.zeros((model.K, size))
    p_tau = 0.0
    for step in range(1, m + 1):
        new_alive = np.zeros_like(alive)
        new_crossed = np.zeros_like(crossed)
        for i, j, dv, p in outcomes:
            lo = max(0, -dv)
            hi = size - max(0, dv)
            new_alive[j, lo + dv:hi + dv] += p * alive[i, lo:hi]
            if c is not None:
                new_crossed[j, lo + dv:hi + dv] += p * crossed[i, lo:hi]
        # mass crossing at this step
        cross_idx = b_thr + off
        if step < m and cross_idx < size:
            p_tau += float(new_alive[:, cross_idx:].sum())
            if c is not None:
                new_crossed[:, cross_idx:] += new_alive[:, cross_idx:]
            new_alive[:, cross_idx:] = 0.0
        elif step == m:
            # crossing at the horizon does not count as tau < m
            pass
        alive, crossed = new_alive, new_crossed
    p_joint = None
    if c is not None:
        p_joint = float(crossed[:, :max(c_thr + off, 0)].sum())
    b_cell = ((b_thr - 1) * d, b_thr * d)
    c_cell = None if c is None else ((c_thr - 1) * d, c_thr * d)
    return DpResult(p_tau=p_tau, p_joint=p_joint, span=d,
                    b_cell=b_cell, c_cell=c_cell)


def enumerate_is_identity(model: FiniteModel, alpha: float, b: float, m: int,
                          c: Optional[float] = None) -> Tuple[float, Optional[float]]:
    """Exhaustively sum tilted-path probabilities times likelihood-ratio
    weights; exact counterpart of :func:`mc_importance_sampled` for small
    lattice models."""
    if not model.is_lattice():
        raise ValueError("enumeration requires lattice increment laws")
    dec = spectral_decomposition(model, alpha)
    tilted = tilt_model(model, alpha)
    r, lam_log = dec.r, dec.Lambda
    outs = []
    for i in range(model.K):
        row = []
        for j in range(model.K):
            if tilted.P[i, j] <= 0:
                continue
            for v, p in tilted.law[i][j].lattice_support():
                if p > 0:
                    row.append((j, v, tilted.P[i, j] * p))
        outs.append(row)

    total1 = 0.0
    total2 = 0.0

    def rec(x, s, prob, step, tau, s_tau, x_tau, x0):
        nonlocal total1, total2
        if step == m:
            if tau is not None and tau < m:
                w_tau = r[x0] / r[x_tau] * math.exp(-alpha * s_tau + tau * lam_log)
                total1 += prob * w_tau
                if c is not None and s < c:
                    w_m = r[x0] / r[x] * math.exp(-alpha * s + m * lam_log)
                    total2 += prob * w_m
            return
        for j, v, p in outs[x]:
            s2 = s + v
            if tau is None and s2 > b:
                rec(j, s2, prob * p, step + 1, step + 1, s2, j, x0)
            else:
                rec(j, s2, prob * p, step + 1, tau, s_tau, x_tau, x0)

    for x0 in range(model.K):
        start = model.pi[x0]
        if start > 0:
            rec(x0, 0.0, start, 0, None, None, None, x0)
    return total1, (total2 if c is not None else None)


# ---------------------------------------------------------------------------
# ladder moments
# ---------------------------------------------------------------------------

def mc_ladder_moments(model: WalkModel, count: int, seed: int,
                      burn_in: int = 1000, step_cap: int = 10 ** 8,
                      chains: int = 64, init=None,
                      max_capped_frac: float = 0.01) -> LadderStats:
    """Chained ladder-epoch sampling: ``chains`` parallel ladder chains each
    discard ``burn_in`` epochs and then contribute kept epochs until ``count``
    samples are collected.  Epochs hitting ``step_cap`` are counted but
    excluded from the moments; a capped fraction above ``max_capped_frac``
    flags the estimate unreliable.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if burn_in < 0:
        raise ValueError(f"burn_in must be >= 0, got {burn_in}")
    chains = min(chains, count)
    per_chain = -(-count // chains)
    rng = substream(seed, 0)
    if init is None and isinstance(model, FiniteModel):
        init = "stationary"
    states = model.initial_states(chains, rng, init=init)
    sums = np.zeros(chains)
    comp = np.zeros(chains)
    steps = np.zeros(chains, dtype=np.int64)
    epochs = np.zeros(chains, dtype=np.int64)
    kept_s = [[] for _ in range(chains)]
    kept_tau = [[] for _ in range(chains)]
    capped = 0
    active = np.arange(chains)
    while active.size:
        states, xi = model.step(states, rng)
        y = xi - comp[active]
        t = sums[active] + y
        comp[active] = (t - sums[active]) - y
        sums[active] = t
        steps[active] += 1
        done = sums[active] > 0.0
        hit_cap = (~done) & (steps[active] >= step_cap)
        finish = done | hit_cap
        if finish.any():
            idx = active[finish]
            for ci, s_val, tau_val, was_capped in zip(
                    idx, sums[idx], steps[idx], hit_cap[finish]):
                epochs[ci] += 1
                if was_capped:
                    capped += 1
                elif epochs[ci] > burn_in:
                    kept_s[ci].append(float(s_val))
                    kept_tau[ci].append(int(tau_val))
            sums[idx] = 0.0
            comp[idx] = 0.0
            steps[idx] = 0
            # a chain retires once it has its per-chain quota of kept epochs
            still = np.array([len(kept_s[ci]) < per_chain for ci in active])
            if not still.all():
                active = active[still]
                states = model.select(states, still)

    s = np.concatenate([np.asarray(k) for k in kept_s])[:count]
    tau = np.concatenate([np.asarray(k, dtype=np.int64) for k in kept_tau])[:count]
    n = s.size
    m1, m2, m3 = s.mean(), (s ** 2).mean(), (s ** 3).mean()
    se = lambda arr: float(arr.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    total_epochs = capped + sum(len(k) for k in kept_s) + burn_in * chains
    reliable = capped <= max_capped_frac * max(total_epochs, 1)
    return LadderStats(samples_s=s, samples_tau=tau,
                       mean_s=float(m1), mean_s2=float(m2), mean_s3=float(m3),
                       se_s=se(s), se_s2=se(s ** 2), se_s3=se(s ** 3),
                       rho_plus=float(m2 / (2.0 * m1)),
                       burn_in=burn_in, capped_count=capped, reliable=reliable)


def estimate_r_factor(model: FiniteModel, alpha0: float, alpha1: float,
                      j: int, count: int, seed: int,
                      step_cap: int = 10 ** 4) -> McEstimate:
    """Eigenfunction-ratio expectation entering the drift-corrected joint
    formula for multi-state models.

    Under the tilt alpha_j (stationary start), one ladder epoch is sampled
    per replication and the mean of
    r(X_tau; a_j) r(X_0; a_other) / (r(X_0; a_j) r(X_tau; a_other))
    is returned; identically 1 for single-state walks.  Epochs hitting the
    step cap are dropped; ``effective_sample_size`` reports the kept count.
    """
    if j not in (0, 1):
        raise ValueError(f"j must be 0 or 1, got {j}")
    a_j = alpha1 if j == 1 else alpha0
    a_o = alpha0 if j == 1 else alpha1
    r_j = spectral_decomposition(model, a_j).r
    r_o = spectral_decomposition(model, a_o).r
    tilted = tilt_model(model, a_j)
    rng = substream(seed, 0)
    states = tilted.initial_states(count, rng, init="stationary")
    x0 = np.asarray(states)
    sums = np.zeros(count)
    ratios = np.zeros(count)
    done = np.zeros(count, dtype=bool)
    active = np.arange(count)
    for _ in range(step_cap):
        if active.size == 0:
            break
        states, xi = tilted.step(states, rng)
        sums[active] += xi
        fin = sums[active] > 0.0
        if fin.any():
            idx = active[fin]
            x_tau = np.asarray(states)[fin]
            ratios[idx] = (r_j[x_tau] * r_o[x0[idx]]
                           / (r_j[x0[idx]] * r_o[x_tau]))
            done[idx] = True
            active = active[~fin]
            states = tilted.select(states, ~fin)
    kept = ratios[done]
    if kept.size == 0:
        raise RuntimeError("no ladder epochs completed within the step cap")
    se = float(kept.std(ddof=1) / math.sqrt(kept.size)) if kept.size > 1 else 0.0
    return McEstimate(value=float(kept.mean()), std_error=se, reps=count,
                      master_seed=seed, effective_sample_size=float(kept.size))


# ---------------------------------------------------------------------------
# overshoot
# ---------------------------------------------------------------------------

def mc_overshoot(model: WalkModel, init, b: float, reps: int, seed: int,
                 step_cap: int = 10 ** 6, workers: int = 1,
                 batch_size: int = BATCH_SIZE) -> McEstimate:
    """Mean overshoot over level b for positive-drift walks."""
    if model.drift is None or model.drift <= 0:
        raise ValueError("mc_overshoot requires declared positive drift")

    def worker(n, rng):
        states = model.initial_states(n, rng, init=init)
        sums = np.zeros(n)
        comp = np.zeros(n)
        over = np.zeros(n)
        active = np.arange(n)
        for _ in range(step_cap):
            if active.size == 0:
                break
            states, xi = model.step(states, rng)
            y = xi - comp[active]
            t = sums[active] + y
            comp[active] = (t - sums[active]) - y
            sums[active] = t
            done = sums[active] > b
            if done.any():
                over[active[done]] = sums[active[done]] - b
                active = active[~done]
                states = model.select(states, ~done)
        return float(over.sum()), float((over ** 2).sum()), int(active.size)

    parts = _run_batches(worker, reps, seed, workers, batch_size)
    tot = sum(p[0] for p in parts)
    tot2 = sum(p[1] for p in parts)
    unresolved = sum(p[2] for p in parts)
    if unresolved:
        raise RuntimeError(f"{unresolved} paths failed to cross within the cap")
    mean = tot / reps
    var = max(tot2 / reps - mean * mean, 0.0)
    return McEstimate(value=mean, std_error=math.sqrt(var / reps),
                      reps=reps, master_seed=seed)


# ---------------------------------------------------------------------------
# Gaussian bridge
# ---------------------------------------------------------------------------

def mc_bridge_conditional(model: FiniteModel, b: float, s: float, m: int,
                          reps: int, seed: int, workers: int = 1,
                          batch_size: int = BATCH_SIZE) -> McEstimate:
    """P{tau < m | S_m = s} for a single-state Gaussian walk, by exact
    sequential sampling of the Gaussian bridge."""
    if not (isinstance(model, FiniteModel) and model.K == 1
            and isinstance(model.law[0][0], Gaussian)):
        raise ValueError("bridge sampling requires a 1-state Gaussian model")
    if s >= b:
        raise ValueError(f"requires s < b, got s={s}, b={b}")
    sd = model.law[0][0].sd

    def worker(n, rng):
        sums = np.zeros(n)
        crossed = np.zeros(n, dtype=bool)
        for k in range(1, m):
            remain = m - k + 1
            mean = (s - sums) / remain
            scale = sd * math.sqrt((remain - 1) / remain)
            sums = sums + mean + scale * rng.standard_normal(n)
            crossed |= sums > b
        return float(crossed.sum())

    parts = _run_batches(worker, reps, seed, workers, batch_size)
    return _freq_estimate(sum(parts), reps, seed)


# ---------------------------------------------------------------------------
# maximum tail
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TailCurve:
    levels: np.ndarray            # the B grid
    probabilities: np.ndarray
    std_errors: np.ndarray
    slope: float                  # least-squares slope of log p vs log B


def mc_max_tail(model: WalkModel, levels: Sequence[float], reps: int, seed: int,
                margin: Optional[float] = None, step_cap: int = 10 ** 6,
                workers: int = 1, batch_size: int = BATCH_SIZE) -> TailCurve:
    """P{max_n S_n > log B} over a grid of B, for negative-drift walks.

    A path is abandoned once its sum falls a no-return margin below the
    target level (default 20/|drift|).
    """
    if model.drift is None or model.drift >= 0:
        raise ValueError("mc_max_tail requires declared negative drift")
    if margin is None:
        margin = 20.0 / abs(model.drift)
    levels = np.asarray(levels, dtype=float)
    if (levels <= 0).any():
        raise ValueError("levels B must be positive")
    probs = np.empty(levels.size)
    ses = np.empty(levels.size)
    for li, B in enumerate(levels):
        L = math.log(B)

        def worker(n, rng, L=L):
            states = model.initial_states(n, rng, init=None)
            sums = np.zeros(n)
            comp = np.zeros(n)
            hit = np.zeros(n, dtype=bool)
            active = np.arange(n)
            for _ in range(step_cap):
                if active.size == 0:
                    break
                states, xi = model.step(states, rng)
                y = xi - comp[active]
                t = sums[active] + y
                comp[active] = (t - sums[active]) - y
                sums[active] = t
                sub = sums[active]
                crossed = sub > L
                lost = sub < L - margin
                if crossed.any():
                    hit[active[crossed]] = True
                done = crossed | lost
                if done.any():
                    active = active[~done]
                    states = model.select(states, ~done)
            return float(hit.sum())

        parts = _run_batches(worker, reps, seed + li, workers, batch_size)
        est = _freq_estimate(sum(parts), reps, seed + li)
        probs[li] = est.value
        ses[li] = est.std_error
    ok = probs > 0
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.log(levels[ok]), np.log(probs[ok]), 1)[0])
    else:
        slope = math.nan
    return TailCurve(levels=levels, probabilities=probs, std_errors=ses,
                     slope=slope)
