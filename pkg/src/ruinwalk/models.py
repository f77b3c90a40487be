"""Application models: random-coefficient autoregression with its sequential
procedures, and products of random matrices with first passage and Lyapunov
exponent estimation.  Also convenience builders for i.i.d. and modulated
walks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import kstest

from .chain import Trajectory, WalkModel
from .laws import Gaussian, Law, PointMass, law_mean, law_variance
from .montecarlo import McEstimate, _freq_estimate, _run_batches, mc_ladder_moments
from .rng import BATCH_SIZE, substream
from .spectral import FiniteModel


def iid_model(law: Law) -> FiniteModel:
    """Single-state walk with i.i.d. increments from ``law``."""
    return FiniteModel(np.array([[1.0]]), [[law]])


def modulated_model(P, laws) -> FiniteModel:
    """Finite-state modulated walk; laws[i][j] is the law on transition i->j."""
    return FiniteModel(np.asarray(P, dtype=float), laws)


# ---------------------------------------------------------------------------
# random-coefficient AR(1)
# ---------------------------------------------------------------------------

class RcaModel(WalkModel):
    """X_n = beta_n X_{n-1} + eps_n with random beta_n (mean beta, sd sigma)
    and unit-variance noise; the walk increment is X_n^2 / (1 + sigma^2 X_n^2),
    bounded by 1/sigma^2 when sigma > 0.

    Stability requires beta^2 + sigma^2 < 1.
    """

    def __init__(self, beta: float, sigma: float, beta_law: Law, noise_law: Law):
        if beta ** 2 + sigma ** 2 >= 1.0:
            raise ValueError(
                f"unstable parameters: beta^2 + sigma^2 = {beta ** 2 + sigma ** 2:g} >= 1")
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        if abs(law_mean(beta_law) - beta) > 1e-12 or \
                abs(law_variance(beta_law) - sigma ** 2) > 1e-12:
            raise ValueError("beta_law moments do not match (beta, sigma)")
        if abs(law_mean(noise_law)) > 1e-12 or abs(law_variance(noise_law) - 1.0) > 1e-12:
            raise ValueError("noise law must have mean 0 and variance 1")
        self.beta = beta
        self.sigma = sigma
        self.beta_law = beta_law
        self.noise_law = noise_law
        if sigma == 0.0:
            # stationary E X^2 = 1 / (1 - beta^2); the increment is X^2
            self.drift = 1.0 / (1.0 - beta ** 2)
            self.increment_sd = math.sqrt(max(
                3.0 / (1.0 - beta ** 2) ** 2 - self.drift ** 2, 0.0)) or 1.0
        else:
            self.drift = None
            self.increment_sd = 1.0 / max(self.sigma ** 2, 1.0)

    def initial_states(self, n: int, rng: np.random.Generator, init=None):
        if init is None:
            return np.zeros(n)
        return np.full(n, float(init))

    def step(self, states, rng: np.random.Generator):
        b = self.beta_law.sample(states.shape[0], rng)
        e = self.noise_law.sample(states.shape[0], rng)
        x = b * states + e
        xi = x * x / (1.0 + self.sigma ** 2 * x * x)
        if self.sigma > 0:
            assert (xi < 1.0 / self.sigma ** 2).all()
        return x, xi


def build_rca(beta: float, sigma: float, laws: Optional[dict] = None) -> RcaModel:
    """RCA walk model; ``laws`` may override the Gaussian defaults with keys
    'beta' and 'noise'."""
    laws = laws or {}
    beta_law = laws.get("beta")
    if beta_law is None:
        beta_law = PointMass(beta) if sigma == 0.0 else Gaussian(beta, sigma)
    noise_law = laws.get("noise", Gaussian(0.0, 1.0))
    return RcaModel(beta, sigma, beta_law, noise_law)


@dataclass(frozen=True)
class RcaFixedAccuracyResult:
    mean_t: float
    se_t: float
    standardized: np.ndarray        # (b_hat - beta) * sqrt(c) per replication
    ks_distance: float
    reps: int
    capped: int


def rca_fixed_accuracy(model: RcaModel, c: float, reps: int, seed: int,
                       step_cap: int = 10 ** 6, workers: int = 1,
                       batch_size: int = BATCH_SIZE) -> RcaFixedAccuracyResult:
    """Fixed-accuracy sequential estimation: run each path until the weighted
    sum of squares reaches c, record the stopping time and the sequential
    least-squares estimate of beta, standardized by sqrt(c)."""
    if c <= 0:
        raise ValueError(f"c must be > 0, got {c}")
    s2 = model.sigma ** 2

    def worker(n, rng):
        x = model.initial_states(n, rng)
        ssum = np.zeros(n)      # stopping-rule sum
        num = np.zeros(n)       # sum X_{k-1} X_k / (1 + sigma^2 X_{k-1}^2)
        den = np.zeros(n)       # sum X_k^2     / (1 + sigma^2 X_{k-1}^2)
        t_out = np.zeros(n, dtype=np.int64)
        b_out = np.zeros(n)
        active = np.arange(n)
        for step in range(1, step_cap + 1):
            if active.size == 0:
                break
            x_new, xi = model.step(x, rng)
            w = 1.0 + s2 * x * x
            num[active] += x * x_new / w
            den[active] += x_new * x_new / w
            ssum[active] += xi
            done = ssum[active] >= c
            if done.any():
                idx = active[done]
                t_out[idx] = step
                b_out[idx] = num[idx] / den[idx]
                active = active[~done]
                x_new = x_new[~done]
            x = x_new
        return t_out, b_out, int(active.size)

    parts = _run_batches(worker, reps, seed, workers, batch_size)
    t_all = np.concatenate([p[0] for p in parts])
    b_all = np.concatenate([p[1] for p in parts])
    capped = sum(p[2] for p in parts)
    ok = t_all > 0
    t = t_all[ok].astype(float)
    std = (b_all[ok] - model.beta) * math.sqrt(c)
    loc, scale = std.mean(), std.std(ddof=1)
    if scale > 0:
        ks = float(kstest(std, "norm", args=(loc, scale)).statistic)
    else:
        ks = 0.0     # degenerate sample; nothing to compare against

    return RcaFixedAccuracyResult(
        mean_t=float(t.mean()),
        se_t=float(t.std(ddof=1) / math.sqrt(t.size)),
        standardized=std, ks_distance=ks, reps=reps, capped=capped)


@dataclass(frozen=True)
class RcaTestSpec:
    mu0: float
    mu1: float
    lambda_threshold: float
    m: int
    sign_convention: str = "as_printed"   # or "negated"

    def __post_init__(self):
        # mu1 == mu0 is admitted as the degenerate boundary (Z identically 0)
        if self.mu1 < self.mu0:
            raise ValueError(f"requires mu1 >= mu0, got {self.mu0}, {self.mu1}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if self.sign_convention not in ("as_printed", "negated"):
            raise ValueError(f"unknown sign convention {self.sign_convention!r}")


@dataclass(frozen=True)
class RcaTestResult:
    probability: float
    std_error: float
    approx_value: float
    reps: int


class _ZIncrementWalk(WalkModel):
    """The truncated-test statistic as a walk: increments are the per-step
    terms of half the squared-residual difference, optionally recentered."""

    def __init__(self, model: RcaModel, spec: RcaTestSpec, shift: float = 0.0):
        self.model = model
        self.spec = spec
        self.shift = shift
        self.increment_sd = 1.0

    def initial_states(self, n, rng, init=None):
        return self.model.initial_states(n, rng, init)

    def step(self, states, rng):
        x_new, _ = self.model.step(states, rng)
        mu0, mu1 = self.spec.mu0, self.spec.mu1
        z = 0.5 * ((x_new - mu1 * states) ** 2 - (x_new - mu0 * states) ** 2)
        if self.spec.sign_convention == "negated":
            z = -z
        return x_new, z - self.shift


def _z_walk_summary(walk: _ZIncrementWalk, seed: int,
                    n_steps: int = 200_000, n_batches: int = 100):
    """Long-run mean, standard deviation and standardized third cumulant of
    the Z increments, by batch means on one long path."""
    rng = substream(seed, 0)
    x = walk.initial_states(1, rng)
    incs = np.empty(n_steps)
    for k in range(n_steps):
        x, z = walk.step(x, rng)
        incs[k] = z[0]
    mu = float(incs.mean())
    bm = incs.reshape(n_batches, -1).mean(axis=1)
    lr_var = float(bm.var(ddof=1) * (n_steps / n_batches))
    sd = math.sqrt(max(lr_var, 1e-300))
    kappa = float(((incs - mu) ** 3).mean() / sd ** 3)
    return mu, sd, kappa


def rca_truncated_test(model: RcaModel, spec: RcaTestSpec, reps: int, seed: int,
                       workers: int = 1, batch_size: int = BATCH_SIZE,
                       ladder_count: int = 20_000) -> RcaTestResult:
    """MC frequency of rejecting within the horizon, P{T_lambda <= m}, with a
    drift-corrected closed-form companion value.

    The companion splits the event at the horizon,
    P{T <= m} ~ P{Z_m >= lambda} + P{T < m, Z_m < lambda}, evaluating the
    first term by an Edgeworth tail and the second by the drift-corrected
    joint formula, both fed with simulation-estimated walk constants.
    """
    lam, m = spec.lambda_threshold, spec.m
    if spec.mu1 == spec.mu0:
        p = 1.0 if lam <= 0 else 0.0
        return RcaTestResult(probability=p, std_error=0.0, approx_value=p,
                             reps=reps)
    walk = _ZIncrementWalk(model, spec)

    def worker(n, rng):
        x = walk.initial_states(n, rng)
        z = np.zeros(n)
        hit = np.zeros(n, dtype=bool)
        for _ in range(m):
            x, dz = walk.step(x, rng)
            z += dz
            hit |= z >= lam
        return float(hit.sum())

    parts = _run_batches(worker, reps, seed, workers, batch_size)
    est = _freq_estimate(sum(parts), reps, seed)
    approx = _truncated_test_approx(model, spec, seed, ladder_count)
    return RcaTestResult(probability=est.value, std_error=est.std_error,
                         approx_value=approx, reps=reps)


def _truncated_test_approx(model: RcaModel, spec: RcaTestSpec, seed: int,
                           ladder_count: int) -> float:
    from .approx import CorrectedParams, corrected_joint_approx, edgeworth_cdf

    lam, m = spec.lambda_threshold, spec.m
    if spec.mu1 == spec.mu0:
        return 0.0 if lam > 0 else 1.0
    walk = _ZIncrementWalk(model, spec)
    mu, sd, kappa = _z_walk_summary(walk, seed + 101)
    if sd <= 1e-12:
        return 0.0 if lam > 0 else 1.0
    # standardized barrier and horizon
    b = lam / sd
    # tail at the horizon via the Edgeworth-corrected normal
    s_std = (lam - m * mu) / (sd * math.sqrt(m))
    tail = 1.0 - edgeworth_cdf(s_std, m, kappa)
    # drift-corrected joint term with simulation-estimated ladder constants
    centered = _ZIncrementWalk(model, spec, shift=mu)
    stats = mc_ladder_moments(centered, count=ladder_count, seed=seed + 202,
                              burn_in=200, step_cap=10 ** 4, chains=64)
    rho = stats.rho_plus / sd
    delta = 2.0 * abs(mu) / sd
    j = 1 if mu > 0 else 0
    params = CorrectedParams(b=b, c=b, m=float(m), delta_gap=delta,
                             rho_plus=rho, kappa=kappa, j=j)
    joint = corrected_joint_approx(params)
    return min(max(tail + joint, 0.0), 1.0)


# ---------------------------------------------------------------------------
# products of random matrices
# ---------------------------------------------------------------------------

class FixedListSampler:
    """Draws from a fixed list of matrices with given probabilities."""

    def __init__(self, matrices: Sequence[np.ndarray],
                 probs: Optional[Sequence[float]] = None):
        self.matrices = np.asarray(matrices, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ValueError("matrices must be a list of square matrices")
        n = self.matrices.shape[0]
        self.probs = (np.full(n, 1.0 / n) if probs is None
                      else np.asarray(probs, dtype=float))
        if abs(self.probs.sum() - 1.0) > 1e-12 or (self.probs < 0).any():
            raise ValueError("probs must be a probability vector")
        self.k = self.matrices.shape[1]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.probs.size, size=n, p=self.probs)
        return self.matrices[idx]


class GaussianEnsembleSampler:
    """Matrices with i.i.d. Gaussian entries, mean plus scale * N(0,1)."""

    def __init__(self, k: int, scale: float = 1.0,
                 mean: Optional[np.ndarray] = None):
        self.k = k
        self.scale = scale
        self.mean = np.zeros((k, k)) if mean is None else np.asarray(mean, dtype=float)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.scale * rng.standard_normal((n, self.k, self.k))


class RotationScalingSampler:
    """2x2 random rotation (uniform angle) composed with a fixed diagonal."""

    def __init__(self, diag: Sequence[float]):
        d = np.asarray(diag, dtype=float)
        if d.shape != (2,):
            raise ValueError("diag must have length 2")
        self.diag = d
        self.k = 2

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        th = rng.uniform(0.0, 2.0 * math.pi, size=n)
        c, s = np.cos(th), np.sin(th)
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = c * self.diag[0]
        out[:, 0, 1] = -s * self.diag[1]
        out[:, 1, 0] = s * self.diag[0]
        out[:, 1, 1] = c * self.diag[1]
        return out


class MatrixProductModel(WalkModel):
    """Walk of log norm growth along a product of random matrices.

    The state is the current direction (a unit vector); each step draws a
    matrix M, maps u to M u, and the increment is log |M u|.  The product
    itself is never formed, so there is no overflow.  Singular draws follow
    ``singular_policy``: "resample" retries (up to 100 times) and "fail"
    raises.
    """

    def __init__(self, sampler, u0: Optional[np.ndarray] = None,
                 singular_policy: str = "fail", det_tol: float = 1e-12):
        if singular_policy not in ("resample", "fail"):
            raise ValueError(f"unknown singular policy {singular_policy!r}")
        self.sampler = sampler
        self.k = sampler.k
        if u0 is None:
            u0 = np.zeros(self.k)
            u0[0] = 1.0
        u0 = np.asarray(u0, dtype=float)
        nrm = np.linalg.norm(u0)
        if nrm <= 0:
            raise ValueError("u0 must be nonzero")
        self.u0 = u0 / nrm
        self.singular_policy = singular_policy
        self.det_tol = det_tol
        self.drift = None
        self.increment_sd = 1.0

    def initial_states(self, n: int, rng: np.random.Generator, init=None):
        u = self.u0 if init is None else np.asarray(init, dtype=float)
        u = u / np.linalg.norm(u)
        return np.tile(u, (n, 1))

    def _draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        mats = self.sampler.sample(n, rng)
        bad = np.abs(np.linalg.det(mats)) < self.det_tol
        if bad.any():
            if self.singular_policy == "fail":
                raise ValueError(f"{int(bad.sum())} singular matrices sampled")
            for _ in range(100):
                mats[bad] = self.sampler.sample(int(bad.sum()), rng)
                bad = np.abs(np.linalg.det(mats)) < self.det_tol
                if not bad.any():
                    break
            else:
                raise ValueError("resampling failed to avoid singular matrices")
        return mats

    def step(self, states, rng: np.random.Generator):
        n = states.shape[0]
        mats = self._draw(n, rng)
        w = np.einsum("nij,nj->ni", mats, states)
        norms = np.linalg.norm(w, axis=1)
        if (norms <= 0).any():
            raise ValueError("matrix maps a direction to zero")
        return w / norms[:, None], np.log(norms)

    def state_list(self, states) -> list:
        return [np.array(u) for u in states]


def matproduct_walk(model: MatrixProductModel, n: int, seed: int) -> Trajectory:
    """Trajectory of directions and partial log-norm sums for n steps."""
    from .chain import simulate_path
    return simulate_path(model, None, n, seed)


@dataclass(frozen=True)
class MatProductResult:
    passage: McEstimate           # P{N(b) < m} (or within the cap if unbounded)
    lyapunov: float
    lyapunov_se: float
    capped: int


def matproduct_first_passage(model: MatrixProductModel, b: float,
                             m: Optional[int], reps: int, seed: int,
                             step_cap: int = 10 ** 5, workers: int = 1,
                             batch_size: int = BATCH_SIZE,
                             lyapunov_steps: int = 100_000) -> MatProductResult:
    """First passage of the log-norm walk over b, plus the Lyapunov exponent
    estimated from one long run with batch-means error bars (100 batches)."""
    if b < 0:
        raise ValueError(f"b must be >= 0, got {b}")
    horizon = m if m is not None else step_cap

    def worker(n, rng):
        u = model.initial_states(n, rng)
        sums = np.zeros(n)
        crossed_at = np.full(n, horizon + 1, dtype=np.int64)
        open_mask = np.ones(n, dtype=bool)
        for k in range(1, horizon + 1):
            u, xi = model.step(u, rng)
            sums += xi
            newly = open_mask & (sums > b)
            crossed_at[newly] = k
            open_mask &= ~newly
        if m is not None:
            hits = float((crossed_at < m).sum())
        else:
            hits = float((crossed_at <= horizon).sum())
        return hits, int(open_mask.sum())

    parts = _run_batches(worker, reps, seed, workers, batch_size)
    est = _freq_estimate(sum(p[0] for p in parts), reps, seed)
    capped = sum(p[1] for p in parts) if m is None else 0

    rng = substream(seed, 1 << 32)
    n_batches = 100
    steps = lyapunov_steps - lyapunov_steps % n_batches
    u = model.initial_states(1, rng)
    incs = np.empty(steps)
    for k in range(steps):
        u, xi = model.step(u, rng)
        incs[k] = xi[0]
    gamma = float(incs.mean())
    bm = incs.reshape(n_batches, -1).mean(axis=1)
    se = float(bm.std(ddof=1) / math.sqrt(n_batches))
    return MatProductResult(passage=est, lyapunov=gamma, lyapunov_se=se,
                            capped=capped)
