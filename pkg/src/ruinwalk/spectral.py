"""Exact spectral machinery for finite-state Markov random walks.

Everything here is deterministic linear algebra on a :class:`FiniteModel`:
stationary law, Poisson equation, the transform-weighted transition matrix,
its Perron eigendata, cumulants of the additive part, exponential tilting,
conjugate roots, time reversal and the positive tail-exponent root.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .chain import WalkModel
from .laws import (Law, PointMass, TwoPoint, TransformDomainError, check_domain,
                   lattice_span)


class StructureError(ValueError):
    """Chain fails a structural requirement (irreducibility, aperiodicity)."""


class EigenConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

class FiniteModel(WalkModel):
    """Finite-state Markov-modulated walk.

    ``P`` is a K x K row-stochastic matrix and ``law[i][j]`` the parametric
    increment law attached to the transition i -> j (only needed where
    P[i, j] > 0).  The model doubles as a vectorized :class:`WalkModel`
    sampler; lattice models (point-mass / two-point laws only) use a fused
    single-uniform step for speed.
    """

    def __init__(self, P, law, check: bool = True):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError(f"P must be square, got shape {P.shape}")
        self.K = P.shape[0]
        self.P = P
        self.law = [[law[i][j] if P[i, j] > 0 else None for j in range(self.K)]
                    for i in range(self.K)]
        if check:
            self._validate()
        self.pi = stationary_distribution(self)
        self._cum_rows = np.cumsum(P, axis=1)
        self.drift = float(sum(self.pi[i] * self.P[i, j] * self.law[i][j].moment(1)
                               for i in range(self.K) for j in range(self.K)
                               if self.P[i, j] > 0))
        m2 = sum(self.pi[i] * self.P[i, j] * self.law[i][j].moment(2)
                 for i in range(self.K) for j in range(self.K) if self.P[i, j] > 0)
        self.increment_sd = math.sqrt(max(m2 - self.drift ** 2, 0.0))
        self._lattice = self._build_lattice_tables()

    # -- validation --------------------------------------------------------

    def _validate(self) -> None:
        rows = self.P.sum(axis=1)
        bad = np.where(np.abs(rows - 1.0) > 1e-12)[0]
        if bad.size:
            raise ValueError(
                f"transition rows {bad.tolist()} sum to {rows[bad].tolist()}, not 1")
        if (self.P < 0).any():
            raise ValueError("transition matrix has negative entries")
        _check_irreducible_aperiodic(self.P)
        for i in range(self.K):
            for j in range(self.K):
                if self.P[i, j] > 0 and self.law[i][j] is None:
                    raise ValueError(f"missing increment law for transition {i}->{j}")

    # -- transform domain --------------------------------------------------

    @property
    def transform_domain(self) -> Tuple[float, float]:
        lo, hi = -math.inf, math.inf
        for i in range(self.K):
            for j in range(self.K):
                if self.P[i, j] > 0:
                    a, b = self.law[i][j].domain
                    lo, hi = max(lo, a), min(hi, b)
        return lo, hi

    def conditional_mean(self) -> np.ndarray:
        """Per-state mean increment E[xi | X_0 = i]."""
        f = np.zeros(self.K)
        for i in range(self.K):
            for j in range(self.K):
                if self.P[i, j] > 0:
                    f[i] += self.P[i, j] * self.law[i][j].moment(1)
        return f

    def conditional_moment(self, k: int) -> np.ndarray:
        g = np.zeros(self.K)
        for i in range(self.K):
            for j in range(self.K):
                if self.P[i, j] > 0:
                    g[i] += self.P[i, j] * self.law[i][j].moment(k)
        return g

    def is_lattice(self) -> bool:
        return self._lattice is not None

    # -- sampling ----------------------------------------------------------

    def _build_lattice_tables(self):
        outcomes = []   # per state: (cum_probs, next_states, values)
        values = []
        for i in range(self.K):
            outs = []
            for j in range(self.K):
                if self.P[i, j] <= 0:
                    continue
                sup = self.law[i][j].lattice_support()
                if sup is None:
                    return None
                for v, p in sup:
                    if p > 0:
                        outs.append((self.P[i, j] * p, j, v))
                        values.append(v)
            outcomes.append(outs)
        try:
            span = lattice_span(values)
        except ValueError:
            return None
        width = max(len(o) for o in outcomes)
        cum = np.ones((self.K, width))
        nxt = np.zeros((self.K, width), dtype=np.int64)
        val = np.zeros((self.K, width))
        for i, outs in enumerate(outcomes):
            probs = np.array([p for p, _, _ in outs])
            cum[i, :len(outs)] = np.cumsum(probs)
            cum[i, len(outs) - 1] = 1.0
            nxt[i, :len(outs)] = [j for _, j, _ in outs]
            val[i, :len(outs)] = [v for _, _, v in outs]
            if len(outs) < width:
                nxt[i, len(outs):] = nxt[i, len(outs) - 1]
                val[i, len(outs):] = val[i, len(outs) - 1]
        return {"cum": cum, "next": nxt, "value": val, "span": span}

    def initial_states(self, n: int, rng: np.random.Generator, init=None):
        if init is None or (isinstance(init, str) and init == "stationary"):
            return rng.choice(self.K, size=n, p=self.pi)
        if isinstance(init, (list, tuple, np.ndarray)):
            p = np.asarray(init, dtype=float)
            if p.shape != (self.K,) or abs(p.sum() - 1.0) > 1e-9 or (p < 0).any():
                raise ValueError("initial distribution must be a length-K "
                                 "probability vector")
            return rng.choice(self.K, size=n, p=p)
        state = int(init)
        if not 0 <= state < self.K:
            raise ValueError(f"initial state {init} outside 0..{self.K - 1}")
        return np.full(n, state, dtype=np.int64)

    def step(self, states, rng: np.random.Generator):
        states = np.asarray(states, dtype=np.int64)
        n = states.shape[0]
        if self._lattice is not None:
            u = rng.random(n)
            cum = self._lattice["cum"][states]
            idx = (u[:, None] > cum).sum(axis=1)
            return (self._lattice["next"][states, idx],
                    self._lattice["value"][states, idx])
        if self.K == 1:
            nxt = states
        else:
            u = rng.random(n)
            nxt = (u[:, None] > self._cum_rows[states]).sum(axis=1)
        xi = np.empty(n)
        for i in range(self.K):
            for j in range(self.K):
                if self.P[i, j] <= 0:
                    continue
                mask = (states == i) & (nxt == j)
                k = int(mask.sum())
                if k:
                    xi[mask] = self.law[i][j].sample(k, rng)
        return nxt, xi


def _check_irreducible_aperiodic(P: np.ndarray) -> None:
    K = P.shape[0]
    adj = P > 0
    reach = np.eye(K, dtype=bool) | adj
    for _ in range(K):
        reach = reach | (reach @ reach)
    if not reach.all():
        rows = np.where(~reach.all(axis=1))[0]
        raise StructureError(
            f"chain is reducible: states {rows.tolist()} do not reach all states")
    # period via BFS levels from state 0
    level = np.full(K, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        new = []
        for u in frontier:
            for v in np.where(adj[u])[0]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    new.append(int(v))
        frontier = new
    g = 0
    for u in range(K):
        for v in np.where(adj[u])[0]:
            g = math.gcd(g, level[u] + 1 - level[v])
    if g != 1:
        raise StructureError(f"chain is periodic with period {g}")


# ---------------------------------------------------------------------------
# result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoissonSolution:
    delta: np.ndarray
    residual: float


@dataclass(frozen=True)
class SpectralDecomposition:
    alpha: float
    lam: float
    Lambda: float
    r: np.ndarray
    l: np.ndarray
    pi_alpha: np.ndarray


@dataclass(frozen=True)
class CumulantSet:
    mu: float
    sigma2: float
    kappa: float
    kappa_nu: float
    truncation: int
    route: str = "series"


@dataclass(frozen=True)
class ConjugatePair:
    alpha0: float
    alpha1: float
    delta_gap: float
    lambda_common: float


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def stationary_distribution(model) -> np.ndarray:
    """Stationary law of P: pi P = pi, sum 1, strictly positive."""
    P = model.P if isinstance(model, FiniteModel) else np.asarray(model, dtype=float)
    K = P.shape[0]
    if K == 1:
        return np.ones(1)
    A = np.vstack([P.T - np.eye(K), np.ones(K)])
    rhs = np.zeros(K + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    # one Richardson-style refinement pass keeps the residual at machine level
    resid = A @ pi - rhs
    corr, *_ = np.linalg.lstsq(A, resid, rcond=None)
    pi = pi - corr
    pi = pi / pi.sum()
    residual = float(np.abs(pi @ P - pi).max())
    if residual > 1e-12:
        raise EigenConvergenceError(f"stationary residual {residual:g} > 1e-12")
    return pi


def solve_poisson(model: FiniteModel) -> PoissonSolution:
    """Solve (I - P) Delta = f - mu with the pi-mean-zero gauge."""
    K = model.K
    f = model.conditional_mean()
    mu = float(model.pi @ f)
    rhs = f - mu
    A = np.vstack([np.eye(K) - model.P, model.pi])
    b = np.append(rhs, 0.0)
    delta, *_ = np.linalg.lstsq(A, b, rcond=None)
    corr, *_ = np.linalg.lstsq(A, A @ delta - b, rcond=None)
    delta = delta - corr
    residual = float(np.abs((np.eye(K) - model.P) @ delta - rhs).max())
    if residual > 1e-10:
        raise EigenConvergenceError(f"Poisson residual {residual:g} > 1e-10")
    return PoissonSolution(delta=delta, residual=residual)


def tilted_operator_matrix(model: FiniteModel, alpha: float) -> np.ndarray:
    """Matrix with entries P(i,j) * E[e^{alpha xi} | i->j]; equals P at 0."""
    if alpha == 0.0:
        return model.P.copy()
    M = np.zeros_like(model.P)
    for i in range(model.K):
        for j in range(model.K):
            if model.P[i, j] > 0:
                try:
                    check_domain(model.law[i][j], alpha, where=f"transition {i}->{j}")
                except TransformDomainError:
                    raise
                M[i, j] = model.P[i, j] * model.law[i][j].mgf(alpha)
    return M


def perron_eigen(M: np.ndarray, pi_gauge: np.ndarray,
                 tol: float = 1e-13, max_iter: int = 10 ** 5):
    """Perron root and positive left/right eigenvectors of a nonnegative
    irreducible matrix.

    Gauge: sum_i pi_gauge[i] * r[i] = 1 and l . r = 1.  Power iteration on the
    diagonally shifted matrix (shift breaks periodicity without changing
    eigenvectors); dense solve as fallback for small matrices.
    """
    M = np.asarray(M, dtype=float)
    if (M < 0).any():
        raise ValueError("matrix must be nonnegative")
    K = M.shape[0]
    if K == 1:
        lam = float(M[0, 0])
        if lam <= 0:
            raise ValueError("Perron root must be positive")
        r = np.array([1.0 / pi_gauge[0]])
        l = np.array([1.0 / r[0]])
        return lam, r, l
    shift = float(M.max())
    A = M + shift * np.eye(K)
    r = np.ones(K)
    l = np.ones(K)
    lam_s = 0.0
    converged = False
    for _ in range(max_iter):
        r_new = A @ r
        lam_s = float(r_new.max())
        r_new /= lam_s
        l_new = l @ A
        l_new /= l_new.max()
        if (np.abs(r_new - r).max() < tol and np.abs(l_new - l).max() < tol):
            r, l = r_new, l_new
            converged = True
            break
        r, l = r_new, l_new
    if not converged:
        if K <= 64:
            w, V = np.linalg.eig(M)
            k = int(np.argmax(w.real))
            lam = float(w[k].real)
            r = np.abs(V[:, k].real)
            wl, Vl = np.linalg.eig(M.T)
            kl = int(np.argmax(wl.real))
            l = np.abs(Vl[:, kl].real)
        else:
            raise EigenConvergenceError(
                f"power iteration did not converge in {max_iter} iterations")
    else:
        lam = lam_s - shift
        # two Rayleigh refinements of the root
        for _ in range(2):
            lam = float((l @ M @ r) / (l @ r))
    if lam <= 0 or (r <= 0).any() or (l <= 0).any():
        raise EigenConvergenceError("Perron pair not strictly positive")
    r = r / float(pi_gauge @ r)
    l = l / float(l @ r)
    resid_r = np.abs(M @ r - lam * r).max() / (abs(lam) * np.abs(r).max())
    resid_l = np.abs(l @ M - lam * l).max() / (abs(lam) * np.abs(l).max())
    if max(resid_r, resid_l) > 1e-10:
        raise EigenConvergenceError(
            f"Perron residual {max(resid_r, resid_l):g} > 1e-10")
    return lam, r, l


def spectral_decomposition(model: FiniteModel, alpha: float) -> SpectralDecomposition:
    """Tilted-operator eigendata at alpha, with the alpha=0 gauge Lambda(0)=0."""
    if alpha == 0.0:
        return SpectralDecomposition(alpha=0.0, lam=1.0, Lambda=0.0,
                                     r=np.ones(model.K), l=model.pi.copy(),
                                     pi_alpha=model.pi.copy())
    M = tilted_operator_matrix(model, alpha)
    lam, r, l = perron_eigen(M, model.pi)
    pi_alpha = l * r
    pi_alpha = pi_alpha / pi_alpha.sum()
    return SpectralDecomposition(alpha=alpha, lam=lam, Lambda=math.log(lam),
                                 r=r, l=l, pi_alpha=pi_alpha)


def _geometric_mixing_rate(P: np.ndarray) -> float:
    w = np.linalg.eigvals(P)
    mods = np.sort(np.abs(w))[::-1]
    return float(mods[1]) if len(mods) > 1 else 0.0


def cumulants(model: FiniteModel, truncation: int = 500,
              nu: Optional[np.ndarray] = None) -> CumulantSet:
    """Drift, long-run variance and third-cumulant rate by the series route.

    Autocovariance and triple-correlation series are truncated at
    ``truncation`` in each index; increments enter centered at the stationary
    drift so the series converge for any drift.
    """
    if truncation < 1:
        raise ValueError(f"truncation must be >= 1, got {truncation}")
    T = truncation
    K, P, pi = model.K, model.P, model.pi
    f = model.conditional_mean()
    mu = float(pi @ f)

    # centered conditional moments per transition
    C1 = np.zeros((K, K))
    C2 = np.zeros((K, K))
    C3 = np.zeros((K, K))
    for i in range(K):
        for j in range(K):
            if P[i, j] > 0:
                m1 = model.law[i][j].moment(1)
                m2 = model.law[i][j].moment(2)
                m3 = model.law[i][j].moment(3)
                C1[i, j] = P[i, j] * (m1 - mu)
                C2[i, j] = P[i, j] * (m2 - 2 * mu * m1 + mu * mu)
                C3[i, j] = P[i, j] * (m3 - 3 * mu * m2 + 3 * mu * mu * m1 - mu ** 3)
    fbar = C1.sum(axis=1)          # E[xi - mu | i]
    h2 = C2.sum(axis=1)            # E[(xi - mu)^2 | i]
    var = float(pi @ h2)

    def tail_sum(v: np.ndarray) -> np.ndarray:
        """sum_{t=0}^{T-1} (P^t v - (pi v) 1); geometric convergence."""
        vc = v - float(pi @ v)
        acc = np.zeros(K)
        cur = vc.copy()
        for _ in range(T):
            acc += cur
            cur = P @ cur
            cur -= float(pi @ cur)
        return acc

    Sf = tail_sum(fbar)
    sigma2 = var + 2.0 * float(pi @ (C1 @ Sf))

    B = C1
    term1 = float(pi @ C3.sum(axis=1))
    term2 = 3.0 * float(pi @ (C2 @ Sf))
    term3 = 3.0 * float(pi @ (B @ tail_sum(h2)))
    V = B @ Sf
    term4 = 6.0 * float(pi @ (B @ tail_sum(V)))
    kappa = term1 + term2 + term3 + term4

    if nu is None:
        kappa_nu = 0.0
    else:
        nu = np.asarray(nu, dtype=float)
        acc = 0.0
        d = nu.copy()
        for _ in range(T):
            acc += float(d @ f) - mu
            d = d @ P
        kappa_nu = acc

    rho = _geometric_mixing_rate(P)
    if rho > 0 and rho ** T > 1e-9:
        warnings.warn(
            f"series truncation {T} may be short for mixing rate {rho:.4f}; "
            f"estimated tail weight ~{rho ** T:.2e}", stacklevel=2)
    return CumulantSet(mu=mu, sigma2=max(sigma2, 0.0), kappa=kappa,
                       kappa_nu=kappa_nu, truncation=T, route="series")


def lambda_derivatives(model: FiniteModel):
    """(Lambda'(0), Lambda''(0), Lambda'''(0)) by Richardson-extrapolated
    central differences of log of the Perron root.

    Returns ((d1, d2, d3), error_estimates).
    """
    lo, hi = model.transform_domain
    half = min(-lo, hi)
    if not half > 0:
        raise TransformDomainError("transform domain does not contain 0")
    h0 = min(half / 8.0, 1e-2)

    def L(a: float) -> float:
        return spectral_decomposition(model, a).Lambda

    def d1(h):
        return (L(h) - L(-h)) / (2 * h)

    def d2(h):
        return (L(h) + L(-h)) / (h * h)     # L(0) = 0 by gauge

    def d3(h):
        return (L(2 * h) - 2 * L(h) + 2 * L(-h) - L(-2 * h)) / (2 * h ** 3)

    out = []
    errs = []
    for fd, order in ((d1, 2), (d2, 2), (d3, 2)):
        a0, a1, a2 = fd(h0), fd(h0 / 2), fd(h0 / 4)
        w = 2 ** order
        r1 = (w * a1 - a0) / (w - 1)
        r2 = (w * a2 - a1) / (w - 1)
        w2 = 2 ** (order + 2)
        final = (w2 * r2 - r1) / (w2 - 1)
        out.append(final)
        errs.append(abs(r2 - r1))
    return tuple(out), tuple(errs)


def tilt_model(model: FiniteModel, alpha: float) -> FiniteModel:
    """Exponentially tilted model: p(i,j) * mgf_ij(alpha) * r_j / (lambda r_i)
    with each increment law tilted in closed form."""
    if alpha == 0.0:
        return model
    dec = spectral_decomposition(model, alpha)
    M = tilted_operator_matrix(model, alpha)
    P_alpha = M * dec.r[None, :] / (dec.lam * dec.r[:, None])
    P_alpha = P_alpha / P_alpha.sum(axis=1, keepdims=True)
    law = [[model.law[i][j].tilt(alpha) if model.P[i, j] > 0 else None
            for j in range(model.K)] for i in range(model.K)]
    tilted = FiniteModel(P_alpha, law)
    return tilted


def conjugate_root(model: FiniteModel, alpha: float,
                   tol: float = 1e-12) -> ConjugatePair:
    """Opposite-sign root of Lambda(a') = Lambda(alpha) for a zero-drift model.

    Strict convexity with Lambda(0) = Lambda'(0) = 0 makes Lambda U-shaped,
    so the conjugate (when inside the transform domain) is unique.
    """
    if alpha == 0.0:
        raise ValueError("alpha must be nonzero")
    if abs(model.drift) > 1e-9:
        raise ValueError(
            f"conjugate_root requires a zero-drift model (drift={model.drift:g}); "
            "re-center the increment laws first")
    lo, hi = model.transform_domain
    target = spectral_decomposition(model, alpha).Lambda
    d1, _ = lambda_derivatives(model)
    if abs(d1[1]) < 1e-14 and abs(target) < 1e-14:
        raise StructureError("Lambda is affine; no conjugate root exists")

    def g(a: float) -> float:
        return spectral_decomposition(model, a).Lambda - target

    sign = -1.0 if alpha > 0 else 1.0
    # expand a bracket on the opposite side of 0
    step = abs(alpha)
    a_in = 0.0
    a_out = sign * step
    limit = (lo if sign < 0 else hi)
    for _ in range(200):
        if sign < 0 and a_out <= lo or sign > 0 and a_out >= hi:
            a_out = limit * 0.999999 if math.isfinite(limit) else a_out
        try:
            val = g(a_out)
        except TransformDomainError:
            raise StructureError("no conjugate root in transform domain")
        if val >= 0:
            break
        a_in = a_out
        a_out = a_out + sign * step
        if math.isfinite(limit) and sign * (a_out - limit) >= 0:
            a_out = (a_in + limit) / 2
            if abs(a_out - a_in) < 1e-15:
                raise StructureError("no conjugate root in transform domain")
    else:
        raise StructureError("no conjugate root in transform domain")
    # bisection to tolerance on Lambda difference, then secant polish
    x0, x1 = a_in, a_out
    for _ in range(200):
        mid = 0.5 * (x0 + x1)
        if g(mid) < 0:
            x0 = mid
        else:
            x1 = mid
        if abs(g(x1)) <= tol or abs(x1 - x0) < 1e-16:
            break
    a_conj = x1
    for _ in range(5):
        g0, g1 = g(x0), g(a_conj)
        if g1 == g0:
            break
        nxt = a_conj - g1 * (a_conj - x0) / (g1 - g0)
        if not (min(lo, a_conj) < nxt < max(hi, a_conj)):
            break
        x0, a_conj = a_conj, nxt
        if abs(g(a_conj)) <= tol:
            break
    if abs(g(a_conj)) > tol:
        # fall back to the bisection result
        a_conj = x1
    a0, a1 = min(alpha, a_conj), max(alpha, a_conj)
    lam = spectral_decomposition(model, alpha).lam
    return ConjugatePair(alpha0=a0, alpha1=a1, delta_gap=a1 - a0,
                         lambda_common=lam)


def time_reverse(model: FiniteModel) -> FiniteModel:
    """Reversed chain: Ptilde(j,i) = pi_i P(i,j) / pi_j with the increment
    law of (i,j) reattached to (j,i)."""
    K, P, pi = model.K, model.P, model.pi
    Pt = (pi[:, None] * P).T / pi[:, None]
    Pt = Pt / Pt.sum(axis=1, keepdims=True)
    law = [[model.law[i][j] if P[i, j] > 0 else None
            for i in range(K)] for j in range(K)]
    return FiniteModel(Pt, law)


def tail_root(model: FiniteModel, tol: float = 1e-10) -> float:
    """Unique alpha* > 0 with Perron root lambda(alpha*) = 1, for negative
    drift models; the tail exponent of the maximum."""
    if model.drift >= 0:
        raise ValueError(f"tail_root requires negative drift, got {model.drift:g}")
    lo, hi = model.transform_domain

    def g(a: float) -> float:
        return spectral_decomposition(model, a).lam - 1.0

    a_lo = min(1e-6, hi / 2 if math.isfinite(hi) else 1e-6)
    if g(a_lo) >= 0:
        a_lo = 1e-12
    a_hi = a_lo * 2
    for _ in range(200):
        if math.isfinite(hi) and a_hi >= hi:
            a_hi = 0.5 * (a_lo + hi)
        try:
            val = g(a_hi)
        except TransformDomainError:
            raise StructureError("no tail root in transform domain")
        if val >= 0:
            break
        a_lo = a_hi
        a_hi *= 2
        if math.isfinite(hi) and a_hi >= hi and hi - a_lo < 1e-14:
            raise StructureError("no tail root in transform domain")
    else:
        raise StructureError("no tail root in transform domain")
    for _ in range(200):
        mid = 0.5 * (a_lo + a_hi)
        if g(mid) < 0:
            a_lo = mid
        else:
            a_hi = mid
        if abs(g(a_hi)) <= tol:
            break
    return a_hi
