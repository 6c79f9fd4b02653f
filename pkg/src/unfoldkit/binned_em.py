"""Binned EM unfolding: the D'Agostini / Richardson-Lucy iteration.

The observed detector histogram ``n`` is modeled as independent Poisson
counts with means ``K @ lam``.  Each iteration of :func:`dagostini_step`
does not decrease the Poisson log-likelihood, and stopping early
regularizes the solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core_data import ResponseMatrix

__all__ = [
    "BinnedProblem",
    "EMTrajectory",
    "poisson_loglik",
    "dagostini_step",
    "dagostini_unfold",
    "mle_oracle",
]


def _K(K) -> np.ndarray:
    return K.entries if isinstance(K, ResponseMatrix) else np.asarray(K, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class BinnedProblem:
    K: ResponseMatrix
    observed: np.ndarray
    lambda0: np.ndarray

    def __post_init__(self):
        K = self.K if isinstance(self.K, ResponseMatrix) else ResponseMatrix(self.K)
        obs = np.asarray(self.observed, dtype=np.float64).reshape(-1)
        lam0 = np.asarray(self.lambda0, dtype=np.float64).reshape(-1)
        D, B = K.shape
        if obs.size != D:
            raise ValueError(f"observed has {obs.size} bins, K has {D} rows")
        if lam0.size != B:
            raise ValueError(f"lambda0 has {lam0.size} bins, K has {B} columns")
        if np.any(obs < 0) or not np.all(np.isfinite(obs)):
            raise ValueError("observed counts must be finite and nonnegative")
        if np.any(lam0 <= 0) or not np.all(np.isfinite(lam0)):
            raise ValueError("lambda0 must be strictly positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "observed", obs)
        object.__setattr__(self, "lambda0", lam0)

    @classmethod
    def with_flat_start(cls, K, observed) -> "BinnedProblem":
        K = K if isinstance(K, ResponseMatrix) else ResponseMatrix(K)
        obs = np.asarray(observed, dtype=np.float64)
        B = K.shape[1]
        total = max(obs.sum() / max(K.efficiency.mean(), 1e-300), 1.0)
        return cls(K, obs, np.full(B, total / B))


@dataclass(frozen=True, eq=False)
class EMTrajectory:
    lambdas: np.ndarray  # (n_iter + 1, B), row 0 is the starting point
    logliks: np.ndarray  # (n_iter + 1,)

    def __len__(self) -> int:
        return self.logliks.size

    @property
    def final(self) -> np.ndarray:
        return self.lambdas[-1]


def poisson_loglik(K, lam, observed) -> float:
    """``sum_i [n_i log(mu_i) - mu_i]`` with ``mu = K @ lam``; ``log n_i!`` dropped."""
    K = _K(K)
    lam = np.asarray(lam, dtype=np.float64)
    n = np.asarray(observed, dtype=np.float64)
    mu = K @ lam
    pos = n > 0
    if np.any(mu[pos] <= 0):
        bad = int(np.flatnonzero(pos & (mu <= 0))[0])
        raise ValueError(f"zero predicted mean in detector bin {bad} with observed count "
                         f"{n[bad]!r}")
    return float(np.sum(n[pos] * np.log(mu[pos])) - np.sum(mu))


def dagostini_step(K, lam, observed) -> np.ndarray:
    """One EM update ``lam_j <- lam_j / eff_j * sum_i K_ij n_i / (K lam)_i``."""
    K = _K(K)
    lam = np.asarray(lam, dtype=np.float64)
    n = np.asarray(observed, dtype=np.float64)
    if np.any(lam <= 0):
        raise ValueError("lambda must be strictly positive")
    mu = K @ lam
    zero = mu <= 0
    if np.any(zero & (n > 0)):
        bad = int(np.flatnonzero(zero & (n > 0))[0])
        raise ValueError(f"zero predicted mean in detector bin {bad} with observed count "
                         f"{n[bad]!r}")
    ratio = np.zeros_like(mu)
    ok = ~zero
    ratio[ok] = n[ok] / mu[ok]
    return lam / K.sum(axis=0) * (K.T @ ratio)


def dagostini_unfold(problem: BinnedProblem, n_iter: int) -> EMTrajectory:
    """Run ``n_iter`` EM steps from ``problem.lambda0``, recording the log-likelihood."""
    if n_iter < 1:
        raise ValueError("n_iter must be >= 1")
    K, n = problem.K.entries, problem.observed
    lams = np.empty((n_iter + 1, problem.lambda0.size))
    ll = np.empty(n_iter + 1)
    lams[0] = problem.lambda0
    ll[0] = poisson_loglik(K, lams[0], n)
    # validated first step, then the same update without per-step checks
    lams[1] = dagostini_step(K, lams[0], n)
    ll[1] = poisson_loglik(K, lams[1], n)
    KT, eff = K.T.copy(), K.sum(axis=0)
    pos = n > 0
    npos = n[pos]
    for k in range(1, n_iter):
        mu = K @ lams[k]
        if np.any(mu[pos] <= 0):
            raise ValueError(f"predicted mean vanished at iteration {k}")
        ratio = np.zeros_like(mu)
        ratio[pos] = npos / mu[pos]
        lams[k + 1] = lams[k] / eff * (KT @ ratio)
        mu = K @ lams[k + 1]
        ll[k + 1] = np.dot(npos, np.log(mu[pos])) - mu.sum()
    return EMTrajectory(lams, ll)


def mle_oracle(K, observed, *, n_starts: int = 6, seed: int = 0,
               gtol: float = 1e-10) -> np.ndarray:
    """Maximum-likelihood ``lam >= 0`` found without the EM iteration.

    A square ``K`` whose inverse maps ``observed`` into the nonnegative orthant
    gives the saturated solution ``K lam = n`` directly.  Otherwise the
    likelihood is maximized over ``lam = exp(u)`` with L-BFGS from several
    starting points; the best converged start wins.
    """
    K = _K(K)
    n = np.asarray(observed, dtype=np.float64)
    D, B = K.shape
    if D == B:
        try:
            lam = np.linalg.solve(K, n)
        except np.linalg.LinAlgError:
            lam = None
        if lam is not None and np.all(lam >= 0) and np.allclose(K @ lam, n, rtol=1e-10,
                                                                  atol=1e-10):
            return lam

    eff = K.sum(axis=0)

    def negll(u):
        lam = np.exp(u)
        mu = K @ lam
        pos = n > 0
        if np.any(mu[pos] <= 0):
            return np.inf, np.zeros_like(u)
        val = -(np.sum(n[pos] * np.log(mu[pos])) - mu.sum())
        ratio = np.zeros_like(mu)
        ratio[pos] = n[pos] / mu[pos]
        grad = -lam * (K.T @ ratio - eff)
        return val, grad

    rng = np.random.default_rng(seed)
    scale = max(n.sum() / max(eff.sum(), 1e-300), 1e-12)
    lsq = optimize.nnls(K, n)[0]
    starts = [np.full(B, scale), np.maximum(lsq, 1e-3 * scale)]
    starts += [scale * rng.uniform(0.2, 2.0, size=B) for _ in range(max(n_starts - 2, 0))]
    best, best_val = None, np.inf
    for lam0 in starts:
        res = optimize.minimize(negll, np.log(lam0), jac=True, method="L-BFGS-B",
                                options={"maxiter": 20000, "gtol": gtol, "ftol": 1e-15})
        if np.isfinite(res.fun) and res.fun < best_val:
            best, best_val = np.exp(res.x), res.fun
    if best is None:
        raise RuntimeError("MLE oracle failed to converge from every starting point")
    return best
