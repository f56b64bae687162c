"""Full-covariance Gaussian mixtures fitted by EM, and regression by conditioning.

The joint space is ordered ``[inputs..., horizon, output]``: the last column
is always the regressed quantity, the one before it the prediction horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

COV_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


class EmDegenerate(ValueError):
    pass


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covs: np.ndarray  # (K, D, D)
    output: str = "lateral"
    log_likelihood: list = field(default_factory=list)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float).reshape(len(self.weights), self.dim, self.dim)
        if self.output not in ("lateral", "longitudinal"):
            raise ValueError(f"unknown output dimension {self.output!r}")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ValueError("mixture weights must be non-negative and sum to 1")
        self._regression = None

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_pdf(self, X) -> np.ndarray:
        """Per-sample log density of the joint model."""
        return logsumexp(_component_log_pdf(np.atleast_2d(X), self.means, self.covs) + np.log(self.weights), axis=1)

    def regression(self) -> "_Regression":
        if self._regression is None:
            self._regression = _Regression.build(self)
        return self._regression


def _component_log_pdf(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """(n, K) matrix of log N(x_n; mu_k, S_k)."""
    n, d = X.shape
    out = np.empty((n, len(means)))
    for k, (mu, S) in enumerate(zip(means, covs)):
        L = np.linalg.cholesky(S)
        z = solve_triangular(L, (X - mu).T, lower=True, check_finite=False)
        out[:, k] = -0.5 * (d * _LOG_2PI + np.sum(z * z, axis=0)) - np.sum(np.log(np.diag(L)))
    return out


def _kmeans_pp(Z: np.ndarray, K: int, rng: np.random.Generator, iterations: int = 10) -> np.ndarray:
    centers = [Z[rng.integers(len(Z))]]
    d2 = np.sum((Z - centers[0]) ** 2, axis=1)
    for _ in range(1, K):
        total = d2.sum()
        idx = rng.choice(len(Z), p=d2 / total) if total > 0 else rng.integers(len(Z))
        centers.append(Z[idx])
        d2 = np.minimum(d2, np.sum((Z - Z[idx]) ** 2, axis=1))
    C = np.array(centers)
    for _ in range(iterations):
        assign = np.argmin(((Z[:, None, :] - C[None]) ** 2).sum(axis=2), axis=1)
        for k in range(K):
            members = Z[assign == k]
            if len(members):
                C[k] = members.mean(axis=0)
    return assign


def _m_step(Z: np.ndarray, resp: np.ndarray):
    Nk = resp.sum(axis=0)
    if np.any(Nk < 1e-8):
        raise EmDegenerate("a mixture component lost all of its responsibility mass")
    weights = Nk / Nk.sum()
    means = (resp.T @ Z) / Nk[:, None]
    d = Z.shape[1]
    covs = np.empty((len(Nk), d, d))
    for k in range(len(Nk)):
        diff = Z - means[k]
        S = (diff * resp[:, k, None]).T @ diff / Nk[k]
        covs[k] = 0.5 * (S + S.T) + COV_FLOOR * np.eye(d)
    return weights, means, covs


def train_gmm(samples, K: int = 8, seed: int = 0, max_iter: int = 150, tol: float = 1e-6,
              output: str = "lateral") -> GmmModel:
    """Fit a K-component full-covariance mixture.

    EM runs on per-dimension standardized data so the diagonal floor added
    to every covariance is scale-free; the returned model is expressed in
    the original units.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or len(X) < 10 * K:
        raise ValueError(f"need at least {10 * K} samples for {K} components, got {len(X)}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples must be finite")
    rng = np.random.default_rng(seed)
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Z = (X - shift) / scale

    assign = _kmeans_pp(Z, K, rng)
    resp = np.zeros((len(Z), K))
    resp[np.arange(len(Z)), assign] = 1.0
    history = []
    for _ in range(max_iter):
        try:
            weights, means, covs = _m_step(Z, resp)
            joint = _component_log_pdf(Z, means, covs) + np.log(weights)
        except np.linalg.LinAlgError as exc:
            raise EmDegenerate(str(exc)) from exc
        norm = logsumexp(joint, axis=1)
        ll = float(norm.mean() - np.log(scale).sum())
        history.append(ll)
        resp = np.exp(joint - norm[:, None])
        if len(history) > 1 and history[-1] - history[-2] < tol:
            break

    means_x = means * scale + shift
    covs_x = covs * np.outer(scale, scale)
    return GmmModel(weights, means_x, covs_x, output, history)


@dataclass(frozen=True)
class Mixture1D:
    """Batch of scalar Gaussian mixtures: one row of weights/means per query."""

    weights: np.ndarray  # (n, M)
    means: np.ndarray  # (n, M)
    variances: np.ndarray  # (n, M)

    def mean(self) -> np.ndarray:
        return np.sum(self.weights * self.means, axis=1)

    def variance(self) -> np.ndarray:
        m = self.mean()
        return np.sum(self.weights * (self.variances + self.means**2), axis=1) - m**2

    def pdf(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(-1, 1)
        return np.sum(self.weights * np.exp(-0.5 * (y - self.means) ** 2 / self.variances)
                      / np.sqrt(2 * np.pi * self.variances), axis=1)

    def shifted(self, offset) -> "Mixture1D":
        return Mixture1D(self.weights, self.means + np.asarray(offset, dtype=float).reshape(-1, 1), self.variances)

    @staticmethod
    def blend(parts, gates) -> "Mixture1D":
        """Concatenate mixtures, scaling each one's weights by its gate column."""
        gates = np.asarray(gates, dtype=float)
        return Mixture1D(
            np.concatenate([p.weights * gates[:, [i]] for i, p in enumerate(parts)], axis=1),
            np.concatenate([p.means for p in parts], axis=1),
            np.concatenate([p.variances for p in parts], axis=1),
        )


@dataclass(frozen=True)
class _Regression:
    """Per-component quantities reused by every conditioning query."""

    mu_in: np.ndarray  # (K, Din)
    mu_out: np.ndarray  # (K,)
    gain: np.ndarray  # (K, Din)
    cond_var: np.ndarray  # (K,)
    whiten: np.ndarray  # (K, Din, Din) inverse Cholesky factor of the input covariance
    log_prior: np.ndarray  # (K,)

    @classmethod
    def build(cls, gmm: GmmModel) -> "_Regression":
        S_ii = gmm.covs[:, :-1, :-1]
        S_oi = gmm.covs[:, -1, :-1]
        gain = np.linalg.solve(S_ii, S_oi[:, :, None])[:, :, 0]
        cond_var = gmm.covs[:, -1, -1] - np.einsum("ki,ki->k", gain, S_oi)
        chol = np.linalg.cholesky(S_ii)
        eye = np.broadcast_to(np.eye(S_ii.shape[1]), S_ii.shape)
        whiten = np.stack([solve_triangular(c, e, lower=True) for c, e in zip(chol, eye)])
        log_det = 2 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        return cls(gmm.means[:, :-1], gmm.means[:, -1], gain, np.maximum(cond_var, 1e-12), whiten,
                   np.log(gmm.weights) - 0.5 * log_det)


def gmr_condition(gmm: GmmModel, inputs, horizon) -> Mixture1D:
    """Condition on ``inputs`` (n, Din-1) and ``horizon`` (scalar or (n,)) for the output density."""
    reg = gmm.regression()
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    h = np.broadcast_to(np.asarray(horizon, dtype=float), (len(X),))
    Q = np.column_stack([X, h])
    if Q.shape[1] != reg.mu_in.shape[1]:
        raise ValueError(f"expected {reg.mu_in.shape[1] - 1} inputs plus horizon, got {Q.shape[1] - 1}")
    diff = Q[:, None, :] - reg.mu_in[None]  # (n, K, Din)
    z = np.einsum("kij,nkj->nki", reg.whiten, diff)
    log_w = reg.log_prior - 0.5 * np.sum(z * z, axis=2)
    means = reg.mu_out + np.einsum("nki,ki->nk", diff, reg.gain)
    w = np.exp(log_w - log_w.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    return Mixture1D(w, means, np.broadcast_to(reg.cond_var, means.shape).copy())
