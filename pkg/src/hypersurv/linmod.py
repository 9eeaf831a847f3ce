"""Elastic-net logistic regression and Cox proportional hazards.

Both fits minimise  smooth_loss(theta) + alpha * (l1_ratio * |beta|_1 + (1 - l1_ratio)/2 * |beta|^2)
by proximal Newton iterations: the smooth loss is replaced by its second-order expansion
around the current estimate, that penalised quadratic is solved by cyclic coordinate
descent, and the resulting step is backtracked until the true objective does not increase.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElasticNetConfig:
    alpha: float = 0.1
    l1_ratio: float = 0.5
    max_iter: int = 1000
    tol: float = 1e-7

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.l1_ratio <= 1:
            raise ValueError(f"l1_ratio must lie in [0, 1], got {self.l1_ratio}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass
class LinearModelFit:
    kind: str  # "logistic" or "cox"
    coefficients: np.ndarray
    intercept: float | None
    converged: bool
    n_iter: int
    objective_history: list[float] = field(default_factory=list)

    def to_dict(self, feature_names: Sequence[str] | None = None) -> dict:
        names = feature_names or [f"x{j}" for j in range(len(self.coefficients))]
        if len(names) != len(self.coefficients):
            raise ValueError("feature_names length does not match coefficients")
        return {
            "kind": self.kind,
            "feature_names": list(names),
            "coefficients": [float(c) for c in self.coefficients],
            "intercept": None if self.intercept is None else float(self.intercept),
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LinearModelFit":
        return cls(
            kind=data["kind"],
            coefficients=np.array(data["coefficients"], dtype=np.float64),
            intercept=data["intercept"],
            converged=data["converged"],
            n_iter=data["n_iter"],
        )


def _penalty(beta: np.ndarray, alpha: float, l1_ratio: float) -> float:
    return alpha * (l1_ratio * np.abs(beta).sum() + 0.5 * (1.0 - l1_ratio) * beta @ beta)


def _soft_threshold(z: float, gamma: float) -> float:
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def _cd_quadratic(
    grad: np.ndarray,
    hess: np.ndarray,
    theta: np.ndarray,
    penalized: np.ndarray,
    l1: float,
    l2: float,
    tol: float,
    max_sweeps: int = 10000,
) -> np.ndarray:
    """Minimise g.(u - theta) + 1/2 (u - theta)' H (u - theta) + pen(u) over u by cyclic CD.

    Returns the step u - theta.
    """
    u = theta.copy()
    r = grad.copy()  # gradient of the quadratic part at u
    diag = np.diag(hess)
    p = len(theta)
    for _ in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            hjj = diag[j]
            uj = u[j]
            if penalized[j]:
                denom = hjj + l2
                new = _soft_threshold(hjj * uj - r[j], l1) / denom if denom > 0 else 0.0
            else:
                if hjj <= 0:
                    continue
                new = uj - r[j] / hjj
            change = new - uj
            if change != 0.0:
                u[j] = new
                r += hess[:, j] * change
                max_change = max(max_change, abs(change))
        if max_change < tol:
            break
    return u - theta


def _proximal_newton(
    smooth: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
    value: Callable[[np.ndarray], float],
    theta0: np.ndarray,
    penalized: np.ndarray,
    cfg: ElasticNetConfig,
) -> tuple[np.ndarray, bool, int, list[float]]:
    l1 = cfg.alpha * cfg.l1_ratio
    l2 = cfg.alpha * (1.0 - cfg.l1_ratio)

    def objective(th):
        return value(th) + _penalty(th[penalized], cfg.alpha, cfg.l1_ratio)

    theta = theta0.copy()
    current = objective(theta)
    history = [current]
    converged = False
    n_iter = 0
    for n_iter in range(1, cfg.max_iter + 1):
        _, grad, hess = smooth(theta)
        step = _cd_quadratic(grad, hess, theta, penalized, l1, l2, tol=cfg.tol * 1e-3)
        size = float(np.max(np.abs(step))) if step.size else 0.0
        t = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + t * step
            new = objective(cand)
            if new <= current:
                accepted = True
                break
            t *= 0.5
        if accepted:
            change = float(np.max(np.abs(cand - theta))) if step.size else 0.0
            theta = cand
            current = new
            history.append(current)
            if change < cfg.tol:
                converged = True
                break
        else:
            # No decrease along the Newton direction: numerically at the optimum if the step is tiny.
            converged = size < np.sqrt(cfg.tol)
            break
    return theta, converged, n_iter, history


# --------------------------------------------------------------------------
# Logistic
# --------------------------------------------------------------------------


def _check_X(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains NaN/Inf")
    return X


def logistic_loss(X: np.ndarray, y: np.ndarray, beta: np.ndarray, intercept: float) -> float:
    """Mean negative log-likelihood of a logistic model, labels in {0, 1}."""
    eta = X @ beta + intercept
    signed = np.where(y == 1, -eta, eta)
    return float(np.mean(np.logaddexp(0.0, signed)))


def fit_logistic_elasticnet(X, y, cfg: ElasticNetConfig | None = None) -> LinearModelFit:
    cfg = cfg or ElasticNetConfig()
    X = _check_X(X)
    y = np.asarray(y).astype(np.int64).reshape(-1)
    n, p = X.shape
    if y.shape[0] != n:
        raise ValueError("X and y lengths differ")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    if n < 2 or len(np.unique(y)) < 2:
        raise ValueError("logistic fit needs both classes present")
    Z = np.hstack([X, np.ones((n, 1))])

    def value(theta):
        return logistic_loss(X, y, theta[:p], theta[p])

    def smooth(theta):
        eta = Z @ theta
        prob = 0.5 * (1.0 + np.tanh(0.5 * eta))
        grad = Z.T @ (prob - y) / n
        w = prob * (1.0 - prob)
        hess = (Z * w[:, None]).T @ Z / n
        return value(theta), grad, hess

    theta0 = np.zeros(p + 1)
    base = y.mean()
    theta0[p] = np.log(base / (1.0 - base))
    penalized = np.r_[np.ones(p, dtype=bool), False]
    theta, converged, n_iter, history = _proximal_newton(smooth, value, theta0, penalized, cfg)
    if not converged:
        logger.warning("logistic elastic-net did not converge in %d iterations", n_iter)
    return LinearModelFit("logistic", theta[:p].copy(), float(theta[p]), converged, n_iter, history)


def predict_logistic(fit: LinearModelFit, X) -> np.ndarray:
    X = _check_X(X)
    if X.shape[1] != len(fit.coefficients):
        raise ValueError(f"expected {len(fit.coefficients)} features, got {X.shape[1]}")
    eta = X @ fit.coefficients + (fit.intercept or 0.0)
    e = np.exp(-np.abs(eta))
    return np.where(eta >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# --------------------------------------------------------------------------
# Cox
# --------------------------------------------------------------------------


class _CoxData:
    """Time-sorted view of survival data with Breslow risk-set bookkeeping."""

    def __init__(self, X, times, events):
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        events = np.asarray(events).astype(bool).reshape(-1)
        if X.shape[0] != times.shape[0] or events.shape[0] != times.shape[0]:
            raise ValueError("X, times and events lengths differ")
        order = np.argsort(times, kind="stable")
        self.n = X.shape[0]
        self.X = X[order]
        self.times = times[order]
        self.events = events[order]
        # first sorted position sharing each patient's time: start of the risk set
        self.start = np.searchsorted(self.times, self.times, side="left")
        # last sorted position with time <= each patient's time
        self.stop = np.searchsorted(self.times, self.times, side="right") - 1
        self.event_idx = np.flatnonzero(self.events)

    def _risk_sums(self, eta):
        shift = eta.max()
        w = np.exp(eta - shift)
        rcs = np.cumsum(w[::-1])[::-1]
        return w, rcs[self.start], shift

    def value(self, eta) -> float:
        _, S, shift = self._risk_sums(eta)
        ev = self.event_idx
        return float(-(np.sum(eta[ev] - np.log(S[ev]) - shift)) / self.n)

    def derivatives(self, beta):
        X = self.X
        eta = X @ beta
        w, S, shift = self._risk_sums(eta)
        ev = self.event_idx
        value = float(-(np.sum(eta[ev] - np.log(S[ev]) - shift)) / self.n)
        inv = np.zeros(self.n)
        inv[ev] = 1.0 / S[ev]
        # sum of 1/S_k over events k with T_k <= T_j
        c = np.cumsum(inv)[self.stop]
        grad_eta = -(self.events.astype(float) - w * c) / self.n
        grad = X.T @ grad_eta
        wx = X * w[:, None]
        rcs_wx = np.cumsum(wx[::-1], axis=0)[::-1]
        xbar = rcs_wx[self.start[ev]] / S[ev][:, None]
        hess = (X * (w * c)[:, None]).T @ X - xbar.T @ xbar
        return value, grad, hess / self.n


def cox_negative_log_partial_likelihood(X, times, events, beta) -> float:
    """-(1/n) log partial likelihood with Breslow ties."""
    X = _check_X(X)
    data = _CoxData(X, times, events)
    return data.value(data.X @ np.asarray(beta, dtype=np.float64))


def fit_cox_elasticnet(X, times, events, cfg: ElasticNetConfig | None = None) -> LinearModelFit:
    cfg = cfg or ElasticNetConfig()
    X = _check_X(X)
    data = _CoxData(X, times, events)
    if data.event_idx.size == 0:
        raise ValueError("no events")
    p = X.shape[1]

    def value(beta):
        return data.value(data.X @ beta)

    penalized = np.ones(p, dtype=bool)
    beta, converged, n_iter, history = _proximal_newton(
        data.derivatives, value, np.zeros(p), penalized, cfg
    )
    if not converged:
        logger.warning("Cox elastic-net did not converge in %d iterations", n_iter)
    return LinearModelFit("cox", beta, None, converged, n_iter, history)


def predict_cox_risk(fit: LinearModelFit, X) -> np.ndarray:
    X = _check_X(X)
    if X.shape[1] != len(fit.coefficients):
        raise ValueError(f"expected {len(fit.coefficients)} features, got {X.shape[1]}")
    return X @ fit.coefficients


def penalized_objective(fit: LinearModelFit, X, cfg: ElasticNetConfig, *, y=None, times=None, events=None) -> float:
    """Value of the objective each fit minimises, at the fitted coefficients."""
    if fit.kind == "logistic":
        smooth = logistic_loss(_check_X(X), np.asarray(y), fit.coefficients, fit.intercept)
    else:
        smooth = cox_negative_log_partial_likelihood(X, times, events, fit.coefficients)
    return smooth + _penalty(fit.coefficients, cfg.alpha, cfg.l1_ratio)
