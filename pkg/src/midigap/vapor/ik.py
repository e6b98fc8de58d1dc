"""Covariance-weighted inverse kinematics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import IKNotConvergedError
from .kinematics import KinematicChain, pose_error

DEFAULT_TAU = 1e-6
DEFAULT_MAX_ITER = 200


@dataclass
class IKResult:
    q: np.ndarray
    cost: float
    error: np.ndarray
    iterations: int
    converged: bool


def ik_cost(chain: KinematicChain, q, mu, var) -> float:
    """0.5 e^T Sigma^{-1} e for the pose error of ``q`` against target ``mu``."""
    e, _ = pose_error(chain, q, mu)
    return float(0.5 * np.sum(e[0] ** 2 / np.asarray(var).reshape(6)))


def ik_solve(chain: KinematicChain, mu, var, q_init=None, tau=DEFAULT_TAU,
             max_iter=DEFAULT_MAX_ITER, strict=True) -> IKResult:
    """Minimise 0.5 e^T W e with W = diag(var)^-1 by damped Gauss-Newton.

    Each step solves (J^T W J + lam I) dq = -J^T W e, clamps to the joint
    limits and is accepted only if the cost drops. Stops once the cost is
    below ``tau``; otherwise (iteration budget spent or no further
    progress) raises :class:`IKNotConvergedError` carrying the result,
    unless ``strict`` is False.
    """
    mu = np.asarray(mu, dtype=float).reshape(7)
    w = 1.0 / np.asarray(var, dtype=float).reshape(6)
    q = chain.clamp(np.zeros(chain.n) if q_init is None else np.asarray(q_init, dtype=float))
    e, de = pose_error(chain, q, mu)
    e, de = e[0], de[0]
    cost = 0.5 * float(e @ (w * e))
    lam = 1e-3
    it = 0
    while cost >= tau and it < max_iter:
        it += 1
        JW = de.T * w
        H = JW @ de
        g = JW @ e
        scale = np.maximum(np.diag(H), 1e-12)
        improved = False
        for _ in range(30):
            step = np.linalg.solve(H + lam * np.diag(scale), -g)
            q_new = chain.clamp(q + step)
            e_new, de_new = pose_error(chain, q_new, mu)
            cost_new = 0.5 * float(e_new[0] @ (w * e_new[0]))
            if cost_new < cost:
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
        rel = (cost - cost_new) / max(cost, 1e-300)
        q, e, de, cost = q_new, e_new[0], de_new[0], cost_new
        lam = max(lam / 10.0, 1e-12)
        if rel < 1e-12 and np.max(np.abs(step)) < 1e-12:
            break
    res = IKResult(q=q, cost=cost, error=e, iterations=it, converged=cost < tau)
    if strict and not res.converged:
        raise IKNotConvergedError(
            f"IK stopped at cost {cost:.3g} >= tau {tau:g} after {it} iterations", result=res)
    return res
