"""Variance-aware joint-space path optimisation against a pose tube.

The decision variable is the whole joint path Q (T, n). The objective sums
a tracking term weighted by the tube precision (normalised by the largest
variance so its scale is that of the positional error) and a joint-speed
penalty. Each error component must stay inside ``z`` standard deviations of
the tube; joint limits are box bounds. The inequality constraints are
handled by an augmented Lagrangian with L-BFGS-B inner solves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from ..digap import DiGaP
from ..errors import InfeasibleEvidenceError, InfeasiblePathError, IKNotConvergedError
from ..mixture import MiDiGaP, SkillChain
from ..updating import DEFAULT_Z, apply_to_chain, evidence_score
from .ik import ik_solve
from .kinematics import POSE, KinematicChain, pose_error

LAMBDA_E = 1.0
LAMBDA_Q = 0.1
RHO0 = 10.0
RHO_GROWTH = 5.0
MAX_OUTER = 20
FEAS_TOL = 1e-6


def _check_target(target: DiGaP):
    if not target.spec.is_pose:
        raise ValueError("path optimisation needs a pose (R^3 x S^3) tube")
    return np.asarray(target.mu), np.asarray(target.var)


@dataclass
class PathResult:
    Q: np.ndarray
    poses: np.ndarray
    objective: float
    nll: float
    max_violation: float
    feasible: bool
    outer_iterations: int
    history: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "Q": self.Q.tolist(), "poses": self.poses.tolist(), "objective": self.objective,
            "nll": self.nll, "max_violation": self.max_violation, "feasible": self.feasible,
            "outer_iterations": self.outer_iterations, "history": self.history,
        }


def trajectory_nll(target: DiGaP, poses, full: bool = False) -> float:
    """0.5 sum_t Log_{mu_t}(x_t)^T Sigma_t^{-1} Log_{mu_t}(x_t).

    With ``full`` the Gaussian normaliser 0.5 log|2 pi Sigma_t| is added per step.
    """
    mu, var = np.asarray(target.mu), np.asarray(target.var)
    X = np.asarray(poses, dtype=float)
    if len(X) != len(mu):
        raise ValueError(f"trajectory has {len(X)} steps, target has {len(mu)}")
    L = target.spec.log(mu, X.reshape(mu.shape))
    c = 0.5 * float(np.sum(L * L / var))
    if full:
        c += 0.5 * float(np.sum(np.log(2.0 * np.pi * var)))
    return c


def deviation(chain: KinematicChain, target: DiGaP, Q, z: float = DEFAULT_Z) -> float:
    """Largest amount by which any |e_ti| exceeds z sigma_ti (negative when inside)."""
    mu, var = _check_target(target)
    e, _ = pose_error(chain, Q, mu)
    return float(np.max(np.abs(e) - z * np.sqrt(var)))


def path_objective(chain, target, Q, lam_e=LAMBDA_E, lam_q=LAMBDA_Q) -> float:
    mu, var = _check_target(target)
    e, _ = pose_error(chain, Q, mu)
    w = var.max() / var
    dQ = np.diff(Q, axis=0)
    return float(lam_e * np.sum(w * e * e) + lam_q * np.sum(dQ * dQ))


def initial_path(chain: KinematicChain, target: DiGaP, q0) -> np.ndarray:
    """Straight joint-space line from ``q0`` to an IK solution of the final mean."""
    mu, var = _check_target(target)
    q0 = chain.clamp(np.asarray(q0, dtype=float))
    qT = ik_solve(chain, mu[-1], var[-1], q_init=q0, strict=False).q
    s = np.linspace(0.0, 1.0, len(mu))[:, None]
    return q0 + s * (qT - q0)


def optimize_path(chain: KinematicChain, target: DiGaP, q0, lam_e: float = LAMBDA_E,
                  lam_q: float = LAMBDA_Q, z: float = DEFAULT_Z, rho0: float = RHO0,
                  rho_growth: float = RHO_GROWTH, max_outer: int = MAX_OUTER,
                  tol: float = FEAS_TOL, Q_init=None, inner_maxiter: int = 3000) -> PathResult:
    """Joint path tracking ``target`` inside its z-sigma tube.

    Returns the feasible outer iterate (max violation <= ``tol``) with the
    lowest objective. Raises :class:`InfeasiblePathError` if none is found.
    """
    mu, var = _check_target(target)
    T, n = len(mu), chain.n
    w = var.max() / var
    bound = z * np.sqrt(var)
    Q = initial_path(chain, target, q0) if Q_init is None else chain.clamp(np.asarray(Q_init, dtype=float))
    bounds = list(zip(np.tile(chain.lower, T), np.tile(chain.upper, T)))

    lam_up = np.zeros((T, 6))
    lam_lo = np.zeros((T, 6))

    def parts(x):
        Qx = x.reshape(T, n)
        e, de = pose_error(chain, Qx, mu)
        dQ = np.diff(Qx, axis=0)
        f = lam_e * np.sum(w * e * e) + lam_q * np.sum(dQ * dQ)
        gq = np.zeros((T, n))
        gq[1:] += 2 * lam_q * dQ
        gq[:-1] -= 2 * lam_q * dQ
        ge = 2 * lam_e * w * e
        return Qx, e, de, f, ge, gq

    def lagrangian(x, rho):
        Qx, e, de, f, ge, gq = parts(x)
        c_up = e / bound - 1.0
        c_lo = -e / bound - 1.0
        a_up = np.maximum(0.0, c_up + lam_up / rho)
        a_lo = np.maximum(0.0, c_lo + lam_lo / rho)
        val = f + 0.5 * rho * (np.sum(a_up ** 2) + np.sum(a_lo ** 2))
        ge = ge + rho * (a_up - a_lo) / bound
        grad = gq + np.einsum("ti,tij->tj", ge, de)
        return val, grad.ravel()

    rho = rho0
    best = None
    history = []
    prev_viol = np.inf
    prev_f = None
    x = Q.ravel().copy()
    k = 0
    for k in range(1, max_outer + 1):
        sol = minimize(lagrangian, x, args=(rho,), jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": inner_maxiter, "ftol": 1e-15, "gtol": 1e-10, "maxcor": 20})
        x = sol.x
        Qx, e, _, f, _, _ = parts(x)
        viol = float(np.max(np.abs(e) - bound))
        history.append({"outer": k, "objective": float(f), "max_violation": viol, "rho": rho,
                        "inner_iterations": int(sol.nit)})
        accepted = viol <= tol and (best is None or f < best[1])
        history[-1]["accepted"] = bool(accepted)
        if accepted:
            best = (Qx.copy(), float(f), viol, k)
        lam_up = np.maximum(0.0, lam_up + rho * (e / bound - 1.0))
        lam_lo = np.maximum(0.0, lam_lo + rho * (-e / bound - 1.0))
        if viol <= tol and prev_f is not None and abs(prev_f - f) <= 1e-12 * max(1.0, abs(f)):
            break
        if max(viol, 0.0) > 0.25 * max(prev_viol, 0.0):
            rho *= rho_growth
        prev_viol, prev_f = viol, f

    if best is None:
        Qx = x.reshape(T, n)
        res = _result(chain, target, Qx, lam_e, lam_q, k, history, z)
        raise InfeasiblePathError(
            f"no iterate within the z = {z:g} tube (max violation {res.max_violation:.3g})",
            max_violation=res.max_violation, result=res)
    return _result(chain, target, best[0], lam_e, lam_q, k, history, z)


def _result(chain, target, Q, lam_e, lam_q, k, history, z):
    poses = chain.fk_pose(Q)
    viol = deviation(chain, target, Q, z)
    return PathResult(Q=Q, poses=poses, objective=path_objective(chain, target, Q, lam_e, lam_q),
                      nll=trajectory_nll(target, poses), max_violation=viol, feasible=viol <= FEAS_TOL,
                      outer_iterations=k, history=history)


def greedy_ik_path(chain: KinematicChain, target: DiGaP, q0, **ik_kwargs) -> np.ndarray:
    """Independent per-step IK, each warm-started from the previous solution."""
    mu, var = _check_target(target)
    q = chain.clamp(np.asarray(q0, dtype=float))
    Q = np.empty((len(mu), chain.n))
    for t in range(len(mu)):
        q = ik_solve(chain, mu[t], var[t], q_init=q, strict=False, **ik_kwargs).q
        Q[t] = q
    return Q


def step_likelihoods(target: DiGaP, poses) -> np.ndarray:
    """exp(-0.5 Mahalanobis^2) per step: the tube density relative to its peak."""
    mu, var = _check_target(target)
    L = POSE.log(mu, np.asarray(poses, dtype=float))
    return np.exp(-0.5 * np.sum(L * L / var, axis=1))


def mode_evidence(chain: KinematicChain, model: MiDiGaP, q0, q: float = 1.0, **opt_kwargs):
    """Optimise every mode; infeasible modes score 0, feasible ones their step-likelihood L_q score."""
    scores, results = [], []
    for g in model.modes:
        try:
            res = optimize_path(chain, g, q0, **opt_kwargs)
        except InfeasiblePathError as err:
            scores.append(0.0)
            results.append(err.result)
            continue
        scores.append(evidence_score(step_likelihoods(g, res.poses), q))
        results.append(res)
    return np.array(scores), results


def modal_update_from_optimization(chain: KinematicChain, model: MiDiGaP, q0, q: float = 1.0,
                                   **opt_kwargs):
    """Reweight mixture modes by how well ``chain`` can follow them."""
    scores, results = mode_evidence(chain, model, q0, q, **opt_kwargs)
    w = np.asarray(model.priors) * scores
    if w.sum() <= 0:
        raise InfeasibleEvidenceError("no mode can be followed by this kinematic chain")
    return model.with_priors(w / w.sum()), scores, results


def chain_update_from_optimization(chain: KinematicChain, skills: SkillChain, q0, q: float = 1.0,
                                   **opt_kwargs):
    """Evidence for every (skill, mode); each scales its incoming transitions.

    Skill 0 starts from ``q0``; later skills start from an IK solution of
    each mode's first mean, seeded with ``q0``.
    """
    out = skills
    all_scores = []
    for j, model in enumerate(skills.skills):
        scores = np.zeros(model.M)
        for l, g in enumerate(model.modes):
            start = q0
            if j > 0:
                try:
                    start = ik_solve(chain, g.mu[0], g.var[0], q_init=q0).q
                except IKNotConvergedError as err:
                    start = err.result.q
            try:
                res = optimize_path(chain, g, start, **opt_kwargs)
            except InfeasiblePathError:
                continue
            scores[l] = evidence_score(step_likelihoods(g, res.poses), q)
        peak = scores.max()
        for l in range(model.M):
            out = apply_to_chain(out, j, l, scores[l] / peak if peak > 0 else 0.0)
        all_scores.append(scores)
    return out, all_scores
