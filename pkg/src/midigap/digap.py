"""Discrete-time Gaussian processes: fitting, prediction and frame fusion.

A DiGaP is a length-T sequence of Riemannian Gaussians with diagonal
tangent-space covariance, one per trajectory step. Task-parameterised
models keep one DiGaP per coordinate frame and fuse them with a product of
Gaussians once concrete frame poses are known.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import AntipodalError, ConvergenceError, InsufficientDemosError, SpecMismatchError
from .manifold import ManifoldPoint, ManifoldSpec

VAR_FLOOR = 1e-8
DEFAULT_RATE_HZ = 20.0
FUSION_TOL = 1e-10
FUSION_MAX_ITER = 100
GRIPPER_THRESHOLD = 0.5


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Rotation matrix to a unit quaternion with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def quat_to_matrix(q):
    return _quat_to_matrix(np.asarray(q, dtype=float) / np.linalg.norm(q))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A rigid frame pose: rotation ``quaternion`` (w, x, y, z) then translation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(3)
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        q = q / np.linalg.norm(q)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quaternion", -q if q[0] < 0 else q)

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M[:3, 3], matrix_to_quat(M[:3, :3]))

    @property
    def rotation(self) -> np.ndarray:
        return _quat_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.position
        return M

    def inverse(self) -> "RigidTransform":
        R = self.rotation
        qi = self.quaternion * np.array([1.0, -1.0, -1.0, -1.0])
        return RigidTransform(-R.T @ self.position, qi)

    def apply_pose(self, coords) -> np.ndarray:
        """Map pose coordinates (..., 7+) from this frame into its parent."""
        coords = np.array(coords, dtype=float, copy=True)
        coords[..., :3] = coords[..., :3] @ self.rotation.T + self.position
        q = kernels.quat_mul(np.broadcast_to(self.quaternion, coords[..., 3:7].shape), coords[..., 3:7])
        q = np.where(q[..., :1] < 0.0, -q, q)
        coords[..., 3:7] = q
        return coords

    def to_json(self):
        return {"position": self.position.tolist(), "quaternion": self.quaternion.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["position"], d["quaternion"])


@dataclass(frozen=True, eq=False)
class Trajectory:
    spec: ManifoldSpec
    coords: np.ndarray
    aux: np.ndarray | None = None
    demo_id: str = ""

    def __post_init__(self):
        c = self.spec.check_shape(self.coords)
        if c.ndim != 2 or c.shape[0] < 2:
            raise ValueError("a trajectory needs at least two steps")
        object.__setattr__(self, "coords", c)
        if self.aux is not None:
            a = np.asarray(self.aux, dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            if a.shape[0] != c.shape[0]:
                raise ValueError("aux channels must have one row per step")
            object.__setattr__(self, "aux", a)

    def __len__(self):
        return self.coords.shape[0]

    @property
    def points(self) -> list[ManifoldPoint]:
        return [ManifoldPoint(self.spec, c) for c in self.coords]

    def gripper_actions(self) -> np.ndarray:
        """Binary actuation commands from the auxiliary channels."""
        if self.aux is None:
            raise ValueError("trajectory has no auxiliary channels")
        return self.aux >= GRIPPER_THRESHOLD


def _resample_indices(T, T_target):
    if T_target == 1:
        s = np.array([(T - 1) / 2.0])
    else:
        s = np.arange(T_target) * (T - 1) / (T_target - 1)
    i0 = np.minimum(np.floor(s).astype(int), T - 2)
    return i0, s - i0


def resample_coords(spec: ManifoldSpec, coords, T_target: int) -> np.ndarray:
    """Geodesic index-space resampling of a (T, ambient) array.

    ``T_target == 1`` returns the (interpolated) midpoint; callers that need
    a proper trajectory validate ``T_target >= 2`` themselves.
    """
    T = coords.shape[0]
    if T_target == T:
        return coords.copy()
    i0, frac = _resample_indices(T, T_target)
    a, b = coords[i0], coords[i0 + 1]
    out = spec.exp(a, frac[:, None] * spec.log(a, b))
    out[frac == 0.0] = a[frac == 0.0]
    out[frac == 1.0] = b[frac == 1.0]
    return out


def _resample_linear(x, T_target):
    i0, frac = _resample_indices(x.shape[0], T_target)
    return x[i0] + frac[:, None] * (x[i0 + 1] - x[i0])


def resample_to_length(traj: Trajectory, T_target: int) -> Trajectory:
    if T_target < 2:
        raise ValueError(f"T_target must be >= 2, got {T_target}")
    coords = resample_coords(traj.spec, traj.coords, T_target)
    aux = None if traj.aux is None else _resample_linear(traj.aux, T_target)
    return Trajectory(traj.spec, coords, aux, traj.demo_id)


def mean_length(demos: Sequence[Trajectory]) -> int:
    # round half up; Python's round() is banker's rounding
    return int(np.floor(np.mean([len(d) for d in demos]) + 0.5))


@dataclass(frozen=True, eq=False)
class DiGaP:
    spec: ManifoldSpec
    mu: np.ndarray
    var: np.ndarray
    sample_rate_hz: float = DEFAULT_RATE_HZ
    aux_mu: np.ndarray | None = None
    aux_var: np.ndarray | None = None

    def __post_init__(self):
        mu = self.spec.check_shape(self.mu)
        var = self.spec.check_shape(self.var, "tangent")
        if mu.ndim != 2 or var.shape[0] != mu.shape[0]:
            raise ValueError("mu and var must both have one row per step")
        if np.any(~(var > 0)):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "var", var)

    @property
    def T(self) -> int:
        return self.mu.shape[0]

    @property
    def steps(self):
        return [(ManifoldPoint(self.spec, m), v) for m, v in zip(self.mu, self.var)]

    def resampled(self, T_target: int) -> "DiGaP":
        """Same process on a different step grid (means geodesically, variances linearly)."""
        if T_target == self.T:
            return self
        aux_mu = None if self.aux_mu is None else _resample_linear(self.aux_mu, T_target)
        aux_var = None if self.aux_var is None else _resample_linear(self.aux_var, T_target)
        return replace(
            self,
            mu=resample_coords(self.spec, self.mu, T_target),
            var=_resample_linear(self.var, T_target),
            aux_mu=aux_mu,
            aux_var=aux_var,
        )


def _check_demos(demos):
    if len(demos) < 2:
        raise InsufficientDemosError(f"fitting needs at least 2 demonstrations, got {len(demos)}")
    spec = demos[0].spec
    if any(d.spec != spec for d in demos):
        raise SpecMismatchError("demonstrations live on different manifolds")
    has_aux = [d.aux is not None for d in demos]
    if any(has_aux) and not all(has_aux):
        raise ValueError("either all or none of the demonstrations carry aux channels")
    return spec


def fit(demos: Sequence[Trajectory], sample_rate_hz: float = DEFAULT_RATE_HZ,
        var_floor: float = VAR_FLOOR, length: int | None = None) -> DiGaP:
    """Fit a DiGaP: per-step Fréchet mean and diagonal tangent covariance.

    Demonstrations are first resampled to their rounded mean length (or to
    ``length``). Variances use the N-1 divisor and are floored at
    ``var_floor`` so precisions stay finite.
    """
    spec = _check_demos(demos)
    N = len(demos)
    T = mean_length(demos) if length is None else int(length)
    X = np.stack([resample_coords(spec, d.coords, T) for d in demos], axis=1)  # (T, N, amb)
    try:
        mu, _ = spec.frechet_mean(X)
    except ConvergenceError as exc:
        raise ConvergenceError(f"per-step Fréchet mean failed: {exc}", last=exc.last) from None
    mu = spec.canonicalize(mu)
    L = spec.log(mu[:, None, :], X)
    var = np.maximum(np.sum(L * L, axis=1) / (N - 1), var_floor)
    aux_mu = aux_var = None
    if demos[0].aux is not None:
        A = np.stack([_resample_linear(d.aux, T) for d in demos], axis=1)
        aux_mu = A.mean(axis=1)
        aux_var = np.maximum(A.var(axis=1, ddof=1), var_floor)
    return DiGaP(spec, mu, var, sample_rate_hz, aux_mu, aux_var)


def predict(model: DiGaP) -> Trajectory:
    """Most likely trajectory: the sequence of step means."""
    return Trajectory(model.spec, model.mu.copy(), None if model.aux_mu is None else model.aux_mu.copy())


def _require_pose(spec):
    if not spec.is_pose:
        raise SpecMismatchError(f"frame transforms need the R^3 x S^3 pose manifold, got {spec}")


def transform_to_world(model: DiGaP, frame_pose: RigidTransform) -> DiGaP:
    """Express a frame-local model in the frame's parent (world) coordinates."""
    _require_pose(model.spec)
    R = frame_pose.rotation
    mu = frame_pose.apply_pose(model.mu)
    var = model.var.copy()
    # diag(R diag(v) R^T)_i = sum_j R_ij^2 v_j
    var[:, :3] = model.var[:, :3] @ (R * R).T
    return replace(model, mu=mu, var=var)


def to_frame(traj: Trajectory, frame_pose: RigidTransform) -> Trajectory:
    """Express a world-frame pose trajectory relative to ``frame_pose``."""
    _require_pose(traj.spec)
    return Trajectory(traj.spec, frame_pose.inverse().apply_pose(traj.coords), traj.aux, traj.demo_id)


def _fuse_euclidean(mus, vars_, mask):
    prec = np.where(mask[..., None], 1.0 / vars_, 0.0)
    total = prec.sum(axis=0)
    return (prec * mus).sum(axis=0) / total, 1.0 / total


def fuse_product(models: Sequence[DiGaP], active=None) -> DiGaP:
    """Product of Gaussians, step by step and dimension by dimension.

    Euclidean coordinates use the closed form (precisions add). Each
    quaternion block is fused by tangent-space fixed-point iteration,
    started at the input with the smallest total orientation variance.
    ``active`` is an optional (n_models, T) boolean mask; inactive models
    contribute no precision at that step.
    """
    if not models:
        raise ValueError("fuse_product needs at least one model")
    spec, T = models[0].spec, models[0].T
    for m in models[1:]:
        if m.spec != spec:
            raise SpecMismatchError("cannot fuse models on different manifolds")
        if m.T != T:
            raise SpecMismatchError(f"cannot fuse models of length {m.T} and {T}")
    K = len(models)
    mask = np.ones((K, T), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if mask.shape != (K, T):
        raise ValueError(f"active mask must have shape {(K, T)}")
    if not mask.any(axis=0).all():
        raise ValueError("every step needs at least one active model")
    if K == 1:
        return models[0]

    M = np.stack([m.mu for m in models])   # (K, T, amb)
    V = np.stack([m.var for m in models])  # (K, T, tan)
    mu = np.empty((T, spec.ambient_dim))
    var = np.empty((T, spec.tangent_dim))
    e_amb, e_tan = spec.euclid_ambient, spec.euclid_tangent
    mu[:, e_amb], var[:, e_tan] = _fuse_euclidean(M[..., e_amb], V[..., e_tan], mask)

    for qa, qt in zip(spec.quat_ambient, spec.quat_tangent):
        Q = M[..., qa]                                        # (K, T, 4)
        W = np.where(mask[..., None], 1.0 / V[..., qt], 0.0)  # (K, T, 3)
        wsum = W.sum(axis=0)
        score = np.where(mask, V[..., qt].sum(axis=-1), np.inf)
        cur = Q[np.argmin(score, axis=0), np.arange(T)]       # (T, 4)
        for _ in range(FUSION_MAX_ITER):
            base = np.broadcast_to(cur, Q.shape).reshape(-1, 4)
            logs, _ = kernels.quat_log(base, Q.reshape(-1, 4))
            dots = np.abs(np.einsum("ktd,td->kt", Q, cur))
            if np.any(mask & (dots < kernels.ANTIPODAL_TOL)):
                raise AntipodalError("fusion inputs are 180 degrees apart")
            step = (W * logs.reshape(K, T, 3)).sum(axis=0) / wsum
            cur = kernels.quat_exp(cur, step)
            if np.max(np.linalg.norm(step, axis=1)) < FUSION_TOL:
                break
        else:
            raise ConvergenceError("orientation fusion did not converge", last=cur)
        mu[:, qa] = cur
        var[:, qt] = 1.0 / wsum

    aux_mu = aux_var = None
    if all(m.aux_mu is not None for m in models):
        aux_mu, aux_var = _fuse_euclidean(
            np.stack([m.aux_mu for m in models]), np.stack([m.aux_var for m in models]), mask
        )
    return DiGaP(spec, mu, var, models[0].sample_rate_hz, aux_mu, aux_var)


@dataclass(frozen=True, eq=False)
class FramedDiGaP:
    """Per-frame DiGaPs of one skill, with optional active step windows."""

    models: Mapping[str, DiGaP]
    windows: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        if not self.models:
            raise ValueError("FramedDiGaP needs at least one frame model")
        first = next(iter(self.models.values()))
        for name, m in self.models.items():
            if m.T != first.T or m.spec != first.spec:
                raise SpecMismatchError(f"frame model {name!r} disagrees in length or manifold")

    @property
    def T(self) -> int:
        return next(iter(self.models.values())).T

    def active_mask(self, frames: Sequence[str]) -> np.ndarray:
        mask = np.ones((len(frames), self.T), dtype=bool)
        for i, f in enumerate(frames):
            if f in self.windows:
                start, stop = self.windows[f]
                mask[i] = False
                mask[i, start:stop] = True
        return mask


def fit_framed(demos: Sequence[Trajectory], frame_poses: Sequence[Mapping[str, RigidTransform]],
               windows: Mapping[str, tuple] | None = None, **fit_kwargs) -> FramedDiGaP:
    """Fit one DiGaP per frame on the demonstrations expressed in that frame.

    ``frame_poses[n]`` maps frame ids to the world pose of each frame during
    demonstration ``n``.
    """
    if len(frame_poses) != len(demos):
        raise ValueError("need one frame-pose map per demonstration")
    names = sorted(frame_poses[0])
    if any(sorted(fp) != names for fp in frame_poses):
        raise ValueError("all demonstrations must provide the same frames")
    models = {}
    for name in names:
        local = [to_frame(d, fp[name]) for d, fp in zip(demos, frame_poses)]
        models[name] = fit(local, **fit_kwargs)
    return FramedDiGaP(models, dict(windows or {}))


def predict_world(framed: FramedDiGaP, frame_poses: Mapping[str, RigidTransform]) -> DiGaP:
    """Transform every frame model to the given poses and fuse the active ones."""
    names = sorted(framed.models)
    missing = [n for n in names if n not in frame_poses]
    if missing:
        raise ValueError(f"missing poses for frames {missing}")
    world = [transform_to_world(framed.models[n], frame_poses[n]) for n in names]
    return fuse_product(world, framed.active_mask(names))
