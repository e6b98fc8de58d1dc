"""Serial revolute chains: forward kinematics, geometric Jacobians, pose errors."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .. import kernels
from ..errors import SpecMismatchError
from ..manifold import ManifoldSpec

POSE = ManifoldSpec.pose()
BUILTIN_CHAINS = ("planar3", "ur5", "franka7")


def rot_to_quat(R) -> np.ndarray:
    """Batched rotation matrices (..., 3, 3) to (w, x, y, z) quaternions with w >= 0."""
    R = np.asarray(R, dtype=float)
    xyzw = Rotation.from_matrix(R.reshape(-1, 3, 3)).as_quat()
    q = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    q[q[:, 0] < 0] *= -1.0
    return q.reshape(R.shape[:-2] + (4,))


def transform(xyz=(0.0, 0.0, 0.0), rpy=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Homogeneous transform: translate by ``xyz`` after fixed-axis roll-pitch-yaw rotation."""
    M = np.eye(4)
    M[:3, :3] = Rotation.from_euler("xyz", rpy).as_matrix()
    M[:3, 3] = xyz
    return M


@dataclass(frozen=True, eq=False)
class KinematicChain:
    """Revolute joints ``i`` with frames ``origins[i]`` (relative to the previous joint) and axes in that frame."""

    axes: np.ndarray
    origins: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ee: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = ""
    joint_names: tuple = ()

    def __post_init__(self):
        axes = np.asarray(self.axes, dtype=float).reshape(-1, 3)
        n = axes.shape[0]
        norms = np.linalg.norm(axes, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("joint axes must be unit vectors")
        origins = np.asarray(self.origins, dtype=float).reshape(n, 4, 4)
        lo = np.asarray(self.lower, dtype=float).reshape(n)
        hi = np.asarray(self.upper, dtype=float).reshape(n)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi)) and np.all(lo < hi)):
            raise ValueError("joint limits must be finite with lower < upper")
        for k, v in (("axes", axes), ("origins", origins), ("lower", lo), ("upper", hi),
                     ("ee", np.asarray(self.ee, dtype=float))):
            v.setflags(write=False)
            object.__setattr__(self, k, v)
        names = tuple(self.joint_names) or tuple(f"joint{i + 1}" for i in range(n))
        object.__setattr__(self, "joint_names", names)

    @property
    def n(self) -> int:
        return self.axes.shape[0]

    def _Q(self, q):
        Q = np.asarray(q, dtype=float)
        single = Q.ndim == 1
        Q = np.atleast_2d(Q)
        if Q.shape[1] != self.n:
            raise SpecMismatchError(f"chain {self.name or '?'} has {self.n} joints, got q of size {Q.shape[1]}")
        return Q, single

    def fk_full(self, q):
        """Positions (T, 3), rotation matrices (T, 3, 3) and geometric Jacobians (T, 6, n)."""
        Q, _ = self._Q(q)
        return kernels.chain_fk(self.axes, self.origins, self.ee, Q)

    def fk_pose(self, q) -> np.ndarray:
        """End-effector pose(s) as (x, y, z, qw, qx, qy, qz) with qw >= 0."""
        Q, single = self._Q(q)
        pos, rot, _ = self.fk_full(Q)
        out = np.concatenate([pos, rot_to_quat(rot)], axis=1)
        return out[0] if single else out

    def fk_matrix(self, q) -> np.ndarray:
        Q, single = self._Q(q)
        pos, rot, _ = self.fk_full(Q)
        M = np.tile(np.eye(4), (len(Q), 1, 1))
        M[:, :3, :3] = rot
        M[:, :3, 3] = pos
        return M[0] if single else M

    def jacobian(self, q) -> np.ndarray:
        Q, single = self._Q(q)
        J = self.fk_full(Q)[2]
        return J[0] if single else J

    def clamp(self, q):
        return np.clip(q, self.lower, self.upper)

    def within_limits(self, q, tol=0.0) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def to_json(self) -> dict:
        joints = []
        for i in range(self.n):
            joints.append({
                "name": self.joint_names[i],
                "axis": self.axes[i].tolist(),
                "origin": self.origins[i].tolist(),
                "limits": [float(self.lower[i]), float(self.upper[i])],
            })
        return {"name": self.name, "joints": joints, "ee": self.ee.tolist()}

    @classmethod
    def from_json(cls, d) -> "KinematicChain":
        """Joint origins / ee may be 4x4 matrices or ``{"xyz": ..., "rpy": ...}`` records."""
        def tf(o):
            if isinstance(o, dict):
                return transform(o.get("xyz", (0, 0, 0)), o.get("rpy", (0, 0, 0)))
            return np.asarray(o, dtype=float)

        joints = d["joints"]
        return cls(
            axes=[j["axis"] for j in joints],
            origins=[tf(j["origin"]) for j in joints],
            lower=[j["limits"][0] for j in joints],
            upper=[j["limits"][1] for j in joints],
            ee=tf(d.get("ee", np.eye(4).tolist())),
            name=d.get("name", ""),
            joint_names=tuple(j.get("name", f"joint{i + 1}") for i, j in enumerate(joints)),
        )


def load_chain(name_or_path) -> KinematicChain:
    """A built-in chain by name (planar3, ur5, franka7) or a chain JSON file."""
    if isinstance(name_or_path, KinematicChain):
        return name_or_path
    if str(name_or_path) in BUILTIN_CHAINS:
        text = resources.files("midigap.vapor").joinpath("chains", f"{name_or_path}.json").read_text()
    else:
        text = Path(name_or_path).read_text()
    return KinematicChain.from_json(json.loads(text))


def fk(chain: KinematicChain, q) -> np.ndarray:
    return chain.fk_pose(q)


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    return chain.jacobian(q)


# -- pose errors -----------------------------------------------------------


def _skew(v):
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    o = np.zeros_like(x)
    return np.stack([np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)], -2)


def right_jacobian_inv(phi) -> np.ndarray:
    """Inverse right Jacobian of SO(3) at rotation vectors ``phi`` (..., 3)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)[..., None, None]
    K = _skew(phi)
    small = theta < 1e-6
    th = np.where(small, 1.0, theta)
    coef = np.where(small, 1.0 / 12.0 + theta ** 2 / 720.0,
                    1.0 / th ** 2 - (1.0 + np.cos(th)) / (2.0 * th * np.sin(th)))
    return np.eye(3) + 0.5 * K + coef * (K @ K)


def pose_error(chain: KinematicChain, Q, mu) -> tuple[np.ndarray, np.ndarray]:
    """Errors ``e_t = Log_{mu_t}(fk(q_t))`` (T, 6) and their Jacobians de/dq (T, 6, n).

    Position rows are ``x(q) - x_des``; rotation rows are the body-frame
    rotation vector of ``R_des^T R(q)``. Both are invariant to the sign of
    the target quaternion.
    """
    Q, _ = chain._Q(Q)
    mu = np.atleast_2d(mu)
    pos, rot, J = chain.fk_full(Q)
    xi = np.concatenate([pos, rot_to_quat(rot)], axis=1)
    e = POSE.log(mu, xi)
    de = np.empty_like(J)
    de[:, :3] = J[:, :3]
    # d(Log(R_des^T R)) = Jr^{-1}(e_r) R^T omega
    de[:, 3:] = right_jacobian_inv(e[:, 3:]) @ np.swapaxes(rot, 1, 2) @ J[:, 3:]
    return e, de
