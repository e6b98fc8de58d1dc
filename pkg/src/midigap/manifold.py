"""Riemannian primitives on products of Euclidean spaces and unit quaternions.

Points are stored as flat ambient coordinate vectors, quaternion blocks in
(w, x, y, z) order. Tangent vectors use 3 coordinates per quaternion block:
the rotation vector (angle times axis) of ``base^-1 * p``. All array-level
methods on :class:`ManifoldSpec` broadcast over leading dimensions, which is
what the fitting code uses; :class:`ManifoldPoint` / :class:`TangentVector`
and the module-level functions are the checked, single-point interface.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import kernels
from .errors import AntipodalError, ConvergenceError, SpecMismatchError

FRECHET_TOL = 1e-10
FRECHET_MAX_ITER = 100
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class Euclidean:
    dim: int

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("Euclidean factor needs a positive dimension")

    ambient_dim = property(lambda self: self.dim)
    tangent_dim = property(lambda self: self.dim)


@dataclass(frozen=True)
class UnitQuaternion:
    ambient_dim = 4
    tangent_dim = 3


@dataclass(frozen=True)
class ManifoldSpec:
    factors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise ValueError("ManifoldSpec needs at least one factor")

    @classmethod
    def euclidean(cls, dim: int) -> "ManifoldSpec":
        return cls((Euclidean(dim),))

    @classmethod
    def pose(cls) -> "ManifoldSpec":
        """R^3 x S^3, the end-effector pose manifold."""
        return cls((Euclidean(3), UnitQuaternion()))

    @classmethod
    def quaternion(cls) -> "ManifoldSpec":
        return cls((UnitQuaternion(),))

    def power(self, n: int) -> "ManifoldSpec":
        """The n-fold product M^n (used to vectorize whole trajectories)."""
        return ManifoldSpec(self.factors * n)

    @property
    def is_pose(self) -> bool:
        return self.factors == (Euclidean(3), UnitQuaternion())

    @cached_property
    def ambient_dim(self) -> int:
        return sum(f.ambient_dim for f in self.factors)

    @cached_property
    def tangent_dim(self) -> int:
        return sum(f.tangent_dim for f in self.factors)

    @cached_property
    def _layout(self):
        e_amb, e_tan, q_amb, q_tan = [], [], [], []
        a = t = 0
        for f in self.factors:
            if isinstance(f, Euclidean):
                e_amb.extend(range(a, a + f.dim))
                e_tan.extend(range(t, t + f.dim))
            else:
                q_amb.append(list(range(a, a + 4)))
                q_tan.append(list(range(t, t + 3)))
            a += f.ambient_dim
            t += f.tangent_dim
        return (
            np.array(e_amb, dtype=np.int64),
            np.array(e_tan, dtype=np.int64),
            np.array(q_amb, dtype=np.int64).reshape(-1, 4),
            np.array(q_tan, dtype=np.int64).reshape(-1, 3),
        )

    @property
    def euclid_ambient(self) -> np.ndarray:
        return self._layout[0]

    @property
    def euclid_tangent(self) -> np.ndarray:
        return self._layout[1]

    @property
    def quat_ambient(self) -> np.ndarray:
        """(n_quat, 4) ambient indices of each quaternion block."""
        return self._layout[2]

    @property
    def quat_tangent(self) -> np.ndarray:
        return self._layout[3]

    @property
    def quat_offsets(self) -> np.ndarray:
        return np.ascontiguousarray(self._layout[2][:, 0])

    def tangent_index_of_ambient(self, idx) -> np.ndarray:
        """Map ambient indices of Euclidean coordinates to tangent indices."""
        e_amb, e_tan = self._layout[0], self._layout[1]
        lookup = dict(zip(e_amb.tolist(), e_tan.tolist()))
        try:
            return np.array([lookup[int(i)] for i in np.atleast_1d(idx)], dtype=np.int64)
        except KeyError as exc:
            raise SpecMismatchError(f"ambient index {exc.args[0]} is not a Euclidean coordinate") from None

    def to_json(self) -> list:
        return [{"euclidean": f.dim} if isinstance(f, Euclidean) else "quaternion" for f in self.factors]

    @classmethod
    def from_json(cls, data) -> "ManifoldSpec":
        factors = []
        for item in data:
            if item == "quaternion":
                factors.append(UnitQuaternion())
            else:
                factors.append(Euclidean(int(item["euclidean"])))
        return cls(tuple(factors))

    # -- array level ------------------------------------------------------

    def check_shape(self, x, what="point"):
        x = np.asarray(x, dtype=float)
        want = self.ambient_dim if what == "point" else self.tangent_dim
        if x.shape[-1] != want:
            raise SpecMismatchError(f"{what} has {x.shape[-1]} coordinates, expected {want}")
        return x

    def canonicalize(self, x) -> np.ndarray:
        """Normalise quaternion blocks and flip them to w >= 0."""
        x = np.array(x, dtype=float, copy=True)
        qa = self.quat_ambient
        if len(qa):
            q = x[..., qa]
            q /= np.linalg.norm(q, axis=-1, keepdims=True)
            q = np.where(q[..., :1] < 0.0, -q, q)
            x[..., qa] = q
        return x

    def log(self, base, p) -> np.ndarray:
        base, p = np.broadcast_arrays(np.asarray(base, dtype=float), np.asarray(p, dtype=float))
        lead = base.shape[:-1]
        out = np.empty(lead + (self.tangent_dim,))
        e_amb, e_tan, q_amb, q_tan = self._layout
        out[..., e_tan] = p[..., e_amb] - base[..., e_amb]
        if len(q_amb):
            qb = base[..., q_amb].reshape(-1, 4)
            qp = p[..., q_amb].reshape(-1, 4)
            v, bad = kernels.quat_log(qb, qp)
            if bad >= 0:
                raise AntipodalError(
                    "log undefined: quaternions are 180 degrees apart (antipodal on the rotation double cover)"
                )
            out[..., q_tan] = v.reshape(lead + (len(q_amb), 3))
        return out

    def exp(self, base, v) -> np.ndarray:
        base, v = np.asarray(base, dtype=float), np.asarray(v, dtype=float)
        lead = np.broadcast_shapes(base.shape[:-1], v.shape[:-1])
        base = np.broadcast_to(base, lead + base.shape[-1:])
        v = np.broadcast_to(v, lead + v.shape[-1:])
        out = np.empty(lead + (self.ambient_dim,))
        e_amb, e_tan, q_amb, q_tan = self._layout
        out[..., e_amb] = base[..., e_amb] + v[..., e_tan]
        if len(q_amb):
            qb = base[..., q_amb].reshape(-1, 4)
            vq = v[..., q_tan].reshape(-1, 3)
            out[..., q_amb] = kernels.quat_exp(qb, vq).reshape(lead + (len(q_amb), 4))
        return out

    def dist(self, a, b) -> np.ndarray:
        """Geodesic distance; well defined (= pi per block) even at the cut locus."""
        a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        e_amb, _, q_amb, _ = self._layout
        d2 = np.sum((a[..., e_amb] - b[..., e_amb]) ** 2, axis=-1)
        if len(q_amb):
            ang = kernels.quat_angle(a[..., q_amb].reshape(-1, 4), b[..., q_amb].reshape(-1, 4))
            d2 = d2 + np.sum(ang.reshape(a.shape[:-1] + (len(q_amb),)) ** 2, axis=-1)
        return np.sqrt(d2)

    def frechet_mean(self, X, weights=None, tol=FRECHET_TOL, max_iter=FRECHET_MAX_ITER, init=None):
        """Batched weighted Fréchet mean.

        ``X`` has shape (..., N, ambient); the mean is taken over the N axis
        independently for every leading index. Initialised at the first
        sample unless ``init`` is given. Returns ``(mean, iterations)``.
        """
        X = np.asarray(X, dtype=float)
        if weights is None:
            w = np.full(X.shape[:-1], 1.0 / X.shape[-2])
        else:
            w = np.broadcast_to(np.asarray(weights, dtype=float), X.shape[:-1])
            w = w / np.sum(w, axis=-1, keepdims=True)
        mu = np.array(X[..., 0, :] if init is None else init, dtype=float)
        if not len(self.quat_ambient):
            # Euclidean: the fixed point is reached in one step; compute it directly.
            return np.einsum("...n,...nd->...d", w, X), 1
        mu = self.canonicalize(mu)
        for it in range(1, max_iter + 1):
            step = np.einsum("...n,...nd->...d", w, self.log(mu[..., None, :], X))
            mu = self.exp(mu, step)
            if np.max(np.linalg.norm(step, axis=-1), initial=0.0) < tol:
                grad = np.einsum("...n,...nd->...d", w, self.log(mu[..., None, :], X))
                if np.max(np.linalg.norm(grad, axis=-1), initial=0.0) < tol:
                    return mu, it
        raise ConvergenceError(f"Fréchet mean did not converge in {max_iter} iterations", last=mu)


# -- point-level interface ------------------------------------------------


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    spec: ManifoldSpec
    coords: np.ndarray

    def __post_init__(self):
        c = self.spec.check_shape(self.coords, "point").copy()
        qa = self.spec.quat_ambient
        if len(qa):
            norms = np.linalg.norm(c[qa], axis=-1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOL):
                raise ValueError(f"quaternion blocks must have unit norm, got {norms}")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __repr__(self):
        return f"ManifoldPoint({np.array2string(self.coords, precision=6)})"


@dataclass(frozen=True, eq=False)
class TangentVector:
    base: ManifoldPoint
    coords: np.ndarray

    def __post_init__(self):
        c = self.base.spec.check_shape(self.coords, "tangent").copy()
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)


def point(spec: ManifoldSpec, coords) -> ManifoldPoint:
    """Build a point, normalising and sign-canonicalising quaternion blocks."""
    return ManifoldPoint(spec, spec.canonicalize(spec.check_shape(coords)))


def _same_spec(a: ManifoldPoint, b: ManifoldPoint):
    if a.spec != b.spec:
        raise SpecMismatchError(f"points live on different manifolds: {a.spec} vs {b.spec}")


def log_map(base: ManifoldPoint, p: ManifoldPoint) -> TangentVector:
    _same_spec(base, p)
    return TangentVector(base, base.spec.log(base.coords, p.coords))


def exp_map(base: ManifoldPoint, v: TangentVector) -> ManifoldPoint:
    coords = np.asarray(v.coords if isinstance(v, TangentVector) else v, dtype=float)
    if coords.shape != (base.spec.tangent_dim,):
        raise SpecMismatchError(f"tangent vector of shape {coords.shape}, expected ({base.spec.tangent_dim},)")
    return ManifoldPoint(base.spec, base.spec.exp(base.coords, coords))


def geodesic_distance(a: ManifoldPoint, b: ManifoldPoint) -> float:
    _same_spec(a, b)
    return float(a.spec.dist(a.coords, b.coords))


def frechet_mean(points: Sequence[ManifoldPoint], tol: float = FRECHET_TOL,
                 max_iter: int = FRECHET_MAX_ITER) -> ManifoldPoint:
    """Minimiser of the summed squared geodesic distances to ``points``.

    Fixed-point iteration ``mu <- Exp(mu, mean_i Log(mu, z_i))`` started at
    the first point. Raises :class:`ConvergenceError` (carrying the last
    iterate) if the tangent mean has not dropped below ``tol`` after
    ``max_iter`` iterations.
    """
    if not points:
        raise ValueError("frechet_mean needs at least one point")
    spec = points[0].spec
    for p in points[1:]:
        _same_spec(points[0], p)
    X = np.stack([p.coords for p in points])
    try:
        mu, _ = spec.frechet_mean(X, tol=tol, max_iter=max_iter)
    except ConvergenceError as exc:
        raise ConvergenceError(str(exc), last=ManifoldPoint(spec, spec.canonicalize(exc.last))) from None
    return ManifoldPoint(spec, spec.canonicalize(mu))
