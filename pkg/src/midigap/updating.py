"""Inference-time updates of DiGaP mixtures under spatial evidence.

Convex evidence reshapes each step Gaussian by Monte-Carlo moment matching
and reweights modes by how much of their mass survives. Modal evidence only
reweights. Regions are defined on a subset of the ambient Euclidean
coordinates (by default the first three, i.e. the position of a pose).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage, optimize, special
from scipy.stats import qmc

from .digap import VAR_FLOOR, DiGaP
from .errors import InfeasibleChainError, InfeasibleEvidenceError
from .mixture import MiDiGaP, SkillChain
from .manifold import ManifoldSpec

log = logging.getLogger(__name__)

DEFAULT_Z = 1.96
DEFAULT_SAMPLES = 1000
MIN_SAMPLES = 100
UNIT_TOL = 1e-9


def _vec(x, name):
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1 or not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be a finite vector")
    return a


def _unit(n):
    n = _vec(n, "normal")
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise ValueError(f"normal must have unit length, |n| = {np.linalg.norm(n)}")
    return n


def _positive(x, name):
    if not x > 0:
        raise ValueError(f"{name} must be positive, got {x}")
    return float(x)


class Constraint:
    """A region R of the constrained coordinates.

    ``contains`` decides membership for an (n, k) array of points;
    ``ci_intersects`` decides whether the z-scaled ellipsoid of a diagonal
    Gaussian (mean ``mu``, standard deviations ``sd``) meets R.
    """

    convex: bool = True
    kind: str = ""
    dims: tuple | None = None

    @property
    def ndim(self) -> int:
        raise NotImplementedError

    def contains(self, X) -> np.ndarray:
        raise NotImplementedError

    def ci_intersects(self, mu, sd, z: float = DEFAULT_Z) -> bool:
        return _ci_by_sampling(self, mu, sd, z)

    def to_json(self) -> dict:
        raise TypeError(f"{type(self).__name__} constraints cannot be serialized")


def _ci_by_sampling(c: Constraint, mu, sd, z, n=4096):
    """Probe the z-ellipsoid (surface and interior) with a fixed random cloud."""
    mu, sd = np.asarray(mu, float), np.asarray(sd, float)
    if c.contains(mu[None])[0]:
        return True
    rng = np.random.default_rng(0)
    u = rng.normal(size=(n, mu.size))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(size=(n, 1)) ** (1.0 / mu.size)
    pts = mu + z * sd * np.concatenate([u, u * r])
    return bool(np.any(c.contains(pts)))


@dataclass(frozen=True, eq=False)
class ReachSphere(Constraint):
    """Points within radius ``r`` of ``b``."""

    b: np.ndarray
    r: float
    dims: tuple | None = None
    kind = "reach_sphere"
    convex = True

    def __post_init__(self):
        object.__setattr__(self, "b", _vec(self.b, "b"))
        object.__setattr__(self, "r", _positive(self.r, "radius"))

    @property
    def ndim(self):
        return self.b.size

    def contains(self, X):
        return np.linalg.norm(np.asarray(X) - self.b, axis=-1) <= self.r

    def ci_intersects(self, mu, sd, z=DEFAULT_Z):
        # distance from b to the nearest corner region of the z-box around mu
        gap = np.maximum(np.abs(np.asarray(mu) - self.b) - z * np.asarray(sd), 0.0)
        return bool(np.linalg.norm(gap) <= self.r)

    def to_json(self):
        return {"kind": self.kind, "b": self.b.tolist(), "r": self.r, "dims": _dims_json(self.dims)}


@dataclass(frozen=True, eq=False)
class HalfSpace(Constraint):
    """Points at least ``d_safe`` in front of the plane through ``p`` with outward normal ``n``."""

    p: np.ndarray
    n: np.ndarray
    d_safe: float = 0.0
    dims: tuple | None = None
    kind = "half_space"
    convex = True

    def __post_init__(self):
        object.__setattr__(self, "p", _vec(self.p, "p"))
        object.__setattr__(self, "n", _unit(self.n))
        if self.p.size != self.n.size:
            raise ValueError("p and n must have the same dimension")
        if self.d_safe < 0:
            raise ValueError("d_safe must be non-negative")

    @property
    def ndim(self):
        return self.p.size

    def margin(self, X):
        return (np.asarray(X) - self.p) @ self.n - self.d_safe

    def contains(self, X):
        return self.margin(X) >= 0.0

    def ci_intersects(self, mu, sd, z=DEFAULT_Z):
        # support function of the ellipsoid along n
        reach = z * np.sqrt(np.sum((self.n * np.asarray(sd)) ** 2))
        return bool(self.margin(mu) + reach >= 0.0)

    def to_json(self):
        return {"kind": self.kind, "p": self.p.tolist(), "n": self.n.tolist(),
                "d_safe": self.d_safe, "dims": _dims_json(self.dims)}


@dataclass(frozen=True, eq=False)
class HalfSpaceSet(Constraint):
    """Intersection of half-spaces sharing one safety distance.

    Obstacle points must be pairwise at least ``d_safe + d_uni`` apart so
    the feasible region stays connected.
    """

    planes: tuple
    d_safe: float = 0.0
    d_uni: float = 0.0
    dims: tuple | None = None
    kind = "half_space_set"
    convex = True

    def __post_init__(self):
        planes = tuple(HalfSpace(h.p, h.n, self.d_safe, self.dims) if isinstance(h, HalfSpace)
                       else HalfSpace(h[0], h[1], self.d_safe, self.dims) for h in self.planes)
        if not planes:
            raise ValueError("need at least one half-space")
        if len({h.ndim for h in planes}) != 1:
            raise ValueError("half-spaces must share a dimension")
        if self.d_uni < 0:
            raise ValueError("d_uni must be non-negative")
        need = self.d_safe + self.d_uni
        for i in range(len(planes)):
            for j in range(i + 1, len(planes)):
                if np.linalg.norm(planes[i].p - planes[j].p) < need:
                    raise ValueError(f"obstacle points {i} and {j} are closer than d_safe + d_uni = {need}")
        object.__setattr__(self, "planes", planes)

    @property
    def ndim(self):
        return self.planes[0].ndim

    def contains(self, X):
        return np.all([h.contains(X) for h in self.planes], axis=0)

    def ci_intersects(self, mu, sd, z=DEFAULT_Z):
        mu, sd = np.asarray(mu, float), np.asarray(sd, float)
        if not all(h.ci_intersects(mu, sd, z) for h in self.planes):
            return False
        if self.contains(mu[None])[0]:
            return True
        # smallest Mahalanobis radius reaching the polyhedron
        w = 1.0 / (sd * sd)
        cons = [{"type": "ineq", "fun": h.margin, "jac": (lambda x, h=h: h.n)} for h in self.planes]
        res = optimize.minimize(lambda x: np.sum(w * (x - mu) ** 2), mu,
                                jac=lambda x: 2 * w * (x - mu), constraints=cons, method="SLSQP",
                                options={"ftol": 1e-12, "maxiter": 200})
        feasible = all(h.margin(res.x) >= -1e-9 for h in self.planes)
        return bool(feasible and res.fun <= z * z * (1 + 1e-9))

    def to_json(self):
        return {"kind": self.kind, "planes": [{"p": h.p.tolist(), "n": h.n.tolist()} for h in self.planes],
                "d_safe": self.d_safe, "d_uni": self.d_uni, "dims": _dims_json(self.dims)}


@dataclass(frozen=True, eq=False)
class SelfCollision(Constraint):
    """Points at least ``d_min`` away from the base ``b`` (modal evidence)."""

    b: np.ndarray
    d_min: float
    dims: tuple | None = None
    kind = "self_collision"
    convex = False

    def __post_init__(self):
        object.__setattr__(self, "b", _vec(self.b, "b"))
        object.__setattr__(self, "d_min", _positive(self.d_min, "d_min"))

    @property
    def ndim(self):
        return self.b.size

    def contains(self, X):
        return np.linalg.norm(np.asarray(X) - self.b, axis=-1) >= self.d_min

    def ci_intersects(self, mu, sd, z=DEFAULT_Z):
        far = np.abs(np.asarray(mu) - self.b) + z * np.asarray(sd)
        return bool(np.linalg.norm(far) >= self.d_min)

    def to_json(self):
        return {"kind": self.kind, "b": self.b.tolist(), "d_min": self.d_min, "dims": _dims_json(self.dims)}


@dataclass(frozen=True, eq=False)
class Occupancy(Constraint):
    """Points whose interpolated occupancy is below ``tau`` (modal evidence).

    ``grid[i, j, k]`` is the occupancy at node ``origin + cell * (i, j, k)``;
    values between nodes are trilinear, outside the grid occupancy is 0.
    """

    grid: np.ndarray
    cell: float
    origin: np.ndarray
    tau: float = 0.5
    dims: tuple | None = None
    kind = "occupancy"
    convex = False

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        if g.ndim < 1 or np.any((g < 0) | (g > 1)):
            raise ValueError("occupancy grid values must lie in [0, 1]")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "origin", _vec(self.origin, "origin"))
        if self.origin.size != g.ndim:
            raise ValueError("origin must have one entry per grid axis")
        _positive(self.cell, "cell size")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")

    @property
    def ndim(self):
        return self.grid.ndim

    def occupancy(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = ((X - self.origin) / self.cell).T
        return ndimage.map_coordinates(self.grid, idx, order=1, mode="constant", cval=0.0)

    def contains(self, X):
        return self.occupancy(X) < self.tau

    def to_json(self):
        return {"kind": self.kind, "shape": list(self.grid.shape), "grid": self.grid.ravel().tolist(),
                "cell": self.cell, "origin": self.origin.tolist(), "tau": self.tau, "dims": _dims_json(self.dims)}


@dataclass(frozen=True, eq=False)
class Custom(Constraint):
    """Arbitrary membership predicate over an (n, k) array."""

    predicate: Callable
    k: int = 3
    convex: bool = False
    dims: tuple | None = None
    kind = "custom"

    @property
    def ndim(self):
        return self.k

    def contains(self, X):
        return np.asarray(self.predicate(np.asarray(X)), dtype=bool)


def _dims_json(dims):
    return None if dims is None else [int(d) for d in dims]


def constraint_from_json(d) -> Constraint:
    d = dict(d)
    kind = d.pop("kind")
    dims = d.pop("dims", None)
    dims = None if dims is None else tuple(dims)
    if kind == "reach_sphere":
        return ReachSphere(d["b"], d["r"], dims)
    if kind == "half_space":
        return HalfSpace(d["p"], d["n"], d.get("d_safe", 0.0), dims)
    if kind == "half_space_set":
        return HalfSpaceSet(tuple((h["p"], h["n"]) for h in d["planes"]), d.get("d_safe", 0.0),
                            d.get("d_uni", 0.0), dims)
    if kind == "self_collision":
        return SelfCollision(d["b"], d["d_min"], dims)
    if kind == "occupancy":
        grid = np.asarray(d["grid"], dtype=float).reshape(d["shape"])
        return Occupancy(grid, d["cell"], d["origin"], d.get("tau", 0.5), dims)
    raise ValueError(f"unknown constraint kind {kind!r}")


def constrained_dims(spec: ManifoldSpec, c: Constraint) -> np.ndarray:
    """Ambient coordinates the constraint acts on (default: leading Euclidean ones)."""
    if c.dims is not None:
        dims = np.asarray(c.dims, dtype=int)
    else:
        dims = spec.euclid_ambient[: c.ndim]
    if dims.size != c.ndim or not np.all(np.isin(dims, spec.euclid_ambient)):
        raise ValueError(f"constraint needs {c.ndim} Euclidean coordinates; got {dims.tolist()} on {spec}")
    return dims


# -- per-step truncation ---------------------------------------------------


@dataclass
class TruncationResult:
    """Moment-matched posterior of one DiGaP under a region.

    ``posterior`` is None when some step kept no samples.
    """

    posterior: DiGaP | None
    p_R: np.ndarray
    kept: np.ndarray
    n_samples: int


def standard_draws(rng, n_samples, tangent_dim, sampler="qmc"):
    """Standard-normal draws: scrambled Sobol points through the normal quantile, or iid."""
    if n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {n_samples}")
    if sampler == "mc":
        return rng.standard_normal((n_samples, tangent_dim))
    if sampler != "qmc":
        raise ValueError(f"unknown sampler {sampler!r}")
    m = int(np.ceil(np.log2(n_samples)))
    u = qmc.Sobol(tangent_dim, scramble=True, seed=rng).random_base2(m)[:n_samples]
    return special.ndtri(np.clip(u, 1e-16, 1 - 1e-16))


def truncate(model: DiGaP, c: Constraint, n_samples: int = DEFAULT_SAMPLES, rng=None,
             draws: np.ndarray | None = None, var_floor: float = VAR_FLOOR, sampler="qmc") -> TruncationResult:
    """Moment-match every step of ``model`` to ``c`` by rejection sampling.

    Samples are standard-normal ``draws`` (shared across steps, and across
    modes when passed in) scaled by the step deviation in the tangent space
    at the step mean and pushed to the manifold with Exp.
    """
    spec = model.spec
    dims = constrained_dims(spec, c)
    if draws is None:
        draws = standard_draws(np.random.default_rng() if rng is None else rng, n_samples, spec.tangent_dim, sampler)
    n = draws.shape[0]
    eps = draws[None, :, :] * np.sqrt(model.var)[:, None, :]          # (T, n, D)
    X = spec.exp(model.mu[:, None, :], eps)                            # (T, n, amb)
    inside = c.contains(X[..., dims].reshape(-1, dims.size)).reshape(model.T, n)
    kept = inside.sum(axis=1)
    p_R = kept / n
    if np.any(kept == 0):
        return TruncationResult(None, p_R, kept, n)
    if np.all(kept == n):
        return TruncationResult(model, p_R, kept, n)
    w = inside.astype(float)
    mu, _ = spec.frechet_mean(X, weights=w, init=model.mu)
    mu = spec.canonicalize(mu)
    L = spec.log(mu[:, None, :], X)
    denom = np.maximum(kept - 1, 1)[:, None]
    var = np.maximum(np.einsum("tn,tnd->td", w, L * L) / denom, var_floor)
    return TruncationResult(replace(model, mu=mu, var=var), p_R, kept, n)


def moment_match(spec: ManifoldSpec, mu, var, c: Constraint, n_samples: int = DEFAULT_SAMPLES, rng=None,
                 sampler="qmc"):
    """Single-step moment matching; returns ``(mu_R, var_R, p_R)`` with None moments if nothing was kept."""
    g = DiGaP(spec, np.atleast_2d(mu), np.atleast_2d(var))
    r = truncate(g, c, n_samples, rng, sampler=sampler)
    if r.posterior is None:
        return None, None, float(r.p_R[0])
    return r.posterior.mu[0], r.posterior.var[0], float(r.p_R[0])


def ci_intersects(spec: ManifoldSpec, mu, var, c: Constraint, z: float = DEFAULT_Z) -> bool:
    if not z > 0:
        raise ValueError("z must be positive")
    dims = constrained_dims(spec, c)
    tdims = spec.tangent_index_of_ambient(dims)
    return c.ci_intersects(np.asarray(mu)[dims], np.sqrt(np.asarray(var)[tdims]), z)


def gate(model: DiGaP, c: Constraint, z: float = DEFAULT_Z) -> bool:
    """True iff every step's z-confidence region meets the region."""
    return all(ci_intersects(model.spec, m, v, c, z) for m, v in zip(model.mu, model.var))


def evidence_score(p_R, q=1.0) -> float:
    """Normalized L_q norm over steps; ``q = inf`` gives the maximum."""
    p = np.asarray(p_R, dtype=float)
    if np.isinf(q):
        return float(p.max())
    if q < 1:
        raise ValueError("q must be >= 1")
    return float(np.mean(p ** q) ** (1.0 / q))


def default_d_uni(model: DiGaP, c: HalfSpace | HalfSpaceSet) -> float:
    """Twice the largest step deviation along any of the constraint normals."""
    dims = constrained_dims(model.spec, c)
    sd = np.sqrt(model.var[:, model.spec.tangent_index_of_ambient(dims)])
    planes = c.planes if isinstance(c, HalfSpaceSet) else (c,)
    return float(2 * max(np.max(np.sqrt((sd * sd) @ (h.n * h.n))) for h in planes))


@dataclass
class UpdateReport:
    prior: np.ndarray
    posterior: np.ndarray
    gate_passed: np.ndarray
    scores: np.ndarray
    p_R: list
    unimodal_margin_ok: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "prior": self.prior.tolist(),
            "posterior": self.posterior.tolist(),
            "gate_passed": self.gate_passed.tolist(),
            "scores": self.scores.tolist(),
            "unimodal_margin_ok": list(self.unimodal_margin_ok),
        }


def _unimodal_margin(g: DiGaP, c) -> bool | None:
    if not isinstance(c, (HalfSpace, HalfSpaceSet)):
        return None
    dims = constrained_dims(g.spec, c)
    d_uni = c.d_uni if isinstance(c, HalfSpaceSet) and c.d_uni > 0 else default_d_uni(g, c)
    planes = c.planes if isinstance(c, HalfSpaceSet) else (c,)
    return bool(all(np.all(h.margin(g.mu[:, dims]) >= d_uni) for h in planes))


def update(model: MiDiGaP, c: Constraint, z: float = DEFAULT_Z, q: float = 1.0,
           n_samples: int = DEFAULT_SAMPLES, rng=None, seed=None, sampler="qmc"):
    """Apply evidence to a mixture; returns ``(posterior_mixture, report)``.

    Convex evidence: modes whose confidence tube misses the region at some
    step are dropped, the rest are moment matched. Modal evidence leaves
    the Gaussians untouched. In both cases the priors are rescaled by the
    evidence score of each mode and renormalized. One set of standard
    draws is shared by all modes so weight comparisons are not dominated
    by Monte-Carlo noise.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    draws = standard_draws(rng, n_samples, model.spec.tangent_dim, sampler)
    M = model.M
    passed = np.ones(M, dtype=bool)
    scores = np.zeros(M)
    p_R, modes, margins = [], list(model.modes), []
    for m, g in enumerate(model.modes):
        if c.convex:
            passed[m] = gate(g, c, z)
            margins.append(_unimodal_margin(g, c))
        res = truncate(g, c, draws=draws)
        p_R.append(res.p_R)
        if not passed[m] or res.posterior is None:
            passed[m] = passed[m] and res.posterior is not None
            continue
        scores[m] = evidence_score(res.p_R, q)
        if c.convex:
            modes[m] = res.posterior
    weights = model.priors * scores * passed
    if weights.sum() <= 0:
        raise InfeasibleEvidenceError("evidence infeasible: every mode was eliminated")
    post = MiDiGaP(weights / weights.sum(), tuple(modes), model.partition)
    report = UpdateReport(model.priors.copy(), post.priors.copy(), passed, scores, p_R, margins)
    return post, report


def apply_convex(model: MiDiGaP, c: Constraint, z: float = DEFAULT_Z, q: float = 1.0,
                 n_samples: int = DEFAULT_SAMPLES, rng=None, seed=None, sampler="qmc") -> MiDiGaP:
    if not c.convex:
        raise ValueError(f"{c.kind} is modal evidence; use apply_modal")
    return update(model, c, z, q, n_samples, rng, seed, sampler)[0]


def apply_modal(model: MiDiGaP, c: Constraint, q: float = 1.0,
                n_samples: int = DEFAULT_SAMPLES, rng=None, seed=None, sampler="qmc") -> MiDiGaP:
    if c.convex:
        c = Custom(c.contains, c.ndim, convex=False, dims=c.dims)
    return update(model, c, q=q, n_samples=n_samples, rng=rng, seed=seed, sampler=sampler)[0]


# -- chains ----------------------------------------------------------------


def _incoming(initial, transitions, j):
    return initial if j == 0 else transitions[j - 1]


def _renormalize_rows(P):
    s = P.sum(axis=1, keepdims=True)
    return np.divide(P, s, out=np.zeros_like(P), where=s > 0)


def apply_to_chain(chain: SkillChain, j: int, l: int, w: float) -> SkillChain:
    """Scale every transition into mode ``l`` of skill ``j`` by ``w`` and renormalize.

    Modes of earlier skills left without any feasible continuation are cut
    off as well, so upstream choices already avoid dead ends.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError("evidence weight must lie in [0, 1]")
    if not 0 <= j < chain.n_skills or not 0 <= l < chain.skills[j].M:
        raise IndexError(f"no mode {l} in skill {j}")
    initial = chain.initial.copy()
    trans = [P.copy() for P in chain.transitions]
    if j == 0:
        initial[l] *= w
    else:
        trans[j - 1][:, l] *= w
    for i in range(len(trans) - 1, -1, -1):
        dead = trans[i].sum(axis=1) <= 0
        if i == 0:
            initial[dead] = 0.0
        else:
            trans[i - 1][:, dead] = 0.0
        trans[i] = _renormalize_rows(trans[i])
    if initial.sum() <= 0:
        raise InfeasibleChainError(f"no feasible modal path after updating mode {l} of skill {j}")
    return SkillChain(chain.skills, initial / initial.sum(), tuple(trans), chain.provenance)


def update_chain(chain: SkillChain, j: int, c: Constraint, z: float = DEFAULT_Z, q: float = 1.0,
                 n_samples: int = DEFAULT_SAMPLES, rng=None, seed=None, sampler="qmc"):
    """Update skill ``j`` with evidence, then reweight its incoming transitions.

    Each mode's evidence weight is its score (zero if gated out).
    """
    post, report = update(chain.skills[j], c, z, q, n_samples, rng, seed, sampler)
    skills = list(chain.skills)
    skills[j] = post
    out = SkillChain(tuple(skills), chain.initial, chain.transitions, chain.provenance)
    for l, (s, ok) in enumerate(zip(report.scores, report.gate_passed)):
        out = apply_to_chain(out, j, l, float(s) if ok else 0.0)
    return out, report


def second_difference_bound(prior: DiGaP, result: TruncationResult, dims: Sequence[int]):
    """Smoothness proxy ``(lhs, rhs)`` for a moment-matched posterior.

    lhs is the posterior mean's largest second difference on ``dims``; rhs is
    the prior's plus three Monte-Carlo standard errors of a second
    difference (sqrt(6) times the largest per-step standard error of the
    posterior mean).
    """
    dims = np.asarray(dims)
    post = result.posterior
    lhs = float(np.max(np.abs(np.diff(post.mu[:, dims], 2, axis=0))))
    base = float(np.max(np.abs(np.diff(prior.mu[:, dims], 2, axis=0))))
    tdims = post.spec.tangent_index_of_ambient(dims)
    se = np.sqrt(post.var[:, tdims] / np.maximum(result.kept, 1)[:, None])
    return lhs, base + 3.0 * np.sqrt(6.0) * float(se.max())
