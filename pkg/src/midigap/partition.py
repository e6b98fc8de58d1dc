"""Mode discovery: cluster whole demonstrations on the product manifold M^T'.

Each demonstration is resampled to T' steps and concatenated into one point
of M^T'. Three strategies are provided: Riemannian k-means and diagonal
Riemannian GMMs (both with the number of modes picked by BIC), and DBSCAN
on the geodesic distance matrix.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from sklearn.cluster import DBSCAN

from . import kernels
from .digap import Trajectory, resample_coords
from .errors import ClusteringError, ConvergenceError, SpecMismatchError
from .manifold import ManifoldSpec

log = logging.getLogger(__name__)

DEFAULT_T_PRIME = 20
DEFAULT_RESTARTS = 10
DEFAULT_EPS_PER_STEP = 0.1
LLOYD_MAX_ITER = 100
EM_MAX_ITER = 200
EM_TOL = 1e-9
MIN_PART_SIZE = 2


class Method(str, enum.Enum):
    GMM_BIC = "gmm_bic"
    KMEANS_BIC = "kmeans_bic"
    DBSCAN = "dbscan"


@dataclass(frozen=True, eq=False)
class Partition:
    """Disjoint, covering assignment of demonstrations to modes 0..M-1."""

    labels: np.ndarray
    method: Method
    subsample_length: int
    demo_ids: tuple = ()
    bic: dict = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a non-empty 1-d array")
        # relabel by first appearance so equal partitions compare equal
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        labels = np.argsort(np.argsort(first))[inverse].astype(np.int64)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        ids = tuple(self.demo_ids) if self.demo_ids else tuple(str(i) for i in range(labels.size))
        if len(ids) != labels.size:
            raise ValueError("need one demo id per label")
        object.__setattr__(self, "demo_ids", ids)
        object.__setattr__(self, "method", Method(self.method))

    @property
    def M(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def N(self) -> int:
        return self.labels.size

    def parts(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.labels == m) for m in range(self.M)]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.M)


def vectorize(demos: Sequence[Trajectory], T_prime: int = DEFAULT_T_PRIME):
    """Resample every demo to ``T_prime`` steps and flatten onto M^T'.

    Returns ``(spec, V)`` with ``spec = M^T'`` and ``V`` of shape
    (N, T' * ambient_dim). ``T_prime = 1`` keeps only the midpoint.
    """
    if not demos:
        raise ValueError("no demonstrations to vectorize")
    spec = demos[0].spec
    if any(d.spec != spec for d in demos):
        raise SpecMismatchError("demonstrations live on different manifolds")
    shortest = min(len(d) for d in demos)
    if T_prime < 1 or T_prime > shortest:
        raise ValueError(f"T' = {T_prime} must lie in [1, {shortest}] (shortest demonstration)")
    V = np.stack([resample_coords(spec, d.coords, T_prime).reshape(-1) for d in demos])
    return spec.power(T_prime), V


def _sq_dist(spec, X, C):
    return kernels.sq_dist_to(X, C, spec.euclid_ambient, spec.quat_offsets)


def _kmeanspp(spec, V, k, rng):
    N = len(V)
    chosen = [int(rng.integers(N))]
    d2 = _sq_dist(spec, V, V[chosen[-1:]])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(N, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(N), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dist(spec, V, V[[nxt]])[:, 0])
    return V[chosen].copy()


def _centroids(spec, V, labels, k, C):
    for j in range(k):
        members = V[labels == j]
        C[j], _ = spec.frechet_mean(members, init=C[j])
    return C


def _kmeans_once(spec, V, k, rng):
    C = _kmeanspp(spec, V, k, rng)
    labels = np.full(len(V), -1)
    for _ in range(LLOYD_MAX_ITER):
        D = _sq_dist(spec, V, C)
        new = np.argmin(D, axis=1)
        # keep every cluster non-empty by moving the worst-fit point of a
        # multi-member cluster into each empty one
        for j in range(k):
            if not np.any(new == j):
                counts = np.bincount(new, minlength=k)
                resid = D[np.arange(len(V)), new]
                resid[counts[new] < 2] = -1.0
                new[int(np.argmax(resid))] = j
        if np.array_equal(new, labels):
            break
        labels = new
        C = _centroids(spec, V, labels, k, C)
    D = _sq_dist(spec, V, C)
    sse = np.bincount(labels, weights=D[np.arange(len(V)), labels], minlength=k)
    return labels, C, sse


def _kmeans_bic(labels, sse, N, D, k, floor):
    n = np.bincount(labels, minlength=k).astype(float)
    if np.any(n < MIN_PART_SIZE):
        return np.inf
    var = np.maximum(sse / (n * D), floor)
    ll = np.sum(n * np.log(n / N) - 0.5 * n * D * np.log(2 * np.pi * var) - sse / (2 * var))
    n_params = k * (D + 1) + (k - 1)
    return -2.0 * ll + n_params * np.log(N)


def _check_cluster_args(V, k_max):
    N = len(V)
    if N < 2:
        raise ValueError("clustering needs at least two vectors")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if k_max > N:
        raise ValueError(f"k_max = {k_max} exceeds the number of demonstrations ({N})")


def _default_k_max(N):
    return max(1, min(10, N - 1))


def _variance_floor(spec, V):
    mean, _ = spec.frechet_mean(V)
    total = np.mean(_sq_dist(spec, V, mean[None])) / spec.tangent_dim
    return max(1e-12, 1e-9 * total)


def cluster_kmeans_bic(spec: ManifoldSpec, V, k_max: int | None = None,
                       restarts: int = DEFAULT_RESTARTS, seed=0, demo_ids=(), T_prime=0) -> Partition:
    """Riemannian k-means for k = 1..k_max; the partition with lowest BIC wins.

    The likelihood is an isotropic Gaussian per cluster whose variance is
    the cluster's mean squared geodesic residual per tangent dimension.
    Clusterings with a part smaller than two demonstrations are not eligible
    (such a part could not be fitted as a mode).
    """
    V = np.asarray(V, dtype=float)
    N = len(V)
    k_max = _default_k_max(N) if k_max is None else k_max
    _check_cluster_args(V, k_max)
    rng = np.random.default_rng(seed)
    D = spec.tangent_dim
    floor = _variance_floor(spec, V)
    table, best = {}, None
    for k in range(1, k_max + 1):
        runs = [_kmeans_once(spec, V, k, rng) for _ in range(restarts if k > 1 else 1)]
        labels, _, sse = min(runs, key=lambda r: r[2].sum())
        table[k] = float(_kmeans_bic(labels, sse, N, D, k, floor))
        if best is None or table[k] < best[0]:
            best = (table[k], labels)
    return Partition(best[1], Method.KMEANS_BIC, T_prime, demo_ids, table)


@dataclass
class GMMFit:
    labels: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    log_likelihood: float
    history: list


def _gmm_loglik(spec, V, means, variances, weights):
    K = len(means)
    logp = np.empty((len(V), K))
    for j in range(K):
        L = spec.log(means[j][None], V)
        logp[:, j] = np.log(weights[j]) - 0.5 * np.sum(np.log(2 * np.pi * variances[j]) + L * L / variances[j], axis=1)
    return logp


def fit_gmm(spec: ManifoldSpec, V, k: int, rng, floor: float, max_iter: int = EM_MAX_ITER):
    """EM for a diagonal Riemannian GMM initialised from seeded k-means.

    Returns ``None`` if a component degenerates (fewer than two hard members
    or vanishing responsibility mass).
    """
    N = len(V)
    labels, means, _ = _kmeans_once(spec, V, k, rng)
    resp = np.zeros((N, k))
    resp[np.arange(N), labels] = 1.0
    history = []
    variances = np.empty((k, spec.tangent_dim))
    weights = np.empty(k)
    for _ in range(max_iter):
        # M step
        mass = resp.sum(axis=0)
        if np.any(mass < 1.0):
            return None
        weights = mass / N
        for j in range(k):
            means[j], _ = spec.frechet_mean(V, weights=resp[:, j], init=means[j])
            L = spec.log(means[j][None], V)
            variances[j] = np.maximum(resp[:, j] @ (L * L) / mass[j], floor)
        # E step
        logp = _gmm_loglik(spec, V, means, variances, weights)
        norm = logsumexp(logp, axis=1)
        resp = np.exp(logp - norm[:, None])
        ll = float(norm.sum())
        history.append(ll)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= EM_TOL * max(1.0, abs(ll)):
            break
    labels = np.argmax(resp, axis=1)
    if np.any(np.bincount(labels, minlength=k) < MIN_PART_SIZE):
        return None
    return GMMFit(labels, means, variances, weights, history[-1], history)


def cluster_gmm_bic(spec: ManifoldSpec, V, k_max: int | None = None,
                    restarts: int = DEFAULT_RESTARTS, seed=0, demo_ids=(), T_prime=0) -> Partition:
    """Diagonal Riemannian GMMs for k = 1..k_max, selected by BIC.

    Degenerate EM runs are restarted; a k for which every restart
    degenerates is recorded with infinite BIC. Hard labels come from the
    maximum responsibility.
    """
    V = np.asarray(V, dtype=float)
    N = len(V)
    k_max = _default_k_max(N) if k_max is None else k_max
    _check_cluster_args(V, k_max)
    rng = np.random.default_rng(seed)
    D = spec.tangent_dim
    floor = _variance_floor(spec, V)
    table, best = {}, None
    for k in range(1, k_max + 1):
        fits = []
        for _ in range(restarts if k > 1 else 1):
            try:
                g = fit_gmm(spec, V, k, rng, floor)
            except ConvergenceError:
                g = None
            if g is not None:
                fits.append(g)
        if not fits:
            table[k] = float("inf")
            log.debug("GMM with k=%d degenerated on every restart", k)
            continue
        g = max(fits, key=lambda f: f.log_likelihood)
        n_params = k * 2 * D + (k - 1)
        table[k] = float(-2.0 * g.log_likelihood + n_params * np.log(N))
        if best is None or table[k] < best[0]:
            best = (table[k], g.labels)
    if best is None:
        raise ClusteringError("every GMM restart degenerated")
    return Partition(best[1], Method.GMM_BIC, T_prime, demo_ids, table)


def default_eps(T_prime: int) -> float:
    """Fixed DBSCAN radius: 0.1 (metres / radians) RMS deviation per step."""
    return DEFAULT_EPS_PER_STEP * np.sqrt(T_prime)


def distance_matrix(spec: ManifoldSpec, V) -> np.ndarray:
    return np.sqrt(kernels.sq_dist_matrix(np.asarray(V, dtype=float), spec.euclid_ambient, spec.quat_offsets))


def cluster_dbscan(spec: ManifoldSpec, V, eps: float | None = None, min_pts: int = 2,
                   demo_ids=(), T_prime=0) -> Partition:
    """DBSCAN on the geodesic distance matrix (computed exactly once).

    Noise demonstrations are attached to the cluster whose Fréchet-mean
    centroid is nearest, since every demonstration must belong to a mode.
    """
    V = np.asarray(V, dtype=float)
    if eps is None:
        eps = default_eps(max(T_prime, 1))
    if eps <= 0 or min_pts < 1:
        raise ValueError("DBSCAN needs eps > 0 and min_pts >= 1")
    dist = distance_matrix(spec, V)
    labels = DBSCAN(eps=eps, min_samples=min_pts, metric="precomputed").fit(dist).labels_.copy()
    clusters = sorted(set(labels) - {-1})
    if not clusters:
        raise ClusteringError("no clusters: every demonstration is noise")
    noise = labels == -1
    if noise.any():
        centroids = np.stack([spec.frechet_mean(V[labels == c])[0] for c in clusters])
        nearest = np.argmin(_sq_dist(spec, V[noise], centroids), axis=1)
        labels[noise] = np.asarray(clusters)[nearest]
    return Partition(labels, Method.DBSCAN, T_prime, demo_ids, {"eps": float(eps)})


def partition_demos(demos: Sequence[Trajectory], method="kmeans_bic", T_prime: int = DEFAULT_T_PRIME,
                    k_max=None, restarts=DEFAULT_RESTARTS, seed=0, eps=None, min_pts=2) -> Partition:
    """Vectorize and cluster in one call."""
    method = Method(method)
    T_prime = min(T_prime, min(len(d) for d in demos))
    spec, V = vectorize(demos, T_prime)
    ids = tuple(d.demo_id or str(i) for i, d in enumerate(demos))
    if method is Method.KMEANS_BIC:
        return cluster_kmeans_bic(spec, V, k_max, restarts, seed, ids, T_prime)
    if method is Method.GMM_BIC:
        return cluster_gmm_bic(spec, V, k_max, restarts, seed, ids, T_prime)
    return cluster_dbscan(spec, V, eps, min_pts, ids, T_prime)
