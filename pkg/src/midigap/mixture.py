"""Mixtures of DiGaPs and sequenced skill chains."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import softmax

from .digap import Trajectory, fit, mean_length
from .errors import InfeasibleChainError, InsufficientDemosError, SpecMismatchError
from .partition import Partition

PRIOR_TOL = 1e-9
CHAIN_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def normalize_priors(priors) -> np.ndarray:
    p = np.asarray(priors, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("priors must be a non-empty vector of finite non-negative numbers")
    total = p.sum()
    if total <= 0:
        raise InfeasibleChainError("all mode priors are zero")
    return p / total


@dataclass(frozen=True, eq=False)
class MiDiGaP:
    """Categorical mixture of DiGaPs sharing one manifold and one step grid."""

    priors: np.ndarray
    modes: tuple
    partition: Partition | None = None

    def __post_init__(self):
        modes = tuple(self.modes)
        if not modes:
            raise ValueError("a mixture needs at least one mode")
        first = modes[0]
        for m in modes[1:]:
            if m.spec != first.spec:
                raise SpecMismatchError("mixture modes live on different manifolds")
            if m.T != first.T:
                raise ValueError("mixture modes must share the step count")
        p = np.asarray(self.priors, dtype=float)
        if p.shape != (len(modes),):
            raise ValueError("need exactly one prior per mode")
        if abs(p.sum() - 1.0) > PRIOR_TOL or np.any(p < 0):
            raise ValueError(f"priors must be a distribution, got {p}")
        object.__setattr__(self, "priors", _frozen(p / p.sum()))
        object.__setattr__(self, "modes", modes)

    @property
    def M(self) -> int:
        return len(self.modes)

    @property
    def T(self) -> int:
        return self.modes[0].T

    @property
    def spec(self):
        return self.modes[0].spec

    def with_priors(self, priors) -> "MiDiGaP":
        return MiDiGaP(normalize_priors(priors), self.modes, self.partition)

    def with_modes(self, modes, priors=None) -> "MiDiGaP":
        return MiDiGaP(self.priors if priors is None else normalize_priors(priors), tuple(modes), self.partition)


def fit_mixture(demos: Sequence[Trajectory], partition: Partition, **fit_kwargs) -> MiDiGaP:
    """One DiGaP per part with prior |part| / N.

    Every mode is fitted on the common step grid given by the longest part
    mean length, so all modes can be traversed step by step together.
    """
    if partition.N != len(demos):
        raise ValueError(f"partition covers {partition.N} demos but {len(demos)} were given")
    parts = partition.parts()
    for m, idx in enumerate(parts):
        if len(idx) < 2:
            raise InsufficientDemosError(f"part {m} has {len(idx)} demonstration(s); at least 2 are needed")
    T = fit_kwargs.pop("length", None)
    if T is None:
        T = max(mean_length([demos[i] for i in idx]) for idx in parts)
    modes = tuple(fit([demos[i] for i in idx], length=T, **fit_kwargs) for idx in parts)
    priors = partition.sizes() / partition.N
    return MiDiGaP(priors, modes, partition)


def sample_mode(model: MiDiGaP, rng: np.random.Generator) -> int:
    return int(rng.choice(model.M, p=model.priors))


def regress(model: MiDiGaP, mode: int | None = None, rng: np.random.Generator | None = None) -> Trajectory:
    """Most likely trajectory of a mode.

    The mode is ``mode`` if given, a draw from the priors if ``rng`` is
    given, and the most probable mode otherwise.
    """
    if mode is None:
        mode = sample_mode(model, rng) if rng is not None else int(np.argmax(model.priors))
    g = model.modes[mode]
    return Trajectory(g.spec, g.mu.copy(), None if g.aux_mu is None else g.aux_mu.copy())


# -- skill chains ----------------------------------------------------------


@dataclass(frozen=True)
class ModalPath:
    modes: tuple
    probability: float


@dataclass(frozen=True, eq=False)
class SkillChain:
    """Ordered skills with an initial mode distribution and per-junction transitions.

    ``transitions[j][k, l]`` is the probability of continuing with mode ``l``
    of skill ``j + 1`` after mode ``k`` of skill ``j``.
    """

    skills: tuple
    initial: np.ndarray
    transitions: tuple = ()
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        skills = tuple(self.skills)
        if not skills:
            raise ValueError("a chain needs at least one skill")
        init = np.asarray(self.initial, dtype=float)
        if init.shape != (skills[0].M,):
            raise ValueError("initial distribution must have one entry per mode of the first skill")
        trans = tuple(np.asarray(P, dtype=float) for P in self.transitions)
        if len(trans) != len(skills) - 1:
            raise ValueError("need one transition matrix per junction")
        for j, P in enumerate(trans):
            if P.shape != (skills[j].M, skills[j + 1].M):
                raise ValueError(f"transition {j} has shape {P.shape}, expected {(skills[j].M, skills[j + 1].M)}")
            if np.any(P < 0) or np.any(P > 1 + CHAIN_TOL):
                raise ValueError(f"transition {j} has entries outside [0, 1]")
        object.__setattr__(self, "skills", skills)
        object.__setattr__(self, "initial", _frozen(init))
        object.__setattr__(self, "transitions", tuple(_frozen(P) for P in trans))
        total = self.total_probability()
        if abs(total - 1.0) > CHAIN_TOL:
            raise InfeasibleChainError(f"modal path probabilities sum to {total}, not 1")

    @property
    def n_skills(self) -> int:
        return len(self.skills)

    @property
    def shape(self) -> tuple:
        return tuple(s.M for s in self.skills)

    def total_probability(self) -> float:
        alpha = self.initial
        for P in self.transitions:
            alpha = alpha @ P
        return float(alpha.sum())


def learn_transitions(partitions: Sequence[Partition]):
    """Initial distribution and co-membership transition matrices.

    ``P_j[k, l] = |part k of skill j  ∩  part l of skill j+1| / |part k of skill j|``.
    """
    if not partitions:
        raise ValueError("need at least one partition")
    ids = partitions[0].demo_ids
    for p in partitions[1:]:
        if p.demo_ids != ids:
            raise ValueError("consecutive partitions must index the same demonstrations")
    initial = partitions[0].sizes() / partitions[0].N
    mats = []
    for a, b in zip(partitions[:-1], partitions[1:]):
        counts = np.zeros((a.M, b.M))
        np.add.at(counts, (a.labels, b.labels), 1.0)
        mats.append(counts / counts.sum(axis=1, keepdims=True))
    return initial, mats


def chain_from_partitions(skills: Sequence[MiDiGaP], partitions: Sequence[Partition], **provenance) -> SkillChain:
    initial, mats = learn_transitions(partitions)
    return SkillChain(tuple(skills), initial, tuple(mats), dict(provenance))


def _check_path(chain: SkillChain, path):
    path = tuple(int(m) for m in path)
    if len(path) != chain.n_skills:
        raise ValueError(f"path has {len(path)} entries for a chain of {chain.n_skills} skills")
    for j, (m, M) in enumerate(zip(path, chain.shape)):
        if not 0 <= m < M:
            raise IndexError(f"mode {m} out of range for skill {j} with {M} modes")
    return path


def modal_path_probability(chain: SkillChain, path) -> float:
    path = _check_path(chain, path)
    p = chain.initial[path[0]]
    for j, P in enumerate(chain.transitions):
        p *= P[path[j], path[j + 1]]
    return float(p)


def enumerate_paths(chain: SkillChain) -> list[ModalPath]:
    return [ModalPath(path, modal_path_probability(chain, path))
            for path in itertools.product(*(range(M) for M in chain.shape))]


def _draw(row, rng, what):
    total = row.sum()
    if total <= 0:
        raise InfeasibleChainError(f"no feasible continuation {what}")
    return int(rng.choice(row.size, p=row / total))


def sample_modal_path(chain: SkillChain, rng: np.random.Generator) -> ModalPath:
    """Ancestral sampling, one junction at a time."""
    path = [_draw(chain.initial, rng, "for the first skill")]
    for j, P in enumerate(chain.transitions):
        path.append(_draw(P[path[-1]], rng, f"after mode {path[-1]} of skill {j}"))
    return ModalPath(tuple(path), modal_path_probability(chain, path))


def diag_kl(spec, mu_a, var_a, mu_b, var_b) -> float:
    """KL(N_a || N_b) for diagonal Gaussians, charted in the tangent space at ``mu_a``."""
    d = spec.log(mu_a, mu_b)
    return float(0.5 * np.sum(var_a / var_b + d * d / var_b - 1.0 + np.log(var_b / var_a)))


def kl_chain(a: MiDiGaP, b: MiDiGaP) -> np.ndarray:
    """Transitions from the end of ``a`` to the start of ``b`` by softmax(-KL)."""
    if a.spec != b.spec:
        raise SpecMismatchError("cannot chain skills on different manifolds")
    kl = np.array([[diag_kl(a.spec, ga.mu[-1], ga.var[-1], gb.mu[0], gb.var[0]) for gb in b.modes]
                   for ga in a.modes])
    return softmax(-kl, axis=1)


def chain_by_kl(skills: Sequence[MiDiGaP], **provenance) -> SkillChain:
    """Chain independently learned skills; the first skill's priors start the chain."""
    skills = tuple(skills)
    mats = tuple(kl_chain(a, b) for a, b in zip(skills[:-1], skills[1:]))
    return SkillChain(skills, skills[0].priors, mats, dict(provenance))


def regress_chain(chain: SkillChain, path) -> Trajectory:
    """Concatenate the mean trajectories of the selected mode of every skill."""
    path = _check_path(chain, path.modes if isinstance(path, ModalPath) else path)
    parts = [chain.skills[j].modes[m] for j, m in enumerate(path)]
    coords = np.concatenate([g.mu for g in parts])
    aux = None
    if all(g.aux_mu is not None for g in parts):
        aux = np.concatenate([g.aux_mu for g in parts])
    return Trajectory(parts[0].spec, coords, aux)
