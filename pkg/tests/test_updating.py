import numpy as np
import pytest
from scipy import stats

from midigap.digap import DiGaP
from midigap.errors import InfeasibleChainError, InfeasibleEvidenceError
from midigap.manifold import ManifoldSpec
from midigap.mixture import MiDiGaP, enumerate_paths
from midigap.updating import (
    Custom,
    HalfSpace,
    HalfSpaceSet,
    Occupancy,
    ReachSphere,
    SelfCollision,
    apply_convex,
    apply_modal,
    apply_to_chain,
    ci_intersects,
    constraint_from_json,
    evidence_score,
    moment_match,
    second_difference_bound,
    truncate,
    update,
    update_chain,
)

from conftest import axis_angle_quat
from test_mixture import branching_chain

E1 = ManifoldSpec.euclidean(1)
E3 = ManifoldSpec.euclidean(3)
POSE = ManifoldSpec.pose()


def g1(mu, var, T=1):
    return DiGaP(E1, np.full((T, 1), mu, dtype=float), np.full((T, 1), var, dtype=float))


def two_modes(a=1.0, b=-1.0, var=0.25, T=1):
    return MiDiGaP(np.array([0.5, 0.5]), (g1(a, var, T), g1(b, var, T)))


@pytest.mark.parametrize("sampler", ["qmc", "mc"])
def test_half_space_matches_truncated_normal(sampler):
    mu, var, p = moment_match(E1, [0.0], [1.0], HalfSpace([0.0], [1.0]), 100_000,
                              np.random.default_rng(0), sampler=sampler)
    tn = stats.truncnorm(0, np.inf)
    assert mu[0] == pytest.approx(np.sqrt(2 / np.pi), rel=0.01)
    assert mu[0] == pytest.approx(tn.mean(), rel=0.01)
    assert var[0] == pytest.approx(1 - 2 / np.pi, rel=0.02)
    assert p == pytest.approx(0.5, abs=0.005)


def test_far_tail_truncation_strength():
    _, _, p = moment_match(E1, [0.0], [1.0], HalfSpace([3.0], [1.0]), 100_000, np.random.default_rng(4))
    assert p == pytest.approx(stats.norm.sf(3), abs=3e-4)


def test_variance_contracts_along_normal(rng):
    for a in (-1.0, 0.0, 0.7):
        _, var, _ = moment_match(E1, [0.0], [1.0], HalfSpace([a], [1.0]), 20_000, rng)
        assert var[0] < 1.0


def test_full_space_is_identity():
    mix = two_modes()
    post, rep = update(mix, HalfSpace([-100.0], [1.0]), seed=0)
    assert np.array_equal(rep.scores, [1.0, 1.0])
    assert np.array_equal(post.priors, mix.priors)
    assert post.modes[0] is mix.modes[0]


def test_empty_kept_set_flags_step():
    r = truncate(g1(0.0, 1.0, T=3), HalfSpace([50.0], [1.0]), 1000, np.random.default_rng(0))
    assert r.posterior is None
    assert np.all(r.p_R == 0)


def test_ci_examples():
    assert ci_intersects(E1, [0.5], [1.0], HalfSpace([0.0], [1.0]))
    assert not ci_intersects(E1, [0.0], [1.0], HalfSpace([5.0], [1.0]), z=1.96)
    reach = ReachSphere(np.zeros(3), 1.0)
    assert ci_intersects(E3, [1.5, 0, 0], np.full(3, 0.09), reach)
    assert not ci_intersects(E3, [1.7, 0, 0], np.full(3, 0.09), reach)
    with pytest.raises(ValueError):
        ci_intersects(E1, [0.0], [1.0], HalfSpace([0.0], [1.0]), z=0.0)


def brute_force_ci(c, mu, sd, z, rng, n=200_000):
    u = rng.normal(size=(n, mu.size))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(size=(n, 1)) ** (1 / mu.size)
    return bool(np.any(c.contains(mu + z * sd * u * r)))


def test_half_space_set_ci_matches_dense_sampling(rng):
    c = HalfSpaceSet(([[0.0, 0, 0], [1.0, 0, 0]], [[0.5, 0, 0], [-1.0, 0, 0]]), d_safe=0.05)
    # slab 0.05 <= x <= 0.45: check a sweep of ellipsoids against dense sampling
    agree = 0
    for x in np.linspace(-0.6, 1.1, 18):
        mu = np.array([x, 0.1, -0.2])
        sd = np.array([0.1, 0.3, 0.2])
        exact = c.ci_intersects(mu, sd, 1.96)
        if abs(abs(x - 0.25) - (0.2 + 0.196)) > 0.01:  # skip near-tangent cases
            assert exact == brute_force_ci(c, mu, sd, 1.96, rng)
            agree += 1
    assert agree > 10


def test_half_space_set_requires_separated_points():
    with pytest.raises(ValueError):
        HalfSpaceSet(([[0.0, 0, 0], [1.0, 0, 0]], [[0.05, 0, 0], [-1.0, 0, 0]]), d_safe=0.05, d_uni=0.02)


def test_normals_must_be_unit():
    with pytest.raises(ValueError):
        HalfSpace([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        ReachSphere([0.0], -1.0)
    with pytest.raises(ValueError):
        Occupancy(np.zeros((2, 2, 2)), 0.1, np.zeros(3), tau=1.0)


def test_excluded_mode_is_zeroed():
    post = apply_convex(two_modes(1.0, -5.0), HalfSpace([-1.0], [1.0]), seed=1)
    assert np.array_equal(post.priors, [1.0, 0.0])


def test_gate_zeroes_mode_whose_interval_misses_region():
    # the -1 mode's 1.96-sigma interval ends at -0.02, short of x >= 0
    post, rep = update(two_modes(), HalfSpace([0.0], [1.0]), z=1.96, n_samples=100_000, seed=0)
    assert list(rep.gate_passed) == [True, False]
    assert np.array_equal(post.priors, [1.0, 0.0])


def test_weight_ratio_with_relaxed_gate():
    post, _ = update(two_modes(), HalfSpace([0.0], [1.0]), z=3.0, n_samples=100_000, seed=0)
    analytic = stats.norm.cdf(2) / (stats.norm.cdf(2) + stats.norm.cdf(-2))
    assert post.priors[0] == pytest.approx(analytic, abs=0.002)
    tn_mean = stats.truncnorm(-2, np.inf, loc=1.0, scale=0.5).mean()
    assert post.modes[0].mu[0, 0] == pytest.approx(tn_mean, rel=0.005)


def test_all_modes_eliminated():
    with pytest.raises(InfeasibleEvidenceError, match="evidence infeasible"):
        apply_convex(two_modes(), HalfSpace([10.0], [1.0]), seed=0)


def test_q_norm_reductions():
    p = np.array([0.2, 0.9, 0.5])
    assert evidence_score(p, 1) == pytest.approx(p.mean(), abs=1e-15)
    assert evidence_score(p, np.inf) == 0.9
    assert evidence_score(p, 2) == pytest.approx(np.sqrt(np.mean(p ** 2)))
    mix = MiDiGaP(np.array([1.0]), (DiGaP(E1, np.array([[0.0], [0.5], [1.0]]), np.full((3, 1), 0.2)),))
    _, rep = update(mix, HalfSpace([0.2], [1.0]), z=5.0, q=1, seed=3)
    assert rep.scores[0] == pytest.approx(np.mean(rep.p_R[0]), abs=1e-15)


def test_nested_regions_monotone():
    mix = MiDiGaP(np.array([0.5, 0.5]), (g1(0.3, 0.5, T=4), g1(-0.2, 0.3, T=4)))
    small = update(mix, HalfSpace([0.4], [1.0]), z=10.0, seed=9)[1].scores
    large = update(mix, HalfSpace([0.1], [1.0]), z=10.0, seed=9)[1].scores
    assert np.all(large >= small)


def test_modal_occupancy_blocks_one_mode():
    spec = POSE
    q = axis_angle_quat([0, 0, 1], 0.3)
    T = 6
    def mode(y):
        mu = np.tile(np.concatenate([[0.5, y, 0.3], q]), (T, 1))
        return DiGaP(spec, mu, np.full((T, 6), 1e-4))
    mix = MiDiGaP(np.array([0.5, 0.5]), (mode(-0.2), mode(0.2)))
    grid = np.zeros((11, 11, 11))
    grid[:, 6:, :] = 1.0  # occupied for y >= 0.1
    occ = Occupancy(grid, 0.1, np.array([0.0, -0.5, 0.0]), tau=0.5)
    post = apply_modal(mix, occ, seed=0)
    assert post.priors[1] < 1e-3
    assert post.modes[0] is mix.modes[0] and post.modes[1] is mix.modes[1]
    free = apply_modal(mix, Occupancy(np.zeros((3, 3, 3)), 0.1, np.zeros(3)), seed=0)
    assert np.array_equal(free.priors, mix.priors)


def test_occupancy_trilinear_oracle(rng):
    grid = rng.uniform(size=(4, 5, 3))
    occ = Occupancy(grid, 0.5, np.array([1.0, -1.0, 0.0]))
    x = np.array([1.0 + 0.5 * 1.3, -1.0 + 0.5 * 2.6, 0.5 * 0.25])
    i, j, k = 1, 2, 0
    fx, fy, fz = 0.3, 0.6, 0.25
    ref = 0.0
    for di, wx in ((0, 1 - fx), (1, fx)):
        for dj, wy in ((0, 1 - fy), (1, fy)):
            for dk, wz in ((0, 1 - fz), (1, fz)):
                ref += wx * wy * wz * grid[i + di, j + dj, k + dk]
    assert occ.occupancy(x)[0] == pytest.approx(ref, abs=1e-12)
    assert occ.occupancy(np.array([100.0, 0, 0]))[0] == 0.0


def test_self_collision_modal():
    mix = MiDiGaP(np.array([0.5, 0.5]), (DiGaP(E3, np.full((3, 3), 0.05), np.full((3, 3), 1e-4)),
                                         DiGaP(E3, np.full((3, 3), 0.5), np.full((3, 3), 1e-4))))
    post = apply_modal(mix, SelfCollision(np.zeros(3), 0.3), seed=0)
    assert np.allclose(post.priors, [0.0, 1.0])


def test_custom_predicate():
    c = Custom(lambda X: X[:, 0] > 0.0, k=1, convex=True)
    post, _ = update(two_modes(1.0, -1.0), c, z=3.0, n_samples=20_000, seed=0)
    assert post.priors[0] > 0.97


def test_pose_half_space_keeps_orientation():
    T = 4
    mu = np.tile(np.concatenate([[0.2, 0.0, 0.1], axis_angle_quat([1, 0, 0], 0.4)]), (T, 1))
    g = DiGaP(POSE, mu, np.full((T, 6), 0.01))
    r = truncate(g, HalfSpace([0, 0, 0.1], [0, 0, 1.0]), 50_000, np.random.default_rng(2))
    assert np.all(r.posterior.mu[:, 2] > 0.1)
    assert np.allclose(r.posterior.mu[:, 3:], mu[:, 3:], atol=2e-3)
    assert np.allclose(r.posterior.var[:, 3:], 0.01, rtol=0.03)
    assert np.all(r.posterior.var[:, 2] < 0.01)


def test_smoothness_proxy():
    T = 100
    s = np.linspace(0, 1, T)
    prior = DiGaP(E1, np.sin(2 * np.pi * s)[:, None], np.full((T, 1), 0.04))
    for n in (1000, 100_000):
        r = truncate(prior, HalfSpace([0.6], [-1.0]), n, np.random.default_rng(1))
        lhs, rhs = second_difference_bound(prior, r, [0])
        assert lhs <= rhs


def test_determinism():
    mix = two_modes()
    a, _ = update(mix, HalfSpace([0.0], [1.0]), z=3.0, seed=5)
    b, _ = update(mix, HalfSpace([0.0], [1.0]), z=3.0, seed=5)
    assert np.array_equal(a.priors, b.priors)
    assert np.array_equal(a.modes[0].mu, b.modes[0].mu)


def test_constraint_json_round_trip():
    cs = [ReachSphere([0, 0, 0], 0.8), HalfSpace([0, 0, 0.1], [0, 0, 1], 0.02),
          HalfSpaceSet(([[0, 0, 0], [0, 0, 1]], [[1, 0, 0], [0, 0, -1]]), 0.05, 0.1),
          SelfCollision([0, 0, 0], 0.2), Occupancy(np.eye(3)[None].repeat(2, 0), 0.1, [0, 0, 0], 0.3)]
    X = np.random.default_rng(0).uniform(-1, 1, size=(200, 3))
    for c in cs:
        c2 = constraint_from_json(c.to_json())
        assert type(c2) is type(c)
        assert np.array_equal(c.contains(X), c2.contains(X))
        assert c2.to_json() == c.to_json()


def test_chain_unit_weight_is_identity():
    chain = branching_chain()
    out = apply_to_chain(chain, 1, 1, 1.0)
    assert np.array_equal(out.initial, chain.initial)
    assert all(np.array_equal(a, b) for a, b in zip(out.transitions, chain.transitions))


def test_chain_zeroed_mode_splits_remaining_mass():
    out = apply_to_chain(branching_chain(), 1, 1, 0.0)
    probs = {p.modes: p.probability for p in enumerate_paths(out) if p.probability > 0}
    assert probs == {(0, 0, 0): pytest.approx(0.5), (0, 2, 2): pytest.approx(0.5)}


def test_chain_dead_end_propagates_upstream():
    # mode 1 of skill 2 only leads to mode 1 of skill 3; zeroing that cuts it off
    out = apply_to_chain(branching_chain(), 2, 1, 0.0)
    assert out.transitions[0][0, 1] == 0.0
    assert sum(p.probability for p in enumerate_paths(out)) == pytest.approx(1.0, abs=1e-12)


def test_chain_all_modes_zeroed_is_infeasible():
    chain = branching_chain()
    chain = apply_to_chain(chain, 2, 0, 0.0)
    chain = apply_to_chain(chain, 2, 1, 0.0)
    with pytest.raises(InfeasibleChainError):
        apply_to_chain(chain, 2, 2, 0.0)


def test_update_chain_reweights_incoming():
    chain = branching_chain()  # skill 2 modes sit at x = 10, 11, 12
    out, rep = update_chain(chain, 1, HalfSpace([10.5, 0.0], [1.0, 0.0]), seed=0)
    assert not rep.gate_passed[0]
    assert out.transitions[0][0, 0] == 0.0
    assert out.transitions[0][0, 1] == pytest.approx(0.5)
