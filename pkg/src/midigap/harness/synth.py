"""Deterministic synthetic demonstration sets.

Scalar families (sine, piecewise-linear, oscillatory, non-stationary,
chaotic, discontinuous) live on R^1 and cover the function classes used to
probe expressivity. ``multimode_pose`` produces labelled multi-branch pose
data and ``arm_traced`` produces pose data traced by a kinematic chain
together with the joint-space ground truth.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from ..digap import DEFAULT_RATE_HZ, Trajectory
from ..manifold import ManifoldSpec

LOGISTIC_R = 3.9
SCALAR = ManifoldSpec.euclidean(1)
POSE = ManifoldSpec.pose()


class Family(str, enum.Enum):
    SINE = "sine"
    PIECEWISE_LINEAR = "piecewise_linear"
    OSCILLATORY = "oscillatory"
    NON_STATIONARY = "non_stationary"
    CHAOTIC = "chaotic"
    DISCONTINUOUS = "discontinuous"
    MULTIMODE_POSE = "multimode_pose"
    ARM_TRACED = "arm_traced"


SCALAR_FAMILIES = (Family.SINE, Family.PIECEWISE_LINEAR, Family.OSCILLATORY,
                   Family.NON_STATIONARY, Family.CHAOTIC, Family.DISCONTINUOUS)


@dataclass
class SynthSpec:
    family: Family
    N: int = 5
    T: int = 200
    noise: float = 0.05
    seed: int = 0
    sample_rate_hz: float = DEFAULT_RATE_HZ
    noise_kind: str = "iid"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.family = Family(self.family)
        if self.N < 2 or self.T < 2:
            raise ValueError("need N >= 2 demonstrations of T >= 2 steps")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.noise_kind not in ("iid", "smooth"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["family"] = self.family.value
        return d

    @classmethod
    def from_json(cls, d) -> "SynthSpec":
        return cls(**d)


@dataclass
class Dataset:
    demos: list
    ground_truth: list          # one noiseless Trajectory per mode
    labels: np.ndarray | None = None
    joints: list | None = None  # joint-space ground truth per demo (arm-traced data)
    spec: SynthSpec | None = None

    @property
    def truth_per_demo(self) -> list:
        if self.labels is None:
            return [self.ground_truth[0]] * len(self.demos)
        return [self.ground_truth[m] for m in self.labels]


# -- scalar targets --------------------------------------------------------


def _phase(T):
    return np.linspace(0.0, 1.0, T)


def sine_target(T, cycles=1.0, amplitude=1.0):
    return amplitude * np.sin(2 * np.pi * cycles * _phase(T))


def piecewise_linear_target(T, knots=(0.0, 0.25, 0.5, 0.75, 1.0), values=(0.0, 1.0, -0.5, 0.5, 0.0)):
    if len(knots) != len(values) or len(knots) < 2 or np.any(np.diff(knots) <= 0):
        raise ValueError("knots must be strictly increasing and match values")
    return np.interp(_phase(T), knots, values)


def oscillatory_target(T, f1=4.0, f2=9.0):
    s = _phase(T)
    return 0.6 * np.sin(2 * np.pi * f1 * s) + 0.3 * np.cos(2 * np.pi * f2 * s)


def non_stationary_target(T, f0=1.0, f1=8.0):
    """Chirp whose frequency sweeps f0 -> f1 with a growing envelope."""
    s = _phase(T)
    return (0.3 + 0.7 * s) * np.sin(2 * np.pi * (f0 * s + 0.5 * (f1 - f0) * s * s))


def chaotic_target(T, x0=0.4, r=LOGISTIC_R, knots=None):
    """Logistic-map iterates linearly interpolated between ``knots`` nodes."""
    knots = max(2, T // 4) if knots is None else knots
    x = np.empty(knots)
    x[0] = x0
    for k in range(1, knots):
        x[k] = r * x[k - 1] * (1.0 - x[k - 1])
    return np.interp(_phase(T), np.linspace(0.0, 1.0, knots), x)


def discontinuous_target(T, jump_at=0.5, height=1.0):
    s = _phase(T)
    return 0.5 * s + height * (s >= jump_at)


_SCALAR = {
    Family.SINE: sine_target,
    Family.PIECEWISE_LINEAR: piecewise_linear_target,
    Family.OSCILLATORY: oscillatory_target,
    Family.NON_STATIONARY: non_stationary_target,
    Family.CHAOTIC: chaotic_target,
    Family.DISCONTINUOUS: discontinuous_target,
}


def _noise(rng, kind, sigma, T, dim):
    """iid per-step noise, or a smooth random perturbation of the same scale."""
    if sigma == 0:
        return np.zeros((T, dim))
    if kind == "iid":
        return sigma * rng.normal(size=(T, dim))
    s = _phase(T)[:, None]
    a0, a1 = rng.normal(size=(2, dim))
    phi = rng.uniform(0, 2 * np.pi, size=dim)
    return sigma * (a0 + a1 * np.sin(np.pi * s + phi)) / np.sqrt(1.5)


def _scalar(spec: SynthSpec, rng) -> Dataset:
    truth = _SCALAR[spec.family](spec.T, **spec.params)[:, None]
    gt = Trajectory(SCALAR, truth, demo_id="truth")
    demos = [Trajectory(SCALAR, truth + _noise(rng, spec.noise_kind, spec.noise, spec.T, 1), demo_id=f"demo{n}")
             for n in range(spec.N)]
    return Dataset(demos, [gt], spec=spec)


# -- pose families ---------------------------------------------------------


def _axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


def _ramp(s, onset, width):
    if width <= 0:
        return (s >= onset).astype(float)
    u = np.clip((s - onset) / width, 0.0, 1.0)
    return u * u * (3 - 2 * u)


def base_pose_path(T):
    """A smooth reach-and-turn end-effector path (positions in metres)."""
    s = _phase(T)
    pos = np.stack([0.3 + 0.3 * s, 0.1 * np.sin(np.pi * s), 0.4 - 0.2 * s], axis=1)
    quat = np.stack([_axis_angle([0.2, 0.1, 1.0], 0.8 * si) for si in s])
    return np.concatenate([pos, quat], axis=1)


def _perturb_pose(rng, spec, truth):
    T = truth.shape[0]
    dpos = _noise(rng, spec.noise_kind, spec.noise, T, 3)
    drot = _noise(rng, spec.noise_kind, spec.noise, T, 3)
    out = POSE.exp(truth, np.concatenate([dpos, drot], axis=1))
    return out


def _multimode(spec: SynthSpec, rng) -> Dataset:
    p = dict(spec.params)
    M = int(p.pop("M", 3))
    separation = float(p.pop("separation", 10.0))
    onset = float(p.pop("onset", 0.0))
    width = float(p.pop("ramp", 0.0))
    axis = int(p.pop("axis", 1))
    if p:
        raise ValueError(f"unknown multimode_pose parameters: {sorted(p)}")
    if M < 1 or not 0 <= axis < 3:
        raise ValueError("multimode_pose needs M >= 1 and axis in {0, 1, 2}")
    base = base_pose_path(spec.T)
    shape = _ramp(_phase(spec.T), onset, width)
    # offsets are measured in noise standard deviations (1 mm if noise-free)
    unit = spec.noise if spec.noise > 0 else 1e-3
    truths = []
    for m in range(M):
        c = base.copy()
        c[:, axis] += (m - (M - 1) / 2) * separation * unit * shape
        truths.append(Trajectory(POSE, c, demo_id=f"mode{m}"))
    labels = np.arange(spec.N) % M
    demos = [Trajectory(POSE, _perturb_pose(rng, spec, truths[m].coords), demo_id=f"demo{n}")
             for n, m in enumerate(labels)]
    return Dataset(demos, truths, labels=labels, spec=spec)


def _arm_traced(spec: SynthSpec, rng) -> Dataset:
    from ..vapor.kinematics import load_chain

    p = dict(spec.params)
    chain = load_chain(p.pop("chain", "franka7"))
    script = p.pop("script", "reach")
    if script != "reach":
        raise ValueError(f"unknown arm script {script!r}")
    lo, hi = chain.lower, chain.upper
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    q_start = np.asarray(p.pop("q_start", mid + 0.3 * half * rng.uniform(-1, 1, chain.n)), dtype=float)
    q_end = np.asarray(p.pop("q_end", mid + 0.3 * half * rng.uniform(-1, 1, chain.n)), dtype=float)
    if p:
        raise ValueError(f"unknown arm_traced parameters: {sorted(p)}")
    s = _phase(spec.T)[:, None]
    u = s * s * (3 - 2 * s)
    q_true = q_start + (q_end - q_start) * u
    truth = Trajectory(POSE, chain.fk_pose(q_true), demo_id="truth")
    demos, joints = [], []
    for n in range(spec.N):
        q = np.clip(q_true + _noise(rng, spec.noise_kind, spec.noise, spec.T, chain.n), lo, hi)
        joints.append(q)
        demos.append(Trajectory(POSE, chain.fk_pose(q), demo_id=f"demo{n}"))
    return Dataset(demos, [truth], joints=joints, spec=spec)


def generate(spec: SynthSpec, rng: np.random.Generator | None = None) -> Dataset:
    """Build the dataset described by ``spec`` (seeded by ``spec.seed`` unless ``rng`` is given)."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if spec.family in SCALAR_FAMILIES:
        return _scalar(spec, rng)
    if spec.family is Family.MULTIMODE_POSE:
        return _multimode(spec, rng)
    return _arm_traced(spec, rng)
