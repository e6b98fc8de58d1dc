"""Evaluation metrics: tracking error, smoothness, partition agreement."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.metrics import adjusted_rand_score

from ..digap import DiGaP, Trajectory, resample_coords
from ..errors import SpecMismatchError


def rmse(predicted: Trajectory, reference: Trajectory) -> tuple[float, bool]:
    """Root mean squared geodesic distance per step; the reference is resampled if lengths differ.

    Returns the error and whether resampling happened.
    """
    if len(predicted) == 0 or len(reference) == 0:
        raise ValueError("empty trajectory")
    if predicted.spec != reference.spec:
        raise SpecMismatchError(f"cannot compare {predicted.spec} with {reference.spec}")
    ref = reference.coords
    resampled = len(ref) != len(predicted)
    if resampled:
        ref = resample_coords(reference.spec, ref, len(predicted))
    d = predicted.spec.dist(predicted.coords, ref)
    return float(np.sqrt(np.mean(d * d))), resampled


def total_acceleration(traj: Trajectory | np.ndarray, sample_rate_hz: float, spec=None) -> float:
    """Sum over interior steps of ||x_{t+1} - 2 x_t + x_{t-1}|| * rate^2 on the Euclidean coordinates.

    The two boundary steps have no central second difference and are skipped,
    so uniform linear motion scores exactly zero.
    """
    if isinstance(traj, Trajectory):
        spec = traj.spec
        X = traj.coords
    else:
        X = np.asarray(traj, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
    if len(X) == 0:
        raise ValueError("empty trajectory")
    if spec is not None:
        X = X[:, spec.euclid_ambient]
    if len(X) < 3 or X.shape[1] == 0:
        return 0.0
    acc = (X[2:] - 2 * X[1:-1] + X[:-2]) * sample_rate_hz ** 2
    return float(np.sum(np.linalg.norm(acc, axis=1)))


def ari(labels_true, labels_pred) -> float:
    return float(adjusted_rand_score(np.asarray(labels_true), np.asarray(labels_pred)))


@dataclass
class MetricsReport:
    rmse: float | None = None
    total_acceleration: float | None = None
    reference_acceleration: float | None = None
    ari: float | None = None
    constraints_satisfied: dict = field(default_factory=dict)
    nll: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    resampled: bool = False

    def __post_init__(self):
        for k in ("rmse", "total_acceleration", "reference_acceleration", "ari"):
            v = getattr(self, k)
            if v is not None and not np.isfinite(v):
                raise ValueError(f"metric {k} is not finite: {v}")

    def to_json(self) -> dict:
        return asdict(self)


def evaluate(predicted: Trajectory | DiGaP, reference: Trajectory | None = None,
             sample_rate_hz: float | None = None, labels_true=None, labels_pred=None) -> MetricsReport:
    """Metrics of a predicted trajectory (or a DiGaP's mean) against a reference."""
    if isinstance(predicted, DiGaP):
        rate = predicted.sample_rate_hz if sample_rate_hz is None else sample_rate_hz
        predicted = Trajectory(predicted.spec, predicted.mu)
    else:
        rate = 20.0 if sample_rate_hz is None else sample_rate_hz
    rep = MetricsReport(total_acceleration=total_acceleration(predicted, rate))
    if reference is not None:
        rep.rmse, rep.resampled = rmse(predicted, reference)
        rep.reference_acceleration = total_acceleration(reference, rate)
    if labels_true is not None and labels_pred is not None:
        rep.ari = ari(labels_true, labels_pred)
    return rep
