import numpy as np
import pytest

from midigap import kernels
from midigap.manifold import ManifoldSpec


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def random_points(spec: ManifoldSpec, rng, n, scale=1.0):
    x = np.empty((n, spec.ambient_dim))
    x[:, spec.euclid_ambient] = scale * rng.normal(size=(n, len(spec.euclid_ambient)))
    for qa in spec.quat_ambient:
        x[:, qa] = random_quats(rng, n)
    return x


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=kernels.available_backends())
def backend(request):
    return kernels.get_backend(request.param)
