"""Numpy implementations of the numerical kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors every function
here with the same signature and is preferred when it has been compiled.
Quaternions are stored (w, x, y, z) and composed with the Hamilton product.
"""
import numpy as np

ANTIPODAL_TOL = 1e-12


def quat_mul(a, b):
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def _relative(base, p):
    # conj(base) * p
    conj = base * np.array([1.0, -1.0, -1.0, -1.0])
    return quat_mul(conj, p)


def quat_log(base, p):
    """Rotation-vector log of ``base^-1 * p`` for row-stacked quaternions.

    Returns ``(out, bad)`` where ``bad`` is the index of the first pair whose
    relative rotation is 180 degrees (log undefined), or -1.
    """
    r = _relative(base, p)
    w = r[:, 0]
    bad_mask = np.abs(w) < ANTIPODAL_TOL
    bad = int(np.argmax(bad_mask)) if bad_mask.any() else -1
    sign = np.where(w < 0.0, -1.0, 1.0)
    w = w * sign
    vec = r[:, 1:] * sign[:, None]
    s = np.linalg.norm(vec, axis=1)
    theta = 2.0 * np.arctan2(s, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        factor = np.where(s > 1e-12, theta / np.where(s > 1e-12, s, 1.0), 2.0 / np.where(w > 0, w, 1.0))
    return vec * factor[:, None], bad


def quat_exp(base, v):
    """``base * exp(v / 2)`` with the result sign-canonicalised to w >= 0."""
    theta = np.linalg.norm(v, axis=1)
    half = 0.5 * theta
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / safe)
    dq = np.empty((v.shape[0], 4))
    dq[:, 0] = np.cos(half)
    dq[:, 1:] = v * k[:, None]
    out = quat_mul(base, dq)
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    out[out[:, 0] < 0.0] *= -1.0
    return out


def quat_angle(a, b):
    """Rotation angle between row-stacked quaternions, sign invariant."""
    r = _relative(a, b)
    return 2.0 * np.arctan2(np.linalg.norm(r[:, 1:], axis=1), np.abs(r[:, 0]))


def sq_dist_to(X, C, e_idx, q_off):
    """Squared product-manifold distances between rows of ``X`` and ``C``."""
    d = np.zeros((X.shape[0], C.shape[0]))
    if len(e_idx):
        xe = X[:, e_idx]
        ce = C[:, e_idx]
        d += (
            np.sum(xe * xe, axis=1)[:, None]
            + np.sum(ce * ce, axis=1)[None, :]
            - 2.0 * xe @ ce.T
        )
        np.maximum(d, 0.0, out=d)
    for off in q_off:
        qa = X[:, off:off + 4]
        qb = C[:, off:off + 4]
        # relative quaternion conj(a) * b for all pairs
        w = np.abs(qa @ qb.T)
        aw, av = qa[:, 0], qa[:, 1:]
        bw, bv = qb[:, 0], qb[:, 1:]
        vec = (
            aw[:, None, None] * bv[None, :, :]
            - bw[None, :, None] * av[:, None, :]
            - np.cross(av[:, None, :], bv[None, :, :])
        )
        ang = 2.0 * np.arctan2(np.linalg.norm(vec, axis=2), w)
        d += ang * ang
    return d


def sq_dist_matrix(X, e_idx, q_off):
    d = sq_dist_to(X, X, e_idx, q_off)
    np.fill_diagonal(d, 0.0)
    return 0.5 * (d + d.T)


def _rodrigues(axis, angles):
    """Rotation matrices about a unit ``axis`` for an array of angles."""
    x, y, z = axis
    c = np.cos(angles)
    s = np.sin(angles)
    t = 1.0 - c
    R = np.empty(angles.shape + (3, 3))
    R[..., 0, 0] = t * x * x + c
    R[..., 0, 1] = t * x * y - s * z
    R[..., 0, 2] = t * x * z + s * y
    R[..., 1, 0] = t * x * y + s * z
    R[..., 1, 1] = t * y * y + c
    R[..., 1, 2] = t * y * z - s * x
    R[..., 2, 0] = t * x * z - s * y
    R[..., 2, 1] = t * y * z + s * x
    R[..., 2, 2] = t * z * z + c
    return R


def chain_fk(axes, origins, ee, Q):
    """Forward kinematics and geometric Jacobian for a revolute serial chain.

    axes: (n, 3) joint axes in their local frames; origins: (n, 4, 4) joint
    placement relative to the parent; ee: (4, 4) tool offset; Q: (T, n).
    Returns positions (T, 3), rotations (T, 3, 3) and Jacobians (T, 6, n)
    with linear rows first.
    """
    T, n = Q.shape
    R = np.broadcast_to(np.eye(3), (T, 3, 3)).copy()
    p = np.zeros((T, 3))
    joint_axes = np.empty((T, n, 3))
    joint_pos = np.empty((T, n, 3))
    for i in range(n):
        o = origins[i]
        p = p + R @ o[:3, 3]
        R = R @ o[:3, :3]
        joint_axes[:, i] = R @ axes[i]
        joint_pos[:, i] = p
        R = R @ _rodrigues(axes[i], Q[:, i])
    p = p + R @ ee[:3, 3]
    R = R @ ee[:3, :3]
    jac = np.empty((T, 6, n))
    jac[:, :3, :] = np.cross(joint_axes, p[:, None, :] - joint_pos).transpose(0, 2, 1)
    jac[:, 3:, :] = joint_axes.transpose(0, 2, 1)
    return p, R, jac
