# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_kernels_py``.

Signatures and conventions are identical; see that module for documentation.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, atan2, sin, cos, fabs

cnp.import_array()

cdef double ANTIPODAL_TOL = 1e-12


cdef inline void _qmul(double aw, double ax, double ay, double az,
                       double bw, double bx, double by, double bz,
                       double* out) noexcept nogil:
    out[0] = aw * bw - ax * bx - ay * by - az * bz
    out[1] = aw * bx + ax * bw + ay * bz - az * by
    out[2] = aw * by - ax * bz + ay * bw + az * bx
    out[3] = aw * bz + ax * by - ay * bx + az * bw


def quat_mul(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    shape = np.broadcast_shapes(a.shape, b.shape)
    a2 = np.ascontiguousarray(np.broadcast_to(a, shape)).reshape(-1, 4)
    b2 = np.ascontiguousarray(np.broadcast_to(b, shape)).reshape(-1, 4)
    out = np.empty_like(a2)
    cdef const double[:, ::1] A = a2
    cdef const double[:, ::1] B = b2
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i, n = A.shape[0]
    with nogil:
        for i in range(n):
            _qmul(A[i, 0], A[i, 1], A[i, 2], A[i, 3],
                  B[i, 0], B[i, 1], B[i, 2], B[i, 3], &O[i, 0])
    return out.reshape(shape)


def quat_log(base, p):
    cdef const double[:, ::1] B = np.ascontiguousarray(base, dtype=np.float64)
    cdef const double[:, ::1] P = np.ascontiguousarray(p, dtype=np.float64)
    cdef Py_ssize_t n = B.shape[0]
    out = np.empty((n, 3))
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i
    cdef Py_ssize_t bad = -1
    cdef double r[4]
    cdef double s, theta, factor, sign
    with nogil:
        for i in range(n):
            _qmul(B[i, 0], -B[i, 1], -B[i, 2], -B[i, 3],
                  P[i, 0], P[i, 1], P[i, 2], P[i, 3], r)
            if fabs(r[0]) < ANTIPODAL_TOL and bad < 0:
                bad = i
            sign = -1.0 if r[0] < 0.0 else 1.0
            r[0] *= sign
            r[1] *= sign
            r[2] *= sign
            r[3] *= sign
            s = sqrt(r[1] * r[1] + r[2] * r[2] + r[3] * r[3])
            if s > 1e-12:
                theta = 2.0 * atan2(s, r[0])
                factor = theta / s
            elif r[0] > 0.0:
                factor = 2.0 / r[0]
            else:
                factor = 2.0
            O[i, 0] = r[1] * factor
            O[i, 1] = r[2] * factor
            O[i, 2] = r[3] * factor
    return out, int(bad)


def quat_exp(base, v):
    cdef const double[:, ::1] B = np.ascontiguousarray(base, dtype=np.float64)
    cdef const double[:, ::1] V = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = B.shape[0]
    out = np.empty((n, 4))
    cdef double[:, ::1] O = out
    cdef Py_ssize_t i
    cdef double theta, half, k, nrm
    cdef double r[4]
    with nogil:
        for i in range(n):
            theta = sqrt(V[i, 0] * V[i, 0] + V[i, 1] * V[i, 1] + V[i, 2] * V[i, 2])
            half = 0.5 * theta
            if theta < 1e-8:
                k = 0.5 - theta * theta / 48.0
            else:
                k = sin(half) / theta
            _qmul(B[i, 0], B[i, 1], B[i, 2], B[i, 3],
                  cos(half), V[i, 0] * k, V[i, 1] * k, V[i, 2] * k, r)
            nrm = sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3])
            if r[0] < 0.0:
                nrm = -nrm
            O[i, 0] = r[0] / nrm
            O[i, 1] = r[1] / nrm
            O[i, 2] = r[2] / nrm
            O[i, 3] = r[3] / nrm
    return out


def quat_angle(a, b):
    cdef const double[:, ::1] A = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[:, ::1] B = np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t n = A.shape[0]
    out = np.empty(n)
    cdef double[::1] O = out
    cdef Py_ssize_t i
    cdef double r[4]
    with nogil:
        for i in range(n):
            _qmul(A[i, 0], -A[i, 1], -A[i, 2], -A[i, 3],
                  B[i, 0], B[i, 1], B[i, 2], B[i, 3], r)
            O[i] = 2.0 * atan2(sqrt(r[1] * r[1] + r[2] * r[2] + r[3] * r[3]), fabs(r[0]))
    return out


cdef void _sq_dist(const double[:, ::1] X, const double[:, ::1] C,
                   const cnp.int64_t[::1] e_idx, const cnp.int64_t[::1] q_off,
                   double[:, ::1] D, bint symmetric) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], m = C.shape[0]
    cdef Py_ssize_t ne = e_idx.shape[0], nq = q_off.shape[0]
    cdef Py_ssize_t i, j, k, o, jstart
    cdef double acc, diff, ang
    cdef double r[4]
    for i in range(n):
        jstart = i + 1 if symmetric else 0
        if symmetric:
            D[i, i] = 0.0
        for j in range(jstart, m):
            acc = 0.0
            for k in range(ne):
                diff = X[i, e_idx[k]] - C[j, e_idx[k]]
                acc += diff * diff
            for k in range(nq):
                o = q_off[k]
                _qmul(X[i, o], -X[i, o + 1], -X[i, o + 2], -X[i, o + 3],
                      C[j, o], C[j, o + 1], C[j, o + 2], C[j, o + 3], r)
                ang = 2.0 * atan2(sqrt(r[1] * r[1] + r[2] * r[2] + r[3] * r[3]), fabs(r[0]))
                acc += ang * ang
            D[i, j] = acc
            if symmetric:
                D[j, i] = acc


def sq_dist_to(X, C, e_idx, q_off):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef const cnp.int64_t[::1] ev = np.ascontiguousarray(e_idx, dtype=np.int64)
    cdef const cnp.int64_t[::1] qv = np.ascontiguousarray(q_off, dtype=np.int64)
    out = np.empty((Xv.shape[0], Cv.shape[0]))
    cdef double[:, ::1] D = out
    with nogil:
        _sq_dist(Xv, Cv, ev, qv, D, False)
    return out


def sq_dist_matrix(X, e_idx, q_off):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const cnp.int64_t[::1] ev = np.ascontiguousarray(e_idx, dtype=np.int64)
    cdef const cnp.int64_t[::1] qv = np.ascontiguousarray(q_off, dtype=np.int64)
    out = np.empty((Xv.shape[0], Xv.shape[0]))
    cdef double[:, ::1] D = out
    with nogil:
        _sq_dist(Xv, Xv, ev, qv, D, True)
    return out


cdef inline void _matmul3(const double* A, const double* B, double* out) noexcept nogil:
    # row-major 3x3 product, out must not alias A or B
    cdef int i, j
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = A[3 * i] * B[j] + A[3 * i + 1] * B[3 + j] + A[3 * i + 2] * B[6 + j]


def chain_fk(axes, origins, ee, Q):
    cdef const double[:, ::1] Ax = np.ascontiguousarray(axes, dtype=np.float64)
    cdef const double[:, :, ::1] Og = np.ascontiguousarray(origins, dtype=np.float64)
    cdef const double[:, ::1] E = np.ascontiguousarray(ee, dtype=np.float64)
    cdef const double[:, ::1] Qv = np.ascontiguousarray(Q, dtype=np.float64)
    cdef Py_ssize_t T = Qv.shape[0], n = Qv.shape[1]
    pos = np.empty((T, 3))
    rot = np.empty((T, 3, 3))
    jac = np.empty((T, 6, n))
    cdef double[:, ::1] P = pos
    cdef double[:, :, ::1] Rout = rot
    cdef double[:, :, ::1] J = jac
    cdef double R[9]
    cdef double tmp[9]
    cdef double L[9]
    cdef double p[3]
    cdef double ja[64 * 3]
    cdef double jp[64 * 3]
    cdef Py_ssize_t t, i, a, b
    cdef double x, y, z, c, s, k, q, dx, dy, dz
    if n > 64:
        raise ValueError("chain_fk supports at most 64 joints")
    with nogil:
        for t in range(T):
            for a in range(9):
                R[a] = 0.0
            R[0] = 1.0
            R[4] = 1.0
            R[8] = 1.0
            p[0] = 0.0
            p[1] = 0.0
            p[2] = 0.0
            for i in range(n):
                for a in range(3):
                    p[a] += R[3 * a] * Og[i, 0, 3] + R[3 * a + 1] * Og[i, 1, 3] + R[3 * a + 2] * Og[i, 2, 3]
                for a in range(3):
                    for b in range(3):
                        L[3 * a + b] = Og[i, a, b]
                _matmul3(R, L, tmp)
                x = Ax[i, 0]
                y = Ax[i, 1]
                z = Ax[i, 2]
                for a in range(3):
                    ja[3 * i + a] = tmp[3 * a] * x + tmp[3 * a + 1] * y + tmp[3 * a + 2] * z
                    jp[3 * i + a] = p[a]
                q = Qv[t, i]
                c = cos(q)
                s = sin(q)
                k = 1.0 - c
                L[0] = k * x * x + c
                L[1] = k * x * y - s * z
                L[2] = k * x * z + s * y
                L[3] = k * x * y + s * z
                L[4] = k * y * y + c
                L[5] = k * y * z - s * x
                L[6] = k * x * z - s * y
                L[7] = k * y * z + s * x
                L[8] = k * z * z + c
                _matmul3(tmp, L, R)
            for a in range(3):
                p[a] += R[3 * a] * E[0, 3] + R[3 * a + 1] * E[1, 3] + R[3 * a + 2] * E[2, 3]
            for a in range(3):
                for b in range(3):
                    L[3 * a + b] = E[a, b]
            _matmul3(R, L, tmp)
            for a in range(3):
                P[t, a] = p[a]
                for b in range(3):
                    Rout[t, a, b] = tmp[3 * a + b]
            for i in range(n):
                dx = p[0] - jp[3 * i]
                dy = p[1] - jp[3 * i + 1]
                dz = p[2] - jp[3 * i + 2]
                J[t, 0, i] = ja[3 * i + 1] * dz - ja[3 * i + 2] * dy
                J[t, 1, i] = ja[3 * i + 2] * dx - ja[3 * i] * dz
                J[t, 2, i] = ja[3 * i] * dy - ja[3 * i + 1] * dx
                J[t, 3, i] = ja[3 * i]
                J[t, 4, i] = ja[3 * i + 1]
                J[t, 5, i] = ja[3 * i + 2]
    return pos, rot, jac
