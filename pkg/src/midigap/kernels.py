"""Backend selection for the numerical kernels.

The compiled ``_ckernels`` extension is used when it can be imported; the
numpy versions in ``_kernels_py`` are the fallback. Setting the environment
variable ``MIDIGAP_PURE_PYTHON=1`` forces the fallback.
"""
import os

from . import _kernels_py

ANTIPODAL_TOL = _kernels_py.ANTIPODAL_TOL

_NAMES = ("quat_mul", "quat_log", "quat_exp", "quat_angle", "sq_dist_to", "sq_dist_matrix", "chain_fk")


def _load_compiled():
    if os.environ.get("MIDIGAP_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "numpy"
_impl = _compiled if _compiled is not None else _kernels_py


def get_backend(name):
    """Return the kernel module for ``name`` ("cython" or "numpy")."""
    if name == "numpy":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            from . import _ckernels  # raises ImportError if not built
            return _ckernels
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    names = ["numpy"]
    try:
        get_backend("cython")
        names.append("cython")
    except ImportError:
        pass
    return names


quat_mul = _impl.quat_mul
quat_log = _impl.quat_log
quat_exp = _impl.quat_exp
quat_angle = _impl.quat_angle
sq_dist_to = _impl.sq_dist_to
sq_dist_matrix = _impl.sq_dist_matrix
chain_fk = _impl.chain_fk
