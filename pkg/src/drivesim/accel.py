"""Optional numba acceleration for the hot numeric kernels.

All kernels in :mod:`drivesim.kernels` are written as plain scalar/loop
numpy code so the same source runs compiled (numba) or interpreted.
Set DRIVESIM_NUMBA=0 to force the pure-Python/numpy fallback; the
benchmark script in benchmarks/ compares the two paths.
"""
import os

ENV_FLAG = "DRIVESIM_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "off")


try:
    if not _numba_requested():
        raise ImportError("numba disabled via %s" % ENV_FLAG)
    from numba import njit as _njit

    NUMBA_ENABLED = True

    def maybe_njit(**kwargs):
        kwargs.setdefault("cache", True)
        return _njit(**kwargs)

except ImportError:
    NUMBA_ENABLED = False

    def maybe_njit(**kwargs):
        def wrap(func):
            return func

        return wrap
