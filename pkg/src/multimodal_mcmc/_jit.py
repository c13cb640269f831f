"""Numba toggle for the hot loops.

Set ``MULTIMODAL_MCMC_DISABLE_JIT=1`` to run every kernel in ``_loops`` as
plain Python/numpy. Both paths consume the same ``numpy.random.Generator``
draws, so outputs agree bit for bit.
"""

import os

ENV_FLAG = "MULTIMODAL_MCMC_DISABLE_JIT"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

JIT_ENABLED = numba is not None and os.environ.get(ENV_FLAG, "0") not in ("1", "true", "yes")


def jit(fn):
    """Compile ``fn`` in nopython mode when numba is active, else return it.

    The original Python function stays reachable as ``fn.py_func`` in both
    cases so benchmarks and equivalence tests can call either path.
    """
    if JIT_ENABLED:
        return numba.njit(cache=True)(fn)
    fn.py_func = fn
    return fn
