"""Hot kernels: signed log-sum-exp evaluation of product-noise mixtures.

Set ``QUASINOISE_DISABLE_NUMBA=1`` to force the pure-numpy path.  Both paths
produce the same numbers up to summation order.
"""

from __future__ import annotations

import math
import os

import numpy as np

GAUSSIAN = 0
LAPLACE = 1

_LOG_2PI = math.log(2 * math.pi)

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
if NUMBA_AVAILABLE and "NUMBA_THREADING_LAYER" not in os.environ:
    # tbb is tried last: older system builds warn on import
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("QUASINOISE_DISABLE_NUMBA", "").lower() not in ("1", "true", "yes")


def set_backend(name: str) -> None:
    """Switch between ``"numba"`` and ``"numpy"`` at runtime (tests, benchmarks)."""
    global USE_NUMBA
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba is not installed")
        USE_NUMBA = True
    elif name == "numpy":
        USE_NUMBA = False
    else:
        raise ValueError(f"unknown backend {name!r}")


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def set_threads(n: int) -> None:
    if NUMBA_AVAILABLE and n > 0:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _log_factors_numpy(u, kinds, params):
    # u: (..., n)
    gauss = kinds == GAUSSIAN
    out = np.where(
        gauss,
        -0.5 * u * u / params - 0.5 * (_LOG_2PI + np.log(params)),
        np.log(params / 2) - params * np.abs(u),
    )
    return out.sum(axis=-1)


def _mixture_numpy(points, atoms, weights, kinds, params, chunk=4096):
    npts = points.shape[0]
    s = np.empty(npts)
    a = np.empty(npts)
    lm = np.empty(npts)
    for lo in range(0, npts, chunk):
        p = points[lo : lo + chunk]
        lt = _log_factors_numpy(p[:, None, :] - atoms[None, :, :], kinds, params)
        mx = lt.max(axis=1)
        e = np.exp(lt - mx[:, None])
        s[lo : lo + chunk] = e @ weights
        a[lo : lo + chunk] = e @ np.abs(weights)
        lm[lo : lo + chunk] = mx
    return s, a, lm


if NUMBA_AVAILABLE:

    @numba.njit(cache=True, fastmath=False)
    def _log_factor(u, kind, param):
        if kind == GAUSSIAN:
            return -0.5 * u * u / param - 0.5 * (_LOG_2PI + math.log(param))
        return math.log(param / 2.0) - param * abs(u)

    @numba.njit(parallel=True, cache=True)
    def _mixture_numba(points, atoms, weights, kinds, params):
        npts, n = points.shape
        m = atoms.shape[0]
        s = np.empty(npts)
        a = np.empty(npts)
        lm = np.empty(npts)
        for p in numba.prange(npts):
            lt = np.empty(m)
            mx = -np.inf
            for j in range(m):
                acc = 0.0
                for i in range(n):
                    acc += _log_factor(points[p, i] - atoms[j, i], kinds[i], params[i])
                lt[j] = acc
                if acc > mx:
                    mx = acc
            ss = 0.0
            aa = 0.0
            for j in range(m):
                e = math.exp(lt[j] - mx)
                ss += weights[j] * e
                aa += abs(weights[j]) * e
            s[p] = ss
            a[p] = aa
            lm[p] = mx
        return s, a, lm


def mixture_scaled(points, atoms, weights, kinds, params):
    """Evaluate ``sum_j w_j prod_i N_i(x_i - atom_ji)`` at many points.

    Returns ``(signed, absolute, logscale)`` with the true values equal to
    ``signed * exp(logscale)`` and ``absolute * exp(logscale)``; ``absolute`` is the
    same sum with ``|w_j|`` and sets the rounding scale of ``signed``.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    atoms = np.ascontiguousarray(atoms, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    kinds = np.ascontiguousarray(kinds, dtype=np.int64)
    params = np.ascontiguousarray(params, dtype=np.float64)
    if points.ndim == 1:
        points = points[None, :]
    if atoms.shape[0] == 0:
        z = np.zeros(points.shape[0])
        return z, z.copy(), np.full(points.shape[0], -np.inf)
    if USE_NUMBA:
        return _mixture_numba(points, atoms, weights, kinds, params)
    return _mixture_numpy(points, atoms, weights, kinds, params)
