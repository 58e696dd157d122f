"""Finite-strength Gaussian Kraus measurements and their noninvasive limit.

The rescaled Kraus operator for reading ``A`` with strength ``eta`` is

    K(a) = C * exp(-eta^2 (A - a)^2),   C^2 = eta * sqrt(2 / pi).

Expanding over eigenprojectors, ``K(a) X K(a)^+`` splits into blocks
``Pi_i X Pi_j`` times ``exp(-eta^2 (l_i - l_j)^2 / 2)`` times a normalized Gaussian
in ``a`` of mean ``(l_i + l_j)/2`` and variance ``1/(4 eta^2)``.  A sequence of
readings is therefore a Gaussian mixture whose weights come from the same branch
walk as the quasiprobability, with damped off-diagonal blocks.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .core import DensityState, ValidationError, hermitian_eig, unvec
from .quasiprob import (
    ATOM_TOL,
    DEFAULT_ATOM_LIMIT,
    MemoryKernel,
    Schedule,
    enumerate_branches,
    q_correlator,
)

MAX_MOMENT_DEGREE = 6
DEFAULT_ETAS = (0.2, 0.1, 0.05, 0.025)


def detection_variance(eta: float) -> float:
    return 1.0 / (4.0 * eta * eta)


def _check_eta(eta: float) -> float:
    eta = float(eta)
    if not 0 < eta <= 1:
        raise ValidationError(f"eta must lie in (0, 1], got {eta}", "eta")
    return eta


def kraus_operator(obs, eta: float, a: float) -> np.ndarray:
    """``C exp(-eta^2 (A - a)^2)`` as a matrix."""
    eta = _check_eta(eta)
    spec = hermitian_eig(obs)
    c = math.sqrt(eta * math.sqrt(2 / math.pi))
    return c * sum(math.exp(-eta * eta * (lam - a) ** 2) * p for lam, p in zip(spec.eigenvalues, spec.projectors))


def kraus_families(obs, eta: float) -> list:
    """``[(mean, action)]``: damped block projectors grouped by midpoint."""
    eta = _check_eta(eta)
    spec = hermitian_eig(obs)
    lam, proj = spec.eigenvalues, spec.projectors
    d = proj[0].shape[0]
    groups: dict = {}
    for i in range(len(lam)):
        for j in range(len(lam)):
            mid = (lam[i] + lam[j]) / 2
            damp = math.exp(-eta * eta * (lam[i] - lam[j]) ** 2 / 2)
            key = next((k for k in groups if abs(k - mid) <= ATOM_TOL), mid)
            groups[key] = groups.get(key, np.zeros((d * d, d * d), complex)) + damp * np.kron(proj[j].T, proj[i])
    return sorted(groups.items())


def kraus_step(x: np.ndarray, obs, eta: float) -> list:
    """One reading applied to operator ``x``: ``[(mean, operator weight)]``."""
    x = np.asarray(x, dtype=complex)
    d = x.shape[0]
    return [(mean, unvec(a @ x.reshape(-1, order="F"), d)) for mean, a in kraus_families(obs, eta)]


@dataclass(frozen=True)
class BranchMixture:
    """Gaussian mixture over outcome vectors; each branch keeps its operator weight."""

    means: np.ndarray
    variance: float
    operators: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return np.real(np.trace(self.operators, axis1=1, axis2=2))

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def density(self, a) -> float:
        a = np.asarray(a, dtype=float)
        z = (a[None, :] - self.means) ** 2 / (2 * self.variance)
        norm = (2 * math.pi * self.variance) ** (-self.means.shape[1] / 2)
        return float(norm * np.dot(self.weights, np.exp(-z.sum(axis=1))))


def branch_mixture(state, schedule: Schedule, eta: float, limit: int = DEFAULT_ATOM_LIMIT) -> BranchMixture:
    rho = state.matrix if isinstance(state, DensityState) else DensityState(state).matrix
    d = rho.shape[0]
    fams = [kraus_families(schedule.step_observable(k), eta) for k in range(schedule.n)]
    merged: dict = {}
    for means, x in enumerate_branches(rho, fams, limit, keep_operator=True):
        key = tuple(round(m / ATOM_TOL) for m in means)
        if key in merged:
            merged[key] = (merged[key][0], merged[key][1] + x)
        else:
            merged[key] = (means, x)
    items = sorted(merged.values())
    means = np.array([m for m, _ in items], dtype=float).reshape(len(items), schedule.n)
    ops = np.array([unvec(x, d) for _, x in items]).reshape(len(items), d, d)
    return BranchMixture(means, detection_variance(eta), ops)


def gaussian_raw_moment(mean: float, var: float, k: int) -> float:
    """``E[x^k]`` for ``x ~ N(mean, var)``."""
    total = 0.0
    for j in range(0, k + 1, 2):
        total += math.comb(k, j) * mean ** (k - j) * var ** (j // 2) * _double_factorial(j - 1)
    return total


def _double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def mixture_moment(mix: BranchMixture, exponents) -> float:
    exponents = list(exponents)
    w = mix.weights
    total = 0.0
    for b in range(mix.means.shape[0]):
        term = w[b]
        for t, k in enumerate(exponents):
            if k:
                term *= gaussian_raw_moment(mix.means[b, t], mix.variance, k)
        total += term
    return float(total)


def joint_moments(state, schedule: Schedule, eta: float, selection) -> float:
    """``<prod_{s in selection} a_s>`` under the finite-``eta`` measurement.

    Repeated step indices raise powers, e.g. ``[0, 0]`` gives ``<a_0^2>``.
    """
    selection = [int(s) for s in selection]
    if len(selection) > MAX_MOMENT_DEGREE:
        raise ValidationError(f"moment degree {len(selection)} exceeds {MAX_MOMENT_DEGREE}", "selection")
    counts = Counter(selection)
    if any(not 0 <= s < schedule.n for s in counts):
        raise ValidationError("selection index out of range", "selection")
    mix = branch_mixture(state, schedule, eta)
    return mixture_moment(mix, [counts.get(t, 0) for t in range(schedule.n)])


@dataclass
class ExtrapolationReport:
    eta_list: tuple
    values: tuple
    extrapolated: float
    reference: float
    discrepancy: float
    fitted_order: float
    flagged: bool
    note: str = ""

    def to_json(self) -> dict:
        return {
            "eta_list": list(self.eta_list),
            "values": list(self.values),
            "extrapolated": self.extrapolated,
            "reference": self.reference,
            "discrepancy": self.discrepancy,
            "fitted_order": self.fitted_order,
            "flagged": self.flagged,
            "note": self.note,
        }

    def to_csv(self, digits: int = 12) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eta", "value"])
        for eta, v in zip(self.eta_list, self.values):
            w.writerow([f"{eta:.{digits}g}", f"{v:.{digits}g}"])
        for key in ("extrapolated", "reference", "discrepancy", "fitted_order"):
            w.writerow([key, f"{getattr(self, key):.{digits}g}"])
        return buf.getvalue()


def richardson(h, values) -> float:
    """Value at ``h = 0`` of the interpolating polynomial (Neville)."""
    h = list(map(float, h))
    p = list(map(float, values))
    n = len(h)
    for k in range(1, n):
        for i in range(n - k):
            p[i] = (h[i] * p[i + 1] - h[i + k] * p[i]) / (h[i] - h[i + k])
    return p[0]


def weak_limit(state, schedule: Schedule, selection, eta_list=DEFAULT_ETAS) -> ExtrapolationReport:
    """Extrapolate ``joint_moments`` to ``eta -> 0`` in the variable ``eta^2``.

    The reference is the Markovian quasiprobability correlator of the same steps.
    """
    etas = tuple(float(e) for e in eta_list)
    if len(etas) < 3 or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValidationError("eta_list needs at least 3 strictly decreasing entries", "eta_list")
    selection = [int(s) for s in selection]
    if len(set(selection)) != len(selection):
        raise ValidationError("weak limit is defined for distinct steps only", "selection")
    values = tuple(joint_moments(state, schedule, e, selection) for e in etas)
    extrap = richardson([e * e for e in etas], values)
    reference = q_correlator(state, schedule, MemoryKernel(), selection)

    diffs = np.abs(np.array(values) - extrap)
    scale = max(1.0, float(np.abs(values).max()))
    usable = diffs > 1e-13 * scale
    note = ""
    if usable.sum() >= 2:
        slope = np.polyfit(np.log(np.array(etas)[usable]), np.log(diffs[usable]), 1)[0]
        order = float(slope)
    else:
        order = math.nan
        note = "values independent of eta to rounding; convergence order undefined"
    flagged = bool(usable.sum() >= 2 and np.any(np.diff(diffs[usable]) > 0))
    if flagged:
        note = "differences do not shrink with eta"
    return ExtrapolationReport(etas, values, float(extrap), reference, float(abs(extrap - reference)), order, flagged, note)
