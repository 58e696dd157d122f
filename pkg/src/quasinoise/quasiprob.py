"""Quasiprobabilities of observation sequences and their time-ordered correlators.

Every observation ``a`` of an observable ``A`` replaces ``A`` by the symmetrized
superoperator ``A^c``.  Its spectral projectors split an operator ``X`` (written in
the eigenbasis of ``A``) into blocks ``Pi_i X Pi_j`` labelled by the midpoints
``(l_i + l_j) / 2``; chaining these families over a schedule, earliest step first,
and tracing gives the weight of each outcome tuple.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd

import numpy as np

from .core import (
    DensityState,
    HermitianObservable,
    ResourceError,
    Superoperator,
    ValidationError,
    evolve_observable,
    hermitian_eig,
    superop_c,
    superop_q,
    vec,
)

ATOM_TOL = 1e-9
PRUNE_TOL = 1e-14
DEFAULT_ATOM_LIMIT = 10**7


@dataclass(frozen=True)
class Schedule:
    """Ordered observations ``(observable_id, time)`` over a registry of observables."""

    steps: tuple
    registry: tuple
    hamiltonian: HermitianObservable | None = None

    def __post_init__(self):
        steps = tuple((int(i), float(t)) for i, t in self.steps)
        registry = tuple(
            r if isinstance(r, HermitianObservable) else HermitianObservable(r) for r in self.registry
        )
        if not registry:
            raise ValidationError("empty observable registry", "schedule.registry")
        dims = {r.dim for r in registry}
        if len(dims) != 1:
            raise ValidationError(f"observables have mixed dimensions {sorted(dims)}", "schedule.registry")
        ham = self.hamiltonian
        if ham is not None and not isinstance(ham, HermitianObservable):
            ham = HermitianObservable(ham)
        if ham is not None and ham.dim not in dims:
            raise ValidationError("hamiltonian dimension differs from observables", "schedule.hamiltonian")
        for k, (i, t) in enumerate(steps):
            if not 0 <= i < len(registry):
                raise ValidationError(f"unknown observable id {i}", f"schedule.steps[{k}]")
            if not np.isfinite(t):
                raise ValidationError("time must be finite", f"schedule.steps[{k}]")
            if k and t < steps[k - 1][1]:
                raise ValidationError("times must be non-decreasing", f"schedule.steps[{k}]")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "registry", registry)
        object.__setattr__(self, "hamiltonian", ham)

    @classmethod
    def simple(cls, observables, times=None, hamiltonian=None) -> "Schedule":
        """One registry entry per step; times default to ``0, 1, 2, ...``."""
        observables = list(observables)
        times = range(len(observables)) if times is None else times
        return cls(tuple(enumerate(times)), tuple(observables), hamiltonian)

    @property
    def n(self) -> int:
        return len(self.steps)

    @property
    def dim(self) -> int:
        return self.registry[0].dim

    def observable_at(self, obs_id: int, time: float) -> HermitianObservable:
        obs = self.registry[obs_id]
        if self.hamiltonian is None:
            return obs
        return evolve_observable(obs, self.hamiltonian, time)

    def step_observable(self, k: int) -> HermitianObservable:
        i, t = self.steps[k]
        return self.observable_at(i, t)

    def without(self, k: int) -> "Schedule":
        steps = self.steps[:k] + self.steps[k + 1 :]
        return Schedule(steps, self.registry, self.hamiltonian)


@dataclass(frozen=True)
class QuasiDistribution:
    """Finite set of outcome tuples with real, possibly negative, weights."""

    outcomes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        out = np.array(self.outcomes, dtype=float, copy=True)
        w = np.array(self.weights, dtype=float, copy=True).ravel()
        if out.ndim != 2 or out.shape[0] != w.shape[0]:
            raise ValidationError(f"outcomes {out.shape} and weights {w.shape} disagree")
        out.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "outcomes", out)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, atoms: dict, n: int | None = None) -> "QuasiDistribution":
        if n is None:
            n = len(next(iter(atoms))) if atoms else 0
        keys = list(atoms)
        outcomes = np.array(keys, dtype=float).reshape(len(keys), n)
        return cls(outcomes, np.array([atoms[k] for k in keys], dtype=float))

    @property
    def n(self) -> int:
        return self.outcomes.shape[1]

    @property
    def atoms(self) -> dict:
        """``{outcome: weight}``; repeated outcome rows are summed."""
        out: dict = {}
        for o, w in zip(self.outcomes, self.weights):
            key = tuple(float(x) for x in o)
            out[key] = out.get(key, 0.0) + float(w)
        return out

    @property
    def support(self) -> list:
        return [sorted(set(self.outcomes[:, k].tolist())) for k in range(self.n)]

    @property
    def total(self) -> float:
        return float(self.weights.sum())

    def weight(self, outcome, tol: float = ATOM_TOL) -> float:
        """Summed weight of atoms within ``tol`` of ``outcome`` (0 if absent)."""
        if self.outcomes.shape[0] == 0:
            return 0.0
        hit = np.all(np.abs(self.outcomes - np.asarray(outcome, dtype=float)) <= tol, axis=1)
        return float(self.weights[hit].sum())

    def expectation(self, func) -> float:
        return float(sum(w * func(o) for o, w in zip(self.outcomes, self.weights)))

    def moment(self, exponents) -> float:
        e = np.asarray(exponents)
        return float(np.sum(self.weights * np.prod(self.outcomes**e, axis=1)))


def merge_atoms(outcomes: np.ndarray, weights: np.ndarray, tol: float = ATOM_TOL, prune: float = PRUNE_TOL):
    """Merge outcome rows equal within ``tol`` per coordinate; drop ``|w| < prune``."""
    outcomes = np.asarray(outcomes, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if outcomes.shape[0] == 0:
        return outcomes, weights
    if outcomes.shape[1] == 0:
        total = weights.sum()
        keep = abs(total) >= prune
        return np.zeros((int(keep), 0)), np.array([total])[: int(keep)]
    order = np.lexsort(outcomes.T[::-1])
    outcomes, weights = outcomes[order], weights[order]
    keep_out, keep_w = [outcomes[0]], [weights[0]]
    for o, w in zip(outcomes[1:], weights[1:]):
        if np.all(np.abs(o - keep_out[-1]) <= tol):
            keep_w[-1] += w
        else:
            keep_out.append(o)
            keep_w.append(w)
    out = np.array(keep_out).reshape(-1, outcomes.shape[1])
    w = np.array(keep_w)
    mask = np.abs(w) >= prune
    return out[mask], w[mask]


def spectral_delta(obs) -> list:
    """Distinct midpoints ``(l_i + l_j)/2`` with their block-projector superoperators."""
    spec = hermitian_eig(obs)
    lam, proj = spec.eigenvalues, spec.projectors
    d = proj[0].shape[0]
    pairs = sorted(
        (((lam[i] + lam[j]) / 2, i, j) for i in range(len(lam)) for j in range(len(lam))),
        key=lambda p: p[0],
    )
    groups: list = []
    for mid, i, j in pairs:
        if groups and mid - groups[-1][0][0] <= ATOM_TOL:
            groups[-1].append((mid, i, j))
        else:
            groups.append([(mid, i, j)])
    out = []
    for g in groups:
        action = sum(np.kron(proj[j].T, proj[i]) for _, i, j in g)
        out.append((float(np.mean([m for m, _, _ in g])), Superoperator(d, action)))
    return out


def _families(schedule: Schedule):
    cache: dict = {}
    fams = []
    for k in range(schedule.n):
        obs_id, t = schedule.steps[k]
        key = (obs_id, t if schedule.hamiltonian is not None else 0.0)
        if key not in cache:
            cache[key] = spectral_delta(schedule.step_observable(k))
        fams.append(cache[key])
    return fams


def enumerate_branches(rho: np.ndarray, families: list, limit: int = DEFAULT_ATOM_LIMIT, keep_operator: bool = False):
    """Depth-first walk over projector families; yields ``(values, trace)`` leaves.

    ``families[k]`` is a list of ``(value, action)`` with ``action`` a ``d^2 x d^2``
    matrix.  Branches whose operator vanishes (max entry below ``PRUNE_TOL``) are cut.
    With ``keep_operator`` the leaves carry the final vectorized operator instead of
    its trace.
    """
    d = rho.shape[0]
    n = len(families)
    tr_row = vec(np.eye(d))
    if n == 0:
        yield (), (vec(rho) if keep_operator else complex(np.trace(rho)))
        return
    last = [(v, tr_row @ a) for v, a in families[-1]]
    visited = 0
    stack = [((), vec(rho))]
    while stack:
        prefix, x = stack.pop()
        depth = len(prefix)
        if depth == n and keep_operator:
            yield prefix, x
            continue
        if depth == n - 1 and not keep_operator:
            for v, t in last:
                yield prefix + (v,), complex(t @ x)
            continue
        children = []
        for v, a in families[depth]:
            y = a @ x
            if np.abs(y).max() < PRUNE_TOL:
                continue
            children.append((prefix + (v,), y))
        visited += len(children)
        if visited > limit:
            raise ResourceError(f"branch enumeration exceeded the limit of {limit} nodes")
        stack.extend(reversed(children))


def _state_matrix(state) -> np.ndarray:
    return state.matrix if isinstance(state, DensityState) else DensityState(state).matrix


def quasi_distribution(state, schedule: Schedule, limit: int = DEFAULT_ATOM_LIMIT) -> QuasiDistribution:
    """Markovian quasiprobability ``Q(a_1..a_n) = Tr P_n(a_n)(... P_1(a_1)(rho))``."""
    rho = _state_matrix(state)
    if rho.shape[0] != schedule.dim:
        raise ValidationError("state and schedule dimensions differ", "state")
    fams = [[(v, s.action) for v, s in fam] for fam in _families(schedule)]
    outcomes, weights = [], []
    for values, tr in enumerate_branches(rho, fams, limit):
        if abs(tr.real) >= PRUNE_TOL:
            outcomes.append(values)
            weights.append(tr.real)
            if len(outcomes) > limit:
                raise ResourceError(f"more than {limit} atoms")
    out = np.array(outcomes, dtype=float).reshape(len(outcomes), schedule.n)
    out, w = merge_atoms(out, np.array(weights))
    return QuasiDistribution(out, w)


def marginalize(q: QuasiDistribution, step: int) -> QuasiDistribution:
    """Sum out one step's outcome."""
    if not 0 <= step < q.n:
        raise ValidationError(f"step {step} out of range for {q.n} steps")
    out = np.delete(q.outcomes, step, axis=1)
    out, w = merge_atoms(out, q.weights)
    return QuasiDistribution(out, w)


@dataclass(frozen=True)
class MemoryKernel:
    """Integer-lag kernels: ``g`` weights ``A^c`` insertions, ``f`` weights ``A^q / 2``.

    A lag is ``observation index - insertion index`` on the schedule's time grid.
    """

    f: dict = field(default_factory=dict)
    g: dict = field(default_factory=lambda: {0: 1.0})

    def __post_init__(self):
        f = {int(k): float(v) for k, v in self.f.items() if v != 0}
        g = {int(k): float(v) for k, v in self.g.items() if v != 0}
        bad = [k for k in g if k < 0]
        if bad:
            raise ValidationError(f"g must be causal, got entries at lags {bad}", "kernel.g")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)


def integer_grid(times, max_denominator: int = 10**6):
    """Map times to integers ``k`` with ``t = t0 + k * unit``."""
    times = [float(t) for t in times]
    if not times:
        return [], 1.0, 0.0
    t0 = times[0]
    fracs = []
    for t in times:
        fr = Fraction(t - t0).limit_denominator(max_denominator)
        if abs(float(fr) - (t - t0)) > 1e-9 * max(1.0, abs(t - t0)):
            raise ValidationError(f"time {t} is not representable on a rational grid", "schedule.steps")
        fracs.append(fr)
    nonzero = [f for f in fracs if f != 0]
    if not nonzero:
        return [0] * len(times), 1.0, t0
    num = 0
    den = 1
    for f in nonzero:
        den = den * f.denominator // gcd(den, f.denominator)
    for f in nonzero:
        num = gcd(num, abs(f.numerator * (den // f.denominator)))
    unit = Fraction(num, den)
    ks = [int(f / unit) for f in fracs]
    return ks, float(unit), t0


def q_correlator(state, schedule: Schedule, kernel: MemoryKernel | None = None, selection=None) -> float:
    """Time-ordered correlator of the selected observations.

    Each selected observation expands into ``sum g[lag] A^c(k') + f[lag] A^q(k') / 2``
    over insertion slots ``k' = k - lag``.  Products are distributed term by term;
    within a term insertions act on ``rho`` in increasing ``k'`` order, ties broken by
    step index and then c before q.
    """
    kernel = MemoryKernel() if kernel is None else kernel
    rho = _state_matrix(state)
    selection = list(range(schedule.n)) if selection is None else [int(s) for s in selection]
    for s in selection:
        if not 0 <= s < schedule.n:
            raise ValidationError(f"selection index {s} out of range", "selection")
    ks, unit, t0 = integer_grid([t for _, t in schedule.steps])
    d = rho.shape[0]

    cache: dict = {}

    def superop(obs_id, slot, kind):
        key = (obs_id, slot, kind)
        if key not in cache:
            obs = schedule.observable_at(obs_id, t0 + slot * unit)
            cache[key] = (superop_c if kind == 0 else superop_q)(obs).action
        return cache[key]

    options = []
    for s in selection:
        obs_id = schedule.steps[s][0]
        opts = [(ks[s] - lag, s, 0, obs_id, c) for lag, c in kernel.g.items()]
        opts += [(ks[s] - lag, s, 1, obs_id, c / 2) for lag, c in kernel.f.items()]
        options.append(opts)

    tr_row = vec(np.eye(d))
    x0 = vec(rho)
    total = 0.0 + 0.0j
    warned = False
    for combo in itertools.product(*options):
        coef = 1.0
        for o in combo:
            coef *= o[4]
        ordered = sorted(combo, key=lambda o: (o[0], o[1], o[2]))
        x = x0
        prev = None
        for slot, s, kind, obs_id, _ in ordered:
            a = superop(obs_id, slot, kind)
            if not warned and prev is not None and prev[0] == slot:
                if np.abs(a @ prev[1] - prev[1] @ a).max() > 1e-12:
                    warnings.warn(
                        "non-commuting insertions share a time slot; result depends on tie order",
                        stacklevel=2,
                    )
                    warned = True
            x = a @ x
            prev = (slot, a)
        total += coef * (tr_row @ x)
    return float(total.real)


def table1_setup():
    """Qubit in the ``+1`` eigenstate of ``sigma_z``, observed by ``sigma_x`` then ``sigma_z``."""
    a = HermitianObservable([[0, 1], [1, 0]])
    b = HermitianObservable([[1, 0], [0, -1]])
    rho = DensityState.pure([1, 0])
    return rho, Schedule.simple([a, b])
