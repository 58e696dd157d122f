"""Classical noise models and the convolution ``P = N * Q``.

``Q`` is a finite sum of weighted delta peaks, so ``P(x) = sum_j w_j N(x - q_j)`` is
evaluated in closed form.  Sums are accumulated in log space so long sequences and
far tails do not underflow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _accel
from .core import DensityState, HermitianObservable, ResourceError, ValidationError
from .quasiprob import ATOM_TOL, QuasiDistribution, Schedule, merge_atoms, quasi_distribution

GAUSSIAN = "gaussian"
LAPLACE = "laplace"
DELTA_GROUPS = "delta_groups"

EVAL_RTOL = 1e-13
SPEED_OF_LIGHT = 299_792_458.0
# every implemented noise factor is zero-centred and unimodal
NOISE_PEAK = 0.0

_KIND_CODE = {GAUSSIAN: _accel.GAUSSIAN, LAPLACE: _accel.LAPLACE}


def _log_factor(kind: str, param: float, u):
    u = np.asarray(u, dtype=float)
    if kind == GAUSSIAN:
        return -0.5 * u * u / param - 0.5 * math.log(2 * math.pi * param)
    return math.log(param / 2) - param * np.abs(u)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-centred product noise.

    ``gaussian``: ``params`` are variances.  ``laplace``: ``params`` are rates ``r``
    with density ``(r/2) exp(-r|u|)``.  ``delta_groups``: variables in one group share
    a single noise value; ``params``/``group_kinds`` give one factor per group.
    """

    kind: str
    params: tuple
    groups: tuple | None = None
    group_kinds: tuple | None = None

    def __post_init__(self):
        params = tuple(float(p) for p in self.params)
        if self.kind not in (GAUSSIAN, LAPLACE, DELTA_GROUPS):
            raise ValidationError(f"unknown noise kind {self.kind!r}", "noise.kind")
        if not params or any(not (p > 0 and math.isfinite(p)) for p in params):
            raise ValidationError("noise parameters must be positive and finite", "noise.params")
        object.__setattr__(self, "params", params)
        if self.kind == DELTA_GROUPS:
            if self.groups is None:
                raise ValidationError("delta_groups needs groups", "noise.groups")
            groups = tuple(tuple(int(i) for i in g) for g in self.groups)
            flat = sorted(i for g in groups for i in g)
            if flat != list(range(len(flat))) or any(not g for g in groups):
                raise ValidationError("groups must partition 0..n-1", "noise.groups")
            kinds = self.group_kinds or (LAPLACE,) * len(groups)
            kinds = tuple(kinds)
            if len(kinds) != len(groups) or len(params) != len(groups):
                raise ValidationError("one kind and one parameter per group", "noise.groups")
            if any(k not in (GAUSSIAN, LAPLACE) for k in kinds):
                raise ValidationError("group kinds must be gaussian or laplace", "noise.group_kinds")
            object.__setattr__(self, "groups", groups)
            object.__setattr__(self, "group_kinds", kinds)

    @classmethod
    def gaussian(cls, variances) -> "NoiseModel":
        return cls(GAUSSIAN, tuple(np.atleast_1d(variances)))

    @classmethod
    def gaussian_exponents(cls, exponents) -> "NoiseModel":
        """Gaussian with density proportional to ``exp(-sum_i e_i u_i^2)``."""
        return cls(GAUSSIAN, tuple(1 / (2 * np.asarray(np.atleast_1d(exponents), float))))

    @classmethod
    def laplace(cls, rates) -> "NoiseModel":
        return cls(LAPLACE, tuple(np.atleast_1d(rates)))

    @classmethod
    def delta_groups(cls, groups, params, kinds=None) -> "NoiseModel":
        return cls(DELTA_GROUPS, tuple(params), tuple(tuple(g) for g in groups), kinds)

    @property
    def n(self) -> int:
        if self.kind == DELTA_GROUPS:
            return sum(len(g) for g in self.groups)
        return len(self.params)

    def for_variables(self, n: int) -> "NoiseModel":
        """Broadcast a single-parameter product model to ``n`` variables."""
        if self.kind != DELTA_GROUPS and len(self.params) == 1 and n != 1:
            return NoiseModel(self.kind, self.params * n)
        return self

    def log_density(self, u) -> float:
        u = np.asarray(u, dtype=float)
        if self.kind == DELTA_GROUPS:
            raise ValidationError("delta-correlated noise has no ordinary density")
        return float(sum(_log_factor(self.kind, p, ui) for p, ui in zip(self.params, u)))

    def density(self, u) -> float:
        return math.exp(self.log_density(u))

    def characteristic(self, k) -> float:
        k = np.asarray(k, dtype=float)
        p = np.asarray(self.params)
        if self.kind == GAUSSIAN:
            return float(np.prod(np.exp(-p * k * k / 2)))
        if self.kind == LAPLACE:
            return float(np.prod(p * p / (p * p + k * k)))
        raise ValidationError("characteristic function needs a product model")

    def marginal_cumulants(self, order: int) -> np.ndarray:
        """Per-variable cumulants ``kappa_r``, ``r = 0..order`` (zero-centred)."""
        out = np.zeros((self.n, order + 1))
        for i, p in enumerate(self.params):
            if self.kind == GAUSSIAN and order >= 2:
                out[i, 2] = p
            elif self.kind == LAPLACE:
                for r in range(2, order + 1, 2):
                    out[i, r] = 2 * math.factorial(r - 1) / p**r
        return out

    def scale(self, i: int) -> float:
        """Characteristic width of variable ``i``."""
        p = self.params[i]
        return math.sqrt(p) if self.kind == GAUSSIAN else 1 / p


class OffSupport:
    """Returned by :func:`density_eval` where a delta-correlated density vanishes identically."""

    def __init__(self, reason: str):
        self.reason = reason

    def __repr__(self):
        return f"OffSupport({self.reason!r})"

    def __bool__(self):
        return False


@dataclass(frozen=True)
class ConvolvedDensity:
    q: QuasiDistribution
    noise: NoiseModel

    def __post_init__(self):
        noise = self.noise.for_variables(self.q.n)
        if noise.n != self.q.n:
            raise ValidationError(f"noise has {noise.n} variables, quasi-distribution has {self.q.n}", "noise")
        object.__setattr__(self, "noise", noise)

    def _codes(self):
        kinds = np.full(self.q.n, _KIND_CODE[self.noise.kind], dtype=np.int64)
        return kinds, np.asarray(self.noise.params)

    def scaled(self, points):
        """``(signed, absolute, logscale)`` arrays at ``points`` (product models only)."""
        if self.noise.kind == DELTA_GROUPS:
            raise ValidationError("grid evaluation is not defined for delta-correlated noise")
        kinds, params = self._codes()
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return _accel.mixture_scaled(pts, self.q.outcomes, self.q.weights, kinds, params)

    def signed_log(self, point):
        """``(sign, log|P|, log tolerance)`` at one point."""
        if self.noise.kind == DELTA_GROUPS:
            return _delta_signed_log(self, point)
        s, a, lm = self.scaled(np.asarray(point, dtype=float)[None, :])
        s, a, lm = s[0], a[0], lm[0]
        tol = EVAL_RTOL * a
        if s == 0:
            return 0.0, -math.inf, math.log(tol) + lm if tol > 0 else -math.inf
        return float(np.sign(s)), math.log(abs(s)) + lm, (math.log(tol) + lm) if tol > 0 else -math.inf


def _delta_signed_log(p: ConvolvedDensity, point):
    x = np.asarray(point, dtype=float)
    u = x[None, :] - p.q.outcomes
    logs, ws = [], []
    for row, w in zip(u, p.q.weights):
        total = 0.0
        for g, kind, par in zip(p.noise.groups, p.noise.group_kinds, p.noise.params):
            vals = row[list(g)]
            if np.ptp(vals) > ATOM_TOL:
                break
            total += float(_log_factor(kind, par, vals[0]))
        else:
            logs.append(total)
            ws.append(w)
    if not logs:
        return None
    logs = np.array(logs)
    mx = logs.max()
    e = np.exp(logs - mx)
    s = float(np.dot(ws, e))
    a = float(np.dot(np.abs(ws), e))
    ltol = math.log(EVAL_RTOL * a) + mx
    if s == 0:
        return 0.0, -math.inf, ltol
    return float(np.sign(s)), math.log(abs(s)) + mx, ltol


def density_eval(p: ConvolvedDensity, point):
    """``P(x) = sum_j w_j N(x - q_j)``.

    For delta-correlated groups the result is the density on the subspace where
    every group's noise offsets coincide; points where no atom satisfies that give
    :class:`OffSupport`.
    """
    point = np.asarray(point, dtype=float)
    if point.shape != (p.q.n,):
        raise ValidationError(f"point must have length {p.q.n}", "point")
    res = p.signed_log(point)
    if res is None:
        return OffSupport("no atom has equal noise offsets within every delta-correlated group")
    sign, logabs, _ = res
    return sign * math.exp(logabs) if sign else 0.0


def eval_tolerance(p: ConvolvedDensity, point) -> float:
    """Rounding scale of :func:`density_eval` at ``point``."""
    res = p.signed_log(np.asarray(point, dtype=float))
    return 0.0 if res is None else math.exp(res[2])


def is_certainly_negative(p: ConvolvedDensity, point, factor: float = 10.0) -> bool:
    res = p.signed_log(np.asarray(point, dtype=float))
    if res is None:
        return False
    sign, logabs, ltol = res
    return sign < 0 and logabs > ltol + math.log(factor)


@dataclass
class PositivityReport:
    verdict: str
    witness: tuple | None
    value: float | None
    regions_checked: list
    warnings: list = field(default_factory=list)

    POSITIVE = "PositiveOnDecisionSet"
    NEGATIVE = "NegativeWitness"

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict,
            "witness": None if self.witness is None else [float(x) for x in self.witness],
            "value": self.value,
            "regions_checked": self.regions_checked,
            "warnings": list(self.warnings),
        }


def default_margin(noise: NoiseModel) -> float:
    if noise.kind == LAPLACE:
        return 5 / min(noise.params)
    return 6 * math.sqrt(max(noise.params))


def default_step(noise: NoiseModel) -> float:
    """Per-cell change of every noise factor below 5 % (Gaussian: within 3 sigma)."""
    if noise.kind == LAPLACE:
        return math.log(1.05) / max(noise.params)
    return math.sqrt(min(noise.params)) * math.log(1.05) / 3


def _axis_grid(lo, hi, step, extra):
    count = int(math.ceil((hi - lo) / step)) + 1
    g = lo + step * np.arange(count)
    return np.union1d(g, np.asarray(extra, dtype=float))


def _tail_reduce(q_out, q_w, noise: NoiseModel, coord: int, sign: int):
    """Leading asymptotic weights as ``x_coord -> sign * inf``.

    Returns log-weight offsets per atom (``-inf`` for sub-dominant atoms).
    """
    a = q_out[:, coord]
    p = noise.params[coord]
    if noise.kind == LAPLACE:
        return p * sign * a
    # Gaussian: atoms with extreme sign*a dominate; descend levels while the
    # dominant weights cancel exactly.
    levels = np.unique(np.round(sign * a / ATOM_TOL) * ATOM_TOL)[::-1]
    for lev in levels:
        mask = np.abs(sign * a - lev) <= 2 * ATOM_TOL
        _, w = merge_atoms(np.delete(q_out[mask], coord, axis=1), q_w[mask])
        if w.size:
            out = np.full(a.shape, -np.inf)
            out[mask] = -a[mask] ** 2 / (2 * p)
            return out
    return np.full(a.shape, -np.inf)


def _gaussian_radius(q_out, q_w, noise: NoiseModel, coord: int, sign: int) -> float:
    """Distance beyond which the dominant level outweighs the rest by 1e3 in absolute mass."""
    a = sign * q_out[:, coord]
    levels = np.unique(a)[::-1]
    if levels.size < 2:
        return float(sign * levels[0])
    gap = levels[0] - levels[1]
    top = np.abs(q_w[np.abs(a - levels[0]) <= ATOM_TOL]).sum()
    rest = np.abs(q_w[np.abs(a - levels[0]) > ATOM_TOL]).sum()
    var = noise.params[coord]
    r = levels[0] + var / gap * max(0.0, math.log(1e3 * rest / max(top, 1e-300)))
    return float(sign * r)


def positivity_decide(
    p: ConvolvedDensity,
    box_margin: float | None = None,
    grid_step: float | None = None,
    max_points: int = 5_000_000,
) -> PositivityReport:
    """Search ``P`` for negative values on a box grid and in every tail region.

    Each coordinate is either inside the box (gridded) or beyond it on one side.
    Beyond the support a Laplace factor is exactly ``exp(-r|x|) * exp(r s a)``, so the
    tail reduces to a lower-dimensional mixture with reweighted atoms.  Gaussian
    tails keep only the dominant atoms (largest ``s * a``), which fixes the sign
    asymptotically.
    """
    noise = p.noise
    if noise.kind not in (GAUSSIAN, LAPLACE):
        raise ValidationError("positivity_decide needs a gaussian or laplace product model", "noise.kind")
    n = p.q.n
    report_warnings = []
    margin = default_margin(noise) if box_margin is None else float(box_margin)
    step = default_step(noise) if grid_step is None else float(grid_step)
    if grid_step is not None and step > default_step(noise) * (1 + 1e-12):
        report_warnings.append(
            f"grid_step {step:.4g} exceeds {default_step(noise):.4g}; noise factors vary by more than 5% per cell"
        )

    q_out, q_w = p.q.outcomes, p.q.weights
    if q_out.shape[0] == 0:
        return PositivityReport(PositivityReport.POSITIVE, None, None, [], report_warnings)
    lo = q_out.min(axis=0) - margin
    hi = q_out.max(axis=0) + margin
    grids = [_axis_grid(lo[i], hi[i], step, np.unique(q_out[:, i])) for i in range(n)]

    regions = []
    box_best = None  # (value, point)
    tail_candidates = []
    kinds_all, params_all = p._codes()

    for states in itertools.product((0, -1, 1), repeat=n):
        inside = [i for i in range(n) if states[i] == 0]
        tails = [i for i in range(n) if states[i] != 0]
        logw = np.zeros(q_out.shape[0])
        for i in tails:
            logw = logw + _tail_reduce(q_out, q_w, noise, i, states[i])
        live = np.isfinite(logw)
        if not live.any():
            regions.append({"tails": _tail_label(states), "points": 0, "min_relative": None})
            continue
        shift = logw[live].max()
        w_red = q_w[live] * np.exp(logw[live] - shift)
        atoms_red = q_out[live][:, inside]
        atoms_red, w_red = merge_atoms(atoms_red, w_red, prune=0.0)
        npts = int(np.prod([grids[i].size for i in inside])) if inside else 1
        if npts > max_points:
            raise ResourceError(f"region {_tail_label(states)} needs {npts} grid points (> {max_points})")
        entry = {"tails": _tail_label(states), "points": npts}
        if noise.kind == GAUSSIAN and tails:
            entry["dominance_radius"] = {
                str(i): _gaussian_radius(q_out, q_w, noise, i, states[i]) for i in tails
            }
        if not inside:
            s = float(w_red.sum())
            a = float(np.abs(w_red).sum())
            rel = s / a if a > 0 else 0.0
            entry["min_relative"] = rel
            regions.append(entry)
            if s < -10 * EVAL_RTOL * a:
                tail_candidates.append((rel, states, ()))
            continue

        mesh = np.meshgrid(*[grids[i] for i in inside], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
        if w_red.size == 0:
            entry["min_relative"] = 0.0
            regions.append(entry)
            continue
        s, a, lm = _accel.mixture_scaled(pts, atoms_red, w_red, kinds_all[inside], params_all[inside])
        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.where(a > 0, s / a, 0.0)
        k = int(np.argmin(rel))
        entry["min_relative"] = float(rel[k])
        regions.append(entry)
        negative = s < -10 * EVAL_RTOL * a
        if not negative.any():
            continue
        if not tails:
            vals = np.where(negative, s * np.exp(lm), np.inf)
            vmin = vals.min()
            # lexicographically smallest among exact minimisers (pts are in lex order)
            kk = int(np.flatnonzero(vals == vmin)[0])
            if box_best is None or vmin < box_best[0]:
                box_best = (float(vmin), tuple(float(x) for x in pts[kk]))
        else:
            tail_candidates.append((float(rel[k]), states, tuple(pts[k])))

    if box_best is not None:
        return PositivityReport(PositivityReport.NEGATIVE, box_best[1], box_best[0], regions, report_warnings)

    for _, states, rest in sorted(tail_candidates, key=lambda c: c[0]):
        hit = _walk_out(p, states, rest, lo, hi, step)
        if hit is not None:
            point, value = hit
            return PositivityReport(PositivityReport.NEGATIVE, point, value, regions, report_warnings)
        report_warnings.append(f"tail region {_tail_label(states)} is asymptotically negative but no finite witness was confirmed")
    return PositivityReport(PositivityReport.POSITIVE, None, None, regions, report_warnings)


def _tail_label(states) -> str:
    return "".join({0: "0", -1: "-", 1: "+"}[s] for s in states)


def _walk_out(p, states, rest, lo, hi, step, max_doublings=60):
    n = len(states)
    rest = list(rest)
    base = np.empty(n)
    for i in range(n):
        if states[i] == 0:
            base[i] = rest.pop(0)
        else:
            base[i] = hi[i] if states[i] > 0 else lo[i]
    dist = step
    for _ in range(max_doublings):
        point = base.copy()
        for i in range(n):
            if states[i] != 0:
                point[i] = base[i] + states[i] * dist
        if is_certainly_negative(p, point):
            sign, logabs, _ = p.signed_log(point)
            return tuple(float(x) for x in point), sign * math.exp(logabs)
        dist *= 2
    return None


def pauli_pair():
    a = HermitianObservable([[0, 1], [1, 0]])
    b = HermitianObservable([[1, 0], [0, -1]])
    return a, b


@dataclass
class SequenceFailure:
    n_fail: int | None
    witness: tuple | None
    value: float | None
    trace: list

    def to_json(self) -> dict:
        return {
            "n_fail": self.n_fail,
            "witness": None if self.witness is None else list(self.witness),
            "value": self.value,
            "trace": self.trace,
        }


def long_sequence_failure(n_max: int, per_step_noise: NoiseModel, state=None) -> SequenceFailure:
    """Smallest ``n`` for which ``A, B, ..., B`` (length ``n``) has ``P(a0, b0, ..., b0) < 0``.

    ``per_step_noise`` has one parameter (shared) or two (``a`` then every ``b``).
    ``(a0, b0 + 1)`` is the noise maximum.
    """
    if per_step_noise.kind not in (GAUSSIAN, LAPLACE):
        raise ValidationError("per-step noise must be an independent product model", "noise.kind")
    if len(per_step_noise.params) not in (1, 2):
        raise ValidationError("per-step noise takes one or two parameters", "noise.params")
    pa = per_step_noise.params[0]
    pb = per_step_noise.params[-1]
    a, b = pauli_pair()
    rho = DensityState.pure([1, 0]) if state is None else state
    a0 = NOISE_PEAK
    b0 = NOISE_PEAK - 1
    trace = []
    for n in range(2, n_max + 1):
        sched = Schedule(((0, 0.0),) + tuple((1, float(k)) for k in range(1, n)), (a, b))
        q = quasi_distribution(rho, sched)
        noise = NoiseModel(per_step_noise.kind, (pa,) + (pb,) * (n - 1))
        dens = ConvolvedDensity(q, noise)
        point = (a0,) + (b0,) * (n - 1)
        sign, logabs, _ = dens.signed_log(np.array(point))
        value = sign * math.exp(logabs) if sign else 0.0
        trace.append({"n": n, "sign": sign, "log_abs": logabs})
        if is_certainly_negative(dens, point):
            return SequenceFailure(n, point, value, trace)
    return SequenceFailure(None, None, None, trace)


@dataclass
class DeltaFailure:
    witness: tuple | None
    value: float | None
    offset: float | None

    def to_json(self) -> dict:
        return {
            "witness": None if self.witness is None else list(self.witness),
            "value": self.value,
            "offset": self.offset,
        }


def delta_correlated_failure(
    a_noise: tuple = (LAPLACE, 0.5),
    b_noise: tuple = (LAPLACE, 0.5),
    state=None,
    scan=None,
) -> DeltaFailure:
    """Sequence ``B, A, B`` with both ``B`` noises forced equal.

    The density lives on lines ``x3 - x1 = q3 - q1``; each line is scanned along
    ``x1`` with ``a`` fixed at the noise maximum and the most negative point returned.
    """
    a, b = pauli_pair()
    rho = DensityState.pure([1, 0]) if state is None else state
    q = quasi_distribution(rho, Schedule.simple([b, a, b]))
    noise = NoiseModel.delta_groups([(1,), (0, 2)], (a_noise[1], b_noise[1]), (a_noise[0], b_noise[0]))
    dens = ConvolvedDensity(q, noise)
    a0 = NOISE_PEAK
    offsets = np.unique(np.round(q.outcomes[:, 2] - q.outcomes[:, 0], 9))
    scan = np.linspace(-4, 4, 801) if scan is None else np.asarray(scan, dtype=float)
    best = None
    for off in offsets:
        for x1 in scan:
            point = np.array([x1, a0, x1 + off])
            if is_certainly_negative(dens, point):
                v = density_eval(dens, point)
                if best is None or v < best[1]:
                    best = (tuple(float(x) for x in point), v, float(off))
    if best is None:
        return DeltaFailure(None, None, None)
    return DeltaFailure(*best)


@dataclass(frozen=True)
class NoiseFloorEstimate:
    particle_count: float
    box_side: float
    duration: float
    micro_length: float
    micro_time: float
    n_macro: float
    n_micro: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def noise_floor_estimate(
    particle_count: float = 1e20,
    box_side: float = 1e-3,
    duration_seconds: float = 0.1,
    micro_length: float = 1e-10,
    micro_time_meters: float = 1e-7,
) -> NoiseFloorEstimate:
    """Charge-noise constants (units ``e^2/m^4``) invisible at the macroscopic and atomic scale."""
    vals = (particle_count, box_side, duration_seconds, micro_length, micro_time_meters)
    if any(not (v > 0 and math.isfinite(v)) for v in vals):
        raise ValidationError("all noise-floor inputs must be positive")
    duration = duration_seconds * SPEED_OF_LIGHT
    n_macro = particle_count**2 / (box_side**3 * duration)
    n_micro = 1 / (micro_length**3 * micro_time_meters)
    return NoiseFloorEstimate(
        float(particle_count), float(box_side), duration, float(micro_length), float(micro_time_meters), n_macro, n_micro
    )


def mean_of_density(p: ConvolvedDensity) -> np.ndarray:
    """First moments of ``P``: those of ``Q`` plus the (zero) noise means."""
    return p.q.weights @ p.q.outcomes
