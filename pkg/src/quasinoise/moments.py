"""Moment and cumulant calculus, moment matrices and noise calibration.

Tables are dictionaries keyed by exponent tuples.  Moments and cumulants are linked
through the multivariate recursion

    M[a] = sum_{b <= a - e_i} binom(a - e_i, b) C[b + e_i] M[a - e_i - b]

with ``i`` the first variable that appears in ``a``.  It is the coefficient form
of ``d Phi = Phi d ln Phi``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ConvergenceError, ValidationError
from .quasiprob import QuasiDistribution

MAX_DEGREE = 12
PSD_RTOL = 1e-9


def multi_indices(n: int, degree: int) -> list:
    """All exponent tuples of total degree ``<= degree``, graded then reverse-lex."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return out


@dataclass
class MomentTable:
    """Raw moments (or cumulants) ``values[alpha]`` for every ``|alpha| <= max_degree``."""

    variables: int
    max_degree: int
    values: dict = field(default_factory=dict)
    kind: str = "moments"

    def __post_init__(self):
        self.values = {tuple(int(x) for x in k): float(v) for k, v in self.values.items()}
        missing = [a for a in multi_indices(self.variables, self.max_degree) if a not in self.values]
        if missing:
            raise ValidationError(f"incomplete {self.kind} table, missing {missing[0]}")
        zero = (0,) * self.variables
        expect = 1.0 if self.kind == "moments" else 0.0
        if abs(self.values[zero] - expect) > 1e-12:
            raise ValidationError(f"{self.kind} table must have value {expect} at the empty index")

    def __getitem__(self, alpha) -> float:
        alpha = tuple(alpha)
        if sum(alpha) > self.max_degree:
            raise ValidationError(f"degree {sum(alpha)} exceeds table degree {self.max_degree}")
        return self.values[alpha]

    def indices(self) -> list:
        return multi_indices(self.variables, self.max_degree)

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "variables": self.variables,
            "max_degree": self.max_degree,
            "values": {",".join(map(str, a)): self.values[a] for a in self.indices()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "MomentTable":
        values = {tuple(int(x) for x in k.split(",")): v for k, v in data["values"].items()}
        return cls(data["variables"], data["max_degree"], values, data.get("kind", "moments"))


CumulantTable = MomentTable


def moments_of_quasi(q: QuasiDistribution, K: int, max_degree: int = MAX_DEGREE) -> MomentTable:
    """Exact finite sums ``M[alpha] = sum_j w_j prod_i x_ji^alpha_i``."""
    if K > max_degree:
        raise ValidationError(f"degree {K} exceeds the cap {max_degree}")
    x = q.outcomes
    powers = x[:, :, None] ** np.arange(K + 1)  # (atoms, n, K+1)
    values = {}
    for alpha in multi_indices(q.n, K):
        terms = np.prod(powers[:, np.arange(q.n), list(alpha)], axis=1) if q.n else np.ones(len(x))
        values[alpha] = float(np.dot(q.weights, terms))
    zero = (0,) * q.n
    values[zero] = 1.0 if abs(values[zero] - 1) < 1e-10 else values[zero]
    return MomentTable(q.n, K, values)


def _binom_multi(a, b) -> int:
    return math.prod(math.comb(x, y) for x, y in zip(a, b))


def _sub_indices(a):
    return itertools.product(*(range(x + 1) for x in a))


def _recursion_terms(alpha):
    """``(coef, cumulant index, moment index)`` triples for the recursion at ``alpha``."""
    i = next(k for k, x in enumerate(alpha) if x)
    ap = list(alpha)
    ap[i] -= 1
    out = []
    for b in _sub_indices(ap):
        c_idx = list(b)
        c_idx[i] += 1
        m_idx = tuple(x - y for x, y in zip(ap, b))
        out.append((_binom_multi(ap, b), tuple(c_idx), m_idx))
    return out


def moments_to_cumulants(m: MomentTable) -> MomentTable:
    zero = (0,) * m.variables
    c = {zero: 0.0}
    for alpha in m.indices():
        if alpha == zero:
            continue
        acc = m.values[alpha]
        for coef, ci, mi in _recursion_terms(alpha):
            if ci != alpha:
                acc -= coef * c[ci] * m.values[mi]
        c[alpha] = acc
    return MomentTable(m.variables, m.max_degree, c, "cumulants")


def cumulants_to_moments(c: MomentTable) -> MomentTable:
    zero = (0,) * c.variables
    m = {zero: 1.0}
    for alpha in c.indices():
        if alpha == zero:
            continue
        m[alpha] = sum(coef * c.values[ci] * m[mi] for coef, ci, mi in _recursion_terms(alpha))
    return MomentTable(c.variables, c.max_degree, m, "moments")


def combine_independent(cq: MomentTable, cn: MomentTable) -> MomentTable:
    """Cumulants of a sum of independent variables add."""
    if (cq.variables, cq.max_degree) != (cn.variables, cn.max_degree):
        raise ValidationError(
            f"table shapes differ: {(cq.variables, cq.max_degree)} vs {(cn.variables, cn.max_degree)}"
        )
    return MomentTable(cq.variables, cq.max_degree, {a: cq.values[a] + cn.values[a] for a in cq.indices()}, "cumulants")


def gaussian_cumulants(n: int, K: int, variances) -> MomentTable:
    variances = np.broadcast_to(np.asarray(variances, dtype=float), (n,))
    values = {a: 0.0 for a in multi_indices(n, K)}
    if K >= 2:
        for i in range(n):
            e = [0] * n
            e[i] = 2
            values[tuple(e)] = float(variances[i])
    return MomentTable(n, K, values, "cumulants")


def add_gaussian_noise(m: MomentTable, variances) -> MomentTable:
    """Moments after convolving with independent zero-mean Gaussian noise."""
    c = moments_to_cumulants(m)
    return cumulants_to_moments(combine_independent(c, gaussian_cumulants(m.variables, m.max_degree, variances)))


def convolve_moments(mq: MomentTable, mn: MomentTable) -> MomentTable:
    """Moments of ``x + y`` for independent ``x``, ``y`` by binomial expansion."""
    values = {}
    for a in mq.indices():
        values[a] = sum(_binom_multi(a, b) * mn.values[tuple(b)] * mq.values[tuple(x - y for x, y in zip(a, b))] for b in _sub_indices(a))
    return MomentTable(mq.variables, mq.max_degree, values)


# --- polynomials as {exponents: coefficient} -------------------------------------------


def poly_degree(poly: dict) -> int:
    return max((sum(e) for e, c in poly.items() if c != 0), default=0)


def poly_add(*polys) -> dict:
    out: dict = {}
    for p in polys:
        for e, c in p.items():
            out[tuple(e)] = out.get(tuple(e), 0.0) + c
    return out


def poly_scale(p: dict, s: float) -> dict:
    return {e: s * c for e, c in p.items()}


def poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            e = tuple(x + y for x, y in zip(e1, e2))
            out[e] = out.get(e, 0.0) + c1 * c2
    return out


def poly_eval(p: dict, x) -> float:
    x = np.asarray(x, dtype=float)
    return float(sum(c * np.prod(x ** np.asarray(e)) for e, c in p.items()))


def monomial(n: int, **powers) -> dict:
    """``monomial(2, a=1, b=2)`` for ``a b^2``; variables are named a, b, c, ..."""
    e = [0] * n
    for name, k in powers.items():
        e[ord(name) - ord("a")] = k
    return {tuple(e): 1.0}


def constant(n: int, c: float = 1.0) -> dict:
    return {(0,) * n: float(c)}


def _catalog():
    two = {
        "(a-b^2)^2": {(2, 0): 1.0, (1, 2): -2.0, (0, 4): 1.0},
        "a^2b^4+a^4+b^2-3a^2b^2": {(2, 4): 1.0, (4, 0): 1.0, (0, 2): 1.0, (2, 2): -3.0},
    }
    three = {"1+a^2b^2+b^2c^2+c^2a^2-4abc": {(0, 0, 0): 1.0, (2, 2, 0): 1.0, (0, 2, 2): 1.0, (2, 0, 2): 1.0, (1, 1, 1): -4.0}}
    return {**two, **three}


POSITIVE_POLYNOMIALS = _catalog()


def negativity_square() -> dict:
    """``[(1 - a^2)(1 - b)/2]^2``: negative expectation on the sigma_x, sigma_z table."""
    u = poly_mul({(0, 0): 1.0, (2, 0): -1.0}, {(0, 0): 0.5, (0, 1): -0.5})
    return poly_mul(u, u)


def expectation_of_polynomial(m: MomentTable, poly: dict) -> float:
    deg = poly_degree(poly)
    if deg > m.max_degree:
        raise ValidationError(f"polynomial degree {deg} exceeds table degree {m.max_degree}")
    for e in poly:
        if len(e) != m.variables:
            raise ValidationError(f"monomial {e} has wrong arity for {m.variables} variables")
    return float(sum(c * m.values[tuple(e)] for e, c in poly.items() if c != 0))


def cauchy_schwarz_check(m: MomentTable, u: dict, v: dict, tol: float = 1e-12):
    """``(<uv>^2, <u^2><v^2>, violated)``; any true probability has ``lhs <= rhs``."""
    if 2 * max(poly_degree(u), poly_degree(v)) > m.max_degree:
        raise ValidationError("Cauchy-Schwarz check needs moments to twice the larger degree")
    lhs = expectation_of_polynomial(m, poly_mul(u, v)) ** 2
    rhs = expectation_of_polynomial(m, poly_mul(u, u)) * expectation_of_polynomial(m, poly_mul(v, v))
    return lhs, rhs, bool(lhs > rhs + tol)


# --- moment matrices ------------------------------------------------------------------


@dataclass(frozen=True)
class MomentMatrix:
    basis: tuple
    entries: np.ndarray
    scales: np.ndarray

    def polynomial(self, coeffs) -> dict:
        """Coefficient map (original variables) of ``sum_k c_k prod (x_i / s_i)^basis_k``."""
        out = {}
        for c, e in zip(coeffs, self.basis):
            out[e] = float(np.real(c)) / float(np.prod(self.scales ** np.asarray(e)))
        return out


def moment_matrix(m: MomentTable, D: int, rescale: bool = True) -> MomentMatrix:
    """``entries[k, l] = M[basis_k + basis_l]`` after scaling each variable to unit second moment."""
    if 2 * D > m.max_degree:
        raise ValidationError(f"degree-{D} moment matrix needs moments to {2 * D}, table has {m.max_degree}")
    basis = tuple(multi_indices(m.variables, D))
    scales = np.ones(m.variables)
    if rescale and D >= 1:
        for i in range(m.variables):
            e = [0] * m.variables
            e[i] = 2
            s2 = m.values[tuple(e)]
            scales[i] = math.sqrt(s2) if s2 > 0 else 1.0
    size = len(basis)
    mat = np.empty((size, size))
    for k, a in enumerate(basis):
        for l in range(k, size):
            b = basis[l]
            e = tuple(x + y for x, y in zip(a, b))
            mat[k, l] = mat[l, k] = m.values[e] / float(np.prod(scales ** np.asarray(e)))
    mat.flags.writeable = False
    return MomentMatrix(basis, mat, scales)


@dataclass(frozen=True)
class PSDResult:
    is_psd: bool
    min_eigenvalue: float
    witness: np.ndarray
    trace: float

    def __iter__(self):
        return iter((self.is_psd, self.min_eigenvalue, self.witness))


def psd_check(mm: MomentMatrix, tol: float = PSD_RTOL) -> PSDResult:
    """PSD within ``tol * trace``; ``witness`` is a unit eigenvector of the smallest eigenvalue."""
    w, v = np.linalg.eigh(mm.entries)
    trace = float(np.trace(mm.entries))
    vec_ = v[:, 0]
    k = int(np.argmax(np.abs(vec_)))
    vec_ = vec_ * np.sign(vec_[k])
    return PSDResult(bool(w[0] >= -tol * trace), float(w[0]), vec_, trace)


@dataclass
class CalibrationResult:
    variance: float
    bracket: tuple
    matrix_min_eigenvalue_at_variance: float
    trace_at_variance: float
    min_eigenvalue_at_lower: float | None
    method: str
    direction: tuple

    def to_json(self) -> dict:
        return {
            "variance": self.variance,
            "bracket": list(self.bracket),
            "matrix_min_eigenvalue_at_variance": self.matrix_min_eigenvalue_at_variance,
            "trace_at_variance": self.trace_at_variance,
            "min_eigenvalue_at_lower": self.min_eigenvalue_at_lower,
            "method": self.method,
            "direction": list(self.direction),
        }


def _relative_min_eig(m: MomentTable, D: int, variances) -> PSDResult:
    return psd_check(moment_matrix(add_gaussian_noise(m, variances), D))


def calibrate_gaussian_noise(
    q_moments: MomentTable,
    D: int,
    bracket_width: float = 1e-6,
    direction=None,
    v_start: float = 1.0,
    v_max: float = 1e8,
    monotonicity_points: int = 20,
) -> CalibrationResult:
    """Smallest added Gaussian variance making the degree-``D`` moment matrix PSD.

    ``direction`` scales the variance per variable (default isotropic).  The upper
    end is bracketed by doubling, then bisected.  PSD is preserved by further
    Gaussian smoothing, but if the sampled relative minimum eigenvalue is not
    monotone the search falls back to a linear scan of step ``bracket_width``.
    """
    n = q_moments.variables
    direction = np.ones(n) if direction is None else np.asarray(direction, dtype=float)
    if direction.shape != (n,) or np.any(direction < 0) or not np.any(direction > 0):
        raise ValidationError("direction must be a non-negative vector with a positive entry")
    if 2 * D > q_moments.max_degree:
        raise ValidationError(f"need moments to degree {2 * D}")

    def probe(v):
        return _relative_min_eig(q_moments, D, v * direction)

    r0 = probe(0.0)
    if r0.is_psd:
        return CalibrationResult(0.0, (0.0, 0.0), r0.min_eigenvalue, r0.trace, None, "already-psd", _floats(direction))

    lo, hi = 0.0, v_start
    r_hi = probe(hi)
    while not r_hi.is_psd:
        lo, hi = hi, 2 * hi
        if hi > v_max:
            raise ConvergenceError(f"no PSD variance found up to {v_max}; last min eigenvalue {r_hi.min_eigenvalue:.3g}")
        r_hi = probe(hi)

    grid = np.linspace(0, hi, monotonicity_points)
    rel = [(lambda r: r.min_eigenvalue / r.trace)(probe(v)) for v in grid]
    monotone = all(b >= a - 1e-12 for a, b in zip(rel, rel[1:]))

    if monotone:
        method = "bisection"
        while hi - lo > bracket_width:
            mid = 0.5 * (lo + hi)
            r = probe(mid)
            if r.is_psd:
                hi, r_hi = mid, r
            else:
                lo = mid
    else:
        method = "scan"
        v = lo
        while True:
            r = probe(v + bracket_width)
            if r.is_psd:
                lo, hi, r_hi = v, v + bracket_width, r
                break
            v += bracket_width
    r_lo = probe(lo)
    return CalibrationResult(
        float(hi), (float(lo), float(hi)), r_hi.min_eigenvalue, r_hi.trace, r_lo.min_eigenvalue, method, _floats(direction)
    )


def _floats(x) -> tuple:
    return tuple(float(v) for v in x)
