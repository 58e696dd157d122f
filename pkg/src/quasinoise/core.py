"""Dense complex linear algebra for small quantum systems.

Operators are plain ``numpy`` arrays wrapped in frozen dataclasses.  Superoperators
act on *column-stacked* operators, ``vec(X) = X.reshape(-1, order="F")``, so that
``vec(A X B) = kron(B.T, A) @ vec(X)``.  This convention is used everywhere in the
package.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_DIM = 8
HERMITIAN_TOL = 1e-12


class ValidationError(ValueError):
    """Input violates a documented invariant."""

    def __init__(self, message: str, path: str | None = None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.message = message
        self.path = path


class ResourceError(RuntimeError):
    """A configured size limit would be exceeded."""


class ConvergenceError(RuntimeError):
    """An iterative search failed to reach its target."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.complex128, copy=True)
    arr.flags.writeable = False
    return arr


def as_matrix(entries, name: str = "matrix") -> np.ndarray:
    """Validate ``entries`` as a finite square complex matrix with ``d <= MAX_DIM``."""
    m = np.asarray(entries, dtype=np.complex128)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ValidationError(f"expected a non-empty square matrix, got shape {m.shape}", name)
    if m.shape[0] > MAX_DIM:
        raise ValidationError(f"dimension {m.shape[0]} exceeds cap {MAX_DIM}", name)
    if not np.all(np.isfinite(m)):
        i, j = np.argwhere(~np.isfinite(m))[0]
        raise ValidationError(f"non-finite entry at ({i}, {j})", name)
    return m


def check_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL, name: str = "matrix") -> None:
    diff = np.abs(m - m.conj().T)
    if diff.max() > tol:
        i, j = np.unravel_index(np.argmax(diff), diff.shape)
        raise ValidationError(
            f"not Hermitian: entry ({i}, {j}) = {m[i, j]} vs conj of ({j}, {i}) = {m[j, i]}",
            name,
        )


@dataclass(frozen=True)
class HermitianObservable:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "observable")
        check_hermitian(m, name="observable")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DensityState:
    matrix: np.ndarray

    def __post_init__(self):
        m = as_matrix(self.matrix, "state")
        check_hermitian(m, name="state")
        tr = np.trace(m)
        if abs(tr - 1) > 1e-12:
            raise ValidationError(f"trace is {tr.real:.15g}, expected 1", "state")
        lo = np.linalg.eigvalsh(m).min()
        if lo < -1e-10:
            raise ValidationError(f"negative eigenvalue {lo:.3g}", "state")
        object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def pure(cls, vector) -> "DensityState":
        v = np.asarray(vector, dtype=np.complex128).ravel()
        nrm = np.linalg.norm(v)
        if nrm == 0 or not np.isfinite(nrm):
            raise ValidationError("state vector must be non-zero and finite", "state")
        v = v / nrm
        return cls(np.outer(v, v.conj()))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return np.asarray(v).reshape((dim, dim), order="F")


@dataclass(frozen=True)
class Superoperator:
    """Linear map on ``d x d`` operators, stored as a ``d^2 x d^2`` matrix."""

    dim: int
    action: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.action, dtype=np.complex128)
        d2 = self.dim * self.dim
        if a.shape != (d2, d2):
            raise ValidationError(f"action must be {d2}x{d2}, got {a.shape}", "superoperator")
        object.__setattr__(self, "action", _frozen(a))

    @classmethod
    def identity(cls, dim: int) -> "Superoperator":
        return cls(dim, np.eye(dim * dim))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        if x.shape != (self.dim, self.dim):
            raise ValidationError(f"operand shape {x.shape} does not match dim {self.dim}")
        return unvec(self.action @ vec(x), self.dim)

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        """Composition: ``(S @ T)(X) == S(T(X))``."""
        if not isinstance(other, Superoperator):
            return NotImplemented
        if other.dim != self.dim:
            raise ValidationError(f"dimension mismatch {self.dim} vs {other.dim}")
        return Superoperator(self.dim, self.action @ other.action)

    def __add__(self, other: "Superoperator") -> "Superoperator":
        if other.dim != self.dim:
            raise ValidationError(f"dimension mismatch {self.dim} vs {other.dim}")
        return Superoperator(self.dim, self.action + other.action)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        if other.dim != self.dim:
            raise ValidationError(f"dimension mismatch {self.dim} vs {other.dim}")
        return Superoperator(self.dim, self.action - other.action)

    def scale(self, c: complex) -> "Superoperator":
        return Superoperator(self.dim, c * self.action)


def _obs_matrix(obs) -> np.ndarray:
    if isinstance(obs, HermitianObservable):
        return obs.matrix
    return HermitianObservable(obs).matrix


def superop_left(obs) -> Superoperator:
    """X -> A X"""
    a = _obs_matrix(obs)
    d = a.shape[0]
    return Superoperator(d, np.kron(np.eye(d), a))


def superop_right(obs) -> Superoperator:
    """X -> X A"""
    a = _obs_matrix(obs)
    d = a.shape[0]
    return Superoperator(d, np.kron(a.T, np.eye(d)))


def superop_c(obs) -> Superoperator:
    """Symmetrized product X -> (A X + X A) / 2."""
    return (superop_left(obs) + superop_right(obs)).scale(0.5)


def superop_q(obs) -> Superoperator:
    """Scaled commutator X -> (A X - X A) / i."""
    return (superop_left(obs) - superop_right(obs)).scale(-1j)


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    projectors: tuple

    def reconstruct(self) -> np.ndarray:
        return sum(lam * p for lam, p in zip(self.eigenvalues, self.projectors))


def merge_tolerance(eigenvalues: np.ndarray) -> float:
    """Levels closer than this are treated as degenerate."""
    ev = np.asarray(eigenvalues, dtype=float)
    spread = float(ev.max() - ev.min()) if ev.size else 0.0
    scale = float(np.abs(ev).max()) if ev.size else 0.0
    return max(1e-9 * spread, 1e-12 * max(scale, 1.0))


def hermitian_eig(obs, tol: float = HERMITIAN_TOL) -> SpectralDecomposition:
    """Eigenvalues (ascending, degenerate levels merged) and eigenprojectors."""
    a = as_matrix(obs.matrix if isinstance(obs, HermitianObservable) else obs, "observable")
    check_hermitian(a, tol, name="observable")
    a = (a + a.conj().T) / 2
    w, v = np.linalg.eigh(a)
    mtol = merge_tolerance(w)

    groups = [[0]]
    for k in range(1, len(w)):
        if w[k] - w[groups[-1][-1]] <= mtol:
            groups[-1].append(k)
        else:
            groups.append([k])

    values, projectors = [], []
    for g in groups:
        values.append(float(np.mean(w[g])))
        vg = v[:, g]
        p = vg @ vg.conj().T
        p.flags.writeable = False
        projectors.append(p)
    ev = np.array(values)
    ev.flags.writeable = False
    return SpectralDecomposition(ev, tuple(projectors))


def evolve_observable(obs, hamiltonian, t: float) -> HermitianObservable:
    """Heisenberg picture ``exp(iHt) A exp(-iHt)``.

    With ``H = i(|-><+| - |+><-|)`` (that is ``sigma_y``), ``sigma_x`` turns into
    ``+sigma_z`` at ``t = pi/4`` and into ``-sigma_x`` at ``t = pi/2``.
    """
    a = _obs_matrix(obs)
    h = _obs_matrix(hamiltonian)
    if h.shape != a.shape:
        raise ValidationError(f"hamiltonian shape {h.shape} vs observable {a.shape}")
    if t == 0:
        return obs if isinstance(obs, HermitianObservable) else HermitianObservable(a)
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    u = (v * np.exp(1j * w * t)) @ v.conj().T
    out = u @ a @ u.conj().T
    return HermitianObservable((out + out.conj().T) / 2)
