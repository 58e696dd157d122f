import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from conftest import SIGMA_X, SIGMA_Y, SIGMA_Z, random_hermitian
from quasinoise.core import (
    MAX_DIM,
    DensityState,
    HermitianObservable,
    Superoperator,
    ValidationError,
    evolve_observable,
    hermitian_eig,
    superop_c,
    superop_left,
    superop_q,
    superop_right,
    unvec,
    vec,
)


def charpoly_eigenvalues(m):
    """Independent oracle: roots of the characteristic polynomial."""
    return np.sort(np.roots(np.poly(m)).real)


@pytest.mark.parametrize("d", range(1, MAX_DIM + 1))
def test_eigenvalues_match_characteristic_polynomial(rng, d):
    m = random_hermitian(rng, d)
    spec = hermitian_eig(m)
    assert spec.eigenvalues.size == d  # generic spectrum is non-degenerate
    assert np.allclose(spec.eigenvalues, charpoly_eigenvalues(m), atol=1e-8)


@pytest.mark.parametrize("d", range(1, MAX_DIM + 1))
def test_projectors_are_orthogonal_resolution_of_identity(rng, d):
    m = random_hermitian(rng, d, integer_spectrum=True)
    spec = hermitian_eig(m)
    total = sum(spec.projectors)
    assert np.allclose(total, np.eye(d), atol=1e-12)
    for i, p in enumerate(spec.projectors):
        assert np.allclose(p @ p, p, atol=1e-12)
        assert np.allclose(p, p.conj().T, atol=1e-14)
        for q in spec.projectors[i + 1 :]:
            assert np.allclose(p @ q, 0, atol=1e-12)
    assert np.allclose(spec.reconstruct(), m, atol=1e-12)


def test_degenerate_levels_merge():
    spec = hermitian_eig(np.diag([1.0, -1.0, 1.0, 0.0]))
    assert np.allclose(spec.eigenvalues, [-1, 0, 1])
    assert [int(round(np.trace(p).real)) for p in spec.projectors] == [1, 1, 2]


def test_pauli_x_spectrum():
    spec = hermitian_eig(SIGMA_X)
    assert np.allclose(spec.eigenvalues, [-1, 1])
    assert np.allclose(spec.projectors[1], np.full((2, 2), 0.5))


def test_non_hermitian_rejected_with_entry():
    with pytest.raises(ValidationError, match=r"\(0, 1\)"):
        HermitianObservable([[0, 1], [2, 0]])


def test_dimension_cap():
    with pytest.raises(ValidationError):
        HermitianObservable(np.eye(MAX_DIM + 1))


def test_density_state_checks():
    with pytest.raises(ValidationError, match="trace"):
        DensityState(np.eye(2))
    with pytest.raises(ValidationError, match="negative eigenvalue"):
        DensityState(np.diag([1.5, -0.5]))
    assert np.allclose(DensityState.pure([1, 1]).matrix, np.full((2, 2), 0.5))


def test_vec_is_column_stacking():
    x = np.arange(4).reshape(2, 2)
    assert list(vec(x)) == [0, 2, 1, 3]
    assert np.array_equal(unvec(vec(x), 2), x)


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_left_right_superoperators_act_as_products(seed, d):
    rng = np.random.default_rng(seed)
    a = random_hermitian(rng, d)
    x = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    assert np.allclose(superop_left(a)(x), a @ x)
    assert np.allclose(superop_right(a)(x), x @ a)
    assert np.allclose(superop_c(a)(x), (a @ x + x @ a) / 2)
    assert np.allclose(superop_q(a)(x), -1j * (a @ x - x @ a))


@given(st.integers(0, 2**32 - 1))
def test_superoperator_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b = random_hermitian(rng, 3), random_hermitian(rng, 3)
    x = rng.normal(size=(3, 3)) + 0j
    sa, sb = superop_c(a), superop_q(b)
    assert np.allclose((sa @ sb)(x), sa(sb(x)))
    assert np.allclose((sa + sb)(x), sa(x) + sb(x))
    assert np.allclose((sa - sb)(x), sa(x) - sb(x))
    assert np.allclose(Superoperator.identity(3)(x), x)
    # left and right multiplication commute, so the two parts of one observable do too
    assert np.allclose(superop_c(a).action @ superop_q(a).action, superop_q(a).action @ superop_c(a).action)


def test_classical_superoperator_of_sigma_x_matrix():
    expected = np.array([[0, 1, 1, 0], [1, 0, 0, 1], [1, 0, 0, 1], [0, 1, 1, 0]]) / 2
    assert np.allclose(superop_c(SIGMA_X).action, expected)


def test_superoperator_trace_preservation_of_quantum_part(rng):
    a = random_hermitian(rng, 4)
    x = random_hermitian(rng, 4)
    assert abs(np.trace(superop_q(a)(x))) < 1e-12
    assert abs(np.trace(superop_c(a)(x)) - np.trace(a @ x)) < 1e-12


@pytest.mark.parametrize("t", [0.0, 0.3, 1.7, -2.2])
def test_evolution_against_expm(rng, t):
    h = random_hermitian(rng, 4)
    a = random_hermitian(rng, 4)
    u = scipy.linalg.expm(1j * h * t)
    assert np.allclose(evolve_observable(a, h, t).matrix, u @ a @ u.conj().T, atol=1e-12)


def test_rotation_maps_x_to_z_at_quarter_period():
    # e^{i sigma_y t} sigma_x e^{-i sigma_y t} = cos(2t) sigma_x + sin(2t) sigma_z
    out = evolve_observable(SIGMA_X, SIGMA_Y, np.pi / 4)
    assert np.allclose(out.matrix, SIGMA_Z, atol=1e-12)
    out = evolve_observable(SIGMA_X, SIGMA_Y, np.pi / 2)
    assert np.allclose(out.matrix, -SIGMA_X, atol=1e-12)
