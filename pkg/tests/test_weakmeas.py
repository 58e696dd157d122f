import math

import numpy as np
import pytest
import scipy.linalg

from conftest import SIGMA_X, SIGMA_Z, random_hermitian, random_schedule, random_state
from quasinoise.core import DensityState, ValidationError
from quasinoise.quasiprob import MemoryKernel, Schedule, q_correlator, table1_setup
from quasinoise.weakmeas import (
    ExtrapolationReport,
    branch_mixture,
    detection_variance,
    joint_moments,
    kraus_operator,
    kraus_step,
    richardson,
    weak_limit,
)

GH_X, GH_W = np.polynomial.hermite.hermgauss(64)


def expm_kraus(a, eta, x):
    """Oracle: C exp(-eta^2 (A - x)^2) through a dense matrix exponential."""
    d = a.shape[0]
    c = math.sqrt(eta * math.sqrt(2 / math.pi))
    shifted = a - x * np.eye(d)
    return c * scipy.linalg.expm(-(eta**2) * shifted @ shifted)


def quad_nodes(eta, centre=0.0):
    """Nodes and weights for integrals over a with a Gaussian factor of variance 1/(4 eta^2)."""
    s = 1 / (math.sqrt(2) * eta)
    return centre + s * GH_X, s * GH_W * np.exp(GH_X**2)


def quad_sequence(rho, observables, eta, powers):
    """Oracle: nested quadrature of prod a_k^p_k Tr[K_n ... K_1 rho K_1^+ ... K_n^+]."""

    def rec(x, k):
        if k == len(observables):
            return np.trace(x).real
        nodes, weights = quad_nodes(eta)
        total = 0.0
        for a, w in zip(nodes, weights):
            kr = expm_kraus(observables[k], eta, a)
            total += w * a ** powers[k] * rec(kr @ x @ kr.conj().T, k + 1)
        return total

    return rec(rho, 0)


@pytest.mark.parametrize("eta", [0.2, 0.5, 1.0])
def test_kraus_completeness(rng, eta):
    a = random_hermitian(rng, 3, integer_spectrum=True)
    nodes, weights = quad_nodes(eta)
    total = sum(w * (k.conj().T @ k) for w, k in ((w, kraus_operator(a, eta, x)) for x, w in zip(nodes, weights)))
    assert np.allclose(total, np.eye(3), atol=1e-9)


def test_kraus_operator_matches_expm(rng):
    a = random_hermitian(rng, 3)
    for x in (-1.3, 0.0, 2.1):
        assert np.allclose(kraus_operator(a, 0.4, x), expm_kraus(a, 0.4, x), atol=1e-12)


def test_kraus_step_integrates_to_channel(rng):
    a = random_hermitian(rng, 2, integer_spectrum=True)
    x = random_state(rng, 2).matrix
    eta = 0.3
    nodes, weights = quad_nodes(eta)
    channel = sum(w * expm_kraus(a, eta, t) @ x @ expm_kraus(a, eta, t).conj().T for t, w in zip(nodes, weights))
    branches = kraus_step(x, a, eta)
    assert np.allclose(sum(op for _, op in branches), channel, atol=1e-10)


@pytest.mark.parametrize("eta", [0.1, 0.3, 0.7])
def test_branch_mixture_normalized(rng, eta):
    sched = random_schedule(rng, 3, 3)
    mix = branch_mixture(random_state(rng, 3), sched, eta)
    assert abs(mix.total_weight - 1) < 1e-9
    assert mix.variance == detection_variance(eta)


def test_joint_moments_against_quadrature(rng):
    rho = random_state(rng, 2)
    obs = [random_hermitian(rng, 2, integer_spectrum=True) for _ in range(2)]
    sched = Schedule.simple(obs)
    for eta, powers in [(0.6, (1, 1)), (0.4, (2, 1)), (0.8, (0, 3))]:
        sel = [0] * powers[0] + [1] * powers[1]
        got = joint_moments(rho, sched, eta, sel)
        ref = quad_sequence(rho.matrix, obs, eta, powers)
        assert abs(got - ref) < 1e-8 * max(1.0, abs(ref))


def test_second_moment_offset_is_detector_variance(rng):
    for _ in range(5):
        a = random_hermitian(rng, 3)
        rho = random_state(rng, 3)
        sched = Schedule.simple([a])
        exact = np.trace(rho.matrix @ a @ a).real
        for eta in (0.05, 0.1, 0.3, 0.9):
            assert abs(joint_moments(rho, sched, eta, [0, 0]) - detection_variance(eta) - exact) < 1e-9


def test_density_integrates_to_one():
    rho, sched = DensityState.pure([1, 0]), Schedule.simple([SIGMA_X])
    mix = branch_mixture(rho, sched, 0.5)
    nodes, weights = quad_nodes(0.5)
    assert abs(sum(w * mix.density([x]) for x, w in zip(nodes, weights)) - 1) < 1e-10


def test_richardson_is_exact_on_polynomials():
    h = [0.04, 0.01, 0.0025]
    assert abs(richardson(h, [3 + 2 * x - 5 * x * x for x in h]) - 3) < 1e-12


def test_weak_limit_of_b_on_table1():
    rho, sched = table1_setup()
    rep = weak_limit(rho, sched, [1])
    assert abs(rep.extrapolated - rep.reference) < 1e-6
    assert 1.7 <= rep.fitted_order <= 2.3
    assert not rep.flagged


@pytest.mark.parametrize("seed", range(4))
def test_weak_limit_reaches_markovian_correlator(seed):
    rng = np.random.default_rng(100 + seed)
    rho = random_state(rng, 2)
    sched = Schedule.simple([random_hermitian(rng, 2) for _ in range(2)])
    rep = weak_limit(rho, sched, [0, 1])
    assert rep.reference == pytest.approx(q_correlator(rho, sched, MemoryKernel(), [0, 1]))
    assert abs(rep.extrapolated - rep.reference) < 1e-6
    assert 1.7 <= rep.fitted_order <= 2.3


def test_weak_limit_validation():
    rho, sched = table1_setup()
    with pytest.raises(ValidationError):
        weak_limit(rho, sched, [1], (0.1, 0.2, 0.05))
    with pytest.raises(ValidationError):
        weak_limit(rho, sched, [1], (0.2, 0.1))
    with pytest.raises(ValidationError):
        weak_limit(rho, sched, [1, 1])
    with pytest.raises(ValidationError):
        joint_moments(rho, sched, 0.1, [0] * 7)
    with pytest.raises(ValidationError):
        kraus_operator(SIGMA_Z, 0.0, 0.0)


def test_report_serialization():
    rho, sched = table1_setup()
    rep = weak_limit(rho, sched, [1])
    data = rep.to_json()
    assert data["eta_list"] == [0.2, 0.1, 0.05, 0.025]
    lines = rep.to_csv().splitlines()
    assert lines[0] == "eta,value" and lines[1].startswith("0.2,")
    assert isinstance(rep, ExtrapolationReport)
