import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from mmtest.mismatched import (
    FeatureBasis,
    SmoothingRequiredError,
    SolverConfig,
    in_exponential_family,
    is_minimal,
    loglik_basis,
    mismatched_divergence,
    mismatched_gradient,
    mismatched_objective,
)
from mmtest.prob import DistributionError, kl_divergence, tilt

from conftest import random_dist

MU = np.array([0.5, 0.5])
PI = np.array([0.25, 0.75])


def random_basis(rng, d, m):
    return FeatureBasis(rng.standard_normal((d, m)))


def bfgs_oracle(mu, pi, psi):
    """Independent maximization of the same objective by quasi-Newton."""

    def neg(r):
        f = r @ psi
        return -(mu @ f - np.log(pi @ np.exp(f)))

    best = min(
        (minimize(neg, x0, method="BFGS", options={"gtol": 1e-12}) for x0 in (np.zeros(psi.shape[0]),)),
        key=lambda res: res.fun,
    )
    return -best.fun


# -- FeatureBasis ----------------------------------------------------------


def test_basis_minimality():
    assert is_minimal([[1.0, 2.0, 3.0]])
    assert not is_minimal([[1.0, 1.0, 1.0]])
    assert not is_minimal([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]])
    assert not is_minimal([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        FeatureBasis([[2.0, 2.0, 2.0]])
    assert FeatureBasis.empty(4).d == 0


def test_basis_json_roundtrip():
    b = FeatureBasis([[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]])
    obj = json.loads(b.to_json())
    assert obj["alphabet_size"] == 3
    assert obj["functions"] == [[1.0, 2.0, 0.5], [0.0, 1.0, -1.0]]
    np.testing.assert_array_equal(FeatureBasis.from_json(b.to_json()).functions, b.functions)
    assert FeatureBasis.from_dict({"alphabet_size": 3, "functions": []}).d == 0


# -- objective ---------------------------------------------------------------


def test_objective_at_zero(rng):
    for _ in range(5):
        mu, pi = random_dist(rng, 6), random_dist(rng, 6)
        assert mismatched_objective(mu, pi, random_basis(rng, 3, 6), np.zeros(3)) == pytest.approx(0, abs=1e-15)


def test_objective_loglik_row_gives_kl():
    psi = np.log(MU / PI)[None, :]
    assert mismatched_objective(MU, PI, psi, [1.0]) == pytest.approx(0.143841, abs=1e-6)
    assert mismatched_objective(MU, PI, psi, [1.0]) == pytest.approx(kl_divergence(MU, PI), rel=1e-13)


def test_gradient_matches_central_differences(rng):
    h = 1e-5
    for _ in range(20):
        m, d = rng.integers(3, 10), rng.integers(1, 3)
        mu, pi = random_dist(rng, m), random_dist(rng, m)
        psi = rng.standard_normal((d, m))
        r = rng.standard_normal(d)
        g = mismatched_gradient(mu, pi, psi, r)
        fd = np.array([
            (mismatched_objective(mu, pi, psi, r + h * e) - mismatched_objective(mu, pi, psi, r - h * e)) / (2 * h)
            for e in np.eye(d)
        ])
        assert np.max(np.abs(g - fd)) / max(np.max(np.abs(g)), 1e-3) < 1e-5
        # closed form: <mu, psi> - <tilt(pi, f_r), psi>
        np.testing.assert_allclose(g, psi @ mu - psi @ tilt(pi, r @ psi), atol=1e-14)


def test_zero_reference_mass_needs_smoothing():
    with pytest.raises(SmoothingRequiredError):
        mismatched_divergence([0.3, 0.3, 0.4], [0.5, 0.5, 0.0], [[0.0, 1.0, 2.0]])
    # a zero the class cannot reach is harmless
    sol = mismatched_divergence([0.2, 0.8, 0.0], [0.5, 0.5, 0.0], [[1.0, -1.0, 0.0]])
    assert sol.value == pytest.approx(kl_divergence([0.2, 0.8, 0.0], [0.5, 0.5, 0.0]), rel=1e-9)


# -- divergence ----------------------------------------------------------------


def test_divergence_identity(rng):
    pi = random_dist(rng, 5)
    sol = mismatched_divergence(pi, pi, random_basis(rng, 2, 5))
    assert sol.value == 0
    np.testing.assert_array_equal(sol.r_star, 0)
    assert not sol.boundary_hit


def test_divergence_complete_class_attains_kl():
    sol = mismatched_divergence(MU, PI, [[1.0, 0.0]])
    assert sol.value == pytest.approx(0.143841, abs=1e-6)
    assert sol.value == pytest.approx(kl_divergence(MU, PI), rel=1e-12)


def test_divergence_loglik_basis_is_exact(rng):
    for m in (3, 8, 20):
        pi0, pi1 = random_dist(rng, m), random_dist(rng, m)
        basis, kept = loglik_basis([pi1], pi0)
        assert kept == [0]
        assert mismatched_divergence(pi1, pi0, basis).value == pytest.approx(kl_divergence(pi1, pi0), abs=1e-8)


def test_divergence_matches_independent_optimizer(rng):
    for _ in range(15):
        m, d = rng.integers(4, 12), rng.integers(1, 4)
        mu, pi = random_dist(rng, m), random_dist(rng, m)
        psi = rng.standard_normal((d, m))
        sol = mismatched_divergence(mu, pi, FeatureBasis(psi))
        assert sol.converged and not sol.boundary_hit
        assert sol.value == pytest.approx(bfgs_oracle(mu, pi, psi), abs=1e-8)


def test_divergence_moment_matching(rng):
    cfg = SolverConfig()
    for _ in range(20):
        m, d = rng.integers(4, 10), rng.integers(1, 4)
        mu, pi = random_dist(rng, m), random_dist(rng, m)
        psi = rng.standard_normal((d, m))
        sol = mismatched_divergence(mu, pi, psi, cfg)
        assert sol.grad_norm <= math.sqrt(d) * cfg.grad_tol
        np.testing.assert_allclose(psi @ mu, psi @ tilt(pi, sol.r_star @ psi), atol=cfg.grad_tol)


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 10), st.integers(0, 2**32 - 1))
def test_divergence_between_zero_and_kl(m, seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, m))
    mu, pi = random_dist(rng, m, 1.5), random_dist(rng, m, 1.5)
    psi = rng.standard_normal((d, m))
    if not is_minimal(psi):
        return
    v = mismatched_divergence(mu, pi, psi).value
    assert 0 <= v <= kl_divergence(mu, pi) + 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(4, 10), st.integers(0, 2**32 - 1))
def test_divergence_monotone_in_class(m, seed):
    rng = np.random.default_rng(seed)
    mu, pi = random_dist(rng, m), random_dist(rng, m)
    psi = rng.standard_normal((m - 1, m))
    values = [mismatched_divergence(mu, pi, psi[:k]).value for k in range(1, m)]
    assert np.all(np.diff(values) >= -1e-9)
    assert values[-1] == pytest.approx(kl_divergence(mu, pi), abs=1e-9)


def test_divergence_invariant_to_constant_shifts(rng):
    for _ in range(10):
        m, d = 7, 3
        mu, pi = random_dist(rng, m), random_dist(rng, m)
        psi = rng.standard_normal((d, m))
        shift = rng.standard_normal(d)[:, None] * 5
        a = mismatched_divergence(mu, pi, psi)
        b = mismatched_divergence(mu, pi, psi + shift)
        assert b.value == pytest.approx(a.value, abs=1e-9)
        r = rng.standard_normal(d)
        assert mismatched_objective(mu, pi, psi + shift, r) == pytest.approx(
            mismatched_objective(mu, pi, psi, r), abs=1e-9
        )


def test_divergence_unattained_supremum():
    # the empirical distribution misses points: sup is approached as r -> inf
    pi = np.full(4, 0.25)
    sol = mismatched_divergence([1, 0, 0, 0], pi, np.eye(4)[:3])
    assert sol.value == pytest.approx(math.log(4), abs=1e-8)
    capped = mismatched_divergence([1, 0, 0, 0], pi, [[1.0, 0.0, 0.0, 0.0]], SolverConfig(r_max=3.0))
    assert capped.boundary_hit
    assert np.linalg.norm(capped.r_star) == pytest.approx(3.0)
    assert capped.value == pytest.approx(mismatched_objective([1, 0, 0, 0], pi, [[1.0, 0, 0, 0]], [3.0]), rel=1e-12)


def test_perfect_approximation_forward_direction(rng):
    m, d = 10, 3
    pi0 = random_dist(rng, m)
    basis = random_basis(rng, d, m)
    family = [pi0] + [tilt(pi0, rng.standard_normal(d) @ basis.functions) for _ in range(4)]
    for p in family:
        assert in_exponential_family(p, pi0, basis)
    for i, a in enumerate(family):
        for j, b in enumerate(family):
            if i != j:
                assert mismatched_divergence(a, b, basis).value == pytest.approx(kl_divergence(a, b), abs=1e-7)


# -- log-likelihood basis --------------------------------------------------------


def test_loglik_basis_examples(rng):
    pi0 = np.array([0.25, 0.75])
    basis, kept = loglik_basis([pi0], pi0)
    assert kept == [] and basis.d == 0
    basis, kept = loglik_basis([[0.5, 0.5]], pi0)
    np.testing.assert_allclose(basis.functions, [[math.log(2), math.log(2 / 3)]], rtol=1e-14)

    pi0 = random_dist(rng, 6)
    pi1 = random_dist(rng, 6)
    psi1 = np.log(pi1 / pi0)
    pi2 = tilt(pi0, 2 * psi1)
    basis, kept = loglik_basis([pi1, pi2], pi0)
    assert kept == [0] and basis.d == 1


def test_loglik_basis_errors():
    with pytest.raises(DistributionError):
        loglik_basis([[0.5, 0.5, 0.0]], [0.5, 0.5, 0.0])
    with pytest.raises(DistributionError):
        loglik_basis([[0.5, 0.5]], [0.2, 0.3, 0.5])


# -- exponential family membership ----------------------------------------------


def test_exponential_family_membership(rng):
    m = 8
    ref = random_dist(rng, m)
    basis = random_basis(rng, 2, m)
    psi1, psi2 = basis.functions
    assert in_exponential_family(ref, ref, basis)
    assert in_exponential_family(tilt(ref, 3 * psi1 - psi2), ref, basis)

    # Gram-Schmidt a direction orthogonal to span{1, psi1, psi2}
    span = [np.ones(m), psi1, psi2]
    g = rng.standard_normal(m)
    q = []
    for v in span:
        for u in q:
            v = v - (v @ u) * u
        q.append(v / np.linalg.norm(v))
    for u in q:
        g = g - (g @ u) * u
    assert not in_exponential_family(tilt(ref, g), ref, basis)


def test_divergence_linear_ray_reaches_cap_quickly():
    # pi puts no mass where f varies against mu, so the objective is linear in r
    sol = mismatched_divergence([0.5, 0.5], [1.0, 0.0], [[1.0, 0.0]])
    assert sol.boundary_hit
    assert sol.iterations <= 5
    assert sol.r_star == pytest.approx([-1e3])
    assert sol.value == pytest.approx(500.0)
