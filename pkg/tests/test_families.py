"""Family catalog: closed forms against finite differences and sampling."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shiftbench import families as fam
from shiftbench.errors import ParamDomainError, SupportError
from shiftbench.rng import child_rng

from _oracles import fd_gradient, fd_jacobian


def _random_eta(family: fam.FamilySpec, rng: np.random.Generator) -> np.ndarray:
    kind = family.kind
    if kind == "bernoulli_logit":
        return rng.uniform(-4, 4, size=1)
    if kind == "categorical":
        return rng.uniform(-3, 3, size=family.dim_eta)
    if kind == "gaussian_known_var":
        return rng.uniform(-3, 3, size=family.dim_eta)
    if kind == "gaussian_full":
        return np.array([rng.uniform(-2, 2), rng.uniform(-3, -0.2)])
    if kind == "poisson":
        return rng.uniform(-2, 2.5, size=1)
    if kind == "gamma":
        return np.array([rng.uniform(-0.8, 4), rng.uniform(-3, -0.1)])
    raise AssertionError(kind)


ALL_FAMILIES = [
    fam.bernoulli(),
    fam.categorical(3),
    fam.categorical(5),
    fam.gaussian_known_var(sigma=1.0),
    fam.gaussian_known_var(sigma=0.5),
    fam.gaussian_known_var(cov=[[1.0, 0.3], [0.3, 2.0]]),
    fam.gaussian_full(),
    fam.poisson(),
    fam.gamma_family(),
]


@pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f"{f.kind}{f.k or ''}")
def test_mean_stat_is_gradient_of_log_partition(family):
    rng = child_rng(11_001, "test.families.grad", 0)
    for _ in range(100):
        eta = _random_eta(family, rng)
        grad = fd_gradient(lambda e: fam.log_partition(family, e), eta, h=1e-6)
        exact = np.atleast_1d(fam.mean_stat(family, eta))
        assert np.all(np.abs(grad - exact) <= 1e-6 * (1.0 + np.abs(exact)))


@pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f"{f.kind}{f.k or ''}")
def test_var_stat_is_jacobian_of_mean_stat(family):
    rng = child_rng(11_002, "test.families.hess", 0)
    for _ in range(50):
        eta = _random_eta(family, rng)
        jac = fd_jacobian(lambda e: np.atleast_1d(fam.mean_stat(family, e)), eta, h=1e-6)
        exact = np.atleast_2d(fam.var_stat(family, eta))
        assert np.all(np.abs(jac - exact) <= 2e-6 * (1.0 + np.abs(exact)))


@pytest.mark.parametrize("family", ALL_FAMILIES, ids=lambda f: f"{f.kind}{f.k or ''}")
def test_sampling_moments_match_mean_and_var(family):
    # Empirical mean and covariance of the reduced statistic over 1e6 draws
    # must sit within 5 estimated standard errors of mean_stat / var_stat.
    rng = child_rng(11_003, "test.families.sample", 0)
    n = 1_000_000
    for trial in range(3):
        eta = _random_eta(family, rng)
        w = fam.sample(family, eta, child_rng(11_003, "test.families.sample.draw", trial), n=n)
        T = np.atleast_2d(fam.reduced_stat(family, w))
        if T.shape[0] == 1 and family.dim_eta == 1:
            T = T.reshape(-1, 1)
        mu_hat = T.mean(axis=0)
        mu = np.atleast_1d(fam.mean_stat(family, eta))
        se_mu = T.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(mu_hat - mu) <= 5 * se_mu + 1e-12)

        resid = T - mu_hat
        cov_hat = resid.T @ resid / (n - 1)
        cov = np.atleast_2d(fam.var_stat(family, eta))
        prod = resid[:, :, None] * resid[:, None, :]
        se_cov = prod.std(axis=0, ddof=1) / np.sqrt(n)
        assert np.all(np.abs(cov_hat - cov) <= 5 * se_cov + 1e-12)


def test_log_partition_reference_values():
    assert fam.log_partition(fam.bernoulli(), 0.0) == pytest.approx(np.log(2.0), abs=1e-15)
    assert fam.log_partition(fam.poisson(), 0.0) == pytest.approx(1.0, abs=1e-15)
    assert fam.log_partition(fam.gaussian_known_var(), 2.0) == pytest.approx(2.0, abs=1e-15)


def test_categorical_one_hot_and_pinned_logit():
    c3 = fam.categorical(3)
    assert np.array_equal(fam.sufficient_stat(c3, 2), [0.0, 1.0, 0.0])
    assert np.array_equal(fam.sufficient_stat(c3, 3), [0.0, 0.0, 1.0])
    assert np.array_equal(fam.reduced_stat(c3, 3), [0.0, 0.0])
    assert c3.dim_T == 3 and c3.dim_eta == 2
    # eta = 0 gives the uniform distribution over the 3 classes.
    p = fam.class_probs(c3, np.zeros(2))
    assert np.allclose(p, 1.0 / 3.0, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=1, max_size=6))
def test_categorical_softmax_normalizes_and_matches_mean_stat(logits):
    family = fam.categorical(len(logits) + 1)
    eta = np.asarray(logits, dtype=float)
    p = fam.class_probs(family, eta)
    assert p.shape == (family.k,)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.allclose(p[: family.k - 1], fam.mean_stat(family, eta), atol=1e-12)


def test_domain_rejection_never_clamps():
    with pytest.raises(ParamDomainError):
        fam.log_partition(fam.gaussian_full(), np.array([0.5, 0.0]))
    with pytest.raises(ParamDomainError):
        fam.mean_stat(fam.gaussian_full(), np.array([0.5, 1.0]))
    with pytest.raises(ParamDomainError):
        fam.var_stat(fam.gamma_family(), np.array([-1.0, -1.0]))
    with pytest.raises(ParamDomainError):
        fam.log_partition(fam.gamma_family(), np.array([0.5, 0.0]))
    with pytest.raises(ParamDomainError):
        fam.log_partition(fam.bernoulli(), np.nan)
    with pytest.raises(ParamDomainError):
        fam.mean_stat(fam.categorical(3), np.zeros(3))


def test_support_rejection():
    with pytest.raises(SupportError):
        fam.sufficient_stat(fam.bernoulli(), 2.0)
    with pytest.raises(SupportError):
        fam.sufficient_stat(fam.categorical(3), 0.0)
    with pytest.raises(SupportError):
        fam.sufficient_stat(fam.poisson(), -1.0)
    with pytest.raises(SupportError):
        fam.sufficient_stat(fam.gamma_family(), 0.0)


def test_bernoulli_logit_cap_saturates_sampling():
    # A logit far above the cap behaves as "always 1": frequency at least
    # 1 - 1e-9 over 1e5 draws means every single draw is 1.
    rng = child_rng(11_004, "test.families.cap", 0)
    w = fam.sample(fam.bernoulli(), 50.0, rng, n=100_000)
    assert w.mean() >= 1.0 - 1e-9
    # The analytic operations are untouched by the cap.
    assert fam.mean_stat(fam.bernoulli(), 50.0) == pytest.approx(1.0, abs=1e-12)


def test_gaussian_known_var_matrix_form_moments():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    family = fam.gaussian_known_var(cov=cov)
    mu = np.array([0.7, -0.3])
    # T = cov^{-1} W, so E[T] = cov^{-1} mu and Var(T) = cov^{-1}.
    assert np.allclose(fam.mean_stat(family, mu), np.linalg.solve(cov, mu), atol=1e-12)
    assert np.allclose(fam.var_stat(family, mu), np.linalg.inv(cov), atol=1e-12)
    w = fam.sample(family, mu, child_rng(11_005, "test.families.gkv", 0), n=200_000)
    assert np.allclose(w.mean(axis=0), mu, atol=0.02)
    assert np.allclose(np.cov(w.T), cov, atol=0.03)


def test_batched_etas_draw_one_value_per_row():
    family = fam.gaussian_full()
    etas = np.array([[1.0, -0.5], [0.0, -2.0], [-1.0, -1.0]])
    w = fam.sample(family, etas, child_rng(11_006, "test.families.batch", 0))
    assert w.shape == (3,)
    h = fam.log_partition(family, etas)
    assert h.shape == (3,)
    V = fam.var_stat(family, etas)
    assert V.shape == (3, 2, 2)


def test_family_config_round_trip():
    for family in ALL_FAMILIES:
        assert fam.FamilySpec.from_config(family.to_config()) == family
