"""Conditional exponential-family mechanisms.

Each variable W given its parents Z follows a density of the form

    p(w | z) = g(w) exp( eta(z)^T T(w) - h(eta(z)) ),

with natural parameter eta, sufficient statistic T, and log partition h.
This module implements the family catalog: the statistic T, the log
partition h and its first two derivatives

    mean_stat(eta) = grad h(eta)   = E[T | z],
    var_stat(eta)  = hess h(eta)   = Var(T | z),

and exact sampling. All functions are pure and accept either a single eta
vector or a batch of rows (n, dim_eta).

Catalog
-------
bernoulli_logit     W in {0,1};       T = W,            p = sigmoid(eta)
categorical (k)     W in {1,...,k};   T = one-hot(W),   softmax logits with
                                      the last class's logit pinned to 0, so
                                      the free parameter (and any shift of
                                      it) lives in R^(k-1)
gaussian_known_var  W in R^d. Scalar form (sigma): T = W/sigma, eta =
                    mu/sigma. Matrix form (cov): T = cov^{-1} W, eta = mu.
                    Both describe N(mu, cov) with the covariance fixed.
gaussian_full       W in R;  T = (W, W^2), eta = (mu/s2, -1/(2 s2)), s2 > 0
poisson             W in Z>=0;  T = W,  rate = exp(eta)
gamma               W > 0; T = (log W, W), shape = eta1 + 1 > 0,
                    rate = -eta2 > 0

Parameters outside the open domain are rejected, never clamped. The one
deliberate exception: Bernoulli sampling saturates the logit at |eta| <= 30
(sigmoid is 1 to within 1e-13 there), so that limit mechanisms "always on"
can be represented by large finite logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln, logsumexp, polygamma

from .errors import ParamDomainError, SupportError

KINDS = (
    "bernoulli_logit",
    "categorical",
    "gaussian_known_var",
    "gaussian_full",
    "poisson",
    "gamma",
)

#: Logit magnitude beyond which Bernoulli sampling saturates.
BERNOULLI_LOGIT_CAP = 30.0


@dataclass(frozen=True)
class FamilySpec:
    """Declaration of one exponential-family mechanism.

    kind   one of KINDS
    k      number of classes (categorical only)
    sigma  known standard deviation (gaussian_known_var, scalar form)
    cov    known covariance as nested tuples (gaussian_known_var, matrix form)
    """

    kind: str
    k: int | None = None
    sigma: float | None = None
    cov: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParamDomainError(f"unknown family kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "categorical":
            if self.k is None or self.k < 2:
                raise ParamDomainError("categorical needs k >= 2 classes")
        if self.kind == "gaussian_known_var":
            if self.cov is not None:
                c = np.asarray(self.cov, dtype=float)
                if c.ndim != 2 or c.shape[0] != c.shape[1]:
                    raise ParamDomainError("gaussian_known_var cov must be square")
                if not np.allclose(c, c.T, atol=1e-12):
                    raise ParamDomainError("gaussian_known_var cov must be symmetric")
                if np.any(np.linalg.eigvalsh(c) <= 0):
                    raise ParamDomainError("gaussian_known_var cov must be positive definite")
            else:
                s = 1.0 if self.sigma is None else float(self.sigma)
                if not (s > 0 and np.isfinite(s)):
                    raise ParamDomainError(f"gaussian_known_var sigma must be positive, got {self.sigma}")

    # Dimensions ---------------------------------------------------------

    @property
    def dim_eta(self) -> int:
        """Dimension of the free natural parameter (= shift dimension)."""
        if self.kind == "categorical":
            return self.k - 1
        if self.kind in ("gaussian_full", "gamma"):
            return 2
        if self.kind == "gaussian_known_var" and self.cov is not None:
            return len(self.cov)
        return 1

    @property
    def dim_T(self) -> int:
        """Dimension of the sufficient statistic T(w)."""
        if self.kind == "categorical":
            return self.k
        return self.dim_eta

    @property
    def dim_value(self) -> int:
        """Dimension of the value w itself (columns in a sample table)."""
        if self.kind == "gaussian_known_var" and self.cov is not None:
            return len(self.cov)
        return 1

    @property
    def discrete(self) -> bool:
        return self.kind in ("bernoulli_logit", "categorical")

    @property
    def n_categories(self) -> int | None:
        """Support size for discrete kinds (None for continuous/unbounded)."""
        if self.kind == "bernoulli_logit":
            return 2
        if self.kind == "categorical":
            return self.k
        return None

    def support_values(self) -> np.ndarray:
        """Enumerated support for finite-support kinds."""
        if self.kind == "bernoulli_logit":
            return np.array([0.0, 1.0])
        if self.kind == "categorical":
            return np.arange(1, self.k + 1, dtype=float)
        raise SupportError(f"{self.kind} has no finite support to enumerate")

    def _cov_matrix(self) -> np.ndarray:
        return np.asarray(self.cov, dtype=float)

    def to_config(self) -> dict:
        cfg: dict = {"kind": self.kind}
        if self.k is not None:
            cfg["k"] = self.k
        if self.sigma is not None:
            cfg["sigma"] = self.sigma
        if self.cov is not None:
            cfg["cov"] = [list(row) for row in self.cov]
        return cfg

    @staticmethod
    def from_config(cfg: dict) -> "FamilySpec":
        cov = cfg.get("cov")
        return FamilySpec(
            kind=cfg["kind"],
            k=cfg.get("k"),
            sigma=cfg.get("sigma"),
            cov=tuple(tuple(float(x) for x in row) for row in cov) if cov is not None else None,
        )


# Convenience constructors ----------------------------------------------


def bernoulli() -> FamilySpec:
    return FamilySpec("bernoulli_logit")


def categorical(k: int) -> FamilySpec:
    return FamilySpec("categorical", k=k)


def gaussian_known_var(sigma: float = 1.0, cov=None) -> FamilySpec:
    if cov is not None:
        cov = tuple(tuple(float(x) for x in row) for row in np.asarray(cov, dtype=float))
        return FamilySpec("gaussian_known_var", cov=cov)
    return FamilySpec("gaussian_known_var", sigma=float(sigma))


def gaussian_full() -> FamilySpec:
    return FamilySpec("gaussian_full")


def poisson() -> FamilySpec:
    return FamilySpec("poisson")


def gamma_family() -> FamilySpec:
    return FamilySpec("gamma")


# Shape handling --------------------------------------------------------


def _as_eta_rows(family: FamilySpec, eta) -> tuple[np.ndarray, bool]:
    """Return (eta as (m, dim_eta), batched flag)."""
    arr = np.asarray(eta, dtype=float)
    d = family.dim_eta
    if arr.ndim == 0:
        if d != 1:
            raise ParamDomainError(f"{family.kind} eta must have {d} coordinates, got a scalar")
        return arr.reshape(1, 1), False
    if arr.ndim == 1:
        if arr.shape[0] == d:
            # A length-d vector is one eta, even when d == 1.
            return arr.reshape(1, d), False
        if d == 1:
            # Any other length is a batch of scalar etas.
            return arr.reshape(-1, 1), True
        raise ParamDomainError(f"{family.kind} eta must have {d} coordinates, got {arr.shape[0]}")
    if arr.ndim == 2:
        if arr.shape[1] != d:
            raise ParamDomainError(f"{family.kind} eta rows must have {d} coordinates, got {arr.shape[1]}")
        return arr, True
    raise ParamDomainError(f"eta must be a vector or a batch of rows, got ndim={arr.ndim}")


def _as_value_rows(family: FamilySpec, w) -> tuple[np.ndarray, bool]:
    """Return (values as (m, dim_value), batched flag)."""
    arr = np.asarray(w, dtype=float)
    d = family.dim_value
    if arr.ndim == 0:
        if d != 1:
            raise SupportError(f"{family.kind} values have {d} coordinates, got a scalar")
        return arr.reshape(1, 1), False
    if arr.ndim == 1:
        if d == 1:
            # Scalar-valued kinds: a 1-D array is always a batch of values.
            return arr.reshape(-1, 1), True
        if arr.shape[0] != d:
            raise SupportError(f"{family.kind} values have {d} coordinates, got {arr.shape[0]}")
        return arr.reshape(1, d), False
    if arr.ndim == 2:
        if arr.shape[1] != d:
            raise SupportError(f"{family.kind} value rows have {d} coordinates, got {arr.shape[1]}")
        return arr, True
    raise SupportError(f"value must be a scalar/vector or a batch of rows, got ndim={arr.ndim}")


def validate_eta(family: FamilySpec, eta) -> None:
    """Raise ParamDomainError if eta is outside the family's open domain."""
    rows, _ = _as_eta_rows(family, eta)
    if not np.all(np.isfinite(rows)):
        bad = np.argwhere(~np.isfinite(rows))[0]
        raise ParamDomainError(f"{family.kind} eta must be finite; coordinate {bad[-1]} is {rows[tuple(bad)]}")
    if family.kind == "gaussian_full":
        if np.any(rows[:, 1] >= 0):
            v = rows[rows[:, 1] >= 0][0, 1]
            raise ParamDomainError(f"gaussian_full requires eta2 < 0, got eta2 = {v}")
    elif family.kind == "gamma":
        if np.any(rows[:, 0] <= -1):
            v = rows[rows[:, 0] <= -1][0, 0]
            raise ParamDomainError(f"gamma requires eta1 > -1, got eta1 = {v}")
        if np.any(rows[:, 1] >= 0):
            v = rows[rows[:, 1] >= 0][0, 1]
            raise ParamDomainError(f"gamma requires eta2 < 0, got eta2 = {v}")


def _check_support(family: FamilySpec, vals: np.ndarray) -> None:
    kind = family.kind
    if kind == "bernoulli_logit":
        if not np.all(np.isin(vals, (0.0, 1.0))):
            bad = vals[~np.isin(vals, (0.0, 1.0))][0]
            raise SupportError(f"bernoulli_logit value must be 0 or 1, got {bad}")
    elif kind == "categorical":
        ok = (vals == np.round(vals)) & (vals >= 1) & (vals <= family.k)
        if not np.all(ok):
            raise SupportError(f"categorical value must be an integer in 1..{family.k}, got {vals[~ok][0]}")
    elif kind == "poisson":
        ok = (vals == np.round(vals)) & (vals >= 0)
        if not np.all(ok):
            raise SupportError(f"poisson value must be a nonnegative integer, got {vals[~ok][0]}")
    elif kind == "gamma":
        if not np.all(vals > 0):
            raise SupportError(f"gamma value must be positive, got {vals[vals <= 0][0]}")
    if not np.all(np.isfinite(vals)):
        raise SupportError(f"{kind} value must be finite")


# Core operations -------------------------------------------------------


def sufficient_stat(family: FamilySpec, w) -> np.ndarray:
    """T(w), full form: for categorical this is the length-k one-hot.

    Estimation code paths should use reduced_stat, which matches dim_eta.
    """
    vals, batched = _as_value_rows(family, w)
    _check_support(family, vals)
    kind = family.kind
    if kind == "categorical":
        out = np.zeros((vals.shape[0], family.k))
        out[np.arange(vals.shape[0]), vals[:, 0].astype(int) - 1] = 1.0
    elif kind == "bernoulli_logit" or kind == "poisson":
        out = vals.copy()
    elif kind == "gaussian_known_var":
        if family.cov is not None:
            out = np.linalg.solve(family._cov_matrix(), vals.T).T
        else:
            out = vals / (family.sigma if family.sigma is not None else 1.0)
    elif kind == "gaussian_full":
        out = np.column_stack([vals[:, 0], vals[:, 0] ** 2])
    elif kind == "gamma":
        out = np.column_stack([np.log(vals[:, 0]), vals[:, 0]])
    else:  # pragma: no cover
        raise ParamDomainError(f"unknown kind {kind}")
    return out if batched else out[0]


def reduced_stat(family: FamilySpec, w) -> np.ndarray:
    """T(w) in the coordinates paired with the free natural parameter.

    Identical to sufficient_stat except for categorical, where the pinned
    last class drops out and the statistic is the length-(k-1) one-hot.
    """
    full = sufficient_stat(family, w)
    if family.kind == "categorical":
        return full[..., : family.k - 1]
    return full


def log_partition(family: FamilySpec, eta) -> np.ndarray | float:
    """h(eta) = log integral g(w) exp(eta^T T(w)) dw, exactly normalized."""
    validate_eta(family, eta)
    rows, batched = _as_eta_rows(family, eta)
    kind = family.kind
    if kind == "bernoulli_logit":
        out = np.logaddexp(0.0, rows[:, 0])
    elif kind == "categorical":
        padded = np.concatenate([rows, np.zeros((rows.shape[0], 1))], axis=1)
        out = logsumexp(padded, axis=1)
    elif kind == "poisson":
        out = np.exp(rows[:, 0])
    elif kind == "gaussian_known_var":
        if family.cov is not None:
            cov = family._cov_matrix()
            out = 0.5 * np.einsum("ni,ij,nj->n", rows, np.linalg.inv(cov), rows)
        else:
            out = 0.5 * rows[:, 0] ** 2
    elif kind == "gaussian_full":
        e1, e2 = rows[:, 0], rows[:, 1]
        out = -(e1**2) / (4.0 * e2) + 0.5 * np.log(np.pi / (-e2))
    elif kind == "gamma":
        e1, e2 = rows[:, 0], rows[:, 1]
        out = gammaln(e1 + 1.0) - (e1 + 1.0) * np.log(-e2)
    else:  # pragma: no cover
        raise ParamDomainError(f"unknown kind {kind}")
    return out if batched else float(out[0])


def mean_stat(family: FamilySpec, eta) -> np.ndarray:
    """grad h(eta) = E[T(W)] in reduced coordinates."""
    validate_eta(family, eta)
    rows, batched = _as_eta_rows(family, eta)
    kind = family.kind
    if kind == "bernoulli_logit":
        out = expit(rows)
    elif kind == "categorical":
        out = _class_prob_rows(family, rows)[:, : family.k - 1]
    elif kind == "poisson":
        out = np.exp(rows)
    elif kind == "gaussian_known_var":
        if family.cov is not None:
            out = np.linalg.solve(family._cov_matrix(), rows.T).T
        else:
            out = rows.copy()
    elif kind == "gaussian_full":
        mu, s2 = _gaussian_full_moments(rows)
        out = np.column_stack([mu, mu**2 + s2])
    elif kind == "gamma":
        alpha, beta = rows[:, 0] + 1.0, -rows[:, 1]
        out = np.column_stack([digamma(alpha) - np.log(beta), alpha / beta])
    else:  # pragma: no cover
        raise ParamDomainError(f"unknown kind {kind}")
    return out if batched else out[0]


def var_stat(family: FamilySpec, eta) -> np.ndarray:
    """hess h(eta) = Var(T(W)) in reduced coordinates.

    Shape (dim_eta, dim_eta) for a single eta, (n, dim_eta, dim_eta) batched.
    """
    validate_eta(family, eta)
    rows, batched = _as_eta_rows(family, eta)
    n, d = rows.shape
    kind = family.kind
    if kind == "bernoulli_logit":
        p = expit(rows[:, 0])
        out = (p * (1.0 - p)).reshape(n, 1, 1)
    elif kind == "categorical":
        p = _class_prob_rows(family, rows)[:, : family.k - 1]
        out = -np.einsum("ni,nj->nij", p, p)
        idx = np.arange(d)
        out[:, idx, idx] += p
    elif kind == "poisson":
        out = np.exp(rows[:, 0]).reshape(n, 1, 1)
    elif kind == "gaussian_known_var":
        if family.cov is not None:
            prec = np.linalg.inv(family._cov_matrix())
            prec = 0.5 * (prec + prec.T)
            out = np.broadcast_to(prec, (n, d, d)).copy()
        else:
            out = np.broadcast_to(np.eye(1), (n, 1, 1)).copy()
    elif kind == "gaussian_full":
        mu, s2 = _gaussian_full_moments(rows)
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = s2
        out[:, 0, 1] = out[:, 1, 0] = 2.0 * mu * s2
        out[:, 1, 1] = 4.0 * mu**2 * s2 + 2.0 * s2**2
    elif kind == "gamma":
        alpha, beta = rows[:, 0] + 1.0, -rows[:, 1]
        out = np.empty((n, 2, 2))
        out[:, 0, 0] = polygamma(1, alpha)
        out[:, 0, 1] = out[:, 1, 0] = 1.0 / beta
        out[:, 1, 1] = alpha / beta**2
    else:  # pragma: no cover
        raise ParamDomainError(f"unknown kind {kind}")
    return out if batched else out[0]


def class_probs(family: FamilySpec, eta) -> np.ndarray:
    """Full class-probability vector(s) for discrete kinds.

    Bernoulli returns (p0, p1); categorical returns the length-k softmax of
    (eta, 0). Sums to 1 exactly up to float rounding.
    """
    rows, batched = _as_eta_rows(family, eta)
    if family.kind == "bernoulli_logit":
        p1 = expit(rows[:, 0])
        out = np.column_stack([1.0 - p1, p1])
    elif family.kind == "categorical":
        out = _class_prob_rows(family, rows)
    else:
        raise SupportError(f"class_probs is only defined for discrete kinds, not {family.kind}")
    return out if batched else out[0]


def _class_prob_rows(family: FamilySpec, rows: np.ndarray) -> np.ndarray:
    padded = np.concatenate([rows, np.zeros((rows.shape[0], 1))], axis=1)
    padded -= padded.max(axis=1, keepdims=True)
    ex = np.exp(padded)
    return ex / ex.sum(axis=1, keepdims=True)


def _gaussian_full_moments(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    e1, e2 = rows[:, 0], rows[:, 1]
    s2 = -1.0 / (2.0 * e2)
    mu = e1 * s2
    return mu, s2


def sample(family: FamilySpec, eta, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Exact draws from the mechanism.

    With a single eta and n given, returns n draws; with a batch of etas
    (one per row), returns one draw per row and n must be None. Values come
    back as (m,) for scalar kinds and (m, dim_value) for vector kinds.
    """
    validate_eta(family, eta)
    rows, batched = _as_eta_rows(family, eta)
    if batched:
        if n is not None and rows.shape[0] == 1:
            rows = np.repeat(rows, int(n), axis=0)
        elif n is not None and n != rows.shape[0]:
            raise ParamDomainError("with a batch of etas, n must be omitted (one draw per row)")
    else:
        rows = np.repeat(rows, 1 if n is None else int(n), axis=0)
    m = rows.shape[0]
    kind = family.kind
    if kind == "bernoulli_logit":
        p = expit(np.clip(rows[:, 0], -BERNOULLI_LOGIT_CAP, BERNOULLI_LOGIT_CAP))
        out = (rng.random(m) < p).astype(float)
    elif kind == "categorical":
        probs = _class_prob_rows(family, rows)
        cum = np.cumsum(probs, axis=1)
        u = rng.random((m, 1))
        out = (np.argmax(u <= cum, axis=1) + 1).astype(float)
    elif kind == "poisson":
        out = rng.poisson(np.exp(rows[:, 0])).astype(float)
    elif kind == "gaussian_known_var":
        if family.cov is not None:
            chol = np.linalg.cholesky(family._cov_matrix())
            z = rng.standard_normal((m, family.dim_value))
            out = rows + z @ chol.T
        else:
            s = family.sigma if family.sigma is not None else 1.0
            out = s * rows[:, 0] + s * rng.standard_normal(m)
    elif kind == "gaussian_full":
        mu, s2 = _gaussian_full_moments(rows)
        out = mu + np.sqrt(s2) * rng.standard_normal(m)
    elif kind == "gamma":
        alpha, beta = rows[:, 0] + 1.0, -rows[:, 1]
        out = rng.gamma(shape=alpha, scale=1.0 / beta)
    else:  # pragma: no cover
        raise ParamDomainError(f"unknown kind {kind}")
    if family.dim_value > 1:
        return out if (batched or n is not None) else out[0]
    out = np.asarray(out).reshape(-1)
    return out if (batched or n is not None) else float(out[0])


def pmf(family: FamilySpec, eta, values) -> np.ndarray:
    """Probability mass of each value for finite-support kinds.

    eta may be a single vector (broadcast over values) or one row per value.
    """
    if not family.discrete:
        raise SupportError(f"pmf needs a finite-support kind, not {family.kind}")
    vals, _ = _as_value_rows(family, values)
    rows, _ = _as_eta_rows(family, eta)
    if rows.shape[0] == 1 and vals.shape[0] > 1:
        rows = np.repeat(rows, vals.shape[0], axis=0)
    probs = class_probs(family, rows)
    if family.kind == "bernoulli_logit":
        idx = vals[:, 0].astype(int)
    else:
        idx = vals[:, 0].astype(int) - 1
    return probs[np.arange(vals.shape[0]), idx]
