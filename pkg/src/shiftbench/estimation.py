"""Loss-sensitivity estimation from a fixed sample.

Given a sample of the base joint with a per-row loss column, this module
estimates how the expected loss responds to the model's shift parameter
delta around 0:

    E_delta[loss] ~ base_loss + delta^T sg1 + (1/2) delta^T sg2 delta.

The gradient and Hessian blocks are expected conditional covariances. With
eps_T = T_i(W_i) - E[T_i | Z_i] and eps_l = loss - E[loss | Z_i], writing
D1_i, D2_i for the delta-derivatives of the shift s_i at 0:

    sg1_i      = E[ eps_l * D1_i^T eps_T ]
    sg2_{i,i}  = E[ eps_l * ( (D1_i^T eps_T)^{x2} - D2_i^T eps_T ) ]
    sg2_{i,j}  = E[ (loss - mean) (D1_i^T eps_i)(D1_j^T eps_j)^T ],  i != j

where the one-sided residualization E[cov(A,B|C)] = E[A (B - E[B|C])] lets a
single conditional-mean model per variable stand in for the full joint. The
off-diagonal blocks center the loss by its plain mean; the population value
is unchanged because E[D1^T eps_i eps_j^T D1] = 0 across distinct variables.

Conditional means come from auxiliary regressors: exact per-stratum averages
when the conditioning set is discrete, penalized polynomial least squares on
the statistic scale otherwise. Optional row weights make the same formulas
exact under enumeration (weights = joint probabilities), which is how the
test oracles drive them.

Also here: the importance-sampling estimator of E_delta[loss] reweighted by
the exact density ratio, and the curvature-difference error bound for the
Taylor surrogate under a pure location shift.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import families as fam
from .errors import ConfigError, EstimatorScopeError, StratumCoverageError
from .shift_model import ConstantShift, ShiftModel, sample_joint, shifted_eta_rows
from .shift_model import density_ratio as model_density_ratio
from .tables import SampleTable


@dataclass
class EstimationConfig:
    """Knobs for auxiliary fitting.

    poly_degree     polynomial degree for continuous conditioning sets (1-3)
    ridge_penalty   L2 penalty on non-intercept coefficients
    sample_splitting  fit auxiliaries on even rows, average residuals on odd
    """

    poly_degree: int = 2
    ridge_penalty: float = 1e-3
    sample_splitting: bool = False

    def __post_init__(self):
        if not 1 <= self.poly_degree <= 3:
            raise ConfigError(f"poly_degree must be 1..3, got {self.poly_degree}")
        if self.ridge_penalty < 0:
            raise ConfigError("ridge_penalty must be nonnegative")


@dataclass
class AuxiliaryFit:
    """Conditional-mean models for one intervened variable."""

    predict_stat: Callable[[SampleTable], np.ndarray]  # (n, dim_eta)
    predict_loss: Callable[[SampleTable], np.ndarray]  # (n,)
    model_class: str
    diagnostics: dict = field(default_factory=dict)


@dataclass
class AuxiliaryRegressors:
    """Per-variable auxiliary fits plus the config that produced them."""

    fits: dict[str, AuxiliaryFit]
    config: EstimationConfig

    def fit_for(self, name: str) -> AuxiliaryFit:
        if name not in self.fits:
            raise ConfigError(f"no auxiliary fit for variable {name!r}")
        return self.fits[name]


@dataclass
class CurvatureEstimate:
    """Sample estimate of (base loss, gradient, Hessian) in delta."""

    base_loss: float
    sg1: np.ndarray
    sg2: np.ndarray
    n: int
    labels: list[str]
    block_index: list[dict]
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_delta(self) -> int:
        return self.sg1.shape[0]

    def to_json(self) -> dict:
        return {
            "base_loss": self.base_loss,
            "sg1": self.sg1.tolist(),
            "sg2": self.sg2.reshape(-1).tolist(),  # row-major
            "n": self.n,
            "labels": list(self.labels),
            "block_index": list(self.block_index),
            "diagnostics": _jsonable(self.diagnostics),
        }

    @staticmethod
    def from_json(doc: dict) -> "CurvatureEstimate":
        d = len(doc["sg1"])
        return CurvatureEstimate(
            base_loss=float(doc["base_loss"]),
            sg1=np.asarray(doc["sg1"], dtype=float),
            sg2=np.asarray(doc["sg2"], dtype=float).reshape(d, d),
            n=int(doc["n"]),
            labels=list(doc.get("labels", [])),
            block_index=list(doc.get("block_index", [])),
            diagnostics=dict(doc.get("diagnostics", {})),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ----------------------------------------------------------------------
# Auxiliary regression


def fit_auxiliaries(
    model: ShiftModel,
    table: SampleTable,
    config: EstimationConfig | None = None,
    weights: np.ndarray | None = None,
) -> AuxiliaryRegressors:
    """Conditional-mean models E[T_i | Z_i] and E[loss | Z_i] per intervened
    variable.

    Discrete conditioning sets get exact (weighted) stratum averages; every
    stratum in the parent product must be populated, otherwise a
    StratumCoverageError names the missing one. Conditioning sets with any
    continuous parent get ridge polynomial least squares on the statistic
    scale (Bernoulli included: plain least squares on the 0/1 statistic,
    with clipping to [1e-6, 1-1e-6] applied only inside diagnostics).
    """
    config = config or EstimationConfig()
    p = _norm_weights(weights, table.n)
    loss = table.loss
    fits: dict[str, AuxiliaryFit] = {}
    for name in model.intervened:
        v = model.var(name)
        T = _reduced_stat_rows(model, name, table)
        if _discrete_parents(model, v.parents):
            fits[name] = _fit_stratum_means(model, v, table, T, loss, p)
        else:
            fits[name] = _fit_ridge_poly(model, v, table, T, loss, p, config)
    return AuxiliaryRegressors(fits=fits, config=config)


def _norm_weights(weights, n: int) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != n:
        raise ConfigError(f"weights have {w.shape[0]} rows, table has {n}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ConfigError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise ConfigError("weights must not all be zero")
    return w / total


def _reduced_stat_rows(model: ShiftModel, name: str, table: SampleTable) -> np.ndarray:
    v = model.var(name)
    cols = table.matrix(model.value_columns(name))
    T = np.asarray(fam.reduced_stat(v.family, cols if v.family.dim_value > 1 else cols[:, 0]))
    return T.reshape(table.n, -1)


def _discrete_parents(model: ShiftModel, parents: tuple[str, ...]) -> bool:
    return all(model.var(p).family.n_categories is not None for p in parents)


def _fit_stratum_means(model, v, table, T, loss, p) -> AuxiliaryFit:
    parents = v.parents
    n_strata = model.stratum_count(parents)
    idx = model.stratum_index_rows(parents, table) if parents else np.zeros(table.n, dtype=int)
    labels = model.stratum_labels(parents)
    mass = np.bincount(idx, weights=p, minlength=n_strata)
    empty = np.flatnonzero(mass <= 0)
    if empty.size:
        lab = labels[empty[0]] or "(unconditional)"
        raise StratumCoverageError(
            f"variable {v.name!r}: stratum [{lab}] has no samples; "
            f"cannot estimate its conditional means",
            variable=v.name,
            stratum=(int(empty[0]),),
        )
    stat_means = np.zeros((n_strata, T.shape[1]))
    for c in range(T.shape[1]):
        stat_means[:, c] = np.bincount(idx, weights=p * T[:, c], minlength=n_strata) / mass
    loss_means = np.bincount(idx, weights=p * loss, minlength=n_strata) / mass

    def predict_stat(t: SampleTable) -> np.ndarray:
        i = model.stratum_index_rows(parents, t) if parents else np.zeros(t.n, dtype=int)
        return stat_means[i]

    def predict_loss(t: SampleTable) -> np.ndarray:
        i = model.stratum_index_rows(parents, t) if parents else np.zeros(t.n, dtype=int)
        return loss_means[i]

    diag = {
        "r2_loss": _weighted_r2(loss, loss_means[idx], p),
        "r2_stat": [_weighted_r2(T[:, c], stat_means[idx, c], p) for c in range(T.shape[1])],
        "strata": int(n_strata),
    }
    return AuxiliaryFit(predict_stat, predict_loss, model_class="stratum_means", diagnostics=diag)


def _poly_terms(n_cols: int, degree: int) -> list[tuple[int, ...]]:
    terms: list[tuple[int, ...]] = []
    for deg in range(1, degree + 1):
        terms.extend(itertools.combinations_with_replacement(range(n_cols), deg))
    return terms


def _poly_features(Z: np.ndarray, degree: int) -> np.ndarray:
    terms = _poly_terms(Z.shape[1], degree)
    cols = [np.ones(Z.shape[0])]
    for term in terms:
        col = np.ones(Z.shape[0])
        for j in term:
            col = col * Z[:, j]
        cols.append(col)
    return np.column_stack(cols)


def _fit_ridge_poly(model, v, table, T, loss, p, config) -> AuxiliaryFit:
    parent_cols = model._parent_columns(v)
    Z = table.matrix(parent_cols)
    X = _poly_features(Z, config.poly_degree)
    # Weighted ridge with an unpenalized intercept.
    W = p[:, None]
    G = X.T @ (W * X)
    pen = config.ridge_penalty * np.eye(X.shape[1])
    pen[0, 0] = 0.0
    A = G + pen
    targets = np.column_stack([T, loss])
    B = X.T @ (W * targets)
    coef = np.linalg.solve(A, B)
    stat_coef, loss_coef = coef[:, : T.shape[1]], coef[:, -1]

    def predict_stat(t: SampleTable) -> np.ndarray:
        return _poly_features(t.matrix(parent_cols), config.poly_degree) @ stat_coef

    def predict_loss(t: SampleTable) -> np.ndarray:
        return _poly_features(t.matrix(parent_cols), config.poly_degree) @ loss_coef

    stat_hat = X @ stat_coef
    diag = {
        "r2_loss": _weighted_r2(loss, X @ loss_coef, p),
        "r2_stat": [_weighted_r2(T[:, c], stat_hat[:, c], p) for c in range(T.shape[1])],
        "features": X.shape[1],
    }
    if v.family.kind == "bernoulli_logit":
        clipped = np.clip(stat_hat[:, 0], 1e-6, 1.0 - 1e-6)
        diag["stat_pred_out_of_range"] = float(np.mean(clipped != stat_hat[:, 0]))
    return AuxiliaryFit(
        predict_stat, predict_loss, model_class=f"ridge_poly{config.poly_degree}", diagnostics=diag
    )


def _weighted_r2(y: np.ndarray, y_hat: np.ndarray, p: np.ndarray) -> float:
    mean = float(p @ y)
    ss_tot = float(p @ (y - mean) ** 2)
    ss_res = float(p @ (y - y_hat) ** 2)
    if ss_tot <= 0:
        return 1.0 if ss_res <= 1e-30 else 0.0
    return 1.0 - ss_res / ss_tot


def constant_auxiliaries(
    model: ShiftModel,
    stat_means: dict[str, np.ndarray],
    loss_means: dict[str, float],
) -> AuxiliaryRegressors:
    """Auxiliaries with known constant conditional means (population values).

    For mechanisms with no parents the conditional means are unconditional
    constants; passing the analytic values removes auxiliary-fitting noise
    from the curvature estimate entirely.
    """
    fits = {}
    for name in model.intervened:
        mu_T = np.asarray(stat_means[name], dtype=float).reshape(1, -1)
        mu_l = float(loss_means[name])
        fits[name] = AuxiliaryFit(
            predict_stat=lambda t, mu_T=mu_T: np.repeat(mu_T, t.n, axis=0),
            predict_loss=lambda t, mu_l=mu_l: np.full(t.n, mu_l),
            model_class="constant",
            diagnostics={},
        )
    return AuxiliaryRegressors(fits=fits, config=EstimationConfig())


def model_stat_auxiliaries(
    model: ShiftModel,
    loss_fns: dict[str, Callable[[SampleTable], np.ndarray]],
) -> AuxiliaryRegressors:
    """Auxiliaries that take E[T | Z] from the declared mechanism itself
    (mean_stat at eta(z)) and E[loss | Z] from caller-supplied functions."""
    fits = {}
    for name in model.intervened:
        v = model.var(name)

        def predict_stat(t: SampleTable, name=name, v=v) -> np.ndarray:
            eta, active = model.eta_rows(name, t)
            if not np.all(active):
                raise ConfigError(f"model-mean auxiliary hit degenerate rows of {name!r}")
            return np.asarray(fam.mean_stat(v.family, eta)).reshape(t.n, -1)

        fits[name] = AuxiliaryFit(
            predict_stat=predict_stat,
            predict_loss=loss_fns[name],
            model_class="model_mean",
            diagnostics={},
        )
    return AuxiliaryRegressors(fits=fits, config=EstimationConfig())


# ----------------------------------------------------------------------
# Curvature estimation


def estimate_curvature(
    model: ShiftModel,
    table: SampleTable,
    config: EstimationConfig | None = None,
    aux: AuxiliaryRegressors | None = None,
    weights: np.ndarray | None = None,
) -> CurvatureEstimate:
    """Sample gradient and Hessian of E_delta[loss] at delta = 0.

    With `aux` given, uses those conditional-mean models on the whole table.
    Otherwise fits auxiliaries first; under config.sample_splitting the fit
    uses even rows and the residual averages use odd rows.
    """
    config = config or EstimationConfig()
    if aux is not None:
        return _curvature_on(model, table, aux, weights)
    if config.sample_splitting:
        if weights is not None:
            raise ConfigError("sample splitting and explicit weights do not combine")
        even = np.arange(0, table.n, 2)
        odd = np.arange(1, table.n, 2)
        if even.size == 0 or odd.size == 0:
            raise ConfigError("sample splitting needs at least two rows")
        aux = fit_auxiliaries(model, table.take(even), config)
        return _curvature_on(model, table.take(odd), aux, None)
    aux = fit_auxiliaries(model, table, config, weights)
    return _curvature_on(model, table, aux, weights)


def _curvature_on(
    model: ShiftModel,
    table: SampleTable,
    aux: AuxiliaryRegressors,
    weights: np.ndarray | None,
) -> CurvatureEstimate:
    loss = table.loss
    p = _norm_weights(weights, table.n)
    uniform = weights is None
    base_loss = float(np.mean(loss)) if uniform else float(p @ loss)
    blocks = model.delta_blocks()
    d = model.n_delta
    sg1 = np.zeros(d)
    sg2 = np.zeros((d, d))
    resid: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for name, sl in blocks:
        fit = aux.fit_for(name)
        T = _reduced_stat_rows(model, name, table)
        eps_T = T - fit.predict_stat(table)
        D1 = model.d1_rows(name, table)
        r = np.einsum("ndk,nd->nk", D1, eps_T)
        eps_l = loss - fit.predict_loss(table)
        resid[name] = (r, eps_T)
        sg1[sl] = np.einsum("n,nk->k", p * eps_l, r)
        block = np.einsum("n,nk,nl->kl", p * eps_l, r, r)
        D2 = model.d2_rows(name, table)
        if D2 is not None:
            block -= np.einsum("n,ndkl,nd->kl", p * loss, D2, eps_T)
        sg2[sl, sl] = block
    centered = loss - base_loss
    for (name_i, sl_i), (name_j, sl_j) in itertools.combinations(blocks, 2):
        r_i, _ = resid[name_i]
        r_j, _ = resid[name_j]
        cross = np.einsum("n,nk,nl->kl", p * centered, r_i, r_j)
        sg2[sl_i, sl_j] = cross
        sg2[sl_j, sl_i] = cross.T
    asym = float(np.max(np.abs(sg2 - sg2.T))) if d else 0.0
    sg2 = 0.5 * (sg2 + sg2.T)
    return CurvatureEstimate(
        base_loss=base_loss,
        sg1=sg1,
        sg2=sg2,
        n=table.n,
        labels=model.delta_labels(),
        block_index=[
            {"variable": name, "start": sl.start, "stop": sl.stop} for name, sl in blocks
        ],
        diagnostics={
            "presym_asymmetry": asym,
            "aux": {name: aux.fit_for(name).diagnostics for name, _ in blocks},
            "aux_model_class": {name: aux.fit_for(name).model_class for name, _ in blocks},
        },
    )


def taylor_estimate(curv: CurvatureEstimate, delta) -> float:
    """Quadratic surrogate value at delta."""
    delta = _check_delta(curv.n_delta, delta)
    return float(curv.base_loss + delta @ curv.sg1 + 0.5 * delta @ curv.sg2 @ delta)


def _check_delta(d: int, delta) -> np.ndarray:
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.shape[0] != d:
        raise ConfigError(f"delta has {delta.shape[0]} coordinates, estimate declares {d}")
    return delta


def taylor_per_row(
    model: ShiftModel,
    table: SampleTable,
    aux: AuxiliaryRegressors,
    delta,
) -> np.ndarray:
    """Per-row contributions whose mean is the Taylor surrogate.

    Useful for a plug-in standard error of the surrogate at fixed delta:
    sd(rows)/sqrt(n).
    """
    delta = np.asarray(delta, dtype=float).reshape(-1)
    loss = table.loss
    out = loss.astype(float).copy()
    blocks = model.delta_blocks()
    rs: dict[str, np.ndarray] = {}
    for name, sl in blocks:
        fit = aux.fit_for(name)
        T = _reduced_stat_rows(model, name, table)
        eps_T = T - fit.predict_stat(table)
        D1 = model.d1_rows(name, table)
        r = np.einsum("ndk,nd->nk", D1, eps_T)
        eps_l = loss - fit.predict_loss(table)
        rs[name] = r
        g_rows = eps_l[:, None] * r
        out += g_rows @ delta[sl]
        quad = (r @ delta[sl]) ** 2
        out += 0.5 * eps_l * quad
    base = float(np.mean(loss))
    centered = loss - base
    for (name_i, sl_i), (name_j, sl_j) in itertools.combinations(blocks, 2):
        out += centered * (rs[name_i] @ delta[sl_i]) * (rs[name_j] @ delta[sl_j])
    return out


# ----------------------------------------------------------------------
# Importance sampling


@dataclass
class ISEstimate:
    mean: float
    se: float
    n: int
    max_weight: float
    clip_quantile: float | None = None


def is_estimate(
    model: ShiftModel,
    table: SampleTable,
    delta,
    clip_quantile: float | None = None,
) -> ISEstimate:
    """Importance-sampling estimate of E_delta[loss] with plug-in SE.

    Weights come from the declared mechanisms via the exact density ratio.
    With clip_quantile in (0, 1), weights are truncated at that empirical
    quantile before averaging (biased but variance-reduced).
    """
    w = model_density_ratio(model, delta, table)
    if clip_quantile is not None:
        if not 0.0 < clip_quantile < 1.0:
            raise ConfigError(f"clip_quantile must be in (0,1), got {clip_quantile}")
        w = np.minimum(w, np.quantile(w, clip_quantile))
    x = w * table.loss
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(table.n)) if table.n > 1 else float("inf")
    return ISEstimate(
        mean=mean, se=se, n=table.n, max_weight=float(w.max()), clip_quantile=clip_quantile
    )


# ----------------------------------------------------------------------
# Taylor error bound


@dataclass
class BoundResult:
    bound: float
    argmax_t: float
    delta_norm: float
    spectral_norms: list[float]
    t_grid: list[float]


def taylor_error_bound(
    model: ShiftModel,
    delta,
    loss_fn: Callable[[SampleTable], np.ndarray],
    n: int,
    rng: np.random.Generator,
    t_grid: int = 11,
) -> BoundResult:
    """Curvature-difference bound on the Taylor surrogate error.

    Scope: exactly one intervened variable whose shift is the plain Constant
    form on all coordinates (s(z; delta) = delta). Then with
    eps_t = T - E_t[T | Z] under the t-interpolated shift t*delta,

        |E_delta[loss] - surrogate(delta)|
            <= (1/2) sup_t sigma_max( M(t) - M(0) ) * |delta|^2,

    where M(t) = E_t[ cov(loss, eps_t eps_t^T | Z) ]. Each M(t) is estimated
    by Monte Carlo from n fresh draws of the t-shifted joint, using the
    model-known conditional moments:

        M_hat(t) = mean_j (loss_j - mean loss) (eps_j eps_j^T - Var(T | z_j)).

    At delta = 0 the bound is exactly 0 (no sampling happens).
    """
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if len(model.interventions) != 1:
        raise EstimatorScopeError(
            "the error bound covers a single intervened variable; "
            f"model intervenes on {model.intervened}"
        )
    iv = model.interventions[0]
    if not isinstance(iv.shift, ConstantShift) or iv.shift.coords is not None:
        raise EstimatorScopeError(
            "the error bound covers the plain Constant shift on all coordinates; "
            f"{iv.variable!r} declares {type(iv.shift).__name__}"
        )
    if delta.shape[0] != model.n_delta:
        raise ConfigError(f"delta has {delta.shape[0]} coordinates, model declares {model.n_delta}")
    norm = float(np.linalg.norm(delta))
    ts = np.linspace(0.0, 1.0, t_grid)
    if norm == 0.0:
        return BoundResult(0.0, 0.0, 0.0, [0.0] * t_grid, ts.tolist())
    name = iv.variable
    v = model.var(name)
    mats = []
    for t in ts:
        t_delta = t * delta
        draw = sample_joint(model, t_delta, n, rng)
        loss = np.asarray(loss_fn(draw), dtype=float)
        eta_t = shifted_eta_rows(model, name, draw, t_delta)
        T = _reduced_stat_rows(model, name, draw)
        eps = T - np.asarray(fam.mean_stat(v.family, eta_t)).reshape(draw.n, -1)
        V = np.asarray(fam.var_stat(v.family, eta_t)).reshape(draw.n, T.shape[1], T.shape[1])
        centered = loss - loss.mean()
        M = np.einsum("n,nkl->kl", centered, np.einsum("nk,nl->nkl", eps, eps) - V) / draw.n
        mats.append(0.5 * (M + M.T))
    diffs = [np.linalg.norm(M - mats[0], ord=2) for M in mats]
    k = int(np.argmax(diffs))
    bound = 0.5 * float(diffs[k]) * norm**2
    return BoundResult(
        bound=bound,
        argmax_t=float(ts[k]),
        delta_norm=norm,
        spectral_norms=[float(x) for x in diffs],
        t_grid=[float(t) for t in ts],
    )
