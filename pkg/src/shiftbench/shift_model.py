"""Structured models of shifted conditional mechanisms.

A ShiftModel is an ordered list of variables, each with an exponential-family
mechanism p(w | z) parameterized by a natural-parameter function eta(z), plus
an intervention set: for each intervened variable a shift function s(z; delta)
that perturbs the natural parameter to eta(z) + s(z; delta), with s(z; 0) = 0.

The global shift parameter delta concatenates one block per intervened
variable, blocks ordered by variable declaration order. Within a block,
per-stratum coordinates follow lexicographic parent-value order (value 0
before value 1, leftmost parent most significant).

The shifted joint keeps every non-intervened mechanism fixed, so the density
ratio against the observed joint telescopes across intervened variables:

    w_delta(v) = prod_i exp( s_i(z_i; delta)^T T_i(w_i)
                             + h(eta_i(z_i)) - h(eta_i(z_i) + s_i(z_i; delta)) ),

which this module evaluates exactly; at delta = 0 it is identically 1.

Built-in shift forms (all linear in delta, so the second derivative D2 of
s with respect to delta vanishes; it is still part of the jacobian contract):

    Constant              s(z; delta) = delta on chosen eta coordinates
    PerStratum            one additive coordinate per parent stratum
    LinearInZ             s_c(z; delta) = sum_k delta_k phi_k(z), declared features
    Multiplicative        s(z; delta) = delta * eta(z), scalar delta
    VarianceScaledMean    Gaussian only: shift the linear eta block, so the
                          conditional mean moves by Var(W|z) * delta while the
                          conditional variance is untouched
    DomainGuarded         wraps a form; the shift switches off wherever it
                          would push eta within `margin` of the domain edge
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import families as fam
from .errors import ConfigError, InfeasibleTargetError, ParamDomainError, ShiftDomainError
from .families import FamilySpec
from .tables import SampleTable

SCHEMA_VERSION = 1
DELTA_SOLVE_RANGE = 30.0

# ----------------------------------------------------------------------
# Natural-parameter functions


@dataclass(frozen=True)
class ConstantEta:
    """eta(z) = value for every z."""

    value: tuple[float, ...]


@dataclass(frozen=True)
class LinearEta:
    """eta(z) = intercept + coef @ z, with z the concatenated parent columns."""

    intercept: tuple[float, ...]
    coef: tuple[tuple[float, ...], ...]  # (dim_eta, n_parent_columns)


@dataclass(frozen=True)
class TabularEta:
    """One eta vector per parent stratum, lexicographic stratum order."""

    table: tuple[tuple[float, ...], ...]  # (n_strata, dim_eta)


@dataclass(frozen=True)
class GatedEta:
    """Mechanism switched by a binary parent.

    When the gate parent is 1 the variable follows its family at
    active(remaining parents). When the gate is 0 it either follows
    `inactive` (a second eta function) or, if inactive is None, collapses to
    the point mass at `inactive_value`. Degenerate-gated variables cannot be
    intervened on and are excluded from enumeration.
    """

    gate: str
    active: "EtaFn"
    inactive: "EtaFn | None" = None
    inactive_value: float = 0.0


EtaFn = ConstantEta | LinearEta | TabularEta | GatedEta


# ----------------------------------------------------------------------
# Shift functions


@dataclass(frozen=True)
class ConstantShift:
    """s(z; delta) = delta, acting on the listed eta coordinates (all by default)."""

    coords: tuple[int, ...] | None = None


@dataclass(frozen=True)
class PerStratumShift:
    """One additive delta coordinate per parent stratum, on one eta coordinate."""

    coord: int = 0


@dataclass(frozen=True)
class LinearInZShift:
    """s_coord(z; delta) = sum_k delta_k phi_k(z).

    Features are "1" (intercept) or names of parent value columns.
    """

    features: tuple[str, ...]
    coord: int = 0


@dataclass(frozen=True)
class MultiplicativeShift:
    """s(z; delta) = delta * eta(z) with scalar delta."""


@dataclass(frozen=True)
class VarianceScaledMeanShift:
    """Shift the linear natural coordinate(s) of a Gaussian mechanism.

    For gaussian_full, s = (delta, 0) on (eta1, eta2): the conditional law
    moves from N(mu(z), s2(z)) to N(mu(z) + s2(z) delta, s2(z)). For
    gaussian_known_var every coordinate is a linear one, so this coincides
    with a Constant shift.
    """


@dataclass(frozen=True)
class DomainGuardedShift:
    """inner shift masked to zero wherever eta + s leaves the margin-shrunk
    domain; derivatives at delta = 0 equal the inner derivatives wherever
    eta itself is interior to the shrunk domain."""

    inner: "ShiftFn"
    margin: float = 1e-3


ShiftFn = (
    ConstantShift
    | PerStratumShift
    | LinearInZShift
    | MultiplicativeShift
    | VarianceScaledMeanShift
    | DomainGuardedShift
)


@dataclass(frozen=True)
class InterventionSpec:
    variable: str
    shift: ShiftFn


# ----------------------------------------------------------------------
# Variables and the model


@dataclass(frozen=True)
class VariableSpec:
    name: str
    family: FamilySpec
    parents: tuple[str, ...] = ()
    eta: EtaFn = ConstantEta((0.0,))

    @property
    def degenerate_gated(self) -> bool:
        return isinstance(self.eta, GatedEta) and self.eta.inactive is None


@dataclass
class ShiftModel:
    """Variables in ancestral declaration order plus the intervention set."""

    variables: tuple[VariableSpec, ...]
    interventions: tuple[InterventionSpec, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.variables = tuple(self.variables)
        self.interventions = tuple(self.interventions)
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ConfigError("variable names must be unique")
        seen: set[str] = set()
        for v in self.variables:
            for p in v.parents:
                if p not in seen:
                    raise ConfigError(
                        f"variable {v.name!r} lists parent {p!r} before it is declared; "
                        "declare variables in ancestral order"
                    )
            if isinstance(v.eta, GatedEta):
                if v.eta.gate not in v.parents:
                    raise ConfigError(f"gate {v.eta.gate!r} of {v.name!r} must be one of its parents")
                gate_var = next(u for u in self.variables if u.name == v.eta.gate)
                if gate_var.family.kind != "bernoulli_logit":
                    raise ConfigError(f"gate {v.eta.gate!r} of {v.name!r} must be binary")
            seen.add(v.name)
        self._by_name = {v.name: v for v in self.variables}
        for v in self.variables:
            if v.degenerate_gated and v.family.dim_value != 1:
                raise ConfigError(f"degenerate gating needs a scalar-valued variable, not {v.name!r}")
        ivars = [iv.variable for iv in self.interventions]
        if len(set(ivars)) != len(ivars):
            raise ConfigError("at most one intervention per variable")
        for iv in self.interventions:
            if iv.variable not in self._by_name:
                raise ConfigError(f"intervention targets unknown variable {iv.variable!r}")
            v = self._by_name[iv.variable]
            if v.degenerate_gated:
                raise ConfigError(
                    f"variable {iv.variable!r} is degenerate when its gate is 0 and cannot be intervened on"
                )
            self._validate_shift(v, iv.shift)
        # Canonical block order: intervened variables in declaration order.
        order = {name: i for i, name in enumerate(names)}
        self.interventions = tuple(sorted(self.interventions, key=lambda iv: order[iv.variable]))

    def _validate_shift(self, v: VariableSpec, shift: ShiftFn) -> None:
        d = v.family.dim_eta
        if isinstance(shift, ConstantShift):
            for c in shift.coords or ():
                if not 0 <= c < d:
                    raise ConfigError(f"shift coordinate {c} out of range for {v.name!r} (dim_eta={d})")
        elif isinstance(shift, (PerStratumShift, LinearInZShift)):
            if not 0 <= shift.coord < d:
                raise ConfigError(f"shift coordinate {shift.coord} out of range for {v.name!r} (dim_eta={d})")
            if isinstance(shift, PerStratumShift):
                self._stratum_info(v.parents)  # validates discreteness
            else:
                for f in shift.features:
                    if f != "1" and f not in self._parent_columns(v):
                        raise ConfigError(
                            f"shift feature {f!r} of {v.name!r} is not '1' or a parent column "
                            f"{self._parent_columns(v)}"
                        )
        elif isinstance(shift, VarianceScaledMeanShift):
            if v.family.kind not in ("gaussian_full", "gaussian_known_var"):
                raise ConfigError(f"variance-scaled mean shift needs a Gaussian family, {v.name!r} is {v.family.kind}")
        elif isinstance(shift, DomainGuardedShift):
            if isinstance(shift.inner, DomainGuardedShift):
                raise ConfigError("domain guards do not nest")
            self._validate_shift(v, shift.inner)

    # Lookup -----------------------------------------------------------

    def var(self, name: str) -> VariableSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise ConfigError(f"model has no variable {name!r}") from None

    def value_columns(self, name: str) -> list[str]:
        v = self.var(name)
        if v.family.dim_value == 1:
            return [name]
        return [f"{name}__{i}" for i in range(v.family.dim_value)]

    def _parent_columns(self, v: VariableSpec) -> list[str]:
        cols: list[str] = []
        for p in v.parents:
            cols.extend(self.value_columns(p))
        return cols

    @property
    def intervened(self) -> list[str]:
        return [iv.variable for iv in self.interventions]

    # Delta indexing ---------------------------------------------------

    def _stratum_info(self, parents: tuple[str, ...]) -> tuple[list[int], list[list[float]]]:
        """(cardinalities, value lists) for a discrete parent tuple."""
        cards: list[int] = []
        values: list[list[float]] = []
        for p in parents:
            pf = self.var(p).family
            if pf.n_categories is None:
                raise ConfigError(f"per-stratum structure needs discrete parents; {p!r} is {pf.kind}")
            cards.append(pf.n_categories)
            values.append(list(pf.support_values()))
        return cards, values

    def stratum_count(self, parents: tuple[str, ...]) -> int:
        cards, _ = self._stratum_info(parents)
        return int(np.prod(cards)) if cards else 1

    def stratum_index_rows(self, parents: tuple[str, ...], table: SampleTable) -> np.ndarray:
        """Lexicographic stratum index per row: leftmost parent most significant."""
        cards, values = self._stratum_info(parents)
        idx = np.zeros(table.n, dtype=int)
        for p, card, vals in zip(parents, cards, values):
            col = table.column(p)
            local = np.searchsorted(np.asarray(vals), col)
            if not np.all(np.asarray(vals)[np.clip(local, 0, card - 1)] == col):
                raise ConfigError(f"column {p!r} holds values outside the declared support {vals}")
            idx = idx * card + local
        return idx

    def stratum_labels(self, parents: tuple[str, ...]) -> list[str]:
        cards, values = self._stratum_info(parents)
        if not parents:
            return [""]
        labels = []
        for combo in itertools.product(*values):
            labels.append(", ".join(f"{p}={_fmt_value(v)}" for p, v in zip(parents, combo)))
        return labels

    def block_size(self, iv: InterventionSpec) -> int:
        v = self.var(iv.variable)
        return _block_size(self, v, iv.shift)

    @property
    def n_delta(self) -> int:
        return sum(self.block_size(iv) for iv in self.interventions)

    def delta_blocks(self) -> list[tuple[str, slice]]:
        """(variable name, slice into the global delta) per intervention."""
        out = []
        start = 0
        for iv in self.interventions:
            size = self.block_size(iv)
            out.append((iv.variable, slice(start, start + size)))
            start += size
        return out

    def delta_labels(self) -> list[str]:
        labels: list[str] = []
        for iv in self.interventions:
            v = self.var(iv.variable)
            labels.extend(_block_labels(self, v, iv.shift))
        return labels

    def block_slice(self, variable: str) -> slice:
        for name, sl in self.delta_blocks():
            if name == variable:
                return sl
        raise ConfigError(f"variable {variable!r} is not intervened on")

    def _delta_block(self, delta, variable: str) -> np.ndarray:
        delta = np.asarray(delta, dtype=float).reshape(-1)
        if delta.shape[0] != self.n_delta:
            raise ConfigError(f"delta has {delta.shape[0]} coordinates, model declares {self.n_delta}")
        return delta[self.block_slice(variable)]

    # Natural parameters ----------------------------------------------

    def eta_rows(self, name: str, table: SampleTable) -> tuple[np.ndarray, np.ndarray]:
        """(eta, active) per row; active is False on degenerate-gated rows."""
        v = self.var(name)
        eta, active = _eval_eta(self, v, v.eta, table)
        return eta, active

    def shift_rows(self, name: str, table: SampleTable, delta) -> np.ndarray:
        """s(z; delta) per row, shape (n, dim_eta)."""
        v = self.var(name)
        iv = next((iv for iv in self.interventions if iv.variable == name), None)
        if iv is None:
            raise ConfigError(f"variable {name!r} is not intervened on")
        block = self._delta_block(delta, name)
        return _eval_shift(self, v, iv.shift, table, block)

    def d1_rows(self, name: str, table: SampleTable) -> np.ndarray:
        """First delta-derivative of s at delta=0 per row: (n, dim_eta, block)."""
        v = self.var(name)
        iv = next((iv for iv in self.interventions if iv.variable == name), None)
        if iv is None:
            raise ConfigError(f"variable {name!r} is not intervened on")
        return _eval_d1(self, v, iv.shift, table)

    def d2_rows(self, name: str, table: SampleTable) -> np.ndarray | None:
        """Second delta-derivative of s at delta=0, or None when identically 0.

        Every built-in form is linear in delta, so this returns None; the
        hook exists so estimators implement the full curvature formula.
        """
        self.d1_rows(name, table)  # validates the intervention
        return None

    # Config round trip -----------------------------------------------

    def to_config(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "variables": [
                {
                    "name": v.name,
                    "family": v.family.to_config(),
                    "parents": list(v.parents),
                    "eta": _eta_to_config(v.eta),
                }
                for v in self.variables
            ],
            "interventions": [
                {"variable": iv.variable, "shift": _shift_to_config(iv.shift)}
                for iv in self.interventions
            ],
            "meta": dict(self.meta),
        }

    @staticmethod
    def from_config(cfg: dict) -> "ShiftModel":
        if not isinstance(cfg, dict):
            raise ConfigError("model config must be an object", pointer="")
        if "schema_version" not in cfg:
            raise ConfigError("model config lacks schema_version", pointer="/schema_version")
        if cfg["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(
                f"unsupported schema_version {cfg['schema_version']}", pointer="/schema_version"
            )
        variables = []
        for i, vc in enumerate(cfg.get("variables", [])):
            try:
                variables.append(
                    VariableSpec(
                        name=vc["name"],
                        family=FamilySpec.from_config(vc["family"]),
                        parents=tuple(vc.get("parents", [])),
                        eta=_eta_from_config(vc["eta"]),
                    )
                )
            except (KeyError, TypeError, ValueError, ParamDomainError, ConfigError) as err:
                raise ConfigError(f"bad variable config: {err}", pointer=f"/variables/{i}") from err
        interventions = []
        for i, ic in enumerate(cfg.get("interventions", [])):
            try:
                interventions.append(
                    InterventionSpec(variable=ic["variable"], shift=_shift_from_config(ic["shift"]))
                )
            except (KeyError, TypeError, ValueError, ConfigError) as err:
                raise ConfigError(f"bad intervention config: {err}", pointer=f"/interventions/{i}") from err
        return ShiftModel(tuple(variables), tuple(interventions), dict(cfg.get("meta", {})))


def _fmt_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:g}"


# ----------------------------------------------------------------------
# Eta evaluation


def _eval_eta(model: ShiftModel, v: VariableSpec, eta: EtaFn, table: SampleTable,
              parents: tuple[str, ...] | None = None) -> tuple[np.ndarray, np.ndarray]:
    parents = v.parents if parents is None else parents
    n = table.n
    d = v.family.dim_eta
    if isinstance(eta, ConstantEta):
        val = np.asarray(eta.value, dtype=float).reshape(-1)
        if val.shape[0] != d:
            raise ConfigError(f"{v.name!r}: constant eta has {val.shape[0]} coordinates, family needs {d}")
        return np.broadcast_to(val, (n, d)).copy(), np.ones(n, dtype=bool)
    if isinstance(eta, LinearEta):
        cols = []
        for p in parents:
            cols.extend(model.value_columns(p))
        Z = table.matrix(cols)
        intercept = np.asarray(eta.intercept, dtype=float).reshape(-1)
        coef = np.asarray(eta.coef, dtype=float)
        if coef.shape != (d, Z.shape[1]):
            raise ConfigError(
                f"{v.name!r}: linear eta coef has shape {coef.shape}, needs ({d}, {Z.shape[1]})"
            )
        return intercept + Z @ coef.T, np.ones(n, dtype=bool)
    if isinstance(eta, TabularEta):
        idx = model.stratum_index_rows(parents, table)
        tab = np.asarray(eta.table, dtype=float)
        n_strata = model.stratum_count(parents)
        if tab.shape != (n_strata, d):
            raise ConfigError(
                f"{v.name!r}: tabular eta has shape {tab.shape}, needs ({n_strata}, {d})"
            )
        return tab[idx], np.ones(n, dtype=bool)
    if isinstance(eta, GatedEta):
        gate = table.column(eta.gate)
        rest = tuple(p for p in parents if p != eta.gate)
        act_eta, _ = _eval_eta(model, v, eta.active, table, parents=rest)
        if eta.inactive is None:
            return act_eta, gate == 1.0
        inact_eta, _ = _eval_eta(model, v, eta.inactive, table, parents=rest)
        out = np.where((gate == 1.0)[:, None], act_eta, inact_eta)
        return out, np.ones(n, dtype=bool)
    raise ConfigError(f"unknown eta form {type(eta).__name__}")


# ----------------------------------------------------------------------
# Shift evaluation: values, sizes, labels, derivatives


def _block_size(model: ShiftModel, v: VariableSpec, shift: ShiftFn) -> int:
    d = v.family.dim_eta
    if isinstance(shift, ConstantShift):
        return len(shift.coords) if shift.coords is not None else d
    if isinstance(shift, PerStratumShift):
        return model.stratum_count(v.parents)
    if isinstance(shift, LinearInZShift):
        return len(shift.features)
    if isinstance(shift, MultiplicativeShift):
        return 1
    if isinstance(shift, VarianceScaledMeanShift):
        return 1 if v.family.kind == "gaussian_full" else d
    if isinstance(shift, DomainGuardedShift):
        return _block_size(model, v, shift.inner)
    raise ConfigError(f"unknown shift form {type(shift).__name__}")


def _block_labels(model: ShiftModel, v: VariableSpec, shift: ShiftFn) -> list[str]:
    d = v.family.dim_eta
    if isinstance(shift, ConstantShift):
        coords = shift.coords if shift.coords is not None else tuple(range(d))
        if coords == (0,) or d == 1 and len(coords) == 1:
            return [v.name]
        return [f"{v.name}[{c}]" for c in coords]
    if isinstance(shift, PerStratumShift):
        if not v.parents:
            return [v.name]
        return [f"{v.name} | {lab}" for lab in model.stratum_labels(v.parents)]
    if isinstance(shift, LinearInZShift):
        return [f"{v.name} ~ {f}" for f in shift.features]
    if isinstance(shift, MultiplicativeShift):
        return [f"{v.name} ~ eta"]
    if isinstance(shift, VarianceScaledMeanShift):
        if v.family.kind == "gaussian_full" or d == 1:
            return [f"{v.name} ~ mean"]
        return [f"{v.name} ~ mean[{i}]" for i in range(d)]
    if isinstance(shift, DomainGuardedShift):
        return _block_labels(model, v, shift.inner)
    raise ConfigError(f"unknown shift form {type(shift).__name__}")


def _eval_shift(model: ShiftModel, v: VariableSpec, shift: ShiftFn, table: SampleTable,
                block: np.ndarray) -> np.ndarray:
    if isinstance(shift, DomainGuardedShift):
        s = _eval_shift(model, v, shift.inner, table, block)
        eta, _ = model.eta_rows(v.name, table)
        ok = _in_shrunk_domain(v.family, eta + s, shift.margin)
        return np.where(ok[:, None], s, 0.0)
    D1 = _eval_d1_form(model, v, shift, table)
    # All built-in forms are linear in delta.
    return np.einsum("ndk,k->nd", D1, block)


def _eval_d1(model: ShiftModel, v: VariableSpec, shift: ShiftFn, table: SampleTable) -> np.ndarray:
    if isinstance(shift, DomainGuardedShift):
        D1 = _eval_d1_form(model, v, shift.inner, table)
        eta, _ = model.eta_rows(v.name, table)
        ok = _in_shrunk_domain(v.family, eta, shift.margin)
        return np.where(ok[:, None, None], D1, 0.0)
    return _eval_d1_form(model, v, shift, table)


def _eval_d1_form(model: ShiftModel, v: VariableSpec, shift: ShiftFn, table: SampleTable) -> np.ndarray:
    n = table.n
    d = v.family.dim_eta
    if isinstance(shift, ConstantShift):
        coords = shift.coords if shift.coords is not None else tuple(range(d))
        D1 = np.zeros((n, d, len(coords)))
        for k, c in enumerate(coords):
            D1[:, c, k] = 1.0
        return D1
    if isinstance(shift, PerStratumShift):
        m = model.stratum_count(v.parents)
        idx = (
            model.stratum_index_rows(v.parents, table)
            if v.parents
            else np.zeros(n, dtype=int)
        )
        D1 = np.zeros((n, d, m))
        D1[np.arange(n), shift.coord, idx] = 1.0
        return D1
    if isinstance(shift, LinearInZShift):
        D1 = np.zeros((n, d, len(shift.features)))
        for k, f in enumerate(shift.features):
            D1[:, shift.coord, k] = 1.0 if f == "1" else table.column(f)
        return D1
    if isinstance(shift, MultiplicativeShift):
        eta, _ = model.eta_rows(v.name, table)
        return eta[:, :, None]
    if isinstance(shift, VarianceScaledMeanShift):
        if v.family.kind == "gaussian_full":
            D1 = np.zeros((n, d, 1))
            D1[:, 0, 0] = 1.0
            return D1
        D1 = np.zeros((n, d, d))
        D1[:, np.arange(d), np.arange(d)] = 1.0
        return D1
    raise ConfigError(f"unknown shift form {type(shift).__name__}")


def _in_shrunk_domain(family: FamilySpec, eta: np.ndarray, margin: float) -> np.ndarray:
    """Rows where eta sits at least `margin` inside the open domain."""
    ok = np.all(np.isfinite(eta), axis=1)
    if family.kind == "gaussian_full":
        ok &= eta[:, 1] <= -margin
    elif family.kind == "gamma":
        ok &= (eta[:, 0] >= -1.0 + margin) & (eta[:, 1] <= -margin)
    return ok


# ----------------------------------------------------------------------
# Public operations


def shifted_eta_rows(model: ShiftModel, name: str, table: SampleTable, delta) -> np.ndarray:
    """eta(z) + s(z; delta) per row, validated against the family domain."""
    eta, _ = model.eta_rows(name, table)
    eta = eta + model.shift_rows(name, table, delta)
    _validate_rows(model.var(name), eta)
    return eta


def _validate_rows(v: VariableSpec, eta: np.ndarray) -> None:
    try:
        fam.validate_eta(v.family, eta)
    except ParamDomainError as err:
        raise ShiftDomainError(
            f"shifted natural parameter of {v.name!r} left the domain: {err}", variable=v.name
        ) from None


def apply_shift(model: ShiftModel, name: str, z: dict, delta) -> np.ndarray:
    """eta(z) + s(z; delta) for a single parent assignment z (a name->value map)."""
    table = _z_table(model, name, z)
    return shifted_eta_rows(model, name, table, delta)[0]


def shift_jacobians(model: ShiftModel, name: str, z: dict) -> tuple[np.ndarray, np.ndarray]:
    """(D1, D2) of s(z; delta) at delta = 0 for a single parent assignment.

    D1 has shape (dim_eta, block); D2 has shape (dim_eta, block, block) and
    is identically zero for the built-in (delta-linear) forms.
    """
    table = _z_table(model, name, z)
    D1 = model.d1_rows(name, table)[0]
    D2 = np.zeros((D1.shape[0], D1.shape[1], D1.shape[1]))
    return D1, D2


def _z_table(model: ShiftModel, name: str, z: dict) -> SampleTable:
    v = model.var(name)
    cols: dict[str, np.ndarray] = {}
    for p in v.parents:
        for c in model.value_columns(p):
            if c not in z and p in z and len(model.value_columns(p)) == 1:
                cols[c] = np.array([float(z[p])])
            elif c in z:
                cols[c] = np.array([float(z[c])])
            else:
                raise ConfigError(f"z lacks parent value {c!r} needed by {name!r}")
    return SampleTable(cols) if cols else SampleTable({"__row": np.zeros(1)})


def density_ratio(model: ShiftModel, delta, table: SampleTable) -> np.ndarray:
    """w_delta per row: the shifted-to-observed likelihood ratio.

    Telescopes over intervened variables only; exactly 1 when delta = 0.
    """
    delta = np.asarray(delta, dtype=float).reshape(-1)
    log_w = np.zeros(table.n)
    for iv in model.interventions:
        v = model.var(iv.variable)
        eta, active = model.eta_rows(iv.variable, table)
        s = model.shift_rows(iv.variable, table, delta)
        if not np.all(active):
            raise ConfigError(f"density ratio undefined on degenerate rows of {iv.variable!r}")
        if not np.any(s):
            continue
        shifted = eta + s
        _validate_rows(v, shifted)
        w_cols = table.matrix(model.value_columns(iv.variable))
        T = np.asarray(fam.reduced_stat(v.family, w_cols if v.family.dim_value > 1 else w_cols[:, 0]))
        if T.ndim == 1:
            T = T.reshape(-1, 1)
        log_w += np.einsum("nd,nd->n", s, T)
        log_w += np.asarray(fam.log_partition(v.family, eta)).reshape(-1)
        log_w -= np.asarray(fam.log_partition(v.family, shifted)).reshape(-1)
    return np.exp(log_w)


def sample_joint(model: ShiftModel, delta, n: int, rng: np.random.Generator) -> SampleTable:
    """Ancestral draws from the shifted joint (delta = 0 gives the base joint)."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    table = SampleTable({})
    cols: dict[str, np.ndarray] = {}
    for v in model.variables:
        table = SampleTable(cols) if cols else SampleTable({"__seed_row": np.zeros(n)})
        eta, active = model.eta_rows(v.name, table)
        if v.name in model.intervened:
            eta = eta + model.shift_rows(v.name, table, delta)
            _validate_rows(v, eta)
        if np.all(active):
            draws = fam.sample(v.family, eta, rng)
        else:
            # Active rows draw from the family; inactive rows take the
            # declared point-mass value exactly.
            draws = np.full(n, float(v.eta.inactive_value))
            idx = np.flatnonzero(active)
            if idx.size:
                draws[idx] = fam.sample(v.family, eta[idx], rng)
        if v.family.dim_value == 1:
            cols[v.name] = np.asarray(draws, dtype=float).reshape(-1)
        else:
            arr = np.asarray(draws, dtype=float)
            for i, c in enumerate(model.value_columns(v.name)):
                cols[c] = arr[:, i]
    return SampleTable(cols)


def solve_delta_for_marginal(
    model: ShiftModel,
    name: str,
    target: float,
    z_sample: SampleTable | None = None,
) -> float:
    """The Constant-shift delta that moves a binary variable's marginal rate
    to `target`, averaging over the parent strata of z_sample.

    The attainable range is the open interval between the rates at the ends
    of the search box [-30, 30] (the saturation cap); a target outside it
    raises InfeasibleTargetError carrying that range. The marginal
    p_delta = E_z sigmoid(eta(z) + delta) is strictly increasing in delta,
    so simple bisection converges; the bracket is driven below 1e-12 so the
    returned delta carries about nine significant digits.
    """
    v = model.var(name)
    if v.family.kind != "bernoulli_logit":
        raise ConfigError(f"marginal solving needs a binary variable, {name!r} is {v.family.kind}")
    iv = next((iv for iv in model.interventions if iv.variable == name), None)
    if iv is None or not isinstance(iv.shift, ConstantShift):
        raise ConfigError(f"marginal solving needs a Constant shift declared on {name!r}")
    if z_sample is None:
        if v.parents:
            raise ConfigError(f"{name!r} has parents {v.parents}; pass a z_sample table")
        z_sample = SampleTable({"__row": np.zeros(1)})
    eta, active = model.eta_rows(name, z_sample)
    if not np.all(active):
        raise ConfigError(f"z_sample hits degenerate rows of {name!r}")
    logits = eta[:, 0]

    def marginal(delta: float) -> float:
        return float(np.mean(expit(logits + delta)))

    lo, hi = -DELTA_SOLVE_RANGE, DELTA_SOLVE_RANGE
    p_lo, p_hi = marginal(lo), marginal(hi)
    if not (p_lo < target < p_hi):
        raise InfeasibleTargetError(
            f"target marginal {target} for {name!r} is outside the attainable range "
            f"({p_lo:.3g}, {p_hi:.3g})",
            attainable=(p_lo, p_hi),
        )
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if marginal(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ----------------------------------------------------------------------
# Config serialization helpers


def _eta_to_config(eta: EtaFn) -> dict:
    if isinstance(eta, ConstantEta):
        return {"form": "constant", "value": list(eta.value)}
    if isinstance(eta, LinearEta):
        return {"form": "linear", "intercept": list(eta.intercept), "coef": [list(r) for r in eta.coef]}
    if isinstance(eta, TabularEta):
        return {"form": "tabular", "table": [list(r) for r in eta.table]}
    if isinstance(eta, GatedEta):
        cfg = {"form": "gated", "gate": eta.gate, "active": _eta_to_config(eta.active)}
        if eta.inactive is None:
            cfg["inactive_value"] = eta.inactive_value
        else:
            cfg["inactive"] = _eta_to_config(eta.inactive)
        return cfg
    raise ConfigError(f"unknown eta form {type(eta).__name__}")


def _eta_from_config(cfg: dict) -> EtaFn:
    form = cfg["form"]
    if form == "constant":
        return ConstantEta(tuple(float(x) for x in cfg["value"]))
    if form == "linear":
        return LinearEta(
            tuple(float(x) for x in cfg["intercept"]),
            tuple(tuple(float(x) for x in row) for row in cfg["coef"]),
        )
    if form == "tabular":
        return TabularEta(tuple(tuple(float(x) for x in row) for row in cfg["table"]))
    if form == "gated":
        return GatedEta(
            gate=cfg["gate"],
            active=_eta_from_config(cfg["active"]),
            inactive=_eta_from_config(cfg["inactive"]) if "inactive" in cfg else None,
            inactive_value=float(cfg.get("inactive_value", 0.0)),
        )
    raise ConfigError(f"unknown eta form {form!r}")


def _shift_to_config(shift: ShiftFn) -> dict:
    if isinstance(shift, ConstantShift):
        cfg: dict = {"form": "constant"}
        if shift.coords is not None:
            cfg["coords"] = list(shift.coords)
        return cfg
    if isinstance(shift, PerStratumShift):
        return {"form": "per_stratum", "coord": shift.coord}
    if isinstance(shift, LinearInZShift):
        return {"form": "linear_in_z", "features": list(shift.features), "coord": shift.coord}
    if isinstance(shift, MultiplicativeShift):
        return {"form": "multiplicative"}
    if isinstance(shift, VarianceScaledMeanShift):
        return {"form": "variance_scaled_mean"}
    if isinstance(shift, DomainGuardedShift):
        return {"form": "domain_guarded", "inner": _shift_to_config(shift.inner), "margin": shift.margin}
    raise ConfigError(f"unknown shift form {type(shift).__name__}")


def _shift_from_config(cfg: dict) -> ShiftFn:
    form = cfg["form"]
    if form == "constant":
        coords = cfg.get("coords")
        return ConstantShift(tuple(int(c) for c in coords) if coords is not None else None)
    if form == "per_stratum":
        return PerStratumShift(int(cfg.get("coord", 0)))
    if form == "linear_in_z":
        return LinearInZShift(tuple(cfg["features"]), int(cfg.get("coord", 0)))
    if form == "multiplicative":
        return MultiplicativeShift()
    if form == "variance_scaled_mean":
        return VarianceScaledMeanShift()
    if form == "domain_guarded":
        return DomainGuardedShift(_shift_from_config(cfg["inner"]), float(cfg.get("margin", 1e-3)))
    raise ConfigError(f"unknown shift form {form!r}")
