"""The six adaptive-evolution models and their tree simulators.

A simulation runs in three passes over the tree: predictors (BM or OU) at
every node, the optimum at every node from the regression map, then the
response conditioned on its parent along each branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from . import stochproc as sp
from .phylo import PhyloTree


class ModelKind(str, Enum):
    OUBM = "OUBM"
    OUOU = "OUOU"
    OUBMBM = "OUBMBM"
    OUOUBM = "OUOUBM"
    OUBMCIR = "OUBMCIR"
    OUOUCIR = "OUOUCIR"

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, ModelKind):
            return name
        try:
            return cls[str(name).upper()]
        except KeyError:
            raise ValueError(f"unknown model kind {name!r}") from None

    @property
    def predictor_kind(self) -> str:
        """Process followed by the predictors (and hence the optimum)."""
        return "OU" if self.value.startswith("OUOU") else "BM"

    @property
    def rate_kind(self) -> str:
        """``const``, ``BM`` or ``CIR`` for the response's rate of evolution."""
        if self.value.endswith("CIR"):
            return "CIR"
        if self in (ModelKind.OUBMBM, ModelKind.OUOUBM):
            return "BM"
        return "const"

    @property
    def active_params(self) -> tuple[str, ...]:
        """Model parameters (excluding regression coefficients) in table order."""
        names = ["alpha_y"]
        if self.predictor_kind == "OU":
            names += ["alpha_x", "theta_x"]
        names.append("sigma_x")
        if self.rate_kind == "CIR":
            names += ["alpha_tau", "tau_tilde", "sigma_tau"]
        else:
            names.append("tau")
        return tuple(names)


MODEL_PARAM_NAMES = ("alpha_y", "alpha_x", "theta_x", "sigma_x", "tau",
                     "alpha_tau", "tau_tilde", "sigma_tau")
# diffusions may be zero (a deterministic limit); pulls and the CIR mean may not
_POSITIVE = {"alpha_y", "alpha_x", "alpha_tau", "tau_tilde"}


@dataclass(frozen=True)
class ModelParams:
    """Parameters of one model kind.

    ``tau`` is the constant rate for OUBM/OUOU and the diffusion of the BM
    rate for OUBMBM/OUOUBM. ``x_0`` overrides the predictor root state
    (default ``theta_x`` under OU, ``0`` under BM); ``tau_0`` the root rate
    (default ``tau_tilde``).
    """

    alpha_y: float
    sigma_x: float
    alpha_x: float | None = None
    theta_x: float | None = None
    tau: float | None = None
    alpha_tau: float | None = None
    tau_tilde: float | None = None
    sigma_tau: float | None = None
    y_0: float = 0.0
    x_0: float | None = None
    tau_0: float | None = None

    @classmethod
    def from_mapping(cls, kind: ModelKind, values: Mapping[str, float]) -> "ModelParams":
        """Keep only the parameters active for ``kind`` (plus root states)."""
        kind = ModelKind.parse(kind)
        keep = set(kind.active_params) | {"y_0", "x_0", "tau_0"}
        kwargs = {k: float(v) for k, v in values.items() if k in keep and v is not None}
        return cls(**kwargs)

    def validate(self, kind: ModelKind) -> None:
        kind = ModelKind.parse(kind)
        for name in kind.active_params:
            val = getattr(self, name)
            if val is None:
                raise ValueError(f"{kind.value} needs parameter {name}")
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite")
            if name in _POSITIVE and val <= 0:
                raise ValueError(f"{name} must be positive, got {val}")
            if name not in _POSITIVE and name != "theta_x" and val < 0:
                raise ValueError(f"{name} must be non-negative, got {val}")

    @property
    def feller(self) -> bool | None:
        """``2 alpha_tau tau_tilde >= sigma_tau**2`` (informational only)."""
        if None in (self.alpha_tau, self.tau_tilde, self.sigma_tau):
            return None
        return 2.0 * self.alpha_tau * self.tau_tilde >= self.sigma_tau ** 2

    def as_dict(self) -> dict[str, float | None]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class RegressionParams:
    """Optimum map ``b0 + sum_i b_i x_i + sum_{i<j} b_ij x_i x_j``.

    ``b_interact`` is symmetric; only its upper triangle is read (diagonal
    entries, when configured, add ``b_ii x_i**2``).
    """

    b0: float
    b: np.ndarray
    b_interact: np.ndarray | None = None

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        k = b.size
        inter = np.zeros((k, k)) if self.b_interact is None else np.asarray(self.b_interact, dtype=float)
        if inter.shape != (k, k):
            raise ValueError(f"b_interact must be {k}x{k}, got {inter.shape}")
        if not np.allclose(inter, inter.T):
            raise ValueError("b_interact must be symmetric")
        if not (math.isfinite(self.b0) and np.all(np.isfinite(b)) and np.all(np.isfinite(inter))):
            raise ValueError("regression parameters must be finite")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "b_interact", inter)

    @property
    def k(self) -> int:
        return self.b.size

    def scaled(self, factor: float) -> "RegressionParams":
        return RegressionParams(self.b0 * factor, self.b * factor, self.b_interact * factor)


def compute_optimum(x_node, reg: RegressionParams):
    """Optimum at one node (``x_node`` shape ``(k,)``) or many (``(n, k)``)."""
    x = np.asarray(x_node, dtype=float)
    if x.shape[-1] != reg.k:
        raise ValueError(f"expected {reg.k} predictors, got {x.shape[-1]}")
    upper = np.triu(reg.b_interact)
    theta = reg.b0 + x @ reg.b + np.einsum("...i,ij,...j->...", x, upper, x)
    return float(theta) if np.ndim(theta) == 0 else theta


SIGMA_THETA_FORMS = ("corrected", "printed")


def predictor_moments(kind: str, sigma_x, t, ou_params=None, x_0=None):
    """First and second moments of predictors at time ``t`` from the root.

    ``ou_params = (alpha_x, theta_x, x_0)`` under OU; under BM the root is
    ``x_0`` (default 0).
    """
    sigma_x = np.atleast_1d(np.asarray(sigma_x, float))
    t = np.asarray(t, float)[..., None]
    if kind == "BM":
        x0 = 0.0 if x_0 is None else x_0
        mean = np.broadcast_to(np.asarray(x0, float), np.broadcast(sigma_x, t).shape)
        second = mean ** 2 + sigma_x ** 2 * t
        return mean, second
    if kind != "OU":
        raise ValueError(f"predictor kind must be 'BM' or 'OU', got {kind!r}")
    if ou_params is None:
        raise ValueError("OU predictors need (alpha_x, theta_x, x_0)")
    alpha_x, mu, x0 = ou_params
    mean, var = sp.ou_moments(x0, alpha_x, mu, sigma_x, t)
    mean, var = np.broadcast_arrays(mean, var)
    return mean, var + mean ** 2


def expected_sigma_theta_sq(reg: RegressionParams, sigma_x, t, predictor_kind: str,
                            ou_params=None, form: str = "corrected"):
    """Expected squared diffusion of the optimum induced by the predictors.

    The optimum's diffusion is ``sum_i s_i^2 (b_i + sum_{j!=i} b_ij x_j)^2``
    (independent predictor noise); its expectation uses the moments of the
    independent ``x_j`` at time ``t``. ``form="printed"`` reproduces the BM
    expression as printed, which uses ``s_i^2 t`` in place of ``E[x_j^2]``
    and drops the cross term.
    """
    sigma_x = np.broadcast_to(np.atleast_1d(np.asarray(sigma_x, float)), (reg.k,))
    if np.any(sigma_x <= 0):
        raise ValueError("sigma_x must be positive")
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be non-negative")
    if (predictor_kind == "OU") != (ou_params is not None):
        raise ValueError("ou_params must be given exactly when predictor_kind is 'OU'")
    s2 = sigma_x ** 2
    inter = reg.b_interact - np.diag(np.diag(reg.b_interact))
    base = np.sum(reg.b ** 2 * s2)
    t_arr = np.asarray(t, float)
    if form == "printed":
        if predictor_kind != "BM":
            raise ValueError("the printed form only exists for BM predictors")
        # sum_i s_i^2 sum_{j != i} b_ij^2 s_i^2 t
        extra = np.sum(s2 ** 2 * (inter ** 2).sum(axis=1)) * t_arr
        out = base + extra
    elif form == "corrected":
        mean, second = predictor_moments(predictor_kind, sigma_x, t_arr, ou_params)
        lin_mean = mean @ inter.T  # E[sum_j b_ij x_j] per i
        lin_sq = lin_mean ** 2 + (second - mean ** 2) @ (inter ** 2).T
        out = base + lin_sq @ s2 + 2.0 * lin_mean @ (reg.b * s2)
    else:
        raise ValueError(f"unknown form {form!r}")
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class SimSettings:
    """Numerical choices for tree simulation."""

    n_steps: int = sp.DEFAULT_N_STEPS
    trajectory: str = "median"
    c_variance: str = "exact"
    sigma_theta_form: str = "corrected"
    coupling: str = "independent"

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.trajectory not in sp.TRAJECTORY_MODES:
            raise ValueError(f"trajectory must be one of {sp.TRAJECTORY_MODES}")
        if self.c_variance not in sp.C_VARIANCE_FORMS:
            raise ValueError(f"c_variance must be one of {sp.C_VARIANCE_FORMS}")
        if self.sigma_theta_form not in SIGMA_THETA_FORMS:
            raise ValueError(f"sigma_theta_form must be one of {SIGMA_THETA_FORMS}")
        if self.coupling not in sp.COUPLING_MODES:
            raise ValueError(f"coupling must be one of {sp.COUPLING_MODES}")


@dataclass
class TraitDataset:
    """Tip data: response ``y`` (n,) and predictors ``x`` (n, k)."""

    labels: list[str]
    y: np.ndarray
    x: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float).reshape(len(self.y), -1)
        self.labels = list(self.labels)
        if len(self.labels) != len(self.y):
            raise ValueError("labels and y differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate species labels")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.x))):
            raise ValueError("trait values must be finite")

    @property
    def k(self) -> int:
        return self.x.shape[1]

    def traits(self) -> np.ndarray:
        """``(n, k + 1)`` matrix with ``y`` first."""
        return np.column_stack([self.y, self.x])

    def aligned_to(self, tree: PhyloTree) -> "TraitDataset":
        """Reorder rows to the tree's tip order; raise on any label mismatch."""
        have, want = set(self.labels), set(tree.tip_labels)
        if have != want:
            parts = []
            if want - have:
                parts.append("missing from data: " + ", ".join(sorted(want - have)))
            if have - want:
                parts.append("not in tree: " + ", ".join(sorted(have - want)))
            raise ValueError("tip labels do not match the tree; " + "; ".join(parts))
        pos = {lab: i for i, lab in enumerate(self.labels)}
        order = [pos[lab] for lab in tree.tip_labels]
        return TraitDataset(list(tree.tip_labels), self.y[order], self.x[order])


# -- simulation ---------------------------------------------------------------

def _predictor_root(kind: str, params: ModelParams) -> float:
    if params.x_0 is not None:
        return params.x_0
    return params.theta_x if kind == "OU" else 0.0


def simulate_predictors(tree: PhyloTree, kind: str, params: ModelParams, k: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Predictor values at every node, shape ``(n_nodes, k)``.

    The ``k`` predictors evolve independently with shared ``sigma_x`` (and
    ``alpha_x``, ``theta_x`` under OU).
    """
    if k < 1:
        raise ValueError("need at least one predictor")
    if kind not in ("BM", "OU"):
        raise ValueError(f"predictor kind must be 'BM' or 'OU', got {kind!r}")
    if params.sigma_x is None or params.sigma_x < 0:
        raise ValueError("sigma_x must be non-negative")
    ou = kind == "OU" and params.alpha_x is not None and params.alpha_x > 0
    if kind == "OU" and params.theta_x is None:
        raise ValueError("OU predictors need theta_x")
    x = np.empty((tree.n_nodes, k))
    x[tree.root] = _predictor_root(kind, params)
    lengths, parents = tree.lengths, tree.parent_array
    for level in tree.levels:
        t = lengths[level][:, None]
        xp = x[parents[level]]
        if ou:
            mean, var = sp.ou_moments(xp, params.alpha_x, params.theta_x, params.sigma_x, t)
        else:
            mean, var = xp, params.sigma_x ** 2 * t
        x[level] = mean + np.sqrt(var) * rng.standard_normal(xp.shape)
        zero = level[lengths[level] == 0]
        x[zero] = x[parents[zero]]
    return x


def _branch_sigma_theta(tree, model, params, reg, settings, branches):
    t_mid = tree.depths[tree.parent_array[branches]] + tree.lengths[branches] / 2.0
    if params.sigma_x == 0:
        return np.zeros_like(t_mid)
    sig = np.full(reg.k, params.sigma_x)
    if model.predictor_kind == "OU":
        ou = (params.alpha_x, params.theta_x, _predictor_root("OU", params))
        s2 = expected_sigma_theta_sq(reg, sig, t_mid, "OU", ou_params=ou)
    else:
        s2 = expected_sigma_theta_sq(reg, sig, t_mid, "BM", form=settings.sigma_theta_form)
    return np.sqrt(np.maximum(np.broadcast_to(s2, t_mid.shape), 0.0))


def simulate_response(tree: PhyloTree, model: ModelKind, params: ModelParams, optima,
                      rng: np.random.Generator, reg: RegressionParams | None = None,
                      settings: SimSettings | None = None, return_rates: bool = False):
    """Response value at every node given the optimum at every node.

    OUBM/OUOU branches are OU transitions towards the child's optimum with
    constant rate ``tau``. The other kinds add the optimum integral (term 1,
    needs ``reg`` for the optimum's diffusion) and the rate integral (term 2)
    to the decayed parent value. CIR rates are propagated node to node;
    with ``return_rates=True`` the per-node rates are returned as well
    (``None`` for non-CIR kinds).
    """
    model = ModelKind.parse(model)
    settings = settings or SimSettings()
    params.validate(model)
    optima = np.asarray(optima, dtype=float)
    if optima.shape != (tree.n_nodes,):
        raise ValueError(f"optima must have one value per node ({tree.n_nodes})")
    lengths, parents = tree.lengths, tree.parent_array
    a = params.alpha_y
    y = np.empty(tree.n_nodes)
    y[tree.root] = params.y_0
    rates = None

    if model.rate_kind == "const":
        for level in tree.levels:
            t = lengths[level]
            mean, var = sp.ou_moments(y[parents[level]], a, optima[level], params.tau, t)
            y[level] = mean + np.sqrt(var) * rng.standard_normal(len(level))
            zero = level[t == 0]
            y[zero] = y[parents[zero]]
        return (y, rates) if return_rates else y

    if reg is None:
        raise ValueError(f"{model.value} needs the regression parameters")
    branches = np.flatnonzero(parents >= 0)
    t_all = lengths[branches]
    moving = t_all > 0
    sig_theta = _branch_sigma_theta(tree, model, params, reg, settings, branches)

    # term 1 depends only on the optima, so draw it for every branch at once
    term1 = np.zeros(tree.n_nodes)
    if model.predictor_kind == "BM":
        term1[branches] = sp.bm_theta_integral(optima[parents[branches]], optima[branches], a,
                                               sig_theta, t_all, rng)
    else:
        long_run = compute_optimum(np.full(reg.k, params.theta_x), reg)
        raw = sp._ouou_theta_integral(optima[parents[branches]], long_run, a, params.alpha_x,
                                      sig_theta, t_all, rng, settings.c_variance)
        term1[branches] = np.exp(-a * t_all) * raw

    term2 = np.zeros(tree.n_nodes)
    if model.rate_kind == "BM":
        mv = branches[moving]
        if mv.size:
            term2[mv] = sp._ito_bm_weighted_integral(params.tau, a, lengths[mv], settings.n_steps,
                                                     rng, settings.trajectory)
    else:
        rates = np.empty(tree.n_nodes)
        rates[tree.root] = params.tau_tilde if params.tau_0 is None else params.tau_0
        for level in tree.levels:
            t = lengths[level]
            integral, rates[level] = sp.cir_integral_with_rate(
                rates[parents[level]], a, params.alpha_tau, params.tau_tilde, params.sigma_tau,
                t, settings.n_steps, rng, settings.coupling)
            term2[level] = np.exp(-a * t) * integral

    for level in tree.levels:
        t = lengths[level]
        y[level] = y[parents[level]] * np.exp(-a * t) + term1[level] + term2[level]
        zero = level[t == 0]
        y[zero] = y[parents[zero]]
    return (y, rates) if return_rates else y


def simulate_tips(tree: PhyloTree, model: ModelKind, params: ModelParams, reg: RegressionParams,
                  k: int | None = None, rng: np.random.Generator | None = None,
                  settings: SimSettings | None = None) -> TraitDataset:
    """Simulate predictors, optima and response; return the tip dataset."""
    model = ModelKind.parse(model)
    if rng is None:
        raise ValueError("an explicit generator is required")
    k = reg.k if k is None else k
    if k != reg.k:
        raise ValueError(f"k={k} but regression has {reg.k} slopes")
    params.validate(model)
    x = simulate_predictors(tree, model.predictor_kind, params, k, rng)
    optima = compute_optimum(x, reg)
    y = simulate_response(tree, model, params, np.atleast_1d(optima), rng, reg=reg, settings=settings)
    tips = list(tree.tips)
    return TraitDataset(list(tree.tip_labels), y[tips], x[tips])


def split_parameters(kind: ModelKind, names: Sequence[str], values: Sequence[float],
                     fixed: Mapping[str, float] | None = None,
                     b_interact: np.ndarray | None = None, k: int = 2):
    """Turn a flat parameter vector into ``(ModelParams, RegressionParams)``.

    Regression slopes are named ``b0, b1, ..., bk``; anything missing from
    ``names`` is looked up in ``fixed``.
    """
    merged = dict(fixed or {})
    merged.update(zip(names, (float(v) for v in values)))
    params = ModelParams.from_mapping(kind, merged)
    try:
        b0 = merged["b0"]
        b = [merged[f"b{i + 1}"] for i in range(k)]
    except KeyError as exc:
        raise ValueError(f"missing regression coefficient {exc.args[0]}") from None
    return params, RegressionParams(b0, np.array(b), b_interact)


def with_overrides(params: ModelParams, **kw) -> ModelParams:
    return replace(params, **kw)
