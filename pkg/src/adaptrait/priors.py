"""Prior distributions over model and regression parameters."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low >= self.high:
            raise ValueError(f"Uniform needs finite low < high, got ({self.low}, {self.high})")

    def sample(self, rng, n):
        return rng.uniform(self.low, self.high, n)

    def logpdf(self, x):
        return stats.uniform.logpdf(x, self.low, self.high - self.low)

    def std(self) -> float:
        return (self.high - self.low) / math.sqrt(12.0)

    @property
    def support(self) -> tuple[float, float]:
        return (self.low, self.high)


@dataclass(frozen=True)
class Exponential:
    """Exponential with ``rate`` (mean ``1 / rate``)."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError(f"Exponential rate must be positive, got {self.rate}")

    def sample(self, rng, n):
        return rng.exponential(1.0 / self.rate, n)

    def logpdf(self, x):
        return stats.expon.logpdf(x, scale=1.0 / self.rate)

    def std(self) -> float:
        return 1.0 / self.rate

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, math.inf)


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError(f"Normal sd must be positive, got {self.sd}")

    def sample(self, rng, n):
        return rng.normal(self.mean, self.sd, n)

    def logpdf(self, x):
        return stats.norm.logpdf(x, self.mean, self.sd)

    def std(self) -> float:
        return self.sd

    @property
    def support(self) -> tuple[float, float]:
        return (-math.inf, math.inf)


@dataclass(frozen=True)
class ChiSquared:
    df: float

    def __post_init__(self):
        if not self.df > 0:
            raise ValueError(f"ChiSquared df must be positive, got {self.df}")

    def sample(self, rng, n):
        return rng.chisquare(self.df, n)

    def logpdf(self, x):
        return stats.chi2.logpdf(x, self.df)

    def std(self) -> float:
        return math.sqrt(2.0 * self.df)

    @property
    def support(self) -> tuple[float, float]:
        return (0.0, math.inf)


Distribution = Union[Uniform, Exponential, Normal, ChiSquared]

_FAMILIES = {"uniform": Uniform, "exponential": Exponential, "exp": Exponential,
             "normal": Normal, "chisq": ChiSquared, "chi2": ChiSquared, "chisquared": ChiSquared}


def parse_distribution(spec) -> Distribution:
    """Build a distribution from ``{"uniform": [a, b]}``, ``["exp", 5]`` or an instance."""
    if isinstance(spec, (Uniform, Exponential, Normal, ChiSquared)):
        return spec
    if isinstance(spec, Mapping):
        if len(spec) != 1:
            raise ValueError(f"prior mapping must have exactly one family key: {spec!r}")
        (family, args), = spec.items()
    elif isinstance(spec, (list, tuple)) and spec:
        family, args = spec[0], list(spec[1:])
    else:
        raise ValueError(f"cannot parse prior {spec!r}")
    try:
        cls = _FAMILIES[str(family).lower()]
    except KeyError:
        raise ValueError(f"unknown prior family {family!r}") from None
    args = args if isinstance(args, (list, tuple)) else [args]
    return cls(*(float(a) for a in args))


def describe(dist: Distribution) -> str:
    if isinstance(dist, Uniform):
        return f"U({dist.low:g},{dist.high:g})"
    if isinstance(dist, Exponential):
        return f"exp(rate={dist.rate:g})"
    if isinstance(dist, Normal):
        return f"N({dist.mean:g},{dist.sd:g})"
    return f"chisq({dist.df:g})"


# parameters that must stay positive whatever the prior says
POSITIVE_PARAMS = frozenset({"alpha_y", "alpha_x", "sigma_x", "tau", "alpha_tau", "tau_tilde",
                             "sigma_tau"})


class PriorSpec:
    """Independent priors keyed by parameter name, in a fixed order.

    Parameters
    ----------
    priors : mapping of name to distribution
        Order is preserved; it defines the column order of every draw matrix.
    """

    def __init__(self, priors: Mapping[str, Distribution] | Sequence[tuple[str, Distribution]]):
        items = list(priors.items()) if isinstance(priors, Mapping) else list(priors)
        if not items:
            raise ValueError("empty prior specification")
        self._dists = {}
        for name, dist in items:
            dist = parse_distribution(dist)
            if name in POSITIVE_PARAMS and dist.support[0] < 0:
                raise ValueError(f"prior for {name} must have non-negative support")
            self._dists[name] = dist

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self._dists)

    def __getitem__(self, name: str) -> Distribution:
        return self._dists[name]

    def __len__(self) -> int:
        return len(self._dists)

    def items(self):
        return self._dists.items()

    def subset(self, names: Sequence[str]) -> "PriorSpec":
        missing = [n for n in names if n not in self._dists]
        if missing:
            raise ValueError("no prior for " + ", ".join(missing))
        return PriorSpec([(n, self._dists[n]) for n in names])

    def with_updates(self, updates: Mapping[str, Distribution]) -> "PriorSpec":
        merged = dict(self._dists)
        merged.update({k: parse_distribution(v) for k, v in updates.items()})
        return PriorSpec(merged)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        """Draw ``(size, d)`` (or ``(d,)``) parameter vectors."""
        n = 1 if size is None else size
        out = np.column_stack([d.sample(rng, n) for d in self._dists.values()])
        return out[0] if size is None else out

    def logpdf(self, theta) -> float | np.ndarray:
        theta = np.asarray(theta, float)
        total = sum(d.logpdf(theta[..., j]) for j, d in enumerate(self._dists.values()))
        return float(total) if np.ndim(total) == 0 else total

    def sd(self) -> np.ndarray:
        return np.array([d.std() for d in self._dists.values()])

    def bounds(self) -> np.ndarray:
        """``(d, 2)`` support bounds (``+-inf`` for unbounded sides)."""
        return np.array([d.support for d in self._dists.values()], dtype=float)

    def to_dict(self) -> dict[str, str]:
        return {n: describe(d) for n, d in self._dists.items()}

    def __repr__(self) -> str:
        return f"PriorSpec({self.to_dict()})"


REGRESSION_UNIFORM = {"b0": Uniform(-1, 1), "b1": Uniform(0, 1), "b2": Uniform(0, 1)}

# simulation-study uniform priors
UNIFORM_PRIORS = PriorSpec({
    "alpha_y": Uniform(0, 0.3), "alpha_x": Uniform(0, 0.2), "theta_x": Uniform(-1, 1),
    "sigma_x": Uniform(0, 2), "tau": Uniform(0, 0.7), "alpha_tau": Uniform(0, 0.4),
    "tau_tilde": Uniform(0, 60), "sigma_tau": Uniform(0, 1), **REGRESSION_UNIFORM,
})

# simulation-study informative priors; exp(1/m) is read as rate 1/m, i.e. mean m
INFORMATIVE_PRIORS = PriorSpec({
    "alpha_y": Exponential(1 / 0.15), "alpha_x": Exponential(1 / 0.1), "theta_x": Normal(0, 1),
    "sigma_x": Exponential(1), "tau": Exponential(1), "alpha_tau": Exponential(1 / 0.2),
    "tau_tilde": ChiSquared(30), "sigma_tau": Exponential(1 / 0.5), **REGRESSION_UNIFORM,
})

# empirical-analysis priors; regression ranges come from an OLS fit on the data
EMPIRICAL_PRIORS = PriorSpec({
    "alpha_y": Exponential(5), "alpha_x": Exponential(5), "theta_x": Normal(0, 1),
    "sigma_x": Exponential(2), "tau": Exponential(3), "alpha_tau": Exponential(5),
    "tau_tilde": ChiSquared(30), "sigma_tau": Exponential(2),
})

PRIOR_SETS = {"uniform": UNIFORM_PRIORS, "informative": INFORMATIVE_PRIORS,
              "empirical": EMPIRICAL_PRIORS}

TRUE_PARAMS = {
    "alpha_y": 0.15, "alpha_x": 0.1, "theta_x": 0.0, "sigma_x": 1.0, "alpha_tau": 0.2,
    "tau_tilde": 30.0, "tau": 0.35, "sigma_tau": 0.5, "b0": 0.0, "b1": 0.5, "b2": 0.5,
}


def ols_regression_priors(y, x, width: float = 3.0) -> dict[str, Uniform]:
    """Uniform priors ``beta_hat +- width * SE`` from an OLS fit of ``y`` on ``x``."""
    y = np.asarray(y, float)
    x = np.asarray(x, float).reshape(len(y), -1)
    design = np.column_stack([np.ones(len(y)), x])
    n, p = design.shape
    if n <= p:
        raise ValueError("need more species than regression coefficients for the OLS fit")
    beta, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < p:
        raise ValueError("predictor matrix is rank deficient")
    resid = y - design @ beta
    s2 = resid @ resid / (n - p)
    se = np.sqrt(np.diag(s2 * np.linalg.inv(design.T @ design)))
    se = np.where(se > 0, se, 1e-3 * np.maximum(np.abs(beta), 1.0))
    return {f"b{i}": Uniform(b - width * s, b + width * s) for i, (b, s) in enumerate(zip(beta, se))}


def ols_fit(y, x):
    """OLS coefficients, standard errors and 95% t-intervals (baseline row)."""
    y = np.asarray(y, float)
    x = np.asarray(x, float).reshape(len(y), -1)
    design = np.column_stack([np.ones(len(y)), x])
    n, p = design.shape
    beta, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ beta
    dof = max(n - p, 1)
    se = np.sqrt(np.diag(resid @ resid / dof * np.linalg.pinv(design.T @ design)))
    q = stats.t.ppf(0.975, dof)
    return beta, se, np.column_stack([beta - q * se, beta + q * se])
