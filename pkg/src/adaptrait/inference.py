"""Approximate Bayesian computation: summaries, rejection, adjustment, MCMC."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .models import (ModelKind, SimSettings, TraitDataset, simulate_tips, split_parameters)
from .phylo import PhyloTree
from .priors import PriorSpec
from .rng import RngStream

MAD_CONSTANT = 1.4826


class ZeroMadWarning(UserWarning):
    """A summary statistic has zero spread across the reference table."""


# -- summary statistics -------------------------------------------------------

def _nn_distances(points: np.ndarray) -> np.ndarray:
    if points.ndim == 1:
        gap = np.abs(points[:, None] - points[None, :])
    else:
        gap = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1))
    np.fill_diagonal(gap, np.inf)
    # argmin returns the first minimiser, i.e. the smallest index on ties
    nn = np.argmin(gap, axis=1)
    return gap[np.arange(len(points)), nn]


def summary_stats(y) -> np.ndarray:
    """Mean and variance (``n - 1`` divisor) of nearest-neighbour gaps.

    For each species ``i`` the gap is ``|y_i - y_j|`` with ``j != i`` its
    closest species in trait space.

    Examples
    --------
    >>> summary_stats([0.0, 1.0, 3.0])
    array([1.33333333, 0.33333333])
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValueError("need a vector of at least two species")
    d = _nn_distances(y)
    return np.array([d.mean(), d.var(ddof=1)])


def dataset_stats(data: TraitDataset | np.ndarray, joint: bool = False) -> np.ndarray:
    """Concatenated statistics for ``y, x1, ..., xk``.

    With ``joint=True`` the nearest neighbour is searched in the joint
    Euclidean trait space and a single (mean, variance) pair is returned.
    """
    traits = data.traits() if isinstance(data, TraitDataset) else np.asarray(data, float)
    if traits.ndim == 1:
        traits = traits[:, None]
    if traits.shape[0] < 2:
        raise ValueError("need at least two species")
    if joint:
        d = _nn_distances(traits)
        return np.array([d.mean(), d.var(ddof=1)])
    return np.concatenate([summary_stats(col) for col in traits.T])


def stat_names(k: int, joint: bool = False) -> list[str]:
    if joint:
        return ["nn_mean", "nn_var"]
    return [f"{t}_{s}" for t in ["y"] + [f"x{i + 1}" for i in range(k)] for s in ("nn_mean", "nn_var")]


def mad_scale(stats: np.ndarray, warn: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Divide each column by ``1.4826 * MAD``; return ``(scaled, scales)``.

    Rows with any non-finite entry are ignored when computing the scales.
    Zero-MAD columns get scale 1 (with a :class:`ZeroMadWarning`).
    """
    stats = np.asarray(stats, dtype=float)
    if stats.ndim != 2 or stats.shape[0] < 2:
        raise ValueError("need a replicates-by-statistics matrix with at least two rows")
    good = np.all(np.isfinite(stats), axis=1)
    if not good.any():
        raise ValueError("no finite rows to estimate scales from")
    ref = stats[good]
    med = np.median(ref, axis=0)
    scales = MAD_CONSTANT * np.median(np.abs(ref - med), axis=0)
    zero = ~(scales > 0)
    if zero.any():
        if warn:
            warnings.warn(f"zero MAD for statistic columns {np.flatnonzero(zero).tolist()}; "
                          "using scale 1", ZeroMadWarning, stacklevel=2)
        scales = np.where(zero, 1.0, scales)
    return stats / scales, scales


def scaled_distances(stats: np.ndarray, observed: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Euclidean distance after scaling; non-finite rows get ``inf``."""
    diff = (np.asarray(stats, float) - np.asarray(observed, float)) / scales
    with np.errstate(invalid="ignore", over="ignore"):
        d = np.sqrt(np.sum(diff ** 2, axis=1))
    return np.where(np.isfinite(d), d, np.inf)


# -- reference tables ---------------------------------------------------------

def regression_names(k: int) -> list[str]:
    return [f"b{i}" for i in range(k + 1)]


def parameter_names(model: ModelKind, k: int = 2) -> list[str]:
    """Estimated parameters: the model's active ones, then ``b0..bk``."""
    return list(ModelKind.parse(model).active_params) + regression_names(k)


@dataclass
class SimulationTask:
    """Everything a worker needs to simulate replicates independently."""

    tree: PhyloTree
    model: ModelKind
    priors: PriorSpec
    stream: RngStream
    k: int = 2
    settings: SimSettings = field(default_factory=SimSettings)
    fixed: Mapping[str, float] = field(default_factory=dict)
    b_interact: np.ndarray | None = None
    joint: bool = False

    def simulate_one(self, index: int) -> tuple[np.ndarray, np.ndarray, bool]:
        rng = self.stream.substream(index).generator()
        theta = self.priors.sample(rng)
        try:
            with np.errstate(all="ignore"):
                params, reg = split_parameters(self.model, self.priors.names, theta, self.fixed,
                                               self.b_interact, self.k)
                data = simulate_tips(self.tree, self.model, params, reg, self.k, rng, self.settings)
                stats = dataset_stats(data, self.joint)
        except (ValueError, FloatingPointError, ZeroDivisionError, OverflowError):
            return theta, None, False
        return theta, stats, bool(np.all(np.isfinite(stats)))


def _run_chunk(task: SimulationTask, indices: Sequence[int]):
    return [task.simulate_one(i) for i in indices]


@dataclass
class ReferenceTable:
    """Prior draws and the summary statistics of their simulated datasets."""

    names: list[str]
    params: np.ndarray
    stats: np.ndarray
    ok: np.ndarray

    @property
    def n(self) -> int:
        return len(self.params)


def simulate_reference_table(task: SimulationTask, n_reps: int, workers: int = 1,
                             chunk_size: int = 250) -> ReferenceTable:
    """Run ``n_reps`` replicates; replicate ``i`` uses substream ``i``.

    Results are independent of ``workers`` because each replicate owns its
    random stream. Failed replicates keep their prior draw and get NaN stats.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be positive")
    missing = [n for n in parameter_names(task.model, task.k)
               if n not in task.priors.names and n not in task.fixed]
    if missing:
        raise ValueError("no prior or fixed value for " + ", ".join(missing))
    chunks = [range(s, min(s + chunk_size, n_reps)) for s in range(0, n_reps, chunk_size)]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [task] * len(chunks), chunks))
    else:
        parts = [_run_chunk(task, c) for c in chunks]
    rows = [r for part in parts for r in part]
    n_stats = next((len(s) for _, s, _ in rows if s is not None), 2 * (task.k + 1))
    stats = np.full((n_reps, n_stats), np.nan)
    for i, (_, s, _) in enumerate(rows):
        if s is not None:
            stats[i] = s
    params = np.array([th for th, _, _ in rows])
    ok = np.array([good for _, _, good in rows])
    return ReferenceTable(list(task.priors.names), params, stats, ok)


# -- rejection ----------------------------------------------------------------

@dataclass
class PosteriorSample:
    """Accepted draws from an ABC run.

    Attributes
    ----------
    names : list of str
    draws : ndarray, shape (m, d)
        Raw accepted parameter values.
    distances : ndarray, shape (m,)
        Sorted ascending.
    indices : ndarray, shape (m,)
        Replicate index of each accepted draw.
    stats : ndarray, shape (m, s)
        Scaled summary statistics of the accepted replicates.
    observed : ndarray, shape (s,)
        Scaled observed statistics.
    threshold : float
        Largest accepted distance.
    adjusted, weights : ndarray or None
        Filled in by :func:`regression_adjust`.
    """

    names: list[str]
    draws: np.ndarray
    distances: np.ndarray
    indices: np.ndarray
    stats: np.ndarray
    observed: np.ndarray
    threshold: float
    adjusted: np.ndarray | None = None
    weights: np.ndarray | None = None
    residuals: np.ndarray | None = None
    adjust_failed: bool = False
    n_total: int = 0

    @property
    def n_accepted(self) -> int:
        return len(self.draws)

    def values(self, adjusted: bool = True) -> np.ndarray:
        if adjusted and self.adjusted is not None:
            return self.adjusted
        return self.draws

    def column(self, name: str, adjusted: bool = True) -> np.ndarray:
        return self.values(adjusted)[:, self.names.index(name)]


def accept_count(tolerance: float, n: int) -> int:
    if not 0 < tolerance <= 1:
        raise ValueError("tolerance must lie in (0, 1]")
    # round before ceil so 0.1 * 5000 is 500, not 501
    return max(1, math.ceil(round(tolerance * n, 9)))


def reject(table: ReferenceTable, observed_stats, tolerance: float | None = None,
           epsilon: float | None = None, scales: np.ndarray | None = None) -> PosteriorSample:
    """Accept the ``ceil(tolerance * n)`` closest replicates (ties by index).

    With ``epsilon`` set instead, accept every replicate with distance
    ``<= epsilon``.
    """
    observed_stats = np.asarray(observed_stats, float)
    if scales is None:
        _, scales = mad_scale(table.stats)
    dist = scaled_distances(table.stats, observed_stats, scales)
    dist[~table.ok] = np.inf
    order = np.argsort(dist, kind="stable")
    if (tolerance is None) == (epsilon is None):
        raise ValueError("give exactly one of tolerance and epsilon")
    if epsilon is not None:
        m = int(np.searchsorted(dist[order], epsilon, side="right"))
        if m == 0:
            raise ValueError(f"no replicate within epsilon={epsilon}")
    else:
        if table.n < 1 / tolerance - 1e-9:
            raise ValueError("n_reps must be at least 1 / tolerance")
        m = accept_count(tolerance, table.n)
    keep = order[:m]
    return PosteriorSample(
        names=list(table.names), draws=table.params[keep], distances=dist[keep],
        indices=keep, stats=table.stats[keep] / scales, observed=observed_stats / scales,
        threshold=float(dist[keep[-1]]), n_total=table.n)


def abc_reject(observed: TraitDataset, tree: PhyloTree, model, priors: PriorSpec, n_reps: int,
               tolerance: float, rng: RngStream, *, k: int | None = None,
               settings: SimSettings | None = None, fixed: Mapping[str, float] | None = None,
               joint: bool = False, epsilon: float | None = None, workers: int = 1,
               adjust: bool = False, heteroscedastic: bool = True,
               return_table: bool = False):
    """Rejection ABC for one model against an observed dataset."""
    model = ModelKind.parse(model)
    observed = observed.aligned_to(tree)
    k = observed.k if k is None else k
    names = [n for n in parameter_names(model, k) if n not in (fixed or {})]
    task = SimulationTask(tree, model, priors.subset(names), rng, k, settings or SimSettings(),
                          dict(fixed or {}), joint=joint)
    table = simulate_reference_table(task, n_reps, workers)
    sample = reject(table, dataset_stats(observed, joint),
                    None if epsilon is not None else tolerance, epsilon)
    if adjust:
        sample = regression_adjust(sample, heteroscedastic=heteroscedastic)
    return (sample, table) if return_table else sample


# -- regression adjustment ----------------------------------------------------

def epanechnikov_weights(distances: np.ndarray) -> np.ndarray:
    """``1 - (d / h)^2`` with ``h`` the largest distance; uniform if ``h == 0``."""
    d = np.asarray(distances, float)
    h = d.max()
    if not np.isfinite(h):
        raise ValueError("accepted distances must be finite for regression adjustment")
    if h == 0:
        return np.ones_like(d)
    return np.clip(1.0 - (d / h) ** 2, 0.0, None)


def _wls(design: np.ndarray, target: np.ndarray, w: np.ndarray) -> np.ndarray:
    root = np.sqrt(w)
    weighted = target * (root[:, None] if target.ndim == 2 else root)
    coef, *_ = np.linalg.lstsq(design * root[:, None], weighted, rcond=None)
    return coef


def regression_adjust(sample: PosteriorSample, observed_stats=None,
                      heteroscedastic: bool = True) -> PosteriorSample:
    """Local-linear regression adjustment of accepted draws.

    Each parameter is regressed on the scaled statistics centred at the
    observed ones, with Epanechnikov weights on distance. Adjusted draws are
    ``alpha_hat + eps_i``; with ``heteroscedastic`` the residual is rescaled
    by ``sigma_hat(S_obs) / sigma_hat(S_i)`` where ``log sigma_hat`` is a
    second weighted linear fit of ``log |eps|``.

    Constant statistic columns carry no information and are dropped. If the
    remaining weighted design is rank deficient the raw draws are returned
    with ``adjust_failed=True``.
    """
    observed = sample.observed if observed_stats is None else np.asarray(observed_stats, float)
    stats = np.asarray(sample.stats, float)
    theta = np.asarray(sample.draws, float)
    m = len(theta)
    w = epanechnikov_weights(sample.distances)
    centred = stats - observed
    varying = np.ptp(centred, axis=0) > 0
    if not varying.any():
        return replace(sample, adjusted=theta.copy(), weights=w, residuals=np.zeros_like(theta),
                       adjust_failed=False)
    design = np.column_stack([np.ones(m), centred[:, varying]])
    active = w > 0
    p = design.shape[1]
    if m < p + 1 or active.sum() < p or np.linalg.matrix_rank(design[active]) < p:
        warnings.warn("regression adjustment skipped: rank-deficient design", RuntimeWarning,
                      stacklevel=2)
        return replace(sample, adjusted=theta.copy(), weights=w, residuals=None,
                       adjust_failed=True)
    coef = _wls(design, theta, w)
    fitted = design @ coef
    resid = theta - fitted
    intercept = coef[0]
    adjusted = intercept + resid
    if heteroscedastic:
        for j in range(theta.shape[1]):
            r = np.abs(resid[:, j])
            use = active & (r > 1e-12 * max(1.0, np.abs(theta[:, j]).max()))
            if use.sum() < p or np.linalg.matrix_rank(design[use]) < p:
                continue
            g = _wls(design[use], np.log(r[use]), w[use])
            log_sd = design @ g
            adjusted[:, j] = intercept[j] + np.exp(g[0] - log_sd) * resid[:, j]
    return replace(sample, adjusted=adjusted, weights=w, residuals=resid, adjust_failed=False)


# -- ABC-MCMC -----------------------------------------------------------------

def reflect(x: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """Fold ``x`` back into ``[low, high]`` per coordinate (mirror boundaries)."""
    low, high = bounds[:, 0], bounds[:, 1]
    out = np.array(x, dtype=float)
    for _ in range(64):
        below, above = out < low, out > high
        if not (below.any() or above.any()):
            break
        out = np.where(below, 2 * low - out, out)
        out = np.where(above, 2 * high - out, out)
    return np.clip(out, low, high)


@dataclass
class McmcResult:
    sample: PosteriorSample
    acceptance_rate: float
    chain: np.ndarray


def abc_mcmc(observed: TraitDataset, tree: PhyloTree, model, priors: PriorSpec,
             chain_length: int = 50_000, delta: float = 100.0, burn_in: int = 5_000,
             proposal_scale: np.ndarray | None = None, rng: RngStream | None = None, *,
             k: int | None = None, settings: SimSettings | None = None,
             fixed: Mapping[str, float] | None = None, joint: bool = False,
             n_pilot: int = 200, max_init: int = 10_000) -> McmcResult:
    """ABC-MCMC with a reflected Gaussian random walk.

    A proposal is accepted when its simulated data fall within ``delta`` of
    the observed statistics and ``u <= prior(new) / prior(old)``. Statistic
    scales come from ``n_pilot`` prior-predictive replicates. Returns the
    chain after discarding ``burn_in`` states.
    """
    if rng is None:
        raise ValueError("an RngStream is required")
    if not 0 <= burn_in < chain_length:
        raise ValueError("need 0 <= burn_in < chain_length")
    if not delta > 0:
        raise ValueError("delta must be positive")
    model = ModelKind.parse(model)
    observed = observed.aligned_to(tree)
    k = observed.k if k is None else k
    names = [n for n in parameter_names(model, k) if n not in (fixed or {})]
    priors = priors.subset(names)
    settings = settings or SimSettings()
    obs_stats = dataset_stats(observed, joint)

    def task(stream):
        return SimulationTask(tree, model, priors, stream, k, settings, dict(fixed or {}), joint=joint)

    pilot = simulate_reference_table(task(rng.substream(0)), n_pilot)
    _, scales = mad_scale(pilot.stats)
    bounds = priors.bounds()
    step = 0.1 * priors.sd() if proposal_scale is None else np.broadcast_to(
        np.asarray(proposal_scale, float), (len(names),))
    if np.any(~(step > 0)):
        raise ValueError("proposal scales must be positive")

    def distance(theta, stream):
        gen = stream.generator()
        try:
            with np.errstate(all="ignore"):
                params, reg = split_parameters(model, names, theta, fixed, None, k)
                data = simulate_tips(tree, model, params, reg, k, gen, settings)
                s = dataset_stats(data, joint)
        except (ValueError, FloatingPointError, ZeroDivisionError, OverflowError):
            return np.inf, None
        d = scaled_distances(s[None, :], obs_stats, scales)[0]
        return d, s

    init_stream = rng.substream(1)
    for attempt in range(max_init):
        gen = init_stream.substream(attempt, 0).generator()
        current = priors.sample(gen)
        d, s = distance(current, init_stream.substream(attempt, 1))
        if d < delta:
            break
    else:
        raise RuntimeError(f"no prior draw within delta={delta} after {max_init} attempts")
    cur_lp = priors.logpdf(current)
    cur_d, cur_s = d, s

    chain = np.empty((chain_length, len(names)))
    dists = np.empty(chain_length)
    chain_stats = np.empty((chain_length, len(obs_stats)))
    accepted = 0
    walk = rng.substream(2)
    for i in range(chain_length):
        gen = walk.substream(i).generator()
        proposal = reflect(current + step * gen.standard_normal(len(names)), bounds)
        log_u = math.log(gen.uniform())
        lp = priors.logpdf(proposal)
        if np.isfinite(lp) and log_u <= lp - cur_lp:
            d, s = distance(proposal, walk.substream(i, 1))
            if d < delta:
                current, cur_lp, cur_d, cur_s = proposal, lp, d, s
                accepted += 1
        chain[i], dists[i], chain_stats[i] = current, cur_d, cur_s

    kept = slice(burn_in, chain_length)
    sample = PosteriorSample(
        names=names, draws=chain[kept], distances=dists[kept],
        indices=np.arange(burn_in, chain_length), stats=chain_stats[kept] / scales,
        observed=obs_stats / scales, threshold=float(delta), n_total=chain_length)
    return McmcResult(sample, accepted / chain_length, chain)


# -- posterior summaries ------------------------------------------------------

SUMMARY_FIELDS = ("mean", "bias", "sd", "q05", "q95", "q025", "q975")


def summarize(sample: PosteriorSample | np.ndarray, truth: Mapping[str, float] | None = None,
              names: Sequence[str] | None = None, adjusted: bool = True) -> dict[str, dict[str, float]]:
    """Mean, ``|mean - truth|``, sd (``ddof=1``) and type-7 quantiles per parameter."""
    if isinstance(sample, PosteriorSample):
        values, names = sample.values(adjusted), sample.names
    else:
        values = np.asarray(sample, float)
        if names is None:
            raise ValueError("names are required for a bare array")
    values = np.atleast_2d(values)
    out = {}
    for j, name in enumerate(names):
        col = values[:, j]
        q = np.quantile(col, [0.05, 0.95, 0.025, 0.975], method="linear")
        mean = float(col.mean())
        bias = abs(mean - truth[name]) if truth and name in truth else math.nan
        sd = float(col.std(ddof=1)) if col.size > 1 else math.nan
        out[name] = dict(zip(SUMMARY_FIELDS, (mean, bias, sd, *map(float, q))))
    return out
