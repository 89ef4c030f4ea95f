"""Experiment drivers behind the command-line subcommands.

Random streams are addressed by ``(seed, purpose, ...)`` so every output is
a pure function of the configuration:

* ``(seed, 0, size_index)``: tree for a taxa size
* ``(seed, 1, model_index, size_index)``: the "observed" dataset
* ``(seed, 2, model_index, size_index)``: ABC replicates
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

import numpy as np

from . import report
from .config import ExperimentConfig
from .inference import (SimulationTask, abc_mcmc, abc_reject, dataset_stats, parameter_names,
                        regression_adjust, reject, simulate_reference_table, summarize)
from .modelsel import kass_raftery_label, pooled_distances, pooled_model_posterior, rank_models
from .models import ModelKind, TraitDataset, simulate_tips, split_parameters
from .phylo import PhyloTree, read_newick, to_newick, yule_tree
from .priors import ols_fit, ols_regression_priors
from .rng import RngStream, rng_stream

log = logging.getLogger(__name__)

TREE, OBSERVED, ABC = 0, 1, 2


def _out_dir(config: ExperimentConfig) -> Path:
    path = Path(config.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _truth_objects(config: ExperimentConfig, model: ModelKind):
    names = [n for n in parameter_names(model, config.k)]
    values = [config.truth[n] for n in names]
    return split_parameters(model, names, values, k=config.k)


def _posterior(sample, config, truth=None):
    if config.adjust:
        sample = regression_adjust(sample, heteroscedastic=config.heteroscedastic)
    return sample, summarize(sample, truth, adjusted=config.adjust)


# -- simulation study ---------------------------------------------------------

def run_sim_study(config: ExperimentConfig) -> dict[str, Any]:
    """Bias/sd/quantile tables for each model across taxa sizes.

    Each cell simulates one observed dataset from the true parameters on a
    Yule tree and runs rejection ABC. A failing cell is logged and printed
    as ``NA`` without stopping the study.
    """
    out = _out_dir(config)
    h, seed = config.config_hash(), config.seed
    priors = config.prior_spec()
    settings = config.settings()
    trees = [yule_tree(n, rng_stream(seed, TREE, j)) for j, n in enumerate(config.taxa_sizes)]
    results: dict[str, Any] = {}
    cells = []
    for m_idx, name in enumerate(config.models):
        model = ModelKind.parse(name)
        names = parameter_names(model, config.k)
        per_size: dict[int, Any] = {}
        for j, (n, tree) in enumerate(zip(config.taxa_sizes, trees)):
            cell = {"model": name, "n": n, "n_reps": config.n_reps, "status": "ok"}
            try:
                params, reg = _truth_objects(config, model)
                observed = simulate_tips(tree, model, params, reg, config.k,
                                         rng_stream(seed, OBSERVED, m_idx, j), settings)
                sample = abc_reject(observed, tree, model, priors, config.n_reps, config.tolerance,
                                    RngStream(seed, (ABC, m_idx, j)), k=config.k,
                                    settings=settings, joint=config.joint_stats,
                                    workers=config.workers)
                sample, summary = _posterior(sample, config, config.truth)
                per_size[n] = summary
                cell.update(accepted=sample.n_accepted, threshold=sample.threshold,
                            adjust_failed=sample.adjust_failed)
            except Exception as exc:  # a failed cell must not stop the study
                log.warning("cell %s n=%d failed: %s", name, n, exc)
                per_size[n] = None
                cell.update(status="failed", error=str(exc))
            cells.append(cell)
        results[name] = {str(n): s for n, s in per_size.items()}
        report.write_csv(out / f"sim_study_{name}.csv",
                         ["parameter", "statistic"] + [f"n={n}" for n in config.taxa_sizes],
                         report.study_table_rows(per_size, names), h, seed)
    report.write_json(out / "sim_study.json", {"results": results}, h, seed)
    manifest = {
        "mode": "sim-study",
        "models": config.models,
        "taxa_sizes": config.taxa_sizes,
        "n_reps": config.n_reps,
        "total_replicates": len(config.models) * len(config.taxa_sizes) * config.n_reps,
        "trees": {str(n): to_newick(t) for n, t in zip(config.taxa_sizes, trees)},
        "cells": cells,
        "config": config.hashed_dict(),
    }
    report.write_json(out / "manifest.json", manifest, h, seed)
    return {"results": results, "manifest": manifest}


# -- empirical pipeline -------------------------------------------------------

def _load_observed(config: ExperimentConfig) -> tuple[PhyloTree, TraitDataset]:
    if config.tree is None or config.traits is None:
        raise ValueError("--tree and --traits are required")
    tree = read_newick(config.tree)
    data = report.read_traits(config.traits).aligned_to(tree)
    if data.k != config.k:
        raise ValueError(f"trait file has {data.k} predictors but k={config.k}")
    return tree, data


def _empirical_priors(config: ExperimentConfig, data: TraitDataset):
    priors = config.prior_spec()
    reg_names = [f"b{i}" for i in range(config.k + 1)]
    if config.priors == "empirical":
        user = {k: v for k, v in config.prior_overrides.items() if k in reg_names}
        ols = ols_regression_priors(data.y, data.x)
        priors = priors.with_updates({**ols, **user})
    return priors


def run_empirical(config: ExperimentConfig) -> dict[str, Any]:
    """Fit every configured model, pool distances for model choice, emit tables."""
    out = _out_dir(config)
    h, seed = config.config_hash(), config.seed
    tree, data = _load_observed(config)
    priors = _empirical_priors(config, data)
    settings = config.settings()
    obs_stats = dataset_stats(data, config.joint_stats)
    tables = []
    for m_idx, name in enumerate(config.models):
        model = ModelKind.parse(name)
        task = SimulationTask(tree, model, priors.subset(parameter_names(model, config.k)),
                              RngStream(seed, (ABC, m_idx)), config.k, settings,
                              joint=config.joint_stats)
        tables.append(simulate_reference_table(task, config.n_reps, config.workers))

    dists = pooled_distances([t.stats for t in tables], obs_stats, ok=[t.ok for t in tables])
    comparison = pooled_model_posterior(dists, config.tolerance, config.models)
    ranking = rank_models(comparison)

    estimates: dict[str, Any] = {}
    for name, table in zip(config.models, tables):
        sample, summary = _posterior(reject(table, obs_stats, config.tolerance), config)
        estimates[name] = summary
    beta, se, ci = ols_fit(data.y, data.x)

    label = Path(config.traits).stem
    report.write_csv(out / "ranking.csv",
                     ["data"] + [f"rank{i + 1}" for i in range(len(ranking.order))] + ["tied"],
                     [[label, *ranking.order, str(ranking.tied).lower()]], h, seed)
    names = list(comparison.names)
    report.write_csv(out / "bayes_factors.csv", [""] + names,
                     [[r] + [float(v) for v in row] for r, row in zip(names, comparison.bf_matrix)],
                     h, seed)
    est_params = ["alpha_y", "sigma_x", "tau", "alpha_x", "theta_x", "alpha_tau", "tau_tilde",
                  "sigma_tau"]
    report.write_csv(out / "estimates.csv", ["model"] + est_params,
                     [[n] + [float(estimates[n][p]["mean"]) if p in estimates[n] else "-"
                             for p in est_params] for n in names], h, seed)
    reg_names = [f"b{i}" for i in range(config.k + 1)]
    coef_rows = [["OLS", "estimate", *map(float, beta)],
                 ["OLS", "2.5%", *map(float, ci[:, 0])], ["OLS", "97.5%", *map(float, ci[:, 1])]]
    for n in names:
        coef_rows += [[n, "estimate", *(float(estimates[n][b]["mean"]) for b in reg_names)],
                      [n, "2.5%", *(float(estimates[n][b]["q025"]) for b in reg_names)],
                      [n, "97.5%", *(float(estimates[n][b]["q975"]) for b in reg_names)]]
    report.write_csv(out / "coefficients.csv", ["method", "statistic"] + reg_names, coef_rows, h, seed)

    bf_labels = {}
    for i, a in enumerate(names):
        for j, b in enumerate(names):
            k = comparison.bf_matrix[i, j]
            if i != j and np.isfinite(k) and k >= 1:
                bf_labels[f"{a}/{b}"] = {"K": float(k), "label": kass_raftery_label(float(k))}
    payload = {
        "comparison": comparison.to_dict(),
        "ranking": {"order": list(ranking.order), "counts": list(ranking.counts),
                    "tied": ranking.tied},
        "kass_raftery": bf_labels,
        "estimates": estimates,
        "ols": {"beta": beta, "se": se, "ci95": ci},
        "priors": priors.to_dict(),
        "total_replicates": len(config.models) * config.n_reps,
    }
    report.write_json(out / "model_select.json", payload, h, seed)
    return payload


# -- single-model commands ----------------------------------------------------

def run_simulate(config: ExperimentConfig) -> dict[str, Any]:
    """Simulate one dataset per model from the true parameters."""
    out = _out_dir(config)
    if config.tree is not None:
        tree = read_newick(config.tree)
    else:
        tree = yule_tree(config.n_tips, rng_stream(config.seed, TREE, 0))
        (out / "tree.nwk").write_text(to_newick(tree) + "\n", encoding="utf-8")
    files = {}
    for m_idx, name in enumerate(config.models):
        model = ModelKind.parse(name)
        params, reg = _truth_objects(config, model)
        data = simulate_tips(tree, model, params, reg, config.k,
                             rng_stream(config.seed, OBSERVED, m_idx, 0), config.settings())
        files[name] = str(report.write_traits(out / f"traits_{name}.csv", data))
    return files


def _sample_payload(sample, summary):
    return {"names": sample.names, "summary": summary, "draws": sample.draws,
            "adjusted": sample.adjusted, "distances": sample.distances,
            "threshold": sample.threshold, "adjust_failed": sample.adjust_failed}


SUMMARY_COLUMNS = ["parameter", "mean", "sd", "5%", "95%", "2.5%", "97.5%"]


def _summary_rows(summary):
    keys = ("mean", "sd", "q05", "q95", "q025", "q975")
    return [[p, *(float(s[k]) for k in keys)] for p, s in summary.items()]


def run_abc_reject(config: ExperimentConfig) -> dict[str, Any]:
    out = _out_dir(config)
    h, seed = config.config_hash(), config.seed
    tree, data = _load_observed(config)
    priors = _empirical_priors(config, data)
    results = {}
    for m_idx, name in enumerate(config.models):
        sample = abc_reject(data, tree, name, priors, config.n_reps,
                            None if config.epsilon is not None else config.tolerance,
                            RngStream(seed, (ABC, m_idx)), k=config.k,
                            settings=config.settings(), joint=config.joint_stats,
                            epsilon=config.epsilon, workers=config.workers)
        sample, summary = _posterior(sample, config)
        report.write_csv(out / f"abc_reject_{name}.csv",
                         SUMMARY_COLUMNS,
                         _summary_rows(summary), h, seed)
        results[name] = _sample_payload(sample, summary)
    report.write_json(out / "abc_reject.json", results, h, seed)
    return results


def run_abc_mcmc(config: ExperimentConfig) -> dict[str, Any]:
    out = _out_dir(config)
    h, seed = config.config_hash(), config.seed
    tree, data = _load_observed(config)
    priors = _empirical_priors(config, data)
    results = {}
    for m_idx, name in enumerate(config.models):
        res = abc_mcmc(data, tree, name, priors, config.chain_length, config.delta,
                       config.burn_in, rng=RngStream(seed, (ABC, m_idx)), k=config.k,
                       settings=config.settings(), joint=config.joint_stats)
        sample, summary = _posterior(res.sample, config)
        report.write_csv(out / f"abc_mcmc_{name}.csv",
                         SUMMARY_COLUMNS,
                         _summary_rows(summary), h, seed)
        results[name] = {**_sample_payload(sample, summary),
                         "acceptance_rate": res.acceptance_rate}
    report.write_json(out / "abc_mcmc.json", results, h, seed)
    return results
