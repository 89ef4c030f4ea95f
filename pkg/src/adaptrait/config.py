"""Experiment configuration: a YAML key-value file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .models import ModelKind, SimSettings
from .priors import PRIOR_SETS, PriorSpec, TRUE_PARAMS

MODES = ("simulate", "abc-reject", "abc-mcmc", "model-select", "sim-study")
STUDY_MODELS = ("OUBMBM", "OUOUBM", "OUBMCIR", "OUOUCIR")
DESK_SIZES = (10, 20)
FULL_SIZES = (10, 20, 50, 100)
DESK_REPS = 5_000
FULL_REPS = 50_000

# fields that never change results and so stay out of the hash
_UNHASHED = {"out", "workers", "config_path"}


@dataclass
class ExperimentConfig:
    mode: str = "sim-study"
    tree: str | None = None
    traits: str | None = None
    models: list[str] = field(default_factory=lambda: list(STUDY_MODELS))
    priors: str = "uniform"
    prior_overrides: dict[str, Any] = field(default_factory=dict)
    truth: dict[str, float] = field(default_factory=lambda: dict(TRUE_PARAMS))
    n_reps: int | None = None
    tolerance: float | None = None
    epsilon: float | None = None
    taxa_sizes: list[int] | None = None
    n_tips: int = 10
    k: int = 2
    seed: int = 1
    out: str = "out"
    full: bool = False
    n_steps: int = 100
    adjust: bool = False
    heteroscedastic: bool = True
    joint_stats: bool = False
    sigma_theta_form: str = "corrected"
    c_variance: str = "exact"
    trajectory: str = "median"
    coupling: str = "independent"
    delta: float = 100.0
    burn_in: int = 5_000
    chain_length: int = 50_000
    workers: int = 1
    config_path: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.models = [ModelKind.parse(m).value for m in self.models]
        if not self.models:
            raise ValueError("at least one model is required")
        if self.priors not in PRIOR_SETS:
            raise ValueError(f"priors must be one of {sorted(PRIOR_SETS)}")
        if self.n_reps is None:
            self.n_reps = FULL_REPS if self.full else DESK_REPS
        if self.taxa_sizes is None:
            self.taxa_sizes = list(FULL_SIZES if self.full else DESK_SIZES)
        if self.tolerance is None:
            self.tolerance = 0.05 if self.mode == "model-select" else 0.1
        self.taxa_sizes = [int(n) for n in self.taxa_sizes]
        if self.seed is None or int(self.seed) < 0:
            raise ValueError("a non-negative seed is required")
        if self.n_reps < 1:
            raise ValueError("n_reps must be positive")
        if not 0 < self.tolerance <= 1:
            raise ValueError("tolerance must lie in (0, 1]")
        if any(n < 2 for n in self.taxa_sizes) or self.n_tips < 2:
            raise ValueError("trees need at least two tips")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if not 0 <= self.burn_in < self.chain_length:
            raise ValueError("need 0 <= burn_in < chain_length")
        self.settings()  # validates the numerical switches
        for name in ("tree", "traits"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValueError(f"{name} file not found: {path}")

    def settings(self) -> SimSettings:
        return SimSettings(n_steps=self.n_steps, trajectory=self.trajectory,
                           c_variance=self.c_variance, sigma_theta_form=self.sigma_theta_form,
                           coupling=self.coupling)

    def prior_spec(self) -> PriorSpec:
        return PRIOR_SETS[self.priors].with_updates(self.prior_overrides)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def hashed_dict(self) -> dict[str, Any]:
        return {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}

    def config_hash(self) -> str:
        """Short SHA-256 of the result-determining fields."""
        blob = json.dumps(self.hashed_dict(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_ALIASES = {"reps": "n_reps", "tol": "tolerance", "steps": "n_steps", "model": "models",
            "sizes": "taxa_sizes", "burn-in": "burn_in"}


def _normalise(raw: Mapping[str, Any]) -> dict[str, Any]:
    known = {f.name for f in fields(ExperimentConfig)}
    out = {}
    for key, value in raw.items():
        name = _ALIASES.get(key, key).replace("-", "_")
        if name not in known:
            raise ValueError(f"unknown configuration key {key!r}")
        if name == "models" and isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        out[name] = value
    return out


def load_config(path=None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read a YAML mapping (optional) and apply ``overrides``; overrides win.

    ``None`` override values are ignored so unset CLI flags fall through.
    """
    values: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, Mapping):
            raise ValueError("configuration file must contain a key-value mapping")
        values.update(_normalise(data))
        values["config_path"] = str(path)
    if overrides:
        values.update(_normalise({k: v for k, v in overrides.items() if v is not None}))
    return ExperimentConfig(**values)
