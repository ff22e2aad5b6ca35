"""Experiment configuration: a nested mapping with fixed sections.

The same structure is read from TOML files (``[run]``, ``[graph]``,
``[model]``, ``[sampler]``, ``[analysis]`` tables) and echoed verbatim into
``manifest.json``, so a manifest is itself a valid configuration.  Unknown
keys anywhere are rejected.
"""

from __future__ import annotations

import copy
import json
import os
import sys
from dataclasses import dataclass

from gossip_langevin.errors import ConfigError, InvalidParameterError
from gossip_langevin.sampler import ENGINES, SamplerConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

GRAPH_KINDS = ("ring", "complete", "star", "file")
MODEL_KINDS = ("gm", "logistic", "quadratic")

RUN_DEFAULTS = {
    "experiment": "custom",
    "seed": 0,
    "chains": 1,
    "engines": ["gossip_et"],
    "engine_ticks": {},
    "workers": 1,
}
GRAPH_DEFAULTS = {"kind": "ring", "n": 5, "path": None, "hub": 0}
MODEL_DEFAULTS = {
    "gm": {
        "kind": "gm",
        "count": 100,
        "theta1": 0.0,
        "theta2": 1.0,
        "sigma1_sq": 10.0,
        "sigma2_sq": 1.0,
        "sigma_x_sq": 2.0,
    },
    "logistic": {
        "kind": "logistic",
        "data_path": None,
        "test_fraction": 0.1,
        "partition": "heterogeneous",
        "concentration": 0.5,
        "prior_variance": 10.0,
        "add_bias": False,
        "repartition_per_chain": False,
    },
    "quadratic": {"kind": "quadratic", "d_w": 2, "scale": 1.0},
}
SAMPLER_DEFAULTS = {
    "alpha": 1e-4,
    "beta": 0.1,
    "mu_e": 8.0,
    "delta_e": 0.51,
    "ticks": 100000,
    "thin": 10,
    "burn_in": 0,
    "gradient_scaling": "pairwise",
    "per_neighbor_copies": False,
    "sync_beta": None,
    "log_events": False,
}
ANALYSIS_DEFAULTS = {
    "burn_in_fraction": 0.2,
    "grid_ranges": [[-3.0, 3.0], [-4.0, 4.0]],
    "grid_resolution": [400, 400],
    "projections": 500,
    "projection_seed": 0,
    "reference_samples": 20000,
}
SECTIONS = ("run", "graph", "model", "sampler", "analysis")


def _merge(section: str, defaults: dict, given: dict) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"[{section}] must be a table, got {type(given).__name__}")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}; allowed: {', '.join(sorted(defaults))}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment description (see module docstring)."""

    run: dict
    graph: dict
    model: dict
    sampler: dict
    analysis: dict

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a mapping of sections")
        unknown = sorted(set(data) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}; allowed: {', '.join(SECTIONS)}")
        model_in = data.get("model", {})
        kind = model_in.get("kind", "gm") if isinstance(model_in, dict) else None
        if kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind must be one of {MODEL_KINDS}, got {kind!r}")
        cfg = cls(
            run=_merge("run", RUN_DEFAULTS, data.get("run", {})),
            graph=_merge("graph", GRAPH_DEFAULTS, data.get("graph", {})),
            model=_merge("model", MODEL_DEFAULTS[kind], model_in),
            sampler=_merge("sampler", SAMPLER_DEFAULTS, data.get("sampler", {})),
            analysis=_merge("analysis", ANALYSIS_DEFAULTS, data.get("analysis", {})),
        )
        return cfg.validate()

    def to_dict(self) -> dict:
        return {s: copy.deepcopy(getattr(self, s)) for s in SECTIONS}

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(self.to_dict())

    def sampler_config(self, engine: str | None = None) -> SamplerConfig:
        s = dict(self.sampler)
        ticks = s.pop("ticks")
        if engine is not None:
            ticks = self.run["engine_ticks"].get(engine, ticks)
        return SamplerConfig(seed=self.run["seed"], ticks=int(ticks), **s)

    def validate(self) -> "ExperimentConfig":
        r, g, m, a = self.run, self.graph, self.model, self.analysis
        if not isinstance(r["seed"], int) or r["seed"] < 0:
            raise InvalidParameterError(f"run.seed must be a non-negative integer, got {r['seed']!r}")
        if not isinstance(r["chains"], int) or r["chains"] < 1:
            raise InvalidParameterError(f"run.chains must be a positive integer, got {r['chains']!r}")
        if not isinstance(r["workers"], int) or r["workers"] < 1:
            raise InvalidParameterError(f"run.workers must be a positive integer, got {r['workers']!r}")
        engines = r["engines"]
        if isinstance(engines, str):
            engines = r["engines"] = [engines]
        if not engines or any(e not in ENGINES for e in engines):
            raise InvalidParameterError(f"run.engines must be a non-empty subset of {ENGINES}, got {engines!r}")
        for e, t in r["engine_ticks"].items():
            if e not in ENGINES or not isinstance(t, int) or t < 0:
                raise InvalidParameterError(f"run.engine_ticks entry {e!r} = {t!r} is invalid")
        if g["kind"] not in GRAPH_KINDS:
            raise InvalidParameterError(f"graph.kind must be one of {GRAPH_KINDS}, got {g['kind']!r}")
        if g["kind"] == "file" and not g["path"]:
            raise InvalidParameterError("graph.kind = 'file' needs graph.path")
        if m["kind"] == "logistic":
            if m["partition"] not in ("heterogeneous", "equal"):
                raise InvalidParameterError(f"model.partition must be 'heterogeneous' or 'equal', got {m['partition']!r}")
            if not 0.0 < m["test_fraction"] < 1.0:
                raise InvalidParameterError(f"model.test_fraction must lie in (0, 1), got {m['test_fraction']}")
            if m["concentration"] <= 0:
                raise InvalidParameterError(f"model.concentration must be positive, got {m['concentration']}")
        if m["kind"] == "gm" and m["count"] < 1:
            raise InvalidParameterError(f"model.count must be >= 1, got {m['count']}")
        if not 0.0 <= a["burn_in_fraction"] < 1.0:
            raise InvalidParameterError(f"analysis.burn_in_fraction must lie in [0, 1), got {a['burn_in_fraction']}")
        self.sampler_config().validate()
        return self


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read a TOML experiment file, or a ``manifest.json`` from an earlier run."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ConfigError(f"configuration file {path!r} does not exist")
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if "config" in data and "version" in data:
            data = data["config"]
    else:
        try:
            data = tomllib.loads(raw.decode("utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    return ExperimentConfig.from_dict(data)
