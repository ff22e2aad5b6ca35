"""Experiment orchestration: build graph/data/model, run chains, write artifacts."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gossip_langevin import analysis
from gossip_langevin import rng as rngmod
from gossip_langevin.errors import DivergenceError, InvalidParameterError
from gossip_langevin.harness import artifacts as art
from gossip_langevin.harness.config import GRAPH_DEFAULTS, ExperimentConfig, load_config
from gossip_langevin.models import (
    GaussianMixtureTiedMeans,
    LogisticRegressionModel,
    MagicDataset,
    QuadraticModel,
    gm_generate,
    load_magic_dataset,
    partition_equal,
    partition_heterogeneous,
)
from gossip_langevin.sampler import RunTrace, run
from gossip_langevin.topology import (
    Graph,
    build_complete,
    build_ring,
    build_star,
    expected_laplacian,
    read_edge_list,
)

log = logging.getLogger(__name__)

MAGIC_FILE = "magic04.data"
DATA_ENV = "GOSSIP_LANGEVIN_DATA"


def default_data_root() -> Path:
    env = os.environ.get(DATA_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[3] / "data"


def magic_path(model_cfg: dict) -> Path:
    return Path(model_cfg["data_path"]) if model_cfg["data_path"] else default_data_root() / MAGIC_FILE


# ----------------------------------------------------------------------------
# presets
# ----------------------------------------------------------------------------

def gm_preset_config(
    seed: int = 0,
    ticks: int | None = None,
    chains: int = 1,
    paper_scale: bool = False,
    graph_file: str | None = None,
    log_events: bool = False,
    workers: int = 1,
) -> ExperimentConfig:
    """Five agents on a ring sharing 100 mixture observations (20 each)."""
    n = 5
    if ticks is None:
        ticks = (100000 if paper_scale else 20000) * n
    graph = {"kind": "file", "path": str(graph_file)} if graph_file else {"kind": "ring", "n": n}
    return ExperimentConfig.from_dict(
        {
            "run": {"experiment": "gm", "seed": seed, "chains": chains, "engines": ["gossip_et"], "workers": workers},
            "graph": graph,
            "model": {"kind": "gm"},
            "sampler": {
                "alpha": 1e-4, "beta": 0.1, "mu_e": 8.0, "delta_e": 0.51,
                "ticks": ticks, "thin": 10, "log_events": log_events,
            },
            "analysis": {"burn_in_fraction": 0.2},
        }
    )


def logistic_preset_config(
    seed: int = 0,
    ticks: int = 1000,
    chains: int = 10,
    graph_file: str | None = None,
    log_events: bool = False,
    repartition_per_chain: bool = False,
    data_path: str | None = None,
    workers: int = 1,
) -> ExperimentConfig:
    """Six agents on a ring, heterogeneous MAGIC shards, four engines.

    The synchronous and centralized baselines get the per-agent update
    budget of the gossip engines (``2 * ticks / n`` steps) so that all final
    accuracies are compared at equal per-agent update counts.  The
    synchronous engine fuses over all incident edges at once, so its weight
    is ``beta / max_degree``; with ``beta = 0.5`` on the ring the undivided
    weight leaves ``I - beta L`` with eigenvalue -1.
    """
    graph = {"kind": "file", "path": str(graph_file)} if graph_file else {"kind": "ring", "n": 6}
    g = build_graph({**GRAPH_DEFAULTS, **graph})
    n = g.n
    beta = 0.5
    per_agent = int(round(2 * ticks / n))
    return ExperimentConfig.from_dict(
        {
            "run": {
                "experiment": "logistic", "seed": seed, "chains": chains, "workers": workers,
                "engines": ["gossip_et", "synchronous", "isolated", "centralized"],
                "engine_ticks": {"synchronous": per_agent, "centralized": per_agent},
            },
            "graph": graph,
            "model": {
                "kind": "logistic", "data_path": data_path,
                "repartition_per_chain": repartition_per_chain,
            },
            "sampler": {
                "alpha": 1e-5, "beta": beta, "mu_e": 2.0, "delta_e": 0.46,
                "ticks": ticks, "thin": 10, "log_events": log_events,
                "sync_beta": beta / int(g.degrees.max()),
            },
            "analysis": {"burn_in_fraction": 0.2},
        }
    )


# ----------------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------------

def build_graph(g: dict) -> Graph:
    kind = g["kind"]
    if kind == "ring":
        return build_ring(g["n"])
    if kind == "complete":
        return build_complete(g["n"])
    if kind == "star":
        return build_star(g["n"], g["hub"])
    return read_edge_list(g["path"])


@dataclass
class Problem:
    """Everything a chain needs besides its seed streams."""

    graph: Graph
    models: list  # one per chain (identical objects unless repartitioned)
    data: np.ndarray | None = None
    dataset: MagicDataset | None = None
    inputs: dict = field(default_factory=dict)


def build_problem(cfg: ExperimentConfig) -> Problem:
    graph = build_graph(cfg.graph)
    seed = cfg.run["seed"]
    chains = cfg.run["chains"]
    m = cfg.model
    inputs = {}
    if cfg.graph["kind"] == "file":
        inputs["graph"] = art.sha256_file(cfg.graph["path"])
    if m["kind"] == "gm":
        x = gm_generate(
            rngmod.stream(seed, "data"), count=m["count"], theta1=m["theta1"], theta2=m["theta2"],
            sigma_x_sq=m["sigma_x_sq"],
        )
        shards = partition_equal(x.size, graph.n, rngmod.stream(seed, "partition"))
        model = GaussianMixtureTiedMeans.from_partition(
            x, shards, sigma1_sq=m["sigma1_sq"], sigma2_sq=m["sigma2_sq"], sigma_x_sq=m["sigma_x_sq"]
        )
        return Problem(graph, [model] * chains, data=x, inputs=inputs)
    if m["kind"] == "logistic":
        path = magic_path(m)
        ds = load_magic_dataset(path, rngmod.stream(seed, "split"), m["test_fraction"], m["add_bias"])
        inputs[MAGIC_FILE] = art.sha256_file(path)

        def shards_for(stream):
            if m["partition"] == "equal":
                return partition_equal(ds.y_train.size, graph.n, stream)
            return partition_heterogeneous(ds.y_train, graph.n, m["concentration"], stream)

        def model_for(shards):
            return LogisticRegressionModel.from_partition(
                ds.x_train, ds.y_train, shards, prior_variance=m["prior_variance"]
            )

        if m["repartition_per_chain"]:
            models = [model_for(shards_for(rngmod.stream(seed, "partition", c))) for c in range(chains)]
        else:
            models = [model_for(shards_for(rngmod.stream(seed, "partition")))] * chains
        return Problem(graph, models, dataset=ds, inputs=inputs)
    model = QuadraticModel.isotropic(graph.n, m["d_w"], m["scale"])
    return Problem(graph, [model] * chains, inputs=inputs)


def _check_fusion_condition(cfg: ExperimentConfig, graph: Graph) -> None:
    beta = cfg.sampler["beta"]
    lam2 = expected_laplacian(graph).lambda_n_minus_1
    if beta > 0 and beta * (1 - beta) >= 1 / (2 * lam2):
        log.warning(
            "fusion-weight condition fails: beta(1-beta)=%.4g >= 1/(2 lambda_(n-1))=%.4g; "
            "the consensus envelope does not apply", beta * (1 - beta), 1 / (2 * lam2),
        )


# ----------------------------------------------------------------------------
# execution
# ----------------------------------------------------------------------------

def _run_chain(job):
    engine, model, graph, scfg, chain = job
    try:
        return run(engine, model, graph, scfg, chain=chain)
    except DivergenceError as exc:
        return exc


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    problem: Problem
    traces: dict[str, list[RunTrace]]
    status: str
    wall_time: float
    out_dir: Path | None = None
    comm: list[dict] = field(default_factory=list)
    wasserstein: list[dict] = field(default_factory=list)
    accuracy: list[dict] = field(default_factory=list)
    accuracy_final: list[dict] = field(default_factory=list)
    theory: analysis.TheoryConstants | None = None
    grid: analysis.PosteriorGrid | None = None
    error: DivergenceError | None = None


def run_experiment(cfg: ExperimentConfig, out_dir=None, metrics: bool = True) -> ExperimentResult:
    """Run every (engine, chain) pair of ``cfg``; write artifacts if ``out_dir`` is given.

    With ``metrics=False`` only the traces are produced (no grid oracle,
    Wasserstein or accuracy post-processing).  A diverged chain stops the
    experiment; artifacts of the completed part are still written, then the
    :class:`DivergenceError` is re-raised.
    """
    t0 = time.perf_counter()
    cfg.validate()
    problem = build_problem(cfg)
    _check_fusion_condition(cfg, problem.graph)
    jobs = [
        (engine, problem.models[c], problem.graph, cfg.sampler_config(engine), c)
        for engine in cfg.run["engines"]
        for c in range(cfg.run["chains"])
    ]
    if cfg.run["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run["workers"]) as pool:
            outcomes = list(pool.map(_run_chain, jobs))
    else:
        outcomes = []
        for job in jobs:
            outcomes.append(_run_chain(job))
            if isinstance(outcomes[-1], DivergenceError):
                break

    traces: dict[str, list[RunTrace]] = {}
    error = None
    for job, res in zip(jobs, outcomes):
        if isinstance(res, DivergenceError):
            error = res
            if res.trace is not None:
                traces.setdefault(job[0], []).append(res.trace)
            break
        traces.setdefault(job[0], []).append(res)

    result = ExperimentResult(cfg, problem, traces, "diverged" if error else "completed", 0.0, error=error)
    result.comm = [
        {"engine": e, "chain": c, **row.to_dict()}
        for e, trs in traces.items()
        for c, tr in enumerate(trs)
        for row in analysis.comm_stats(tr)
    ]
    if metrics and error is None and cfg.sampler["ticks"] > 0:
        if cfg.model["kind"] == "gm":
            _gm_metrics(result)
        elif cfg.model["kind"] == "logistic":
            _logistic_metrics(result)
    result.wall_time = time.perf_counter() - t0
    if out_dir is not None:
        write_artifacts(result, out_dir)
    if error is not None:
        raise error
    return result


def _post_burn_in(tr: RunTrace, fraction: float) -> np.ndarray:
    start = int(np.floor(fraction * tr.samples.shape[0]))
    return tr.samples[start:]


def _gm_metrics(res: ExperimentResult) -> None:
    cfg, a = res.config, res.config.analysis
    model = res.problem.models[0]
    res.grid = grid = analysis.grid_posterior_gm(model, a["grid_ranges"], a["grid_resolution"])
    ref = grid.sample(a["reference_samples"], rngmod.stream(cfg.run["seed"], "reference"))
    for engine, trs in res.traces.items():
        for c, tr in enumerate(trs):
            post = _post_burn_in(tr, a["burn_in_fraction"])
            for agent in range(tr.n):
                s = post[:, agent, :]
                res.wasserstein.append(
                    {
                        "engine": engine, "chain": c, "agent": agent,
                        "sliced_w1": analysis.wasserstein_sliced(s, ref, a["projections"], a["projection_seed"]),
                        "w1_theta1": analysis.wasserstein1_1d(s[:, 0], ref[:, 0]),
                        "w1_theta2": analysis.wasserstein1_1d(s[:, 1], ref[:, 1]),
                    }
                )
    if "gossip_et" in res.traces:
        res.theory = gm_theory_constants(res)


def gm_theory_constants(res: ExperimentResult, max_states: int = 2000) -> analysis.TheoryConstants:
    """Consensus-envelope constants with mu_g taken from the recorded states."""
    trs = res.traces["gossip_et"]
    states = np.concatenate([tr.samples for tr in trs])
    step = max(1, states.shape[0] // max_states)
    mu_g = analysis.estimate_mu_g(res.problem.models[0], states[::step])
    e0 = float(np.mean([tr.consensus_error[0] for tr in trs]))
    return analysis.theory_constants(
        res.problem.graph, res.config.sampler_config("gossip_et"), mu_g, e0, trs[0].d_w
    )


def _logistic_metrics(res: ExperimentResult) -> None:
    ds = res.problem.dataset
    frac = res.config.analysis["burn_in_fraction"]
    for engine, trs in res.traces.items():
        n_rec = trs[0].samples.shape[0]
        for r in range(n_rec):
            tick = int(trs[0].sample_ticks[r])
            for agent in range(trs[0].n):
                w = np.stack([tr.samples[r, agent] for tr in trs])
                upd = float(np.mean([tr.tau_history[r, agent] for tr in trs]))
                res.accuracy.append(
                    {"engine": engine, "tick": tick, "agent": agent, "updates": upd,
                     "accuracy": analysis.accuracy(ds.x_test, ds.y_test, w)}
                )
        for agent in range(trs[0].n):
            pooled = np.concatenate([_post_burn_in(tr, frac)[:, agent, :] for tr in trs])
            res.accuracy_final.append(
                {"engine": engine, "agent": agent,
                 "updates": float(np.mean([tr.tau[agent] for tr in trs])),
                 "accuracy": analysis.accuracy(ds.x_test, ds.y_test, pooled)}
            )


def final_accuracy(res: ExperimentResult, engine: str) -> float:
    """Agent-averaged final posterior-predictive accuracy of ``engine``."""
    vals = [r["accuracy"] for r in res.accuracy_final if r["engine"] == engine]
    if not vals:
        raise InvalidParameterError(f"no accuracy recorded for engine {engine!r}")
    return float(np.mean(vals))


# ----------------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _dict_rows(rows: list[dict], header: list[str]):
    return ([_fmt(r[h]) for h in header] for r in rows)


def write_artifacts(res: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = res.config
    inputs = dict(res.problem.inputs)
    if res.problem.data is not None:
        art.write_csv(out / "data.csv", ["x"], ([repr(float(v))] for v in res.problem.data))
        inputs["data.csv"] = art.sha256_file(out / "data.csv")
    if res.traces:
        art.write_metrics(out / "metrics.csv", res.traces)
        art.write_samples(out / "samples.csv", res.traces)
        if cfg.sampler["log_events"]:
            art.write_events(out / "events.jsonl", res.traces)
    comm_header = ["engine", "chain", "agent", "gos", "pct_gos", "et", "pct_et", "never_active"]
    art.write_csv(out / "comm_stats.csv", comm_header, _dict_rows(res.comm, comm_header))
    if res.wasserstein:
        h = ["engine", "chain", "agent", "sliced_w1", "w1_theta1", "w1_theta2"]
        art.write_csv(out / "wasserstein.csv", h, _dict_rows(res.wasserstein, h))
    if res.grid is not None:
        res.grid.save(out / "grid")
    if res.accuracy:
        h = ["engine", "tick", "agent", "updates", "accuracy"]
        art.write_csv(out / "accuracy.csv", h, _dict_rows(res.accuracy, h))
        h = ["engine", "agent", "updates", "accuracy"]
        art.write_csv(out / "accuracy_final.csv", h, _dict_rows(res.accuracy_final, h))
    if res.theory is not None:
        art.write_json(out / "theory_constants.json", res.theory.to_dict())
    seed = cfg.run["seed"]
    seeds = {
        "master": seed,
        "data": rngmod.seed_sequence(seed, "data").spawn_key,
        "partition": rngmod.seed_sequence(seed, "partition").spawn_key,
        "chains": [rngmod.chain_seed_record(seed, c) for c in range(cfg.run["chains"])],
    }
    extra = None
    if res.error is not None:
        extra = {"divergence": {"tick": res.error.tick, "message": str(res.error)}}
    art.write_manifest(out, cfg.to_dict(), seeds, inputs, res.wall_time, res.status, extra)
    res.out_dir = out
    return out


def run_gm_preset(out_dir=None, **overrides) -> ExperimentResult:
    return run_experiment(gm_preset_config(**overrides), out_dir)


def run_logistic_preset(out_dir=None, **overrides) -> ExperimentResult:
    return run_experiment(logistic_preset_config(**overrides), out_dir)


def run_custom(config_path, out_dir=None, **run_overrides) -> ExperimentResult:
    """Run a TOML config (or a previous run's manifest.json)."""
    cfg = load_config(config_path)
    d = cfg.to_dict()
    for key in ("seed", "chains"):
        if run_overrides.get(key) is not None:
            d["run"][key] = run_overrides[key]
    if run_overrides.get("ticks") is not None:
        d["sampler"]["ticks"] = run_overrides["ticks"]
    if run_overrides.get("log_events"):
        d["sampler"]["log_events"] = True
    if run_overrides.get("graph_file"):
        d["graph"] = {"kind": "file", "path": str(run_overrides["graph_file"])}
    return run_experiment(ExperimentConfig.from_dict(d), out_dir)
