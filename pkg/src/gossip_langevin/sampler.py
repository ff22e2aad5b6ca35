"""Langevin update engines and the tick loop.

Engines
-------
``gossip_et``     event-triggered gossip ULA: active agents fuse their
                  last-broadcast samples and only rebroadcast when the drift
                  since the last broadcast exceeds a decaying threshold.
``gossip``        plain gossip ULA: active agents always exchange samples.
``synchronous``   every agent updates each step using all its neighbours.
``isolated``      active agents run ULA on their own shard, no fusion.
``centralized``   single-chain ULA on the full-data energy.

For the gossip engines, the active agent ``i`` at tick ``k`` does

    w_i <- w_i - beta (w_hat_i - w_hat_j) - (n alpha / (2 p_i)) grad E_i(w_i)
               + sqrt(2 alpha) v_i,            v_i ~ N(0, (n^2 / 2) I)

where ``w_hat`` is the last-broadcast sample (``w`` itself for plain
gossip).  The trigger test ``|w_i - w_hat_i|^2 > mu_i / (tau_i + 1)^delta_i``
is evaluated on pre-tick values with ``tau_i`` counted before the tick, and
both triggered values are exchanged before either update.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from gossip_langevin import rng as rngmod
from gossip_langevin.errors import DivergenceError, InvalidParameterError
from gossip_langevin.models import PosteriorModel
from gossip_langevin.scheduler import GossipEvent, GossipScheduler
from gossip_langevin.topology import Graph, activation_probabilities, laplacian

ENGINES = ("gossip_et", "gossip", "synchronous", "isolated", "centralized")
GRADIENT_SCALINGS = ("pairwise", "unbiased")


@dataclass
class SamplerConfig:
    alpha: float
    beta: float = 0.1
    mu_e: float | list[float] = 8.0
    delta_e: float | list[float] = 0.51
    ticks: int = 0
    seed: int = 0
    thin: int = 1
    burn_in: int = 0
    # "pairwise" keeps the n*alpha/(2 p_i) gradient weight; "unbiased" uses
    # n*alpha/p_i so the expected gossip gradient equals the full gradient.
    gradient_scaling: str = "pairwise"
    per_neighbor_copies: bool = False
    log_events: bool = False
    sync_beta: float | None = None

    def validate(self) -> "SamplerConfig":
        if not (self.alpha >= 0 and math.isfinite(self.alpha)):
            raise InvalidParameterError(f"alpha must be a finite non-negative number, got {self.alpha}")
        if not 0.0 <= self.beta < 1.0:
            raise InvalidParameterError(
                f"fusion weight beta must lie in [0, 1) (fusion-weight condition "
                f"beta(1-beta) < 1/(2 lambda_(n-1)(L_bar)) presumes 0 < beta < 1), got {self.beta}"
            )
        for name in ("mu_e", "delta_e"):
            vals = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if np.any(vals < 0) or np.any(np.isnan(vals)):
                raise InvalidParameterError(f"{name} must be non-negative, got {getattr(self, name)}")
        if int(self.ticks) != self.ticks or self.ticks < 0:
            raise InvalidParameterError(f"ticks must be a non-negative integer, got {self.ticks}")
        if self.thin < 1:
            raise InvalidParameterError(f"thin must be >= 1, got {self.thin}")
        if self.burn_in < 0:
            raise InvalidParameterError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.gradient_scaling not in GRADIENT_SCALINGS:
            raise InvalidParameterError(
                f"gradient_scaling must be one of {GRADIENT_SCALINGS}, got {self.gradient_scaling!r}"
            )
        return self

    def per_agent(self, name: str, n: int) -> np.ndarray:
        vals = np.asarray(getattr(self, name), dtype=float)
        if vals.ndim == 0:
            return np.full(n, float(vals))
        if vals.shape != (n,):
            raise InvalidParameterError(f"{name} needs one value per agent ({n}), got {vals.shape}")
        return vals.copy()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AgentStates:
    """Per-agent samples, last broadcast samples and counters (row = agent)."""

    w: np.ndarray
    w_hat: np.ndarray
    tau: np.ndarray
    broadcasts: np.ndarray
    # cache[i, j] = last sample agent j sent to agent i (per-neighbour mode only)
    cache: np.ndarray | None = None

    @classmethod
    def initial(cls, w0: np.ndarray, per_neighbor_copies: bool = False) -> "AgentStates":
        w0 = np.array(w0, dtype=float)
        n = w0.shape[0]
        cache = np.broadcast_to(w0, (n,) + w0.shape).copy() if per_neighbor_copies else None
        return cls(
            w=w0,
            w_hat=w0.copy(),
            tau=np.zeros(n, dtype=np.int64),
            broadcasts=np.zeros(n, dtype=np.int64),
            cache=cache,
        )

    def copy(self) -> "AgentStates":
        return AgentStates(
            self.w.copy(),
            self.w_hat.copy(),
            self.tau.copy(),
            self.broadcasts.copy(),
            None if self.cache is None else self.cache.copy(),
        )

    @property
    def n(self) -> int:
        return self.w.shape[0]


@dataclass
class RunTrace:
    engine: str
    n: int
    d_w: int
    ticks: int
    record_ticks: np.ndarray
    consensus_error: np.ndarray
    tau_history: np.ndarray
    broadcast_history: np.ndarray
    sample_ticks: np.ndarray
    samples: np.ndarray
    tau: np.ndarray
    broadcasts: np.ndarray
    initial_w: np.ndarray
    final_w: np.ndarray
    events: np.ndarray | None = None
    completed: bool = True
    meta: dict = field(default_factory=dict)


def consensus_error_of(w: np.ndarray) -> float:
    dev = w - w.mean(axis=0)
    return float(np.sum(dev * dev))


def gradient_weights(graph: Graph, alpha: float, scaling: str = "pairwise") -> np.ndarray:
    """Per-agent multiplier on grad E_i in the gossip update."""
    p = activation_probabilities(graph).p
    denom = 2.0 * p if scaling == "pairwise" else p
    return graph.n * alpha / denom


def _diverged(tick: int, who) -> DivergenceError:
    return DivergenceError(
        f"non-finite sample for agent(s) {who} at tick {tick}; the step size alpha is probably too large",
        tick=tick,
    )


def step_gossip_et(
    states: AgentStates,
    event: GossipEvent,
    model: PosteriorModel,
    cfg: SamplerConfig,
    grad_weight: np.ndarray,
    noise: np.ndarray,
    mu: np.ndarray | None = None,
    delta: np.ndarray | None = None,
) -> AgentStates:
    """One event-triggered gossip tick, in place.

    ``noise`` holds two standard-normal rows (for ``event.i`` then
    ``event.j``); it is scaled here to N(0, n^2/2 I) and multiplied by
    sqrt(2 alpha).  ``grad_weight`` is :func:`gradient_weights`.
    """
    n = states.n
    if mu is None:
        mu = cfg.per_agent("mu_e", n)
    if delta is None:
        delta = cfg.per_agent("delta_e", n)
    i, j = event.i, event.j
    w, w_hat, tau = states.w, states.w_hat, states.tau
    wi = w[i].copy()
    wj = w[j].copy()

    for a, b, wa in ((i, j, wi), (j, i, wj)):
        e = wa - w_hat[a]
        if float(e @ e) > mu[a] / (tau[a] + 1.0) ** delta[a]:
            w_hat[a] = wa
            states.broadcasts[a] += 1
            if states.cache is not None:
                states.cache[b, a] = wa

    if states.cache is None:
        diff_i = w_hat[i] - w_hat[j]
        diff_j = -diff_i
    else:
        diff_i = w_hat[i] - states.cache[i, j]
        diff_j = w_hat[j] - states.cache[j, i]

    scale = n * math.sqrt(cfg.alpha)
    gi = model.grad_energy_i(i, wi)
    gj = model.grad_energy_i(j, wj)
    w[i] = wi - cfg.beta * diff_i - grad_weight[i] * gi + scale * noise[0]
    w[j] = wj - cfg.beta * diff_j - grad_weight[j] * gj + scale * noise[1]
    tau[i] += 1
    tau[j] += 1
    if not (np.isfinite(w[i]).all() and np.isfinite(w[j]).all()):
        raise _diverged(event.k, (i, j))
    return states


def step_gossip_plain(
    states: AgentStates,
    event: GossipEvent,
    model: PosteriorModel,
    cfg: SamplerConfig,
    grad_weight: np.ndarray,
    noise: np.ndarray,
) -> AgentStates:
    n = states.n
    i, j = event.i, event.j
    w = states.w
    wi = w[i].copy()
    wj = w[j].copy()
    scale = n * math.sqrt(cfg.alpha)
    gi = model.grad_energy_i(i, wi)
    gj = model.grad_energy_i(j, wj)
    w[i] = wi - cfg.beta * (wi - wj) - grad_weight[i] * gi + scale * noise[0]
    w[j] = wj - cfg.beta * (wj - wi) - grad_weight[j] * gj + scale * noise[1]
    states.w_hat[i] = wi
    states.w_hat[j] = wj
    states.tau[i] += 1
    states.tau[j] += 1
    states.broadcasts[i] += 1
    states.broadcasts[j] += 1
    if not (np.isfinite(w[i]).all() and np.isfinite(w[j]).all()):
        raise _diverged(event.k, (i, j))
    return states


def step_isolated(
    states: AgentStates,
    event: GossipEvent,
    model: PosteriorModel,
    cfg: SamplerConfig,
    noise: np.ndarray,
) -> AgentStates:
    """Active agents take a standalone ULA step on their own posterior
    (prior weight 1, unit noise); nothing is exchanged."""
    scale = math.sqrt(2.0 * cfg.alpha)
    for row, a in enumerate((event.i, event.j)):
        wa = states.w[a]
        states.w[a] = wa - cfg.alpha * model.grad_energy_i(a, wa, prior_weight=1.0) + scale * noise[row]
        states.tau[a] += 1
        if not np.all(np.isfinite(states.w[a])):
            raise _diverged(event.k, a)
    return states


def step_synchronous(
    states: AgentStates,
    model: PosteriorModel,
    lap: np.ndarray,
    alpha_k: float,
    beta_k: float,
    noise: np.ndarray,
    tick: int = 0,
) -> AgentStates:
    """All agents at once:
    w_i <- w_i - beta_k sum_{j in N_i} (w_i - w_j) - alpha_k n grad E_i(w_i) + sqrt(2 alpha_k) v_i,
    v_i ~ N(0, n I).  ``noise`` is an (n, d_w) standard-normal array."""
    w = states.w
    n = states.n
    grads = np.stack([model.grad_energy_i(i, w[i]) for i in range(n)])
    new = w - beta_k * (lap @ w) - alpha_k * n * grads + math.sqrt(2.0 * alpha_k * n) * noise
    if not np.all(np.isfinite(new)):
        raise _diverged(tick, np.flatnonzero(~np.all(np.isfinite(new), axis=1)).tolist())
    states.w_hat[:] = w
    states.w = new
    states.tau += 1
    states.broadcasts += 1
    return states


def step_centralized(w: np.ndarray, model: PosteriorModel, alpha: float, noise: np.ndarray, tick: int = 0) -> np.ndarray:
    new = w - alpha * model.grad_energy(w) + math.sqrt(2.0 * alpha) * noise
    if not np.all(np.isfinite(new)):
        raise _diverged(tick, "central")
    return new


class _NormalBuffer:
    """Block-buffered standard normals of a fixed trailing shape."""

    def __init__(self, rng: np.random.Generator, shape: tuple[int, ...], block: int = 4096):
        self.rng = rng
        self.shape = shape
        self.block = block
        self._buf = np.empty((0,) + shape)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self._buf.shape[0]:
            self._buf = self.rng.standard_normal((self.block,) + self.shape)
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


def initial_samples(n: int, d_w: int, seed: int, chain: int) -> np.ndarray:
    """w_i(0) ~ N(0, I) i.i.d. from the chain's ``init`` stream."""
    return rngmod.chain_stream(seed, chain, "init").standard_normal((n, d_w))


def run(
    engine: str,
    model: PosteriorModel,
    graph: Graph,
    cfg: SamplerConfig,
    chain: int = 0,
    init: np.ndarray | None = None,
) -> RunTrace:
    """Advance one chain for ``cfg.ticks`` ticks (steps for the synchronous
    and centralized engines) and return its trace.

    Consensus error, activation and broadcast counters are recorded every
    ``cfg.thin`` ticks starting at tick 0; per-agent samples are recorded on
    the same grid once the tick index reaches ``cfg.burn_in``.  On divergence
    a :class:`DivergenceError` is raised with the partial trace attached.
    """
    if engine not in ENGINES:
        raise InvalidParameterError(f"unknown engine {engine!r}; choose one of {ENGINES}")
    cfg.validate()
    n, d = graph.n, model.d_w
    if engine != "centralized" and model.n_agents != n:
        raise InvalidParameterError(f"model has {model.n_agents} shards but the graph has {n} agents")

    rows = 1 if engine == "centralized" else n
    w0 = initial_samples(rows, d, cfg.seed, chain) if init is None else np.array(init, dtype=float)
    if w0.shape != (rows, d):
        raise InvalidParameterError(f"initial samples must have shape {(rows, d)}, got {w0.shape}")
    states = AgentStates.initial(w0, per_neighbor_copies=cfg.per_neighbor_copies and engine == "gossip_et")

    sched_rng = rngmod.chain_stream(cfg.seed, chain, "schedule")
    noise_rng = rngmod.chain_stream(cfg.seed, chain, "noise")

    rec_t, rec_ce, rec_tau, rec_bc = [], [], [], []
    smp_t, smp = [], []
    events = [] if cfg.log_events and engine in ("gossip_et", "gossip", "isolated") else None

    def record(k: int):
        rec_t.append(k)
        rec_ce.append(consensus_error_of(states.w))
        rec_tau.append(states.tau.copy())
        rec_bc.append(states.broadcasts.copy())
        if k >= cfg.burn_in:
            smp_t.append(k)
            smp.append(states.w.copy())

    def build_trace(done: bool, ticks_done: int) -> RunTrace:
        return RunTrace(
            engine=engine,
            n=rows,
            d_w=d,
            ticks=ticks_done,
            record_ticks=np.array(rec_t, dtype=np.int64),
            consensus_error=np.array(rec_ce),
            tau_history=np.array(rec_tau, dtype=np.int64).reshape(len(rec_t), rows),
            broadcast_history=np.array(rec_bc, dtype=np.int64).reshape(len(rec_t), rows),
            sample_ticks=np.array(smp_t, dtype=np.int64),
            samples=np.array(smp).reshape(len(smp_t), rows, d),
            tau=states.tau.copy(),
            broadcasts=states.broadcasts.copy(),
            initial_w=w0.copy(),
            final_w=states.w.copy(),
            events=None if events is None else np.array(events, dtype=np.int64).reshape(-1, 3),
            completed=done,
            meta={"chain": chain, "seed": cfg.seed},
        )

    record(0)
    k = 0
    # overflow surfaces as a non-finite state, which the steps turn into DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            if engine in ("gossip_et", "gossip", "isolated"):
                sched = GossipScheduler(graph, sched_rng)
                noise = _NormalBuffer(noise_rng, (2, d))
                gw = gradient_weights(graph, cfg.alpha, cfg.gradient_scaling)
                mu = cfg.per_agent("mu_e", n)
                delta = cfg.per_agent("delta_e", n)
                for k in range(cfg.ticks):
                    ev = next(sched)
                    z = noise.next()
                    if engine == "gossip_et":
                        step_gossip_et(states, ev, model, cfg, gw, z, mu, delta)
                    elif engine == "gossip":
                        step_gossip_plain(states, ev, model, cfg, gw, z)
                    else:
                        step_isolated(states, ev, model, cfg, z)
                    if events is not None:
                        events.append((ev.k, ev.i, ev.j))
                    if (k + 1) % cfg.thin == 0 or k + 1 == cfg.ticks:
                        record(k + 1)
            elif engine == "synchronous":
                lap = laplacian(graph)
                beta_k = cfg.beta if cfg.sync_beta is None else cfg.sync_beta
                noise = _NormalBuffer(noise_rng, (n, d), block=1024)
                for k in range(cfg.ticks):
                    step_synchronous(states, model, lap, cfg.alpha, beta_k, noise.next(), tick=k)
                    if (k + 1) % cfg.thin == 0 or k + 1 == cfg.ticks:
                        record(k + 1)
            else:
                noise = _NormalBuffer(noise_rng, (d,), block=65536)
                w = states.w[0].copy()
                for k in range(cfg.ticks):
                    w = step_centralized(w, model, cfg.alpha, noise.next(), tick=k)
                    if (k + 1) % cfg.thin == 0 or k + 1 == cfg.ticks:
                        states.w[0] = w
                        states.tau[0] = k + 1
                        record(k + 1)
                states.w[0] = w
        except DivergenceError as exc:
            exc.trace = build_trace(False, k)
            raise
    return build_trace(True, cfg.ticks)
