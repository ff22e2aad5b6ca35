"""Diagnostics and closed-form guarantees.

Covers the consensus-error envelope and its constants, the recursive
sequence bound behind it, the step-size / fusion-weight conditions, the
KL-divergence bound of the averaged sample, a grid oracle for the
two-parameter mixture posterior, Wasserstein distances, posterior
predictive accuracy and communication statistics.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from gossip_langevin.errors import (
    ConditionError,
    DegenerateCaseError,
    GridRangeError,
    InvalidParameterError,
)
from gossip_langevin.models import GaussianMixtureTiedMeans, PosteriorModel
from gossip_langevin.sampler import AgentStates, RunTrace, SamplerConfig
from gossip_langevin.topology import (
    Graph,
    activation_probabilities,
    edge_probabilities,
    expected_laplacian,
)

__all__ = [
    "CommStats",
    "ConditionReport",
    "KLBound",
    "KLBoundInputs",
    "PosteriorGrid",
    "TheoryConstants",
    "accuracy",
    "check_conditions",
    "comm_stats",
    "consensus_envelope",
    "consensus_error",
    "estimate_c_xi",
    "estimate_mu_g",
    "evaluate_kl_bound",
    "expected_fusion_sq_norm",
    "gossip_gradient_expectation",
    "grid_posterior_gm",
    "lemma1_bound",
    "theory_constants",
    "wasserstein1_1d",
    "wasserstein_sliced",
]


# ----------------------------------------------------------------------------
# consensus
# ----------------------------------------------------------------------------

def consensus_error(states) -> float:
    """Squared distance of the stacked samples from their agent average."""
    w = states.w if isinstance(states, AgentStates) else np.asarray(states, dtype=float)
    dev = w - w.mean(axis=0)
    return float(np.sum(dev * dev))


def expected_fusion_sq_norm(graph: Graph, beta: float, w_tilde: np.ndarray) -> float:
    """Exact E ||(I - beta L_k) w_tilde||^2 over the active edge, by enumeration."""
    total = 0.0
    for (i, j), prob in zip(graph.edges, edge_probabilities(graph)):
        v = np.array(w_tilde, dtype=float)
        d = beta * (w_tilde[i] - w_tilde[j])
        v[i] -= d
        v[j] += d
        total += prob * float(np.sum(v * v))
    return total


def gossip_gradient_expectation(
    model: PosteriorModel, graph: Graph, w: np.ndarray, scaling: str = "pairwise"
) -> np.ndarray:
    """Edge-enumerated mean of the weighted pair gradient at a common point.

    With ``scaling="pairwise"`` the per-agent weight is 1/(2 p_i) (the weight
    inside the gossip-noise term); ``"unbiased"`` uses 1/p_i.
    """
    p = activation_probabilities(graph).p
    coef = 1.0 / (2.0 * p) if scaling == "pairwise" else 1.0 / p
    grads = [model.grad_energy_i(i, w) for i in range(graph.n)]
    out = np.zeros(model.d_w)
    for (i, j), prob in zip(graph.edges, edge_probabilities(graph)):
        out += prob * (coef[i] * grads[i] + coef[j] * grads[j])
    return out


def estimate_c_xi(model: PosteriorModel, graph: Graph, points: np.ndarray, scaling: str = "pairwise") -> float:
    """max over ``points`` of E_pair ||grad E(w) - sum_{i in pair} c_i grad E_i(w)||^2."""
    p = activation_probabilities(graph).p
    coef = 1.0 / (2.0 * p) if scaling == "pairwise" else 1.0 / p
    probs = edge_probabilities(graph)
    best = 0.0
    for w in np.atleast_2d(points):
        full = model.grad_energy(w)
        grads = [model.grad_energy_i(i, w) for i in range(graph.n)]
        val = 0.0
        for (i, j), prob in zip(graph.edges, probs):
            xi = full - coef[i] * grads[i] - coef[j] * grads[j]
            val += prob * float(xi @ xi)
        best = max(best, val)
    return best


def estimate_mu_g(model: PosteriorModel, samples: np.ndarray) -> float:
    """Largest squared local-gradient norm over ``samples`` of shape (..., n, d_w)."""
    s = np.asarray(samples, dtype=float).reshape(-1, model.n_agents, model.d_w)
    best = 0.0
    for row in s:
        for i in range(model.n_agents):
            g = model.grad_energy_i(i, row[i])
            best = max(best, float(g @ g))
    return best


# ----------------------------------------------------------------------------
# recursive-sequence bound
# ----------------------------------------------------------------------------

def _tbar(delta: float, log_sigma_abs: float) -> int:
    """First index from which sigma^{-t} / (t+1)^delta is strictly increasing."""
    t = max(0, math.ceil(delta / log_sigma_abs - 1.0))
    while log_sigma_abs - delta / (t + 1) <= 0.0:
        t += 1
    return t


def lemma1_bound(sigma: float, delta: float, mu_xi: float, c: float, y0: float, k):
    """Closed-form bound on y_{k+1} for y_{k+1} <= sigma y_k + mu_xi/(k+1)^delta + c.

    Returns ``(bound, W1, W2, W3)`` where
    ``bound = W1 sigma^{k+1} + W2 / (k+1)^delta + W3`` and

    * ``W1 = y0 + mu_xi * sum_{t < tbar} sigma^{-(t+1)} / (t+1)^delta``
    * ``W2 = mu_xi / (sigma * (|ln sigma| - delta / (tbar + 1)))``
    * ``W3 = c / (1 - sigma)``

    ``k`` may be an int or an integer array.
    """
    if not 0.0 < sigma < 1.0:
        raise InvalidParameterError(f"sigma must lie in (0, 1), got {sigma}")
    if not 0.0 < delta < 1.0:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}")
    if mu_xi <= 0 or c <= 0:
        raise InvalidParameterError(f"mu_xi and c must be positive, got {mu_xi}, {c}")
    if y0 < 0:
        raise InvalidParameterError(f"y0 must be non-negative, got {y0}")
    ls = abs(math.log(sigma))
    tbar = _tbar(delta, ls)
    t = np.arange(1, tbar + 1, dtype=float)
    w1 = y0 + mu_xi * float(np.sum(np.exp(t * ls) / t**delta))
    w2 = mu_xi / (sigma * (ls - delta / (tbar + 1)))
    w3 = c / (1.0 - sigma)
    kk = np.asarray(k, dtype=float)
    bound = w1 * sigma ** (kk + 1) + w2 / (kk + 1) ** delta + w3
    if np.ndim(bound) == 0:
        bound = float(bound)
    return bound, w1, w2, w3


# ----------------------------------------------------------------------------
# conditions and theory constants
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    cond1: bool
    cond2: bool
    cond1_margin: float
    cond2_margin: float

    def to_dict(self):
        return asdict(self)


def check_conditions(alpha: float, rho_U: float, L_bar: float, beta: float, lambda_n_minus_1: float) -> ConditionReport:
    """Step-size condition ``8 a^3 Lbar^4 / (1 - exp(-a rho)) < rho`` and
    fusion-weight condition ``beta (1 - beta) < 1 / (2 lambda_{n-1})``.

    Margins are left-hand side minus right-hand side (negative = satisfied).
    """
    if alpha <= 0 or rho_U <= 0 or L_bar <= 0 or lambda_n_minus_1 <= 0:
        raise InvalidParameterError("alpha, rho_U, L_bar and lambda_n_minus_1 must be positive")
    lhs1 = 8.0 * alpha**3 * L_bar**4 / (-math.expm1(-alpha * rho_U))
    m1 = lhs1 - rho_U
    m2 = beta * (1.0 - beta) - 1.0 / (2.0 * lambda_n_minus_1)
    return ConditionReport(cond1=m1 < 0, cond2=m2 < 0, cond1_margin=m1, cond2_margin=m2)


@dataclass(frozen=True)
class TheoryConstants:
    lam: float
    t_bar: int
    Y1: float
    Y2: float
    Y3: float
    alpha: float
    beta: float
    n: int
    d_w: int
    p_m: float
    mu_e: float
    delta_e: float
    mu_g: float
    lambda_n_minus_1: float
    initial_consensus_error: float

    @property
    def sqrt_lam(self) -> float:
        return math.sqrt(self.lam)

    def envelope(self, k):
        """Bound on E||w_tilde(k+1)||^2."""
        kk = np.asarray(k, dtype=float)
        return self.Y1 * self.sqrt_lam ** (kk + 1) + self.Y2 / (kk + 1) ** self.delta_e + self.Y3

    def to_dict(self) -> dict:
        return asdict(self)


def theory_constants(
    graph: Graph,
    cfg: SamplerConfig,
    mu_g: float,
    initial_consensus_error: float,
    d_w: int,
) -> TheoryConstants:
    """Constants of the consensus-error envelope

        E||w_tilde(k+1)||^2 <= Y1 sqrt(lam)^{k+1} + Y2 / (k+1)^delta_e + Y3.

    ``mu_e = max_i mu_i / (2n)^delta_e`` and ``delta_e = min_i delta_i`` are
    formed from the per-agent trigger parameters in ``cfg``.  The recursion
    contracts by ``sqrt(lam)``, so the envelope is the recursive-sequence
    bound with ``sigma = sqrt(lam)``; ``t_bar`` is taken with that sigma.
    """
    n = graph.n
    lam2 = expected_laplacian(graph).lambda_n_minus_1
    beta, alpha = cfg.beta, cfg.alpha
    if not 0.0 < beta < 1.0:
        raise InvalidParameterError(f"beta must lie in (0, 1), got {beta}")
    if beta * (1.0 - beta) >= 1.0 / (2.0 * lam2):
        raise ConditionError(
            f"fusion-weight condition violated: beta(1-beta) = {beta * (1 - beta):.6g} "
            f">= 1/(2 lambda_(n-1)(L_bar)) = {1 / (2 * lam2):.6g} (beta={beta}, lambda_(n-1)={lam2:.6g})"
        )
    lam = 1.0 - 2.0 * beta * (1.0 - beta) * lam2
    s = math.sqrt(lam)
    ls = abs(math.log(s))
    p_m = activation_probabilities(graph).p_m
    mu_i = cfg.per_agent("mu_e", n)
    delta_i = cfg.per_agent("delta_e", n)
    delta_e = float(delta_i.min())
    mu_e = float(mu_i.max()) / (2.0 * n) ** delta_e
    if mu_e <= 0 or delta_e <= 0:
        raise InvalidParameterError("trigger parameters mu_e and delta_e must be positive")

    mu_xi = 2.0 * beta**2 * n * mu_e / (1.0 - s)
    c = 2.0 * alpha * n**2 * (alpha * mu_g / (4.0 * p_m**2) + 2.0 * d_w) / (1.0 - s)
    tbar = _tbar(delta_e, ls)
    t = np.arange(1, tbar + 1, dtype=float)
    y1 = initial_consensus_error + mu_xi * float(np.sum(np.exp(t * ls) / t**delta_e))
    y2 = mu_xi / (s * (ls - delta_e / (tbar + 1)))
    y3 = c / (1.0 - s)
    return TheoryConstants(
        lam=lam, t_bar=tbar, Y1=y1, Y2=y2, Y3=y3, alpha=alpha, beta=beta, n=n, d_w=d_w,
        p_m=p_m, mu_e=mu_e, delta_e=delta_e, mu_g=mu_g, lambda_n_minus_1=lam2,
        initial_consensus_error=initial_consensus_error,
    )


def consensus_envelope(tc: TheoryConstants, ticks: np.ndarray) -> np.ndarray:
    """Envelope evaluated at universal tick indices (tick 0 -> Y1 + Y2 + Y3)."""
    ticks = np.asarray(ticks)
    return tc.envelope(np.maximum(ticks - 1, 0))


# ----------------------------------------------------------------------------
# KL bound of the averaged sample
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class KLBoundInputs:
    rho_U: float
    C_xi: float
    C_wbar: float
    L: float
    L_bar: float
    F0: float = 0.0

    def __post_init__(self):
        for name in ("rho_U", "C_xi", "C_wbar", "L", "L_bar"):
            if not getattr(self, name) > 0:
                raise InvalidParameterError(f"{name} must be strictly positive")
        if self.F0 < 0:
            raise InvalidParameterError("initial KL divergence F0 must be non-negative")


@dataclass(frozen=True)
class KLBound:
    case: int
    value: float
    B: float
    nu: float
    Y1_prime: float | None
    Y1_dprime: float | None
    Y2_prime: float
    k_bar2: int


def evaluate_kl_bound(inputs: KLBoundInputs, tc: TheoryConstants, k: int) -> KLBound:
    """Evaluate the bound on the KL divergence of the averaged sample at tick ``k+1``.

    Case 1 (``alpha rho + ln sqrt(lam) < 0``) decays the envelope term at
    the LSI rate, case 2 at the consensus rate.  The constant offset is
    ``B = nu / (1 - exp(-alpha rho))`` with

        nu = 3 a^3 Lbar^2 (C_xi + Lbar^2 C_wbar) + 2 a (C_xi + a Lbar^2 d_w) + K Y3,
        K  = 3 a^3 L^2 Lbar^2 / (2 p_m) + a L^2 / p_m.
    """
    a, rho = tc.alpha, inputs.rho_U
    L, Lb = inputs.L, inputs.L_bar
    s = tc.sqrt_lam
    K = 3.0 * a**3 * L**2 * Lb**2 / (2.0 * tc.p_m) + a * L**2 / tc.p_m
    r = a * rho + math.log(s)
    if r == 0.0:
        raise DegenerateCaseError("alpha*rho_U + ln(sqrt(lambda)) is exactly zero; the bound is undefined")
    nu = (
        3.0 * a**3 * Lb**2 * (inputs.C_xi + Lb**2 * inputs.C_wbar)
        + 2.0 * a * (inputs.C_xi + a * Lb**2 * tc.d_w)
        + K * tc.Y3
    )
    decay = -math.expm1(-a * rho)
    B = nu / decay
    t2 = _tbar(tc.delta_e, a * rho)
    k_bar2 = t2 + 1
    y2p = K * tc.Y2 / (a * rho - tc.delta_e / k_bar2)
    head = math.exp(-a * rho * (k + 1)) * inputs.F0 + y2p / (k + 1) ** tc.delta_e + B
    if r < 0:
        y1p = (1.0 - 1.0 / r) * K * tc.Y1
        return KLBound(1, head + y1p * math.exp(-a * rho * k), B, nu, y1p, None, y2p, k_bar2)
    y1pp = s ** (k + 1) / r * K * tc.Y1
    return KLBound(2, head + y1pp * s ** (k + 1), B, nu, None, y1pp, y2p, k_bar2)


# ----------------------------------------------------------------------------
# grid oracle for the two-parameter mixture posterior
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class PosteriorGrid:
    """Cell-centred density on a regular 2-D grid.  ``prob`` sums to one."""

    ranges: tuple[tuple[float, float], tuple[float, float]]
    resolution: tuple[int, int]
    log_density: np.ndarray
    prob: np.ndarray
    log_normalizer: float

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        out = []
        for (lo, hi), m in zip(self.ranges, self.resolution):
            h = (hi - lo) / m
            out.append(lo + h * (np.arange(m) + 0.5))
        return out[0], out[1]

    @property
    def cell_widths(self) -> tuple[float, float]:
        return tuple((hi - lo) / m for (lo, hi), m in zip(self.ranges, self.resolution))

    def marginal(self, axis: int) -> np.ndarray:
        return self.prob.sum(axis=1 - axis)

    def mean(self) -> np.ndarray:
        a0, a1 = self.axes
        return np.array([self.marginal(0) @ a0, self.marginal(1) @ a1])

    def cov(self) -> np.ndarray:
        a0, a1 = self.axes
        mu = self.mean()
        d0 = a0 - mu[0]
        d1 = a1 - mu[1]
        c00 = self.marginal(0) @ (d0 * d0)
        c11 = self.marginal(1) @ (d1 * d1)
        c01 = float(d0 @ self.prob @ d1)
        return np.array([[c00, c01], [c01, c11]])

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Inverse-CDF draws on the flattened grid, jittered uniformly within cells."""
        cdf = np.cumsum(self.prob.ravel())
        cdf /= cdf[-1]
        flat = np.searchsorted(cdf, rng.random(count), side="right")
        flat = np.minimum(flat, cdf.size - 1)
        i0, i1 = np.unravel_index(flat, self.prob.shape)
        (lo0, _), (lo1, _) = self.ranges
        h0, h1 = self.cell_widths
        return np.column_stack([lo0 + h0 * (i0 + rng.random(count)), lo1 + h1 * (i1 + rng.random(count))])

    def save(self, stem: str | os.PathLike) -> None:
        """``<stem>.bin`` row-major float64 log-density and ``<stem>.json`` header."""
        stem = os.fspath(stem)
        np.ascontiguousarray(self.log_density, dtype="<f8").tofile(stem + ".bin")
        with open(stem + ".json", "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "ranges": [list(r) for r in self.ranges],
                    "resolution": list(self.resolution),
                    "dtype": "float64",
                    "order": "row-major",
                    "axis0": "theta1",
                    "axis1": "theta2",
                    "content": "normalized log cell mass",
                    "log_normalizer": self.log_normalizer,
                },
                fh,
                indent=2,
            )

    @classmethod
    def load(cls, stem: str | os.PathLike) -> "PosteriorGrid":
        stem = os.fspath(stem)
        with open(stem + ".json", encoding="utf-8") as fh:
            hdr = json.load(fh)
        res = tuple(hdr["resolution"])
        logd = np.fromfile(stem + ".bin", dtype="<f8").reshape(res)
        prob = np.exp(logd)
        prob /= prob.sum()
        return cls(tuple(tuple(r) for r in hdr["ranges"]), res, logd, prob, float(hdr.get("log_normalizer", 0.0)))


def grid_posterior_gm(
    model: GaussianMixtureTiedMeans,
    ranges=((-3.0, 3.0), (-4.0, 4.0)),
    resolution=(400, 400),
    boundary_tol: float = 1e-6,
) -> PosteriorGrid:
    """Normalized exp(-E) of the full-data mixture posterior on a grid.

    Raises :class:`GridRangeError` (with widened ranges) if the density on
    the boundary exceeds ``boundary_tol`` times its maximum.
    """
    if np.isscalar(resolution):
        resolution = (int(resolution), int(resolution))
    resolution = tuple(int(r) for r in resolution)
    if min(resolution) < 100:
        raise InvalidParameterError(f"resolution must be >= 100 per axis, got {resolution}")
    ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)
    for lo, hi in ranges:
        if not hi > lo:
            raise InvalidParameterError(f"empty range ({lo}, {hi})")
    h = [(hi - lo) / m for (lo, hi), m in zip(ranges, resolution)]
    a0 = ranges[0][0] + h[0] * (np.arange(resolution[0]) + 0.5)
    a1 = ranges[1][0] + h[1] * (np.arange(resolution[1]) + 0.5)
    energy = model.energy_grid(a0[:, None], a1[None, :])
    logp = -energy
    top = logp.max()
    dens = np.exp(logp - top)
    edge = max(dens[0].max(), dens[-1].max(), dens[:, 0].max(), dens[:, -1].max())
    if edge > boundary_tol:
        widened = tuple((lo - 0.5 * (hi - lo), hi + 0.5 * (hi - lo)) for lo, hi in ranges)
        raise GridRangeError(
            f"posterior density on the grid boundary is {edge:.3g} of its maximum; widen the ranges, "
            f"e.g. to {widened}",
            suggested_ranges=widened,
        )
    total = dens.sum()
    prob = dens / total
    log_norm = float(top + math.log(total) + math.log(h[0] * h[1]))
    with np.errstate(divide="ignore"):
        logprob = np.log(prob)
    return PosteriorGrid(ranges, resolution, logprob, prob, log_norm)


# ----------------------------------------------------------------------------
# Wasserstein distances
# ----------------------------------------------------------------------------

def wasserstein1_1d(a, b) -> float:
    """W1 between two empirical distributions: integral of |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise InvalidParameterError("Wasserstein distance needs two non-empty sample sets")
    allv = np.concatenate([a, b])
    allv.sort(kind="mergesort")
    widths = np.diff(allv)
    fa = np.searchsorted(a, allv[:-1], side="right") / a.size
    fb = np.searchsorted(b, allv[:-1], side="right") / b.size
    return float(np.sum(np.abs(fa - fb) * widths))


def _w1_columns(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise W1 via the quantile integral; all columns share breakpoints."""
    na, nb = a.shape[0], b.shape[0]
    sa = np.sort(a, axis=0)
    sb = np.sort(b, axis=0)
    u = np.union1d(np.arange(1, na + 1) / na, np.arange(1, nb + 1) / nb)
    lo = np.concatenate([[0.0], u[:-1]])
    mid = 0.5 * (lo + u)
    ia = np.minimum((mid * na).astype(np.int64), na - 1)
    ib = np.minimum((mid * nb).astype(np.int64), nb - 1)
    return (u - lo) @ np.abs(sa[ia] - sb[ib])


def wasserstein_sliced(a, b, n_projections: int = 500, seed: int = 0, directions=None) -> float:
    """Mean 1-D W1 over random unit-direction projections of 2-D (or d-D) samples."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise InvalidParameterError("Wasserstein distance needs two non-empty sample sets")
    if a.shape[1] != b.shape[1]:
        raise InvalidParameterError("sample sets differ in dimension")
    if directions is None:
        u = np.random.default_rng(seed).standard_normal((n_projections, a.shape[1]))
    else:
        u = np.atleast_2d(np.asarray(directions, dtype=float))
    u = u / np.linalg.norm(u, axis=1, keepdims=True)
    return float(np.mean(_w1_columns(a @ u.T, b @ u.T)))


# ----------------------------------------------------------------------------
# classification accuracy and communication statistics
# ----------------------------------------------------------------------------

def predictive_probability(x: np.ndarray, w_samples: np.ndarray) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w_samples, dtype=float))
    z = x @ w.T
    return np.mean(0.5 * (1.0 + np.tanh(0.5 * z)), axis=1)


def accuracy(x_test: np.ndarray, y_test: np.ndarray, w_samples: np.ndarray) -> float:
    """Posterior-predictive accuracy: average the class-(+1) probability over
    samples, predict +1 only when it exceeds 0.5 (ties go to -1)."""
    prob = predictive_probability(x_test, w_samples)
    pred = np.where(prob > 0.5, 1.0, -1.0)
    return float(np.mean(pred == y_test))


@dataclass(frozen=True)
class CommStats:
    agent: int
    gos: int
    pct_gos: float
    et: int
    pct_et: float
    never_active: bool

    def to_dict(self):
        return asdict(self)


def comm_stats(trace: RunTrace) -> list[CommStats]:
    """Per-agent activity (``gos`` = times active) and broadcasts (``et``).

    ``pct_gos`` is relative to all universal ticks, ``pct_et`` relative to
    the agent's own activations; an agent that was never active reports
    ``pct_et = 0`` with ``never_active`` set.
    """
    rows = []
    for a in range(trace.n):
        tau = int(trace.tau[a])
        bc = int(trace.broadcasts[a])
        rows.append(
            CommStats(
                agent=a,
                gos=tau,
                pct_gos=tau / trace.ticks if trace.ticks else 0.0,
                et=bc,
                pct_et=bc / tau if tau else 0.0,
                never_active=tau == 0,
            )
        )
    return rows
