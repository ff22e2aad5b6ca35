"""Posterior models split across agents, plus data generation and sharding.

Agent ``i`` only sees its shard ``X_i`` and works with the local energy

    E_i(w) = -log p(X_i | w) - (1/n) log p(w)

so that ``sum_i E_i`` is the full-data negative log posterior (up to the
evidence).  Models expose the likelihood and prior parts separately so the
isolated baseline can weight the prior by one instead of ``1/n``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from gossip_langevin.errors import (
    InsufficientDataError,
    InvalidParameterError,
    MissingDataError,
    NumericDomainError,
    ParseError,
    PartitionError,
    SchemaError,
)

__all__ = [
    "GaussianMixtureTiedMeans",
    "LogisticRegressionModel",
    "MagicDataset",
    "PosteriorModel",
    "QuadraticModel",
    "Shard",
    "empirical_lipschitz",
    "gm_generate",
    "load_magic_csv",
    "load_magic_dataset",
    "partition_equal",
    "partition_heterogeneous",
    "standardize",
    "stratified_split",
]

MAGIC_ROWS = 19020
MAGIC_FEATURES = 10


def _check_finite(w: np.ndarray) -> np.ndarray:
    if type(w) is not np.ndarray or w.dtype != np.float64:
        w = np.asarray(w, dtype=float)
    if not np.isfinite(w).all():
        raise NumericDomainError(f"parameter vector has non-finite entries: {w}")
    return w


@dataclass(frozen=True)
class Shard:
    agent_id: int
    indices: np.ndarray

    @property
    def count(self) -> int:
        return int(self.indices.size)


class PosteriorModel:
    """Interface shared by every model.

    Subclasses implement the per-shard negative log-likelihood and the
    negative log-prior (with their gradients); the local energies, the full
    energy and the isolated-agent energy are assembled here.
    """

    d_w: int
    n_agents: int

    def neg_log_lik(self, i: int, w: np.ndarray) -> float:
        raise NotImplementedError

    def grad_neg_log_lik(self, i: int, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def neg_log_prior(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def grad_neg_log_prior(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def energy_i(self, i: int, w, prior_weight: float | None = None) -> float:
        w = _check_finite(w)
        pw = 1.0 / self.n_agents if prior_weight is None else prior_weight
        return self.neg_log_lik(i, w) + pw * self.neg_log_prior(w)

    def grad_energy_i(self, i: int, w, prior_weight: float | None = None) -> np.ndarray:
        w = _check_finite(w)
        pw = 1.0 / self.n_agents if prior_weight is None else prior_weight
        return self.grad_neg_log_lik(i, w) + pw * self.grad_neg_log_prior(w)

    def energy(self, w) -> float:
        """Full-data energy, computed directly rather than via the shards."""
        raise NotImplementedError

    def grad_energy(self, w) -> np.ndarray:
        raise NotImplementedError

    def shard_sizes(self) -> np.ndarray:
        raise NotImplementedError


# ----------------------------------------------------------------------------
# Gaussian mixture with tied means
# ----------------------------------------------------------------------------

def gm_generate(
    rng: np.random.Generator,
    count: int = 100,
    theta1: float = 0.0,
    theta2: float = 1.0,
    sigma_x_sq: float = 2.0,
) -> np.ndarray:
    """Draw ``count`` points from 0.5 N(theta1, s^2) + 0.5 N(theta1 + theta2, s^2)."""
    if count < 1:
        raise InvalidParameterError(f"count must be >= 1, got {count}")
    component = rng.random(count) < 0.5
    means = np.where(component, theta1 + theta2, theta1)
    return means + math.sqrt(sigma_x_sq) * rng.standard_normal(count)


@dataclass(frozen=True, eq=False)
class GaussianMixtureTiedMeans(PosteriorModel):
    """w = (theta1, theta2); priors N(0, sigma1_sq), N(0, sigma2_sq)."""

    shards: tuple[np.ndarray, ...]
    sigma1_sq: float = 10.0
    sigma2_sq: float = 1.0
    sigma_x_sq: float = 2.0
    d_w: int = field(default=2, init=False)

    @classmethod
    def from_partition(cls, data: np.ndarray, shards: list[Shard], **kwargs) -> "GaussianMixtureTiedMeans":
        return cls(shards=tuple(np.asarray(data[s.indices], dtype=float) for s in shards), **kwargs)

    @property
    def n_agents(self) -> int:
        return len(self.shards)

    @property
    def all_data(self) -> np.ndarray:
        return np.concatenate(self.shards) if self.shards else np.zeros(0)

    def shard_sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.shards])

    def _nll(self, x: np.ndarray, w: np.ndarray) -> float:
        t1, t2 = w
        s2 = self.sigma_x_sq
        a = -((x - t1) ** 2) / (2 * s2)
        b = -((x - t1 - t2) ** 2) / (2 * s2)
        log_norm = math.log(2.0) + 0.5 * math.log(2 * math.pi * s2)
        return float(np.sum(log_norm - np.logaddexp(a, b)))

    def _grad_nll(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        t1, t2 = w
        s2 = self.sigma_x_sq
        r1 = x - t1
        r2 = r1 - t2
        # responsibility of the (theta1 + theta2) component
        resp = 0.5 * (1.0 + np.tanh(0.25 * (r1 * r1 - r2 * r2) / s2))
        g2 = -(resp @ r2) / s2
        g1 = (t2 * resp.sum() - r1.sum()) / s2
        return np.array([g1, g2])

    def neg_log_lik(self, i, w):
        return self._nll(self.shards[i], w)

    def grad_neg_log_lik(self, i, w):
        return self._grad_nll(self.shards[i], w)

    def neg_log_prior(self, w):
        t1, t2 = w
        return float(
            t1 * t1 / (2 * self.sigma1_sq)
            + t2 * t2 / (2 * self.sigma2_sq)
            + 0.5 * math.log(2 * math.pi * self.sigma1_sq)
            + 0.5 * math.log(2 * math.pi * self.sigma2_sq)
        )

    def grad_neg_log_prior(self, w):
        return np.array([w[0] / self.sigma1_sq, w[1] / self.sigma2_sq])

    def energy(self, w):
        w = _check_finite(w)
        return self._nll(self.all_data, w) + self.neg_log_prior(w)

    def grad_energy(self, w):
        w = _check_finite(w)
        return self._grad_nll(self.all_data, w) + self.grad_neg_log_prior(w)

    def energy_grid(self, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        """Full energy on a broadcastable (theta1, theta2) grid."""
        s2 = self.sigma_x_sq
        out = t1 * t1 / (2 * self.sigma1_sq) + t2 * t2 / (2 * self.sigma2_sq)
        out = out + 0.5 * math.log(4 * math.pi**2 * self.sigma1_sq * self.sigma2_sq)
        log_norm = math.log(2.0) + 0.5 * math.log(2 * math.pi * s2)
        for x in self.all_data:
            a = -((x - t1) ** 2) / (2 * s2)
            b = -((x - t1 - t2) ** 2) / (2 * s2)
            out = out + (log_norm - np.logaddexp(a, b))
        return out


# ----------------------------------------------------------------------------
# Bayesian logistic regression
# ----------------------------------------------------------------------------

def _log1pexp(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class LogisticRegressionModel(PosteriorModel):
    """Labels in {-1, +1}; isotropic Gaussian prior with ``prior_variance``."""

    features: tuple[np.ndarray, ...]
    labels: tuple[np.ndarray, ...]
    prior_variance: float = 10.0

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise InvalidParameterError("features and labels must have one entry per agent")
        if self.prior_variance <= 0:
            raise InvalidParameterError("prior_variance must be positive")
        for y in self.labels:
            if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
                raise InvalidParameterError("logistic labels must be -1 or +1")
        dims = {x.shape[1] for x in self.features}
        if len(dims) != 1:
            raise InvalidParameterError(f"inconsistent feature dimensions {dims}")

    @classmethod
    def from_partition(cls, x: np.ndarray, y: np.ndarray, shards: list[Shard], **kwargs):
        return cls(
            features=tuple(np.ascontiguousarray(x[s.indices], dtype=float) for s in shards),
            labels=tuple(np.asarray(y[s.indices], dtype=float) for s in shards),
            **kwargs,
        )

    @property
    def d_w(self) -> int:
        return self.features[0].shape[1]

    @property
    def n_agents(self) -> int:
        return len(self.features)

    def shard_sizes(self):
        return np.array([x.shape[0] for x in self.features])

    @staticmethod
    def _nll(x, y, w):
        return float(np.sum(_log1pexp(-y * (x @ w))))

    @staticmethod
    def _grad_nll(x, y, w):
        m = y * (x @ w)
        return -(x.T @ (y * _sigmoid(-m)))

    def neg_log_lik(self, i, w):
        return self._nll(self.features[i], self.labels[i], w)

    def grad_neg_log_lik(self, i, w):
        return self._grad_nll(self.features[i], self.labels[i], w)

    def neg_log_prior(self, w):
        return float(w @ w) / (2 * self.prior_variance)

    def grad_neg_log_prior(self, w):
        return w / self.prior_variance

    def energy(self, w):
        w = _check_finite(w)
        x = np.concatenate(self.features)
        y = np.concatenate(self.labels)
        return self._nll(x, y, w) + self.neg_log_prior(w)

    def grad_energy(self, w):
        w = _check_finite(w)
        x = np.concatenate(self.features)
        y = np.concatenate(self.labels)
        return self._grad_nll(x, y, w) + self.grad_neg_log_prior(w)


@dataclass(frozen=True, eq=False)
class QuadraticModel(PosteriorModel):
    """E_i(w) = 0.5 w^T P_i w.  Gaussian test target; no data, no prior split."""

    precisions: tuple[np.ndarray, ...]

    @classmethod
    def isotropic(cls, n_agents: int, d_w: int, scale: float = 1.0) -> "QuadraticModel":
        return cls(precisions=tuple(scale * np.eye(d_w) for _ in range(n_agents)))

    @property
    def d_w(self):
        return self.precisions[0].shape[0]

    @property
    def n_agents(self):
        return len(self.precisions)

    def shard_sizes(self):
        return np.zeros(self.n_agents, dtype=int)

    def neg_log_lik(self, i, w):
        return 0.5 * float(w @ self.precisions[i] @ w)

    def grad_neg_log_lik(self, i, w):
        return self.precisions[i] @ w

    def neg_log_prior(self, w):
        return 0.0

    def grad_neg_log_prior(self, w):
        return np.zeros_like(w)

    def energy(self, w):
        w = _check_finite(w)
        return 0.5 * float(w @ sum(self.precisions) @ w)

    def grad_energy(self, w):
        w = _check_finite(w)
        return sum(self.precisions) @ w


def empirical_lipschitz(
    model: PosteriorModel,
    agent: int,
    rng: np.random.Generator,
    radius: float = 5.0,
    n_pairs: int = 1000,
) -> float:
    """Largest observed gradient difference quotient over random pairs in a ball."""

    def draw():
        v = rng.standard_normal(model.d_w)
        v *= radius * rng.random() ** (1.0 / model.d_w) / np.linalg.norm(v)
        return v

    best = 0.0
    for _ in range(n_pairs):
        a, b = draw(), draw()
        dist = np.linalg.norm(a - b)
        if dist == 0:
            continue
        q = np.linalg.norm(model.grad_energy_i(agent, a) - model.grad_energy_i(agent, b)) / dist
        best = max(best, float(q))
    return best


# ----------------------------------------------------------------------------
# Data ingestion and partitioning
# ----------------------------------------------------------------------------

def load_magic_csv(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    """Parse the MAGIC gamma telescope file.

    Rows are ten comma-separated floats followed by ``g`` (gamma, +1) or
    ``h`` (hadron, -1); no header.  Returns raw (unstandardized) features;
    standardize with training-split statistics via :func:`standardize`.
    """
    if not os.path.exists(path):
        raise MissingDataError(
            f"MAGIC dataset not found at {path}. Download magic04.data from "
            "https://archive.ics.uci.edu/dataset/159/magic+gamma+telescope and point "
            "GOSSIP_LANGEVIN_DATA at its directory."
        )
    feats, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != MAGIC_FEATURES + 1:
                raise SchemaError(f"expected {MAGIC_FEATURES + 1} fields, got {len(row)}", line=lineno)
            cls = row[-1].strip()
            if cls not in ("g", "h"):
                raise SchemaError(f"class letter must be 'g' or 'h', got {cls!r}", line=lineno)
            try:
                feats.append([float(c) for c in row[:-1]])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
            labels.append(1.0 if cls == "g" else -1.0)
    return np.array(feats, dtype=float), np.array(labels, dtype=float)


def stratified_split(labels: np.ndarray, test_fraction: float, rng: np.random.Generator):
    """Index arrays (train, test); each class contributes ``round(test_fraction * size)`` to test."""
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(test_fraction * idx.size))
        test.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def standardize(train: np.ndarray, *others: np.ndarray):
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0] = 1.0
    out = [(train - mean) / std] + [(o - mean) / std for o in others]
    return tuple(out)


@dataclass(frozen=True)
class MagicDataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray


def load_magic_dataset(
    path: str | os.PathLike,
    rng: np.random.Generator,
    test_fraction: float = 0.1,
    add_bias: bool = False,
) -> MagicDataset:
    x, y = load_magic_csv(path)
    tr, te = stratified_split(y, test_fraction, rng)
    x_tr, x_te = standardize(x[tr], x[te])
    if add_bias:
        x_tr = np.hstack([x_tr, np.ones((x_tr.shape[0], 1))])
        x_te = np.hstack([x_te, np.ones((x_te.shape[0], 1))])
    return MagicDataset(x_tr, y[tr], x_te, y[te])


def partition_equal(count: int, n_agents: int, rng: np.random.Generator) -> list[Shard]:
    """Random permutation cut into contiguous blocks; the first ``count % n``
    agents get one extra point."""
    if n_agents > count:
        raise InsufficientDataError(f"{n_agents} agents but only {count} data points")
    perm = rng.permutation(count)
    base, extra = divmod(count, n_agents)
    shards, start = [], 0
    for a in range(n_agents):
        size = base + (1 if a < extra else 0)
        shards.append(Shard(a, np.sort(perm[start:start + size])))
        start += size
    return shards


def partition_heterogeneous(
    labels: np.ndarray,
    n_agents: int,
    concentration: float,
    rng: np.random.Generator,
    max_attempts: int = 100,
) -> list[Shard]:
    """Per-class Dirichlet allocation of data points to agents.

    For every class, proportions ``q ~ Dirichlet(concentration * 1_n)`` split
    that class's shuffled indices across agents.  Draws that leave an agent
    empty are rejected and redrawn.
    """
    if concentration <= 0:
        raise InvalidParameterError(f"concentration must be positive, got {concentration}")
    if n_agents > labels.size:
        raise InsufficientDataError(f"{n_agents} agents but only {labels.size} data points")
    classes = np.unique(labels)
    for _ in range(max_attempts):
        parts: list[list[np.ndarray]] = [[] for _ in range(n_agents)]
        for cls in classes:
            idx = np.flatnonzero(labels == cls)
            idx = idx[rng.permutation(idx.size)]
            q = rng.dirichlet(np.full(n_agents, concentration))
            cuts = np.floor(np.cumsum(q)[:-1] * idx.size).astype(int)
            for a, chunk in enumerate(np.split(idx, cuts)):
                parts[a].append(chunk)
        shards = [Shard(a, np.sort(np.concatenate(p))) for a, p in enumerate(parts)]
        if all(s.count > 0 for s in shards):
            return shards
    raise PartitionError(
        f"could not draw a partition without empty shards in {max_attempts} attempts "
        f"(concentration={concentration}, n_agents={n_agents})"
    )
