"""Participation-probability estimation from a positively-labeled pool and
a weighted unlabeled background sample.

Participation follows a multiplicative model: a base coin plus one coin per
feature, all of which must come up heads. In log-parameters theta (theta_j =
log beta_j, constrained <= 0) the contaminated-controls log-likelihood

    L(theta) = sum_i ( z_i * theta.x_i - w_i * log(qbar*|B|/|P| + e^{theta.x_i}) )

is concave, so projected gradient ascent with backtracking suffices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import Diverged, FairpanelError, MissingHouseholdColumn, SchemaMismatch
from .schema import Agent, Dataset, FeatureSchema

DEFAULT_STEP = 1e-5
DEFAULT_ITERS = 100_000


@dataclass(frozen=True)
class DesignRow:
    """One-hot indicator row: intercept, then one indicator per feature value."""

    indicators: np.ndarray  # uint8, length 1 + #pairs, first entry always 1
    z: int                  # 1 for pool rows, 0 for background rows
    w: float


@dataclass(frozen=True)
class ParticipationModel:
    theta: np.ndarray
    schema: FeatureSchema
    qbar: float

    def __post_init__(self):
        if np.any(self.theta > 1e-12):
            raise FairpanelError("log-parameters must be <= 0")

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.theta)

    def beta_table(self) -> list[tuple[str, str, float]]:
        """(feature, value, beta) rows; the intercept appears first."""
        rows = [("<intercept>", "", float(math.exp(self.theta[0])))]
        for j, (f, v) in enumerate(self.schema.pairs, start=1):
            rows.append((f, v, float(math.exp(self.theta[j]))))
        return rows

    def to_dict(self, schema_ref: str = "") -> dict:
        return {
            "qbar": self.qbar,
            "theta": [float(t) for t in self.theta],
            "schema_ref": schema_ref,
        }

    def save(self, path, schema_ref: str = "") -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(schema_ref), fh, indent=1)

    @classmethod
    def load(cls, path, schema: FeatureSchema) -> "ParticipationModel":
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        theta = np.asarray(data["theta"], dtype=np.float64)
        expected = 1 + len(schema.pairs)
        if theta.size != expected:
            raise SchemaMismatch(
                f"model has {theta.size} parameters, schema implies {expected}"
            )
        return cls(theta=theta, schema=schema, qbar=float(data["qbar"]))


def _indicator_vector(agent: Agent, schema: FeatureSchema, index) -> np.ndarray:
    row = np.zeros(1 + len(schema.pairs), dtype=np.uint8)
    row[0] = 1
    for f, v in zip(schema.features, agent.vector):
        row[1 + index[(f, v)]] = 1
    return row


def build_design(pool: Dataset, background: Dataset) -> list[DesignRow]:
    """One row per pool member (z=1, w=1) and background member (z=0, w=weight)."""
    if pool.schema != background.schema:
        raise SchemaMismatch("pool and background use different schemas")
    index = pool.schema.pair_index()
    rows = []
    for agent in pool.agents:
        rows.append(DesignRow(_indicator_vector(agent, pool.schema, index), z=1, w=1.0))
    for agent in background.agents:
        rows.append(DesignRow(_indicator_vector(agent, pool.schema, index), z=0, w=agent.weight))
    return rows


def _design_arrays(rows: Sequence[DesignRow]):
    """Compact one-hot rows to per-row set-index arrays for the kernels."""
    m = len(rows)
    if m == 0:
        raise FairpanelError("no design rows")
    d = int(rows[0].indicators.sum())
    idx = np.empty((m, d), dtype=np.int64)
    z = np.empty(m, dtype=np.float64)
    w = np.empty(m, dtype=np.float64)
    for i, row in enumerate(rows):
        nz = np.flatnonzero(row.indicators)
        if nz.size != d or row.indicators[0] != 1:
            raise FairpanelError(f"malformed design row {i}")
        idx[i] = nz
        z[i] = row.z
        w[i] = row.w
    return idx, z, w


def _contamination(qbar: float, n_background: float, n_pool: float) -> float:
    if not 0 < qbar < 1:
        raise FairpanelError(f"qbar must be in (0, 1), got {qbar}")
    if n_background <= 0 or n_pool <= 0:
        raise FairpanelError("background and pool sizes must be positive")
    return qbar * n_background / n_pool


def log_likelihood(
    theta: Sequence[float],
    rows: Sequence[DesignRow],
    qbar: float,
    n_background: float,
    n_pool: float,
) -> float:
    theta = np.asarray(theta, dtype=np.float64)
    idx, z, w = _design_arrays(rows)
    grad = np.zeros(theta.size)
    return float(kernels.mle_value_grad(idx, z, w, _contamination(qbar, n_background, n_pool), theta, grad))


def log_likelihood_gradient(
    theta: Sequence[float],
    rows: Sequence[DesignRow],
    qbar: float,
    n_background: float,
    n_pool: float,
) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    idx, z, w = _design_arrays(rows)
    grad = np.zeros(theta.size)
    kernels.mle_value_grad(idx, z, w, _contamination(qbar, n_background, n_pool), theta, grad)
    return grad


def fit_mle(
    rows: Sequence[DesignRow],
    qbar: float,
    n_background: float,
    n_pool: float,
    *,
    schema: FeatureSchema,
    step: float = DEFAULT_STEP,
    iters: int = DEFAULT_ITERS,
    rng=None,
    return_trace: bool = False,
):
    """Projected gradient ascent on the contaminated-controls likelihood.

    theta is clamped componentwise to <= 0 after every step; backtracking
    halves the step whenever the objective would decrease, so the
    objective sequence is nondecreasing. rng is accepted for interface
    uniformity; the ascent itself is deterministic.
    """
    if step <= 0:
        raise FairpanelError("step must be positive")
    idx, z, w = _design_arrays(rows)
    M = 1 + len(schema.pairs)
    if idx.max() >= M:
        raise SchemaMismatch("design rows reference more indicators than the schema has")
    c = _contamination(qbar, n_background, n_pool)

    theta = np.zeros(M)
    theta[0] = math.log(qbar)  # start at the mean-rate model
    grad = np.zeros(M)
    value = kernels.mle_value_grad(idx, z, w, c, theta, grad)
    if not np.isfinite(value):
        raise Diverged(f"objective is {value} at initialization")
    trace = [value]

    cand_grad = np.zeros(M)
    stalled = 0
    for _ in range(iters):
        s = step
        while True:
            cand = np.minimum(theta + s * grad, 0.0)
            cand_value = kernels.mle_value_grad(idx, z, w, c, cand, cand_grad)
            if not np.isfinite(cand_value):
                raise Diverged("objective became non-finite during ascent")
            if cand_value >= value:
                break
            s *= 0.5
            if s < 1e-300:
                cand, cand_value = theta, value
                cand_grad[:] = grad
                break
        moved = bool(np.any(cand != theta))
        theta, value = cand, cand_value
        grad, cand_grad = cand_grad.copy(), grad
        if return_trace:
            trace.append(value)
        stalled = 0 if moved else stalled + 1
        if stalled >= 2:
            break

    model = ParticipationModel(theta=np.minimum(theta, 0.0), schema=schema, qbar=qbar)
    if return_trace:
        return model, np.asarray(trace)
    return model


def predict_q(model: ParticipationModel, agent: Agent) -> float:
    """q = exp(theta . x) for the agent's indicator vector."""
    if len(agent.vector) != model.schema.num_features:
        raise SchemaMismatch("agent does not conform to the model schema")
    index = model.schema.pair_index()
    total = model.theta[0]
    for f, v in zip(model.schema.features, agent.vector):
        if v not in model.schema.values_per_feature[f]:
            raise SchemaMismatch(f"value {v!r} not admissible for feature {f!r}")
        total += model.theta[1 + index[(f, v)]]
    return float(math.exp(total))


def predict_q_dataset(model: ParticipationModel, dataset: Dataset) -> np.ndarray:
    if dataset.schema != model.schema:
        raise SchemaMismatch("dataset does not conform to the model schema")
    index = model.schema.pair_index()
    theta_pairs = model.theta[1:]
    out = np.empty(len(dataset))
    for i, agent in enumerate(dataset.agents):
        total = model.theta[0]
        for f, v in zip(model.schema.features, agent.vector):
            total += theta_pairs[index[(f, v)]]
        out[i] = math.exp(total)
    return out


def mean_predicted_q(model: ParticipationModel, dataset: Dataset) -> float:
    """Weighted mean of predicted q over a dataset (calibration self-check)."""
    q = predict_q_dataset(model, dataset)
    weights = np.array([a.weight for a in dataset.agents])
    return float((q * weights).sum() / weights.sum())


def estimate_qbar(pool_size: int, letters: int, persons_per_household: float) -> float:
    """Mean participation probability: pool size over effectively invited people."""
    if pool_size <= 0 or letters <= 0 or persons_per_household <= 0:
        raise FairpanelError("all inputs must be positive")
    return pool_size / (letters * persons_per_household)


def household_average(background: Dataset) -> float:
    """Average eligible people per household, reweighted so that sampling
    individuals does not over-count large households:
    sum(w_i) / sum(w_i / h_i)."""
    num = 0.0
    den = 0.0
    for agent in background.agents:
        if agent.household_size is None:
            raise MissingHouseholdColumn(f"agent {agent.id!r} has no household size")
        if agent.household_size < 1:
            raise FairpanelError(f"agent {agent.id!r}: household size below 1")
        num += agent.weight
        den += agent.weight / agent.household_size
    if den == 0:
        raise FairpanelError("background has zero total weight")
    return num / den
