"""Feature schemas, agent records, CSV ingestion and population statistics.

The feature-value pairs of a schema carry a stable global ordering (feature
order, then value order); every index-based structure in the package refers
to that ordering.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    FairpanelError,
    MissingColumn,
    NonpositiveWeight,
    UnknownValue,
)

DATASET_KINDS = ("pool", "background", "population")

WEIGHT_COLUMN = "weight"
HOUSEHOLD_COLUMN = "household_size"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered features and, per feature, the ordered admissible values."""

    features: tuple[str, ...]
    values_per_feature: dict[str, tuple[str, ...]]

    def __post_init__(self):
        if len(set(self.features)) != len(self.features):
            raise FairpanelError("duplicate feature names in schema")
        for f in self.features:
            values = self.values_per_feature.get(f)
            if values is None:
                raise FairpanelError(f"no value list for feature {f!r}")
            if len(values) < 2:
                raise FairpanelError(f"feature {f!r} needs at least 2 values")
            if len(set(values)) != len(values):
                raise FairpanelError(f"duplicate values for feature {f!r}")

    @property
    def num_features(self) -> int:
        return len(self.features)

    @property
    def pairs(self) -> tuple[tuple[str, str], ...]:
        """All feature-value pairs in the stable global ordering."""
        return tuple((f, v) for f in self.features for v in self.values_per_feature[f])

    def pair_index(self) -> dict[tuple[str, str], int]:
        return {pair: i for i, pair in enumerate(self.pairs)}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        feats = []
        values = {}
        for entry in data["features"]:
            feats.append(entry["name"])
            values[entry["name"]] = tuple(str(v) for v in entry["values"])
        return cls(features=tuple(feats), values_per_feature=values)

    @classmethod
    def from_json_file(cls, path) -> "FeatureSchema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f, "values": list(self.values_per_feature[f])}
                for f in self.features
            ]
        }


@dataclass(frozen=True)
class Agent:
    """One individual: id, one value per feature in schema order, weight."""

    id: str
    vector: tuple[str, ...]
    weight: float = 1.0
    household_size: Optional[float] = None

    def __post_init__(self):
        if self.weight < 0:
            raise FairpanelError(f"agent {self.id!r}: negative weight {self.weight}")


@dataclass(frozen=True)
class Dataset:
    schema: FeatureSchema
    agents: tuple[Agent, ...]
    kind: str

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise FairpanelError(f"unknown dataset kind {self.kind!r}")
        nf = self.schema.num_features
        for agent in self.agents:
            if len(agent.vector) != nf:
                raise FairpanelError(f"agent {agent.id!r} has {len(agent.vector)} values, expected {nf}")
            for f, v in zip(self.schema.features, agent.vector):
                if v not in self.schema.values_per_feature[f]:
                    raise FairpanelError(f"agent {agent.id!r}: value {v!r} not admissible for {f!r}")
            if self.kind == "pool" and agent.weight != 1.0:
                raise FairpanelError(f"pool agent {agent.id!r} has non-unit weight {agent.weight}")

    def __len__(self) -> int:
        return len(self.agents)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.agents)

    @property
    def total_weight(self) -> float:
        return float(sum(a.weight for a in self.agents))


@dataclass(frozen=True)
class PopulationStats:
    """Population size n and per-pair counts (real-valued: weighted estimates)."""

    n: int
    counts: dict[tuple[str, str], float]
    schema: FeatureSchema

    def __post_init__(self):
        for f in self.schema.features:
            total = sum(self.counts.get((f, v), 0.0) for v in self.schema.values_per_feature[f])
            if abs(total - self.n) > 1e-6 * max(1.0, self.n):
                raise FairpanelError(
                    f"per-value counts for feature {f!r} sum to {total}, expected {self.n}"
                )

    def share(self, pair: tuple[str, str]) -> float:
        return self.counts.get(pair, 0.0) / self.n


def load_dataset(path, schema: FeatureSchema, kind: str) -> Dataset:
    """Read a CSV (`id` column, one column per feature, optional `weight`
    and `household_size` columns) into a Dataset.

    Values are matched case-sensitively after trimming surrounding
    whitespace. Rows with inadmissible values are rejected with their
    1-based data-row number.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MissingColumn("id") from None
        col = {name: i for i, name in enumerate(header)}
        if "id" not in col:
            raise MissingColumn("id")
        for f in schema.features:
            if f not in col:
                raise MissingColumn(f)
        weight_col = col.get(WEIGHT_COLUMN)
        household_col = col.get(HOUSEHOLD_COLUMN)

        agents = []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            vector = []
            for f in schema.features:
                value = row[col[f]].strip()
                if value not in schema.values_per_feature[f]:
                    raise UnknownValue(rownum, f, value)
                vector.append(value)
            weight = 1.0
            if weight_col is not None and row[weight_col].strip():
                weight = float(row[weight_col])
                if weight <= 0:
                    raise NonpositiveWeight(rownum, weight)
            household = None
            if household_col is not None and row[household_col].strip():
                household = float(row[household_col])
            agents.append(
                Agent(
                    id=row[col["id"]].strip(),
                    vector=tuple(vector),
                    weight=weight,
                    household_size=household,
                )
            )
    return Dataset(schema=schema, agents=tuple(agents), kind=kind)


def write_dataset(dataset: Dataset, path) -> None:
    """Write a Dataset back to CSV (inverse of load_dataset up to formatting)."""
    has_household = any(a.household_size is not None for a in dataset.agents)
    header = ["id", *dataset.schema.features, WEIGHT_COLUMN]
    if has_household:
        header.append(HOUSEHOLD_COLUMN)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for a in dataset.agents:
            row = [a.id, *a.vector, repr(a.weight)]
            if has_household:
                row.append("" if a.household_size is None else repr(a.household_size))
            writer.writerow(row)


def population_stats_from_background(background: Dataset, n: int) -> PopulationStats:
    """Scale the weighted background composition up to a population of size n."""
    if background.kind != "background":
        raise FairpanelError(f"expected a background dataset, got kind {background.kind!r}")
    total = background.total_weight
    if len(background) == 0 or total <= 0:
        raise EmptyDataset("background sample is empty or has zero total weight")
    counts: dict[tuple[str, str], float] = {p: 0.0 for p in background.schema.pairs}
    for agent in background.agents:
        for f, v in zip(background.schema.features, agent.vector):
            counts[(f, v)] += agent.weight
    for pair in counts:
        counts[pair] = n * counts[pair] / total
    return PopulationStats(n=n, counts=counts, schema=background.schema)


# --- index helpers shared by the numeric modules ---

def agent_pair_indices(dataset: Dataset) -> np.ndarray:
    """(n_agents, n_features) array of global pair indices per agent."""
    index = dataset.schema.pair_index()
    out = np.empty((len(dataset), dataset.schema.num_features), dtype=np.int64)
    for i, agent in enumerate(dataset.agents):
        for j, (f, v) in enumerate(zip(dataset.schema.features, agent.vector)):
            out[i, j] = index[(f, v)]
    return out


def pair_indicator_matrix(dataset: Dataset) -> np.ndarray:
    """(n_pairs, n_agents) 0/1 matrix marking which agents carry each pair."""
    n_pairs = len(dataset.schema.pairs)
    out = np.zeros((n_pairs, len(dataset)))
    idx = agent_pair_indices(dataset)
    cols = np.repeat(np.arange(len(dataset)), dataset.schema.num_features)
    out[idx.ravel(), cols] = 1.0
    return out
