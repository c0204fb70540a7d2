import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairpanel.errors import (
    EmptyDataset,
    FairpanelError,
    MissingColumn,
    NonpositiveWeight,
    UnknownValue,
)
from fairpanel.schema import (
    Agent,
    Dataset,
    FeatureSchema,
    load_dataset,
    pair_indicator_matrix,
    population_stats_from_background,
    write_dataset,
)


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(two_feature_schema, tmp_path):
    path = write(tmp_path, "id,gender,age\n1,male,young\n2,female,old\n3,male,old\n")
    ds = load_dataset(path, two_feature_schema, "pool")
    assert len(ds) == 3
    assert ds.agents[0].vector == ("male", "young")
    assert all(a.weight == 1.0 for a in ds.agents)


def test_unknown_value_rejected_with_row(two_feature_schema, tmp_path):
    path = write(tmp_path, "id,gender,age\n1,male,young\n2,F,old\n")
    with pytest.raises(UnknownValue) as exc:
        load_dataset(path, two_feature_schema, "pool")
    assert exc.value.row == 2
    assert exc.value.feature == "gender"
    assert exc.value.value == "F"


def test_weighted_background_total(two_feature_schema, tmp_path):
    path = write(tmp_path, "id,gender,age,weight\n1,male,young,0.5\n2,female,old,1.5\n")
    ds = load_dataset(path, two_feature_schema, "background")
    assert ds.total_weight == pytest.approx(2.0)


def test_missing_feature_column(two_feature_schema, tmp_path):
    path = write(tmp_path, "id,gender\n1,male\n")
    with pytest.raises(MissingColumn):
        load_dataset(path, two_feature_schema, "pool")


def test_nonpositive_weight(two_feature_schema, tmp_path):
    path = write(tmp_path, "id,gender,age,weight\n1,male,young,0\n")
    with pytest.raises(NonpositiveWeight):
        load_dataset(path, two_feature_schema, "background")


def test_values_trimmed_not_case_folded(two_feature_schema, tmp_path):
    path = write(tmp_path, "id,gender,age\n1, male ,young\n")
    ds = load_dataset(path, two_feature_schema, "pool")
    assert ds.agents[0].vector[0] == "male"
    path2 = write(tmp_path, "id,gender,age\n1,Male,young\n", name="bad.csv")
    with pytest.raises(UnknownValue):
        load_dataset(path2, two_feature_schema, "pool")


def test_pool_requires_unit_weights(two_feature_schema):
    with pytest.raises(FairpanelError):
        Dataset(
            schema=two_feature_schema,
            agents=(Agent(id="x", vector=("male", "old"), weight=2.0),),
            kind="pool",
        )


def test_round_trip(two_feature_schema, tmp_path):
    path = write(
        tmp_path,
        "id,gender,age,weight,household_size\n1,male,young,0.75,2\n2,female,old,1.25,3\n",
    )
    ds = load_dataset(path, two_feature_schema, "background")
    out = tmp_path / "copy.csv"
    write_dataset(ds, out)
    again = load_dataset(out, two_feature_schema, "background")
    assert again.ids == ds.ids
    assert [a.vector for a in again.agents] == [a.vector for a in ds.agents]
    assert [a.weight for a in again.agents] == [a.weight for a in ds.agents]
    assert [a.household_size for a in again.agents] == [a.household_size for a in ds.agents]


def test_population_stats_equal_weights(two_feature_schema):
    agents = (
        Agent(id="1", vector=("male", "young"), weight=1.0),
        Agent(id="2", vector=("female", "old"), weight=1.0),
    )
    ds = Dataset(schema=two_feature_schema, agents=agents, kind="background")
    stats = population_stats_from_background(ds, 100)
    assert stats.counts[("gender", "male")] == pytest.approx(50)
    assert stats.counts[("gender", "female")] == pytest.approx(50)


def test_population_stats_weighted(two_feature_schema):
    agents = (
        Agent(id="1", vector=("male", "young"), weight=1.0),
        Agent(id="2", vector=("female", "old"), weight=3.0),
    )
    ds = Dataset(schema=two_feature_schema, agents=agents, kind="background")
    stats = population_stats_from_background(ds, 100)
    assert stats.counts[("gender", "male")] == pytest.approx(25)
    assert stats.counts[("gender", "female")] == pytest.approx(75)


def test_population_stats_empty(two_feature_schema):
    ds = Dataset(schema=two_feature_schema, agents=(), kind="background")
    with pytest.raises(EmptyDataset):
        population_stats_from_background(ds, 10)


@settings(max_examples=50, deadline=None)
@given(
    weights=st.lists(st.floats(0.01, 10.0), min_size=1, max_size=30),
    n=st.integers(1, 10_000),
    seed=st.integers(0, 2**32 - 1),
)
def test_population_stats_sum_to_n(weights, n, seed):
    # oracle: direct summation of the weighted fractions per feature
    schema = FeatureSchema(
        features=("gender", "age"),
        values_per_feature={"gender": ("male", "female"), "age": ("young", "old")},
    )
    rng = np.random.default_rng(seed)
    genders = ["male", "female"]
    ages = ["young", "old"]
    agents = tuple(
        Agent(
            id=str(i),
            vector=(genders[rng.integers(2)], ages[rng.integers(2)]),
            weight=w,
        )
        for i, w in enumerate(weights)
    )
    ds = Dataset(schema=schema, agents=agents, kind="background")
    stats = population_stats_from_background(ds, n)
    for f in schema.features:
        total = sum(stats.counts[(f, v)] for v in schema.values_per_feature[f])
        assert abs(total - n) <= 1e-6 * max(1, n)


def test_pair_indicator_matrix(two_feature_schema):
    agents = (
        Agent(id="1", vector=("male", "young")),
        Agent(id="2", vector=("female", "old")),
    )
    ds = Dataset(schema=two_feature_schema, agents=agents, kind="pool")
    R = pair_indicator_matrix(ds)
    # pair order: (gender,male), (gender,female), (age,young), (age,old)
    assert R.tolist() == [[1, 0], [0, 1], [1, 0], [0, 1]]
    assert R.sum(axis=0).tolist() == [2, 2]


def test_schema_validation():
    with pytest.raises(FairpanelError):
        FeatureSchema(features=("g",), values_per_feature={"g": ("only",)})
    with pytest.raises(FairpanelError):
        FeatureSchema(features=("g",), values_per_feature={"g": ("a", "a")})
