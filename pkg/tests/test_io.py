import csv
import json
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brachistochrone import io
from brachistochrone.baselines import perfect_transfer_schedule, stepwise_schedule
from brachistochrone.chain import ChainSpec
from brachistochrone.errors import ChecksumError, SchemaError
from brachistochrone.oracle import OracleReport
from brachistochrone.solver import ShootingParams, Solution, sweep

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_solution_round_trip_is_byte_identical(solved3, tmp_path):
    path = tmp_path / "s.json"
    io.write_json(path, solved3)
    first = path.read_bytes()
    back = io.read_json(path, "solution")
    io.write_json(path, back)
    assert path.read_bytes() == first
    assert back.tau == solved3.tau
    assert np.array_equal(back.multipliers, solved3.multipliers)
    assert back.params.j1_initial == solved3.params.j1_initial


@given(st.integers(2, 9), st.floats(0.1, 50), st.floats(0.01, 10), st.data())
@settings(max_examples=60, deadline=None)
def test_synthetic_solution_round_trip(N, tau_j0, j0, data):
    lam = data.draw(st.lists(finite, min_size=N - 2, max_size=N - 2))
    spec = ChainSpec(N, j0)
    sol = Solution(spec, ShootingParams.from_normalized(tau_j0, lam), tau_j0 / j0,
                   data.draw(st.floats(0, 1)), data.draw(st.floats(0, 1)),
                   metadata={"method": "gradient", "iterations": 3, "converged": False,
                             "tolerances": {"infidelity": 1e-9}})
    text = io.to_json(sol)
    assert io.to_json(io.from_json(text)) == text


def test_non_finite_numbers_become_null(solved3):
    bad = Solution(solved3.spec, solved3.params, solved3.tau, float("nan"), float("nan"),
                   metadata={"converged": False, "method": "shooting", "iterations": 0})
    doc = json.loads(io.to_json(bad))
    assert doc["fidelity"] is None and doc["converged"] is False
    assert np.isnan(io.from_json(io.to_json(bad)).fidelity)


def test_schedule_and_report_round_trip():
    for sched in (stepwise_schedule(ChainSpec(5)), perfect_transfer_schedule(ChainSpec(7, 2.0))):
        text = io.to_json(sched)
        back = io.from_json(text, "schedule")
        assert back.label == sched.label
        assert io.to_json(back) == text
    rep = OracleReport("x", 1e-15, 10, 1e-12, {"n_sites": 3, "couplings": [0.1, 0.2]})
    text = io.to_json(rep)
    assert io.to_json(io.from_json(text)) == text
    assert json.loads(text)["passed"] is True


@pytest.mark.parametrize("mutate,field", [
    (lambda d: d.pop("tau_j0"), "tau_j0"),
    (lambda d: d.update(n_sites="three"), "n_sites"),
    (lambda d: d.update(multipliers=[1.0, 2.0]), "multipliers"),
    (lambda d: d.update(multipliers=["a"]), "multipliers[0]"),
    (lambda d: d.update(format_version=99), "format_version"),
    (lambda d: d.update(kind="schedule"), "label"),
    (lambda d: d.update(tau=5.0), "tau"),
    (lambda d: d.pop("metadata"), "metadata"),
])
def test_schema_errors_name_the_field(solved3, mutate, field):
    doc = json.loads(io.to_json(solved3))
    mutate(doc)
    with pytest.raises(SchemaError, match=re.escape(field)):
        io.from_json(json.dumps(doc))


def test_kind_mismatch_and_bad_json(solved3):
    with pytest.raises(SchemaError, match="kind"):
        io.from_json(io.to_json(solved3), "schedule")
    with pytest.raises(SchemaError):
        io.from_json("{not json")
    with pytest.raises(SchemaError, match="kind"):
        io.from_json('{"format_version": 1, "kind": "banana"}')
    with pytest.raises(TypeError):
        io.to_json(object())


def test_schedule_budget_violation_is_a_schema_error():
    doc = json.loads(io.to_json(stepwise_schedule(ChainSpec(3))))
    doc["segments"][0]["couplings"] = [1.0, 1.0]
    with pytest.raises(SchemaError, match="segments"):
        io.from_json(json.dumps(doc))


def test_bundled_seed_store(seed_store):
    assert sorted(seed_store.entries) == list(range(3, 11))
    for n, e in seed_store.entries.items():
        assert e.fidelity >= 1 - 1e-8
        assert e.multipliers[0] < 0
    assert seed_store.get(3).tau_j0 == pytest.approx(np.pi * np.sqrt(3) / 2, abs=1e-9)


def test_seed_store_checksum_detects_edits(seed_store):
    doc = json.loads(seed_store.to_text())
    doc["entries"]["5"]["tau_j0"] += 1e-12
    with pytest.raises(ChecksumError):
        io.SeedStore.from_text(json.dumps(doc))


def test_seed_store_rejects_bad_entries(seed_store):
    doc = json.loads(seed_store.to_text())
    e = doc["entries"]["4"]
    e["multipliers"] = [-x for x in e["multipliers"]]
    e["checksum"] = io._checksum(e)
    with pytest.raises(SchemaError, match="sign-canonical"):
        io.SeedStore.from_text(json.dumps(doc))
    doc = json.loads(seed_store.to_text())
    doc["entries"]["7"] = doc["entries"].pop("6")
    with pytest.raises(SchemaError, match="key"):
        io.SeedStore.from_text(json.dumps(doc))


def test_seed_store_put_rules(solved3, tmp_path):
    store = io.SeedStore()
    assert store.put(solved3)
    worse = Solution(solved3.spec, ShootingParams(solved3.params.j1_initial * 1.1,
                                                  solved3.params.lambda_initial),
                     solved3.tau * 1.1, 0.9999999999, 0.0, metadata={"converged": True})
    assert not store.put(worse)
    low = Solution(solved3.spec, solved3.params, solved3.tau, 0.99, 0.0,
                   metadata={"converged": True})
    assert not store.put(low)
    path = tmp_path / "store.json"
    store.save(path)
    again = io.SeedStore.load(path)
    assert again.to_text() == store.to_text()
    assert again.get(3).params.j1_initial == solved3.params.j1_initial


def test_merge_save_keeps_other_writers(tmp_path, seed_store, solved3):
    path = tmp_path / "store.json"
    a = io.SeedStore({4: seed_store.get(4)})
    a.save(path)
    b = io.SeedStore(path=path)
    b.put(solved3)
    b.merge_save()
    assert sorted(io.SeedStore.load(path).entries) == [3, 4]


def test_missing_store_file(tmp_path):
    assert len(io.SeedStore.load(tmp_path / "none.json")) == 0
    with pytest.raises(FileNotFoundError):
        io.SeedStore.load(tmp_path / "none.json", missing_ok=False)


def test_seed_store_path_from_environment(monkeypatch, tmp_path):
    monkeypatch.delenv(io.SEED_STORE_ENV, raising=False)
    assert io.default_seed_store_path() is None
    monkeypatch.setenv(io.SEED_STORE_ENV, str(tmp_path / "s.json"))
    assert io.default_seed_store_path() == tmp_path / "s.json"


def test_trajectory_csv(tmp_path):
    P = np.array([[1.0, 0.0, 0.0], [0.25, 0.5, 0.25], [0.0, 0.0, 1.0]])
    path = tmp_path / "t.csv"
    io.write_trajectory_csv(path, [0.0, 1.0, 2.0], np.ones((3, 2)), P)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "J_1", "J_2", "p_1", "p_2", "p_3", "x"]
    assert [float(r[-1]) for r in rows[1:]] == [1.0, 2.0, 3.0]


def test_sweep_csv_is_deterministic_from_store(seed_store, tmp_path):
    seeds = seed_store.seeds()
    outputs = []
    for k in range(2):
        sols = sweep(range(3, 7), seeds=seeds)
        path = tmp_path / f"sweep{k}.csv"
        io.write_sweep_csv(path, sols)
        outputs.append(path.read_bytes())
    assert outputs[0] == outputs[1]
    rows = list(csv.DictReader(open(tmp_path / "sweep0.csv")))
    assert [r["N"] for r in rows] == ["3", "4", "5", "6"]
    assert float(rows[0]["ratio_st"]) == pytest.approx(np.pi / float(rows[0]["tau"]))
    points = io.read_sweep_points(tmp_path / "sweep0.csv")
    assert [n for n, _ in points] == [3, 4, 5, 6]


def test_sweep_csv_bad_rows(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("N,tau_j0,converged\nx,1.0,true\n")
    with pytest.raises(SchemaError, match="row 1"):
        io.read_sweep_points(path)
