"""Scenario schema validation, presets, CSV time-series I/O, fit metrics."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

from rdepi.errors import SchemaError, ValidationError
from rdepi.grid import discrete_integral
from rdepi.integrators import simulate
from rdepi.model import IDX, N_SLOTS
from rdepi.scenario import (
    SCHEMA_VERSION,
    load_scenario,
    preset,
    preset_descriptions,
)
from rdepi.series_io import (
    fit_metrics,
    load_observed,
    read_nodes_csv,
    region_aggregates,
    timeseries_to_csv,
    write_timeseries,
)

GOLDEN_DIR = Path(__file__).parent / "goldens"


def minimal_doc(**over):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": "minimal",
        "model": "covid",
        "grid": {"dim": 1, "extent_x": 1.0, "nodes_x": 3},
        "params": {},
        "initial": {"per_region": {"0": {"s": 1.0}}},
        "horizon": 1.0,
        "dt": 0.5,
    }
    doc.update(over)
    return doc


# ---------------------------------------------------------------------------
# Schema validation.

def test_minimal_document_defaults():
    sc = load_scenario(json.dumps(minimal_doc()))
    assert sc.integrator == "rk4"
    assert sc.snapshot_interval == sc.horizon  # documented default
    assert sc.frozen_n is None
    assert not sc.clamp_negative and not sc.strict_guards
    assert sc.guard_alpha and sc.guard_cfl
    np.testing.assert_allclose(sc.initial_data[:, IDX["s"]], 1.0)


def test_negative_dt_names_field():
    with pytest.raises(ValidationError, match="dt"):
        load_scenario(minimal_doc(dt=-0.5))


def test_zero_horizon_rejected():
    with pytest.raises(ValidationError, match="horizon"):
        load_scenario(minimal_doc(horizon=0.0))


def test_unknown_keys_rejected_everywhere():
    with pytest.raises(ValidationError, match="unknown key 'bogus'"):
        load_scenario(minimal_doc(bogus=1))
    doc = minimal_doc()
    doc["grid"]["bogus"] = 1
    with pytest.raises(ValidationError, match="grid.*unknown key"):
        load_scenario(doc)
    doc = minimal_doc()
    doc["params"]["bogus"] = 0.1
    with pytest.raises(ValidationError, match="params.*unknown key"):
        load_scenario(doc)
    doc = minimal_doc()
    doc["flags"] = {"bogus": True}
    with pytest.raises(ValidationError, match="flags.*unknown key"):
        load_scenario(doc)


def test_schema_version_checked():
    with pytest.raises(SchemaError, match="schema_version"):
        load_scenario(minimal_doc(schema_version=99))
    with pytest.raises(SchemaError, match="schema_version"):
        doc = minimal_doc()
        del doc["schema_version"]
        load_scenario(doc)


def test_errors_are_enumerated_not_first_failure_only():
    doc = minimal_doc(dt=-1.0, horizon=-2.0)
    doc["params"]["theta"] = 5.0
    with pytest.raises(ValidationError) as exc:
        load_scenario(doc)
    text = "\n".join(exc.value.problems)
    assert "dt" in text and "horizon" in text and "theta" in text
    assert len(exc.value.problems) >= 3


def test_malformed_json_reports_error():
    with pytest.raises(ValidationError):
        load_scenario("{not json")


def test_negative_initial_rejected():
    doc = minimal_doc()
    doc["initial"] = {"per_region": {"0": {"s": -1.0}}}
    with pytest.raises(ValidationError, match="initial"):
        load_scenario(doc)


def test_initial_rejects_ledger_and_unknown_compartments():
    doc = minimal_doc()
    doc["initial"] = {"per_region": {"0": {"cum_death_i": 1.0}}}
    with pytest.raises(ValidationError, match="initial"):
        load_scenario(doc)
    doc["initial"] = {"per_node": {"zz": [0.0, 0.0, 0.0]}}
    with pytest.raises(ValidationError, match="initial"):
        load_scenario(doc)


def test_per_node_initial_checks_length():
    doc = minimal_doc()
    doc["initial"] = {"per_node": {"s": [1.0, 2.0]}}
    with pytest.raises(ValidationError, match="initial"):
        load_scenario(doc)


def test_round_trip_save_load_is_identity():
    sc = load_scenario(minimal_doc())
    again = load_scenario(sc.to_json())
    assert again.to_document() == sc.to_document()
    np.testing.assert_array_equal(again.initial_data, sc.initial_data)
    for name in preset_descriptions():
        p = preset(name)
        again = load_scenario(p.to_json())
        assert again.to_document() == p.to_document()


def test_region_blocks_paint_labels():
    doc = minimal_doc()
    doc["grid"] = {
        "dim": 1, "extent_x": 1.0, "nodes_x": 5,
        "regions": [
            {"label": 0, "x_min": 0.0, "x_max": 1.0},
            {"label": 7, "x_min": 0.5, "x_max": 1.0},  # later blocks overwrite
        ],
    }
    doc["initial"] = {"per_region": {"0": {"s": 1.0}, "7": {"s": 3.0}}}
    sc = load_scenario(doc)
    # interval bounds are inclusive, so x = 0.5 takes the later label
    np.testing.assert_array_equal(sc.grid.region_labels, [0, 0, 7, 7, 7])
    np.testing.assert_array_equal(sc.initial_data[:, IDX["s"]],
                                  [1.0, 1.0, 3.0, 3.0, 3.0])


def test_with_overrides_merges_flags():
    sc = load_scenario(minimal_doc())
    over = sc.with_overrides(dt=0.25, flags={"strict_guards": True})
    assert over.dt == 0.25
    assert over.strict_guards
    assert sc.dt == 0.5 and not sc.strict_guards  # original untouched


# ---------------------------------------------------------------------------
# Presets.

def test_preset_names_and_unknown_rejected():
    assert set(preset_descriptions()) == {
        "nanjing-ode", "corridor-1d", "jiangsu-2d", "sir-demo",
    }
    with pytest.raises(ValidationError) as exc:
        preset("nope")
    assert "corridor-1d" in str(exc.value)  # lists valid names


def test_nanjing_preset_has_zero_diffusivities():
    p = preset("nanjing-ode").params
    assert p.nu_s == p.nu_e == p.nu_a == p.nu_i == 0.0


def test_sir_demo_conserves_population():
    ts = simulate(preset("sir-demo"))
    totals = ts.states[:, 0, :].sum(axis=1)
    np.testing.assert_allclose(totals, totals[0], rtol=1e-12)


def test_corridor_seeds_only_first_region():
    sc = preset("corridor-1d")
    labels = sc.grid.region_labels
    infected = sc.initial_data[:, [IDX["e"], IDX["a"], IDX["i"]]].sum(axis=1)
    assert np.all(infected[labels == 0] > 0)
    assert np.all(infected[labels != 0] == 0)


def test_jiangsu_preset_is_2d():
    sc = preset("jiangsu-2d")
    assert sc.grid.dim == 2
    assert len(np.unique(sc.grid.region_labels)) == 3


# ---------------------------------------------------------------------------
# Observed-data ingestion.

def test_load_observed_empty_and_valid():
    assert load_observed("") .records == []
    obs = load_observed(
        "day,region,confirmed_hospitalized\n1,0,5\n2,0,7\n1,1,3\n")
    assert len(obs.records) == 3
    assert obs.regions() == [0, 1]
    assert obs.for_region(0)[1].confirmed_hospitalized == 7.0


def test_load_observed_optional_columns():
    obs = load_observed(
        "day,region,confirmed_hospitalized,recovered,deaths\n1,0,5,2,1\n")
    rec = obs.records[0]
    assert rec.recovered == 2.0 and rec.deaths == 1.0


def test_load_observed_errors_carry_row_numbers():
    with pytest.raises(ValidationError, match="row 3"):
        load_observed("day,region,confirmed_hospitalized\n1,0,5\n1,0,6\n")
    with pytest.raises(ValidationError, match="row 2"):
        load_observed("day,region,confirmed_hospitalized\n1,0,-5\n")
    with pytest.raises(ValidationError, match="row 2"):
        load_observed("day,region,confirmed_hospitalized\nx,0,5\n")
    with pytest.raises(ValidationError, match="row 1"):
        load_observed("foo,bar,baz\n1,0,5\n")


# ---------------------------------------------------------------------------
# Time-series CSV.

def test_zero_horizon_run_single_time_csv():
    # the schema requires horizon > 0, but a programmatically truncated
    # run (initial snapshot only) still renders as a single-time CSV
    sc = dataclasses.replace(load_scenario(minimal_doc()), horizon=0.0)
    ts = simulate(sc)
    assert ts.times.shape == (1,)
    docs = timeseries_to_csv(ts)
    assert docs["nodes"].count("\n") == 1 + sc.grid.n_nodes


def test_nodes_csv_round_trip_exact():
    ts = simulate(preset("corridor-1d").with_overrides(horizon=2.0))
    docs = timeseries_to_csv(ts)
    times, states = read_nodes_csv(docs["nodes"])
    np.testing.assert_array_equal(times, ts.times)
    np.testing.assert_array_equal(states, ts.states)  # 17 sig digits: exact


def test_nodes_csv_headers():
    ts1 = simulate(preset("corridor-1d").with_overrides(horizon=1.0))
    docs = timeseries_to_csv(ts1)
    assert docs["nodes"].splitlines()[0] == (
        "time,node_x,region,S,Q,E,A,I,D,R,cum_death_i,cum_death_d")
    assert docs["regions"].splitlines()[0] == (
        "time,region,S,Q,E,A,I,D,R,cum_death_i,cum_death_d")
    ts2 = simulate(preset("jiangsu-2d").with_overrides(
        horizon=0.5, snapshot_interval=0.5), alpha=0.0)
    assert timeseries_to_csv(ts2)["nodes"].splitlines()[0].startswith(
        "time,node_x,node_y,region,")
    ts3 = simulate(preset("sir-demo").with_overrides(horizon=1.0))
    docs3 = timeseries_to_csv(ts3)
    assert docs3["nodes"].splitlines()[0] == "time,S,I,R"
    assert "regions" not in docs3


def test_write_timeseries_creates_files(tmp_path):
    ts = simulate(preset("corridor-1d").with_overrides(horizon=1.0))
    paths = write_timeseries(ts, tmp_path / "out")
    assert set(paths) == {"nodes", "regions"}
    for p in paths.values():
        assert p.exists() and p.read_text().startswith("time,")


def test_region_aggregates_match_discrete_integral():
    ts = simulate(preset("corridor-1d").with_overrides(horizon=1.0))
    labels, agg = region_aggregates(ts)
    g = ts.grid
    for r, label in enumerate(labels):
        mask = g.region_labels == label
        for c in range(N_SLOTS):
            masked = np.where(mask, ts.states[-1][:, c], 0.0)
            assert agg[-1, r, c] == pytest.approx(
                discrete_integral(masked, g), rel=1e-12)


def test_region_aggregates_need_grid():
    ts = simulate(preset("sir-demo").with_overrides(horizon=1.0))
    with pytest.raises(ValidationError, match="grid"):
        region_aggregates(ts)


# ---------------------------------------------------------------------------
# Fit metrics.

def _corridor_run():
    return simulate(preset("corridor-1d").with_overrides(horizon=10.0))


def test_fit_metrics_self_comparison_is_zero():
    ts = _corridor_run()
    labels, agg = region_aggregates(ts)
    lines = ["day,region,confirmed_hospitalized"]
    for k, t in enumerate(ts.times):
        lines.append(f"{t:.17g},1,{agg[k, 1, IDX['d']]:.17g}")
    m = fit_metrics(ts, load_observed("\n".join(lines)))
    assert m.per_region["1"]["rmse"] == pytest.approx(0.0, abs=1e-12)
    assert m.per_region["1"]["peak_day_diff"] == 0.0


def test_fit_metrics_constant_offset():
    ts = _corridor_run()
    labels, agg = region_aggregates(ts)
    lines = ["day,region,confirmed_hospitalized"]
    for k, t in enumerate(ts.times):
        lines.append(f"{t:.17g},1,{agg[k, 1, IDX['d']] + 2.5:.17g}")
    m = fit_metrics(ts, load_observed("\n".join(lines)))
    assert m.per_region["1"]["rmse"] == pytest.approx(2.5, rel=1e-9)


def test_fit_metrics_peak_shift():
    # long enough that the regional series has an interior peak
    ts = simulate(preset("corridor-1d").with_overrides(horizon=40.0))
    labels, agg = region_aggregates(ts)
    series = agg[:, 1, IDX["d"]]
    assert 0 < int(np.argmax(series)) < series.size - 1
    shifted = np.roll(series, 3)  # observed peak 3 snapshots later
    shifted[:3] = 0.0
    lines = ["day,region,confirmed_hospitalized"]
    for k, t in enumerate(ts.times):
        lines.append(f"{t:.17g},1,{shifted[k]:.17g}")
    m = fit_metrics(ts, load_observed("\n".join(lines)))
    assert m.per_region["1"]["peak_day_diff"] == pytest.approx(-3.0)


def test_fit_metrics_region_map_and_missing_snapshot():
    ts = _corridor_run()
    m = fit_metrics(ts, load_observed(
        "day,region,confirmed_hospitalized\n1,9,0.5\n"), region_map={9: 1})
    assert "9" in m.per_region
    with pytest.raises(ValidationError, match="maps to"):
        fit_metrics(ts, load_observed(
            "day,region,confirmed_hospitalized\n1,9,0.5\n"))
    with pytest.raises(ValidationError, match="snapshot"):
        fit_metrics(ts, load_observed(
            "day,region,confirmed_hospitalized\n1.37,1,0.5\n"))


# ---------------------------------------------------------------------------
# Golden regressions (bit-stable CSVs pinned at calibration time).

@pytest.mark.parametrize("name,key", [
    ("nanjing-ode", "regions"),
    ("corridor-1d", "regions"),
    ("jiangsu-2d", "regions"),
    ("sir-demo", "nodes"),
])
def test_preset_golden_csv(name, key):
    golden = (GOLDEN_DIR / f"{name}.{key}.csv").read_text()
    ts = simulate(preset(name), alpha=0.0)
    assert timeseries_to_csv(ts)[key] == golden
