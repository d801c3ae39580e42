"""CSV output for time series, observed-data ingestion, and fit metrics.

Output is long-format CSV with numbers printed at 17 significant digits
so golden files are bit-stable. A per-region aggregate CSV accompanies
the per-node file; regional aggregates are trapezoid-weighted sums over
the nodes carrying each region label.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import model
from .errors import ValidationError
from .integrators import TimeSeries


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class ObservedRecord:
    day: float
    region: int
    confirmed_hospitalized: float
    recovered: float | None = None
    deaths: float | None = None


@dataclass
class ObservedSeries:
    records: list[ObservedRecord] = dc_field(default_factory=list)

    def regions(self) -> list[int]:
        return sorted({r.region for r in self.records})

    def for_region(self, label: int) -> list[ObservedRecord]:
        return [r for r in self.records if r.region == label]


_OBSERVED_COLUMNS = ("day", "region", "confirmed_hospitalized", "recovered", "deaths")


def load_observed(text: str) -> ObservedSeries:
    """Parse observed-data CSV: day,region,confirmed_hospitalized[,recovered,deaths]."""
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(cell.strip() for cell in r)]
    if not rows:
        return ObservedSeries()
    header = [c.strip() for c in rows[0]]
    if header[: len(header)] != list(_OBSERVED_COLUMNS[: len(header)]) or len(header) < 3:
        raise ValidationError(
            [f"row 1: header must start with day,region,confirmed_hospitalized; got {header!r}"]
        )
    errors = []
    records = []
    last_day: dict[int, float] = {}
    for idx, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            errors.append(f"row {idx}: expected {len(header)} fields, got {len(row)}")
            continue
        try:
            day = float(row[0])
            region = int(row[1])
            values = [float(v) if v.strip() != "" else None for v in row[2:]]
        except ValueError as exc:
            errors.append(f"row {idx}: malformed value ({exc})")
            continue
        if values[0] is None:
            errors.append(f"row {idx}: confirmed_hospitalized is required")
            continue
        bad = [v for v in values if v is not None and (not math.isfinite(v) or v < 0)]
        if bad or not math.isfinite(day):
            errors.append(f"row {idx}: counts must be finite and nonnegative")
            continue
        if region in last_day and day <= last_day[region]:
            errors.append(
                f"row {idx}: day {day:g} not strictly increasing for region {region}"
            )
            continue
        last_day[region] = day
        rec = ObservedRecord(
            day=day, region=region, confirmed_hospitalized=values[0],
            recovered=values[1] if len(values) > 1 else None,
            deaths=values[2] if len(values) > 2 else None,
        )
        records.append(rec)
    if errors:
        raise ValidationError(errors)
    return ObservedSeries(records=records)


# ---------------------------------------------------------------------------
# Time-series output.

def region_aggregates(ts: TimeSeries) -> tuple[list[int], np.ndarray]:
    """Per-region trapezoid-weighted totals: (labels, array (n_snap, n_regions, n_comp))."""
    if ts.grid is None:
        raise ValidationError("regional aggregates need a spatial grid")
    labels = sorted(np.unique(ts.grid.region_labels).tolist())
    w = ts.grid.quad_weights
    out = np.empty((ts.states.shape[0], len(labels), ts.states.shape[2]))
    for r, label in enumerate(labels):
        mask = ts.grid.region_labels == label
        out[:, r, :] = np.tensordot(w[mask], ts.states[:, mask, :], axes=(0, 1))
    return labels, out


def timeseries_to_csv(ts: TimeSeries) -> dict[str, str]:
    """Render a run as CSV documents: {"nodes": ..., ["regions": ...]}."""
    buf = io.StringIO()
    if ts.grid is None:
        cols = [name.upper() for name in ts.comp_names]
        buf.write("time," + ",".join(cols) + "\n")
        for t, snap in zip(ts.times, ts.states):
            buf.write(_fmt(t) + "," + ",".join(_fmt(v) for v in snap[0]) + "\n")
        return {"nodes": buf.getvalue()}

    comp_header = "S,Q,E,A,I,D,R,cum_death_i,cum_death_d"
    coords = ["node_x"] if ts.grid.dim == 1 else ["node_x", "node_y"]
    buf.write("time," + ",".join(coords) + ",region," + comp_header + "\n")
    x = ts.grid.x
    y = ts.grid.y if ts.grid.dim == 2 else None
    labels = ts.grid.region_labels
    for t, snap in zip(ts.times, ts.states):
        for i in range(ts.grid.n_nodes):
            parts = [_fmt(t), _fmt(x[i])]
            if y is not None:
                parts.append(_fmt(y[i]))
            parts.append(str(int(labels[i])))
            parts.extend(_fmt(v) for v in snap[i])
            buf.write(",".join(parts) + "\n")

    rbuf = io.StringIO()
    rbuf.write("time,region," + comp_header + "\n")
    region_ids, agg = region_aggregates(ts)
    for k, t in enumerate(ts.times):
        for r, label in enumerate(region_ids):
            rbuf.write(
                _fmt(t) + "," + str(label) + ","
                + ",".join(_fmt(v) for v in agg[k, r]) + "\n"
            )
    return {"nodes": buf.getvalue(), "regions": rbuf.getvalue()}


def write_timeseries(ts: TimeSeries, out_dir) -> dict[str, Path]:
    """Write nodes.csv (and regions.csv for spatial runs) under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    docs = timeseries_to_csv(ts)
    paths = {}
    for key, text in docs.items():
        path = out_dir / f"{key}.csv"
        path.write_text(text)
        paths[key] = path
    return paths


def read_nodes_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    """Read back a nodes.csv written by write_timeseries.

    Returns (times, states) with states shaped (n_snapshots, n_nodes, n_comp).
    """
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    n_meta = len(header) - 9 if "node_x" in header else 1
    times = []
    blocks = []
    cur_t = None
    cur = []
    for row in rows[1:]:
        t = float(row[0])
        vals = [float(v) for v in row[n_meta:]] if "node_x" in header else [float(v) for v in row[1:]]
        if cur_t is None or t != cur_t:
            if cur:
                blocks.append(cur)
            cur = []
            cur_t = t
            times.append(t)
        cur.append(vals)
    if cur:
        blocks.append(cur)
    return np.array(times), np.array(blocks)


# ---------------------------------------------------------------------------
# Fit metrics against observed data.

@dataclass
class FitMetrics:
    per_region: dict  # label -> {"rmse", "nrmse", "sim_peak_day", "obs_peak_day", "peak_day_diff"}

    def to_dict(self) -> dict:
        return {"kind": "fit_metrics", "per_region": self.per_region}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def fit_metrics(ts: TimeSeries, obs: ObservedSeries,
                region_map: dict[int, int] | None = None) -> FitMetrics:
    """RMSE and peak-day comparison on regional confirmed-hospitalized totals.

    ``region_map`` maps observed region labels to grid region labels
    (identity by default). Normalized RMSE divides by the observed peak.
    """
    if ts.grid is None:
        raise ValidationError("fit metrics need a spatial run with region labels")
    region_ids, agg = region_aggregates(ts)
    d_col = model.IDX["d"]
    out = {}
    for obs_label in obs.regions():
        grid_label = (region_map or {}).get(obs_label, obs_label)
        if grid_label not in region_ids:
            raise ValidationError(
                f"observed region {obs_label} maps to {grid_label}, "
                f"which is not on the grid (labels: {region_ids})"
            )
        r = region_ids.index(grid_label)
        series = agg[:, r, d_col]
        records = obs.for_region(obs_label)
        sim_vals = []
        for rec in records:
            hits = np.flatnonzero(np.isclose(ts.times, rec.day, rtol=0.0, atol=1e-9))
            if hits.size == 0:
                raise ValidationError(
                    f"no snapshot at observed day {rec.day:g} "
                    f"(snapshot interval mismatch)"
                )
            sim_vals.append(series[hits[0]])
        sim_vals = np.array(sim_vals)
        obs_vals = np.array([rec.confirmed_hospitalized for rec in records])
        rmse = float(np.sqrt(np.mean((sim_vals - obs_vals) ** 2)))
        peak_obs = float(np.max(obs_vals)) if obs_vals.size else 0.0
        obs_peak_day = float(records[int(np.argmax(obs_vals))].day)
        sim_peak_day = float(ts.times[int(np.argmax(series))])
        out[str(obs_label)] = {
            "rmse": rmse,
            "nrmse": rmse / peak_obs if peak_obs > 0 else float("nan"),
            "sim_peak_day": sim_peak_day,
            "obs_peak_day": obs_peak_day,
            "peak_day_diff": sim_peak_day - obs_peak_day,
        }
    return FitMetrics(per_region=out)
