//! Forecasts verified against point observations at their nearest grid cell.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Datelike, Timelike};

use crate::error::{GhrError, Result};
use crate::grid::GridSpec;
use crate::state::WeatherState;
use crate::stations::{normalize_lon, StationRecord, StationVariable};
use crate::time::{self, Timestamp};

const EARTH_RADIUS_KM: f64 = 6371.0;

/// Init hours (UTC) consumed by station verification.
pub const STATION_INIT_HOURS: [u32; 2] = [0, 12];

pub fn great_circle_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

fn covers(grid: &GridSpec, lat: f64, lon: f64) -> bool {
    if !lat.is_finite() || !lon.is_finite() || lat.abs() > 90.0 {
        return false;
    }
    let half = grid.resolution_degrees / 2.0;
    let (lo, hi) = grid
        .lat_degrees
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if lat < lo - half - 1e-9 || lat > hi + half + 1e-9 {
        return false;
    }
    if (grid.n_lon as f64 * grid.resolution_degrees - 360.0).abs() < 1e-6 {
        return true;
    }
    let lon = normalize_lon(lon);
    let (first, last) = (grid.lon_degrees[0], grid.lon_degrees[grid.n_lon - 1]);
    lon >= first - half - 1e-9 && lon <= last + half + 1e-9
}

/// Cell whose centre is closest by great-circle distance; ties go to the
/// lower flat index. `None` outside the grid.
pub fn nearest_cell(grid: &GridSpec, lat: f64, lon: f64) -> Option<(usize, usize)> {
    if !covers(grid, lat, lon) {
        return None;
    }
    let mut best = (f64::INFINITY, 0, 0);
    for (i, &clat) in grid.lat_degrees.iter().enumerate() {
        for (j, &clon) in grid.lon_degrees.iter().enumerate() {
            let d = great_circle_km(lat, lon, clat, clon);
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    Some((best.1, best.2))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationMatch {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
    pub cell: (usize, usize),
}

/// Physical-unit forecast states of one init time, keyed by lead hours.
#[derive(Clone, Debug)]
pub struct ForecastRun {
    pub init: Timestamp,
    pub leads: Vec<(u32, WeatherState)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationRow {
    pub variable: StationVariable,
    /// Month of the valid time, 1..=12.
    pub month: u32,
    pub lead_days: u32,
    pub rmse: f64,
    pub n_stations: usize,
    /// Forecast and observation pairs behind the RMSE.
    pub n_pairs: usize,
}

#[derive(Clone, Debug, Default)]
pub struct StationTable {
    pub rows: Vec<StationRow>,
    pub matches: Vec<StationMatch>,
    /// Stations with no covering grid cell.
    pub out_of_bounds: usize,
    pub inits_used: Vec<Timestamp>,
    pub inits_skipped: usize,
}

impl StationTable {
    /// `variable,month,lead_days,rmse,n_stations` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,month,lead_days,rmse,n_stations\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.variable, r.month, r.lead_days, r.rmse, r.n_stations
            ));
        }
        s
    }
}

fn forecast_value(state: &WeatherState, var: StationVariable, cell: (usize, usize)) -> Result<f64> {
    let at = |name: &str| -> Result<f64> {
        let c = state.variables.index_of(name).ok_or_else(|| {
            GhrError::invalid(format!(
                "forecast has no {name} channel for station verification"
            ))
        })?;
        Ok(state.plane(c)[cell.0 * state.grid.n_lon + cell.1] as f64)
    };
    match var {
        StationVariable::T2m => at("t2m"),
        StationVariable::WindSpeed => {
            let (u, v) = (at("u10")?, at("v10")?);
            Ok((u * u + v * v).sqrt())
        }
    }
}

/// Unweighted station RMSE per (variable, valid month, lead day). Only
/// whole-day leads of 00Z and 12Z init times are used.
pub fn station_eval(runs: &[ForecastRun], records: &[StationRecord]) -> Result<StationTable> {
    let Some(grid) = runs
        .iter()
        .flat_map(|r| r.leads.iter())
        .map(|(_, s)| s.grid.clone())
        .next()
    else {
        return Err(GhrError::invalid(
            "station evaluation needs at least one forecast",
        ));
    };
    let mut table = StationTable::default();
    let mut cells: BTreeMap<&str, Option<(usize, usize)>> = BTreeMap::new();
    for r in records {
        cells.entry(&r.station_id).or_insert_with(|| {
            let cell = nearest_cell(&grid, r.lat, r.lon);
            match cell {
                Some(c) => table.matches.push(StationMatch {
                    station_id: r.station_id.clone(),
                    lat: r.lat,
                    lon: r.lon,
                    cell: c,
                }),
                None => table.out_of_bounds += 1,
            }
            cell
        });
    }
    let mut obs: HashMap<(Timestamp, StationVariable), Vec<&StationRecord>> = HashMap::new();
    for r in records {
        obs.entry((r.valid_time, r.variable)).or_default().push(r);
    }
    type Acc<'a> = (f64, usize, BTreeSet<&'a str>);
    let mut acc: BTreeMap<(StationVariable, u32, u32), Acc> = BTreeMap::new();
    for run in runs {
        if run.init.minute() != 0
            || run.init.second() != 0
            || !STATION_INIT_HOURS.contains(&run.init.hour())
        {
            table.inits_skipped += 1;
            continue;
        }
        table.inits_used.push(run.init);
        for (lead, state) in &run.leads {
            if lead % 24 != 0 || *lead == 0 {
                continue;
            }
            if !state.grid.same_shape(&grid) {
                return Err(GhrError::Grid("forecast runs use different grids".into()));
            }
            let expected = run.init + chrono::Duration::hours(*lead as i64);
            if state.valid_time != expected {
                return Err(GhrError::invalid(format!(
                    "lead {lead} h of the {} run is valid at {}",
                    time::iso(&run.init),
                    time::iso(&state.valid_time)
                )));
            }
            for var in [StationVariable::T2m, StationVariable::WindSpeed] {
                let Some(list) = obs.get(&(state.valid_time, var)) else {
                    continue;
                };
                for r in list {
                    let Some(cell) = cells[r.station_id.as_str()] else {
                        continue;
                    };
                    let e = forecast_value(state, var, cell)? - r.value;
                    let slot = acc
                        .entry((var, state.valid_time.month(), lead / 24))
                        .or_default();
                    slot.0 += e * e;
                    slot.1 += 1;
                    slot.2.insert(&r.station_id);
                }
            }
        }
    }
    table.rows = acc
        .into_iter()
        .map(|((variable, month, lead_days), (sq, n, ids))| StationRow {
            variable,
            month,
            lead_days,
            rmse: (sq / n as f64).sqrt(),
            n_stations: ids.len(),
            n_pairs: n,
        })
        .collect();
    Ok(table)
}
