//! Point observations from a station CSV.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{GhrError, Result};
use crate::time::{self, Timestamp};

pub const STATION_HEADER: [&str; 6] = [
    "station_id",
    "lat",
    "lon",
    "time_iso8601",
    "variable",
    "value",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StationVariable {
    /// 2 m temperature in K.
    T2m,
    /// 10 m wind speed in m/s.
    WindSpeed,
}

impl fmt::Display for StationVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::T2m => "t2m",
            Self::WindSpeed => "ws10",
        })
    }
}

impl FromStr for StationVariable {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "t2m" => Ok(Self::T2m),
            "ws10" | "wind_speed" | "wind" => Ok(Self::WindSpeed),
            other => Err(format!("unknown station variable {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StationRecord {
    pub station_id: String,
    pub lat: f64,
    /// Normalised to [0, 360).
    pub lon: f64,
    pub valid_time: Timestamp,
    pub variable: StationVariable,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StationIngest {
    pub records: Vec<StationRecord>,
    /// Rows that failed to parse or validate.
    pub malformed: usize,
    /// Well-formed rows whose value was NaN or infinite.
    pub non_finite: usize,
}

pub fn normalize_lon(lon: f64) -> f64 {
    let l = lon.rem_euclid(360.0);
    if l >= 360.0 {
        0.0
    } else {
        l
    }
}

enum RowError {
    Malformed(String),
    NonFinite,
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<StationRecord, RowError> {
    use RowError::Malformed;
    if row.len() != STATION_HEADER.len() {
        return Err(Malformed(format!("expected 6 fields, found {}", row.len())));
    }
    let num = |i: usize| -> std::result::Result<f64, RowError> {
        row[i].trim().parse::<f64>().map_err(|_| {
            Malformed(format!(
                "{} {:?} is not a number",
                STATION_HEADER[i], &row[i]
            ))
        })
    };
    let station_id = row[0].trim().to_string();
    if station_id.is_empty() {
        return Err(Malformed("empty station_id".into()));
    }
    let lat = num(1)?;
    let lon = num(2)?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Malformed(format!("latitude {lat} outside [-90, 90]")));
    }
    if !lon.is_finite() {
        return Err(Malformed(format!("longitude {lon} is not finite")));
    }
    let valid_time = time::parse_iso(row[3].trim())
        .ok_or_else(|| Malformed(format!("bad timestamp {:?}", &row[3])))?;
    let variable = row[4].trim().parse().map_err(Malformed)?;
    let value = num(5)?;
    if !value.is_finite() {
        return Err(RowError::NonFinite);
    }
    Ok(StationRecord {
        station_id,
        lat,
        lon: normalize_lon(lon),
        valid_time,
        variable,
        value,
    })
}

/// Parses a station CSV. Non-strict mode skips and counts bad rows; strict
/// mode fails on the first malformed row.
pub fn ingest_stations(path: &Path, strict: bool) -> Result<StationIngest> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| GhrError::invalid(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| GhrError::invalid(format!("{}: {e}", path.display())))?;
    if header.iter().collect::<Vec<_>>() != STATION_HEADER {
        return Err(GhrError::Station {
            line: 1,
            reason: format!("header must be {}", STATION_HEADER.join(",")),
        });
    }
    let mut out = StationIngest::default();
    for row in reader.records() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                if strict {
                    return Err(GhrError::Station {
                        line: e.position().map_or(0, |p| p.line()),
                        reason: e.to_string(),
                    });
                }
                out.malformed += 1;
                continue;
            }
        };
        match parse_row(&row) {
            Ok(r) => out.records.push(r),
            Err(RowError::NonFinite) => out.non_finite += 1,
            Err(RowError::Malformed(reason)) => {
                if strict {
                    return Err(GhrError::Station {
                        line: row.position().map_or(0, |p| p.line()),
                        reason,
                    });
                }
                out.malformed += 1;
            }
        }
    }
    Ok(out)
}

pub fn write_stations(records: &[StationRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| GhrError::invalid(format!("{}: {e}", path.display()));
    w.write_record(STATION_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.station_id.clone(),
            format!("{}", r.lat),
            format!("{}", r.lon),
            time::iso(&r.valid_time),
            r.variable.to_string(),
            format!("{}", r.value),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| GhrError::invalid(e.to_string()))?;
    crate::format::write_bytes(path, &bytes)
}
