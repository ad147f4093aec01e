//! Timestamps and the 366-slot day-of-year calendar.

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc};

use crate::error::{GhrError, Result};

pub type Timestamp = DateTime<Utc>;

pub const STEP_HOURS: i64 = 6;

pub fn step() -> Duration {
    Duration::hours(STEP_HOURS)
}

pub fn utc(year: i32, month: u32, day: u32, hour: u32) -> Timestamp {
    Utc.with_ymd_and_hms(year, month, day, hour, 0, 0)
        .single()
        .expect("valid calendar date")
}

pub fn from_unix(seconds: i64) -> Option<Timestamp> {
    Utc.timestamp_opt(seconds, 0).single()
}

pub fn is_step_aligned(t: &Timestamp) -> bool {
    t.minute() == 0 && t.second() == 0 && t.nanosecond() == 0 && t.hour() as i64 % STEP_HOURS == 0
}

pub fn check_aligned(t: &Timestamp) -> Result<()> {
    if is_step_aligned(t) {
        Ok(())
    } else {
        Err(GhrError::invalid(format!(
            "{t} is not on a 6-hour boundary"
        )))
    }
}

/// Day slot in 1..=366 where 29 February is always slot 60, so a given
/// calendar date maps to the same slot in leap and common years.
pub fn day_slot(t: &Timestamp) -> u16 {
    let doy = t.ordinal() as u16;
    let leap = NaiveDate::from_ymd_opt(t.year(), 2, 29).is_some();
    if !leap && doy >= 60 {
        doy + 1
    } else {
        doy
    }
}

pub fn parse_iso(s: &str) -> Option<Timestamp> {
    DateTime::parse_from_rfc3339(s)
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

pub fn iso(t: &Timestamp) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}
