//! Hour-resolution timestamps and the season / workday calendar.

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use std::collections::BTreeSet;

use crate::error::{Error, Result};

pub type Timestamp = NaiveDateTime;

const FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 local timestamp (seconds and a trailing `Z` optional).
pub fn parse_timestamp(s: &str) -> Result<Timestamp> {
    let s = s.trim().trim_end_matches('Z');
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Ok(t);
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%dT%H") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    Err(Error::invalid(format!("unparseable timestamp {s:?}")))
}

pub fn format_timestamp(t: &Timestamp) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

pub fn floor_to_hour(t: Timestamp) -> Timestamp {
    t.date().and_hms_opt(t.hour(), 0, 0).expect("valid hour")
}

pub fn add_hours(t: Timestamp, hours: i64) -> Timestamp {
    t + chrono::Duration::hours(hours)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Spring, Season::Summer, Season::Autumn, Season::Winter];

    /// March-May spring, June-August summer, September-November autumn,
    /// December-February winter.
    pub fn of_month(month: u32) -> Season {
        match month {
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            9..=11 => Season::Autumn,
            _ => Season::Winter,
        }
    }

    pub fn of(t: &Timestamp) -> Season {
        Self::of_month(t.month())
    }

    /// Single-channel encoding: winter 0, spring 1/3, summer 2/3, autumn 1.
    pub fn encode(self) -> f64 {
        match self {
            Season::Winter => 0.0,
            Season::Spring => 1.0 / 3.0,
            Season::Summer => 2.0 / 3.0,
            Season::Autumn => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Winter => "winter",
            Season::Spring => "spring",
            Season::Summer => "summer",
            Season::Autumn => "autumn",
        }
    }
}

/// Maps hours to season and workday labels. Weekends are Saturday and Sunday;
/// extra non-working dates can be listed as holidays.
#[derive(Clone, Debug, Default)]
pub struct Calendar {
    pub holidays: BTreeSet<NaiveDate>,
}

impl Calendar {
    /// Calendar with extra non-working dates given as `YYYY-MM-DD`.
    pub fn with_holidays<S: AsRef<str>>(dates: &[S]) -> Result<Self> {
        let holidays = dates
            .iter()
            .map(|d| {
                NaiveDate::parse_from_str(d.as_ref().trim(), "%Y-%m-%d")
                    .map_err(|_| Error::config(format!("holiday {:?} is not a YYYY-MM-DD date", d.as_ref())))
            })
            .collect::<Result<_>>()?;
        Ok(Calendar { holidays })
    }

    pub fn season(&self, t: &Timestamp) -> Season {
        Season::of(t)
    }

    pub fn is_workday(&self, t: &Timestamp) -> bool {
        !matches!(t.weekday(), Weekday::Sat | Weekday::Sun) && !self.holidays.contains(&t.date())
    }
}
