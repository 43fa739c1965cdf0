//! Durations, half-open time ranges and epoch-aligned bucketing.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type Instant = DateTime<Utc>;

const SECONDS_PER_HOUR: i64 = 3_600;
const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimeError {
    #[error("invalid duration `{0}`: expected <integer><unit> with unit one of h, d, w, m")]
    Duration(String),
    #[error("duration `{0}` must be greater than zero")]
    ZeroDuration(String),
    #[error("invalid timestamp `{0}`")]
    Timestamp(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DurationUnit {
    Hours,
    Days,
    Weeks,
    /// Thirty days, exactly.
    Months,
}

impl DurationUnit {
    fn suffix(self) -> char {
        match self {
            DurationUnit::Hours => 'h',
            DurationUnit::Days => 'd',
            DurationUnit::Weeks => 'w',
            DurationUnit::Months => 'm',
        }
    }

    fn seconds(self) -> i64 {
        match self {
            DurationUnit::Hours => SECONDS_PER_HOUR,
            DurationUnit::Days => SECONDS_PER_DAY,
            DurationUnit::Weeks => 7 * SECONDS_PER_DAY,
            DurationUnit::Months => 30 * SECONDS_PER_DAY,
        }
    }
}

/// A duration written as `<integer><unit>`, e.g. `7d`, `2w`, `1m`.
///
/// The written unit is kept so that a parsed value serializes back to the same
/// text; comparisons go through [`Span::seconds`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Span {
    amount: u32,
    unit: DurationUnit,
}

impl Span {
    pub const fn new(amount: u32, unit: DurationUnit) -> Self {
        Span { amount, unit }
    }

    pub const fn days(amount: u32) -> Self {
        Span::new(amount, DurationUnit::Days)
    }

    pub const fn hours(amount: u32) -> Self {
        Span::new(amount, DurationUnit::Hours)
    }

    pub fn seconds(&self) -> i64 {
        i64::from(self.amount) * self.unit.seconds()
    }

    /// `n` back-to-back copies of this span, in the same unit.
    pub fn times(&self, n: u32) -> Span {
        Span::new(self.amount * n, self.unit)
    }

    pub fn is_zero(&self) -> bool {
        self.amount == 0
    }

    pub fn as_chrono(&self) -> chrono::Duration {
        chrono::Duration::seconds(self.seconds())
    }

    /// Length in (fractional) weeks.
    pub fn weeks(&self) -> f64 {
        self.seconds() as f64 / (7 * SECONDS_PER_DAY) as f64
    }

    /// Parses and rejects zero-length spans.
    pub fn parse_positive(text: &str) -> Result<Self, TimeError> {
        let span: Span = text.parse()?;
        if span.is_zero() {
            return Err(TimeError::ZeroDuration(text.to_string()));
        }
        Ok(span)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.amount, self.unit.suffix())
    }
}

impl FromStr for Span {
    type Err = TimeError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = || TimeError::Duration(text.to_string());
        let mut chars = text.chars();
        let unit = match chars.next_back().ok_or_else(err)? {
            'h' => DurationUnit::Hours,
            'd' => DurationUnit::Days,
            'w' => DurationUnit::Weeks,
            'm' => DurationUnit::Months,
            _ => return Err(err()),
        };
        let digits = chars.as_str();
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let amount = digits.parse::<u32>().map_err(|_| err())?;
        Ok(Span { amount, unit })
    }
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Half-open interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: Instant,
    pub end: Instant,
}

impl TimeRange {
    pub fn new(start: Instant, end: Instant) -> Self {
        TimeRange { start, end }
    }

    pub fn contains(&self, t: Instant) -> bool {
        self.start <= t && t < self.end
    }

    pub fn overlaps(&self, other: &TimeRange) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn covers(&self, other: &TimeRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn hull(&self, other: &TimeRange) -> TimeRange {
        TimeRange {
            start: self.start.min(other.start),
            end: self.end.max(other.end),
        }
    }

    pub fn length_seconds(&self) -> i64 {
        (self.end - self.start).num_seconds()
    }
}

/// Index of the epoch-aligned bucket of length `span` that contains `t`.
pub fn bucket_index(t: Instant, span: Span) -> i64 {
    t.timestamp().div_euclid(span.seconds())
}

/// The epoch-aligned bucket `[k*span, (k+1)*span)`.
pub fn bucket_range(index: i64, span: Span) -> TimeRange {
    let len = span.seconds();
    TimeRange {
        start: from_unix(index * len),
        end: from_unix((index + 1) * len),
    }
}

pub fn bucket_of(t: Instant, span: Span) -> TimeRange {
    bucket_range(bucket_index(t, span), span)
}

pub fn from_unix(seconds: i64) -> Instant {
    Utc.timestamp_opt(seconds, 0)
        .single()
        .expect("timestamp within chrono range")
}

/// Parses RFC 3339, or a naive `YYYY-MM-DDTHH:MM:SS` / `YYYY-MM-DD` taken as UTC.
pub fn parse_instant(text: &str) -> Result<Instant, TimeError> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Ok(t.with_timezone(&Utc));
    }
    for format in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(text, format) {
            return Ok(naive.and_utc());
        }
    }
    if let Ok(date) = NaiveDate::parse_from_str(text, "%Y-%m-%d") {
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    Err(TimeError::Timestamp(text.to_string()))
}
