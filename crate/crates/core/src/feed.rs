//! Vehicle-position feed files and their time-ordered replay.
//!
//! The on-disk format is one JSON object per line:
//! `{"ts": 1645614000, "trip": "T1", "dir": 1, "lat": 42.36, "lon": -71.10, "occ": 35.0}`.
//! Unknown keys are ignored.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAX_OCCUPANCY: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Outbound,
    Inbound,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Outbound, Direction::Inbound];

    pub fn from_code(code: i64) -> Option<Self> {
        match code {
            0 => Some(Direction::Outbound),
            1 => Some(Direction::Inbound),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Direction::Outbound => 0,
            Direction::Inbound => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Outbound => "outbound",
            Direction::Inbound => "inbound",
        }
    }

    pub fn parse_name(s: &str) -> Option<Self> {
        match s.trim() {
            "outbound" | "0" => Some(Direction::Outbound),
            "inbound" | "1" => Some(Direction::Inbound),
            _ => None,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One timestamped observation of a transit vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehiclePositionRecord {
    pub timestamp: i64,
    pub trip_id: String,
    pub direction: Direction,
    pub lat: f64,
    pub lon: f64,
    /// Percent of seating capacity, `[0, 150]`.
    pub occupancy: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct WireRecord {
    ts: i64,
    trip: String,
    dir: i64,
    lat: f64,
    lon: f64,
    occ: f64,
}

impl VehiclePositionRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.timestamp <= 0 {
            return Err(format!("timestamp {} is not positive", self.timestamp));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} out of range", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} out of range", self.lon));
        }
        if !(0.0..=MAX_OCCUPANCY).contains(&self.occupancy) {
            return Err(format!("occupancy {} outside [0, 150]", self.occupancy));
        }
        if self.trip_id.is_empty() {
            return Err("empty trip id".into());
        }
        Ok(())
    }

    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let wire: WireRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let direction =
            Direction::from_code(wire.dir).ok_or_else(|| format!("direction {} not 0|1", wire.dir))?;
        let rec = VehiclePositionRecord {
            timestamp: wire.ts,
            trip_id: wire.trip,
            direction,
            lat: wire.lat,
            lon: wire.lon,
            occupancy: wire.occ,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn to_line(&self) -> String {
        let wire = WireRecord {
            ts: self.timestamp,
            trip: self.trip_id.clone(),
            dir: self.direction.code() as i64,
            lat: self.lat,
            lon: self.lon,
            occ: self.occupancy,
        };
        serde_json::to_string(&wire).expect("plain struct serializes")
    }
}

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("{bad} of {total} lines malformed; first bad line {line}: {reason}")]
    TooManyMalformed {
        bad: usize,
        total: usize,
        line: usize,
        reason: String,
    },
    #[error("speedup must be positive, got {0}")]
    BadSpeedup(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    /// Inter-event delay equals the timestamp gap divided by `speedup`.
    RealtimeScaled { speedup: f64 },
    AsFastAsPossible,
}

/// Time-ordered records; no two share `(trip_id, timestamp)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeedStream {
    records: Vec<VehiclePositionRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    /// 1-based line number in the source file.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ParsedFeed {
    pub stream: FeedStream,
    pub skipped: Vec<SkippedLine>,
}

impl FeedStream {
    /// Sorts by timestamp (stable) and drops repeated `(trip_id, timestamp)`
    /// pairs, keeping the first occurrence in input order. Returns the
    /// indices (into `records`) that were dropped.
    pub fn from_records(records: Vec<VehiclePositionRecord>) -> (Self, Vec<usize>) {
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(records.len());
        let mut dropped = Vec::new();
        for (i, r) in records.into_iter().enumerate() {
            if seen.insert((r.trip_id.clone(), r.timestamp)) {
                kept.push(r);
            } else {
                dropped.push(i);
            }
        }
        kept.sort_by_key(|r| r.timestamp);
        (Self { records: kept }, dropped)
    }

    pub fn records(&self) -> &[VehiclePositionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.serialize().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn replay(&self, mode: ClockMode) -> Result<Replay<'_>> {
        if let ClockMode::RealtimeScaled { speedup } = mode {
            if !(speedup > 0.0 && speedup.is_finite()) {
                return Err(FeedError::BadSpeedup(speedup).into());
            }
        }
        Ok(Replay {
            records: &self.records,
            next: 0,
            mode,
            origin: None,
        })
    }
}

/// Parses text in the feed format. Blank lines are ignored.
pub fn parse_feed_str(text: &str) -> Result<ParsedFeed> {
    let mut records = Vec::new();
    let mut line_numbers = Vec::new();
    let mut skipped = Vec::new();
    let mut total = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match VehiclePositionRecord::parse_line(line) {
            Ok(r) => {
                records.push(r);
                line_numbers.push(idx + 1);
            }
            Err(reason) => skipped.push(SkippedLine {
                line: idx + 1,
                reason,
            }),
        }
    }
    if skipped.len() * 2 > total {
        let first = &skipped[0];
        return Err(FeedError::TooManyMalformed {
            bad: skipped.len(),
            total,
            line: first.line,
            reason: first.reason.clone(),
        }
        .into());
    }
    let (stream, dropped) = FeedStream::from_records(records);
    for i in dropped {
        skipped.push(SkippedLine {
            line: line_numbers[i],
            reason: "duplicate (trip, timestamp)".into(),
        });
    }
    skipped.sort_by_key(|s| s.line);
    Ok(ParsedFeed { stream, skipped })
}

pub fn parse_feed_file(path: &Path) -> Result<ParsedFeed> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feed_str(&text)
}

/// Iterator over a stream in timestamp order. In realtime-scaled mode each
/// `next` blocks until `(ts - ts_first) / speedup` seconds have elapsed since
/// the first event was emitted.
///
/// `Send` but not `Sync`: hand it between threads, don't poll it concurrently.
#[derive(Debug)]
pub struct Replay<'a> {
    records: &'a [VehiclePositionRecord],
    next: usize,
    mode: ClockMode,
    origin: Option<(Instant, i64)>,
}

impl<'a> Iterator for Replay<'a> {
    type Item = &'a VehiclePositionRecord;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = self.records.get(self.next)?;
        self.next += 1;
        if let ClockMode::RealtimeScaled { speedup } = self.mode {
            match self.origin {
                None => self.origin = Some((Instant::now(), rec.timestamp)),
                Some((start, ts0)) => {
                    let due = Duration::from_secs_f64((rec.timestamp - ts0) as f64 / speedup);
                    let elapsed = start.elapsed();
                    if due > elapsed {
                        thread::sleep(due - elapsed);
                    }
                }
            }
        }
        Some(rec)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.records.len() - self.next;
        (n, Some(n))
    }
}
