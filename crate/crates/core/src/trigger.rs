//! Proximity-triggered frame acquisition around a monitored road segment.
//!
//! A vehicle *approaches* when it is first seen inside the activation radius
//! after having been outside it (or never seen). The first approach opens an
//! acquisition session of `frame_count` frames spaced `frame_interval_s`
//! apart; later approaches that land inside the session's capture window join
//! it instead of opening a second one.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::feed::{Direction, VehiclePositionRecord};
use crate::manifest::ManifestRow;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_ACTIVATION_RADIUS_M: f64 = 500.0;
pub const DEFAULT_FRAME_COUNT: usize = 6;
pub const DEFAULT_FRAME_INTERVAL_S: i64 = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let (a, b) = s.split_once(',')?;
        Some(Self::new(a.trim().parse().ok()?, b.trim().parse().ok()?))
    }
}

/// Great-circle distance in meters on a sphere of radius 6,371 km.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitoredSegment {
    pub camera: GeoPoint,
    pub activation_radius_m: f64,
    pub segment_length_m: f64,
}

impl MonitoredSegment {
    /// Default geometry: the segment spans the activation radius on both sides.
    pub fn new(camera: GeoPoint, activation_radius_m: f64) -> Result<Self> {
        if !(activation_radius_m > 0.0 && activation_radius_m.is_finite()) {
            return Err(Error::Argument(format!(
                "activation radius must be positive, got {activation_radius_m}"
            )));
        }
        Ok(Self {
            camera,
            activation_radius_m,
            segment_length_m: 2.0 * activation_radius_m,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcquisitionPlan {
    pub frame_count: usize,
    pub frame_interval_s: i64,
}

impl Default for AcquisitionPlan {
    fn default() -> Self {
        Self {
            frame_count: DEFAULT_FRAME_COUNT,
            frame_interval_s: DEFAULT_FRAME_INTERVAL_S,
        }
    }
}

impl AcquisitionPlan {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 || self.frame_interval_s <= 0 {
            return Err(Error::Argument(format!(
                "acquisition plan needs frames >= 1 and interval > 0, got {} / {}",
                self.frame_count, self.frame_interval_s
            )));
        }
        Ok(())
    }

    /// Offset of the last scheduled frame from the session start.
    pub fn window_s(&self) -> i64 {
        (self.frame_count as i64 - 1) * self.frame_interval_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionStatus {
    Scheduled,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedFrame {
    pub index: usize,
    pub capture_ts: i64,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSession {
    pub session_id: String,
    pub start_ts: i64,
    pub frame_count: usize,
    pub frame_interval_s: i64,
    /// Insertion-ordered, no repeats.
    pub trip_ids: Vec<(String, Direction)>,
    pub frames: Vec<CapturedFrame>,
    /// Frame indices whose capture failed.
    pub gaps: Vec<usize>,
    pub status: SessionStatus,
}

impl AcquisitionSession {
    fn open(session_id: String, start_ts: i64, plan: AcquisitionPlan) -> Self {
        Self {
            session_id,
            start_ts,
            frame_count: plan.frame_count,
            frame_interval_s: plan.frame_interval_s,
            trip_ids: Vec::new(),
            frames: Vec::new(),
            gaps: Vec::new(),
            status: SessionStatus::Scheduled,
        }
    }

    pub fn window_end(&self) -> i64 {
        self.start_ts + (self.frame_count as i64 - 1) * self.frame_interval_s
    }

    /// Whether an approach at `ts` can still join this session.
    pub fn is_joinable_at(&self, ts: i64) -> bool {
        self.status == SessionStatus::Scheduled && ts >= self.start_ts && ts <= self.window_end()
    }

    pub fn has_trip(&self, trip_id: &str) -> bool {
        self.trip_ids.iter().any(|(t, _)| t == trip_id)
    }

    pub fn scheduled_ts(&self, index: usize) -> i64 {
        self.start_ts + index as i64 * self.frame_interval_s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripApproachRecord {
    pub trip_id: String,
    pub direction: Direction,
    pub approach_ts: i64,
    pub session_id: String,
    /// Occupancy reported on the triggering position record.
    pub occupancy: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TriggerDecision {
    None,
    OpenSession(String),
    JoinSession(String),
}

#[derive(Debug, Error)]
pub enum TriggerError {
    #[error("record for trip {trip_id} at {ts} is older than last processed timestamp {last}")]
    OutOfOrder { trip_id: String, ts: i64, last: i64 },
    #[error("session {session_id} captured no frames; trips {trips:?} excluded")]
    SessionFailed {
        session_id: String,
        trips: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureError(pub String);

/// Anything that can hand back a frame for a scheduled capture time.
pub trait FrameSource {
    fn capture(
        &mut self,
        capture_ts: i64,
        session: &AcquisitionSession,
    ) -> std::result::Result<String, CaptureError>;
}

/// Reads pre-recorded frames named `<capture_ts>.ppm` from a directory.
#[derive(Debug, Clone)]
pub struct ArchiveFrameSource {
    dir: PathBuf,
}

impl ArchiveFrameSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn frame_path(dir: &Path, capture_ts: i64) -> PathBuf {
        dir.join(format!("{capture_ts}.ppm"))
    }
}

impl FrameSource for ArchiveFrameSource {
    fn capture(
        &mut self,
        capture_ts: i64,
        _session: &AcquisitionSession,
    ) -> std::result::Result<String, CaptureError> {
        let path = Self::frame_path(&self.dir, capture_ts);
        if path.is_file() {
            Ok(path.to_string_lossy().into_owned())
        } else {
            Err(CaptureError(format!("no archived frame at {}", path.display())))
        }
    }
}

/// Requests every scheduled frame of `session` from `source`. With `pace`
/// set to a speedup factor the call sleeps `interval / speedup` between
/// requests; otherwise the spacing is purely on the simulated clock.
pub fn run_session(
    mut session: AcquisitionSession,
    source: &mut dyn FrameSource,
    pace: Option<f64>,
) -> std::result::Result<AcquisitionSession, (AcquisitionSession, TriggerError)> {
    session.frames.clear();
    session.gaps.clear();
    for index in 0..session.frame_count {
        if index > 0 {
            if let Some(speedup) = pace {
                thread::sleep(Duration::from_secs_f64(session.frame_interval_s as f64 / speedup));
            }
        }
        let ts = session.scheduled_ts(index);
        match source.capture(ts, &session) {
            Ok(reference) => session.frames.push(CapturedFrame {
                index,
                capture_ts: ts,
                reference,
            }),
            Err(_) => session.gaps.push(index),
        }
    }
    if session.frames.is_empty() {
        session.status = SessionStatus::Failed;
        let err = TriggerError::SessionFailed {
            session_id: session.session_id.clone(),
            trips: session.trip_ids.iter().map(|(t, _)| t.clone()).collect(),
        };
        Err((session, err))
    } else {
        session.status = SessionStatus::Completed;
        Ok(session)
    }
}

/// Single-writer registry of sessions and approaches for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRegistry {
    segment: MonitoredSegment,
    plan: AcquisitionPlan,
    sessions: Vec<AcquisitionSession>,
    approaches: Vec<TripApproachRecord>,
    /// Last known inside/outside state per trip; absent means never seen.
    inside: HashMap<String, bool>,
    last_ts: Option<i64>,
}

impl SessionRegistry {
    pub fn new(segment: MonitoredSegment, plan: AcquisitionPlan) -> Self {
        Self {
            segment,
            plan,
            sessions: Vec::new(),
            approaches: Vec::new(),
            inside: HashMap::new(),
            last_ts: None,
        }
    }

    pub fn segment(&self) -> &MonitoredSegment {
        &self.segment
    }

    pub fn plan(&self) -> AcquisitionPlan {
        self.plan
    }

    pub fn sessions(&self) -> &[AcquisitionSession] {
        &self.sessions
    }

    pub fn approaches(&self) -> &[TripApproachRecord] {
        &self.approaches
    }

    /// Sessions whose capture window still covers `ts`.
    pub fn open_sessions_at(&self, ts: i64) -> impl Iterator<Item = &AcquisitionSession> {
        self.sessions.iter().filter(move |s| s.is_joinable_at(ts))
    }

    pub fn process_position(
        &mut self,
        record: &VehiclePositionRecord,
    ) -> std::result::Result<TriggerDecision, TriggerError> {
        if let Some(last) = self.last_ts {
            if record.timestamp < last {
                return Err(TriggerError::OutOfOrder {
                    trip_id: record.trip_id.clone(),
                    ts: record.timestamp,
                    last,
                });
            }
        }
        self.last_ts = Some(record.timestamp);

        let distance = haversine_m(self.segment.camera, GeoPoint::new(record.lat, record.lon));
        let was_inside = self
            .inside
            .insert(record.trip_id.clone(), distance <= self.segment.activation_radius_m)
            .unwrap_or(false);
        if distance > self.segment.activation_radius_m || was_inside {
            return Ok(TriggerDecision::None);
        }

        let ts = record.timestamp;
        let joinable = self.sessions.iter().rposition(|s| s.is_joinable_at(ts));
        let (idx, decision) = match joinable {
            Some(i) if self.sessions[i].has_trip(&record.trip_id) => {
                return Ok(TriggerDecision::None);
            }
            Some(i) => (i, TriggerDecision::JoinSession(self.sessions[i].session_id.clone())),
            None => {
                let id = format!("S{:05}", self.sessions.len() + 1);
                self.sessions.push(AcquisitionSession::open(id.clone(), ts, self.plan));
                (self.sessions.len() - 1, TriggerDecision::OpenSession(id))
            }
        };
        let session = &mut self.sessions[idx];
        session.trip_ids.push((record.trip_id.clone(), record.direction));
        self.approaches.push(TripApproachRecord {
            trip_id: record.trip_id.clone(),
            direction: record.direction,
            approach_ts: ts,
            session_id: session.session_id.clone(),
            occupancy: record.occupancy,
        });
        Ok(decision)
    }

    /// Runs every still-scheduled session whose window ended before `now`
    /// (all of them when `now` is `None`). Returns the failures.
    pub fn capture_due(
        &mut self,
        now: Option<i64>,
        source: &mut dyn FrameSource,
        pace: Option<f64>,
    ) -> Vec<TriggerError> {
        let mut failures = Vec::new();
        for slot in self.sessions.iter_mut() {
            let due = slot.status == SessionStatus::Scheduled
                && now.is_none_or(|t| t > slot.window_end());
            if !due {
                continue;
            }
            let session = std::mem::replace(slot, AcquisitionSession::open(String::new(), 0, self.plan));
            *slot = match run_session(session, source, pace) {
                Ok(done) => done,
                Err((failed, err)) => {
                    failures.push(err);
                    failed
                }
            };
        }
        failures
    }

    /// Approaches belonging to completed sessions, in approach order.
    pub fn successful_approaches(&self) -> Vec<&TripApproachRecord> {
        let ok: HashMap<&str, bool> = self
            .sessions
            .iter()
            .map(|s| (s.session_id.as_str(), s.status == SessionStatus::Completed))
            .collect();
        self.approaches
            .iter()
            .filter(|a| ok.get(a.session_id.as_str()).copied().unwrap_or(false))
            .collect()
    }
}

#[derive(Debug)]
pub struct TriggerOutcome {
    pub registry: SessionRegistry,
    pub failures: Vec<TriggerError>,
}

/// Feeds `records` through a fresh registry, capturing each session as soon as
/// the feed clock passes its window and flushing the rest at the end.
pub fn run_trigger<'a>(
    records: impl IntoIterator<Item = &'a VehiclePositionRecord>,
    segment: MonitoredSegment,
    plan: AcquisitionPlan,
    source: &mut dyn FrameSource,
) -> std::result::Result<TriggerOutcome, TriggerError> {
    let mut registry = SessionRegistry::new(segment, plan);
    let mut failures = Vec::new();
    for rec in records {
        failures.extend(registry.capture_due(Some(rec.timestamp), source, None));
        registry.process_position(rec)?;
    }
    failures.extend(registry.capture_due(None, source, None));
    Ok(TriggerOutcome { registry, failures })
}

pub const TRIP_DB_HEADER: [&str; 4] = ["trip_id", "direction", "approach_ts", "session_id"];

/// Writes the trip database: one row per approach in a completed session.
pub fn export_trip_database(registry: &SessionRegistry, path: &Path) -> Result<usize> {
    let rows = registry.successful_approaches();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(TRIP_DB_HEADER).map_err(|e| Error::csv(path, e))?;
    for a in &rows {
        w.write_record([
            a.trip_id.as_str(),
            &a.direction.code().to_string(),
            &a.approach_ts.to_string(),
            a.session_id.as_str(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

/// Reads a trip database or trip-attribute file; occupancy is NaN when the
/// file has no occupancy column.
pub fn read_trip_database(path: &Path) -> Result<Vec<TripApproachRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Format(format!("{}: malformed trip row {:?}", path.display(), row));
        let direction = row
            .get(1)
            .and_then(|d| d.parse().ok())
            .and_then(Direction::from_code)
            .ok_or_else(bad)?;
        out.push(TripApproachRecord {
            trip_id: row.get(0).ok_or_else(bad)?.to_string(),
            direction,
            approach_ts: row.get(2).and_then(|t| t.parse().ok()).ok_or_else(bad)?,
            session_id: row.get(3).ok_or_else(bad)?.to_string(),
            occupancy: row.get(4).and_then(|o| o.parse().ok()).unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

/// One manifest row per captured frame and trip of every completed session.
pub fn session_manifest(registry: &SessionRegistry) -> Vec<ManifestRow> {
    let mut rows = Vec::new();
    for s in registry.sessions().iter().filter(|s| s.status == SessionStatus::Completed) {
        for f in &s.frames {
            for (trip, dir) in &s.trip_ids {
                rows.push(ManifestRow {
                    frame_path: f.reference.clone(),
                    trip_id: trip.clone(),
                    direction: *dir,
                    capture_ts: f.capture_ts,
                    session_id: s.session_id.clone(),
                    label: None,
                    lineage: None,
                });
            }
        }
    }
    rows
}

/// Companion to the trip database carrying the approach occupancy.
pub fn export_trip_attributes(registry: &SessionRegistry, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["trip_id", "direction", "approach_ts", "session_id", "occupancy"])
        .map_err(|e| Error::csv(path, e))?;
    for a in registry.successful_approaches() {
        w.write_record([
            a.trip_id.clone(),
            a.direction.code().to_string(),
            a.approach_ts.to_string(),
            a.session_id.clone(),
            a.occupancy.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
