//! Synthetic stand-in for the roadside camera and the agency data feeds.
//!
//! Frames are rendered as a textured road with one bright blob per vehicle:
//! inbound traffic on the right half, outbound on the left. The number of
//! blobs for a trip's direction grows with its effective travel time, which
//! makes vehicle count the visual cue a classifier can learn.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feed::{Direction, FeedStream, VehiclePositionRecord};
use crate::labeling::{assign_band, thresholds_from_values, AvlRecord, BandThresholds, ThresholdScope};
use crate::manifest::ManifestRow;
use crate::raster::{RasterFrame, CHANNELS};
use crate::trigger::{
    run_trigger, AcquisitionPlan, AcquisitionSession, ArchiveFrameSource, CaptureError, FrameSource,
    GeoPoint, MonitoredSegment, SessionStatus, EARTH_RADIUS_M,
};
use crate::{local_hour, seed_for};

pub const DEFAULT_WIDTH: usize = 1280;
pub const DEFAULT_HEIGHT: usize = 720;
pub const MAX_VEHICLES: u32 = 30;
/// Fraction of the frame height above the road (sky and buildings).
const HORIZON: f64 = 0.3;
/// Lane grid per half of the road; holds more than `MAX_VEHICLES` vehicles.
const SLOT_COLS: usize = 6;
const SLOT_ROWS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneGeometry {
    pub width: usize,
    pub height: usize,
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneState {
    pub vehicle_count_inbound: u32,
    pub vehicle_count_outbound: u32,
    /// 0 is night, 1 is full daylight.
    pub ambient_level: f64,
    pub noise_seed: u64,
}

/// Pixel mask of rendered vehicle blobs, row-major `width * height`.
pub type BlobMask = Vec<bool>;

pub fn render(state: &SceneState, geometry: SceneGeometry) -> Result<RasterFrame> {
    render_with_mask(state, geometry).map(|(f, _)| f)
}

pub fn render_with_mask(state: &SceneState, geometry: SceneGeometry) -> Result<(RasterFrame, BlobMask)> {
    let SceneGeometry { width: w, height: h } = geometry;
    if w == 0 || h == 0 {
        return Err(Error::Argument(format!("scene geometry {w}x{h} has zero area")));
    }
    if w < 4 || h < 4 {
        return Err(Error::Argument(format!("scene geometry {w}x{h} too small to render")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(state.noise_seed);
    let horizon = (h as f64 * HORIZON) as usize;
    let mut px = vec![0f64; w * h * CHANNELS];

    for y in 0..h {
        let base: [f64; 3] = if y < horizon {
            [96.0, 104.0, 120.0]
        } else {
            let t = (y - horizon) as f64 / (h - horizon).max(1) as f64;
            let g = 70.0 + 10.0 * t;
            [g, g, g + 4.0]
        };
        for x in 0..w {
            let n: f64 = rng.random_range(-6.0..6.0);
            let i = (y * w + x) * CHANNELS;
            for c in 0..CHANNELS {
                px[i + c] = base[c] + n;
            }
        }
    }
    // Lane divider.
    let mid = w / 2;
    for y in horizon..h {
        for x in mid.saturating_sub(w / 128)..=(mid + w / 128).min(w - 1) {
            let i = (y * w + x) * CHANNELS;
            px[i..i + 3].copy_from_slice(&[200.0, 180.0, 60.0]);
        }
    }

    // Vehicles occupy distinct slots of a lane grid on their half of the road,
    // so blob coverage grows linearly with the count.
    let mut mask = vec![false; w * h];
    let road = h - horizon;
    let halves = [
        (state.vehicle_count_outbound, 0usize, mid),
        (state.vehicle_count_inbound, mid, w),
    ];
    for (count, x0, x1) in halves {
        let sw = ((x1 - x0) / SLOT_COLS).max(1);
        let sh = (road / SLOT_ROWS).max(1);
        let bw = (sw * 4 / 5).max(1);
        let bh = (sh * 4 / 5).max(1);
        let n = (count as usize).min(SLOT_COLS * SLOT_ROWS);
        for slot in rand::seq::index::sample(&mut rng, SLOT_COLS * SLOT_ROWS, n) {
            let x = x0 + (slot % SLOT_COLS) * sw + rng.random_range(0..=sw - bw);
            let y = horizon + (slot / SLOT_COLS) * sh + rng.random_range(0..=sh - bh);
            let color = [
                rng.random_range(170.0..255.0),
                rng.random_range(170.0..255.0),
                rng.random_range(170.0..255.0),
            ];
            for yy in y..(y + bh).min(h) {
                for xx in x..(x + bw).min(x1) {
                    let i = (yy * w + xx) * CHANNELS;
                    px[i..i + 3].copy_from_slice(&color);
                    mask[yy * w + xx] = true;
                }
            }
        }
    }

    let gain = 0.3 + 0.7 * state.ambient_level.clamp(0.0, 1.0);
    let bytes = px.iter().map(|v| (v * gain).round().clamp(0.0, 255.0) as u8).collect();
    Ok((RasterFrame::new(w, h, bytes, 0)?, mask))
}

/// Deterministic daylight proxy for a local hour.
pub fn ambient_for_hour(hour: u32) -> f64 {
    match hour {
        6 => 0.45,
        7 => 0.75,
        8..=16 => 1.0,
        17 => 0.85,
        18 => 0.65,
        19 => 0.45,
        20 => 0.3,
        21 => 0.25,
        _ => 0.2,
    }
}

/// Count ranges per band used when counts are tied to band membership.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCounts {
    pub inbound: BandThresholds,
    pub outbound: BandThresholds,
    pub ranges: [(u32, u32); 4],
}

pub const SEPARABLE_RANGES: [(u32, u32); 4] = [(1, 4), (8, 12), (16, 21), (25, 30)];

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub tt_min_s: f64,
    pub tt_max_s: f64,
    /// Expected count at `tt_min_s`.
    pub floor_count: f64,
    /// Expected count at `tt_max_s`.
    pub ceiling_count: f64,
    pub count_noise_sd: f64,
    pub background_mean: f64,
    pub max_count: u32,
    /// When set, counts fall in disjoint per-band ranges.
    pub banding: Option<BandedCounts>,
}

impl Default for SceneModel {
    fn default() -> Self {
        Self {
            tt_min_s: 35.0,
            tt_max_s: 310.0,
            floor_count: 1.0,
            ceiling_count: MAX_VEHICLES as f64,
            count_noise_sd: 1.5,
            background_mean: 5.0,
            max_count: MAX_VEHICLES,
            banding: None,
        }
    }
}

impl SceneModel {
    /// Expected vehicle count in the trip's direction; non-decreasing in `tt`.
    pub fn expected_count(&self, effective_tt_s: f64, direction: Direction) -> f64 {
        match &self.banding {
            None => {
                let f = ((effective_tt_s - self.tt_min_s) / (self.tt_max_s - self.tt_min_s)).clamp(0.0, 1.0);
                self.floor_count + f * (self.ceiling_count - self.floor_count)
            }
            Some(b) => {
                let t = match direction {
                    Direction::Inbound => &b.inbound,
                    Direction::Outbound => &b.outbound,
                };
                let band = assign_band(effective_tt_s, t);
                let edges = [self.tt_min_s, t.p10_s, t.p50_s, t.p90_s, self.tt_max_s];
                let (lo, hi) = (edges[band.index()], edges[band.index() + 1]);
                let f = if hi > lo {
                    ((effective_tt_s - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                };
                let (c0, c1) = b.ranges[band.index()];
                c0 as f64 + f * (c1 - c0) as f64
            }
        }
    }

    fn realize(&self, expected: f64, direction: Direction, effective_tt_s: f64, rng: &mut impl Rng) -> u32 {
        let noise = Normal::new(0.0, self.count_noise_sd.max(1e-12)).expect("finite sd");
        let (lo, hi) = match &self.banding {
            None => (0, self.max_count),
            Some(b) => {
                let t = match direction {
                    Direction::Inbound => &b.inbound,
                    Direction::Outbound => &b.outbound,
                };
                b.ranges[assign_band(effective_tt_s, t).index()]
            }
        };
        let v = (expected + noise.sample(rng)).round();
        (v.max(lo as f64) as u32).clamp(lo, hi.min(self.max_count))
    }

    pub fn background_count(&self, rng: &mut impl Rng) -> u32 {
        let v: f64 = Normal::new(self.background_mean, 2.0).expect("finite sd").sample(rng);
        (v.round().max(0.0) as u32).min(self.max_count)
    }

    pub fn sample_scene(&self, effective_tt_s: f64, direction: Direction, hour: u32, rng: &mut impl Rng) -> SceneState {
        self.sample_session_scene(&[(direction, effective_tt_s)], hour, rng)
    }

    /// Scene for a capture shared by several trips: each direction with a trip
    /// takes its count from that trip, the other gets background traffic.
    pub fn sample_session_scene(&self, trips: &[(Direction, f64)], hour: u32, rng: &mut impl Rng) -> SceneState {
        let mut counts = [None, None];
        for &(d, tt) in trips {
            if counts[d.code() as usize].is_none() {
                let expected = self.expected_count(tt, d);
                counts[d.code() as usize] = Some(self.realize(expected, d, tt, rng));
            }
        }
        let mut fill = |c: Option<u32>| c.unwrap_or_else(|| self.background_count(rng));
        let outbound = fill(counts[0]);
        let inbound = fill(counts[1]);
        SceneState {
            vehicle_count_inbound: inbound,
            vehicle_count_outbound: outbound,
            ambient_level: ambient_for_hour(hour),
            noise_seed: rng.random(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_trips: usize,
    pub seed: u64,
    pub tt_mean_s: f64,
    pub tt_sd_s: f64,
    pub tt_min_s: f64,
    pub tt_max_s: f64,
    /// Standard deviation of the hour-of-day component of travel time.
    pub hour_effect_sd_s: f64,
    pub occupancy_effect: f64,
    pub geometry: SceneGeometry,
    pub camera: GeoPoint,
    pub activation_radius_m: f64,
    pub plan: AcquisitionPlan,
    /// Unix seconds of the first service day's 06:00 local.
    pub start_ts: i64,
    pub utc_offset_s: i64,
    pub headway_s: i64,
    pub capture_failure_rate: f64,
    /// Tie vehicle counts to disjoint per-band ranges.
    pub separable: bool,
    /// Lag-one autocorrelation of the traffic state between consecutive
    /// same-direction trips, in [0, 1).
    pub state_persistence: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_trips: 100,
            seed: 0,
            tt_mean_s: 124.0,
            tt_sd_s: 38.0,
            tt_min_s: 35.0,
            tt_max_s: 310.0,
            hour_effect_sd_s: 12.0,
            occupancy_effect: 0.15,
            geometry: SceneGeometry {
                width: 256,
                height: 256,
            },
            camera: GeoPoint::new(42.3646, -71.1032),
            activation_radius_m: 500.0,
            plan: AcquisitionPlan::default(),
            // 2022-02-23 06:00 EST.
            start_ts: 1_645_614_000,
            utc_offset_s: crate::DEFAULT_UTC_OFFSET_S,
            headway_s: 600,
            capture_failure_rate: 0.0,
            separable: false,
            state_persistence: 0.95,
        }
    }
}

const FIRST_HOUR: i64 = 6;
const LAST_HOUR: i64 = 21;
const OCCUPANCY_MEAN: f64 = 34.6;
const OCCUPANCY_SD: f64 = 26.67;
/// Relative hour-of-day travel-time profile for 06..=21, rescaled at use.
const HOUR_PROFILE: [f64; 16] = [
    -1.6, -1.0, 0.1, 0.7, -0.2, -0.4, 0.5, -0.1, -0.3, 0.4, 1.5, 1.7, 1.6, 0.2, 0.3, -0.8,
];
const PING_INTERVAL_S: i64 = 20;
const STOP_OFFSET_M: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrip {
    pub trip_id: String,
    pub direction: Direction,
    /// Nominal crossing of the upstream radius edge.
    pub enter_ts: f64,
    pub hour: u32,
    pub occupancy: f64,
    pub eff_tt_s: f64,
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub capture_ts: i64,
    pub session_id: String,
    pub trips: Vec<(String, Direction)>,
    pub state: SceneState,
    pub captured: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: CorpusConfig,
    pub scene_model: SceneModel,
    pub trips: Vec<SyntheticTrip>,
    pub feed: FeedStream,
    pub avl: Vec<AvlRecord>,
    pub sessions: Vec<AcquisitionSession>,
    pub frames: Vec<SyntheticFrame>,
}

fn hour_effects(sd: f64) -> [f64; 16] {
    let mean = HOUR_PROFILE.iter().sum::<f64>() / 16.0;
    let var = HOUR_PROFILE.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
    let scale = if var > 0.0 { sd / var.sqrt() } else { 0.0 };
    let mut out = [0.0; 16];
    for (o, v) in out.iter_mut().zip(HOUR_PROFILE) {
        *o = (v - mean) * scale;
    }
    out
}

fn occupancy_mean_for_hour(hour: u32) -> f64 {
    match hour {
        7..=9 | 16..=18 => OCCUPANCY_MEAN + 12.0,
        _ => OCCUPANCY_MEAN - 5.0,
    }
}

/// Stationary unit-variance AR(1) series driven by standard normal
/// innovations.
fn ar1(innovations: impl IntoIterator<Item = f64>, rho: f64) -> Vec<f64> {
    let k = (1.0 - rho * rho).sqrt();
    let mut prev = None;
    innovations
        .into_iter()
        .map(|e| {
            let v = match prev {
                None => e,
                Some(p) => rho * p + k * e,
            };
            prev = Some(v);
            v
        })
        .collect()
}

/// Shifts and scales to sample mean 0 and sample standard deviation 1.
fn standardized(v: &[f64]) -> Vec<f64> {
    if v.len() < 2 {
        return vec![0.0; v.len()];
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    v.iter().map(|x| if sd > 0.0 { (x - mean) / sd } else { 0.0 }).collect()
}

/// Records every capture request; optionally drops a fraction of them.
struct PlanningSource {
    rng: ChaCha8Rng,
    failure_rate: f64,
    requests: Vec<(i64, String, bool)>,
}

impl FrameSource for PlanningSource {
    fn capture(&mut self, ts: i64, session: &AcquisitionSession) -> std::result::Result<String, CaptureError> {
        let ok = self.failure_rate <= 0.0 || self.rng.random::<f64>() >= self.failure_rate;
        self.requests.push((ts, session.session_id.clone(), ok));
        if ok {
            Ok(format!("{ts}.ppm"))
        } else {
            Err(CaptureError("simulated stream dropout".into()))
        }
    }
}

impl SyntheticCorpus {
    /// Builds trips, feed, AVL records and the capture plan in memory.
    /// Frames are only described here; see [`SyntheticCorpus::write`].
    pub fn generate(config: &CorpusConfig) -> Result<Self> {
        if config.n_trips == 0 {
            return Err(Error::Argument("n_trips must be positive".into()));
        }
        if config.geometry.width == 0 || config.geometry.height == 0 {
            return Err(Error::Argument("frame geometry has zero area".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(config.seed, "synth.trips"));
        let effects = hour_effects(config.hour_effect_sd_s);
        let occ_var = (config.occupancy_effect * OCCUPANCY_SD).powi(2);
        let resid_sd = (config.tt_sd_s.powi(2) - config.hour_effect_sd_s.powi(2) - occ_var)
            .max(1.0)
            .sqrt();
        let occ_noise = Normal::new(0.0, OCCUPANCY_SD * 0.9).expect("finite sd");
        if !(0.0..1.0).contains(&config.state_persistence) {
            return Err(Error::Argument(format!(
                "state_persistence {} outside [0, 1)",
                config.state_persistence
            )));
        }

        let slots_per_day = ((LAST_HOUR - FIRST_HOUR + 1) * 3600 / config.headway_s).max(1);
        let mut trips = Vec::with_capacity(config.n_trips);
        let mut means = Vec::with_capacity(config.n_trips);
        let mut innovations = Vec::with_capacity(config.n_trips);
        for k in 0..config.n_trips {
            let direction = if k % 2 == 0 { Direction::Inbound } else { Direction::Outbound };
            let slot = (k / 2) as i64;
            let day = slot / slots_per_day;
            let offset = (slot % slots_per_day) * config.headway_s
                + if direction == Direction::Outbound { config.headway_s / 2 } else { 0 };
            let jitter: f64 = rng.random_range(-60.0..60.0);
            let enter_ts = (config.start_ts + day * 86_400 + offset) as f64 + jitter + 60.0;
            let hour = local_hour(enter_ts as i64, config.utc_offset_s);
            let occupancy = ((occupancy_mean_for_hour(hour) + occ_noise.sample(&mut rng)).clamp(0.0, 150.0)
                * 10.0)
                .round()
                / 10.0;
            let hidx = (hour as i64 - FIRST_HOUR).clamp(0, 15) as usize;
            means.push(config.tt_mean_s + effects[hidx] + config.occupancy_effect * (occupancy - OCCUPANCY_MEAN));
            innovations.push(StandardNormal.sample(&mut rng));
            let dwell_s = if rng.random::<f64>() < 0.6 {
                rng.random_range(5..=45) as f64
            } else {
                0.0
            };
            trips.push(SyntheticTrip {
                trip_id: format!("T{:06}", k + 1),
                direction,
                enter_ts,
                hour,
                occupancy,
                eff_tt_s: 0.0,
                dwell_s,
            });
        }
        // Each direction's unexplained component follows a persistent traffic
        // state, standardized so the corpus keeps its target moments whatever
        // the persistence.
        for d in Direction::ALL {
            let idx: Vec<usize> = (0..trips.len()).filter(|&i| trips[i].direction == d).collect();
            let state = standardized(&ar1(idx.iter().map(|&i| innovations[i]), config.state_persistence));
            for (&i, z) in idx.iter().zip(state) {
                let v = (means[i] + resid_sd * z).round();
                trips[i].eff_tt_s = v.clamp(config.tt_min_s, config.tt_max_s);
            }
        }

        let mut records = Vec::new();
        for t in &trips {
            records.extend(trip_pings(t, config, &mut rng));
        }
        let (feed, dropped) = FeedStream::from_records(records);
        debug_assert!(dropped.is_empty());

        let avl = trips
            .iter()
            .map(|t| AvlRecord {
                trip_id: t.trip_id.clone(),
                direction: t.direction,
                segment_travel_time_s: t.eff_tt_s + t.dwell_s,
                dwell_s: t.dwell_s,
            })
            .collect();

        let segment = MonitoredSegment::new(config.camera, config.activation_radius_m)?;
        let mut planner = PlanningSource {
            rng: ChaCha8Rng::seed_from_u64(seed_for(config.seed, "synth.failures")),
            failure_rate: config.capture_failure_rate,
            requests: Vec::new(),
        };
        let outcome = run_trigger(feed.records(), segment, config.plan, &mut planner)?;
        let sessions = outcome.registry.sessions().to_vec();

        let scene_model = SceneModel {
            banding: if config.separable {
                Some(banded_counts(&trips)?)
            } else {
                None
            },
            tt_min_s: config.tt_min_s,
            tt_max_s: config.tt_max_s,
            ..SceneModel::default()
        };
        let tt_of: BTreeMap<&str, f64> = trips.iter().map(|t| (t.trip_id.as_str(), t.eff_tt_s)).collect();
        let by_id: BTreeMap<&str, &AcquisitionSession> =
            sessions.iter().map(|s| (s.session_id.as_str(), s)).collect();
        let mut frames = Vec::with_capacity(planner.requests.len());
        for (ts, session_id, captured) in planner.requests {
            let session = by_id[session_id.as_str()];
            let pairs: Vec<(Direction, f64)> = session
                .trip_ids
                .iter()
                .map(|(id, d)| (*d, tt_of[id.as_str()]))
                .collect();
            let mut frng = ChaCha8Rng::seed_from_u64(seed_for(config.seed, &format!("synth.scene.{ts}")));
            let state = scene_model.sample_session_scene(&pairs, local_hour(ts, config.utc_offset_s), &mut frng);
            frames.push(SyntheticFrame {
                capture_ts: ts,
                session_id,
                trips: session.trip_ids.clone(),
                state,
                captured,
            });
        }

        Ok(Self {
            config: config.clone(),
            scene_model,
            trips,
            feed,
            avl,
            sessions,
            frames,
        })
    }

    /// Trips whose session captured at least one frame.
    pub fn recorded_trips(&self) -> Vec<&SyntheticTrip> {
        let ok: std::collections::HashSet<&str> = self
            .sessions
            .iter()
            .filter(|s| s.status == SessionStatus::Completed)
            .flat_map(|s| s.trip_ids.iter().map(|(t, _)| t.as_str()))
            .collect();
        self.trips.iter().filter(|t| ok.contains(t.trip_id.as_str())).collect()
    }

    pub fn manifest_rows(&self, archive_dir: &Path) -> Vec<ManifestRow> {
        let mut rows = Vec::new();
        for f in self.frames.iter().filter(|f| f.captured) {
            let path = ArchiveFrameSource::frame_path(archive_dir, f.capture_ts);
            for (trip, dir) in &f.trips {
                rows.push(ManifestRow {
                    frame_path: path.to_string_lossy().into_owned(),
                    trip_id: trip.clone(),
                    direction: *dir,
                    capture_ts: f.capture_ts,
                    session_id: f.session_id.clone(),
                    label: None,
                    lineage: None,
                });
            }
        }
        rows
    }

    pub fn render_frame(&self, frame: &SyntheticFrame) -> Result<(RasterFrame, BlobMask)> {
        let (mut img, mask) = render_with_mask(&frame.state, self.config.geometry)?;
        img.capture_ts = frame.capture_ts;
        Ok((img, mask))
    }

    /// Writes `feed.jsonl`, `avl.csv`, `frames/<ts>.ppm`, `manifest.csv` and
    /// `scenes.csv` under `out`. Frames render in parallel, one file each.
    pub fn write(&self, out: &Path) -> Result<SyntheticPaths> {
        let paths = SyntheticPaths::under(out);
        fs::create_dir_all(&paths.frames).map_err(|e| Error::io(&paths.frames, e))?;
        self.feed.write(&paths.feed)?;
        crate::labeling::write_avl(&paths.avl, &self.avl)?;
        self.frames
            .par_iter()
            .filter(|f| f.captured)
            .try_for_each(|f| {
                let (img, _) = self.render_frame(f)?;
                img.write_ppm(&ArchiveFrameSource::frame_path(&paths.frames, f.capture_ts))
            })?;
        crate::manifest::write_manifest(&paths.manifest, &self.manifest_rows(&paths.frames))?;
        self.write_scenes(&paths.scenes)?;
        Ok(paths)
    }

    fn write_scenes(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["capture_ts", "session_id", "inbound", "outbound", "ambient", "noise_seed", "captured", "width", "height"])
            .map_err(|e| Error::csv(path, e))?;
        for f in &self.frames {
            w.write_record([
                f.capture_ts.to_string(),
                f.session_id.clone(),
                f.state.vehicle_count_inbound.to_string(),
                f.state.vehicle_count_outbound.to_string(),
                f.state.ambient_level.to_string(),
                f.state.noise_seed.to_string(),
                (f.captured as u8).to_string(),
                self.config.geometry.width.to_string(),
                self.config.geometry.height.to_string(),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn banded_counts(trips: &[SyntheticTrip]) -> Result<BandedCounts> {
    let values = |d: Direction| -> Vec<f64> {
        trips.iter().filter(|t| t.direction == d).map(|t| t.eff_tt_s).collect()
    };
    Ok(BandedCounts {
        inbound: thresholds_from_values(&values(Direction::Inbound), ThresholdScope::Inbound)?,
        outbound: thresholds_from_values(&values(Direction::Outbound), ThresholdScope::Outbound)?,
        ranges: SEPARABLE_RANGES,
    })
}

/// Position pings for one trip along a straight approach through the camera.
/// The vehicle covers the 2r segment in `eff_tt + dwell` seconds, standing
/// still for the dwell at a stop just past the camera.
fn trip_pings(trip: &SyntheticTrip, config: &CorpusConfig, rng: &mut impl Rng) -> Vec<VehiclePositionRecord> {
    let r = config.activation_radius_m;
    let speed = 2.0 * r / trip.eff_tt_s;
    let stop_at = trip.enter_ts + (r + STOP_OFFSET_M) / speed;
    // Along-track offset from the camera at time t (negative = upstream).
    let along = |t: f64| -> f64 {
        let moving = if t <= stop_at {
            t - trip.enter_ts
        } else {
            (t - trip.enter_ts - trip.dwell_s).max(stop_at - trip.enter_ts)
        };
        -r + speed * moving
    };
    let sign = match trip.direction {
        Direction::Inbound => 1.0,
        Direction::Outbound => -1.0,
    };
    let phase: i64 = rng.random_range(0..PING_INTERVAL_S);
    let mut t = trip.enter_ts.floor() as i64 - 3 * PING_INTERVAL_S + phase;
    let mut out = Vec::new();
    loop {
        let s = along(t as f64);
        if s > r + 200.0 {
            break;
        }
        let lat = config.camera.lat + sign * (s / EARTH_RADIUS_M).to_degrees();
        out.push(VehiclePositionRecord {
            timestamp: t,
            trip_id: trip.trip_id.clone(),
            direction: trip.direction,
            lat,
            lon: config.camera.lon,
            occupancy: trip.occupancy,
        });
        t += PING_INTERVAL_S;
    }
    out
}

#[derive(Debug, Clone)]
pub struct SyntheticPaths {
    pub feed: PathBuf,
    pub avl: PathBuf,
    pub frames: PathBuf,
    pub manifest: PathBuf,
    pub scenes: PathBuf,
}

impl SyntheticPaths {
    pub fn under(out: &Path) -> Self {
        Self {
            feed: out.join("feed.jsonl"),
            avl: out.join("avl.csv"),
            frames: out.join("frames"),
            manifest: out.join("manifest.csv"),
            scenes: out.join("scenes.csv"),
        }
    }
}

pub fn generate_synthetic_corpus(config: &CorpusConfig, out: &Path) -> Result<(SyntheticCorpus, SyntheticPaths)> {
    let corpus = SyntheticCorpus::generate(config)?;
    let paths = corpus.write(out)?;
    Ok((corpus, paths))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> SceneGeometry {
        SceneGeometry {
            width: 128,
            height: 96,
        }
    }

    fn state(inbound: u32, outbound: u32) -> SceneState {
        SceneState {
            vehicle_count_inbound: inbound,
            vehicle_count_outbound: outbound,
            ambient_level: 1.0,
            noise_seed: 7,
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render(&state(5, 3), geom()).unwrap();
        let b = render(&state(5, 3), geom()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_area_geometry_rejected() {
        let g = SceneGeometry { width: 0, height: 10 };
        assert!(matches!(render(&state(0, 0), g), Err(Error::Argument(_))));
    }

    #[test]
    fn empty_scene_has_no_blobs() {
        let (_, mask) = render_with_mask(&state(0, 0), geom()).unwrap();
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn inbound_blobs_land_on_the_right_half() {
        let (_, mask) = render_with_mask(&state(10, 0), geom()).unwrap();
        let g = geom();
        for y in 0..g.height {
            for x in 0..g.width / 2 {
                assert!(!mask[y * g.width + x]);
            }
        }
        assert!(mask.iter().any(|&m| m));
    }

    #[test]
    fn denser_inbound_traffic_brightens_the_right_half() {
        let g = geom();
        let right = |inbound: u32, seed: u64| {
            let s = SceneState {
                noise_seed: seed,
                ..state(inbound, 0)
            };
            render(&s, g).unwrap().mean_luminance(g.width / 2, g.width)
        };
        let dense_min = (0..20).map(|s| right(20, s)).fold(f64::INFINITY, f64::min);
        let sparse_max = (0..20).map(|s| right(2, s)).fold(f64::NEG_INFINITY, f64::max);
        assert!(dense_min > sparse_max, "dense {dense_min} sparse {sparse_max}");
    }

    #[test]
    fn expected_count_spans_floor_to_ceiling() {
        let m = SceneModel::default();
        assert_eq!(m.expected_count(35.0, Direction::Inbound), m.floor_count);
        assert_eq!(m.expected_count(310.0, Direction::Inbound), m.ceiling_count);
        let mut prev = 0.0;
        for tt in 35..=310 {
            let e = m.expected_count(tt as f64, Direction::Outbound);
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn sample_scene_is_deterministic_and_uses_hour_for_ambient() {
        let m = SceneModel::default();
        let a = m.sample_scene(150.0, Direction::Inbound, 8, &mut ChaCha8Rng::seed_from_u64(3));
        let b = m.sample_scene(150.0, Direction::Inbound, 8, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.ambient_level, ambient_for_hour(8));
    }

    #[test]
    fn single_trip_corpus_has_six_frames_one_avl_row() {
        let cfg = CorpusConfig {
            n_trips: 1,
            geometry: SceneGeometry { width: 32, height: 32 },
            ..CorpusConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let (c, paths) = generate_synthetic_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(c.avl.len(), 1);
        assert!(c.feed.len() >= 2);
        assert_eq!(fs::read_dir(&paths.frames).unwrap().count(), 6);
        assert_eq!(crate::manifest::read_manifest(&paths.manifest).unwrap().len(), 6);
    }

    #[test]
    fn synthetic_sessions_do_not_merge_at_default_headway() {
        let cfg = CorpusConfig {
            n_trips: 200,
            ..CorpusConfig::default()
        };
        let c = SyntheticCorpus::generate(&cfg).unwrap();
        assert_eq!(c.sessions.len(), 200);
        assert!(c.sessions.iter().all(|s| s.trip_ids.len() == 1));
    }
}
