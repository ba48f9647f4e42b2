//! Effective travel times, percentile thresholds and travel-time bands.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::feed::Direction;
use crate::manifest::{FrameLabel, ManifestRow};
use crate::trigger::TripApproachRecord;

pub const MIN_THRESHOLD_VALUES: usize = 10;

/// Ordinal travel-time band; the derive order is the band order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TravelTimeBand {
    Low,
    Moderate,
    AboveAverage,
    High,
}

impl TravelTimeBand {
    pub const ALL: [TravelTimeBand; 4] = [
        TravelTimeBand::Low,
        TravelTimeBand::Moderate,
        TravelTimeBand::AboveAverage,
        TravelTimeBand::High,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TravelTimeBand::Low => "Low",
            TravelTimeBand::Moderate => "Moderate",
            TravelTimeBand::AboveAverage => "AboveAverage",
            TravelTimeBand::High => "High",
        }
    }

    /// Short regression-table names.
    pub fn dummy_name(self) -> &'static str {
        match self {
            TravelTimeBand::Low => "TTB_Low",
            TravelTimeBand::Moderate => "TTB_Mod",
            TravelTimeBand::AboveAverage => "TTB_Aav",
            TravelTimeBand::High => "TTB_High",
        }
    }
}

impl fmt::Display for TravelTimeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TravelTimeBand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Low" | "0" => Ok(TravelTimeBand::Low),
            "Moderate" | "1" => Ok(TravelTimeBand::Moderate),
            "AboveAverage" | "2" => Ok(TravelTimeBand::AboveAverage),
            "High" | "3" => Ok(TravelTimeBand::High),
            other => Err(Error::Format(format!("unknown band {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvlRecord {
    pub trip_id: String,
    pub direction: Direction,
    /// Total time across the segment, seconds.
    pub segment_travel_time_s: f64,
    /// Stop dwell, seconds; 0 without a stop event.
    pub dwell_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveTravelTime {
    pub trip_id: String,
    pub direction: Direction,
    pub value_s: f64,
}

/// Travel time minus dwell. Fails when dwell does not leave a positive remainder.
pub fn effective_travel_time(record: &AvlRecord) -> Result<EffectiveTravelTime> {
    let (ts, dwell) = (record.segment_travel_time_s, record.dwell_s);
    if !(ts > 0.0 && ts.is_finite() && dwell >= 0.0 && dwell < ts) {
        return Err(Error::Data(format!(
            "trip {}: travel time {ts} s with dwell {dwell} s",
            record.trip_id
        )));
    }
    Ok(EffectiveTravelTime {
        trip_id: record.trip_id.clone(),
        direction: record.direction,
        value_s: ts - dwell,
    })
}

pub fn read_avl(path: &Path) -> Result<Vec<AvlRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Format(format!("{} row {}: malformed AVL record", path.display(), i + 2));
        let dwell = match rec.get(3).map(str::trim) {
            None | Some("") => 0.0,
            Some(d) => d.parse().map_err(|_| bad())?,
        };
        out.push(AvlRecord {
            trip_id: rec.get(0).ok_or_else(bad)?.to_string(),
            direction: rec.get(1).and_then(Direction::parse_name).ok_or_else(bad)?,
            segment_travel_time_s: rec.get(2).and_then(|v| v.trim().parse().ok()).ok_or_else(bad)?,
            dwell_s: dwell,
        });
    }
    Ok(out)
}

pub fn write_avl(path: &Path, records: &[AvlRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["trip_id", "direction", "ts", "dwell"])
        .map_err(|e| Error::csv(path, e))?;
    for r in records {
        w.write_record([
            r.trip_id.clone(),
            r.direction.code().to_string(),
            r.segment_travel_time_s.to_string(),
            r.dwell_s.to_string(),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ThresholdScope {
    Overall,
    Inbound,
    Outbound,
}

impl ThresholdScope {
    pub fn for_direction(d: Direction) -> Self {
        match d {
            Direction::Inbound => ThresholdScope::Inbound,
            Direction::Outbound => ThresholdScope::Outbound,
        }
    }

    pub fn admits(self, d: Direction) -> bool {
        match self {
            ThresholdScope::Overall => true,
            ThresholdScope::Inbound => d == Direction::Inbound,
            ThresholdScope::Outbound => d == Direction::Outbound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandThresholds {
    pub p10_s: f64,
    pub p50_s: f64,
    pub p90_s: f64,
    pub scope: ThresholdScope,
}

/// Percentile of sorted data by linear interpolation between closest ranks:
/// position `(n - 1) * q` into the sorted sample.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn sorted_values(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn thresholds_from_values(values: &[f64], scope: ThresholdScope) -> Result<BandThresholds> {
    if values.len() < MIN_THRESHOLD_VALUES {
        return Err(Error::Data(format!(
            "{scope:?} scope has {} values; at least {MIN_THRESHOLD_VALUES} needed for thresholds",
            values.len()
        )));
    }
    let s = sorted_values(values);
    Ok(BandThresholds {
        p10_s: percentile_sorted(&s, 0.10),
        p50_s: percentile_sorted(&s, 0.50),
        p90_s: percentile_sorted(&s, 0.90),
        scope,
    })
}

pub fn compute_thresholds(values: &[EffectiveTravelTime], scope: ThresholdScope) -> Result<BandThresholds> {
    let v: Vec<f64> = values
        .iter()
        .filter(|e| scope.admits(e.direction))
        .map(|e| e.value_s)
        .collect();
    thresholds_from_values(&v, scope)
}

/// `<= p10` Low, `(p10, p50]` Moderate, `(p50, p90)` AboveAverage, `>= p90` High.
pub fn assign_band(value_s: f64, t: &BandThresholds) -> TravelTimeBand {
    if value_s <= t.p10_s {
        TravelTimeBand::Low
    } else if value_s <= t.p50_s {
        TravelTimeBand::Moderate
    } else if value_s < t.p90_s {
        TravelTimeBand::AboveAverage
    } else {
        TravelTimeBand::High
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdMode {
    #[default]
    Sample,
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescriptiveStats {
    pub mean: f64,
    pub sd: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn descriptive_stats(values: &[f64], sd_mode: SdMode) -> Result<DescriptiveStats> {
    if values.is_empty() {
        return Err(Error::Data("descriptive statistics of an empty sample".into()));
    }
    let n = values.len();
    let s = sorted_values(values);
    let mean = s.iter().sum::<f64>() / n as f64;
    let ss: f64 = s.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match sd_mode {
        SdMode::Sample if n > 1 => (n - 1) as f64,
        SdMode::Sample => 1.0,
        SdMode::Population => n as f64,
    };
    Ok(DescriptiveStats {
        mean,
        sd: (ss / denom).sqrt(),
        p10: percentile_sorted(&s, 0.10),
        p50: percentile_sorted(&s, 0.50),
        p90: percentile_sorted(&s, 0.90),
        min: s[0],
        max: s[n - 1],
        count: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScopePolicy {
    #[default]
    PerDirection,
    Overall,
}

impl FromStr for ScopePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "per-direction" => Ok(ScopePolicy::PerDirection),
            "overall" => Ok(ScopePolicy::Overall),
            other => Err(Error::Argument(format!("unknown scope policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabelOutcome {
    pub rows: Vec<ManifestRow>,
    pub thresholds: Vec<BandThresholds>,
    /// Per-trip effective travel time for every trip that was labeled.
    pub trips: BTreeMap<String, (Direction, f64, TravelTimeBand)>,
    pub dropped: Vec<String>,
}

/// Attaches `(eff_tt_s, band)` to every frame whose trip is in both the trip
/// database and the AVL data. Thresholds come from those trips only, once,
/// before any assignment. Existing labels are overwritten, so relabeling is
/// idempotent.
pub fn label_dataset(
    manifest: &[ManifestRow],
    trip_db: &[TripApproachRecord],
    avl: &[AvlRecord],
    policy: ScopePolicy,
) -> Result<LabelOutcome> {
    let recorded: HashMap<&str, Direction> =
        trip_db.iter().map(|a| (a.trip_id.as_str(), a.direction)).collect();
    let mut dropped = Vec::new();
    let mut effective: BTreeMap<String, EffectiveTravelTime> = BTreeMap::new();
    for rec in avl {
        if !recorded.contains_key(rec.trip_id.as_str()) || effective.contains_key(&rec.trip_id) {
            continue;
        }
        match effective_travel_time(rec) {
            Ok(e) => {
                effective.insert(rec.trip_id.clone(), e);
            }
            Err(e) => dropped.push(e.to_string()),
        }
    }

    let scopes: Vec<ThresholdScope> = match policy {
        ScopePolicy::Overall => vec![ThresholdScope::Overall],
        ScopePolicy::PerDirection => {
            let mut s: Vec<_> = effective
                .values()
                .map(|e| ThresholdScope::for_direction(e.direction))
                .collect();
            s.sort();
            s.dedup();
            s
        }
    };
    let values: Vec<EffectiveTravelTime> = effective.values().cloned().collect();
    let thresholds = scopes
        .iter()
        .map(|&s| compute_thresholds(&values, s))
        .collect::<Result<Vec<_>>>()?;
    let threshold_for = |d: Direction| -> &BandThresholds {
        thresholds
            .iter()
            .find(|t| t.scope.admits(d))
            .expect("a scope exists for every labeled direction")
    };

    let mut trips = BTreeMap::new();
    for e in effective.values() {
        let band = assign_band(e.value_s, threshold_for(e.direction));
        trips.insert(e.trip_id.clone(), (e.direction, e.value_s, band));
    }

    let mut rows = Vec::with_capacity(manifest.len());
    for row in manifest {
        if !recorded.contains_key(row.trip_id.as_str()) {
            dropped.push(format!("{}: trip {} not in trip database", row.frame_path, row.trip_id));
            continue;
        }
        match trips.get(&row.trip_id) {
            Some(&(_, value, band)) => {
                let mut r = row.clone();
                r.label = Some(FrameLabel { eff_tt_s: value, band });
                rows.push(r);
            }
            None => dropped.push(format!("{}: trip {} missing from AVL", row.frame_path, row.trip_id)),
        }
    }
    Ok(LabelOutcome {
        rows,
        thresholds,
        trips,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn avl(trip: &str, ts: f64, dwell: f64) -> AvlRecord {
        AvlRecord {
            trip_id: trip.into(),
            direction: Direction::Inbound,
            segment_travel_time_s: ts,
            dwell_s: dwell,
        }
    }

    fn table2() -> BandThresholds {
        BandThresholds {
            p10_s: 79.0,
            p50_s: 121.0,
            p90_s: 160.0,
            scope: ThresholdScope::Overall,
        }
    }

    #[test]
    fn effective_time_subtracts_dwell() {
        assert_eq!(effective_travel_time(&avl("a", 150.0, 30.0)).unwrap().value_s, 120.0);
        assert_eq!(effective_travel_time(&avl("a", 124.0, 0.0)).unwrap().value_s, 124.0);
    }

    #[test]
    fn dwell_at_or_above_travel_time_names_the_trip() {
        let err = effective_travel_time(&avl("trip-9", 40.0, 40.0)).unwrap_err();
        assert!(err.to_string().contains("trip-9"));
    }

    #[test]
    fn identical_values_give_degenerate_thresholds() {
        let t = thresholds_from_values(&[100.0; 12], ThresholdScope::Overall).unwrap();
        assert_eq!((t.p10_s, t.p50_s, t.p90_s), (100.0, 100.0, 100.0));
    }

    #[test]
    fn too_few_values_is_an_error() {
        assert!(thresholds_from_values(&[1.0; 9], ThresholdScope::Overall).is_err());
    }

    #[test]
    fn band_boundaries() {
        let t = table2();
        assert_eq!(assign_band(79.0, &t), TravelTimeBand::Low);
        assert_eq!(assign_band(79.5, &t), TravelTimeBand::Moderate);
        assert_eq!(assign_band(121.0, &t), TravelTimeBand::Moderate);
        assert_eq!(assign_band(124.0, &t), TravelTimeBand::AboveAverage);
        assert_eq!(assign_band(160.0, &t), TravelTimeBand::High);
        assert_eq!(assign_band(310.0, &t), TravelTimeBand::High);
        assert_eq!(assign_band(35.0, &t), TravelTimeBand::Low);
    }

    #[test]
    fn single_value_population_sd_is_zero() {
        let s = descriptive_stats(&[100.0], SdMode::Population).unwrap();
        assert_eq!((s.mean, s.sd, s.count), (100.0, 0.0, 1));
        assert!(descriptive_stats(&[], SdMode::Sample).is_err());
    }

    #[test]
    fn band_parse_round_trip() {
        for b in TravelTimeBand::ALL {
            assert_eq!(b.name().parse::<TravelTimeBand>().unwrap(), b);
        }
    }

    proptest::proptest! {
        #[test]
        fn band_assignment_is_monotone(a in 0.0f64..400.0, b in 0.0f64..400.0) {
            let t = table2();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(assign_band(lo, &t) <= assign_band(hi, &t));
        }
    }
}
