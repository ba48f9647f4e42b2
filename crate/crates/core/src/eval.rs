//! Cross-validation protocol and classification metrics.
//!
//! Folds split at the trip level, stratified by band, so every frame of a
//! trip (and every augmented view of it) sits on one side of each fold.
//! Sequence inference averages per-frame probability vectors over a trip.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::feed::Direction;
use crate::labeling::TravelTimeBand;
use crate::manifest::ManifestRow;
use crate::vit::argmax;
use crate::{local_hour, seed_for};

const K: usize = TravelTimeBand::COUNT;

// ---------------------------------------------------------------------------
// Folds

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// Test-side fold index of each trip.
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn test_trips(&self, fold: usize) -> BTreeSet<&str> {
        self.fold_of
            .iter()
            .filter(|&(_, &f)| f == fold)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    /// `Some(true)` when the trip is on the test side of `fold`; `None` for
    /// trips outside the plan.
    pub fn is_test(&self, fold: usize, trip_id: &str) -> Option<bool> {
        self.fold_of.get(trip_id).map(|&f| f == fold)
    }

    /// Splits manifest row indices into `(train, test)` for one fold. Rows
    /// whose trip is not in the plan are left out of both.
    pub fn split_rows(&self, fold: usize, rows: &[ManifestRow]) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            match self.is_test(fold, &r.trip_id) {
                Some(true) => test.push(i),
                Some(false) => train.push(i),
                None => {}
            }
        }
        (train, test)
    }
}

/// Trip-level stratified k-fold assignment. Trips are shuffled within each
/// band and dealt round-robin, continuing the deal across bands so fold
/// sizes stay balanced.
pub fn make_folds(trips: &[(String, TravelTimeBand)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Argument(format!("need at least 2 folds, got {k}")));
    }
    let mut strata: BTreeMap<TravelTimeBand, BTreeSet<&str>> = BTreeMap::new();
    for (t, b) in trips {
        strata.entry(*b).or_default().insert(t.as_str());
    }
    for band in TravelTimeBand::ALL {
        let n = strata.get(&band).map_or(0, BTreeSet::len);
        if n < k {
            return Err(Error::Data(format!("band {band} has {n} trips, fewer than {k} folds")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, "folds"));
    let mut fold_of = BTreeMap::new();
    let mut deal = 0usize;
    for members in strata.values() {
        let mut v: Vec<&str> = members.iter().copied().collect();
        v.shuffle(&mut rng);
        for t in v {
            fold_of.insert(t.to_string(), deal % k);
            deal += 1;
        }
    }
    Ok(FoldPlan { k, fold_of })
}

/// One `(trip, direction, band)` per labeled trip among original rows.
pub fn trips_from_manifest(rows: &[ManifestRow]) -> Vec<(String, Direction, TravelTimeBand)> {
    let mut seen = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_original()) {
        if let Some(b) = r.band() {
            seen.entry(r.trip_id.clone()).or_insert((r.direction, b));
        }
    }
    seen.into_iter().map(|(t, (d, b))| (t, d, b)).collect()
}

/// Counts augmented rows whose source frame (for the same trip) lies on the
/// other side of some fold.
pub fn lineage_violations(plan: &FoldPlan, rows: &[ManifestRow]) -> usize {
    let source_trip: HashMap<(&str, &str), &str> = rows
        .iter()
        .filter(|r| r.is_original())
        .map(|r| ((r.frame_path.as_str(), r.trip_id.as_str()), r.trip_id.as_str()))
        .collect();
    let mut bad = 0;
    for r in rows.iter().filter(|r| !r.is_original()) {
        let src = r.lineage.as_ref().map(|l| l.source_frame_id.as_str()).unwrap_or("");
        let Some(src_trip) = source_trip.get(&(src, r.trip_id.as_str())) else {
            bad += 1;
            continue;
        };
        for fold in 0..plan.k {
            if plan.is_test(fold, src_trip) != plan.is_test(fold, &r.trip_id) {
                bad += 1;
                break;
            }
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Metrics

/// Rows are predicted bands, columns true bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    /// From `(predicted, true)` pairs.
    pub fn from_pairs(pairs: &[(TravelTimeBand, TravelTimeBand)]) -> Self {
        let mut m = Self::default();
        for &(p, t) in pairs {
            m.counts[p.index()][t.index()] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn column_total(&self, truth: usize) -> u64 {
        (0..K).map(|p| self.counts[p][truth]).sum()
    }

    pub fn row_total(&self, pred: usize) -> u64 {
        self.counts[pred].iter().sum()
    }

    /// Each column divided by its total so columns sum to 1; empty columns
    /// stay zero.
    pub fn normalized(&self) -> [[f64; K]; K] {
        let mut out = [[0.0; K]; K];
        for t in 0..K {
            let total = self.column_total(t);
            if total == 0 {
                continue;
            }
            for (p, row) in out.iter_mut().enumerate() {
                row[t] = self.counts[p][t] as f64 / total as f64;
            }
        }
        out
    }

    /// Confusions between bands that are not neighbours in the ordering.
    pub fn non_adjacent(&self) -> u64 {
        let mut n = 0;
        for p in 0..K {
            for t in 0..K {
                if p.abs_diff(t) >= 2 {
                    n += self.counts[p][t];
                }
            }
        }
        n
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for p in 0..K {
            for t in 0..K {
                self.counts[p][t] += other.counts[p][t];
            }
        }
    }

    pub fn metrics(&self) -> ClassMetrics {
        let mut m = ClassMetrics::default();
        for c in 0..K {
            let tp = self.counts[c][c] as f64;
            let predicted = self.row_total(c) as f64;
            let actual = self.column_total(c) as f64;
            m.support[c] = self.column_total(c);
            m.precision[c] = if predicted > 0.0 { tp / predicted } else { 0.0 };
            m.recall[c] = if actual > 0.0 { tp / actual } else { 0.0 };
            let (p, r) = (m.precision[c], m.recall[c]);
            m.f1[c] = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let total = self.total();
        m.accuracy = if total > 0 {
            (0..K).map(|c| self.counts[c][c]).sum::<u64>() as f64 / total as f64
        } else {
            0.0
        };
        m.macro_precision = m.precision.iter().sum::<f64>() / K as f64;
        m.macro_recall = m.recall.iter().sum::<f64>() / K as f64;
        m.macro_f1 = m.f1.iter().sum::<f64>() / K as f64;
        m
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("predicted\\true");
        for b in TravelTimeBand::ALL {
            let _ = write!(s, ",{}", b.name());
        }
        s.push('\n');
        for b in TravelTimeBand::ALL {
            s.push_str(b.name());
            for t in 0..K {
                let _ = write!(s, ",{}", self.counts[b.index()][t]);
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMetrics {
    pub precision: [f64; K],
    pub recall: [f64; K],
    pub f1: [f64; K],
    pub support: [u64; K],
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

/// Confusion matrix and metrics for aligned lists of band indices.
pub fn evaluate_frames(predictions: &[usize], truths: &[usize]) -> Result<(ConfusionMatrix, ClassMetrics)> {
    if predictions.len() != truths.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    let to_band = |i: usize| {
        TravelTimeBand::from_index(i).ok_or_else(|| Error::Argument(format!("label {i} outside the band set")))
    };
    let pairs = predictions
        .iter()
        .zip(truths)
        .map(|(&p, &t)| Ok((to_band(p)?, to_band(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let cm = ConfusionMatrix::from_pairs(&pairs);
    Ok((cm, cm.metrics()))
}

/// Mean and extremes of a metric across folds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: values.iter().sum::<f64>() / values.len().max(1) as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldSummary {
    pub accuracy: Spread,
    pub precision: [Spread; K],
    pub recall: [Spread; K],
    pub f1: [Spread; K],
    pub macro_f1: Spread,
}

pub fn summarize_folds(folds: &[ClassMetrics]) -> Result<FoldSummary> {
    if folds.is_empty() {
        return Err(Error::Argument("no folds to summarize".into()));
    }
    let per = |f: &dyn Fn(&ClassMetrics) -> f64| Spread::of(&folds.iter().map(f).collect::<Vec<_>>());
    Ok(FoldSummary {
        accuracy: per(&|m| m.accuracy),
        precision: std::array::from_fn(|c| per(&|m| m.precision[c])),
        recall: std::array::from_fn(|c| per(&|m| m.recall[c])),
        f1: std::array::from_fn(|c| per(&|m| m.f1[c])),
        macro_f1: per(&|m| m.macro_f1),
    })
}

/// CSV `class,precision,recall,f1,fold` for a set of per-fold metrics.
pub fn metrics_csv(folds: &[(String, ClassMetrics)]) -> String {
    let mut s = String::from("class,precision,recall,f1,fold\n");
    for (fold, m) in folds {
        for b in TravelTimeBand::ALL {
            let c = b.index();
            let _ = writeln!(s, "{},{:.6},{:.6},{:.6},{fold}", b.name(), m.precision[c], m.recall[c], m.f1[c]);
        }
        let _ = writeln!(s, "macro,{:.6},{:.6},{:.6},{fold}", m.macro_precision, m.macro_recall, m.macro_f1);
        let _ = writeln!(s, "accuracy,,,{:.6},{fold}", m.accuracy);
    }
    s
}

pub fn summary_text(title: &str, s: &FoldSummary) -> String {
    let mut out = format!("{title}\n");
    let _ = writeln!(out, "{:<14}{:>18}{:>18}{:>18}", "class", "precision", "recall", "f1");
    for b in TravelTimeBand::ALL {
        let c = b.index();
        let cell = |sp: &Spread| format!("{:.3} ± {:.3}", sp.mean, sp.range());
        let _ = writeln!(
            out,
            "{:<14}{:>18}{:>18}{:>18}",
            b.name(),
            cell(&s.precision[c]),
            cell(&s.recall[c]),
            cell(&s.f1[c])
        );
    }
    let _ = writeln!(out, "accuracy      {:.3} ± {:.3}", s.accuracy.mean, s.accuracy.range());
    let _ = writeln!(out, "macro f1      {:.3} ± {:.3}", s.macro_f1.mean, s.macro_f1.range());
    out
}

// ---------------------------------------------------------------------------
// Sequence inference

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SequenceMode {
    /// Arithmetic mean of probability vectors.
    #[default]
    Mean,
    /// Share of frames voting for each band.
    Vote,
}

/// Aggregates a trip's per-frame probability vectors; ties go to the lower
/// band.
pub fn aggregate_sequence(frames: &[Vec<f64>], mode: SequenceMode) -> Result<(Vec<f64>, TravelTimeBand)> {
    if frames.is_empty() {
        return Err(Error::Argument("empty frame group".into()));
    }
    let mut acc = vec![0.0; K];
    for f in frames {
        match mode {
            SequenceMode::Mean => acc.iter_mut().zip(f).for_each(|(a, p)| *a += p),
            SequenceMode::Vote => acc[argmax(f)] += 1.0,
        }
    }
    acc.iter_mut().for_each(|a| *a /= frames.len() as f64);
    let band = TravelTimeBand::from_index(argmax(&acc)).expect("four classes");
    Ok((acc, band))
}

/// Model outputs for one trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TripPrediction {
    pub trip_id: String,
    pub direction: Direction,
    pub approach_ts: i64,
    pub truth: TravelTimeBand,
    /// Per-frame probability vectors in capture order.
    pub frames: Vec<Vec<f64>>,
}

pub fn sequence_inference(
    trips: &[TripPrediction],
    mode: SequenceMode,
) -> Result<BTreeMap<String, (Vec<f64>, TravelTimeBand)>> {
    trips
        .iter()
        .map(|t| {
            aggregate_sequence(&t.frames, mode)
                .map(|r| (t.trip_id.clone(), r))
                .map_err(|_| Error::Argument(format!("trip {} has no frames", t.trip_id)))
        })
        .collect()
}

/// Frame-level and sequence-level confusion matrices over the same trips.
pub fn frame_and_sequence_confusion(
    trips: &[TripPrediction],
    mode: SequenceMode,
) -> Result<(ConfusionMatrix, ConfusionMatrix)> {
    let mut frame_pairs = Vec::new();
    let mut seq_pairs = Vec::new();
    for t in trips {
        for f in &t.frames {
            frame_pairs.push((TravelTimeBand::from_index(argmax(f)).expect("four classes"), t.truth));
        }
        let (_, b) = aggregate_sequence(&t.frames, mode)
            .map_err(|_| Error::Argument(format!("trip {} has no frames", t.trip_id)))?;
        seq_pairs.push((b, t.truth));
    }
    Ok((ConfusionMatrix::from_pairs(&frame_pairs), ConfusionMatrix::from_pairs(&seq_pairs)))
}

/// Accuracy with a normal-approximation binomial 95% interval, clipped to
/// [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct LengthBucket {
    pub length: usize,
    /// `None` aggregates every band.
    pub band: Option<TravelTimeBand>,
    pub n: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn binomial_ci95(successes: usize, n: usize) -> (f64, f64, f64) {
    let p = successes as f64 / n as f64;
    let half = 1.96 * (p * (1.0 - p) / n as f64).sqrt();
    (p, (p - half).max(0.0), (p + half).min(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthBucketing {
    /// Bucket each trip by the number of frames it actually has.
    #[default]
    GroupSize,
    /// Score every prefix `1..=len` of each trip's sequence.
    Prefixes,
}

pub fn accuracy_vs_sequence_length(
    trips: &[TripPrediction],
    mode: SequenceMode,
    bucketing: LengthBucketing,
) -> Result<Vec<LengthBucket>> {
    // (length, band index or K for all) -> (correct, n)
    let mut tally: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for t in trips {
        let lengths: Vec<usize> = match bucketing {
            LengthBucketing::GroupSize => vec![t.frames.len()],
            LengthBucketing::Prefixes => (1..=t.frames.len()).collect(),
        };
        for n in lengths {
            let (_, b) = aggregate_sequence(&t.frames[..n], mode)
                .map_err(|_| Error::Argument(format!("trip {} has no frames", t.trip_id)))?;
            let hit = (b == t.truth) as usize;
            for key in [(n, t.truth.index()), (n, K)] {
                let e = tally.entry(key).or_default();
                e.0 += hit;
                e.1 += 1;
            }
        }
    }
    Ok(tally
        .into_iter()
        .map(|((length, band), (correct, n))| {
            let (accuracy, ci_low, ci_high) = binomial_ci95(correct, n);
            LengthBucket {
                length,
                band: TravelTimeBand::from_index(band),
                n,
                accuracy,
                ci_low,
                ci_high,
            }
        })
        .collect())
}

pub fn length_buckets_csv(buckets: &[LengthBucket]) -> String {
    let mut s = String::from("length,band,n,accuracy,ci_low,ci_high\n");
    for b in buckets {
        let band = b.band.map_or("all", TravelTimeBand::name);
        let _ = writeln!(s, "{},{band},{},{:.6},{:.6},{:.6}", b.length, b.n, b.accuracy, b.ci_low, b.ci_high);
    }
    s
}

pub const FIRST_HOUR: u32 = 6;
pub const LAST_HOUR: u32 = 21;

#[derive(Debug, Clone, PartialEq)]
pub struct HourBucket {
    pub direction: Direction,
    /// `None` for hours outside the acquisition window.
    pub hour: Option<u32>,
    pub n: usize,
    pub correct: usize,
}

impl HourBucket {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

/// Sequence-level accuracy bucketed by direction and local hour of approach.
pub fn accuracy_by_hour(trips: &[TripPrediction], mode: SequenceMode, utc_offset_s: i64) -> Result<Vec<HourBucket>> {
    let mut tally: BTreeMap<(Direction, Option<u32>), (usize, usize)> = BTreeMap::new();
    for t in trips {
        let (_, b) = aggregate_sequence(&t.frames, mode)
            .map_err(|_| Error::Argument(format!("trip {} has no frames", t.trip_id)))?;
        let h = local_hour(t.approach_ts, utc_offset_s);
        let hour = (FIRST_HOUR..=LAST_HOUR).contains(&h).then_some(h);
        let e = tally.entry((t.direction, hour)).or_default();
        e.0 += (b == t.truth) as usize;
        e.1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|((direction, hour), (correct, n))| HourBucket {
            direction,
            hour,
            n,
            correct,
        })
        .collect())
}

pub fn hour_buckets_csv(buckets: &[HourBucket]) -> String {
    let mut s = String::from("direction,hour,n,correct,accuracy\n");
    for b in buckets {
        let hour = b.hour.map_or("other".to_string(), |h| h.to_string());
        let _ = writeln!(s, "{},{hour},{},{},{:.6}", b.direction.name(), b.n, b.correct, b.accuracy());
    }
    s
}
