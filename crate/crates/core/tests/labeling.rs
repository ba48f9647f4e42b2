mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use busvision::labeling::{
    assign_band, descriptive_stats, effective_travel_time, label_dataset, thresholds_from_values, AvlRecord, SdMode,
    ScopePolicy, ThresholdScope,
};
use busvision::synth::{CorpusConfig, SyntheticCorpus};
use busvision::trigger::TripApproachRecord;
use busvision::{Direction, TravelTimeBand};

use common::*;

#[test]
fn effective_time_is_travel_minus_dwell() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let travel = rng.random_range(40.0..400.0f64);
        let dwell = if i % 5 == 0 { 0.0 } else { rng.random_range(0.0..travel - 1.0) };
        let rec = AvlRecord {
            trip_id: format!("t{i}"),
            direction: Direction::ALL[i % 2],
            segment_travel_time_s: travel,
            dwell_s: dwell,
        };
        let e = effective_travel_time(&rec).unwrap();
        assert_eq!(e.value_s, travel - dwell);
        assert_eq!(e.trip_id, rec.trip_id);
    }
}

#[test]
fn thresholds_match_sort_and_interpolate_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in [10usize, 11, 97, 1000] {
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..400.0f64)).collect();
        let t = thresholds_from_values(&values, ThresholdScope::Overall).unwrap();
        assert!((t.p10_s - percentile_oracle(&values, 0.1)).abs() < 1e-9);
        assert!((t.p50_s - percentile_oracle(&values, 0.5)).abs() < 1e-9);
        assert!((t.p90_s - percentile_oracle(&values, 0.9)).abs() < 1e-9);
    }
}

#[test]
fn fixture_reproduces_overall_descriptive_statistics() {
    let s = descriptive_stats(&table2_values(), SdMode::Sample).unwrap();
    assert_eq!(s.count, 2992);
    assert!((s.mean - 124.0).abs() < 1.0, "mean {}", s.mean);
    assert!((s.sd - 38.0).abs() < 1.0, "sd {}", s.sd);
    assert_eq!((s.p10, s.p50, s.p90, s.min, s.max), (79.0, 121.0, 160.0, 35.0, 310.0));
}

#[test]
fn descriptive_statistics_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let values: Vec<f64> = (0..500).map(|_| rng.random_range(35.0..310.0f64)).collect();
    let s = descriptive_stats(&values, SdMode::Sample).unwrap();
    let (mean, sd) = mean_sd(&values);
    assert!((s.mean - mean).abs() < 1e-9);
    assert!((s.sd - sd).abs() < 1e-9);
    let pop = descriptive_stats(&values, SdMode::Population).unwrap();
    assert!((pop.sd - sd * (499.0f64 / 500.0).sqrt()).abs() < 1e-9);
}

#[test]
fn relabeling_a_labeled_manifest_is_idempotent() {
    let corpus = SyntheticCorpus::generate(&CorpusConfig {
        n_trips: 60,
        seed: 12,
        ..CorpusConfig::default()
    })
    .unwrap();
    let manifest = corpus.manifest_rows(std::path::Path::new("frames"));
    let db: Vec<TripApproachRecord> = corpus
        .trips
        .iter()
        .map(|t| TripApproachRecord {
            trip_id: t.trip_id.clone(),
            direction: t.direction,
            approach_ts: t.enter_ts as i64,
            session_id: String::new(),
            occupancy: t.occupancy,
        })
        .collect();
    let first = label_dataset(&manifest, &db, &corpus.avl, ScopePolicy::PerDirection).unwrap();
    let second = label_dataset(&first.rows, &db, &corpus.avl, ScopePolicy::PerDirection).unwrap();
    assert_eq!(first.rows, second.rows);
    assert_eq!(first.thresholds, second.thresholds);
}

proptest! {
    #[test]
    fn low_share_at_least_ten_and_high_share_bounded_by_ties(
        values in prop::collection::vec((35u32..=60).prop_map(|v| v as f64 * 5.0), 10..400)
    ) {
        let t = thresholds_from_values(&values, ThresholdScope::Overall).unwrap();
        let n = values.len() as f64;
        let bands: Vec<TravelTimeBand> = values.iter().map(|&v| assign_band(v, &t)).collect();
        let low = bands.iter().filter(|b| **b == TravelTimeBand::Low).count() as f64;
        let high = bands.iter().filter(|b| **b == TravelTimeBand::High).count() as f64;
        let ties_at_p90 = values.iter().filter(|&&v| v == t.p90_s).count() as f64;
        prop_assert!(low / n >= 0.1);
        prop_assert!(high / n <= 0.1 + ties_at_p90 / n + 1.0 / n);
        prop_assert!(t.p10_s <= t.p50_s && t.p50_s <= t.p90_s);
    }
}
