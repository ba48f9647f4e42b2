use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use busvision::eval::{accuracy_by_hour, make_folds, SequenceMode, TripPrediction};
use busvision::{local_hour, Direction, TravelTimeBand, DEFAULT_UTC_OFFSET_S};

#[test]
fn uniform_predictor_scores_the_low_band_base_rate_in_every_hour() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let start = 1_645_614_000; // 06:00 local
    let trips: Vec<TripPrediction> = (0..800)
        .map(|i| TripPrediction {
            trip_id: format!("t{i}"),
            direction: Direction::ALL[i % 2],
            approach_ts: start + rng.random_range(0..16 * 3600),
            truth: TravelTimeBand::from_index(rng.random_range(0..4)).unwrap(),
            frames: vec![vec![0.25; 4]; 1 + i % 6],
        })
        .collect();
    // Ties go to the lowest band, so accuracy is the Low share of the bucket.
    let mut low: BTreeMap<(Direction, u32), (usize, usize)> = BTreeMap::new();
    for t in &trips {
        let e = low.entry((t.direction, local_hour(t.approach_ts, DEFAULT_UTC_OFFSET_S))).or_default();
        e.0 += (t.truth == TravelTimeBand::Low) as usize;
        e.1 += 1;
    }
    let buckets = accuracy_by_hour(&trips, SequenceMode::Mean, DEFAULT_UTC_OFFSET_S).unwrap();
    assert_eq!(buckets.len(), low.len());
    for b in buckets {
        let (hits, n) = low[&(b.direction, b.hour.unwrap())];
        assert_eq!(b.n, n);
        assert!((b.accuracy() - hits as f64 / n as f64).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn fold_plans_are_deterministic(seed in any::<u64>(), k in 2usize..6) {
        let trips: Vec<(String, TravelTimeBand)> = (0..60)
            .map(|i| (format!("t{i}"), TravelTimeBand::from_index(i % 4).unwrap()))
            .collect();
        let a = make_folds(&trips, k, seed).unwrap();
        let b = make_folds(&trips, k, seed).unwrap();
        prop_assert_eq!(a.fold_of, b.fold_of);
    }
}
