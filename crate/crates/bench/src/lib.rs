//! Fixtures shared by the kernel benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use busvision::regression::TripRecord;
use busvision::vit::Example;
use busvision::{Direction, TravelTimeBand, ViTConfig};

/// Random patch vectors with random labels.
pub fn random_examples(config: &ViTConfig, n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = config.num_patches() * config.patch_dim();
    (0..n)
        .map(|_| Example {
            patches: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: rng.random_range(0..config.num_classes),
        })
        .collect()
}

/// Outbound trips spread over hours 6..=21 with a travel time that grows
/// with occupancy and band.
pub fn random_trips(n: usize, seed: u64) -> Vec<TripRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let band = TravelTimeBand::ALL[rng.random_range(0..TravelTimeBand::COUNT)];
            let occupancy = rng.random_range(0.0..150.0);
            TripRecord {
                trip_id: format!("T{i:05}"),
                direction: Direction::Outbound,
                approach_ts: i as i64 * 600,
                hour: 6 + (i % 16) as u32,
                occupancy,
                eff_tt_s: 80.0 + 0.2 * occupancy + 25.0 * band.index() as f64 + rng.random_range(-10.0..10.0),
                band: Some(band),
            }
        })
        .collect()
}
