use std::time::{Duration, Instant};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use busvision::feed::{parse_feed_file, parse_feed_str, ClockMode};
use busvision::{Direction, FeedStream, VehiclePositionRecord};

fn record(ts: i64, trip: usize, rng: &mut impl Rng) -> VehiclePositionRecord {
    VehiclePositionRecord {
        timestamp: ts,
        trip_id: format!("trip{trip}"),
        direction: Direction::ALL[trip % 2],
        lat: 42.36 + rng.random_range(-0.01..0.01),
        lon: -71.10 + rng.random_range(-0.01..0.01),
        occupancy: rng.random_range(0..=150) as f64,
    }
}

#[test]
fn shuffled_ten_thousand_record_file_comes_back_in_time_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut records: Vec<_> = (0..10_000).map(|i| record(1_000_000 + i / 3, i as usize, &mut rng)).collect();
    records.shuffle(&mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("feed.jsonl");
    let text: String = records.iter().map(|r| r.to_line() + "\n").collect();
    std::fs::write(&path, text).unwrap();

    let parsed = parse_feed_file(&path).unwrap();
    assert!(parsed.skipped.is_empty());
    // Oracle: stable sort of the file order by timestamp.
    let mut want = records.clone();
    want.sort_by_key(|r| r.timestamp);
    assert_eq!(parsed.stream.records(), &want[..]);
}

#[test]
fn fast_replay_emits_every_record_in_order_without_waiting() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let records: Vec<_> = (0..100).map(|i| record(i * 3600, i as usize, &mut rng)).collect();
    let (stream, dropped) = FeedStream::from_records(records.clone());
    assert!(dropped.is_empty());
    let start = Instant::now();
    let out: Vec<_> = stream.replay(ClockMode::AsFastAsPossible).unwrap().cloned().collect();
    assert!(start.elapsed() < Duration::from_millis(100));
    assert_eq!(out, records);
}

#[test]
fn scaled_replay_paces_events_by_timestamp_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let records: Vec<_> = (0..5).map(|i| record(i * 2, i as usize, &mut rng)).collect();
    let (stream, _) = FeedStream::from_records(records);
    let start = Instant::now();
    let mut emitted = Vec::new();
    for r in stream.replay(ClockMode::RealtimeScaled { speedup: 20.0 }).unwrap() {
        emitted.push((r.timestamp, start.elapsed()));
    }
    for (ts, at) in emitted {
        let due = Duration::from_secs_f64(ts as f64 / 20.0);
        assert!(at + Duration::from_millis(1) >= due, "event {ts} early: {at:?} < {due:?}");
        assert!(at <= due + Duration::from_millis(100), "event {ts} late: {at:?} vs {due:?}");
    }
}

fn arb_record() -> impl Strategy<Value = VehiclePositionRecord> {
    (1i64..500, 0usize..20, 0u8..2, -89.0f64..89.0, -179.0f64..179.0, 0.0f64..=150.0).prop_map(
        |(ts, trip, dir, lat, lon, occ)| VehiclePositionRecord {
            timestamp: ts,
            trip_id: format!("t{trip}"),
            direction: Direction::ALL[dir as usize],
            lat,
            lon,
            occupancy: occ,
        },
    )
}

proptest! {
    #[test]
    fn serialize_then_parse_round_trips(records in prop::collection::vec(arb_record(), 0..60)) {
        let (stream, _) = FeedStream::from_records(records);
        let parsed = parse_feed_str(&stream.serialize()).unwrap();
        prop_assert!(parsed.skipped.is_empty());
        prop_assert_eq!(parsed.stream, stream);
    }

    #[test]
    fn replay_is_order_preserving(records in prop::collection::vec(arb_record(), 0..60)) {
        let (stream, _) = FeedStream::from_records(records);
        let out: Vec<_> = stream.replay(ClockMode::AsFastAsPossible).unwrap().cloned().collect();
        prop_assert_eq!(&out[..], stream.records());
        prop_assert!(out.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    }
}
