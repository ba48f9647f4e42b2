//! Properties of trained models on the separable synthetic corpus. Two models
//! are cross-fitted once (each predicts the half of the trips it did not see)
//! and shared by every test in this file.

mod common;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use busvision::eval::{accuracy_vs_sequence_length, frame_and_sequence_confusion, LengthBucketing, SequenceMode, TripPrediction};
use busvision::regression::{compare_ols_vs_olsplus, BandEncoding, TripRecord};
use busvision::synth::{CorpusConfig, SceneGeometry, SyntheticCorpus};
use busvision::vit::{argmax, forward_patches, grid_search, patchify, train, Example, GridPoint, LrSchedule, TrainHyper};
use busvision::{Direction, TravelTimeBand, ViTConfig, ViTParameters};

const SIZE: usize = 48;
const DIRECTION: Direction = Direction::Outbound;

struct Frame {
    patches: Vec<f64>,
    /// Whether each patch contains any vehicle pixel.
    blob_patch: Vec<bool>,
}

struct Trip {
    record: TripRecord,
    fold: usize,
    frames: Vec<Frame>,
}

struct Fixture {
    config: ViTConfig,
    records: Vec<TripRecord>,
    trips: Vec<Trip>,
    models: [ViTParameters; 2],
}

fn config() -> ViTConfig {
    ViTConfig {
        dropout_p: 0.0,
        ..ViTConfig::tiny(SIZE, 8)
    }
}

fn hyper(epochs: usize) -> TrainHyper {
    TrainHyper {
        batch_size: 32,
        learning_rate: 1e-3,
        epochs,
        schedule: LrSchedule::Cosine,
        seed: 5,
        ..TrainHyper::default()
    }
}

fn examples(trips: &[&Trip]) -> Vec<Example> {
    trips
        .iter()
        .flat_map(|t| {
            t.frames.iter().map(|f| Example {
                patches: f.patches.clone(),
                label: t.record.band.unwrap().index(),
            })
        })
        .collect()
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let config = config();
        let corpus = SyntheticCorpus::generate(&CorpusConfig {
            n_trips: 400,
            seed: 17,
            separable: true,
            geometry: SceneGeometry { width: SIZE, height: SIZE },
            ..CorpusConfig::default()
        })
        .unwrap();
        let records = common::oracle_records(&corpus);
        let by_id: BTreeMap<&str, &TripRecord> = records.iter().map(|r| (r.trip_id.as_str(), r)).collect();

        let p = config.patch_size;
        let mut frames: BTreeMap<&str, Vec<Frame>> = BTreeMap::new();
        for f in corpus.frames.iter().filter(|f| f.captured && f.trips.len() == 1) {
            let (trip_id, dir) = &f.trips[0];
            if *dir != DIRECTION {
                continue;
            }
            let (img, mask) = corpus.render_frame(f).unwrap();
            let blob_patch = (0..config.num_patches())
                .map(|i| {
                    let (gy, gx) = (i / config.grid_w(), i % config.grid_w());
                    (0..p).any(|y| (0..p).any(|x| mask[(gy * p + y) * SIZE + gx * p + x]))
                })
                .collect();
            frames.entry(trip_id.as_str()).or_default().push(Frame {
                patches: patchify(&img, &config).unwrap(),
                blob_patch,
            });
        }
        let mut trips: Vec<Trip> = frames
            .into_iter()
            .map(|(id, frames)| Trip {
                record: by_id[id].clone(),
                fold: 0,
                frames,
            })
            .collect();
        // Alternate folds within each band so both halves are stratified.
        let mut seen = [0usize; 4];
        for t in trips.iter_mut() {
            let b = t.record.band.unwrap().index();
            t.fold = seen[b] % 2;
            seen[b] += 1;
        }

        let models = [0, 1].map(|k| {
            let train_trips: Vec<&Trip> = trips.iter().filter(|t| t.fold != k).collect();
            train(&examples(&train_trips), &[], &config, &hyper(25)).unwrap().0
        });
        Fixture {
            config,
            records,
            trips,
            models,
        }
    })
}

fn predictions(fx: &Fixture) -> Vec<TripPrediction> {
    fx.trips
        .iter()
        .map(|t| TripPrediction {
            trip_id: t.record.trip_id.clone(),
            direction: t.record.direction,
            approach_ts: t.record.approach_ts,
            truth: t.record.band.unwrap(),
            frames: t
                .frames
                .iter()
                .map(|f| forward_patches(&f.patches, &fx.models[t.fold], &fx.config).probabilities)
                .collect(),
        })
        .collect()
}

#[test]
fn attention_concentrates_on_vehicle_patches() {
    let fx = fixture();
    let (mut considered, mut on_vehicles) = (0, 0);
    for t in &fx.trips {
        for f in &t.frames {
            let out = forward_patches(&f.patches, &fx.models[t.fold], &fx.config);
            let n_blob = f.blob_patch.iter().filter(|b| **b).count();
            if argmax(&out.probabilities) != t.record.band.unwrap().index() || n_blob == 0 || n_blob == f.blob_patch.len() {
                continue;
            }
            let att = out.attention.class_attention();
            let mean = |want: bool| {
                let v: Vec<f64> = att.iter().zip(&f.blob_patch).filter(|(_, b)| **b == want).map(|(a, _)| *a).collect();
                v.iter().sum::<f64>() / v.len() as f64
            };
            considered += 1;
            if mean(true) > mean(false) {
                on_vehicles += 1;
            }
        }
    }
    assert!(considered > 100, "only {considered} frames");
    let share = on_vehicles as f64 / considered as f64;
    assert!(share >= 0.8, "attention favors vehicles in {share:.3} of {considered} frames");
}

#[test]
fn sequence_accuracy_rises_with_frame_count() {
    let fx = fixture();
    let preds = predictions(fx);
    let (frame, seq) = frame_and_sequence_confusion(&preds, SequenceMode::Mean).unwrap();
    let (fa, sa) = (frame.metrics().accuracy, seq.metrics().accuracy);
    assert!(sa >= fa, "sequence {sa} < frame {fa}");
    assert!(seq.non_adjacent() <= frame.non_adjacent());

    let buckets = accuracy_vs_sequence_length(&preds, SequenceMode::Mean, LengthBucketing::Prefixes).unwrap();
    let overall: Vec<f64> = buckets.iter().filter(|b| b.band.is_none()).map(|b| b.accuracy).collect();
    assert_eq!(overall.len(), 6);
    assert!(overall.windows(2).all(|w| w[1] >= w[0]), "accuracy by length {overall:?}");
}

#[test]
fn predicted_bands_fall_between_random_and_oracle() {
    let fx = fixture();
    let preds = predictions(fx);
    let predicted: Vec<TripRecord> = fx
        .trips
        .iter()
        .zip(&preds)
        .map(|(t, p)| {
            let (_, band) = busvision::eval::aggregate_sequence(&p.frames, SequenceMode::Mean).unwrap();
            TripRecord {
                band: Some(band),
                ..t.record.clone()
            }
        })
        .collect();
    let oracle: Vec<TripRecord> = fx.trips.iter().map(|t| t.record.clone()).collect();
    let mut permuted = oracle.clone();
    let mut bands: Vec<Option<TravelTimeBand>> = permuted.iter().map(|r| r.band).collect();
    bands.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    for (r, b) in permuted.iter_mut().zip(bands) {
        r.band = b;
    }
    let delta = |records: &[TripRecord]| compare_ols_vs_olsplus(records, DIRECTION, BandEncoding::SumToZero).unwrap().delta_r2;
    let (random, vit, best) = (delta(&permuted), delta(&predicted), delta(&oracle));
    assert!(random < vit && vit <= best, "ΔR² random {random:.3}, predicted {vit:.3}, oracle {best:.3}");
    assert!(fx.records.len() >= fx.trips.len());
}

#[test]
fn grid_search_prefers_the_stable_learning_rate() {
    let fx = fixture();
    let train_set = examples(&fx.trips.iter().filter(|t| t.fold == 0).collect::<Vec<_>>());
    let validation = examples(&fx.trips.iter().filter(|t| t.fold == 1).collect::<Vec<_>>());
    let point = |learning_rate| GridPoint {
        num_layers: 2,
        num_heads: 4,
        batch_size: 32,
        learning_rate,
        dropout_p: 0.0,
    };
    let h = TrainHyper {
        schedule: LrSchedule::Constant,
        ..hyper(8)
    };
    let result = grid_search(&train_set, &validation, &fx.config, &h, &[point(1e-2), point(1e-3)]).unwrap();
    assert_eq!(result.scores.len(), 2);
    assert_eq!(result.best, point(1e-3), "scores {:?}", result.scores);
}
