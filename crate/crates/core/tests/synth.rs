mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use busvision::feed::parse_feed_file;
use busvision::labeling::{effective_travel_time, read_avl};
use busvision::manifest::read_manifest;
use busvision::synth::{generate_synthetic_corpus, CorpusConfig, SceneGeometry, SceneModel, SyntheticCorpus};
use busvision::Direction;

use common::mean_sd;

/// Average ranks, ties sharing the mean of their positions.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            out[k] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() - 1) as f64;
    cov / (sa * sb)
}

#[test]
fn vehicle_count_tracks_travel_time() {
    let model = SceneModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tts = Vec::new();
    let mut counts = Vec::new();
    for i in 0..1000 {
        let tt = rng.random_range(35.0..310.0f64).round();
        let dir = Direction::ALL[i % 2];
        let scene = model.sample_scene(tt, dir, 12, &mut rng);
        let count = match dir {
            Direction::Inbound => scene.vehicle_count_inbound,
            Direction::Outbound => scene.vehicle_count_outbound,
        };
        tts.push(tt);
        counts.push(count as f64);
    }
    let rho = pearson(&ranks(&tts), &ranks(&counts));
    assert!(rho >= 0.8, "Spearman {rho}");
}

#[test]
fn full_size_corpus_matches_target_moments() {
    let corpus = SyntheticCorpus::generate(&CorpusConfig {
        n_trips: 2992,
        seed: 5,
        ..CorpusConfig::default()
    })
    .unwrap();
    let tts: Vec<f64> = corpus.trips.iter().map(|t| t.eff_tt_s).collect();
    let (mean, sd) = mean_sd(&tts);
    assert!((mean - 124.0).abs() <= 3.0, "mean {mean}");
    assert!((sd - 38.0).abs() <= 3.0, "sd {sd}");
    assert!(tts.iter().all(|&t| (35.0..=310.0).contains(&t)));
}

#[test]
fn written_corpus_passes_feed_and_avl_validation() {
    let dir = tempfile::tempdir().unwrap();
    let config = CorpusConfig {
        n_trips: 30,
        seed: 6,
        geometry: SceneGeometry { width: 32, height: 32 },
        ..CorpusConfig::default()
    };
    let (corpus, paths) = generate_synthetic_corpus(&config, dir.path()).unwrap();
    let feed = parse_feed_file(&paths.feed).unwrap();
    assert!(feed.skipped.is_empty());
    assert_eq!(feed.stream, corpus.feed);
    let avl = read_avl(&paths.avl).unwrap();
    assert_eq!(avl.len(), 30);
    for rec in &avl {
        assert!(effective_travel_time(rec).unwrap().value_s > 0.0);
    }
    let manifest = read_manifest(&paths.manifest).unwrap();
    assert_eq!(manifest.len(), 30 * 6);
    assert!(manifest.iter().all(|r| std::path::Path::new(&r.frame_path).is_file()));
}
