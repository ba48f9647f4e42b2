//! End-to-end run: source → trigger → label → augment → folds → train →
//! eval → regress. Stages hand off through files in numbered directories
//! under the run root, so each one can be rerun or replaced on its own.

mod config;

pub use config::{
    parse_band_encoding, parse_config, parse_model_config, validate_config, ConfigIssue, ModelScope,
    PipelineConfig, Source,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::augment::{augment_corpus, AugmentationSpec};
use crate::error::{Error, Result};
use crate::eval::{
    accuracy_by_hour, accuracy_vs_sequence_length, evaluate_frames, frame_and_sequence_confusion,
    hour_buckets_csv, length_buckets_csv, lineage_violations, make_folds, metrics_csv, summarize_folds,
    summary_text, trips_from_manifest, ClassMetrics, ConfusionMatrix, LengthBucketing, SequenceMode,
    TripPrediction,
};
use crate::feed::{parse_feed_file, Direction};
use crate::labeling::{label_dataset, read_avl, ThresholdScope, TravelTimeBand};
use crate::manifest::{read_manifest, write_manifest, Lineage, ManifestRow};
use crate::plot::{heatmap, line_chart, scatter, Series};
use crate::raster::RasterFrame;
use crate::regression::{
    compare_ols_vs_olsplus, join_trip_records, lookahead_bands, read_band_predictions, BandEncoding, Comparison,
    TripRecord,
};
use crate::synth::{generate_synthetic_corpus, CorpusConfig, SyntheticPaths};
use crate::trigger::{
    export_trip_attributes, export_trip_database, read_trip_database, run_trigger, session_manifest,
    ArchiveFrameSource, MonitoredSegment, SessionStatus,
};
use crate::vit::{
    argmax, attention_overlay, load_checkpoint, patchify, predict_probabilities, prepare_frame, save_checkpoint,
    train, Example, TrainHyper, ViTConfig, ViTParameters,
};
use crate::seed_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Source,
    Trigger,
    Label,
    Augment,
    Folds,
    Train,
    Eval,
    Regress,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Source,
        Stage::Trigger,
        Stage::Label,
        Stage::Augment,
        Stage::Folds,
        Stage::Train,
        Stage::Eval,
        Stage::Regress,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Source => "source",
            Stage::Trigger => "trigger",
            Stage::Label => "label",
            Stage::Augment => "augment",
            Stage::Folds => "folds",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Regress => "regress",
        }
    }

    /// Output directory name, e.g. `03_label`.
    pub fn dir_name(self) -> String {
        format!("{:02}_{}", self as usize + 1, self.name())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Error,
    },
}

/// Files every stage reads or writes, relative to the run root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.dir_name())
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn timings(&self) -> PathBuf {
        self.root.join("timings.json")
    }

    pub fn error_report(&self) -> PathBuf {
        self.root.join("error.json")
    }

    pub fn trips(&self) -> PathBuf {
        self.dir(Stage::Trigger).join("trips.csv")
    }

    pub fn trip_attributes(&self) -> PathBuf {
        self.dir(Stage::Trigger).join("trip_attributes.csv")
    }

    pub fn captured_manifest(&self) -> PathBuf {
        self.dir(Stage::Trigger).join("manifest.csv")
    }

    pub fn labeled_manifest(&self) -> PathBuf {
        self.dir(Stage::Label).join("labeled.csv")
    }

    pub fn augmented_manifest(&self) -> PathBuf {
        self.dir(Stage::Augment).join("manifest.csv")
    }

    pub fn folds(&self) -> PathBuf {
        self.dir(Stage::Folds).join("folds.csv")
    }

    pub fn frame_predictions(&self) -> PathBuf {
        self.dir(Stage::Train).join("frame_predictions.csv")
    }

    pub fn trip_predictions(&self) -> PathBuf {
        self.dir(Stage::Eval).join("predictions.csv")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    /// `ok`, `failed` or `skipped`.
    pub status: &'static str,
    pub metrics: Value,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub layout: RunLayout,
    pub stages: Vec<StageRecord>,
}

impl RunReport {
    /// Per-stage status and metrics, without timings, so identical runs
    /// produce identical bytes.
    pub fn summary_json(&self) -> String {
        let stages: Vec<Value> = self
            .stages
            .iter()
            .map(|s| {
                let mut v = json!({ "stage": s.stage.name(), "status": s.status, "metrics": s.metrics });
                if let Some(e) = &s.error {
                    v["error"] = json!(e);
                }
                v
            })
            .collect();
        let mut text = serde_json::to_string_pretty(&json!({ "stages": stages })).expect("json");
        text.push('\n');
        text
    }

    fn timings_json(&self) -> String {
        let m: BTreeMap<&str, f64> = self.stages.iter().map(|s| (s.stage.name(), s.seconds)).collect();
        serde_json::to_string_pretty(&m).expect("json") + "\n"
    }

    pub fn metric(&self, stage: Stage, key: &str) -> Option<&Value> {
        self.stages.iter().find(|s| s.stage == stage)?.metrics.get(key)
    }
}

/// Runs every stage in order. A failing stage stops the run; the outputs of
/// completed stages stay in place next to `error.json` naming the stage.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<RunReport, PipelineError> {
    let mut issues = config.issues();
    issues.extend(config.path_issues());
    if !issues.is_empty() {
        return Err(PipelineError::Config(issues));
    }
    let layout = RunLayout::new(&config.out);
    let mut report = RunReport {
        layout: layout.clone(),
        stages: Vec::new(),
    };
    let prepare = || -> Result<()> {
        fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
        let _ = fs::remove_file(layout.error_report());
        fs::write(layout.root.join("config.txt"), config.to_text()).map_err(|e| Error::io(&layout.root, e))
    };
    if let Err(e) = prepare() {
        return Err(PipelineError::Stage {
            stage: Stage::Source,
            source: e,
        });
    }

    let mut failure = None;
    for stage in Stage::ALL {
        if failure.is_some() {
            report.stages.push(StageRecord {
                stage,
                status: "skipped",
                metrics: json!({}),
                error: None,
                seconds: 0.0,
            });
            continue;
        }
        let started = Instant::now();
        let dir = layout.dir(stage);
        let result = fs::create_dir_all(&dir)
            .map_err(|e| Error::io(&dir, e))
            .and_then(|_| run_stage(stage, config, &layout));
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(metrics) => report.stages.push(StageRecord {
                stage,
                status: "ok",
                metrics,
                error: None,
                seconds,
            }),
            Err(e) => {
                report.stages.push(StageRecord {
                    stage,
                    status: "failed",
                    metrics: json!({}),
                    error: Some(e.to_string()),
                    seconds,
                });
                failure = Some((stage, e));
            }
        }
        write_reports(&report, failure.as_ref().map(|(s, e)| (*s, e)));
    }
    write_reports(&report, failure.as_ref().map(|(s, e)| (*s, e)));
    match failure {
        Some((stage, source)) => Err(PipelineError::Stage { stage, source }),
        None => Ok(report),
    }
}

fn write_reports(report: &RunReport, failure: Option<(Stage, &Error)>) {
    let l = &report.layout;
    let _ = fs::write(l.summary(), report.summary_json());
    let _ = fs::write(l.timings(), report.timings_json());
    if let Some((stage, e)) = failure {
        let body = json!({ "stage": stage.name(), "error": e.to_string() });
        let _ = fs::write(l.error_report(), serde_json::to_string_pretty(&body).expect("json") + "\n");
    }
}

fn run_stage(stage: Stage, c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    match stage {
        Stage::Source => stage_source(c, l),
        Stage::Trigger => stage_trigger(c, l),
        Stage::Label => stage_label(c, l),
        Stage::Augment => stage_augment(c, l),
        Stage::Folds => stage_folds(c, l),
        Stage::Train => stage_train(c, l),
        Stage::Eval => stage_eval(c, l),
        Stage::Regress => stage_regress(c, l),
    }
}

/// Feed, AVL file and frame archive the run works from.
fn source_paths(c: &PipelineConfig, l: &RunLayout) -> (PathBuf, PathBuf, PathBuf) {
    match c.source {
        Source::Synth => {
            let p = SyntheticPaths::under(&l.dir(Stage::Source));
            (p.feed, p.avl, p.frames)
        }
        Source::Ingest => (
            c.feed.clone().unwrap_or_default(),
            c.avl.clone().unwrap_or_default(),
            c.frames.clone().unwrap_or_default(),
        ),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn stage_source(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    match c.source {
        Source::Synth => {
            let cfg = CorpusConfig {
                n_trips: c.n_trips,
                seed: seed_for(c.seed, "synth"),
                geometry: c.geometry,
                camera: c.camera,
                activation_radius_m: c.radius_m,
                plan: c.plan,
                utc_offset_s: c.utc_offset_s,
                capture_failure_rate: c.capture_failure_rate,
                separable: c.separable,
                ..CorpusConfig::default()
            };
            let (corpus, _) = generate_synthetic_corpus(&cfg, &l.dir(Stage::Source))?;
            Ok(json!({
                "kind": "synth",
                "trips": corpus.trips.len(),
                "feed_records": corpus.feed.len(),
                "frames_scheduled": corpus.frames.len(),
                "frames_captured": corpus.frames.iter().filter(|f| f.captured).count(),
            }))
        }
        Source::Ingest => {
            let (feed, avl, frames) = source_paths(c, l);
            let parsed = parse_feed_file(&feed)?;
            let avl_rows = read_avl(&avl)?;
            let n_frames = fs::read_dir(&frames)
                .map_err(|e| Error::io(&frames, e))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().extension().is_some_and(|x| x == "ppm"))
                .count();
            Ok(json!({
                "kind": "ingest",
                "feed_records": parsed.stream.len(),
                "feed_lines_skipped": parsed.skipped.len(),
                "avl_records": avl_rows.len(),
                "archived_frames": n_frames,
            }))
        }
    }
}

fn stage_trigger(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let (feed, _, frames) = source_paths(c, l);
    let parsed = parse_feed_file(&feed)?;
    let segment = MonitoredSegment::new(c.camera, c.radius_m)?;
    let mut source = ArchiveFrameSource::new(frames);
    let outcome = run_trigger(parsed.stream.records(), segment, c.plan, &mut source)?;
    let reg = &outcome.registry;
    let recorded = export_trip_database(reg, &l.trips())?;
    export_trip_attributes(reg, &l.trip_attributes())?;
    let rows = session_manifest(reg);
    write_manifest(&l.captured_manifest(), &rows)?;
    let failures: String = outcome.failures.iter().map(|f| format!("{f}\n")).collect();
    write_text(&l.dir(Stage::Trigger).join("failures.txt"), &failures)?;
    let sessions = reg.sessions();
    Ok(json!({
        "sessions": sessions.len(),
        "sessions_completed": sessions.iter().filter(|s| s.status == SessionStatus::Completed).count(),
        "sessions_failed": sessions.iter().filter(|s| s.status == SessionStatus::Failed).count(),
        "merged_sessions": sessions.iter().filter(|s| s.trip_ids.len() > 1).count(),
        "approaches": reg.approaches().len(),
        "trips_recorded": recorded,
        "manifest_rows": rows.len(),
    }))
}

fn stage_label(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let (_, avl, _) = source_paths(c, l);
    let manifest = read_manifest(&l.captured_manifest())?;
    let trips = read_trip_database(&l.trips())?;
    let avl = read_avl(&avl)?;
    let out = label_dataset(&manifest, &trips, &avl, c.label_scope)?;
    write_manifest(&l.labeled_manifest(), &out.rows)?;
    let dir = l.dir(Stage::Label);
    let mut th = String::from("scope,p10_s,p50_s,p90_s\n");
    let mut th_json = BTreeMap::new();
    for t in &out.thresholds {
        let scope = scope_name(t.scope);
        let _ = writeln!(th, "{scope},{},{},{}", t.p10_s, t.p50_s, t.p90_s);
        th_json.insert(scope, json!([t.p10_s, t.p50_s, t.p90_s]));
    }
    write_text(&dir.join("thresholds.csv"), &th)?;
    write_text(&dir.join("dropped.txt"), &out.dropped.iter().map(|d| format!("{d}\n")).collect::<String>())?;
    let mut bands = [0usize; TravelTimeBand::COUNT];
    for (_, _, b) in out.trips.values() {
        bands[b.index()] += 1;
    }
    Ok(json!({
        "labeled_frames": out.rows.len(),
        "labeled_trips": out.trips.len(),
        "dropped": out.dropped.len(),
        "thresholds": th_json,
        "trips_per_band": band_map(&bands),
    }))
}

fn scope_name(s: ThresholdScope) -> &'static str {
    match s {
        ThresholdScope::Overall => "overall",
        ThresholdScope::Inbound => "inbound",
        ThresholdScope::Outbound => "outbound",
    }
}

fn band_map<T: serde::Serialize + Copy>(v: &[T; TravelTimeBand::COUNT]) -> Value {
    let m: BTreeMap<&str, T> = TravelTimeBand::ALL.iter().map(|b| (b.name(), v[b.index()])).collect();
    json!(m)
}

fn stage_augment(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let rows = read_manifest(&l.labeled_manifest())?;
    if !c.augment {
        let rows: Vec<ManifestRow> = rows
            .into_iter()
            .map(|mut r| {
                r.lineage = Some(Lineage::default());
                r
            })
            .collect();
        write_manifest(&l.augmented_manifest(), &rows)?;
        return Ok(json!({ "enabled": false, "rows": rows.len() }));
    }
    let first = rows
        .first()
        .ok_or_else(|| Error::Data("no labeled frames to augment".into()))?;
    let sample = RasterFrame::read_ppm(Path::new(&first.frame_path))?;
    let spec = AugmentationSpec {
        seed: seed_for(c.seed, "augment"),
        output_size: Some((c.vit.image_w, c.vit.image_h)),
        ..c.augmentation.clone()
    }
    .scaled_to(sample.width(), sample.height());
    let out = augment_corpus(&rows, &spec, &l.dir(Stage::Augment).join("frames"))?;
    write_manifest(&l.augmented_manifest(), &out.rows)?;
    write_text(
        &l.dir(Stage::Augment).join("skipped.txt"),
        &out.skipped.iter().map(|s| format!("{s}\n")).collect::<String>(),
    )?;
    let variants = out.rows.iter().filter(|r| !r.is_original()).count();
    let mut applied: BTreeMap<&str, usize> = ["crop", "rotate", "brightness", "contrast"].iter().map(|k| (*k, 0)).collect();
    for acts in &out.actions {
        for a in acts {
            *applied.entry(a.name()).or_default() += 1;
        }
    }
    let rates: BTreeMap<&str, f64> = applied
        .iter()
        .map(|(k, n)| (*k, if variants > 0 { *n as f64 / variants as f64 } else { 0.0 }))
        .collect();
    Ok(json!({
        "enabled": true,
        "rows": out.rows.len(),
        "variants": variants,
        "skipped": out.skipped.len(),
        "crop_min": [spec.crop_min.0, spec.crop_min.1],
        "action_rates": rates,
    }))
}

/// Training groups: one per direction, or a single `all` group.
fn groups(c: &PipelineConfig) -> Vec<(String, Option<Direction>)> {
    match c.model_scope {
        ModelScope::PerDirection => Direction::ALL.iter().map(|d| (d.name().to_string(), Some(*d))).collect(),
        ModelScope::Combined => vec![("all".to_string(), None)],
    }
}

fn in_group(d: Direction, g: Option<Direction>) -> bool {
    g.is_none_or(|g| g == d)
}

fn stage_folds(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let rows = read_manifest(&l.augmented_manifest())?;
    let trips = trips_from_manifest(&rows);
    let mut csv = String::from("trip_id,direction,band,group,fold\n");
    let mut summary = BTreeMap::new();
    let mut violations = 0;
    for (name, g) in groups(c) {
        let members: Vec<(String, TravelTimeBand)> = trips
            .iter()
            .filter(|(_, d, _)| in_group(*d, g))
            .map(|(t, _, b)| (t.clone(), *b))
            .collect();
        if members.is_empty() {
            continue;
        }
        let plan = make_folds(&members, c.folds, seed_for(c.seed, &format!("folds/{name}")))
            .map_err(|e| Error::Data(format!("group {name}: {e}")))?;
        let dirs: BTreeMap<&str, Direction> = trips.iter().map(|(t, d, _)| (t.as_str(), *d)).collect();
        for (trip, band) in &members {
            let _ = writeln!(csv, "{trip},{},{},{name},{}", dirs[trip.as_str()].code(), band.name(), plan.fold_of[trip]);
        }
        let group_rows: Vec<ManifestRow> = rows.iter().filter(|r| in_group(r.direction, g)).cloned().collect();
        violations += lineage_violations(&plan, &group_rows);
        let sizes: Vec<usize> = (0..c.folds).map(|f| plan.test_trips(f).len()).collect();
        summary.insert(name, json!({ "trips": members.len(), "test_trips_per_fold": sizes }));
    }
    if violations > 0 {
        return Err(Error::Data(format!("{violations} augmented rows cross a fold boundary")));
    }
    write_text(&l.folds(), &csv)?;
    Ok(json!({ "k": c.folds, "groups": summary, "lineage_violations": violations }))
}

/// `(trip_id, group) -> fold` from `folds.csv`.
fn read_folds(path: &Path) -> Result<BTreeMap<(String, String), usize>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Format(format!("{}: malformed fold row {:?}", path.display(), row));
        let fold = row.get(4).and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        out.insert((row.get(0).ok_or_else(bad)?.to_string(), row.get(3).ok_or_else(bad)?.to_string()), fold);
    }
    Ok(out)
}

/// Loads and patchifies every distinct frame referenced by `rows`.
pub fn load_patches(rows: &[&ManifestRow], config: &ViTConfig) -> Result<BTreeMap<String, Vec<f64>>> {
    let paths: BTreeSet<&str> = rows.iter().map(|r| r.frame_path.as_str()).collect();
    let paths: Vec<&str> = paths.into_iter().collect();
    let loaded: Vec<(String, Vec<f64>)> = paths
        .par_iter()
        .map(|p| {
            let frame = RasterFrame::read_ppm(Path::new(p))?;
            Ok((p.to_string(), patchify(&prepare_frame(&frame, config)?, config)?))
        })
        .collect::<Result<_>>()?;
    Ok(loaded.into_iter().collect())
}

pub fn examples(rows: &[&ManifestRow], patches: &BTreeMap<String, Vec<f64>>) -> Result<Vec<Example>> {
    rows.iter()
        .map(|r| {
            let band = r
                .band()
                .ok_or_else(|| Error::Data(format!("{}: frame for trip {} has no label", r.frame_path, r.trip_id)))?;
            Ok(Example {
                patches: patches[&r.frame_path].clone(),
                label: band.index(),
            })
        })
        .collect()
}

/// One model's softmax output for one original frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    pub fold: usize,
    pub group: String,
    pub frame_path: String,
    pub trip_id: String,
    pub direction: Direction,
    pub capture_ts: i64,
    pub truth: TravelTimeBand,
    pub probabilities: Vec<f64>,
}

const PROB_COLUMNS: [&str; 4] = ["p_low", "p_moderate", "p_above_average", "p_high"];

pub fn write_frame_predictions(path: &Path, preds: &[FramePrediction]) -> Result<()> {
    let mut s = String::from("fold,group,frame_path,trip_id,direction,capture_ts,true_band,");
    s.push_str(&PROB_COLUMNS.join(","));
    s.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for p in preds {
        let mut rec = vec![
            p.fold.to_string(),
            p.group.clone(),
            p.frame_path.clone(),
            p.trip_id.clone(),
            p.direction.code().to_string(),
            p.capture_ts.to_string(),
            p.truth.name().to_string(),
        ];
        rec.extend(p.probabilities.iter().map(|v| format!("{v:.9}")));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    s.push_str(&String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?).expect("utf8"));
    write_text(path, &s)
}

pub fn read_frame_predictions(path: &Path) -> Result<Vec<FramePrediction>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Format(format!("{}: malformed prediction row {:?}", path.display(), row));
        let field = |i: usize| row.get(i).ok_or_else(bad);
        out.push(FramePrediction {
            fold: field(0)?.parse().map_err(|_| bad())?,
            group: field(1)?.to_string(),
            frame_path: field(2)?.to_string(),
            trip_id: field(3)?.to_string(),
            direction: field(4)?.parse().ok().and_then(Direction::from_code).ok_or_else(bad)?,
            capture_ts: field(5)?.parse().map_err(|_| bad())?,
            truth: field(6)?.parse()?,
            probabilities: (7..11).map(|i| field(i)?.parse().map_err(|_| bad())).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Predictions for `rows` from one model.
pub fn predict_rows(
    rows: &[&ManifestRow],
    patches: &BTreeMap<String, Vec<f64>>,
    params: &ViTParameters,
    config: &ViTConfig,
    fold: usize,
    group: &str,
) -> Result<Vec<FramePrediction>> {
    let ex = examples(rows, patches)?;
    let probs = predict_probabilities(&ex, params, config);
    Ok(rows
        .iter()
        .zip(probs)
        .map(|(r, p)| FramePrediction {
            fold,
            group: group.to_string(),
            frame_path: r.frame_path.clone(),
            trip_id: r.trip_id.clone(),
            direction: r.direction,
            capture_ts: r.capture_ts,
            truth: r.band().expect("labeled by examples()"),
            probabilities: p,
        })
        .collect())
}

fn stage_train(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let rows = read_manifest(&l.augmented_manifest())?;
    let folds = read_folds(&l.folds())?;
    let dir = l.dir(Stage::Train);
    let mut preds = Vec::new();
    let mut models = BTreeMap::new();
    for (name, g) in groups(c) {
        let fold_of = |r: &ManifestRow| folds.get(&(r.trip_id.clone(), name.clone())).copied();
        let group_rows: Vec<&ManifestRow> =
            rows.iter().filter(|r| in_group(r.direction, g) && fold_of(r).is_some()).collect();
        if group_rows.is_empty() {
            continue;
        }
        let patches = load_patches(&group_rows, &c.vit)?;
        for fold in 0..c.folds {
            let train_rows: Vec<&ManifestRow> = group_rows.iter().copied().filter(|r| fold_of(r) != Some(fold)).collect();
            let test_rows: Vec<&ManifestRow> = group_rows
                .iter()
                .copied()
                .filter(|r| fold_of(r) == Some(fold) && r.is_original())
                .collect();
            let hyper = TrainHyper {
                seed: seed_for(c.seed, &format!("train/{name}/fold{fold}")),
                ..c.hyper.clone()
            };
            let (params, log) = train(&examples(&train_rows, &patches)?, &examples(&test_rows, &patches)?, &c.vit, &hyper)?;
            let stem = format!("fold{fold}_{name}");
            save_checkpoint(&dir.join(format!("{stem}.ckpt")), &c.vit, &params)?;
            write_text(&dir.join(format!("{stem}_log.csv")), &log.to_csv())?;
            preds.extend(predict_rows(&test_rows, &patches, &params, &c.vit, fold, &name)?);
            let last = log.epochs.last();
            models.insert(
                stem,
                json!({
                    "train_examples": train_rows.len(),
                    "test_frames": test_rows.len(),
                    "final_loss": last.map(|e| e.train_loss),
                    "final_heldout_accuracy": last.and_then(|e| e.heldout_accuracy),
                }),
            );
        }
    }
    write_frame_predictions(&l.frame_predictions(), &preds)?;
    Ok(json!({ "models": models, "parameters": ViTParameters::zeros(&c.vit).num_params() }))
}

/// Groups frame predictions of one fold into trips, frames in capture
/// order.
pub fn trip_predictions(preds: &[&FramePrediction], approach_ts: &BTreeMap<String, i64>) -> Vec<TripPrediction> {
    let mut by_trip: BTreeMap<&str, Vec<&FramePrediction>> = BTreeMap::new();
    for p in preds {
        by_trip.entry(p.trip_id.as_str()).or_default().push(p);
    }
    by_trip
        .into_iter()
        .map(|(trip, mut frames)| {
            frames.sort_by(|a, b| a.capture_ts.cmp(&b.capture_ts).then_with(|| a.frame_path.cmp(&b.frame_path)));
            TripPrediction {
                trip_id: trip.to_string(),
                direction: frames[0].direction,
                approach_ts: approach_ts.get(trip).copied().unwrap_or(frames[0].capture_ts),
                truth: frames[0].truth,
                frames: frames.iter().map(|f| f.probabilities.clone()).collect(),
            }
        })
        .collect()
}

/// Frame- and sequence-level evaluation of one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEvaluation {
    pub fold: usize,
    pub trips: Vec<TripPrediction>,
    pub frame: ConfusionMatrix,
    pub sequence: ConfusionMatrix,
    pub frame_metrics: ClassMetrics,
    pub sequence_metrics: ClassMetrics,
}

pub fn evaluate_fold(fold: usize, trips: Vec<TripPrediction>, mode: SequenceMode) -> Result<FoldEvaluation> {
    let (frame, sequence) = frame_and_sequence_confusion(&trips, mode)?;
    let frame_pairs: (Vec<usize>, Vec<usize>) = trips
        .iter()
        .flat_map(|t| t.frames.iter().map(move |f| (argmax(f), t.truth.index())))
        .unzip();
    let (_, frame_metrics) = evaluate_frames(&frame_pairs.0, &frame_pairs.1)?;
    Ok(FoldEvaluation {
        fold,
        trips,
        sequence_metrics: sequence.metrics(),
        frame,
        sequence,
        frame_metrics,
    })
}

fn confusion_svg(m: &ConfusionMatrix, title: &str) -> String {
    let norm = m.normalized();
    let values: Vec<Vec<f64>> = norm.iter().map(|r| r.to_vec()).collect();
    let names: Vec<&str> = TravelTimeBand::ALL.iter().map(|b| b.name()).collect();
    heatmap(&values, &names, &names, title, "true band", "predicted band")
}

fn stage_eval(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let preds = read_frame_predictions(&l.frame_predictions())?;
    let approach: BTreeMap<String, i64> = read_trip_database(&l.trips())?
        .into_iter()
        .map(|a| (a.trip_id, a.approach_ts))
        .collect();
    let eff: BTreeMap<String, f64> = read_manifest(&l.labeled_manifest())?
        .into_iter()
        .filter_map(|r| r.label.map(|lab| (r.trip_id, lab.eff_tt_s)))
        .collect();
    let dir = l.dir(Stage::Eval);
    let folds: BTreeSet<usize> = preds.iter().map(|p| p.fold).collect();
    let mut evals = Vec::new();
    for fold in folds {
        let fp: Vec<&FramePrediction> = preds.iter().filter(|p| p.fold == fold).collect();
        evals.push(evaluate_fold(fold, trip_predictions(&fp, &approach), c.sequence_mode)?);
    }
    if evals.is_empty() {
        return Err(Error::Data("no test predictions to evaluate".into()));
    }

    let named = |f: &dyn Fn(&FoldEvaluation) -> ClassMetrics| -> Vec<(String, ClassMetrics)> {
        evals.iter().map(|e| (e.fold.to_string(), f(e))).collect()
    };
    let frame_named = named(&|e| e.frame_metrics.clone());
    let seq_named = named(&|e| e.sequence_metrics.clone());
    write_text(&dir.join("metrics_frame.csv"), &metrics_csv(&frame_named))?;
    write_text(&dir.join("metrics_sequence.csv"), &metrics_csv(&seq_named))?;
    let frame_summary = summarize_folds(&frame_named.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>())?;
    let seq_summary = summarize_folds(&seq_named.iter().map(|(_, m)| m.clone()).collect::<Vec<_>>())?;
    write_text(
        &dir.join("summary.txt"),
        &format!(
            "{}\n{}",
            summary_text("Frame level (mean ± range over folds)", &frame_summary),
            summary_text("Sequence level (mean ± range over folds)", &seq_summary)
        ),
    )?;

    let mut frame_total = ConfusionMatrix::default();
    let mut seq_total = ConfusionMatrix::default();
    for e in &evals {
        frame_total.add(&e.frame);
        seq_total.add(&e.sequence);
    }
    write_text(&dir.join("confusion_frame.csv"), &frame_total.to_csv())?;
    write_text(&dir.join("confusion_sequence.csv"), &seq_total.to_csv())?;
    write_text(&dir.join("confusion_frame.svg"), &confusion_svg(&frame_total, "Frame-level confusion (column-normalized)"))?;
    write_text(&dir.join("confusion_sequence.svg"), &confusion_svg(&seq_total, "Sequence-level confusion (column-normalized)"))?;

    let mut rows = String::from("trip_id,direction,approach_ts,eff_tt_s,true_band,pred_band,fold\n");
    for e in &evals {
        for t in &e.trips {
            let (_, pred) = crate::eval::aggregate_sequence(&t.frames, c.sequence_mode)?;
            let eff_tt = eff.get(&t.trip_id).copied().unwrap_or(f64::NAN);
            let _ = writeln!(
                rows,
                "{},{},{},{eff_tt},{},{},{}",
                t.trip_id,
                t.direction.code(),
                t.approach_ts,
                t.truth.name(),
                pred.name(),
                e.fold
            );
        }
    }
    write_text(&l.trip_predictions(), &rows)?;

    // Best fold by frame accuracy; the earliest wins ties.
    let best = evals
        .iter()
        .fold(None::<&FoldEvaluation>, |b, e| match b {
            Some(b) if b.frame_metrics.accuracy >= e.frame_metrics.accuracy => Some(b),
            _ => Some(e),
        })
        .expect("non-empty");
    let prefixes = accuracy_vs_sequence_length(&best.trips, c.sequence_mode, LengthBucketing::Prefixes)?;
    let sizes = accuracy_vs_sequence_length(&best.trips, c.sequence_mode, LengthBucketing::GroupSize)?;
    write_text(&dir.join("accuracy_vs_length.csv"), &length_buckets_csv(&prefixes))?;
    write_text(&dir.join("accuracy_vs_group_size.csv"), &length_buckets_csv(&sizes))?;
    let mut series = Vec::new();
    for band in std::iter::once(None).chain(TravelTimeBand::ALL.iter().map(|b| Some(*b))) {
        let pts: Vec<_> = prefixes.iter().filter(|b| b.band == band).collect();
        if pts.is_empty() {
            continue;
        }
        series.push(Series {
            name: band.map_or("all", TravelTimeBand::name).to_string(),
            points: pts.iter().map(|b| (b.length as f64, b.accuracy)).collect(),
            band: band.is_none().then(|| pts.iter().map(|b| (b.ci_low, b.ci_high)).collect()),
        });
    }
    write_text(
        &dir.join("accuracy_vs_length.svg"),
        &line_chart(&series, &format!("Accuracy vs frames used (fold {})", best.fold), "frames", "accuracy", Some((0.0, 1.0))),
    )?;
    let hours = accuracy_by_hour(&best.trips, c.sequence_mode, c.utc_offset_s)?;
    write_text(&dir.join("accuracy_by_hour.csv"), &hour_buckets_csv(&hours))?;
    let hour_series: Vec<Series> = Direction::ALL
        .iter()
        .filter_map(|d| {
            let pts: Vec<(f64, f64)> = hours
                .iter()
                .filter(|h| h.direction == *d)
                .filter_map(|h| h.hour.map(|hr| (hr as f64, h.accuracy())))
                .collect();
            (!pts.is_empty()).then(|| Series {
                name: d.name().to_string(),
                points: pts,
                band: None,
            })
        })
        .collect();
    write_text(
        &dir.join("accuracy_by_hour.svg"),
        &line_chart(&hour_series, &format!("Accuracy by hour (fold {})", best.fold), "local hour", "accuracy", Some((0.0, 1.0))),
    )?;
    let attention = write_attention_samples(c, l, best)?;

    let frame_acc = frame_summary.accuracy;
    let seq_acc = seq_summary.accuracy;
    Ok(json!({
        "folds": evals.len(),
        "frame_accuracy_mean": frame_acc.mean,
        "frame_accuracy_range": frame_acc.range(),
        "sequence_accuracy_mean": seq_acc.mean,
        "sequence_accuracy_range": seq_acc.range(),
        "frame_macro_f1_mean": frame_summary.macro_f1.mean,
        "sequence_macro_f1_mean": seq_summary.macro_f1.mean,
        "frame_non_adjacent": frame_total.non_adjacent(),
        "sequence_non_adjacent": seq_total.non_adjacent(),
        "evaluated_frames": frame_total.total(),
        "evaluated_trips": seq_total.total(),
        "best_fold": best.fold,
        "attention_overlays": attention,
    }))
}

/// Overlays for the first test frame of each group in the best fold.
fn write_attention_samples(c: &PipelineConfig, l: &RunLayout, best: &FoldEvaluation) -> Result<usize> {
    let rows = read_manifest(&l.labeled_manifest())?;
    let test: BTreeSet<&str> = best.trips.iter().map(|t| t.trip_id.as_str()).collect();
    let mut written = 0;
    for (name, g) in groups(c) {
        let ckpt = l.dir(Stage::Train).join(format!("fold{}_{name}.ckpt", best.fold));
        let Some(row) = rows
            .iter()
            .find(|r| in_group(r.direction, g) && test.contains(r.trip_id.as_str()))
        else {
            continue;
        };
        if !ckpt.is_file() {
            continue;
        }
        let (config, params) = load_checkpoint(&ckpt)?;
        let frame = RasterFrame::read_ppm(Path::new(&row.frame_path))?;
        let overlay = attention_overlay(&frame, &params, &config)?;
        overlay.image.write_ppm(&l.dir(Stage::Eval).join(format!("attention_{name}.ppm")))?;
        written += 1;
    }
    Ok(written)
}

/// Reads `trip_id` and `true_band` from a trip predictions file.
fn read_true_bands(path: &Path) -> Result<BTreeMap<String, (f64, TravelTimeBand)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<BTreeMap<String, String>>() {
        let row = row.map_err(|e| Error::csv(path, e))?;
        let bad = || Error::Format(format!("{}: malformed prediction row", path.display()));
        let eff = row.get("eff_tt_s").and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let band = row.get("true_band").ok_or_else(bad)?.parse()?;
        out.insert(row.get("trip_id").ok_or_else(bad)?.clone(), (eff, band));
    }
    Ok(out)
}

/// Writes the report, summary and scatter files for one comparison.
pub fn write_comparison(dir: &Path, tag: &str, cmp: &Comparison) -> Result<()> {
    write_text(&dir.join(format!("ols_{tag}.csv")), &cmp.ols.report_csv())?;
    write_text(&dir.join(format!("olsplus_{tag}.csv")), &cmp.ols_plus.report_csv())?;
    write_text(
        &dir.join(format!("summary_{tag}.csv")),
        &format!("model,{}OLS+,{}", prefix_lines("OLS,", &cmp.ols.summary_csv()), prefix_lines("OLS+,", &cmp.ols_plus.summary_csv())),
    )?;
    write_text(&dir.join(format!("scatter_{tag}.csv")), &cmp.scatter_csv())?;
    let series: Vec<Series> = [("OLS", &cmp.ols), ("OLS+", &cmp.ols_plus)]
        .iter()
        .map(|(n, f)| Series {
            name: n.to_string(),
            points: f.actual.iter().copied().zip(f.fitted.iter().copied()).collect(),
            band: None,
        })
        .collect();
    write_text(
        &dir.join(format!("scatter_{tag}.svg")),
        &scatter(&series, &format!("Actual vs predicted travel time ({tag})"), "actual (s)", "predicted (s)", true),
    )
}

/// Summary blocks stacked as `model,statistic,value`; drops each block's
/// own header after the first.
fn prefix_lines(prefix: &str, block: &str) -> String {
    let mut lines = block.lines();
    let header = lines.next().unwrap_or_default();
    let mut s = String::new();
    if prefix == "OLS," {
        s.push_str(header);
        s.push('\n');
    }
    for line in lines {
        s.push_str(prefix);
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn comparison_json(cmp: &Comparison) -> Value {
    json!({
        "n": cmp.ols.n,
        "r2_ols": cmp.ols.r_squared,
        "r2_olsplus": cmp.ols_plus.r_squared,
        "delta_r2": cmp.delta_r2,
        "mae_ols": cmp.ols.mae,
        "mae_olsplus": cmp.ols_plus.mae,
        "ladder": cmp.ladder.iter().map(|v| if v.is_finite() { json!(v) } else { Value::Null }).collect::<Vec<_>>(),
        "ladder_increasing": cmp.ladder_increasing(),
    })
}

fn stage_regress(c: &PipelineConfig, l: &RunLayout) -> Result<Value> {
    let attributes = read_trip_database(&l.trip_attributes())?;
    let predicted = join_trip_records(&attributes, &read_band_predictions(&l.trip_predictions())?, c.utc_offset_s);
    let oracle = join_trip_records(&attributes, &read_true_bands(&l.trip_predictions())?, c.utc_offset_s);
    let dir = l.dir(Stage::Regress);
    let mut out = BTreeMap::new();
    for d in Direction::ALL {
        let mut scope = BTreeMap::new();
        let runs: [(&str, Vec<TripRecord>); 3] = [
            ("predicted", predicted.clone()),
            ("lookahead", lookahead_bands(&predicted)),
            ("oracle", oracle.clone()),
        ];
        for (kind, records) in runs {
            let tag = format!("{}_{kind}", d.name());
            let value = match compare_ols_vs_olsplus(&records, d, c.band_encoding) {
                Ok(cmp) => {
                    write_comparison(&dir, &tag, &cmp)?;
                    comparison_json(&cmp)
                }
                // Too few trips for a scope is a finding, not a failed run.
                Err(e) => json!({ "error": e.to_string() }),
            };
            scope.insert(kind, value);
        }
        out.insert(d.name(), scope);
    }
    Ok(json!({
        "band_encoding": match c.band_encoding {
            BandEncoding::SumToZero => "sum-to-zero".to_string(),
            BandEncoding::Reference(b) => format!("reference:{}", b.name()),
        },
        "scopes": out,
    }))
}
