//! Command-line entry point: one subcommand per stage plus `pipeline`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use busvision::augment::{augment_corpus, AugmentationSpec};
use busvision::eval::{
    accuracy_by_hour, accuracy_vs_sequence_length, aggregate_sequence, hour_buckets_csv, length_buckets_csv,
    make_folds, metrics_csv, summarize_folds, summary_text, trips_from_manifest, FoldPlan, LengthBucketing,
    SequenceMode,
};
use busvision::feed::{parse_feed_file, ClockMode};
use busvision::labeling::{label_dataset, read_avl, ScopePolicy};
use busvision::manifest::{read_manifest, write_manifest};
use busvision::pipeline::{
    evaluate_fold, examples, load_patches, parse_band_encoding, parse_model_config, predict_rows, run_pipeline,
    trip_predictions, validate_config, write_comparison, write_frame_predictions, PipelineConfig, PipelineError,
};
use busvision::regression::{compare_ols_vs_olsplus, join_trip_records, lookahead_bands, read_band_predictions};
use busvision::synth::{generate_synthetic_corpus, CorpusConfig, SceneGeometry};
use busvision::trigger::{
    export_trip_attributes, export_trip_database, read_trip_database, run_trigger, session_manifest,
    AcquisitionPlan, ArchiveFrameSource, GeoPoint, MonitoredSegment,
};
use busvision::vit::{attention_overlay, load_checkpoint, save_checkpoint, train};
use busvision::{seed_for, Direction, ManifestRow, RasterFrame, DEFAULT_UTC_OFFSET_S};

#[derive(Parser)]
#[command(name = "busvision", version, about = "Travel-time band prediction from roadside imagery")]
struct Cli {
    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; 1 makes every result bit-reproducible.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feed, AVL file, frame archive and manifest.
    Synth(SynthArgs),
    /// Replay a feed file as JSON lines, optionally at scaled real time.
    Replay(ReplayArgs),
    /// Run proximity-triggered acquisition over a feed and a frame archive.
    Trigger(TriggerArgs),
    /// Attach effective travel times and bands to a manifest.
    Label(LabelArgs),
    /// Expand a labeled manifest with augmented variants.
    Augment(AugmentArgs),
    /// Train a transformer on a labeled manifest and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one cross-validation fold.
    Eval(EvalArgs),
    /// Render a class-attention overlay for one frame.
    Attention(AttentionArgs),
    /// Fit OLS and OLS+ travel-time models for one direction.
    Regress(RegressArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 40)]
    n_trips: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    /// Make vehicle counts fully determined by the band.
    #[arg(long)]
    separable: bool,
    #[arg(long, default_value_t = 0.0)]
    capture_failure_rate: f64,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    feed: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    speedup: f64,
    /// Ignore timestamps and emit records as fast as possible.
    #[arg(long)]
    fast: bool,
}

#[derive(Args)]
struct TriggerArgs {
    #[arg(long)]
    feed: PathBuf,
    /// Camera position as `lat,lon`.
    #[arg(long, default_value = "42.3646,-71.1032")]
    camera: String,
    #[arg(long, default_value_t = 500.0)]
    radius_m: f64,
    #[arg(long, default_value_t = 6)]
    frames: usize,
    #[arg(long, default_value_t = 15)]
    interval_s: i64,
    /// Directory of `<capture_ts>.ppm` frames; defaults to `frames/` next to the feed.
    #[arg(long)]
    archive: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    trips: PathBuf,
    #[arg(long)]
    avl: PathBuf,
    #[arg(long, default_value = "per-direction")]
    scope: ScopePolicy,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 6)]
    passes: usize,
    /// Resize every output frame to `WxH`.
    #[arg(long)]
    size: Option<String>,
}

#[derive(Args)]
struct FoldArgs {
    /// Restrict to one direction, matching a per-direction model.
    #[arg(long)]
    direction: Option<DirectionArg>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `key = value` model and optimizer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    split: FoldArgs,
    /// Hold out this fold's trips; without it every row is used.
    #[arg(long)]
    holdout_fold: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    split: FoldArgs,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Mean)]
    sequence_mode: ModeArg,
    #[arg(long, default_value_t = DEFAULT_UTC_OFFSET_S, allow_hyphen_values = true)]
    utc_offset_s: i64,
}

#[derive(Args)]
struct AttentionArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    frame: PathBuf,
}

#[derive(Args)]
struct RegressArgs {
    /// Trip attributes CSV (`trip_attributes.csv` from `trigger`).
    #[arg(long)]
    trips: PathBuf,
    /// Per-trip bands with columns `trip_id,eff_tt_s,pred_band`.
    #[arg(long)]
    bands: PathBuf,
    /// Use the previous same-direction trip's band.
    #[arg(long)]
    lookahead: bool,
    #[arg(long, value_enum)]
    scope: DirectionArg,
    /// `sum-to-zero` or `reference:<band>`.
    #[arg(long, default_value = "sum-to-zero")]
    encoding: String,
    #[arg(long, default_value_t = DEFAULT_UTC_OFFSET_S, allow_hyphen_values = true)]
    utc_offset_s: i64,
}

#[derive(Args)]
struct PipelineArgs {
    /// Run configuration; without it the 40-trip desk study runs.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Outbound,
    Inbound,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::Outbound => Direction::Outbound,
            DirectionArg::Inbound => Direction::Inbound,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mean,
    Vote,
}

impl From<ModeArg> for SequenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mean => SequenceMode::Mean,
            ModeArg::Vote => SequenceMode::Vote,
        }
    }
}

/// An error plus the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_STAGE: u8 = 2;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        error: anyhow!(msg.into()),
    }
}

impl From<busvision::Error> for Failure {
    fn from(e: busvision::Error) -> Self {
        let code = match e {
            busvision::Error::Argument(_) => EXIT_VALIDATION,
            _ => EXIT_STAGE,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: EXIT_STAGE, error }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let seed = cli.seed;
    let out = cli.out;
    match cli.command {
        Command::Synth(a) => synth(a, seed, &required_out(out)?),
        Command::Replay(a) => replay(a, out.as_deref()),
        Command::Trigger(a) => trigger(a, &required_out(out)?),
        Command::Label(a) => label(a, &required_out(out)?),
        Command::Augment(a) => augment(a, seed, &required_out(out)?),
        Command::Train(a) => train_cmd(a, seed, &required_out(out)?),
        Command::Eval(a) => eval_cmd(a, seed, &required_out(out)?),
        Command::Attention(a) => attention(a, &required_out(out)?),
        Command::Regress(a) => regress(a, &required_out(out)?),
        Command::Pipeline(a) => pipeline(a, seed, out),
    }
}

fn required_out(out: Option<PathBuf>) -> CliResult<PathBuf> {
    out.ok_or_else(|| invalid("--out is required for this subcommand"))
}

fn existing(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(invalid(format!("{what} {} does not exist", path.display())))
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn synth(a: SynthArgs, seed: u64, out: &Path) -> CliResult {
    let config = CorpusConfig {
        n_trips: a.n_trips,
        seed: seed_for(seed, "synth"),
        geometry: SceneGeometry {
            width: a.width,
            height: a.height,
        },
        capture_failure_rate: a.capture_failure_rate,
        separable: a.separable,
        ..CorpusConfig::default()
    };
    let (corpus, paths) = generate_synthetic_corpus(&config, out)?;
    println!("trips:    {}", corpus.trips.len());
    println!("feed:     {}", paths.feed.display());
    println!("avl:      {}", paths.avl.display());
    println!("frames:   {}", paths.frames.display());
    println!("manifest: {}", paths.manifest.display());
    Ok(())
}

fn replay(a: ReplayArgs, out: Option<&Path>) -> CliResult {
    existing(&a.feed, "feed")?;
    if !a.fast && !(a.speedup > 0.0) {
        return Err(invalid("--speedup must be positive"));
    }
    let parsed = parse_feed_file(&a.feed)?;
    for s in &parsed.skipped {
        eprintln!("skipped line {}: {}", s.line, s.reason);
    }
    let mode = if a.fast {
        ClockMode::AsFastAsPossible
    } else {
        ClockMode::RealtimeScaled { speedup: a.speedup }
    };
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = BufWriter::new(sink);
    for rec in parsed.stream.replay(mode)? {
        writeln!(sink, "{}", rec.to_line()).context("writing replayed records")?;
        if !a.fast {
            sink.flush().context("writing replayed records")?;
        }
    }
    sink.flush().context("writing replayed records")?;
    Ok(())
}

fn trigger(a: TriggerArgs, out: &Path) -> CliResult {
    existing(&a.feed, "feed")?;
    let camera = GeoPoint::parse(&a.camera).ok_or_else(|| invalid(format!("--camera {:?} is not lat,lon", a.camera)))?;
    let segment = MonitoredSegment::new(camera, a.radius_m)?;
    let plan = AcquisitionPlan {
        frame_count: a.frames,
        frame_interval_s: a.interval_s,
    };
    plan.validate()?;
    let archive = a
        .archive
        .unwrap_or_else(|| a.feed.parent().unwrap_or(Path::new(".")).join("frames"));
    existing(&archive, "frame archive")?;
    let parsed = parse_feed_file(&a.feed)?;
    let outcome = run_trigger(parsed.stream.records(), segment, plan, &mut ArchiveFrameSource::new(archive))
        .map_err(busvision::Error::from)?;
    create_dir(out)?;
    let recorded = export_trip_database(&outcome.registry, &out.join("trips.csv"))?;
    export_trip_attributes(&outcome.registry, &out.join("trip_attributes.csv"))?;
    let rows = session_manifest(&outcome.registry);
    write_manifest(&out.join("manifest.csv"), &rows)?;
    for f in &outcome.failures {
        eprintln!("{f}");
    }
    println!(
        "sessions: {}, trips recorded: {recorded}, frames: {}, failed sessions: {}",
        outcome.registry.sessions().len(),
        rows.len(),
        outcome.failures.len()
    );
    Ok(())
}

fn label(a: LabelArgs, out: &Path) -> CliResult {
    for (p, what) in [(&a.manifest, "manifest"), (&a.trips, "trip database"), (&a.avl, "AVL file")] {
        existing(p, what)?;
    }
    let outcome = label_dataset(
        &read_manifest(&a.manifest)?,
        &read_trip_database(&a.trips)?,
        &read_avl(&a.avl)?,
        a.scope,
    )?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_manifest(out, &outcome.rows)?;
    for t in &outcome.thresholds {
        println!("{:?}: p10 {} p50 {} p90 {}", t.scope, t.p10_s, t.p50_s, t.p90_s);
    }
    for d in &outcome.dropped {
        eprintln!("dropped: {d}");
    }
    println!("labeled {} frames of {} trips", outcome.rows.len(), outcome.trips.len());
    Ok(())
}

fn parse_size(s: &str) -> CliResult<(usize, usize)> {
    let bad = || invalid(format!("size {s:?} is not WxH"));
    let (w, h) = s.split_once('x').ok_or_else(bad)?;
    Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
}

fn augment(a: AugmentArgs, seed: u64, out: &Path) -> CliResult {
    existing(&a.manifest, "manifest")?;
    let rows = read_manifest(&a.manifest)?;
    let first = rows.first().ok_or_else(|| invalid("manifest has no rows"))?;
    let sample = RasterFrame::read_ppm(Path::new(&first.frame_path))?;
    let spec = AugmentationSpec {
        passes_per_image: a.passes,
        seed: seed_for(seed, "augment"),
        output_size: a.size.as_deref().map(parse_size).transpose()?,
        ..AugmentationSpec::default()
    }
    .scaled_to(sample.width(), sample.height());
    spec.validate()?;
    create_dir(out)?;
    let outcome = augment_corpus(&rows, &spec, &out.join("frames"))?;
    write_manifest(&out.join("manifest.csv"), &outcome.rows)?;
    for s in &outcome.skipped {
        eprintln!("skipped: {s}");
    }
    println!("{} rows ({} source frames)", outcome.rows.len(), rows.len());
    Ok(())
}

/// Labeled rows of the chosen direction plus their fold plan; folds use the
/// same seed derivation as the pipeline, so its checkpoints evaluate
/// cleanly here.
fn split(manifest: &Path, args: &FoldArgs, seed: u64) -> CliResult<(Vec<ManifestRow>, FoldPlan)> {
    existing(manifest, "manifest")?;
    let direction = args.direction.map(Direction::from);
    let rows: Vec<ManifestRow> = read_manifest(manifest)?
        .into_iter()
        .filter(|r| r.label.is_some() && direction.is_none_or(|d| d == r.direction))
        .collect();
    if rows.is_empty() {
        return Err(invalid(format!("{} has no labeled rows for this selection", manifest.display())));
    }
    let group = direction.map_or("all", Direction::name);
    let trips: Vec<_> = trips_from_manifest(&rows).into_iter().map(|(t, _, b)| (t, b)).collect();
    let plan = make_folds(&trips, args.folds, seed_for(seed, &format!("folds/{group}")))?;
    Ok((rows, plan))
}

fn train_cmd(a: TrainArgs, seed: u64, out: &Path) -> CliResult {
    let (config, mut hyper) = match &a.config {
        Some(p) => {
            existing(p, "config")?;
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_model_config(&text).map_err(|issues| {
                invalid(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))
            })?
        }
        None => {
            let c = PipelineConfig::desk_study(PathBuf::new(), seed);
            (c.vit, c.hyper)
        }
    };
    hyper.seed = seed_for(seed, "train");
    let (rows, plan) = split(&a.manifest, &a.split, seed)?;
    if a.holdout_fold.is_some_and(|f| f >= a.split.folds) {
        return Err(invalid("--holdout-fold must be below --folds"));
    }
    let refs: Vec<&ManifestRow> = rows.iter().collect();
    let patches = load_patches(&refs, &config)?;
    let is_test = |r: &ManifestRow| a.holdout_fold.is_some_and(|f| plan.is_test(f, &r.trip_id) == Some(true));
    let train_rows: Vec<&ManifestRow> = refs.iter().copied().filter(|r| !is_test(r)).collect();
    let test_rows: Vec<&ManifestRow> = refs.iter().copied().filter(|r| is_test(r) && r.is_original()).collect();
    let (params, log) = train(&examples(&train_rows, &patches)?, &examples(&test_rows, &patches)?, &config, &hyper)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_checkpoint(out, &config, &params)?;
    write_file(&out.with_extension("log.csv"), &log.to_csv())?;
    for e in &log.epochs {
        let acc = e.heldout_accuracy.map_or(String::new(), |v| format!("  held-out {v:.3}"));
        println!("epoch {:>3}  loss {:.4}{acc}", e.epoch, e.train_loss);
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs, seed: u64, out: &Path) -> CliResult {
    existing(&a.ckpt, "checkpoint")?;
    if a.fold >= a.split.folds {
        return Err(invalid("--fold must be below --folds"));
    }
    let (config, params) = load_checkpoint(&a.ckpt)?;
    let (rows, plan) = split(&a.manifest, &a.split, seed)?;
    let test: Vec<&ManifestRow> = rows
        .iter()
        .filter(|r| r.is_original() && plan.is_test(a.fold, &r.trip_id) == Some(true))
        .collect();
    let patches = load_patches(&test, &config)?;
    let group = a.split.direction.map_or("all", |d| Direction::from(d).name());
    let preds = predict_rows(&test, &patches, &params, &config, a.fold, group)?;
    let mode = SequenceMode::from(a.sequence_mode);
    let refs: Vec<_> = preds.iter().collect();
    let fe = evaluate_fold(a.fold, trip_predictions(&refs, &BTreeMap::new()), mode)?;

    create_dir(out)?;
    write_frame_predictions(&out.join("frame_predictions.csv"), &preds)?;
    let name = a.fold.to_string();
    write_file(&out.join("metrics_frame.csv"), &metrics_csv(&[(name.clone(), fe.frame_metrics.clone())]))?;
    write_file(&out.join("metrics_sequence.csv"), &metrics_csv(&[(name, fe.sequence_metrics.clone())]))?;
    let summary = format!(
        "{}\n{}",
        summary_text("Frame level", &summarize_folds(std::slice::from_ref(&fe.frame_metrics))?),
        summary_text("Sequence level", &summarize_folds(std::slice::from_ref(&fe.sequence_metrics))?)
    );
    write_file(&out.join("summary.txt"), &summary)?;
    write_file(&out.join("confusion_frame.csv"), &fe.frame.to_csv())?;
    write_file(&out.join("confusion_sequence.csv"), &fe.sequence.to_csv())?;
    let eff: BTreeMap<&str, f64> = rows
        .iter()
        .filter_map(|r| r.label.as_ref().map(|l| (r.trip_id.as_str(), l.eff_tt_s)))
        .collect();
    let mut csv = String::from("trip_id,direction,approach_ts,eff_tt_s,true_band,pred_band,fold\n");
    for t in &fe.trips {
        let (_, pred) = aggregate_sequence(&t.frames, mode)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            t.trip_id,
            t.direction.code(),
            t.approach_ts,
            eff.get(t.trip_id.as_str()).copied().unwrap_or(f64::NAN),
            t.truth.name(),
            pred.name(),
            a.fold
        );
    }
    write_file(&out.join("predictions.csv"), &csv)?;
    let lengths = accuracy_vs_sequence_length(&fe.trips, mode, LengthBucketing::Prefixes)?;
    write_file(&out.join("accuracy_vs_length.csv"), &length_buckets_csv(&lengths))?;
    write_file(&out.join("accuracy_by_hour.csv"), &hour_buckets_csv(&accuracy_by_hour(&fe.trips, mode, a.utc_offset_s)?))?;
    print!("{summary}");
    Ok(())
}

fn attention(a: AttentionArgs, out: &Path) -> CliResult {
    existing(&a.ckpt, "checkpoint")?;
    existing(&a.frame, "frame")?;
    let (config, params) = load_checkpoint(&a.ckpt)?;
    let frame = RasterFrame::read_ppm(&a.frame)?;
    let overlay = attention_overlay(&frame, &params, &config)?;
    overlay.image.write_ppm(out)?;
    let mut grid = String::new();
    for row in overlay.grid.chunks(config.grid_w()) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(grid, "{}", cells.join(","));
    }
    write_file(&out.with_extension("grid.csv"), &grid)?;
    print!("{grid}");
    Ok(())
}

fn regress(a: RegressArgs, out: &Path) -> CliResult {
    existing(&a.trips, "trip attributes")?;
    existing(&a.bands, "band predictions")?;
    let encoding = parse_band_encoding(&a.encoding).map_err(invalid)?;
    let records = join_trip_records(&read_trip_database(&a.trips)?, &read_band_predictions(&a.bands)?, a.utc_offset_s);
    let records = if a.lookahead { lookahead_bands(&records) } else { records };
    let scope = Direction::from(a.scope);
    let cmp = compare_ols_vs_olsplus(&records, scope, encoding)?;
    create_dir(out)?;
    let tag = format!("{}{}", scope.name(), if a.lookahead { "_lookahead" } else { "" });
    write_comparison(out, &tag, &cmp)?;
    println!("n {}", cmp.ols.n);
    println!("R2  OLS {:.4}  OLS+ {:.4}  delta {:.4}", cmp.ols.r_squared, cmp.ols_plus.r_squared, cmp.delta_r2);
    println!("MAE OLS {:.3}  OLS+ {:.3}", cmp.ols.mae, cmp.ols_plus.mae);
    Ok(())
}

fn pipeline(a: PipelineArgs, seed: u64, out: Option<PathBuf>) -> CliResult {
    let config = match &a.config {
        Some(path) => {
            let mut overrides = vec![("seed", seed.to_string())];
            if let Some(o) = &out {
                overrides.push(("out", o.display().to_string()));
            }
            validate_config(path, &overrides).map_err(|issues| {
                invalid(issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))
            })?
        }
        None => PipelineConfig::desk_study(required_out(out)?, seed),
    };
    match run_pipeline(&config) {
        Ok(report) => {
            for s in &report.stages {
                println!("{:<8} {:<7} {:>8.1}s", s.stage.name(), s.status, s.seconds);
            }
            println!("summary: {}", report.layout.summary().display());
            Ok(())
        }
        Err(PipelineError::Config(issues)) => Err(invalid(
            issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"),
        )),
        Err(e @ PipelineError::Stage { .. }) => Err(Failure {
            code: EXIT_STAGE,
            error: e.into(),
        }),
    }
}
