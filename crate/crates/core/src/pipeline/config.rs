//! `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::AugmentationSpec;
use crate::eval::SequenceMode;
use crate::labeling::{ScopePolicy, TravelTimeBand};
use crate::regression::BandEncoding;
use crate::synth::SceneGeometry;
use crate::trigger::{AcquisitionPlan, GeoPoint, DEFAULT_ACTIVATION_RADIUS_M};
use crate::vit::{LrSchedule, TrainHyper, ViTConfig, MAX_DROPOUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Generate a synthetic feed, AVL file and frame archive.
    Synth,
    /// Use recorded `feed`, `avl` and `frames`.
    Ingest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelScope {
    /// One model per direction of travel.
    #[default]
    PerDirection,
    /// One model over both directions.
    Combined,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub source: Source,
    pub out: PathBuf,
    pub feed: Option<PathBuf>,
    pub avl: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub n_trips: usize,
    pub separable: bool,
    pub geometry: SceneGeometry,
    pub capture_failure_rate: f64,
    pub camera: GeoPoint,
    pub radius_m: f64,
    pub plan: AcquisitionPlan,
    pub label_scope: ScopePolicy,
    pub augment: bool,
    /// Crop bounds are given at 1280x720 and scaled to the frames in use.
    pub augmentation: AugmentationSpec,
    pub vit: ViTConfig,
    pub hyper: TrainHyper,
    pub folds: usize,
    pub model_scope: ModelScope,
    pub sequence_mode: SequenceMode,
    pub band_encoding: BandEncoding,
    /// Master seed; every stage derives its own stream from it.
    pub seed: u64,
    pub utc_offset_s: i64,
}

impl PipelineConfig {
    /// Everything filled with defaults; the model and optimizer follow the
    /// full-scale optimum (12 layers, 12 heads, batch 32, learning rate 2e-5,
    /// dropout 0.1), which is supported but far beyond desk scale.
    pub fn defaults(out: PathBuf) -> Self {
        Self {
            source: Source::Ingest,
            out,
            feed: None,
            avl: None,
            frames: None,
            n_trips: 100,
            separable: false,
            geometry: SceneGeometry::default(),
            capture_failure_rate: 0.0,
            camera: GeoPoint::new(42.3646, -71.1032),
            radius_m: DEFAULT_ACTIVATION_RADIUS_M,
            plan: AcquisitionPlan::default(),
            label_scope: ScopePolicy::PerDirection,
            augment: true,
            augmentation: AugmentationSpec::default(),
            vit: ViTConfig {
                image_h: 224,
                image_w: 224,
                patch_size: 16,
                latent_dim: 768,
                num_layers: 12,
                num_heads: 12,
                mlp_hidden_dim: 3072,
                dropout_p: 0.1,
                ..ViTConfig::default()
            },
            hyper: TrainHyper {
                batch_size: 32,
                learning_rate: 2e-5,
                epochs: 30,
                ..TrainHyper::default()
            },
            folds: 5,
            model_scope: ModelScope::PerDirection,
            sequence_mode: SequenceMode::Mean,
            band_encoding: BandEncoding::SumToZero,
            seed: 0,
            utc_offset_s: crate::DEFAULT_UTC_OFFSET_S,
        }
    }

    /// The desk-scale study: 40 synthetic trips at 256x256, a two-layer
    /// 32x32 transformer and two folds per direction.
    pub fn desk_study(out: PathBuf, seed: u64) -> Self {
        let mut c = Self::defaults(out);
        c.source = Source::Synth;
        c.n_trips = 40;
        c.geometry = SceneGeometry {
            width: 256,
            height: 256,
        };
        c.vit = ViTConfig {
            dropout_p: 0.1,
            ..ViTConfig::tiny(32, 8)
        };
        c.hyper = TrainHyper {
            batch_size: 16,
            learning_rate: 1e-3,
            epochs: 30,
            schedule: LrSchedule::Cosine,
            ..TrainHyper::default()
        };
        c.folds = 2;
        c.seed = seed;
        c
    }

    /// Checks every invariant that does not need the file system.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        let mut bad = |key: &str, message: String| out.push(ConfigIssue::new(key, message));
        if self.source == Source::Ingest {
            for (key, p) in [("feed", &self.feed), ("avl", &self.avl), ("frames", &self.frames)] {
                if p.is_none() {
                    bad(key, "required when source = ingest".into());
                }
            }
        }
        if self.n_trips == 0 {
            bad("n-trips", "must be positive".into());
        }
        if self.geometry.width < 4 || self.geometry.height < 4 {
            bad("frame-width", format!("frame {}x{} is too small", self.geometry.width, self.geometry.height));
        }
        if !(0.0..=1.0).contains(&self.capture_failure_rate) {
            bad("capture-failure-rate", format!("{} outside [0, 1]", self.capture_failure_rate));
        }
        if !(self.radius_m > 0.0 && self.radius_m.is_finite()) {
            bad("radius-m", format!("{} must be positive", self.radius_m));
        }
        if self.plan.frame_count == 0 {
            bad("frame-count", "must be at least 1".into());
        }
        if self.plan.frame_interval_s <= 0 {
            bad("frame-interval-s", format!("{} must be positive", self.plan.frame_interval_s));
        }
        let a = &self.augmentation;
        for (key, p) in [
            ("p-crop", a.p_crop),
            ("p-rotate", a.p_rotate),
            ("p-brightness", a.p_brightness),
            ("p-contrast", a.p_contrast),
        ] {
            if !(0.0..=1.0).contains(&p) {
                bad(key, format!("{p} outside [0, 1]"));
            }
        }
        if a.passes_per_image == 0 {
            bad("passes", "must be at least 1".into());
        }
        for (key, v) in [("rotate-max-deg", a.rotate_deg.1), ("brightness-max", a.brightness.1), ("contrast-max", a.contrast.1)] {
            if !(v >= 0.0 && v.is_finite()) {
                bad(key, format!("{v} must be non-negative"));
            }
        }
        if a.brightness.1 >= 1.0 || a.contrast.1 >= 1.0 {
            bad("brightness-max", "relative changes must stay below 1".into());
        }
        let v = &self.vit;
        if !(0.0..=MAX_DROPOUT).contains(&v.dropout_p) {
            bad("dropout", format!("{} outside the supported range [0, {MAX_DROPOUT}]", v.dropout_p));
        }
        if v.patch_size == 0 || v.image_h % v.patch_size != 0 {
            bad("patch-size", format!("{} must divide image-size {}", v.patch_size, v.image_h));
        }
        if v.num_heads == 0 || v.latent_dim % v.num_heads != 0 {
            bad("num-heads", format!("{} must divide latent-dim {}", v.num_heads, v.latent_dim));
        }
        for (key, n) in [("latent-dim", v.latent_dim), ("num-layers", v.num_layers), ("mlp-hidden-dim", v.mlp_hidden_dim)] {
            if n == 0 {
                bad(key, "must be positive".into());
            }
        }
        if self.hyper.batch_size == 0 {
            bad("batch-size", "must be positive".into());
        }
        if !(self.hyper.learning_rate > 0.0 && self.hyper.learning_rate.is_finite()) {
            bad("learning-rate", format!("{} must be positive", self.hyper.learning_rate));
        }
        if self.folds < 2 {
            bad("folds", format!("{} must be at least 2", self.folds));
        }
        out
    }

    /// Pre-flight checks against the file system.
    pub fn path_issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if self.source == Source::Ingest {
            for (key, p, dir) in [("feed", &self.feed, false), ("avl", &self.avl, false), ("frames", &self.frames, true)] {
                if let Some(p) = p {
                    let ok = if dir { p.is_dir() } else { p.is_file() };
                    if !ok {
                        let kind = if dir { "directory" } else { "file" };
                        out.push(ConfigIssue::new(key, format!("{kind} {} does not exist", p.display())));
                    }
                }
            }
        }
        out
    }

    /// Renders the config back into the file format; parsing the result
    /// gives the same config.
    pub fn to_text(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut lines: Vec<(String, String)> = vec![
            ("source".into(), match self.source { Source::Synth => "synth", Source::Ingest => "ingest" }.into()),
            ("out".into(), self.out.display().to_string()),
        ];
        for (k, v) in [("feed", opt(&self.feed)), ("avl", opt(&self.avl)), ("frames", opt(&self.frames))] {
            if let Some(v) = v {
                lines.push((k.into(), v));
            }
        }
        let a = &self.augmentation;
        let v = &self.vit;
        let h = &self.hyper;
        lines.extend(
            [
                ("n-trips", self.n_trips.to_string()),
                ("separable", self.separable.to_string()),
                ("frame-width", self.geometry.width.to_string()),
                ("frame-height", self.geometry.height.to_string()),
                ("capture-failure-rate", self.capture_failure_rate.to_string()),
                ("camera", format!("{},{}", self.camera.lat, self.camera.lon)),
                ("radius-m", self.radius_m.to_string()),
                ("frame-count", self.plan.frame_count.to_string()),
                ("frame-interval-s", self.plan.frame_interval_s.to_string()),
                ("label-scope", match self.label_scope { ScopePolicy::PerDirection => "per-direction", ScopePolicy::Overall => "overall" }.into()),
                ("augment", self.augment.to_string()),
                ("passes", a.passes_per_image.to_string()),
                ("p-crop", a.p_crop.to_string()),
                ("p-rotate", a.p_rotate.to_string()),
                ("p-brightness", a.p_brightness.to_string()),
                ("p-contrast", a.p_contrast.to_string()),
                ("crop-min", format!("{}x{}", a.crop_min.0, a.crop_min.1)),
                ("rotate-max-deg", a.rotate_deg.1.to_string()),
                ("brightness-max", a.brightness.1.to_string()),
                ("contrast-max", a.contrast.1.to_string()),
                ("image-size", v.image_h.to_string()),
                ("patch-size", v.patch_size.to_string()),
                ("latent-dim", v.latent_dim.to_string()),
                ("num-layers", v.num_layers.to_string()),
                ("num-heads", v.num_heads.to_string()),
                ("mlp-hidden-dim", v.mlp_hidden_dim.to_string()),
                ("head-hidden-dim", v.head_hidden_dim.to_string()),
                ("dropout", v.dropout_p.to_string()),
                ("batch-size", h.batch_size.to_string()),
                ("learning-rate", h.learning_rate.to_string()),
                ("epochs", h.epochs.to_string()),
                ("lr-schedule", h.schedule.name().to_string()),
                ("folds", self.folds.to_string()),
                ("model-scope", match self.model_scope { ModelScope::PerDirection => "per-direction", ModelScope::Combined => "combined" }.into()),
                ("sequence-mode", match self.sequence_mode { SequenceMode::Mean => "mean", SequenceMode::Vote => "vote" }.into()),
                ("band-encoding", match self.band_encoding {
                    BandEncoding::SumToZero => "sum-to-zero".to_string(),
                    BandEncoding::Reference(b) => format!("reference:{}", b.name()),
                }),
                ("seed", self.seed.to_string()),
                ("utc-offset-s", self.utc_offset_s.to_string()),
            ]
            .map(|(k, v)| (k.to_string(), v)),
        );
        lines.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(key: &str, message: String) -> Self {
        Self {
            key: key.to_string(),
            message,
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Reads and validates a config file. `overrides` (e.g. from the command
/// line) replace file values. Every problem is reported; nothing is
/// accepted partially.
pub fn validate_config(path: &Path, overrides: &[(&str, String)]) -> Result<PipelineConfig, Vec<ConfigIssue>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| vec![ConfigIssue::new("config", format!("cannot read {}: {e}", path.display()))])?;
    let config = parse_config(&text, overrides)?;
    let issues = config.path_issues();
    if issues.is_empty() {
        Ok(config)
    } else {
        Err(issues)
    }
}

/// Parses config text and checks every invariant except file existence.
pub fn parse_config(text: &str, overrides: &[(&str, String)]) -> Result<PipelineConfig, Vec<ConfigIssue>> {
    let mut r = KeyValues::parse(text);
    for (k, v) in overrides {
        r.values.insert(k.to_string(), v.clone());
    }
    let out = r.get::<PathBuf>("out");
    if out.is_none() && !r.has_issue("out") {
        r.issues.push(ConfigIssue::new("out", "required output directory is missing".into()));
    }
    let mut c = PipelineConfig::defaults(out.unwrap_or_default());
    r.apply(&mut c);
    r.finish();
    let mut issues = r.issues;
    issues.extend(c.issues());
    if issues.is_empty() {
        Ok(c)
    } else {
        Err(issues)
    }
}

/// Parses only model and optimizer keys (`image-size` ... `epochs`, `seed`),
/// for commands that train outside a full run.
pub fn parse_model_config(text: &str) -> Result<(ViTConfig, TrainHyper), Vec<ConfigIssue>> {
    let mut r = KeyValues::parse(text);
    let mut c = PipelineConfig::desk_study(PathBuf::new(), 0);
    r.apply_model(&mut c);
    if let Some(s) = r.get("seed") {
        c.hyper.seed = s;
    }
    r.finish();
    let mut issues = r.issues;
    issues.extend(
        c.issues()
            .into_iter()
            .filter(|i| MODEL_KEYS.contains(&i.key.as_str())),
    );
    if issues.is_empty() {
        Ok((c.vit, c.hyper))
    } else {
        Err(issues)
    }
}

const MODEL_KEYS: [&str; 12] = [
    "image-size",
    "patch-size",
    "latent-dim",
    "num-layers",
    "num-heads",
    "mlp-hidden-dim",
    "head-hidden-dim",
    "dropout",
    "batch-size",
    "learning-rate",
    "epochs",
    "lr-schedule",
];

struct KeyValues {
    values: BTreeMap<String, String>,
    issues: Vec<ConfigIssue>,
}

/// `WxH` or a single number for a square.
struct Size(usize, usize);

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
        match s.split_once(['x', 'X']) {
            Some((w, h)) => Ok(Size(parse(w)?, parse(h)?)),
            None => parse(s).map(|n| Size(n, n)),
        }
    }
}

struct Bool(bool);

impl FromStr for Bool {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "true" | "yes" | "1" | "on" => Ok(Bool(true)),
            "false" | "no" | "0" | "off" => Ok(Bool(false)),
            other => Err(format!("expected true or false, got {other:?}")),
        }
    }
}

struct Camera(GeoPoint);

impl FromStr for Camera {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        GeoPoint::parse(s).map(Camera).ok_or_else(|| "expected lat,lon".to_string())
    }
}

impl KeyValues {
    fn parse(text: &str) -> Self {
        let mut values = BTreeMap::new();
        let mut issues = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    let key = k.trim().to_string();
                    if values.insert(key.clone(), v.trim().to_string()).is_some() {
                        issues.push(ConfigIssue::new(&key, format!("set more than once (line {})", n + 1)));
                    }
                }
                None => issues.push(ConfigIssue::new(line, format!("line {} is not key = value", n + 1))),
            }
        }
        Self { values, issues }
    }

    fn has_issue(&self, key: &str) -> bool {
        self.issues.iter().any(|i| i.key == key)
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.values.remove(key)?;
        match raw.parse() {
            Ok(v) => Some(v),
            Err(e) => {
                self.issues.push(ConfigIssue::new(key, format!("cannot parse {raw:?}: {e}")));
                None
            }
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T)
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.get(key) {
            *slot = v;
        }
    }

    fn apply(&mut self, c: &mut PipelineConfig) {
        if let Some(s) = self.get::<String>("source") {
            match s.as_str() {
                "synth" => c.source = Source::Synth,
                "ingest" => c.source = Source::Ingest,
                other => self.issues.push(ConfigIssue::new("source", format!("expected synth or ingest, got {other:?}"))),
            }
        }
        c.feed = self.get("feed");
        c.avl = self.get("avl");
        c.frames = self.get("frames");
        self.set("n-trips", &mut c.n_trips);
        if let Some(Bool(b)) = self.get("separable") {
            c.separable = b;
        }
        self.set("frame-width", &mut c.geometry.width);
        self.set("frame-height", &mut c.geometry.height);
        self.set("capture-failure-rate", &mut c.capture_failure_rate);
        if let Some(Camera(p)) = self.get("camera") {
            c.camera = p;
        }
        self.set("radius-m", &mut c.radius_m);
        self.set("frame-count", &mut c.plan.frame_count);
        self.set("frame-interval-s", &mut c.plan.frame_interval_s);
        self.set("label-scope", &mut c.label_scope);
        if let Some(Bool(b)) = self.get("augment") {
            c.augment = b;
        }
        let a = &mut c.augmentation;
        self.set("passes", &mut a.passes_per_image);
        self.set("p-crop", &mut a.p_crop);
        self.set("p-rotate", &mut a.p_rotate);
        self.set("p-brightness", &mut a.p_brightness);
        self.set("p-contrast", &mut a.p_contrast);
        if let Some(Size(w, h)) = self.get("crop-min") {
            a.crop_min = (w, h);
        }
        if let Some(v) = self.get::<f64>("rotate-max-deg") {
            a.rotate_deg = (-v, v);
        }
        if let Some(v) = self.get::<f64>("brightness-max") {
            a.brightness = (-v, v);
        }
        if let Some(v) = self.get::<f64>("contrast-max") {
            a.contrast = (-v, v);
        }
        self.apply_model(c);
        self.set("folds", &mut c.folds);
        if let Some(s) = self.get::<String>("model-scope") {
            match s.as_str() {
                "per-direction" => c.model_scope = ModelScope::PerDirection,
                "combined" => c.model_scope = ModelScope::Combined,
                other => self.issues.push(ConfigIssue::new("model-scope", format!("expected per-direction or combined, got {other:?}"))),
            }
        }
        if let Some(s) = self.get::<String>("sequence-mode") {
            match s.as_str() {
                "mean" => c.sequence_mode = SequenceMode::Mean,
                "vote" => c.sequence_mode = SequenceMode::Vote,
                other => self.issues.push(ConfigIssue::new("sequence-mode", format!("expected mean or vote, got {other:?}"))),
            }
        }
        if let Some(s) = self.get::<String>("band-encoding") {
            match parse_band_encoding(&s) {
                Ok(e) => c.band_encoding = e,
                Err(e) => self.issues.push(ConfigIssue::new("band-encoding", e)),
            }
        }
        self.set("seed", &mut c.seed);
        self.set("utc-offset-s", &mut c.utc_offset_s);
    }

    fn apply_model(&mut self, c: &mut PipelineConfig) {
        let v = &mut c.vit;
        if let Some(Size(w, h)) = self.get("image-size") {
            v.image_w = w;
            v.image_h = h;
        }
        self.set("patch-size", &mut v.patch_size);
        self.set("latent-dim", &mut v.latent_dim);
        self.set("num-layers", &mut v.num_layers);
        self.set("num-heads", &mut v.num_heads);
        self.set("mlp-hidden-dim", &mut v.mlp_hidden_dim);
        self.set("head-hidden-dim", &mut v.head_hidden_dim);
        self.set("dropout", &mut v.dropout_p);
        let h = &mut c.hyper;
        self.set("batch-size", &mut h.batch_size);
        self.set("learning-rate", &mut h.learning_rate);
        self.set("epochs", &mut h.epochs);
        self.set("lr-schedule", &mut h.schedule);
    }

    /// Flags every key nobody consumed.
    fn finish(&mut self) {
        for k in std::mem::take(&mut self.values).into_keys() {
            self.issues.push(ConfigIssue::new(&k, "unknown key".into()));
        }
    }
}

/// `sum-to-zero` or `reference:<band>`.
pub fn parse_band_encoding(s: &str) -> Result<BandEncoding, String> {
    match s.split_once(':') {
        None if s == "sum-to-zero" => Ok(BandEncoding::SumToZero),
        Some(("reference", b)) => b
            .parse::<TravelTimeBand>()
            .map(BandEncoding::Reference)
            .map_err(|e| e.to_string()),
        _ => Err(format!("expected sum-to-zero or reference:<band>, got {s:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_lists_missing_paths() {
        let issues = parse_config("# nothing here\n", &[]).unwrap_err();
        let keys: Vec<&str> = issues.iter().map(|i| i.key.as_str()).collect();
        assert_eq!(keys, ["out", "feed", "avl", "frames"]);
    }

    #[test]
    fn defaults_fill_everything_else() {
        let c = parse_config("source = synth\nout = run\n", &[]).unwrap();
        assert_eq!(c.radius_m, 500.0);
        assert_eq!(c.plan.frame_count, 6);
        assert_eq!(c.plan.frame_interval_s, 15);
        assert_eq!(c.augmentation, AugmentationSpec::default());
        assert_eq!((c.hyper.batch_size, c.hyper.learning_rate, c.vit.dropout_p), (32, 2e-5, 0.1));
        assert_eq!((c.vit.num_layers, c.vit.num_heads), (12, 12));
        assert_eq!(c.folds, 5);
    }

    #[test]
    fn dropout_bound_is_enforced() {
        let issues = parse_config("source = synth\nout = o\ndropout = 0.5\n", &[]).unwrap_err();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].key, "dropout");
        assert!(issues[0].message.contains("[0, 0.25]"), "{}", issues[0]);
    }

    #[test]
    fn radius_must_be_positive() {
        let issues = parse_config("source = synth\nout = o\nradius-m = 0\n", &[]).unwrap_err();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].key, "radius-m");
        assert!(issues[0].message.contains("positive"));
    }

    #[test]
    fn every_problem_is_reported() {
        let text = "source = synth\nout = o\nradius-m = -1\nfolds = x\nbogus = 1\nseed = 1\nseed = 2\nno equals sign\n";
        let keys: Vec<String> = parse_config(text, &[]).unwrap_err().into_iter().map(|i| i.key).collect();
        for k in ["radius-m", "folds", "bogus", "seed", "no equals sign"] {
            assert!(keys.iter().any(|x| x == k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn overrides_win_and_paths_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        let avl = dir.path().join("avl.csv");
        std::fs::write(&avl, "trip_id,direction,ts,dwell\n").unwrap();
        std::fs::write(
            &cfg,
            format!("feed = {0}/missing.jsonl\navl = {1}\nframes = {0}\n", dir.path().display(), avl.display()),
        )
        .unwrap();
        let issues = validate_config(&cfg, &[("out", "x".into())]).unwrap_err();
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].key, "feed");
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::desk_study("out/run".into(), 9);
        c.band_encoding = BandEncoding::Reference(TravelTimeBand::Low);
        let back = parse_config(&c.to_text(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn model_config_ignores_paths() {
        let (v, h) = parse_model_config("image-size = 16\npatch-size = 4\nlatent-dim = 8\nnum-heads = 2\nseed = 4\n").unwrap();
        assert_eq!((v.image_h, v.patch_size, v.latent_dim, h.seed), (16, 4, 8, 4));
        assert!(parse_model_config("dropout = 0.3\n").is_err());
        assert!(parse_model_config("out = x\n").is_err());
    }
}
