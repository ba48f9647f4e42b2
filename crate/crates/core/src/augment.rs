//! Randomized crop / rotate / brightness / contrast augmentation.
//!
//! Actions run in a fixed order (crop, rotate, brightness, contrast), each
//! applied independently with its own probability and a magnitude drawn
//! uniformly from its bounds. The result is resampled to the output size.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::{Lineage, ManifestRow};
use crate::raster::{RasterFrame, CHANNELS};
use crate::seed_for;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationSpec {
    /// Minimum crop `(width, height)`.
    pub crop_min: (usize, usize),
    /// Maximum crop; `None` means the source dimensions.
    pub crop_max: Option<(usize, usize)>,
    pub rotate_deg: (f64, f64),
    /// Relative brightness change bounds, e.g. `(-0.2, 0.2)`.
    pub brightness: (f64, f64),
    pub contrast: (f64, f64),
    pub p_crop: f64,
    pub p_rotate: f64,
    pub p_brightness: f64,
    pub p_contrast: f64,
    pub passes_per_image: usize,
    pub seed: u64,
    /// Output `(width, height)`; `None` keeps the source dimensions.
    pub output_size: Option<(usize, usize)>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        Self {
            crop_min: (560, 560),
            crop_max: None,
            rotate_deg: (-30.0, 30.0),
            brightness: (-0.2, 0.2),
            contrast: (-0.2, 0.2),
            p_crop: 0.33,
            p_rotate: 0.33,
            p_brightness: 0.5,
            p_contrast: 0.5,
            passes_per_image: 6,
            seed: 0,
            output_size: None,
        }
    }
}

/// Reference frame size the default crop bounds were set for.
pub const REFERENCE_SIZE: (usize, usize) = (1280, 720);

impl AugmentationSpec {
    /// Scales the minimum crop by the ratio of `(width, height)` to the
    /// 1280x720 reference, using the smaller of the two ratios.
    pub fn scaled_to(mut self, width: usize, height: usize) -> Self {
        let r = (width as f64 / REFERENCE_SIZE.0 as f64).min(height as f64 / REFERENCE_SIZE.1 as f64);
        let scale = |v: usize| ((v as f64 * r).round() as usize).max(1);
        self.crop_min = (scale(self.crop_min.0).min(width), scale(self.crop_min.1).min(height));
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("crop", self.p_crop),
            ("rotate", self.p_rotate),
            ("brightness", self.p_brightness),
            ("contrast", self.p_contrast),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!("{name} probability {p} outside [0, 1]")));
            }
        }
        if let Some((w, h)) = self.crop_max {
            if self.crop_min.0 > w || self.crop_min.1 > h {
                return Err(Error::Argument("crop_min exceeds crop_max".into()));
            }
        }
        if self.passes_per_image == 0 {
            return Err(Error::Argument("passes_per_image must be at least 1".into()));
        }
        for (name, (lo, hi)) in [
            ("rotate", self.rotate_deg),
            ("brightness", self.brightness),
            ("contrast", self.contrast),
        ] {
            if !(lo <= hi) {
                return Err(Error::Argument(format!("{name} bounds ({lo}, {hi}) inverted")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AppliedAction {
    Crop { x: usize, y: usize, width: usize, height: usize },
    Rotate { degrees: f64 },
    /// Multiplicative factor, `1 + relative change`.
    Brightness { factor: f64 },
    Contrast { factor: f64 },
}

impl AppliedAction {
    pub fn name(&self) -> &'static str {
        match self {
            AppliedAction::Crop { .. } => "crop",
            AppliedAction::Rotate { .. } => "rotate",
            AppliedAction::Brightness { .. } => "brightness",
            AppliedAction::Contrast { .. } => "contrast",
        }
    }

    pub fn magnitude(&self) -> String {
        match *self {
            AppliedAction::Crop { x, y, width, height } => format!("{width}x{height}+{x}+{y}"),
            AppliedAction::Rotate { degrees } => format!("{degrees:.4}"),
            AppliedAction::Brightness { factor } | AppliedAction::Contrast { factor } => format!("{factor:.4}"),
        }
    }
}

/// Lineage strings for a set of applied actions: `("crop|rotate", "crop=...;rotate=...")`.
pub fn describe_actions(actions: &[AppliedAction]) -> (String, String) {
    if actions.is_empty() {
        return ("none".into(), String::new());
    }
    let names: Vec<_> = actions.iter().map(AppliedAction::name).collect();
    let mut mags = String::new();
    for (i, a) in actions.iter().enumerate() {
        if i > 0 {
            mags.push(';');
        }
        let _ = write!(mags, "{}={}", a.name(), a.magnitude());
    }
    (names.join("|"), mags)
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

pub fn augment_once(
    frame: &RasterFrame,
    spec: &AugmentationSpec,
    rng: &mut impl Rng,
) -> Result<(RasterFrame, Vec<AppliedAction>)> {
    let (w, h) = (frame.width(), frame.height());
    if w < spec.crop_min.0 || h < spec.crop_min.1 {
        return Err(Error::Argument(format!(
            "frame {w}x{h} smaller than minimum crop {}x{}",
            spec.crop_min.0, spec.crop_min.1
        )));
    }
    let mut actions = Vec::new();
    let mut img = frame.clone();

    if rng.random::<f64>() < spec.p_crop {
        let (max_w, max_h) = spec.crop_max.unwrap_or((w, h));
        let cw = rng.random_range(spec.crop_min.0..=max_w.min(w));
        let ch = rng.random_range(spec.crop_min.1..=max_h.min(h));
        let x = rng.random_range(0..=w - cw);
        let y = rng.random_range(0..=h - ch);
        img = img.crop(x, y, cw, ch)?;
        actions.push(AppliedAction::Crop { x, y, width: cw, height: ch });
    }
    if rng.random::<f64>() < spec.p_rotate {
        let degrees = uniform(rng, spec.rotate_deg);
        img = rotate_edge_replicate(&img, degrees);
        actions.push(AppliedAction::Rotate { degrees });
    }
    if rng.random::<f64>() < spec.p_brightness {
        let factor = 1.0 + uniform(rng, spec.brightness);
        adjust_brightness(&mut img, factor);
        actions.push(AppliedAction::Brightness { factor });
    }
    if rng.random::<f64>() < spec.p_contrast {
        let factor = 1.0 + uniform(rng, spec.contrast);
        adjust_contrast(&mut img, factor);
        actions.push(AppliedAction::Contrast { factor });
    }

    let (ow, oh) = spec.output_size.unwrap_or((w, h));
    let mut out = img.resize(ow, oh)?;
    out.capture_ts = frame.capture_ts;
    Ok((out, actions))
}

/// Rotates about the frame center, sampling bilinearly; source coordinates
/// outside the frame clamp to the nearest edge pixel.
pub fn rotate_edge_replicate(frame: &RasterFrame, degrees: f64) -> RasterFrame {
    let (w, h) = (frame.width(), frame.height());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = frame.pixels();
    let mut out = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = (cos * dx + sin * dy + cx).clamp(0.0, w as f64 - 1.0);
            let sy = (-sin * dx + cos * dy + cy).clamp(0.0, h as f64 - 1.0);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
            for c in 0..CHANNELS {
                let p = |xx: usize, yy: usize| src[(yy * w + xx) * CHANNELS + c] as f64;
                let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
                let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
                out[(y * w + x) * CHANNELS + c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RasterFrame::new(w, h, out, frame.capture_ts).expect("same geometry")
}

pub fn adjust_brightness(frame: &mut RasterFrame, factor: f64) {
    for v in frame.pixels_mut() {
        *v = (*v as f64 * factor).round().clamp(0.0, 255.0) as u8;
    }
}

/// Scales every channel value around the frame's mean channel value.
pub fn adjust_contrast(frame: &mut RasterFrame, factor: f64) {
    let px = frame.pixels_mut();
    let mean = px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
    for v in px {
        *v = (mean + factor * (*v as f64 - mean)).round().clamp(0.0, 255.0) as u8;
    }
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub rows: Vec<ManifestRow>,
    pub actions: Vec<Vec<AppliedAction>>,
    pub skipped: Vec<String>,
}

/// Expands a labeled manifest: each original row is followed by
/// `passes_per_image` variants written under `out_dir`. Each source row gets
/// its own seed derived from `spec.seed`, so output does not depend on
/// scheduling.
pub fn augment_corpus(rows: &[ManifestRow], spec: &AugmentationSpec, out_dir: &Path) -> Result<AugmentOutcome> {
    spec.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let originals: Vec<&ManifestRow> = rows.iter().filter(|r| r.is_original()).collect();

    let per_row: Vec<std::result::Result<Vec<(ManifestRow, Vec<AppliedAction>)>, String>> = originals
        .par_iter()
        .map(|row| expand_row(row, spec, out_dir).map_err(|e| format!("{}: {e}", row.frame_path)))
        .collect();

    let mut out = AugmentOutcome {
        rows: Vec::new(),
        actions: Vec::new(),
        skipped: Vec::new(),
    };
    for result in per_row {
        match result {
            Ok(items) => {
                for (row, acts) in items {
                    out.rows.push(row);
                    out.actions.push(acts);
                }
            }
            Err(e) => out.skipped.push(e),
        }
    }
    Ok(out)
}

fn expand_row(row: &ManifestRow, spec: &AugmentationSpec, out_dir: &Path) -> Result<Vec<(ManifestRow, Vec<AppliedAction>)>> {
    let frame = RasterFrame::read_ppm(Path::new(&row.frame_path))?;
    let stem = Path::new(&row.frame_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".into());
    // Keyed like the output names, not the full path, so the run directory
    // does not change the draws.
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(spec.seed, &format!("{stem}#{}", row.trip_id)));

    let mut original = row.clone();
    original.lineage = Some(Lineage::default());
    let mut items = vec![(original, Vec::new())];
    for pass in 0..spec.passes_per_image {
        let (img, actions) = augment_once(&frame, spec, &mut rng)?;
        let path = out_dir.join(format!("{stem}_{}_a{}.ppm", row.trip_id, pass + 1));
        img.write_ppm(&path)?;
        let (names, mags) = describe_actions(&actions);
        let mut variant = row.clone();
        variant.frame_path = path.to_string_lossy().into_owned();
        variant.lineage = Some(Lineage {
            source_frame_id: row.frame_path.clone(),
            actions: names,
            magnitudes: mags,
        });
        items.push((variant, actions));
    }
    Ok(items)
}
