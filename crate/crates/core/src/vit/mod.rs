//! A small vision transformer written from scratch in f64.
//!
//! Pre-norm encoder blocks, a learnable class token and positional
//! embeddings, exact GELU, and hand-derived backward passes. Training uses
//! Adam on mean cross-entropy over the four travel-time bands.

mod checkpoint;
mod model;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::labeling::TravelTimeBand;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use model::{
    attention_overlay, forward, forward_patches, loss_and_gradients, patchify, prepare_frame, unpatchify, AttentionMap,
    AttentionOverlay, Example, ForwardOutput, Mode,
};
pub use train::{
    argmax, grid_search, predict_probabilities, train, train_from, EpochLog, GridPoint, GridResult, GridScore, LrSchedule,
    TrainHyper, TrainLog,
};

pub const NUM_CLASSES: usize = TravelTimeBand::COUNT;
pub const LN_EPS: f64 = 1e-6;
pub const MAX_DROPOUT: f64 = 0.25;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("empty training set")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViTConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub latent_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden_dim: usize,
    pub num_classes: usize,
    /// Width of the optional hidden layer in the classifier head; 0 means a
    /// single linear layer.
    pub head_hidden_dim: usize,
    pub dropout_p: f64,
    pub channel_mean: [f64; 3],
    pub channel_std: [f64; 3],
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            image_h: 224,
            image_w: 224,
            channels: 3,
            patch_size: 16,
            latent_dim: 64,
            num_layers: 4,
            num_heads: 4,
            mlp_hidden_dim: 128,
            num_classes: NUM_CLASSES,
            head_hidden_dim: 0,
            dropout_p: 0.1,
            channel_mean: [0.5; 3],
            channel_std: [0.5; 3],
        }
    }
}

impl ViTConfig {
    /// A configuration small enough to train on a laptop in seconds.
    pub fn tiny(image: usize, patch: usize) -> Self {
        Self {
            image_h: image,
            image_w: image,
            patch_size: patch,
            latent_dim: 32,
            num_layers: 2,
            num_heads: 4,
            mlp_hidden_dim: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Argument(m));
        if self.channels != 3 {
            return fail(format!("channels must be 3, got {}", self.channels));
        }
        if self.patch_size == 0 || self.image_h == 0 || self.image_w == 0 {
            return fail("image and patch sizes must be positive".into());
        }
        if self.image_h % self.patch_size != 0 || self.image_w % self.patch_size != 0 {
            return fail(format!(
                "image {}x{} not divisible by patch size {}",
                self.image_w, self.image_h, self.patch_size
            ));
        }
        if self.latent_dim == 0 || self.num_heads == 0 || self.latent_dim % self.num_heads != 0 {
            return fail(format!(
                "latent_dim {} not divisible by num_heads {}",
                self.latent_dim, self.num_heads
            ));
        }
        if self.num_layers == 0 || self.mlp_hidden_dim == 0 {
            return fail("num_layers and mlp_hidden_dim must be positive".into());
        }
        if self.num_classes != NUM_CLASSES {
            return fail(format!("num_classes must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} outside [0, {MAX_DROPOUT}]", self.dropout_p));
        }
        if self.channel_std.iter().any(|&s| !(s > 0.0)) {
            return fail("channel_std must be positive".into());
        }
        Ok(())
    }

    pub fn grid_h(&self) -> usize {
        self.image_h / self.patch_size
    }

    pub fn grid_w(&self) -> usize {
        self.image_w / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_h() * self.grid_w()
    }

    /// Tokens per sequence: patches plus the class token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.latent_dim / self.num_heads
    }

    fn head_in(&self) -> usize {
        if self.head_hidden_dim > 0 {
            self.head_hidden_dim
        } else {
            self.latent_dim
        }
    }
}

/// Parameters of one encoder block. Matrices are row-major `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_scale: Vec<f64>,
    pub ln1_shift: Vec<f64>,
    pub w_q: Vec<f64>,
    pub b_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub ln2_scale: Vec<f64>,
    pub ln2_shift: Vec<f64>,
    pub w_mlp1: Vec<f64>,
    pub b_mlp1: Vec<f64>,
    pub w_mlp2: Vec<f64>,
    pub b_mlp2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViTParameters {
    /// `(P*P*C) x D`.
    pub patch_projection: Vec<f64>,
    /// `(N+1) x D`.
    pub positional_embedding: Vec<f64>,
    pub class_token: Vec<f64>,
    pub blocks: Vec<BlockParams>,
    pub final_ln_scale: Vec<f64>,
    pub final_ln_shift: Vec<f64>,
    /// Optional hidden layer, `D x head_hidden_dim`; empty when unused.
    pub head_hidden_w: Vec<f64>,
    pub head_hidden_b: Vec<f64>,
    /// `head_in x 4`.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

/// Group kinds drive initialization.
#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Weight,
    Bias,
    Scale,
}

impl ViTParameters {
    /// `(name, length, kind)` for every group, in storage order.
    fn layout(config: &ViTConfig) -> Vec<(String, usize, Kind)> {
        let d = config.latent_dim;
        let m = config.mlp_hidden_dim;
        let mut v = vec![
            ("patch_projection".to_string(), config.patch_dim() * d, Kind::Weight),
            ("positional_embedding".to_string(), config.seq_len() * d, Kind::Weight),
            ("class_token".to_string(), d, Kind::Weight),
        ];
        for l in 0..config.num_layers {
            for (name, len, kind) in [
                ("ln1_scale", d, Kind::Scale),
                ("ln1_shift", d, Kind::Bias),
                ("w_q", d * d, Kind::Weight),
                ("b_q", d, Kind::Bias),
                ("w_k", d * d, Kind::Weight),
                ("b_k", d, Kind::Bias),
                ("w_v", d * d, Kind::Weight),
                ("b_v", d, Kind::Bias),
                ("w_o", d * d, Kind::Weight),
                ("b_o", d, Kind::Bias),
                ("ln2_scale", d, Kind::Scale),
                ("ln2_shift", d, Kind::Bias),
                ("w_mlp1", d * m, Kind::Weight),
                ("b_mlp1", m, Kind::Bias),
                ("w_mlp2", m * d, Kind::Weight),
                ("b_mlp2", d, Kind::Bias),
            ] {
                v.push((format!("block{l}.{name}"), len, kind));
            }
        }
        v.push(("final_ln_scale".into(), d, Kind::Scale));
        v.push(("final_ln_shift".into(), d, Kind::Bias));
        let hh = config.head_hidden_dim;
        v.push(("head_hidden_w".into(), if hh > 0 { d * hh } else { 0 }, Kind::Weight));
        v.push(("head_hidden_b".into(), hh, Kind::Bias));
        v.push(("head_w".into(), config.head_in() * config.num_classes, Kind::Weight));
        v.push(("head_b".into(), config.num_classes, Kind::Bias));
        v
    }

    pub fn group_names(config: &ViTConfig) -> Vec<String> {
        Self::layout(config).into_iter().map(|(n, _, _)| n).collect()
    }

    fn from_groups(config: &ViTConfig, mut groups: Vec<Vec<f64>>) -> Self {
        let mut it = groups.drain(..);
        let mut next = || it.next().expect("layout group");
        let patch_projection = next();
        let positional_embedding = next();
        let class_token = next();
        let blocks = (0..config.num_layers)
            .map(|_| BlockParams {
                ln1_scale: next(),
                ln1_shift: next(),
                w_q: next(),
                b_q: next(),
                w_k: next(),
                b_k: next(),
                w_v: next(),
                b_v: next(),
                w_o: next(),
                b_o: next(),
                ln2_scale: next(),
                ln2_shift: next(),
                w_mlp1: next(),
                b_mlp1: next(),
                w_mlp2: next(),
                b_mlp2: next(),
            })
            .collect();
        Self {
            patch_projection,
            positional_embedding,
            class_token,
            blocks,
            final_ln_scale: next(),
            final_ln_shift: next(),
            head_hidden_w: next(),
            head_hidden_b: next(),
            head_w: next(),
            head_b: next(),
        }
    }

    /// All-zero tensors with the shapes `config` requires (LN scales too).
    pub fn zeros(config: &ViTConfig) -> Self {
        let groups = Self::layout(config).into_iter().map(|(_, len, _)| vec![0.0; len]).collect();
        Self::from_groups(config, groups)
    }

    /// Truncated-normal (sd 0.02, cut at two sd) weights, zero biases and
    /// shifts, unit LN scales.
    pub fn init(config: &ViTConfig, seed: u64) -> Self {
        Self::init_with_sd(config, seed, 0.02)
    }

    pub fn init_with_sd(config: &ViTConfig, seed: u64, sd: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sd).expect("positive sd");
        let draw = |rng: &mut ChaCha8Rng| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * sd {
                return v;
            }
        };
        let groups = Self::layout(config)
            .into_iter()
            .map(|(_, len, kind)| match kind {
                Kind::Weight => (0..len).map(|_| draw(&mut rng)).collect(),
                Kind::Bias => vec![0.0; len],
                Kind::Scale => vec![1.0; len],
            })
            .collect();
        Self::from_groups(config, groups)
    }

    pub fn groups(&self) -> Vec<&Vec<f64>> {
        let mut v = vec![&self.patch_projection, &self.positional_embedding, &self.class_token];
        for b in &self.blocks {
            v.extend([
                &b.ln1_scale, &b.ln1_shift, &b.w_q, &b.b_q, &b.w_k, &b.b_k, &b.w_v, &b.b_v, &b.w_o, &b.b_o,
                &b.ln2_scale, &b.ln2_shift, &b.w_mlp1, &b.b_mlp1, &b.w_mlp2, &b.b_mlp2,
            ]);
        }
        v.extend([
            &self.final_ln_scale,
            &self.final_ln_shift,
            &self.head_hidden_w,
            &self.head_hidden_b,
            &self.head_w,
            &self.head_b,
        ]);
        v
    }

    pub fn groups_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = vec![&mut self.patch_projection, &mut self.positional_embedding, &mut self.class_token];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_scale,
                &mut b.ln1_shift,
                &mut b.w_q,
                &mut b.b_q,
                &mut b.w_k,
                &mut b.b_k,
                &mut b.w_v,
                &mut b.b_v,
                &mut b.w_o,
                &mut b.b_o,
                &mut b.ln2_scale,
                &mut b.ln2_shift,
                &mut b.w_mlp1,
                &mut b.b_mlp1,
                &mut b.w_mlp2,
                &mut b.b_mlp2,
            ]);
        }
        v.extend([
            &mut self.final_ln_scale,
            &mut self.final_ln_shift,
            &mut self.head_hidden_w,
            &mut self.head_hidden_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        v
    }

    pub fn num_params(&self) -> usize {
        self.groups().iter().map(|g| g.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }

    /// Checks every group length against `config`.
    pub fn check_shapes(&self, config: &ViTConfig) -> Result<()> {
        if self.blocks.len() != config.num_layers {
            return Err(Error::Argument(format!(
                "parameters have {} blocks, config wants {}",
                self.blocks.len(),
                config.num_layers
            )));
        }
        for ((name, len, _), g) in Self::layout(config).iter().zip(self.groups()) {
            if g.len() != *len {
                return Err(Error::Argument(format!("{name}: length {} != {len}", g.len())));
            }
        }
        Ok(())
    }

    pub(crate) fn check_finite(&self, config: &ViTConfig) -> Result<()> {
        for (name, g) in Self::group_names(config).iter().zip(self.groups()) {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite parameter {name}[{i}]")));
            }
        }
        Ok(())
    }

    /// `self += alpha * other`, group by group.
    pub fn axpy(&mut self, alpha: f64, other: &ViTParameters) {
        for (a, b) in self.groups_mut().into_iter().zip(other.groups()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v *= alpha);
        }
    }

    /// Uniform random perturbation, handy for tests that need non-trivial
    /// scales and biases.
    pub fn jitter(&mut self, rng: &mut impl Rng, amount: f64) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|v| *v += rng.random_range(-amount..=amount));
        }
    }
}
