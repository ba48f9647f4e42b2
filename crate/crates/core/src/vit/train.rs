use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{batch_gradients, forward_patches, Example};
use super::{TrainError, ViTConfig, ViTParameters};
use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::labeling::TravelTimeBand;
use crate::seed_for;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHyper {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

/// Learning rate over the course of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over all steps.
    Cosine,
}

impl LrSchedule {
    /// Rate for 1-based `step` of `total`.
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let progress = (step.saturating_sub(1)) as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::Argument(format!("unknown learning-rate schedule {other:?}"))),
        }
    }
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 30,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            schedule: LrSchedule::Constant,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Argument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,heldout_accuracy\n");
        for e in &self.epochs {
            let acc = e.heldout_accuracy.map(|a| format!("{a:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{:.8},{}\n", e.epoch, e.train_loss, acc));
        }
        s
    }
}

struct Adam {
    m: ViTParameters,
    v: ViTParameters,
    t: i32,
}

impl Adam {
    fn new(config: &ViTConfig) -> Self {
        Self {
            m: ViTParameters::zeros(config),
            v: ViTParameters::zeros(config),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ViTParameters, grads: &ViTParameters, h: &TrainHyper, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - h.beta1.powi(self.t);
        let c2 = 1.0 - h.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .groups_mut()
            .into_iter()
            .zip(grads.groups())
            .zip(self.m.groups_mut())
            .zip(self.v.groups_mut())
        {
            for i in 0..p.len() {
                m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
                v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + h.adam_eps);
                p[i] -= lr * (update + h.weight_decay * p[i]);
            }
        }
    }
}

/// Eval-mode class probabilities for each example.
pub fn predict_probabilities(examples: &[Example], params: &ViTParameters, config: &ViTConfig) -> Vec<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| forward_patches(&ex.patches, params, config).probabilities)
        .collect()
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn accuracy(examples: &[Example], params: &ViTParameters, config: &ViTConfig) -> f64 {
    let probs = predict_probabilities(examples, params, config);
    let hits = probs.iter().zip(examples).filter(|(p, ex)| argmax(p) == ex.label).count();
    hits as f64 / examples.len() as f64
}

/// Mini-batch Adam on mean cross-entropy. Initialization, shuffling and
/// dropout masks all derive from `hyper.seed`, and per-example gradients are
/// reduced in a fixed order, so a run is reproducible bit for bit.
pub fn train(
    train_set: &[Example],
    heldout: &[Example],
    config: &ViTConfig,
    hyper: &TrainHyper,
) -> Result<(ViTParameters, TrainLog)> {
    let init = ViTParameters::init(config, seed_for(hyper.seed, "init"));
    train_from(init, train_set, heldout, config, hyper)
}

pub fn train_from(
    mut params: ViTParameters,
    train_set: &[Example],
    heldout: &[Example],
    config: &ViTConfig,
    hyper: &TrainHyper,
) -> Result<(ViTParameters, TrainLog)> {
    config.validate()?;
    hyper.validate()?;
    params.check_shapes(config)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyCorpus.into());
    }
    let expected = config.num_patches() * config.patch_dim();
    if let Some(bad) = train_set.iter().chain(heldout).find(|e| e.patches.len() != expected || e.label >= config.num_classes) {
        return Err(Error::Argument(format!(
            "example with {} patch values and label {} does not fit the model",
            bad.patches.len(),
            bad.label
        )));
    }

    let mut adam = Adam::new(config);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed_for(hyper.seed, "shuffle"));
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let total_steps = hyper.epochs * train_set.len().div_ceil(hyper.batch_size);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            step += 1;
            let batch: Vec<Example> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (loss, grads) = batch_gradients(&batch, &params, config, Some(seed_for(hyper.seed, &format!("step{step}"))));
            if !loss.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, step, loss }.into());
            }
            adam.step(&mut params, &grads, hyper, hyper.schedule.rate(hyper.learning_rate, step, total_steps));
            if !params.is_finite() {
                return Err(TrainError::Diverged { epoch, step, loss: f64::NAN }.into());
            }
            total += loss * batch.len() as f64;
        }
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / train_set.len() as f64,
            heldout_accuracy: (!heldout.is_empty()).then(|| accuracy(heldout, &params, config)),
        });
    }
    Ok((params, log))
}

/// One hyperparameter combination.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub num_layers: usize,
    pub num_heads: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridScore {
    pub point: GridPoint,
    /// Validation macro F-1; `None` when training diverged.
    pub macro_f1: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: GridPoint,
    pub scores: Vec<GridScore>,
}

/// Trains each grid point with the fixed budget in `base_hyper` and keeps the
/// one with the highest validation macro F-1 (earliest point on ties).
pub fn grid_search(
    train_set: &[Example],
    validation: &[Example],
    base_config: &ViTConfig,
    base_hyper: &TrainHyper,
    grid: &[GridPoint],
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::Argument("empty hyperparameter grid".into()));
    }
    if validation.is_empty() {
        return Err(Error::Argument("empty validation set".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for point in grid {
        let config = ViTConfig {
            num_layers: point.num_layers,
            num_heads: point.num_heads,
            dropout_p: point.dropout_p,
            ..base_config.clone()
        };
        let hyper = TrainHyper {
            batch_size: point.batch_size,
            learning_rate: point.learning_rate,
            ..base_hyper.clone()
        };
        let (macro_f1, acc) = match train(train_set, &[], &config, &hyper) {
            Ok((params, _)) => {
                let probs = predict_probabilities(validation, &params, &config);
                let pairs: Vec<(TravelTimeBand, TravelTimeBand)> = probs
                    .iter()
                    .zip(validation)
                    .map(|(p, ex)| (band(argmax(p)), band(ex.label)))
                    .collect();
                let cm = ConfusionMatrix::from_pairs(&pairs);
                let m = cm.metrics();
                (Some(m.macro_f1), Some(m.accuracy))
            }
            Err(Error::Train(TrainError::Diverged { .. })) => (None, None),
            Err(e) => return Err(e),
        };
        scores.push(GridScore {
            point: point.clone(),
            macro_f1,
            accuracy: acc,
        });
    }
    let best = scores
        .iter()
        .filter(|s| s.macro_f1.is_some())
        .fold(None::<&GridScore>, |best, s| match best {
            Some(b) if b.macro_f1 >= s.macro_f1 => Some(b),
            _ => Some(s),
        })
        .ok_or_else(|| Error::Data("every grid point diverged".into()))?
        .point
        .clone();
    Ok(GridResult { best, scores })
}

fn band(i: usize) -> TravelTimeBand {
    TravelTimeBand::from_index(i).expect("class index in range")
}
