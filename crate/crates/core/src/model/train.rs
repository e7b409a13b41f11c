//! Minibatch training on energy MAE.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::offsets::fit_element_offsets_dropping;
use super::{Model, ModelConfig, Prepared, TargetTransform};
use crate::error::{Error, Result};
use crate::geometry::Structure;
use crate::nn::{Optimizer, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Fraction of structures held out for validation.
    pub val_fraction: f64,
    /// Seed of the split and of the minibatch order.
    pub seed: u64,
    /// Epochs without validation improvement before the learning rate is
    /// multiplied by `plateau_factor`; 0 disables the schedule.
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub min_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            val_fraction: 0.1,
            seed: 0,
            plateau_patience: 5,
            plateau_factor: 0.5,
            min_learning_rate: 1e-5,
        }
    }
}

pub const TRAIN_KEYS: [&str; 9] = [
    "epochs",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "val_fraction",
    "train_seed",
    "plateau_patience",
    "plateau_factor",
    "min_learning_rate",
];

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "val_fraction" => self.val_fraction = num(key, value)?,
            "train_seed" => self.seed = num(key, value)?,
            "plateau_patience" => self.plateau_patience = num(key, value)?,
            "plateau_factor" => self.plateau_factor = num(key, value)?,
            "min_learning_rate" => self.min_learning_rate = num(key, value)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown training key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("weight_decay", format!("{:?}", self.weight_decay)),
            ("val_fraction", format!("{:?}", self.val_fraction)),
            ("train_seed", self.seed.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("plateau_factor", format!("{:?}", self.plateau_factor)),
            ("min_learning_rate", format!("{:?}", self.min_learning_rate)),
        ]
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || !(0.0..1.0).contains(&self.val_fraction)
            || self.learning_rate < 0.0
        {
            return Err(Error::InvalidParameter(format!(
                "invalid training settings: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: &'static str,
    pub mae: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation MAE.
    pub model: Model,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub dropped_species: Vec<String>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Deterministic shuffled split; at least one structure lands in each part
/// when there are two or more.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (val_fraction * n as f64).round() as usize;
    if n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    } else {
        n_val = 0;
    }
    let val = idx.split_off(n - n_val);
    (idx, val)
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,split,mae,wall_time\n");
    for m in history {
        out.push_str(&format!(
            "{},{},{:e},{:.3}\n",
            m.epoch, m.split, m.mae, m.wall_time
        ));
    }
    out
}

/// MAE of `model.energy` over `indices`.
pub fn evaluate(
    model: &Model,
    prepared: &[Prepared],
    energies: &[f64],
    indices: &[usize],
) -> Result<f64> {
    let mut pred = Vec::with_capacity(indices.len());
    let mut target = Vec::with_capacity(indices.len());
    for &i in indices {
        pred.push(model.energy(&prepared[i])?);
        target.push(energies[i]);
    }
    crate::nn::mae_loss(&pred, &target)
}

/// Trains a fresh model on `(structures, energies)`.
///
/// Targets are normalized by least-squares species offsets fitted on the
/// training split (species whose counts are linearly dependent are dropped
/// from the fit) and by the standard deviation of the remaining residuals.
/// Epoch 0 in the history is the untrained model.
pub fn train(
    config: ModelConfig,
    tc: &TrainConfig,
    structures: &[Structure],
    energies: &[f64],
) -> Result<TrainOutcome> {
    tc.validate()?;
    if structures.len() != energies.len() {
        return Err(Error::ShapeError {
            op: "train",
            detail: format!(
                "{} structures for {} energies",
                structures.len(),
                energies.len()
            ),
        });
    }
    if structures.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let start = Instant::now();
    let mut model = Model::new(config)?;
    let prepared: Vec<Prepared> = structures
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<_>>()?;
    let (train_idx, val_idx) = split_indices(structures.len(), tc.val_fraction, tc.seed);
    if train_idx.is_empty() {
        return Err(Error::EmptyBatch);
    }

    let counts: Vec<Vec<usize>> = train_idx
        .iter()
        .map(|&i| prepared[i].counts.clone())
        .collect();
    let train_e: Vec<f64> = train_idx.iter().map(|&i| energies[i]).collect();
    let (offsets, dropped_species) =
        fit_element_offsets_dropping(&model.config.species, &counts, &train_e)?;
    let residuals: Vec<f64> = counts
        .iter()
        .zip(&train_e)
        .map(|(c, &e)| offsets.apply(c, e))
        .collect();
    let mean = residuals.iter().sum::<f64>() / residuals.len() as f64;
    let var = residuals
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / residuals.len() as f64;
    let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let normalized: Vec<f64> = (0..structures.len())
        .map(|i| offsets.apply(&prepared[i].counts, energies[i]) / scale)
        .collect();
    model.target = Some(TargetTransform { offsets, scale });

    let mut history = Vec::new();
    let eval_split = |model: &Model, idx: &[usize]| -> Result<f64> {
        if idx.is_empty() {
            Ok(f64::NAN)
        } else {
            evaluate(model, &prepared, energies, idx)
        }
    };
    let val0 = eval_split(&model, &val_idx)?;
    history.push(EpochMetrics {
        epoch: 0,
        split: "train",
        mae: eval_split(&model, &train_idx)?,
        wall_time: start.elapsed().as_secs_f64(),
    });
    history.push(EpochMetrics {
        epoch: 0,
        split: "val",
        mae: val0,
        wall_time: start.elapsed().as_secs_f64(),
    });

    let mut best = (0usize, val0, model.store.clone());
    let mut opt = Optimizer::adamw(&model.store, tc.learning_rate, tc.weight_decay);
    let mut order_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(1));
    let mut order = train_idx.clone();
    let mut since_best = 0usize;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut order_rng);
        let mut abs_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            model.store.zero_grad();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                let mut tape = Tape::new();
                let out = model.forward(&mut tape, &prepared[i])?;
                let pred = tape.value(out).get(0, 0);
                if !pred.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        detail: format!("non-finite prediction for structure {i}"),
                    });
                }
                let diff = pred - normalized[i];
                abs_sum += diff.abs() * scale;
                let seed = if diff > 0.0 {
                    weight
                } else if diff < 0.0 {
                    -weight
                } else {
                    0.0
                };
                tape.backward(out, seed, &mut model.store)?;
            }
            opt.step(&mut model.store);
        }
        let train_mae = abs_sum / order.len() as f64;
        if !train_mae.is_finite() {
            return Err(Error::Diverged {
                epoch,
                detail: "training loss is not finite".into(),
            });
        }
        let val_mae = eval_split(&model, &val_idx)?;
        let now = start.elapsed().as_secs_f64();
        history.push(EpochMetrics {
            epoch,
            split: "train",
            mae: train_mae,
            wall_time: now,
        });
        history.push(EpochMetrics {
            epoch,
            split: "val",
            mae: val_mae,
            wall_time: now,
        });
        if val_mae.is_nan() && !val_idx.is_empty() {
            return Err(Error::Diverged {
                epoch,
                detail: "validation MAE is not finite".into(),
            });
        }
        if val_mae < best.1 || best.1.is_nan() {
            best = (epoch, val_mae, model.store.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if tc.plateau_patience > 0 && since_best >= tc.plateau_patience {
                opt.learning_rate =
                    (opt.learning_rate * tc.plateau_factor).max(tc.min_learning_rate);
                since_best = 0;
            }
        }
    }

    let (best_epoch, best_val_mae, store) = best;
    model.store = store;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_mae,
        dropped_species,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
