//! Flat `key = value` run configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ewald_core::coulomb::{DirectSumOptions, EwaldParams, SyntheticConfig};
use ewald_core::model::train::TrainConfig;
use ewald_core::model::ModelConfig;

/// Settings of the oracle, check and bench commands that are not part of the
/// model or the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ewald: EwaldParams,
    pub direct: DirectSumOptions,
    pub dataset: SyntheticConfig,
    /// Nearest-neighbor distance of the Madelung crystals, Å.
    pub nn_distance: f64,
    /// Gaussian width and `c_k` sweep of the identity check.
    pub identity_sigma: f64,
    pub identity_sweep: Vec<f64>,
    pub bench_warmup: usize,
    pub bench_timed: usize,
    pub bench_repeats: usize,
    /// Width of the long-range block timed by `bench`.
    pub bench_width: usize,
    /// Atoms per Å³ of the bench structures.
    pub bench_density: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ewald: EwaldParams {
                alpha: 0.5,
                real_cutoff: 11.0,
                freq_cutoff: 6.0,
            },
            direct: DirectSumOptions::default(),
            dataset: SyntheticConfig::default(),
            nn_distance: 1.0,
            identity_sigma: 0.5,
            identity_sweep: vec![8.0, 11.0, 14.0],
            bench_warmup: 10,
            bench_timed: 100,
            bench_repeats: 3,
            bench_width: 32,
            bench_density: 0.05,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("{key}: cannot parse {value:?}"))
}

impl RunConfig {
    /// Applies one setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "ewald_alpha" => self.ewald.alpha = num(key, value)?,
            "ewald_real_cutoff" => self.ewald.real_cutoff = num(key, value)?,
            "ewald_freq_cutoff" => self.ewald.freq_cutoff = num(key, value)?,
            "direct_tolerance" => self.direct.tolerance = num(key, value)?,
            "direct_max_window" => self.direct.max_window = num(key, value)?,
            "n_structures" => self.dataset.n_structures = num(key, value)?,
            "min_atoms" => self.dataset.min_atoms = num(key, value)?,
            "max_atoms" => self.dataset.max_atoms = num(key, value)?,
            "box_size" => self.dataset.box_size = num(key, value)?,
            "min_separation" => self.dataset.min_separation = num(key, value)?,
            "max_attempts" => self.dataset.max_attempts = num(key, value)?,
            "dataset_seed" => self.dataset.seed = num(key, value)?,
            "nn_distance" => self.nn_distance = num(key, value)?,
            "identity_sigma" => self.identity_sigma = num(key, value)?,
            "identity_sweep" => {
                self.identity_sweep = value
                    .split(',')
                    .map(|v| num(key, v))
                    .collect::<Result<_>>()?;
            }
            "bench_warmup" => self.bench_warmup = num(key, value)?,
            "bench_timed" => self.bench_timed = num(key, value)?,
            "bench_repeats" => self.bench_repeats = num(key, value)?,
            "bench_width" => self.bench_width = num(key, value)?,
            "bench_density" => self.bench_density = num(key, value)?,
            _ if ewald_core::model::MODEL_KEYS.contains(&key) => self.model.set(key, value)?,
            _ if ewald_core::model::train::TRAIN_KEYS.contains(&key) => {
                self.train.set(key, value)?
            }
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", n + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("line {}", n + 1))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .with_context(|| format!("override {o:?}: expected key=value"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Defaults, then the file at `path` (if any), then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = path {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", p.display()))?;
        }
        cfg.apply_overrides(overrides)?;
        Ok(cfg)
    }

    /// Every effective setting, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        for (k, v) in self.model.entries() {
            push(k, v);
        }
        for (k, v) in self.train.entries() {
            push(k, v);
        }
        push("ewald_alpha", format!("{:?}", self.ewald.alpha));
        push("ewald_real_cutoff", format!("{:?}", self.ewald.real_cutoff));
        push("ewald_freq_cutoff", format!("{:?}", self.ewald.freq_cutoff));
        push("direct_tolerance", format!("{:?}", self.direct.tolerance));
        push("direct_max_window", self.direct.max_window.to_string());
        push("n_structures", self.dataset.n_structures.to_string());
        push("min_atoms", self.dataset.min_atoms.to_string());
        push("max_atoms", self.dataset.max_atoms.to_string());
        push("box_size", format!("{:?}", self.dataset.box_size));
        push(
            "min_separation",
            format!("{:?}", self.dataset.min_separation),
        );
        push("max_attempts", self.dataset.max_attempts.to_string());
        push("dataset_seed", self.dataset.seed.to_string());
        push("nn_distance", format!("{:?}", self.nn_distance));
        push("identity_sigma", format!("{:?}", self.identity_sigma));
        push(
            "identity_sweep",
            self.identity_sweep
                .iter()
                .map(|v| format!("{v:?}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        push("bench_warmup", self.bench_warmup.to_string());
        push("bench_timed", self.bench_timed.to_string());
        push("bench_repeats", self.bench_repeats.to_string());
        push("bench_width", self.bench_width.to_string());
        push("bench_density", format!("{:?}", self.bench_density));
        out
    }

    /// `# key = value` lines for CSV headers.
    pub fn header(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("# {k} = {v}\n"))
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
