use crate::error::{Error, Result};
use crate::structure_factor::Damping;

/// Short-range only, or short-range plus the Fourier-space block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelMode {
    Baseline,
    Ewald,
}

impl ModelMode {
    pub fn name(self) -> &'static str {
        match self {
            ModelMode::Baseline => "baseline",
            ModelMode::Ewald => "ewald",
        }
    }

    pub fn parse(s: &str) -> Result<ModelMode> {
        match s {
            "baseline" => Ok(ModelMode::Baseline),
            "ewald" => Ok(ModelMode::Ewald),
            other => Err(Error::InvalidParameter(format!(
                "unknown model mode {other:?}"
            ))),
        }
    }
}

/// How long-range frequencies are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyChoice {
    /// Lattice-index filters on `×_j {-N_j..N_j} \ {0}`; periodic input only.
    PeriodicIndex,
    /// Radial filters on reciprocal-lattice points with `0 < |k| < c_k`; periodic input only.
    RadialCutoff,
    /// Radial filters on a voxel grid in the SVD frame; aperiodic input only.
    Voxel,
}

impl FrequencyChoice {
    pub fn name(self) -> &'static str {
        match self {
            FrequencyChoice::PeriodicIndex => "periodic-index",
            FrequencyChoice::RadialCutoff => "radial-cutoff",
            FrequencyChoice::Voxel => "voxel",
        }
    }

    pub fn parse(s: &str) -> Result<FrequencyChoice> {
        match s {
            "periodic-index" => Ok(FrequencyChoice::PeriodicIndex),
            "radial-cutoff" => Ok(FrequencyChoice::RadialCutoff),
            "voxel" => Ok(FrequencyChoice::Voxel),
            other => Err(Error::InvalidParameter(format!(
                "unknown frequency mode {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Embedding width `F`.
    pub width: usize,
    /// Number of interaction blocks `L`.
    pub blocks: usize,
    /// Distance cutoff `c_x`, Å.
    pub cutoff: f64,
    pub max_neighbors: usize,
    /// Gaussians in the edge-distance expansion.
    pub edge_rbf: usize,
    pub frequency: FrequencyChoice,
    pub index_counts: [u32; 3],
    /// Frequency cutoff `c_k`, Å⁻¹.
    pub freq_cutoff: f64,
    /// Voxel side `Δ`, Å⁻¹.
    pub voxel_spacing: f64,
    /// Residual blocks in the long-range update.
    pub n_hidden: usize,
    /// Gaussians in the frequency-norm expansion.
    pub n_rbf: usize,
    /// Filter bottleneck `N_↓`.
    pub bottleneck: usize,
    pub damping: Damping,
    /// Scale of the initial up-projection of the frequency filters.
    pub filter_gain: f64,
    pub species: Vec<String>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: ModelMode::Ewald,
            width: 128,
            blocks: 4,
            cutoff: 6.0,
            max_neighbors: 50,
            edge_rbf: 50,
            frequency: FrequencyChoice::Voxel,
            index_counts: [2, 2, 5],
            freq_cutoff: 0.6,
            voxel_spacing: 0.2,
            n_hidden: 3,
            n_rbf: 128,
            bottleneck: 8,
            damping: Damping::Analytic,
            filter_gain: 0.01,
            species: vec!["P".into(), "M".into(), "N".into()],
            seed: 0,
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in echo order.
pub const MODEL_KEYS: [&str; 17] = [
    "mode",
    "width",
    "blocks",
    "cutoff",
    "max_neighbors",
    "edge_rbf",
    "frequency_mode",
    "index_counts",
    "freq_cutoff",
    "voxel_spacing",
    "n_hidden",
    "n_rbf",
    "bottleneck",
    "damping",
    "filter_gain",
    "species",
    "seed",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidParameter(msg));
        if self.width < 2 || self.blocks < 1 {
            return fail(format!(
                "need width ≥ 2 and blocks ≥ 1, got {} and {}",
                self.width, self.blocks
            ));
        }
        if !(self.cutoff > 0.0) || self.edge_rbf < 2 {
            return fail("distance cutoff must be positive with at least 2 edge Gaussians".into());
        }
        if self.species.is_empty() {
            return fail("species list is empty".into());
        }
        if self.mode == ModelMode::Ewald {
            match self.frequency {
                FrequencyChoice::PeriodicIndex => {
                    if self.index_counts == [0, 0, 0] {
                        return fail("index_counts must include at least one frequency".into());
                    }
                }
                FrequencyChoice::RadialCutoff => {
                    if !(self.freq_cutoff > 0.0) {
                        return fail("freq_cutoff must be positive".into());
                    }
                }
                FrequencyChoice::Voxel => {
                    if !(self.voxel_spacing > 0.0)
                        || self.voxel_spacing > self.freq_cutoff * (1.0 + 1e-9)
                    {
                        return fail("voxel grid requires 0 < voxel_spacing ≤ freq_cutoff".into());
                    }
                }
            }
            if self.bottleneck < 1 || self.n_rbf < 2 {
                return fail("bottleneck ≥ 1 and n_rbf ≥ 2 required".into());
            }
        }
        Ok(())
    }

    pub fn species_index(&self, name: &str) -> Result<usize> {
        self.species
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
    }

    /// Unique lattice-filter slots for the configured index counts.
    pub fn lattice_slots(&self) -> usize {
        let total: u64 = self
            .index_counts
            .iter()
            .map(|&n| 2 * n as u64 + 1)
            .product();
        ((total - 1) / 2) as usize
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "mode" => self.mode = ModelMode::parse(v)?,
            "width" => self.width = parse_num(key, v)?,
            "blocks" => self.blocks = parse_num(key, v)?,
            "cutoff" => self.cutoff = parse_num(key, v)?,
            "max_neighbors" => self.max_neighbors = parse_num(key, v)?,
            "edge_rbf" => self.edge_rbf = parse_num(key, v)?,
            "frequency_mode" => self.frequency = FrequencyChoice::parse(v)?,
            "index_counts" => {
                let parts: Vec<&str> = v.split(',').collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidParameter(format!(
                        "index_counts needs three values, got {v:?}"
                    )));
                }
                for (slot, p) in self.index_counts.iter_mut().zip(parts) {
                    *slot = parse_num(key, p)?;
                }
            }
            "freq_cutoff" => self.freq_cutoff = parse_num(key, v)?,
            "voxel_spacing" => self.voxel_spacing = parse_num(key, v)?,
            "n_hidden" => self.n_hidden = parse_num(key, v)?,
            "n_rbf" => self.n_rbf = parse_num(key, v)?,
            "bottleneck" => self.bottleneck = parse_num(key, v)?,
            "damping" => self.damping = Damping::parse(v)?,
            "filter_gain" => self.filter_gain = parse_num(key, v)?,
            "species" => {
                self.species = v
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "seed" => self.seed = parse_num(key, v)?,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown model key {other:?}"
                )))
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let [a, b, c] = self.index_counts;
        vec![
            ("mode", self.mode.name().to_string()),
            ("width", self.width.to_string()),
            ("blocks", self.blocks.to_string()),
            ("cutoff", format!("{:?}", self.cutoff)),
            ("max_neighbors", self.max_neighbors.to_string()),
            ("edge_rbf", self.edge_rbf.to_string()),
            ("frequency_mode", self.frequency.name().to_string()),
            ("index_counts", format!("{a},{b},{c}")),
            ("freq_cutoff", format!("{:?}", self.freq_cutoff)),
            ("voxel_spacing", format!("{:?}", self.voxel_spacing)),
            ("n_hidden", self.n_hidden.to_string()),
            ("n_rbf", self.n_rbf.to_string()),
            ("bottleneck", self.bottleneck.to_string()),
            ("damping", self.damping.name().to_string()),
            ("filter_gain", format!("{:?}", self.filter_gain)),
            ("species", self.species.join(",")),
            ("seed", self.seed.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut cfg = ModelConfig {
            mode: ModelMode::Baseline,
            index_counts: [1, 1, 3],
            seed: 42,
            ..Default::default()
        };
        cfg.species = vec!["Na".into(), "Cl".into()];
        let mut back = ModelConfig::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
        assert_eq!(
            cfg.entries().iter().map(|e| e.0).collect::<Vec<_>>(),
            MODEL_KEYS
        );
    }

    #[test]
    fn rejects_unknown_keys_and_values() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.set("colour", "red").is_err());
        assert!(cfg.set("width", "wide").is_err());
        assert!(cfg.set("index_counts", "1,2").is_err());
        cfg.voxel_spacing = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn lattice_slot_count() {
        let cfg = ModelConfig {
            index_counts: [2, 2, 5],
            ..Default::default()
        };
        assert_eq!(cfg.lattice_slots(), 137);
    }
}
