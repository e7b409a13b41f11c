//! The Ewald message-passing network: species embedding, interaction blocks
//! with a continuous-filter convolution and an optional Fourier-space
//! message sum, and an atom-wise energy readout.

mod config;
pub mod gradcheck;
pub mod messages;
pub mod offsets;
pub mod train;

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{FrequencyChoice, ModelConfig, ModelMode, MODEL_KEYS};
pub use offsets::ElementOffsets;

use crate::error::{Error, Result};
use crate::filters::{
    add_down_projection, add_up_projection, FilterBank, FilterInput, LatticeFilterBank,
    RadialBasis, RadialFilterBank,
};
use crate::geometry::{
    enumerate_index_frequencies, enumerate_radial_frequencies, neighbor_list, reciprocal_basis,
    svd_frame, voxel_grid, FrequencySet, Structure,
};
use crate::nn::{
    Activation, Checkpoint, DenseLayer, ParamStore, ResidualBlock, Tape, Tensor2, Var,
};
use crate::structure_factor::phase_table;

const FRAC_1_SQRT_3: f64 = 0.577_350_269_189_625_8;

/// Edge filter generator and update of the continuous-filter convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortRangeBlock {
    pub filter_in: DenseLayer,
    pub filter_out: DenseLayer,
    pub update: DenseLayer,
}

/// Fourier-space filter bank and the update `dense + N_hidden residual blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct EwaldBlock {
    pub bank: FilterBank,
    pub update: DenseLayer,
    pub residual: Vec<ResidualBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionBlock {
    pub short_range: ShortRangeBlock,
    pub long_range: Option<EwaldBlock>,
}

/// Maps raw energies to the normalized scale the network is trained on:
/// `t = (E - offsets(counts)) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTransform {
    pub offsets: ElementOffsets,
    pub scale: f64,
}

/// Constant, per-structure inputs of the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub n_atoms: usize,
    pub species: Rc<[usize]>,
    pub counts: Vec<usize>,
    pub edge_center: Rc<[usize]>,
    pub edge_neighbor: Rc<[usize]>,
    /// Gaussian expansion of edge distances, `N_edges × edge_rbf`.
    pub edge_basis: Tensor2,
    pub long_range: Option<LongRangeInput>,
}

#[derive(Debug, Clone)]
pub struct LongRangeInput {
    /// `damp ∘ cos(k·x)`, `N_k × N_at`.
    pub gather_cos: Tensor2,
    /// `damp ∘ sin(k·x)`, `N_k × N_at`.
    pub gather_sin: Tensor2,
    pub filter: Rc<FilterInput>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub embedding: crate::nn::ParamId,
    pub blocks: Vec<InteractionBlock>,
    pub readout: [DenseLayer; 2],
    pub edge_basis: RadialBasis,
    pub target: Option<TargetTransform>,
    voxel_cache: Option<(FrequencySet, Rc<FilterInput>)>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let f = config.width;
        let embedding = store.add(
            "embedding",
            Tensor2::from_fn(config.species.len(), f, |_, _| {
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
            }),
        );
        let edge_basis = RadialBasis::new(config.edge_rbf, config.cutoff)?;

        let ewald = config.mode == ModelMode::Ewald;
        let shared_down = if ewald {
            let inputs = match config.frequency {
                FrequencyChoice::PeriodicIndex => config.lattice_slots(),
                _ => config.n_rbf,
            };
            Some(add_down_projection(
                &mut store,
                &mut rng,
                "filter.down",
                config.bottleneck,
                inputs,
            ))
        } else {
            None
        };

        let mut blocks = Vec::with_capacity(config.blocks);
        for l in 0..config.blocks {
            let p = format!("block{l}");
            let short_range = ShortRangeBlock {
                filter_in: DenseLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("{p}.sr.filter1"),
                    config.edge_rbf,
                    f,
                    Activation::Silu,
                ),
                filter_out: DenseLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("{p}.sr.filter2"),
                    f,
                    f,
                    Activation::Identity,
                ),
                update: DenseLayer::new(
                    &mut store,
                    &mut rng,
                    &format!("{p}.sr.update"),
                    f,
                    f,
                    Activation::Silu,
                ),
            };
            let long_range = match shared_down {
                Some(w_down) => {
                    let w_up = add_up_projection(
                        &mut store,
                        &mut rng,
                        &format!("{p}.lr.up"),
                        f,
                        config.bottleneck,
                        config.filter_gain,
                    );
                    let bank = match config.frequency {
                        FrequencyChoice::PeriodicIndex => {
                            FilterBank::Lattice(LatticeFilterBank { w_down, w_up })
                        }
                        _ => FilterBank::Radial(RadialFilterBank {
                            basis: RadialBasis::new(config.n_rbf, config.freq_cutoff)?,
                            w_down,
                            w_up,
                        }),
                    };
                    let update = DenseLayer::new(
                        &mut store,
                        &mut rng,
                        &format!("{p}.lr.update"),
                        f,
                        f,
                        Activation::Silu,
                    );
                    let residual = (0..config.n_hidden)
                        .map(|r| {
                            ResidualBlock::new(&mut store, &mut rng, &format!("{p}.lr.res{r}"), f)
                        })
                        .collect();
                    Some(EwaldBlock {
                        bank,
                        update,
                        residual,
                    })
                }
                None => None,
            };
            blocks.push(InteractionBlock {
                short_range,
                long_range,
            });
        }
        let half = (f / 2).max(1);
        let readout = [
            DenseLayer::new(
                &mut store,
                &mut rng,
                "readout.dense1",
                f,
                half,
                Activation::Silu,
            ),
            DenseLayer::new(
                &mut store,
                &mut rng,
                "readout.dense2",
                half,
                1,
                Activation::Identity,
            ),
        ];

        let mut model = Model {
            config,
            store,
            embedding,
            blocks,
            readout,
            edge_basis,
            target: None,
            voxel_cache: None,
        };
        if ewald && model.config.frequency == FrequencyChoice::Voxel {
            let freqs = voxel_grid(model.config.freq_cutoff, model.config.voxel_spacing)?;
            let input = model
                .first_bank()
                .expect("ewald model has filter banks")
                .prepare(&model.store, &freqs)?;
            model.voxel_cache = Some((freqs, Rc::new(input)));
        }
        Ok(model)
    }

    fn first_bank(&self) -> Option<&FilterBank> {
        self.blocks
            .first()
            .and_then(|b| b.long_range.as_ref())
            .map(|lr| &lr.bank)
    }

    /// Frequency set the long-range block would use for `s`.
    pub fn frequencies(&self, s: &Structure) -> Result<FrequencySet> {
        match (self.config.frequency, &s.cell) {
            (FrequencyChoice::Voxel, None) => {
                Ok(self.voxel_cache.as_ref().map(|c| c.0.clone()).map_or_else(
                    || voxel_grid(self.config.freq_cutoff, self.config.voxel_spacing),
                    Ok,
                )?)
            }
            (FrequencyChoice::PeriodicIndex, Some(cell)) => Ok(enumerate_index_frequencies(
                &reciprocal_basis(cell)?,
                self.config.index_counts,
            )),
            (FrequencyChoice::RadialCutoff, Some(cell)) => {
                enumerate_radial_frequencies(&reciprocal_basis(cell)?, self.config.freq_cutoff)
            }
            (choice, cell) => Err(Error::InvalidParameter(format!(
                "frequency mode {} cannot be used for {} structures",
                choice.name(),
                if cell.is_some() {
                    "periodic"
                } else {
                    "aperiodic"
                }
            ))),
        }
    }

    pub fn species_counts(&self, s: &Structure) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.config.species.len()];
        for name in &s.species {
            counts[self.config.species_index(name)?] += 1;
        }
        Ok(counts)
    }

    pub fn prepare(&self, s: &Structure) -> Result<Prepared> {
        if s.is_empty() {
            return Err(Error::InvalidParameter("structure has no atoms".into()));
        }
        let species: Vec<usize> = s
            .species
            .iter()
            .map(|n| self.config.species_index(n))
            .collect::<Result<_>>()?;
        let counts = self.species_counts(s)?;
        let nl = neighbor_list(s, self.config.cutoff, self.config.max_neighbors)?;
        let distances: Vec<f64> = nl.edges.iter().map(|e| e.distance).collect();
        let edge_center: Rc<[usize]> = nl.edges.iter().map(|e| e.i).collect();
        let edge_neighbor: Rc<[usize]> = nl.edges.iter().map(|e| e.j).collect();
        let edge_basis = self.edge_basis.eval_many(&distances);

        let long_range = match self.first_bank() {
            None => None,
            Some(bank) => {
                let (freqs, filter) = match (&self.voxel_cache, &s.cell) {
                    (Some((freqs, input)), None) => (freqs.clone(), input.clone()),
                    _ => {
                        let freqs = self.frequencies(s)?;
                        let input = Rc::new(bank.prepare(&self.store, &freqs)?);
                        (freqs, input)
                    }
                };
                let frame = if s.cell.is_none() {
                    Some(svd_frame(&s.positions))
                } else {
                    None
                };
                let table = phase_table(s, &freqs, frame.as_ref(), self.config.damping)?;
                Some(LongRangeInput {
                    gather_cos: table.damped_cos(),
                    gather_sin: table.damped_sin(),
                    filter,
                })
            }
        };
        Ok(Prepared {
            n_atoms: s.len(),
            species: species.into(),
            counts,
            edge_center,
            edge_neighbor,
            edge_basis,
            long_range,
        })
    }

    /// Records the network on `tape`; returns the `1 × 1` normalized energy.
    pub fn forward(&self, tape: &mut Tape, p: &Prepared) -> Result<Var> {
        let store = &self.store;
        let table = tape.param(store, self.embedding);
        let mut h = tape.gather_rows(table, p.species.clone())?;
        let edge_basis = tape.constant(p.edge_basis.clone());
        let phases = p.long_range.as_ref().map(|lr| {
            (
                tape.constant(lr.gather_cos.clone()),
                tape.constant(lr.gather_sin.clone()),
            )
        });

        for block in &self.blocks {
            let sr = &block.short_range;
            let filt = sr.filter_in.forward(tape, store, edge_basis)?;
            let filt = sr.filter_out.forward(tape, store, filt)?;
            let hj = tape.gather_rows(h, p.edge_neighbor.clone())?;
            let msg = tape.mul(hj, filt)?;
            let m_sr = tape.scatter_add_rows(msg, p.edge_center.clone(), p.n_atoms)?;
            let u_sr = sr.update.forward(tape, store, m_sr)?;
            let skip = tape.add(h, u_sr)?;

            h = match (&block.long_range, &p.long_range, phases) {
                (Some(ewald), Some(lr), Some((c, s))) => {
                    let phi = ewald.bank.forward(tape, store, &lr.filter)?;
                    let m_lr = long_range_on_tape(tape, c, s, h, phi)?;
                    let mut u = ewald.update.forward(tape, store, m_lr)?;
                    for r in &ewald.residual {
                        u = r.forward(tape, store, u)?;
                    }
                    let sum = tape.add(skip, u)?;
                    tape.scale(sum, FRAC_1_SQRT_3)
                }
                (None, _, _) => tape.scale(skip, FRAC_1_SQRT_2),
                _ => {
                    return Err(Error::InvalidParameter(
                        "prepared input lacks long-range phases".into(),
                    ))
                }
            };
        }
        let y = self.readout[0].forward(tape, store, h)?;
        let y = self.readout[1].forward(tape, store, y)?;
        Ok(tape.sum_all(y))
    }

    /// Network output on the normalized target scale.
    pub fn raw_energy(&self, p: &Prepared) -> Result<f64> {
        let mut tape = Tape::new();
        let e = self.forward(&mut tape, p)?;
        Ok(tape.value(e).get(0, 0))
    }

    /// Energy in the units of the training targets.
    pub fn energy(&self, p: &Prepared) -> Result<f64> {
        let raw = self.raw_energy(p)?;
        Ok(match &self.target {
            Some(t) => t.offsets.offset(&p.counts) + t.scale * raw,
            None => raw,
        })
    }

    pub fn predict(&self, s: &Structure) -> Result<f64> {
        self.energy(&self.prepare(s)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta: BTreeMap<String, String> = self
            .config
            .entries()
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        if let Some(t) = &self.target {
            meta.insert("target.scale".into(), format!("{:?}", t.scale));
            meta.insert("target.bias".into(), format!("{:?}", t.offsets.bias));
            let coef: Vec<String> = t
                .offsets
                .coefficients
                .iter()
                .map(|c| format!("{c:?}"))
                .collect();
            meta.insert("target.coefficients".into(), coef.join(","));
        }
        Checkpoint::from_store(&self.store, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let mut config = ModelConfig::default();
        for (k, v) in &ck.meta {
            if let Some(key) = k.strip_prefix("model.") {
                config.set(key, v)?;
            }
        }
        let mut model = Model::new(config)?;
        ck.restore_into(&mut model.store)?;
        if let (Some(scale), Some(bias), Some(coef)) = (
            ck.meta.get("target.scale"),
            ck.meta.get("target.bias"),
            ck.meta.get("target.coefficients"),
        ) {
            let bad = |what: &str| Error::Checkpoint(format!("malformed {what}"));
            let coefficients = coef
                .split(',')
                .filter(|c| !c.is_empty())
                .map(|c| c.parse::<f64>().map_err(|_| bad("target.coefficients")))
                .collect::<Result<Vec<_>>>()?;
            model.target = Some(TargetTransform {
                offsets: ElementOffsets {
                    species: model.config.species.clone(),
                    coefficients,
                    bias: bias.parse().map_err(|_| bad("target.bias"))?,
                },
                scale: scale.parse().map_err(|_| bad("target.scale"))?,
            });
        }
        Ok(model)
    }
}

/// `M = Cᵀ((C H) ∘ Φ̂) + Sᵀ((S H) ∘ Φ̂)`.
fn long_range_on_tape(tape: &mut Tape, c: Var, s: Var, h: Var, phi: Var) -> Result<Var> {
    let re = tape.matmul(c, h)?;
    let im = tape.matmul(s, h)?;
    let a = tape.mul(re, phi)?;
    let b = tape.mul(im, phi)?;
    let m_cos = tape.t_matmul(c, a)?;
    let m_sin = tape.t_matmul(s, b)?;
    tape.add(m_cos, m_sin)
}

/// Scaling applied to the skip sum: `1/√3` with the long-range term, `1/√2` without.
pub fn skip_scale(ewald: bool) -> f64 {
    if ewald {
        FRAC_1_SQRT_3
    } else {
        FRAC_1_SQRT_2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cell;
    use nalgebra::{Rotation3, Vector3};
    use rand::Rng;

    fn small_config(mode: ModelMode, frequency: FrequencyChoice) -> ModelConfig {
        ModelConfig {
            mode,
            width: 6,
            blocks: 2,
            cutoff: 3.5,
            edge_rbf: 8,
            frequency,
            index_counts: [1, 1, 2],
            freq_cutoff: 0.6,
            voxel_spacing: 0.2,
            n_hidden: 1,
            n_rbf: 10,
            bottleneck: 3,
            filter_gain: 0.1,
            species: vec!["A".into(), "B".into()],
            seed: 3,
            ..Default::default()
        }
    }

    fn random_structure(rng: &mut ChaCha8Rng, n: usize, cell: Option<Cell>) -> Structure {
        let positions = (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(0.0..5.0),
                    rng.random_range(0.0..5.0),
                    rng.random_range(0.0..5.0),
                )
            })
            .collect();
        let species = (0..n)
            .map(|i| if i % 3 == 0 { "A" } else { "B" }.to_string())
            .collect();
        Structure::new(positions, species, cell)
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut model = Model::new(small_config(ModelMode::Ewald, FrequencyChoice::Voxel)).unwrap();
        model.target = Some(TargetTransform {
            offsets: ElementOffsets {
                species: model.config.species.clone(),
                coefficients: vec![0.5, -0.25],
                bias: 1.5,
            },
            scale: 2.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_structure(&mut rng, 7, None);
        let text = model.checkpoint().to_text();
        let back = Model::from_checkpoint(&Checkpoint::parse(&text).unwrap()).unwrap();
        assert_eq!(back.predict(&s).unwrap(), model.predict(&s).unwrap());
    }

    #[test]
    fn periodic_invariances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = Cell::new(
            Vector3::new(5.0, 0.0, 0.0),
            Vector3::new(0.7, 5.2, 0.0),
            Vector3::new(-0.4, 0.3, 4.8),
        )
        .unwrap();
        for choice in [
            FrequencyChoice::PeriodicIndex,
            FrequencyChoice::RadialCutoff,
        ] {
            let mut cfg = small_config(ModelMode::Ewald, choice);
            cfg.freq_cutoff = 2.0;
            let model = Model::new(cfg).unwrap();
            let s = random_structure(&mut rng, 6, Some(cell));
            let e = model.predict(&s).unwrap();

            let mut shifted = s.clone();
            shifted.positions[2] += cell.shift([1, -2, 1]);
            shifted.positions[4] += cell.shift([0, 0, -1]);
            assert!((model.predict(&shifted).unwrap() - e).abs() < 1e-9);

            let perm = s.permuted(&[5, 3, 1, 0, 2, 4]);
            assert!((model.predict(&perm).unwrap() - e).abs() < 1e-9);

            let r = *Rotation3::from_euler_angles(0.3, -1.1, 2.0).matrix();
            let rotated = s.transformed(&r, &Vector3::zeros());
            assert!((model.predict(&rotated).unwrap() - e).abs() < 1e-9);
        }
    }

    #[test]
    fn aperiodic_rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::new(small_config(ModelMode::Ewald, FrequencyChoice::Voxel)).unwrap();
        let s = random_structure(&mut rng, 9, None);
        let e = model.predict(&s).unwrap();
        let r = *Rotation3::from_euler_angles(-0.4, 0.9, 2.6).matrix();
        let moved = s.transformed(&r, &Vector3::new(3.0, -7.0, 1.5));
        assert!((model.predict(&moved).unwrap() - e).abs() < 1e-6);
    }

    #[test]
    fn wrong_frequency_mode_for_structure() {
        let model = Model::new(small_config(ModelMode::Ewald, FrequencyChoice::Voxel)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_structure(&mut rng, 3, Some(Cell::cubic(5.0).unwrap()));
        assert!(model.prepare(&s).is_err());
        let unknown = Structure::new(vec![Vector3::zeros()], vec!["Q".into()], None);
        assert!(matches!(
            model.prepare(&unknown),
            Err(Error::UnknownSpecies(_))
        ));
    }

    #[test]
    fn baseline_has_no_fourier_parameters() {
        let model = Model::new(small_config(ModelMode::Baseline, FrequencyChoice::Voxel)).unwrap();
        assert!(model
            .store
            .ids()
            .all(|id| !model.store.name(id).contains("lr.")
                && !model.store.name(id).starts_with("filter")));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_structure(&mut rng, 5, None);
        assert!(model.predict(&s).unwrap().is_finite());
    }
}
