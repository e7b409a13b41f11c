//! Learnable Fourier-space filters and Gaussian radial bases.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{FrequencyMode, FrequencySet};
use crate::nn::{orthogonal_init, ParamId, ParamStore, Tape, Tensor2, Var};

/// Gaussians `exp(-γ (r - μ_m)²)` with centers equally spaced on `[0, r_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialBasis {
    pub centers: Vec<f64>,
    pub gamma: f64,
}

impl RadialBasis {
    /// Width defaults to `γ = 1 / (2 s²)` with `s` the center spacing.
    pub fn new(count: usize, r_max: f64) -> Result<RadialBasis> {
        if count < 2 || !(r_max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "radial basis needs at least 2 centers and a positive range, got {count} on [0, {r_max}]"
            )));
        }
        let spacing = r_max / (count - 1) as f64;
        RadialBasis::with_gamma(count, r_max, 1.0 / (2.0 * spacing * spacing))
    }

    pub fn with_gamma(count: usize, r_max: f64, gamma: f64) -> Result<RadialBasis> {
        if count < 2 || !(r_max > 0.0) || !(gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "invalid radial basis: {count} centers on [0, {r_max}], γ = {gamma}"
            )));
        }
        let spacing = r_max / (count - 1) as f64;
        let centers = (0..count).map(|m| m as f64 * spacing).collect();
        Ok(RadialBasis { centers, gamma })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn eval(&self, r: f64) -> Vec<f64> {
        self.centers
            .iter()
            .map(|mu| (-self.gamma * (r - mu) * (r - mu)).exp())
            .collect()
    }

    /// One row per entry of `rs`.
    pub fn eval_many(&self, rs: &[f64]) -> Tensor2 {
        let mut out = Tensor2::zeros(rs.len(), self.len());
        for (row, &r) in rs.iter().enumerate() {
            for (d, mu) in out.row_mut(row).iter_mut().zip(&self.centers) {
                *d = (-self.gamma * (r - mu) * (r - mu)).exp();
            }
        }
        out
    }
}

pub fn radial_basis_eval(basis: &RadialBasis, r: f64) -> Vec<f64> {
    basis.eval(r)
}

/// `Φ̂(k) = W_up · W_down · Ψ(|k|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialFilterBank {
    pub basis: RadialBasis,
    /// `N_↓ × N_RBF`, usually shared between blocks.
    pub w_down: ParamId,
    /// `F × N_↓`.
    pub w_up: ParamId,
}

/// Filter values over symmetry-unique lattice indices: the rows of
/// `(W_up · W_down)ᵀ`, read through the frequency set's slot map so that
/// `λ` and `-λ` share storage.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFilterBank {
    /// `N_↓ × N_unique`, usually shared between blocks.
    pub w_down: ParamId,
    /// `F × N_↓`.
    pub w_up: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterBank {
    Radial(RadialFilterBank),
    Lattice(LatticeFilterBank),
}

/// Per-structure constant input to a filter bank.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterInput {
    /// `Ψ(|k_n|)`, `N_k × N_RBF`.
    Radial(Tensor2),
    /// Unique slot of each frequency.
    Lattice(Rc<[usize]>),
}

/// Registers a down-projection `rows × cols` with orthonormal rows.
pub fn add_down_projection<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    bottleneck: usize,
    inputs: usize,
) -> ParamId {
    store.add(name, orthogonal_init(rng, bottleneck, inputs, 1.0))
}

/// Registers an up-projection `width × bottleneck` scaled by `gain`.
pub fn add_up_projection<R: Rng + ?Sized>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    width: usize,
    bottleneck: usize,
    gain: f64,
) -> ParamId {
    store.add(name, orthogonal_init(rng, width, bottleneck, gain))
}

impl FilterBank {
    pub fn name(&self) -> &'static str {
        match self {
            FilterBank::Radial(_) => "radial",
            FilterBank::Lattice(_) => "lattice",
        }
    }

    fn w_down(&self) -> ParamId {
        match self {
            FilterBank::Radial(b) => b.w_down,
            FilterBank::Lattice(b) => b.w_down,
        }
    }

    fn w_up(&self) -> ParamId {
        match self {
            FilterBank::Radial(b) => b.w_up,
            FilterBank::Lattice(b) => b.w_up,
        }
    }

    pub fn width(&self, store: &ParamStore) -> usize {
        store.value(self.w_up()).rows()
    }

    /// Checks the bank against `freqs` and builds its constant input.
    pub fn prepare(&self, store: &ParamStore, freqs: &FrequencySet) -> Result<FilterInput> {
        let mismatch = || Error::FilterModeError {
            bank: self.name(),
            mode: freqs.mode.name(),
        };
        match self {
            FilterBank::Radial(b) => {
                if freqs.mode == FrequencyMode::PeriodicIndex {
                    return Err(mismatch());
                }
                Ok(FilterInput::Radial(b.basis.eval_many(&freqs.norms())))
            }
            FilterBank::Lattice(b) => {
                if freqs.mode != FrequencyMode::PeriodicIndex {
                    return Err(mismatch());
                }
                let stored = store.value(b.w_down).cols();
                if stored != freqs.n_unique {
                    return Err(Error::ShapeError {
                        op: "filter_values",
                        detail: format!(
                            "bank stores {stored} unique weights, set has {}",
                            freqs.n_unique
                        ),
                    });
                }
                Ok(FilterInput::Lattice(freqs.slot.clone().into()))
            }
        }
    }

    /// Filter values `N_k × F` without recording gradients.
    pub fn values(&self, store: &ParamStore, input: &FilterInput) -> Result<Tensor2> {
        let down = store.value(self.w_down());
        let up = store.value(self.w_up());
        match (self, input) {
            (FilterBank::Radial(_), FilterInput::Radial(psi)) => psi.matmul_t(down)?.matmul_t(up),
            (FilterBank::Lattice(_), FilterInput::Lattice(slots)) => {
                let unique = up.matmul(down)?.transpose();
                let mut out = Tensor2::zeros(slots.len(), unique.cols());
                for (n, &s) in slots.iter().enumerate() {
                    out.row_mut(n).copy_from_slice(unique.row(s));
                }
                Ok(out)
            }
            _ => Err(Error::FilterModeError {
                bank: self.name(),
                mode: "mismatched input",
            }),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &FilterInput) -> Result<Var> {
        let down = tape.param(store, self.w_down());
        let up = tape.param(store, self.w_up());
        match (self, input) {
            (FilterBank::Radial(_), FilterInput::Radial(psi)) => {
                let psi = tape.constant(psi.clone());
                let low = tape.matmul_t(psi, down)?;
                tape.matmul_t(low, up)
            }
            (FilterBank::Lattice(_), FilterInput::Lattice(slots)) => {
                let w = tape.matmul(up, down)?;
                let unique = tape.transpose(w);
                tape.gather_rows(unique, slots.clone())
            }
            _ => Err(Error::FilterModeError {
                bank: self.name(),
                mode: "mismatched input",
            }),
        }
    }
}

/// Filter values of `bank` on `freqs`, `N_k × F`.
pub fn filter_values(
    bank: &FilterBank,
    store: &ParamStore,
    freqs: &FrequencySet,
) -> Result<Tensor2> {
    bank.values(store, &bank.prepare(store, freqs)?)
}
