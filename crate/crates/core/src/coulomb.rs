//! Classical electrostatics used as ground truth: direct pair sums, Ewald
//! summation, a Gaussian-kernel Fourier identity check and a synthetic
//! charged dataset.
//!
//! Energies are in e²/Å; multiply by [`EV_PER_E2_PER_ANGSTROM`] for eV.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    enumerate_radial_frequencies, enumerate_supercell_frequencies, neighbor_list, reciprocal_basis,
    Cell, Structure,
};

pub const EV_PER_E2_PER_ANGSTROM: f64 = 14.399_645;

/// Total charge above which a periodic cell counts as charged.
pub const NEUTRALITY_TOLERANCE: f64 = 1e-8;

pub fn charges(s: &Structure) -> Result<&[f64]> {
    s.charges
        .as_deref()
        .ok_or_else(|| Error::MissingCharges("electrostatics needs per-atom charges".into()))
}

fn check_neutral(q: &[f64]) -> Result<()> {
    let total: f64 = q.iter().sum();
    if total.abs() > NEUTRALITY_TOLERANCE {
        return Err(Error::NonNeutralCell(total));
    }
    Ok(())
}

/// Settings for the converging periodic direct sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectSumOptions {
    /// Stop once two successive window sizes agree to this relative tolerance.
    pub tolerance: f64,
    pub max_window: u32,
}

impl Default for DirectSumOptions {
    fn default() -> Self {
        DirectSumOptions {
            tolerance: 1e-7,
            max_window: 40,
        }
    }
}

/// Result of a periodic direct sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectSum {
    pub energy: f64,
    /// Window half-width `n` (in cells) at which the sum converged.
    pub window: u32,
    pub change: f64,
}

/// `Σ_{i<j} q_i q_j / r_ij` for aperiodic structures, or the converged
/// periodic lattice sum per cell.
pub fn direct_energy(s: &Structure) -> Result<f64> {
    match &s.cell {
        None => Ok(aperiodic_energy(&s.positions, charges(s)?)),
        Some(_) => Ok(periodic_direct_sum(s, DirectSumOptions::default())?.energy),
    }
}

pub fn aperiodic_energy(positions: &[Vector3<f64>], q: &[f64]) -> f64 {
    let mut e = 0.0;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            e += q[i] * q[j] / (positions[i] - positions[j]).norm();
        }
    }
    e
}

/// Width of the window edge relative to the window half-width.
const EDGE_FRACTION: f64 = 0.125;

/// Number of edge widths beyond the window half-width that are summed.
const EDGE_REACH: f64 = 8.0;

/// One-dimensional Evjen-type weight at fractional offset `u`: the indicator
/// of `[-n, n]` smoothed by a Gaussian of width `τ`. Because `2n` is an
/// integer, the image weights of any point sum to `2n` exactly.
fn window_weight(u: f64, n: f64, tau: f64) -> f64 {
    let s = std::f64::consts::SQRT_2 * tau;
    0.5 * (libm::erf((n - u) / s) + libm::erf((n + u) / s))
}

/// Lattice sum `½ Σ_i Σ_{(j,t) ≠ (i,0)} q_i q_j w(t + f_j - f_i) / r`.
///
/// The weight `w` is a product of smooth one-dimensional windows in
/// fractional coordinates centered on atom `i`, with half-width `n` cells
/// and edge width `n / 8`. The image weights of every atom sum to the same
/// constant, so each window is charge neutral, and the Gaussian edge keeps
/// shape-dependent surface terms from surviving as `n` grows. `n` runs over
/// 2, 4, 6, ... until successive sums agree.
pub fn periodic_direct_sum(s: &Structure, options: DirectSumOptions) -> Result<DirectSum> {
    let cell = s
        .cell
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("direct lattice sum needs a cell".into()))?;
    let q = charges(s)?;
    check_neutral(q)?;
    let frac: Vec<Vector3<f64>> = s.positions.iter().map(|x| cell.fractional(x)).collect();
    let mut previous = window_sum(cell, &frac, q, 2);
    for n in (4..=options.max_window).step_by(2) {
        let e = window_sum(cell, &frac, q, n);
        let change = (e - previous).abs();
        if change <= options.tolerance * e.abs().max(f64::MIN_POSITIVE) {
            return Ok(DirectSum {
                energy: e,
                window: n,
                change,
            });
        }
        previous = e;
    }
    Err(Error::InvalidParameter(format!(
        "direct lattice sum did not converge within a window of {} cells",
        options.max_window
    )))
}

fn window_sum(cell: &Cell, frac: &[Vector3<f64>], q: &[f64], n: u32) -> f64 {
    let n = n as f64;
    let tau = EDGE_FRACTION * n;
    let reach = n + EDGE_REACH * tau;
    let m = cell.matrix();
    let mut total = 0.0;
    for i in 0..frac.len() {
        for j in 0..frac.len() {
            if q[i] == 0.0 || q[j] == 0.0 {
                continue;
            }
            let d = frac[j] - frac[i];
            let lo: [i32; 3] = std::array::from_fn(|a| (-reach - d[a]).floor() as i32);
            let hi: [i32; 3] = std::array::from_fn(|a| (reach - d[a]).ceil() as i32);
            let mut pair = 0.0;
            for ta in lo[0]..=hi[0] {
                let ua = d[0] + ta as f64;
                let wa = window_weight(ua, n, tau);
                for tb in lo[1]..=hi[1] {
                    let ub = d[1] + tb as f64;
                    let wb = wa * window_weight(ub, n, tau);
                    for tc in lo[2]..=hi[2] {
                        if i == j && (ta, tb, tc) == (0, 0, 0) {
                            continue;
                        }
                        let uc = d[2] + tc as f64;
                        let w = wb * window_weight(uc, n, tau);
                        let r = (m * Vector3::new(ua, ub, uc)).norm();
                        pair += w / r;
                    }
                }
            }
            total += q[i] * q[j] * pair;
        }
    }
    0.5 * total
}

/// Ewald splitting width and cutoffs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwaldParams {
    /// Å⁻¹
    pub alpha: f64,
    /// Real-space cutoff, Å.
    pub real_cutoff: f64,
    /// Fourier cutoff, Å⁻¹.
    pub freq_cutoff: f64,
}

impl EwaldParams {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.real_cutoff > 0.0 && self.freq_cutoff > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Ewald parameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EwaldTerms {
    pub real: f64,
    pub reciprocal: f64,
    pub self_term: f64,
}

impl EwaldTerms {
    pub fn total(&self) -> f64 {
        self.real + self.reciprocal + self.self_term
    }
}

/// Ewald energy per cell of a neutral periodic structure.
pub fn ewald_energy(s: &Structure, p: EwaldParams) -> Result<f64> {
    Ok(ewald_terms(s, p)?.total())
}

pub fn ewald_terms(s: &Structure, p: EwaldParams) -> Result<EwaldTerms> {
    p.validate()?;
    let cell = s
        .cell
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("Ewald summation needs a cell".into()))?;
    let q = charges(s)?;
    check_neutral(q)?;

    let edges = neighbor_list(s, p.real_cutoff, usize::MAX)?;
    let mut real = 0.0;
    for e in &edges.edges {
        real += q[e.i] * q[e.j] * libm::erfc(p.alpha * e.distance) / e.distance;
    }
    real *= 0.5;

    let freqs = enumerate_radial_frequencies(&reciprocal_basis(cell)?, p.freq_cutoff)?;
    let mut reciprocal = 0.0;
    for k in &freqs.kvecs {
        let (mut re, mut im) = (0.0, 0.0);
        for (x, qj) in s.positions.iter().zip(q) {
            let (sn, cs) = k.dot(x).sin_cos();
            re += qj * cs;
            im -= qj * sn;
        }
        let k2 = k.norm_squared();
        reciprocal += (-k2 / (4.0 * p.alpha * p.alpha)).exp() / k2 * (re * re + im * im);
    }
    reciprocal *= 2.0 * PI / cell.volume();

    let self_term = -p.alpha / PI.sqrt() * q.iter().map(|v| v * v).sum::<f64>();
    Ok(EwaldTerms {
        real,
        reciprocal,
        self_term,
    })
}

/// Rocksalt in its conventional cubic cell, nearest-neighbor distance `d`.
/// Returns the structure and the number of ion pairs it contains.
pub fn rocksalt(d: f64) -> Result<(Structure, usize)> {
    let a = 2.0 * d;
    let fcc = [
        [0.0, 0.0, 0.0],
        [0.5, 0.5, 0.0],
        [0.5, 0.0, 0.5],
        [0.0, 0.5, 0.5],
    ];
    let mut positions = Vec::new();
    let mut species = Vec::new();
    let mut q = Vec::new();
    for (offset, name, charge) in [([0.0, 0.0, 0.0], "Na", 1.0), ([0.5, 0.0, 0.0], "Cl", -1.0)] {
        for f in fcc {
            positions.push(Vector3::new(f[0] + offset[0], f[1] + offset[1], f[2] + offset[2]) * a);
            species.push(name.to_string());
            q.push(charge);
        }
    }
    Ok((
        Structure::new(positions, species, Some(Cell::cubic(a)?)).with_charges(q),
        4,
    ))
}

/// Cesium chloride (simple cubic with a body-centered counter-ion),
/// nearest-neighbor distance `d`.
pub fn cesium_chloride(d: f64) -> Result<(Structure, usize)> {
    let a = 2.0 * d / 3f64.sqrt();
    let positions = vec![Vector3::zeros(), Vector3::new(0.5, 0.5, 0.5) * a];
    let s = Structure::new(
        positions,
        vec!["Cs".into(), "Cl".into()],
        Some(Cell::cubic(a)?),
    )
    .with_charges(vec![1.0, -1.0]);
    Ok((s, 1))
}

/// `M = -E d / pairs` for unit charges.
pub fn madelung_constant(energy: f64, d: f64, pairs: usize) -> f64 {
    -energy * d / pairs as f64
}

/// Outcome of the Gaussian-kernel dual-path comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub real_space: Vec<f64>,
    pub fourier: Vec<f64>,
    pub max_abs_error: f64,
    pub n_freqs: usize,
}

/// Compares `M(x_i) = Σ_j Σ_t h_j exp(-|x_i - x_j - t|² / 2σ²)` evaluated
/// by a real-space image sum with its Fourier series
/// `(1/Ω) Σ_{|k| ≤ c_k} (2πσ²)^{3/2} e^{-σ²k²/2} Σ_j h_j cos(k·(x_i - x_j))`.
pub fn gaussian_kernel_identity_check(
    s: &Structure,
    h: &[f64],
    sigma: f64,
    freq_cutoff: f64,
) -> Result<IdentityReport> {
    let cell = s
        .cell
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("identity check needs a cell".into()))?;
    if h.len() != s.len() {
        return Err(Error::ShapeError {
            op: "gaussian_kernel_identity_check",
            detail: format!("{} weights for {} atoms", h.len(), s.len()),
        });
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "σ must be positive, got {sigma}"
        )));
    }
    let n = s.len();
    let reach = sigma * (2.0 * 60.0f64).sqrt() * 1.2;
    let heights = cell.heights();
    let bound: [i32; 3] = std::array::from_fn(|a| (reach / heights[a]).ceil() as i32 + 1);
    let mut real_space = vec![0.0; n];
    for (i, out) in real_space.iter_mut().enumerate() {
        for (j, hj) in h.iter().enumerate() {
            let d = s.positions[i] - s.positions[j];
            for a in -bound[0]..=bound[0] {
                for b in -bound[1]..=bound[1] {
                    for c in -bound[2]..=bound[2] {
                        let r2 = (d - cell.shift([a, b, c])).norm_squared();
                        *out += hj * (-r2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
    }

    let freqs = enumerate_supercell_frequencies(&reciprocal_basis(cell)?, freq_cutoff)?;
    let prefactor = (2.0 * PI * sigma * sigma).powf(1.5) / cell.volume();
    let mut fourier = vec![0.0; n];
    for k in &freqs.kvecs {
        let weight = prefactor * (-sigma * sigma * k.norm_squared() / 2.0).exp();
        let (mut re, mut im) = (0.0, 0.0);
        for (x, hj) in s.positions.iter().zip(h) {
            let (sn, cs) = k.dot(x).sin_cos();
            re += hj * cs;
            im -= hj * sn;
        }
        for (x, out) in s.positions.iter().zip(fourier.iter_mut()) {
            let (sn, cs) = k.dot(x).sin_cos();
            *out += weight * (cs * re - sn * im);
        }
    }
    let max_abs_error = real_space
        .iter()
        .zip(&fourier)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(IdentityReport {
        real_space,
        fourier,
        max_abs_error,
        n_freqs: freqs.len(),
    })
}

/// Lennard-Jones parameters of the synthetic targets.
pub const LJ_EPSILON: f64 = 0.1;
pub const LJ_SIGMA: f64 = 1.0;

pub fn lennard_jones(r: f64) -> f64 {
    let s6 = (LJ_SIGMA / r).powi(6);
    4.0 * LJ_EPSILON * (s6 * s6 - s6)
}

pub fn lennard_jones_energy(positions: &[Vector3<f64>]) -> f64 {
    let mut e = 0.0;
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            e += lennard_jones((positions[i] - positions[j]).norm());
        }
    }
    e
}

/// Species tokens of the synthetic dataset and their charges.
pub const SYNTHETIC_SPECIES: [(&str, f64); 3] = [("P", 1.0), ("M", -1.0), ("N", 0.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_structures: usize,
    pub min_atoms: usize,
    pub max_atoms: usize,
    /// Side of the cube atoms are placed in, Å.
    pub box_size: f64,
    pub min_separation: f64,
    /// Placement attempts per atom before giving up.
    pub max_attempts: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_structures: 2000,
            min_atoms: 16,
            max_atoms: 32,
            box_size: 12.0,
            min_separation: 0.8,
            max_attempts: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub structure: Structure,
    /// Coulomb plus Lennard-Jones energy, e²/Å.
    pub energy: f64,
    /// Coulomb part of `energy`.
    pub long_range: f64,
}

/// Random aperiodic clusters of `+1`, `-1` and neutral atoms with equal
/// numbers of opposite charges.
pub fn make_synthetic_dataset(config: &SyntheticConfig) -> Result<Vec<Sample>> {
    if config.min_atoms < 2 || config.max_atoms < config.min_atoms || !(config.box_size > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "invalid synthetic dataset settings: {config:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(config.n_structures);
    for _ in 0..config.n_structures {
        let n = rng.random_range(config.min_atoms..=config.max_atoms);
        let positions = place_atoms(&mut rng, n, config)?;
        let pairs = rng.random_range(1..=n / 2);
        let mut labels: Vec<usize> = (0..n)
            .map(|a| {
                if a < pairs {
                    0
                } else if a < 2 * pairs {
                    1
                } else {
                    2
                }
            })
            .collect();
        for a in (1..n).rev() {
            labels.swap(a, rng.random_range(0..=a));
        }
        let species = labels
            .iter()
            .map(|&l| SYNTHETIC_SPECIES[l].0.to_string())
            .collect();
        let q: Vec<f64> = labels.iter().map(|&l| SYNTHETIC_SPECIES[l].1).collect();
        let long_range = aperiodic_energy(&positions, &q);
        let energy = long_range + lennard_jones_energy(&positions);
        out.push(Sample {
            structure: Structure::new(positions, species, None).with_charges(q),
            energy,
            long_range,
        });
    }
    Ok(out)
}

fn place_atoms(
    rng: &mut ChaCha8Rng,
    n: usize,
    config: &SyntheticConfig,
) -> Result<Vec<Vector3<f64>>> {
    let mut positions: Vec<Vector3<f64>> = Vec::with_capacity(n);
    let min2 = config.min_separation * config.min_separation;
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..config.max_attempts {
            let x = Vector3::new(
                rng.random_range(0.0..config.box_size),
                rng.random_range(0.0..config.box_size),
                rng.random_range(0.0..config.box_size),
            );
            if positions.iter().all(|p| (p - x).norm_squared() >= min2) {
                positions.push(x);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PackingError {
                atoms: n,
                attempts: config.max_attempts,
            });
        }
    }
    Ok(positions)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(q1: f64, q2: f64, r: f64) -> Structure {
        Structure::new(
            vec![Vector3::zeros(), Vector3::new(r, 0.0, 0.0)],
            vec!["A".into(), "B".into()],
            None,
        )
        .with_charges(vec![q1, q2])
    }

    #[test]
    fn aperiodic_examples() {
        assert!((direct_energy(&pair(1.0, -1.0, 1.0)).unwrap() + 1.0).abs() < 1e-15);
        let h = 3f64.sqrt();
        let tri = Structure::new(
            vec![
                Vector3::zeros(),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(1.0, h, 0.0),
            ],
            vec!["A".into(); 3],
            None,
        )
        .with_charges(vec![1.0; 3]);
        assert!((direct_energy(&tri).unwrap() - 1.5).abs() < 1e-15);
        let bare = Structure::new(vec![Vector3::zeros()], vec!["A".into()], None);
        assert!(matches!(
            direct_energy(&bare),
            Err(Error::MissingCharges(_))
        ));
    }

    #[test]
    fn window_is_partition_of_unity() {
        for n in [1.0, 2.0, 3.0, 5.0] {
            for x in [0.0, 0.13, 0.5, 0.77, 0.999] {
                let total: f64 = (-40..=40)
                    .map(|t| window_weight(x + t as f64, n, 0.125 * n))
                    .sum();
                assert!((total - 2.0 * n).abs() < 1e-12, "n = {n}, x = {x}: {total}");
            }
        }
    }

    #[test]
    fn charged_cell_is_rejected() {
        let s = Structure::new(
            vec![Vector3::zeros()],
            vec!["A".into()],
            Some(Cell::cubic(3.0).unwrap()),
        )
        .with_charges(vec![1.0]);
        let p = EwaldParams {
            alpha: 0.3,
            real_cutoff: 8.0,
            freq_cutoff: 3.0,
        };
        assert!(matches!(ewald_energy(&s, p), Err(Error::NonNeutralCell(_))));
        assert!(matches!(direct_energy(&s), Err(Error::NonNeutralCell(_))));
    }

    #[test]
    fn rocksalt_madelung_from_both_oracles() {
        let (s, pairs) = rocksalt(1.0).unwrap();
        let direct = madelung_constant(direct_energy(&s).unwrap(), 1.0, pairs);
        let p = EwaldParams {
            alpha: 0.35 * 2.0,
            real_cutoff: 10.0,
            freq_cutoff: 8.0,
        };
        let ewald = madelung_constant(ewald_energy(&s, p).unwrap(), 1.0, pairs);
        assert!((direct - 1.747565).abs() < 1e-5, "{direct}");
        assert!((ewald - direct).abs() < 1e-5, "{ewald} vs {direct}");
    }

    #[test]
    fn lennard_jones_minimum() {
        let r = 2f64.powf(1.0 / 6.0) * LJ_SIGMA;
        assert!((lennard_jones(r) + LJ_EPSILON).abs() < 1e-15);
        assert_eq!(lennard_jones(LJ_SIGMA), 0.0);
    }

    #[test]
    fn synthetic_dataset_is_deterministic_and_neutral() {
        let cfg = SyntheticConfig {
            n_structures: 5,
            seed: 11,
            ..SyntheticConfig::default()
        };
        let a = make_synthetic_dataset(&cfg).unwrap();
        assert_eq!(a, make_synthetic_dataset(&cfg).unwrap());
        for s in &a {
            let q = charges(&s.structure).unwrap();
            assert_eq!(q.iter().sum::<f64>(), 0.0);
            assert!((16..=32).contains(&s.structure.len()));
        }
        let crowded = SyntheticConfig {
            n_structures: 1,
            min_atoms: 30,
            max_atoms: 30,
            box_size: 1.0,
            max_attempts: 50,
            ..cfg
        };
        assert!(matches!(
            make_synthetic_dataset(&crowded),
            Err(Error::PackingError { .. })
        ));
    }
}
