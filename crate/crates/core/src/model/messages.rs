//! Gradient-free message computations and slow reference evaluations used
//! to validate them.

use nalgebra::{Complex, Vector3};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::structure_factor::{sinc, Damping, PhaseTable, StructureFactor};

/// Long-range messages from structure factor embeddings:
/// `Re(M_i) = Σ_n d_i [cos(k_n·x_i) Re(s_n) - sin(k_n·x_i) Im(s_n)] ∘ Φ̂_n`.
pub fn long_range_messages(
    sf: &StructureFactor,
    table: &PhaseTable,
    phi: &Tensor2,
) -> Result<Tensor2> {
    if sf.re.shape() != phi.shape() || sf.re.rows() != table.n_freqs() {
        return Err(Error::ShapeError {
            op: "long_range_messages",
            detail: format!(
                "structure factor {:?}, filter {:?}, table with {} frequencies",
                sf.re.shape(),
                phi.shape(),
                table.n_freqs()
            ),
        });
    }
    let a = sf.re.zip_map(phi, |s, p| s * p);
    let b = sf.im.zip_map(phi, |s, p| -s * p);
    let mut m = table.damped_cos().t_matmul(&a)?;
    m.add_assign(&table.damped_sin().t_matmul(&b)?);
    Ok(m)
}

/// Damping factor of a frame-coordinate position at frequency `k`.
pub fn damping_value(k: &Vector3<f64>, x: &Vector3<f64>, spacing: f64, mode: Damping) -> f64 {
    (0..3)
        .map(|c| match mode {
            Damping::Analytic => sinc(x[c] * spacing / 2.0),
            Damping::WavevectorScaled => sinc(k[c] * x[c] * spacing / 2.0),
        })
        .product()
}

/// `M_i = Σ_n Σ_j cos(k_n·(x_i - x_j)) d_n(x_i) d_n(x_j) Φ̂_n ∘ h_j`, O(N² N_k).
pub fn pairwise_long_range_messages(
    positions: &[Vector3<f64>],
    kvecs: &[Vector3<f64>],
    voxel: Option<(f64, Damping)>,
    phi: &Tensor2,
    h: &Tensor2,
) -> Tensor2 {
    let (n, f) = (positions.len(), h.cols());
    let mut m = Tensor2::zeros(n, f);
    for (kn, k) in kvecs.iter().enumerate() {
        let damp: Vec<f64> = positions
            .iter()
            .map(|x| voxel.map_or(1.0, |(d, mode)| damping_value(k, x, d, mode)))
            .collect();
        for i in 0..n {
            for j in 0..n {
                let w = (k.dot(&(positions[i] - positions[j]))).cos() * damp[i] * damp[j];
                for c in 0..f {
                    let v = m.get(i, c) + w * phi.get(kn, c) * h.get(j, c);
                    m.set(i, c, v);
                }
            }
        }
    }
    m
}

/// Complex evaluation `M_i = Σ_n d_n(x_i) e^{i k_n·x_i} s_n Φ̂_n` with
/// `s_n = Σ_j d_n(x_j) h_j e^{-i k_n·x_j}`; returns `(Re M, Im M)`.
pub fn complex_long_range_messages(
    positions: &[Vector3<f64>],
    kvecs: &[Vector3<f64>],
    voxel: Option<(f64, Damping)>,
    phi: &Tensor2,
    h: &Tensor2,
) -> (Tensor2, Tensor2) {
    let (n, f) = (positions.len(), h.cols());
    let mut re = Tensor2::zeros(n, f);
    let mut im = Tensor2::zeros(n, f);
    for (kn, k) in kvecs.iter().enumerate() {
        let factor: Vec<Complex<f64>> = positions
            .iter()
            .map(|x| {
                let d = voxel.map_or(1.0, |(s, mode)| damping_value(k, x, s, mode));
                Complex::from_polar(d, k.dot(x))
            })
            .collect();
        for c in 0..f {
            let s: Complex<f64> = factor
                .iter()
                .enumerate()
                .map(|(j, e)| e.conj() * h.get(j, c))
                .sum();
            for (i, e) in factor.iter().enumerate() {
                let v = e * s * phi.get(kn, c);
                re.set(i, c, re.get(i, c) + v.re);
                im.set(i, c, im.get(i, c) + v.im);
            }
        }
    }
    (re, im)
}

/// Skip update `(h + a + b) / √3`, or `(h + a) / √2` without a long-range term.
pub fn combine_update(
    h: &[f64],
    short_range: &[f64],
    long_range: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if short_range.len() != h.len() || long_range.is_some_and(|b| b.len() != h.len()) {
        return Err(Error::ShapeError {
            op: "combine_update",
            detail: "row widths differ".into(),
        });
    }
    Ok(match long_range {
        Some(b) => h
            .iter()
            .zip(short_range)
            .zip(b)
            .map(|((x, a), b)| (x + a + b) * super::skip_scale(true))
            .collect(),
        None => h
            .iter()
            .zip(short_range)
            .map(|(x, a)| (x + a) * super::skip_scale(false))
            .collect(),
    })
}
