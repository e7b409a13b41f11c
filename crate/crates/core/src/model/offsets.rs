//! Least-squares per-species energy offsets `E ≈ Σ_Z C_Z N_Z + C_0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ElementOffsets {
    pub species: Vec<String>,
    pub coefficients: Vec<f64>,
    pub bias: f64,
}

impl ElementOffsets {
    pub fn zero(species: &[String]) -> ElementOffsets {
        ElementOffsets {
            species: species.to_vec(),
            coefficients: vec![0.0; species.len()],
            bias: 0.0,
        }
    }

    pub fn offset(&self, counts: &[usize]) -> f64 {
        self.bias
            + self
                .coefficients
                .iter()
                .zip(counts)
                .map(|(c, &n)| c * n as f64)
                .sum::<f64>()
    }

    /// `E - offset(counts)`.
    pub fn apply(&self, counts: &[usize], energy: f64) -> f64 {
        energy - self.offset(counts)
    }

    pub fn invert(&self, counts: &[usize], residual: f64) -> f64 {
        residual + self.offset(counts)
    }
}

/// Relative residual norm below which a design column counts as dependent.
const RANK_TOLERANCE: f64 = 1e-9;

/// Columns of `[1, N_1, N_2, ...]` (bias first, then species in order) that
/// are linear combinations of the columns before them.
fn dependent_species(species: &[String], counts: &[Vec<usize>]) -> Vec<usize> {
    let rows = counts.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for col in 0..=species.len() {
        let original: Vec<f64> = (0..rows)
            .map(|r| {
                if col == 0 {
                    1.0
                } else {
                    counts[r][col - 1] as f64
                }
            })
            .collect();
        let norm0 = original.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = original;
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= dot * y;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= RANK_TOLERANCE * norm0 {
            if col > 0 {
                dependent.push(col - 1);
            }
        } else {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    dependent
}

/// Least-squares fit; rank deficiency is an error naming the dependent species.
pub fn fit_element_offsets(
    species: &[String],
    counts: &[Vec<usize>],
    energies: &[f64],
) -> Result<ElementOffsets> {
    let dependent = dependent_species(species, counts);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(
            dependent.iter().map(|&i| species[i].clone()).collect(),
        ));
    }
    solve(species, counts, energies, &[])
}

/// Like [`fit_element_offsets`] but fixes the coefficients of dependent
/// species to zero and refits; returns the dropped species.
pub fn fit_element_offsets_dropping(
    species: &[String],
    counts: &[Vec<usize>],
    energies: &[f64],
) -> Result<(ElementOffsets, Vec<String>)> {
    let dependent = dependent_species(species, counts);
    let fit = solve(species, counts, energies, &dependent)?;
    Ok((fit, dependent.iter().map(|&i| species[i].clone()).collect()))
}

fn solve(
    species: &[String],
    counts: &[Vec<usize>],
    energies: &[f64],
    dropped: &[usize],
) -> Result<ElementOffsets> {
    if counts.len() != energies.len() {
        return Err(Error::ShapeError {
            op: "fit_element_offsets",
            detail: format!(
                "{} count rows for {} energies",
                counts.len(),
                energies.len()
            ),
        });
    }
    if energies.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(row) = counts.iter().find(|r| r.len() != species.len()) {
        return Err(Error::ShapeError {
            op: "fit_element_offsets",
            detail: format!(
                "count row of length {} for {} species",
                row.len(),
                species.len()
            ),
        });
    }
    let kept: Vec<usize> = (0..species.len())
        .filter(|i| !dropped.contains(i))
        .collect();
    let a = DMatrix::from_fn(energies.len(), kept.len() + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            counts[r][kept[c - 1]] as f64
        }
    });
    let b = DVector::from_column_slice(energies);
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidParameter(format!("least squares failed: {e}")))?;
    let mut coefficients = vec![0.0; species.len()];
    for (c, &s) in kept.iter().enumerate() {
        coefficients[s] = x[c + 1];
    }
    Ok(ElementOffsets {
        species: species.to_vec(),
        coefficients,
        bias: x[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_point_fit() {
        let fit = fit_element_offsets(&names(&["H"]), &[vec![1], vec![2]], &[3.0, 5.0]).unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((fit.bias - 1.0).abs() < 1e-12);
        assert!(fit.apply(&[1], 3.0).abs() < 1e-12);
    }

    #[test]
    fn species_independent_targets() {
        let counts = vec![vec![1, 2], vec![3, 1], vec![2, 5], vec![4, 4]];
        let fit = fit_element_offsets(&names(&["A", "B"]), &counts, &[0.7; 4]).unwrap();
        assert!(fit.coefficients.iter().all(|c| c.abs() < 1e-12));
        assert!((fit.bias - 0.7).abs() < 1e-12);
    }

    #[test]
    fn round_trip() {
        let counts = vec![vec![1, 2], vec![3, 1], vec![2, 5]];
        let energies = [1.0, -4.0, 2.5];
        let fit = fit_element_offsets(&names(&["A", "B"]), &counts, &energies).unwrap();
        for (c, e) in counts.iter().zip(energies) {
            assert!((fit.invert(c, fit.apply(c, e)) - e).abs() < 1e-12);
        }
    }

    #[test]
    fn dependent_species_are_reported_and_dropped() {
        let sp = names(&["P", "M", "N"]);
        let counts = vec![vec![2, 2, 5], vec![1, 1, 9], vec![4, 4, 0], vec![3, 3, 3]];
        let energies = [1.0, 2.0, 0.5, -1.0];
        assert_eq!(
            fit_element_offsets(&sp, &counts, &energies),
            Err(Error::RankDeficient(names(&["M"])))
        );
        let (fit, dropped) = fit_element_offsets_dropping(&sp, &counts, &energies).unwrap();
        assert_eq!(dropped, names(&["M"]));
        assert_eq!(fit.coefficients[1], 0.0);
    }
}
