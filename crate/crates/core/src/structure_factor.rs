//! Structure factor embeddings `s_k = Σ_j h_j exp(-i k·x_j)` stored as
//! separate real and imaginary matrices.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{
    enumerate_supercell_frequencies, reciprocal_basis, Cell, Frame, FrequencyMode, FrequencySet,
    Structure,
};
use crate::nn::Tensor2;

/// Which voxel damping formula to use on the aperiodic path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Damping {
    /// `Π_c sinc(x^c Δ / 2)`, the Fourier transform of the voxel indicator.
    #[default]
    Analytic,
    /// `Π_c sinc(k^c x^c Δ / 2)`.
    WavevectorScaled,
}

impl Damping {
    pub fn name(self) -> &'static str {
        match self {
            Damping::Analytic => "analytic",
            Damping::WavevectorScaled => "wavevector-scaled",
        }
    }

    pub fn parse(s: &str) -> Result<Damping> {
        match s {
            "analytic" => Ok(Damping::Analytic),
            "wavevector-scaled" => Ok(Damping::WavevectorScaled),
            other => Err(Error::InvalidParameter(format!(
                "unknown damping mode {other:?}"
            ))),
        }
    }
}

/// `sin(u) / u` with `sinc(0) = 1`.
pub fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        1.0 - u * u / 6.0
    } else {
        u.sin() / u
    }
}

/// Per-(frequency, atom) trigonometric phases and damping values, each `N_k × N_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTable {
    pub cos: Tensor2,
    pub sin: Tensor2,
    pub damp: Tensor2,
}

impl PhaseTable {
    pub fn n_freqs(&self) -> usize {
        self.cos.rows()
    }

    pub fn n_atoms(&self) -> usize {
        self.cos.cols()
    }

    /// `damp ∘ cos`.
    pub fn damped_cos(&self) -> Tensor2 {
        self.cos.zip_map(&self.damp, |c, d| c * d)
    }

    /// `damp ∘ sin`.
    pub fn damped_sin(&self) -> Tensor2 {
        self.sin.zip_map(&self.damp, |s, d| s * d)
    }
}

/// Coordinates used for phase evaluation: raw positions for periodic
/// structures, frame coordinates otherwise.
pub fn phase_positions(structure: &Structure, frame: Option<&Frame>) -> Vec<Vector3<f64>> {
    match frame {
        Some(f) => structure.positions.iter().map(|x| f.to_local(x)).collect(),
        None => structure.positions.clone(),
    }
}

/// Builds the phase table for `freqs`.
///
/// Voxel-grid sets require a frame; the damping value of atom `j` at
/// frequency `n` is the sinc product selected by `damping`. All other modes
/// have unit damping.
pub fn phase_table(
    structure: &Structure,
    freqs: &FrequencySet,
    frame: Option<&Frame>,
    damping: Damping,
) -> Result<PhaseTable> {
    let voxel = freqs.mode == FrequencyMode::VoxelGrid;
    if voxel && frame.is_none() {
        return Err(Error::InvalidParameter(
            "voxel-grid phases need a frame".into(),
        ));
    }
    let positions = phase_positions(structure, if voxel { frame } else { None });
    let spacing = match (voxel, freqs.spacing) {
        (true, Some(d)) => d,
        (true, None) => {
            return Err(Error::InvalidParameter(
                "voxel-grid set without spacing".into(),
            ))
        }
        (false, _) => 0.0,
    };
    Ok(phase_table_at(
        &positions,
        &freqs.kvecs,
        voxel.then_some((spacing, damping)),
    ))
}

/// Phase table for explicit coordinates; `voxel` carries `(Δ, damping)`.
pub fn phase_table_at(
    positions: &[Vector3<f64>],
    kvecs: &[Vector3<f64>],
    voxel: Option<(f64, Damping)>,
) -> PhaseTable {
    let (nk, na) = (kvecs.len(), positions.len());
    let mut cos = Tensor2::zeros(nk, na);
    let mut sin = Tensor2::zeros(nk, na);
    let mut damp = Tensor2::filled(nk, na, 1.0);
    for (n, k) in kvecs.iter().enumerate() {
        for (j, x) in positions.iter().enumerate() {
            let (s, c) = k.dot(x).sin_cos();
            cos.set(n, j, c);
            sin.set(n, j, s);
            if let Some((delta, mode)) = voxel {
                let mut d = 1.0;
                for a in 0..3 {
                    let u = match mode {
                        Damping::Analytic => x[a] * delta / 2.0,
                        Damping::WavevectorScaled => k[a] * x[a] * delta / 2.0,
                    };
                    d *= sinc(u);
                }
                damp.set(n, j, d);
            }
        }
    }
    PhaseTable { cos, sin, damp }
}

/// `Re` and `Im` parts of the structure factor embeddings, each `N_k × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureFactor {
    pub re: Tensor2,
    pub im: Tensor2,
}

/// `Re[k] = Σ_j damp cos(k·x_j) h_j`, `Im[k] = -Σ_j damp sin(k·x_j) h_j`.
pub fn structure_factor(h: &Tensor2, table: &PhaseTable) -> Result<StructureFactor> {
    if h.rows() != table.n_atoms() {
        return Err(Error::ShapeError {
            op: "structure_factor",
            detail: format!("{} embedding rows for {} atoms", h.rows(), table.n_atoms()),
        });
    }
    let re = table.damped_cos().matmul(h)?;
    let im = table.damped_sin().matmul(h)?.scaled(-1.0);
    Ok(StructureFactor { re, im })
}

/// An aperiodic structure wrapped in a cubic box.
#[derive(Debug, Clone)]
pub struct AuxiliarySupercell {
    pub cell: Cell,
    /// Frame coordinates of the atoms (centroid at the origin).
    pub positions: Vec<Vector3<f64>>,
    pub freqs: FrequencySet,
    pub table: PhaseTable,
}

impl AuxiliarySupercell {
    pub fn side(&self) -> f64 {
        self.cell.vector(0).norm()
    }
}

/// Wraps `structure` in a cube of side `extent + 2·padding`, measured in its
/// SVD frame, and enumerates that cell's reciprocal points with `|k| ≤ c_k`.
pub fn auxiliary_supercell(
    structure: &Structure,
    padding: f64,
    cutoff: f64,
) -> Result<AuxiliarySupercell> {
    if structure.is_empty() {
        return Err(Error::InvalidParameter("empty structure".into()));
    }
    if padding < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "padding must be non-negative, got {padding}"
        )));
    }
    let frame = crate::geometry::svd_frame(&structure.positions);
    let positions = phase_positions(structure, Some(&frame));
    let mut extent = 0.0f64;
    for a in 0..3 {
        let lo = positions.iter().map(|x| x[a]).fold(f64::INFINITY, f64::min);
        let hi = positions
            .iter()
            .map(|x| x[a])
            .fold(f64::NEG_INFINITY, f64::max);
        extent = extent.max(hi - lo);
    }
    let cell = Cell::cubic(extent + 2.0 * padding)?;
    let freqs = enumerate_supercell_frequencies(&reciprocal_basis(&cell)?, cutoff)?;
    let table = phase_table_at(&positions, &freqs.kvecs, None);
    Ok(AuxiliarySupercell {
        cell,
        positions,
        freqs,
        table,
    })
}

pub fn auxiliary_supercell_factor(
    structure: &Structure,
    h: &Tensor2,
    padding: f64,
    cutoff: f64,
) -> Result<StructureFactor> {
    structure_factor(h, &auxiliary_supercell(structure, padding, cutoff)?.table)
}
