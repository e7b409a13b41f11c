//! Supercell and reciprocal-lattice math, frequency enumeration, rotation
//! frames and image-aware neighbor lists.
//!
//! Lengths are in Å and frequencies in Å⁻¹. The reciprocal basis follows the
//! crystallographic convention `w_i · v_j = 2π δ_ij`, so `exp(i k·x)` is
//! periodic on the supercell lattice for every `k` of the reciprocal lattice.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};

/// Volume below which a cell is treated as degenerate (Å³).
pub const DEGENERATE_VOLUME: f64 = 1e-9;

/// Periodic supercell; the columns of `matrix` are the lattice vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    matrix: Matrix3<f64>,
    volume: f64,
}

impl Cell {
    pub fn new(v1: Vector3<f64>, v2: Vector3<f64>, v3: Vector3<f64>) -> Result<Cell> {
        let volume = v1.dot(&v2.cross(&v3));
        if volume <= DEGENERATE_VOLUME {
            return Err(Error::DegenerateCell {
                volume,
                threshold: DEGENERATE_VOLUME,
            });
        }
        Ok(Cell {
            matrix: Matrix3::from_columns(&[v1, v2, v3]),
            volume,
        })
    }

    pub fn cubic(a: f64) -> Result<Cell> {
        Cell::new(Vector3::x() * a, Vector3::y() * a, Vector3::z() * a)
    }

    /// Build from a row-ordered array `[v1x, v1y, v1z, v2x, ...]`.
    pub fn from_flat(values: &[f64; 9]) -> Result<Cell> {
        Cell::new(
            Vector3::new(values[0], values[1], values[2]),
            Vector3::new(values[3], values[4], values[5]),
            Vector3::new(values[6], values[7], values[8]),
        )
    }

    pub fn to_flat(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for a in 0..3 {
            for c in 0..3 {
                out[3 * a + c] = self.matrix[(c, a)];
            }
        }
        out
    }

    pub fn vector(&self, axis: usize) -> Vector3<f64> {
        self.matrix.column(axis).into_owned()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Distance between opposite faces along each lattice direction.
    pub fn heights(&self) -> [f64; 3] {
        let mut h = [0.0; 3];
        for (a, slot) in h.iter_mut().enumerate() {
            let b = self.vector((a + 1) % 3);
            let c = self.vector((a + 2) % 3);
            *slot = self.volume / b.cross(&c).norm();
        }
        h
    }

    /// Cartesian translation for an integer lattice shift.
    pub fn shift(&self, shift: [i32; 3]) -> Vector3<f64> {
        self.matrix * Vector3::new(shift[0] as f64, shift[1] as f64, shift[2] as f64)
    }

    pub fn fractional(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let inv = self
            .matrix
            .try_inverse()
            .expect("non-degenerate cell is invertible");
        inv * x
    }

    /// Apply a rotation to the lattice vectors.
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Cell {
        let matrix = rotation * self.matrix;
        Cell {
            matrix,
            volume: matrix.determinant(),
        }
    }
}

/// Basis of the reciprocal lattice, `w_i · v_j = 2π δ_ij`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReciprocalBasis {
    pub w: [Vector3<f64>; 3],
}

impl ReciprocalBasis {
    pub fn frequency(&self, index: [i32; 3]) -> Vector3<f64> {
        self.w[0] * index[0] as f64 + self.w[1] * index[1] as f64 + self.w[2] * index[2] as f64
    }
}

pub fn reciprocal_basis(cell: &Cell) -> Result<ReciprocalBasis> {
    let (v1, v2, v3) = (cell.vector(0), cell.vector(1), cell.vector(2));
    let volume = v1.dot(&v2.cross(&v3));
    if volume <= DEGENERATE_VOLUME {
        return Err(Error::DegenerateCell {
            volume,
            threshold: DEGENERATE_VOLUME,
        });
    }
    let scale = 2.0 * PI / volume;
    Ok(ReciprocalBasis {
        w: [
            v2.cross(&v3) * scale,
            v3.cross(&v1) * scale,
            v1.cross(&v2) * scale,
        ],
    })
}

/// Atom positions, species labels, optional charges and an optional cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Structure {
    pub positions: Vec<Vector3<f64>>,
    pub species: Vec<String>,
    pub charges: Option<Vec<f64>>,
    pub cell: Option<Cell>,
}

impl Structure {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        species: Vec<String>,
        cell: Option<Cell>,
    ) -> Structure {
        assert_eq!(
            positions.len(),
            species.len(),
            "one species label per position"
        );
        Structure {
            positions,
            species,
            charges: None,
            cell,
        }
    }

    pub fn with_charges(mut self, charges: Vec<f64>) -> Structure {
        assert_eq!(
            charges.len(),
            self.positions.len(),
            "one charge per position"
        );
        self.charges = Some(charges);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_periodic(&self) -> bool {
        self.cell.is_some()
    }

    /// Reorder atoms so that new atom `a` is old atom `order[a]`.
    pub fn permuted(&self, order: &[usize]) -> Structure {
        Structure {
            positions: order.iter().map(|&i| self.positions[i]).collect(),
            species: order.iter().map(|&i| self.species[i].clone()).collect(),
            charges: self
                .charges
                .as_ref()
                .map(|q| order.iter().map(|&i| q[i]).collect()),
            cell: self.cell,
        }
    }

    /// Rigid motion `x -> R x + t`; the cell rotates with the atoms.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Structure {
        Structure {
            positions: self
                .positions
                .iter()
                .map(|x| rotation * x + translation)
                .collect(),
            species: self.species.clone(),
            charges: self.charges.clone(),
            cell: self.cell.map(|c| c.rotated(rotation)),
        }
    }
}

/// How a [`FrequencySet`] was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyMode {
    PeriodicIndex,
    RadialCutoff,
    VoxelGrid,
    AuxiliarySupercell,
}

impl FrequencyMode {
    pub fn name(self) -> &'static str {
        match self {
            FrequencyMode::PeriodicIndex => "periodic-index",
            FrequencyMode::RadialCutoff => "radial-cutoff",
            FrequencyMode::VoxelGrid => "voxel-grid",
            FrequencyMode::AuxiliarySupercell => "auxiliary-supercell",
        }
    }
}

/// Enumerated Fourier frequencies, sorted lexicographically by integer index.
///
/// `partner[n]` is the position of the frequency with index `-indices[n]`.
/// `slot[n]` numbers the symmetry-unique pairs `{λ, -λ}` in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySet {
    pub mode: FrequencyMode,
    pub kvecs: Vec<Vector3<f64>>,
    pub indices: Vec<[i32; 3]>,
    pub partner: Vec<usize>,
    pub slot: Vec<usize>,
    pub n_unique: usize,
    pub origin_included: bool,
    /// Voxel side `Δ` for [`FrequencyMode::VoxelGrid`] sets.
    pub spacing: Option<f64>,
}

impl FrequencySet {
    fn from_indices<F>(mode: FrequencyMode, mut indices: Vec<[i32; 3]>, kvec: F) -> FrequencySet
    where
        F: Fn([i32; 3]) -> Vector3<f64>,
    {
        indices.sort_unstable();
        indices.dedup();
        let partner: Vec<usize> = indices
            .iter()
            .map(|idx| {
                let neg = [-idx[0], -idx[1], -idx[2]];
                indices
                    .binary_search(&neg)
                    .expect("index sets are point symmetric")
            })
            .collect();
        let mut slot = vec![usize::MAX; indices.len()];
        let mut n_unique = 0;
        for n in 0..indices.len() {
            if slot[partner[n]] != usize::MAX {
                slot[n] = slot[partner[n]];
            } else {
                slot[n] = n_unique;
                n_unique += 1;
            }
        }
        let origin_included = indices.binary_search(&[0, 0, 0]).is_ok();
        let kvecs = indices.iter().map(|&i| kvec(i)).collect();
        FrequencySet {
            mode,
            kvecs,
            indices,
            partner,
            slot,
            n_unique,
            origin_included,
            spacing: None,
        }
    }

    pub fn len(&self) -> usize {
        self.kvecs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kvecs.is_empty()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.kvecs.iter().map(|k| k.norm()).collect()
    }
}

/// Every reciprocal-lattice index in `×_j {-N_j..N_j}` except the origin.
pub fn enumerate_index_frequencies(recip: &ReciprocalBasis, counts: [u32; 3]) -> FrequencySet {
    let [nx, ny, nz] = counts.map(|n| n as i32);
    let mut indices = Vec::new();
    for a in -nx..=nx {
        for b in -ny..=ny {
            for c in -nz..=nz {
                if (a, b, c) != (0, 0, 0) {
                    indices.push([a, b, c]);
                }
            }
        }
    }
    FrequencySet::from_indices(FrequencyMode::PeriodicIndex, indices, |i| {
        recip.frequency(i)
    })
}

/// Reciprocal-lattice points with `0 < |k| < c_k`.
///
/// The search box along `w_a` extends to `c_k / h'_a`, where
/// `h'_a = 2π / |v_a|` is the spacing of reciprocal lattice planes.
pub fn enumerate_radial_frequencies(recip: &ReciprocalBasis, cutoff: f64) -> Result<FrequencySet> {
    radial_points(recip, cutoff, false, FrequencyMode::RadialCutoff)
}

fn radial_points(
    recip: &ReciprocalBasis,
    cutoff: f64,
    include_origin: bool,
    mode: FrequencyMode,
) -> Result<FrequencySet> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency cutoff must be positive, got {cutoff}"
        )));
    }
    let mut bound = [0i32; 3];
    for (a, b) in bound.iter_mut().enumerate() {
        let u = recip.w[(a + 1) % 3];
        let v = recip.w[(a + 2) % 3];
        let volume = recip.w[a].dot(&u.cross(&v)).abs();
        let plane_spacing = volume / u.cross(&v).norm();
        *b = (cutoff / plane_spacing).ceil() as i32;
    }
    let mut indices = Vec::new();
    for a in -bound[0]..=bound[0] {
        for b in -bound[1]..=bound[1] {
            for c in -bound[2]..=bound[2] {
                let idx = [a, b, c];
                let norm = recip.frequency(idx).norm();
                let origin = idx == [0, 0, 0];
                let keep = if origin {
                    include_origin
                } else if include_origin {
                    norm <= cutoff
                } else {
                    norm < cutoff
                };
                if keep {
                    indices.push(idx);
                }
            }
        }
    }
    Ok(FrequencySet::from_indices(mode, indices, |i| {
        recip.frequency(i)
    }))
}

/// Reciprocal-lattice points of an auxiliary cell with `|k| ≤ c_k`, origin
/// included, so the set matches a voxel grid of spacing `2π / side` exactly.
pub fn enumerate_supercell_frequencies(
    recip: &ReciprocalBasis,
    cutoff: f64,
) -> Result<FrequencySet> {
    radial_points(recip, cutoff, true, FrequencyMode::AuxiliarySupercell)
}

/// Cubic voxel centers `λ Δ` with `|λ Δ| ≤ c_k`, origin included.
pub fn voxel_grid(cutoff: f64, spacing: f64) -> Result<FrequencySet> {
    const EPS: f64 = 1e-9;
    if !(spacing > 0.0) || !(cutoff > 0.0) || spacing > cutoff * (1.0 + EPS) {
        return Err(Error::InvalidParameter(format!(
            "voxel grid requires 0 < Δ ≤ c_k, got Δ = {spacing}, c_k = {cutoff}"
        )));
    }
    let ratio = cutoff / spacing;
    let limit = ratio * ratio * (1.0 + EPS);
    let bound = ratio.floor() as i32 + 1;
    let mut indices = Vec::new();
    for a in -bound..=bound {
        for b in -bound..=bound {
            for c in -bound..=bound {
                if ((a * a + b * b + c * c) as f64) <= limit {
                    indices.push([a, b, c]);
                }
            }
        }
    }
    let mut set = FrequencySet::from_indices(FrequencyMode::VoxelGrid, indices, |i| {
        Vector3::new(i[0] as f64, i[1] as f64, i[2] as f64) * spacing
    });
    set.spacing = Some(spacing);
    Ok(set)
}

/// Orthonormal frame co-moving with a structure: columns of `basis` are the
/// principal axes, `origin` is the centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub basis: Matrix3<f64>,
    pub origin: Vector3<f64>,
}

impl Frame {
    pub fn identity() -> Frame {
        Frame {
            basis: Matrix3::identity(),
            origin: Vector3::zeros(),
        }
    }

    /// Coordinates of `x` in this frame.
    pub fn to_local(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.basis.transpose() * (x - self.origin)
    }
}

/// Principal-axis frame from the SVD of centered positions.
///
/// Axes are ordered by decreasing singular value. Each axis is oriented so the
/// third moment of the projected coordinates is positive; when that moment
/// vanishes (e.g. a mirror-symmetric line of atoms) the axis falls back to
/// having its largest-magnitude component positive. The skewness rule keeps
/// the frame equivariant under rotations; the fallback is not.
pub fn svd_frame(positions: &[Vector3<f64>]) -> Frame {
    assert!(!positions.is_empty(), "svd_frame needs at least one atom");
    let n = positions.len() as f64;
    let origin = positions.iter().fold(Vector3::zeros(), |acc, x| acc + x) / n;
    let rows = positions.len().max(3);
    let mut centered = DMatrix::<f64>::zeros(rows, 3);
    for (r, x) in positions.iter().enumerate() {
        let c = x - origin;
        for a in 0..3 {
            centered[(r, a)] = c[a];
        }
    }
    let scale = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale <= 1e-12 {
        return Frame {
            basis: Matrix3::identity(),
            origin,
        };
    }
    let svd = centered.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });

    let mut basis = Matrix3::zeros();
    for (col, &src) in order.iter().enumerate() {
        let mut axis = Vector3::new(v_t[(src, 0)], v_t[(src, 1)], v_t[(src, 2)]);
        let skew: f64 = positions
            .iter()
            .map(|x| (x - origin).dot(&axis).powi(3))
            .sum();
        let flip = if skew.abs() > 1e-10 * scale.powi(3) * n {
            skew < 0.0
        } else {
            let mut best = 0;
            for a in 1..3 {
                if axis[a].abs() > axis[best].abs() + 1e-12 {
                    best = a;
                }
            }
            axis[best] < 0.0
        };
        if flip {
            axis = -axis;
        }
        basis.set_column(col, &axis);
    }
    Frame { basis, origin }
}

/// One directed edge: neighbor `j` seen from center `i` through image `shift`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub shift: [i32; 3],
    pub distance: f64,
}

/// Directed neighbor multigraph, sorted by `(i, distance, j, shift)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NeighborList {
    pub edges: Vec<Edge>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn count_for(&self, center: usize) -> usize {
        self.edges.iter().filter(|e| e.i == center).count()
    }
}

fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    a.i.cmp(&b.i)
        .then(a.distance.total_cmp(&b.distance))
        .then(a.j.cmp(&b.j))
        .then(a.shift.cmp(&b.shift))
}

/// All neighbors closer than `cutoff`, at most `max_neighbors` per center.
///
/// Under periodic boundary conditions every image within the cutoff is a
/// separate edge (the image multigraph); no minimum-image reduction happens.
/// Edge `(i, j, shift)` has distance `|x_i - x_j - shift·cell|`.
pub fn neighbor_list(
    structure: &Structure,
    cutoff: f64,
    max_neighbors: usize,
) -> Result<NeighborList> {
    if !(cutoff > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "distance cutoff must be positive, got {cutoff}"
        )));
    }
    let mut edges = full_neighbor_edges(structure, cutoff);
    edges.sort_by(edge_order);

    let mut kept = Vec::with_capacity(edges.len());
    let mut start = 0;
    while start < edges.len() {
        let center = edges[start].i;
        let end = start + edges[start..].iter().take_while(|e| e.i == center).count();
        kept.extend_from_slice(&edges[start..end.min(start.saturating_add(max_neighbors))]);
        start = end;
    }
    Ok(NeighborList { edges: kept })
}

fn full_neighbor_edges(structure: &Structure, cutoff: f64) -> Vec<Edge> {
    let x = &structure.positions;
    let mut edges = Vec::new();
    match &structure.cell {
        None => {
            // Bins of side `cutoff`; only the 27 surrounding bins can hold neighbors.
            let bin_of = |p: &Vector3<f64>| -> [i64; 3] {
                std::array::from_fn(|a| (p[a] / cutoff).floor() as i64)
            };
            let mut bins: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
            for (j, p) in x.iter().enumerate() {
                bins.entry(bin_of(p)).or_default().push(j);
            }
            for i in 0..x.len() {
                let b = bin_of(&x[i]);
                for d0 in -1..=1 {
                    for d1 in -1..=1 {
                        for d2 in -1..=1 {
                            let Some(members) = bins.get(&[b[0] + d0, b[1] + d1, b[2] + d2]) else {
                                continue;
                            };
                            for &j in members {
                                let d = (x[i] - x[j]).norm();
                                if j != i && d > 0.0 && d < cutoff {
                                    edges.push(Edge {
                                        i,
                                        j,
                                        shift: [0, 0, 0],
                                        distance: d,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(cell) => {
            let heights = cell.heights();
            let reach: Vec<f64> = heights.iter().map(|h| (cutoff / h).ceil()).collect();
            let frac: Vec<Vector3<f64>> = x.iter().map(|p| cell.fractional(p)).collect();
            for i in 0..x.len() {
                for j in 0..x.len() {
                    let df = frac[i] - frac[j];
                    let lo: Vec<i32> = (0..3).map(|a| (df[a] - reach[a]).floor() as i32).collect();
                    let hi: Vec<i32> = (0..3).map(|a| (df[a] + reach[a]).ceil() as i32).collect();
                    for s0 in lo[0]..=hi[0] {
                        for s1 in lo[1]..=hi[1] {
                            for s2 in lo[2]..=hi[2] {
                                let shift = [s0, s1, s2];
                                let d = (x[i] - x[j] - cell.shift(shift)).norm();
                                if d > 0.0 && d < cutoff {
                                    edges.push(Edge {
                                        i,
                                        j,
                                        shift,
                                        distance: d,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    edges
}
